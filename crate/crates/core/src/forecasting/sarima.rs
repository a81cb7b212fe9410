//! Seasonal ARIMA with AICc order selection.
//!
//! Differencing orders are chosen first (KPSS for `d`, seasonal strength of a
//! classical decomposition for `D`), then every `(p, q, P, Q)` in the search
//! grid is fitted by conditional sum of squares and ranked by AICc. The
//! winner is refined by exact Gaussian likelihood via a Kalman filter.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::optim::levenberg_marquardt;
use super::{Forecaster, Method};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SarimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub sp: usize,
    pub sd: usize,
    pub sq: usize,
    pub period: usize,
}

impl std::fmt::Display for SarimaOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({},{},{})({},{},{})[{}]",
            self.p, self.d, self.q, self.sp, self.sd, self.sq, self.period
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SarimaConfig {
    pub max_p: usize,
    pub max_q: usize,
    pub max_sp: usize,
    pub max_sq: usize,
    pub max_d: usize,
    pub max_sd: usize,
    /// Seasonal strength above which one seasonal difference is taken.
    pub seasonal_strength_threshold: f64,
    /// KPSS level-stationarity critical value (5%).
    pub kpss_critical: f64,
    /// Refine the selected model by exact maximum likelihood.
    pub ml_refine: bool,
    pub max_iter: usize,
}

impl Default for SarimaConfig {
    fn default() -> Self {
        SarimaConfig {
            max_p: 3,
            max_q: 3,
            max_sp: 1,
            max_sq: 1,
            max_d: 1,
            max_sd: 1,
            seasonal_strength_threshold: 0.64,
            kpss_critical: 0.463,
            ml_refine: true,
            max_iter: 60,
        }
    }
}

/// A fitted seasonal ARIMA model and the data needed to forecast from the
/// end of its training series.
#[derive(Debug, Clone, PartialEq)]
pub struct Sarima {
    pub order: SarimaOrder,
    pub ar: Vec<f64>,
    pub sar: Vec<f64>,
    pub ma: Vec<f64>,
    pub sma: Vec<f64>,
    /// Mean of the series, only when no differencing is applied.
    pub mean: Option<f64>,
    pub sigma2: f64,
    pub aicc: f64,
    pub candidates_tried: usize,
    pub candidates_rejected: usize,
    history: Vec<f64>,
}

/// Sparse lag polynomial `1 + sum c_k B^k`, stored as `(k, c_k)`.
type Poly = Vec<(usize, f64)>;

fn multiply(a: &Poly, b: &Poly) -> Poly {
    // Structural lags are kept even when their coefficient is zero, so the
    // conditioning window does not depend on parameter values.
    let with_one = |p: &Poly| {
        let mut v = vec![(0usize, 1.0)];
        v.extend(p.iter().copied());
        v
    };
    let mut terms: std::collections::BTreeMap<usize, f64> = Default::default();
    for &(i, x) in &with_one(a) {
        for &(j, y) in &with_one(b) {
            *terms.entry(i + j).or_insert(0.0) += x * y;
        }
    }
    terms.into_iter().filter(|&(k, _)| k > 0).collect()
}

/// `1 + sum_i sign * coef_i B^(i * step)`
fn lag_poly(coefs: &[f64], step: usize, sign: f64) -> Poly {
    coefs
        .iter()
        .enumerate()
        .map(|(i, &c)| ((i + 1) * step, sign * c))
        .collect()
}

/// Reflection-coefficient test: is `1 - sum phi_k B^k` free of roots on or
/// inside the unit circle (up to `margin`)?
fn is_stationary(phi: &[f64], margin: f64) -> bool {
    let mut a = phi.to_vec();
    while let Some(&r) = a.last() {
        if !(r.abs() < 1.0 - margin) {
            return false;
        }
        let k = a.len();
        let denom = 1.0 - r * r;
        let prev: Vec<f64> = (0..k - 1)
            .map(|j| (a[j] + r * a[k - 2 - j]) / denom)
            .collect();
        a = prev;
    }
    true
}

fn admissible(ar: &[f64], sar: &[f64], ma: &[f64], sma: &[f64], margin: f64) -> bool {
    let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
    is_stationary(ar, margin)
        && is_stationary(sar, margin)
        && is_stationary(&neg(ma), margin)
        && is_stationary(&neg(sma), margin)
}

/// Applies `(1-B)^d (1-B^S)^D`.
fn difference(y: &[f64], d: usize, sd: usize, s: usize) -> Vec<f64> {
    let mut w = y.to_vec();
    for _ in 0..d {
        w = w.windows(2).map(|p| p[1] - p[0]).collect();
    }
    for _ in 0..sd {
        w = (s..w.len()).map(|t| w[t] - w[t - s]).collect();
    }
    w
}

/// Parameter layout: `[ar.., sar.., ma.., sma.., mean?]`.
#[derive(Debug, Clone, Copy)]
struct Layout {
    p: usize,
    sp: usize,
    q: usize,
    sq: usize,
    s: usize,
    mean: bool,
}

impl Layout {
    fn len(&self) -> usize {
        self.p + self.sp + self.q + self.sq + self.mean as usize
    }

    fn unpack<'a>(&self, x: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64], &'a [f64], f64) {
        let (ar, rest) = x.split_at(self.p);
        let (sar, rest) = rest.split_at(self.sp);
        let (ma, rest) = rest.split_at(self.q);
        let (sma, rest) = rest.split_at(self.sq);
        (ar, sar, ma, sma, rest.first().copied().unwrap_or(0.0))
    }

    /// AR polynomial `A(B)` and MA polynomial `M(B)` with `A(B) w = M(B) e`.
    fn polys(&self, x: &[f64]) -> (Poly, Poly, f64) {
        let (ar, sar, ma, sma, mu) = self.unpack(x);
        let a = multiply(&lag_poly(ar, 1, -1.0), &lag_poly(sar, self.s, -1.0));
        let m = multiply(&lag_poly(ma, 1, 1.0), &lag_poly(sma, self.s, 1.0));
        (a, m, mu)
    }

    fn admissible(&self, x: &[f64], margin: f64) -> bool {
        let (ar, sar, ma, sma, _) = self.unpack(x);
        admissible(ar, sar, ma, sma, margin)
    }
}

/// Conditional residuals `e_t`, `t >= start`, with pre-sample errors at 0.
fn css_residuals(w: &[f64], a: &Poly, m: &Poly, mu: f64) -> Vec<f64> {
    let start = a.iter().map(|t| t.0).max().unwrap_or(0);
    let n = w.len();
    let mut e = vec![0.0; n];
    for t in start..n {
        let mut v = w[t] - mu;
        for &(k, c) in a {
            v += c * (w[t - k] - mu);
        }
        for &(j, c) in m {
            if t >= start + j {
                v -= c * e[t - j];
            }
        }
        e[t] = v;
    }
    e.drain(..start);
    e
}

/// Kalman filter innovations of a stationary ARMA in Harvey's state-space
/// form. Returns `(v_t, F_t)` for every observation.
fn kalman_innovations(w: &[f64], a: &Poly, m: &Poly, mu: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    let pa = a.iter().map(|t| t.0).max().unwrap_or(0);
    let qm = m.iter().map(|t| t.0).max().unwrap_or(0);
    let r = pa.max(qm + 1);
    let mut phi = vec![0.0; r];
    for &(k, c) in a {
        phi[k - 1] = -c;
    }
    let mut theta = vec![0.0; r];
    theta[0] = 1.0;
    for &(j, c) in m {
        theta[j] = c;
    }
    let idx = |i: usize, j: usize| i * r + j;
    // T X T' for the companion transition, O(r^2).
    let propagate = |p: &[f64], out: &mut [f64]| {
        let get = |i: usize, j: usize| if i < r && j < r { p[idx(i, j)] } else { 0.0 };
        for i in 0..r {
            for j in 0..r {
                out[idx(i, j)] = phi[i] * phi[j] * get(0, 0)
                    + phi[i] * get(0, j + 1)
                    + phi[j] * get(i + 1, 0)
                    + get(i + 1, j + 1)
                    + theta[i] * theta[j];
            }
        }
    };
    // Stationary covariance P = T P T' + R R' by doubling:
    // P = sum_k T^k R R' T'^k, summed in blocks of 2^j terms.
    let mut tm = DMatrix::<f64>::zeros(r, r);
    for i in 0..r {
        tm[(i, 0)] = phi[i];
        if i + 1 < r {
            tm[(i, i + 1)] = 1.0;
        }
    }
    let rv = DVector::from_column_slice(&theta);
    let mut pm = &rv * rv.transpose();
    let mut converged = false;
    for _ in 0..60 {
        let add = &tm * &pm * tm.transpose();
        tm = &tm * &tm;
        pm += &add;
        if add.amax() < 1e-12 * (1.0 + pm[(0, 0)].abs()) {
            converged = true;
            break;
        }
    }
    if !converged || !pm.iter().all(|v| v.is_finite()) {
        return None;
    }
    let mut p: Vec<f64> = (0..r * r).map(|k| pm[(k / r, k % r)]).collect();
    let mut next = vec![0.0; r * r];

    let n = w.len();
    let mut state = vec![0.0; r];
    let mut vs = Vec::with_capacity(n);
    let mut fs = Vec::with_capacity(n);
    let mut steady: Option<(Vec<f64>, f64)> = None;
    let mut pu = vec![0.0; r * r];
    for &obs in w {
        let v = obs - mu - state[0];
        let (gain, f) = match &steady {
            Some((k, f)) => (k.clone(), *f),
            None => {
                let f = p[0];
                if !(f > 0.0) || !f.is_finite() {
                    return None;
                }
                let k: Vec<f64> = (0..r).map(|i| p[idx(i, 0)] / f).collect();
                for i in 0..r {
                    for j in 0..r {
                        pu[idx(i, j)] = p[idx(i, j)] - p[idx(i, 0)] * p[idx(0, j)] / f;
                    }
                }
                propagate(&pu, &mut next);
                let diff = p
                    .iter()
                    .zip(&next)
                    .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
                std::mem::swap(&mut p, &mut next);
                if diff < 1e-10 * (1.0 + f) {
                    steady = Some((k.clone(), f));
                }
                (k, f)
            }
        };
        vs.push(v);
        fs.push(f);
        // a <- T (a + K v)
        let upd: Vec<f64> = (0..r).map(|i| state[i] + gain[i] * v).collect();
        for i in 0..r {
            state[i] = phi[i] * upd[0] + if i + 1 < r { upd[i + 1] } else { 0.0 };
        }
    }
    Some((vs, fs))
}

fn aicc(sse: f64, n: usize, k: usize) -> f64 {
    let n_f = n as f64;
    let sigma2 = (sse / n_f).max(1e-300);
    let ll = -0.5 * n_f * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0);
    let k_f = k as f64;
    let denom = n_f - k_f - 1.0;
    if denom <= 0.0 {
        return f64::INFINITY;
    }
    -2.0 * ll + 2.0 * k_f + 2.0 * k_f * (k_f + 1.0) / denom
}

/// KPSS level-stationarity statistic with `4 (n/100)^(1/4)` Bartlett lags.
pub(crate) fn kpss_statistic(y: &[f64]) -> f64 {
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let e: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let mut s = 0.0;
    let mut eta = 0.0;
    for v in &e {
        s += v;
        eta += s * s;
    }
    eta /= (n * n) as f64;
    let lags = (4.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize;
    let mut lrv = e.iter().map(|v| v * v).sum::<f64>() / n as f64;
    for l in 1..=lags.min(n - 1) {
        let w = 1.0 - l as f64 / (lags as f64 + 1.0);
        let cov: f64 = (l..n).map(|t| e[t] * e[t - l]).sum::<f64>() / n as f64;
        lrv += 2.0 * w * cov;
    }
    if lrv <= 0.0 {
        return 0.0;
    }
    eta / lrv
}

/// Seasonal strength `1 - var(remainder) / var(seasonal + remainder)` of a
/// classical additive decomposition with a centred moving-average trend.
pub(crate) fn seasonal_strength(y: &[f64], s: usize) -> f64 {
    let n = y.len();
    if s < 2 || n < 2 * s {
        return 0.0;
    }
    let half = s / 2;
    let mut trend = vec![f64::NAN; n];
    for t in half..n.saturating_sub(half) {
        let v = if s.is_multiple_of(2) {
            if t + half >= n {
                continue;
            }
            let inner: f64 = y[t + 1 - half..t + half].iter().sum();
            (inner + 0.5 * (y[t - half] + y[t + half])) / s as f64
        } else {
            y[t - half..=t + half].iter().sum::<f64>() / s as f64
        };
        trend[t] = v;
    }
    let detr: Vec<f64> = y.iter().zip(&trend).map(|(a, b)| a - b).collect();
    let mut seas = vec![0.0; s];
    for (pos, seas_pos) in seas.iter_mut().enumerate() {
        let vals: Vec<f64> = detr
            .iter()
            .skip(pos)
            .step_by(s)
            .copied()
            .filter(|v| v.is_finite())
            .collect();
        *seas_pos = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
    }
    let mean_seas = seas.iter().sum::<f64>() / s as f64;
    seas.iter_mut().for_each(|v| *v -= mean_seas);
    let mut rem = Vec::new();
    let mut sr = Vec::new();
    for t in 0..n {
        if detr[t].is_finite() {
            rem.push(detr[t] - seas[t % s]);
            sr.push(detr[t]);
        }
    }
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
    };
    let total = var(&sr);
    if total <= 1e-300 {
        return 0.0;
    }
    (1.0 - var(&rem) / total).clamp(0.0, 1.0)
}

struct Candidate {
    layout: Layout,
    x: Vec<f64>,
    aicc: f64,
}

/// `common_start` aligns the scoring window across candidates so their
/// AICc values are computed on the same observations.
fn fit_css(
    w: &[f64],
    layout: Layout,
    init_mean: f64,
    max_iter: usize,
    common_start: usize,
) -> Option<Candidate> {
    let k = layout.len();
    let mut x0 = vec![0.0; k];
    if layout.mean {
        x0[k - 1] = init_mean;
    }
    let resid = |x: &[f64]| {
        if !layout.admissible(x, 0.0) {
            return None;
        }
        let (a, m, mu) = layout.polys(x);
        Some(css_residuals(w, &a, &m, mu))
    };
    let out = levenberg_marquardt(resid, &x0, max_iter)?;
    log::trace!(
        "css {layout:?}: sse {:.4} after {} iterations (converged: {})",
        out.cost,
        out.iterations,
        out.converged
    );
    if !layout.admissible(&out.x, 1e-3) {
        return None;
    }
    let (a, m, mu) = layout.polys(&out.x);
    let start = a.iter().map(|t| t.0).max().unwrap_or(0);
    let e = css_residuals(w, &a, &m, mu);
    let sse: f64 = e[common_start - start..].iter().map(|v| v * v).sum();
    let score = aicc(sse, w.len() - common_start, k + 1);
    score.is_finite().then_some(Candidate {
        layout,
        x: out.x,
        aicc: score,
    })
}

/// Exact ML starts from the CSS optimum and needs few steps.
const ML_REFINE_ITER: usize = 20;

fn refine_ml(w: &[f64], cand: &Candidate, max_iter: usize) -> Option<Vec<f64>> {
    let layout = cand.layout;
    let n = w.len() as f64;
    let scaled = |x: &[f64]| {
        if !layout.admissible(x, 1e-4) {
            return None;
        }
        let (a, m, mu) = layout.polys(x);
        let (v, f) = kalman_innovations(w, &a, &m, mu)?;
        let log_det: f64 = f.iter().map(|x| x.ln()).sum();
        let scale = (log_det / (2.0 * n)).exp();
        Some(
            v.iter()
                .zip(&f)
                .map(|(v, f)| v / f.sqrt() * scale)
                .collect::<Vec<f64>>(),
        )
    };
    let out = levenberg_marquardt(scaled, &cand.x, max_iter)?;
    layout.admissible(&out.x, 1e-3).then_some(out.x)
}

/// Fits a seasonal ARIMA with period `period` to `train`.
pub fn fit_sarima(train: &[f64], period: usize, cfg: &SarimaConfig) -> Result<Sarima> {
    if period == 0 {
        return Err(Error::invalid("seasonal period must be positive"));
    }
    if train.len() < 3 * period {
        return Err(Error::InsufficientData(format!(
            "SARIMA needs at least 3 seasons ({} points), got {}",
            3 * period,
            train.len()
        )));
    }
    let sd = usize::from(
        cfg.max_sd > 0 && seasonal_strength(train, period) > cfg.seasonal_strength_threshold,
    );
    let after_seasonal = difference(train, 0, sd, period);
    let d = usize::from(cfg.max_d > 0 && kpss_statistic(&after_seasonal) > cfg.kpss_critical);
    let w = difference(train, d, sd, period);
    let with_mean = d + sd == 0;
    let init_mean = if with_mean {
        w.iter().sum::<f64>() / w.len() as f64
    } else {
        0.0
    };

    let common_start = cfg.max_p + cfg.max_sp * period;
    let mut best: Option<Candidate> = None;
    let (mut tried, mut rejected) = (0, 0);
    for p in 0..=cfg.max_p {
        for q in 0..=cfg.max_q {
            for sp in 0..=cfg.max_sp {
                for sq in 0..=cfg.max_sq {
                    let layout = Layout {
                        p,
                        sp,
                        q,
                        sq,
                        s: period,
                        mean: with_mean,
                    };
                    // need data beyond the conditioning window
                    if common_start + 10 + layout.len() >= w.len() {
                        continue;
                    }
                    tried += 1;
                    match fit_css(&w, layout, init_mean, cfg.max_iter, common_start) {
                        Some(c) if best.as_ref().is_none_or(|b| c.aicc < b.aicc) => {
                            best = Some(c)
                        }
                        Some(_) => {}
                        None => rejected += 1,
                    }
                }
            }
        }
    }
    let best =
        best.ok_or_else(|| Error::Numerical("every SARIMA candidate was rejected".into()))?;
    let x = if cfg.ml_refine {
        refine_ml(&w, &best, cfg.max_iter.min(ML_REFINE_ITER)).unwrap_or_else(|| best.x.clone())
    } else {
        best.x.clone()
    };
    let layout = best.layout;
    let (a, m, mu) = layout.polys(&x);
    let e = css_residuals(&w, &a, &m, mu);
    let sigma2 = e.iter().map(|v| v * v).sum::<f64>() / e.len().max(1) as f64;
    let (ar, sar, ma, sma, _) = layout.unpack(&x);
    Ok(Sarima {
        order: SarimaOrder {
            p: layout.p,
            d,
            q: layout.q,
            sp: layout.sp,
            sd,
            sq: layout.sq,
            period,
        },
        ar: ar.to_vec(),
        sar: sar.to_vec(),
        ma: ma.to_vec(),
        sma: sma.to_vec(),
        mean: with_mean.then_some(mu),
        sigma2,
        aicc: best.aicc,
        candidates_tried: tried,
        candidates_rejected: rejected,
        history: train.to_vec(),
    })
}

impl Sarima {
    fn layout(&self) -> Layout {
        Layout {
            p: self.order.p,
            sp: self.order.sp,
            q: self.order.q,
            sq: self.order.sq,
            s: self.order.period,
            mean: self.mean.is_some(),
        }
    }

    /// Point forecasts for the `horizon` steps after the training series.
    pub fn forecast(&self, horizon: usize) -> Vec<f64> {
        let o = self.order;
        let layout = self.layout();
        let mut x = [&self.ar[..], &self.sar[..], &self.ma[..], &self.sma[..]].concat();
        if let Some(mu) = self.mean {
            x.push(mu);
        }
        let (a, m, mu) = layout.polys(&x);
        let mut w = difference(&self.history, o.d, o.sd, o.period);
        let start = a.iter().map(|t| t.0).max().unwrap_or(0);
        let mut e = vec![0.0; start];
        e.extend(css_residuals(&w, &a, &m, mu));
        let n = w.len();
        for h in 0..horizon {
            let t = n + h;
            let mut v = mu;
            for &(k, c) in &a {
                v -= c * (w[t - k] - mu);
            }
            for &(j, c) in &m {
                if t - j < n {
                    v += c * e[t - j];
                }
            }
            w.push(v);
            e.push(0.0);
        }
        // undo differencing: y_t = w_t - sum_{k>=1} c_k y_{t-k}
        let diff_poly = {
            let mut p: Poly = Vec::new();
            for _ in 0..o.d {
                p = multiply(&p, &vec![(1, -1.0)]);
            }
            for _ in 0..o.sd {
                p = multiply(&p, &vec![(o.period, -1.0)]);
            }
            p
        };
        let mut y = self.history.clone();
        for h in 0..horizon {
            let t = y.len();
            let mut v = w[n + h];
            for &(k, c) in &diff_poly {
                v -= c * y[t - k];
            }
            y.push(v);
        }
        y.split_off(self.history.len())
    }
}

/// SARIMA forecasts laid out over the days following the training period.
#[derive(Debug, Clone)]
pub struct SarimaForecaster {
    pub model: Sarima,
    first_test_day: usize,
    bins_per_day: usize,
    forecasts: Vec<f64>,
}

impl SarimaForecaster {
    /// Forecasts `horizon_days` days after `train_days` days of history.
    pub fn new(model: Sarima, train_days: usize, bins_per_day: usize, horizon_days: usize) -> Self {
        let forecasts = model.forecast(horizon_days * bins_per_day);
        SarimaForecaster {
            model,
            first_test_day: train_days,
            bins_per_day,
            forecasts,
        }
    }
}

impl Forecaster for SarimaForecaster {
    fn method(&self) -> Method {
        Method::Sarima
    }

    fn predict_raw(&self, day: usize, bin: usize) -> f64 {
        day.checked_sub(self.first_test_day)
            .and_then(|d| self.forecasts.get(d * self.bins_per_day + bin))
            .copied()
            .unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;

    #[test]
    fn reflection_test_matches_known_cases() {
        assert!(is_stationary(&[0.5], 0.0));
        assert!(!is_stationary(&[1.0], 0.0));
        // 1 - 1.5B + 0.5B^2 = (1-B)(1-0.5B): unit root
        assert!(!is_stationary(&[1.5, -0.5], 0.0));
        // 1 - 0.5B - 0.3B^2: roots outside the unit circle
        assert!(is_stationary(&[0.5, 0.3], 0.0));
    }

    #[test]
    fn polynomial_product() {
        // (1 - 0.5B)(1 - 0.2B^4) = 1 - 0.5B - 0.2B^4 + 0.1B^5
        let p = multiply(&lag_poly(&[0.5], 1, -1.0), &lag_poly(&[0.2], 4, -1.0));
        assert_eq!(p, vec![(1, -0.5), (4, -0.2), (5, 0.1)]);
    }

    #[test]
    fn too_short_series_is_rejected() {
        let y = vec![1.0; 48];
        assert!(matches!(
            fit_sarima(&y, 24, &SarimaConfig::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn white_noise_selects_mean_model() {
        let mut rng = crate::seed::rng(11);
        let normal = Normal::new(5.0, 1.0).unwrap();
        let y: Vec<f64> = (0..24 * 20).map(|_| normal.sample(&mut rng)).collect();
        let model = fit_sarima(&y, 24, &SarimaConfig::default()).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let se = 1.0 / (y.len() as f64).sqrt();
        let fc = model.forecast(24);
        assert_eq!((model.order.d, model.order.sd), (0, 0));
        assert!(
            fc.iter().all(|v| (v - mean).abs() < 2.0 * se + 0.05),
            "{:?} {fc:?}",
            model.order
        );
        assert!(
            model.order.p + model.order.q + model.order.sp + model.order.sq <= 1,
            "{}",
            model.order
        );
    }

    #[test]
    fn pure_seasonal_pattern_is_reproduced() {
        let pattern: Vec<f64> = (0..24)
            .map(|h| (h as f64 / 24.0 * std::f64::consts::TAU).sin() * 3.0 + 4.0)
            .collect();
        let y: Vec<f64> = (0..24 * 10).map(|t| pattern[t % 24]).collect();
        let model = fit_sarima(&y, 24, &SarimaConfig::default()).unwrap();
        let fc = model.forecast(24);
        let rmse = (fc
            .iter()
            .zip(&pattern)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / 24.0)
            .sqrt();
        assert!(rmse < 1e-6, "{} rmse {rmse}", model.order);
    }

    #[test]
    fn recovers_ar1_coefficient() {
        let mut rng = crate::seed::rng(3);
        let mut y = vec![0.0f64];
        for _ in 0..2000 {
            let prev = *y.last().unwrap();
            y.push(0.6 * prev + rng.gen::<f64>() - 0.5);
        }
        let cfg = SarimaConfig {
            max_q: 0,
            max_sp: 0,
            max_sq: 0,
            max_p: 1,
            ..Default::default()
        };
        let model = fit_sarima(&y, 24, &cfg).unwrap();
        assert_eq!(model.order.p, 1);
        assert!((model.ar[0] - 0.6).abs() < 0.05, "{:?}", model.ar);
    }

    #[test]
    fn kalman_matches_css_for_long_ar_series() {
        // For a pure AR the exact innovations converge to CSS residuals.
        let mut rng = crate::seed::rng(5);
        let mut w = vec![0.0f64];
        for _ in 0..500 {
            let prev = *w.last().unwrap();
            w.push(0.5 * prev + rng.gen::<f64>() - 0.5);
        }
        let a = lag_poly(&[0.5], 1, -1.0);
        let (v, f) = kalman_innovations(&w, &a, &Vec::new(), 0.0).unwrap();
        let e = css_residuals(&w, &a, &Vec::new(), 0.0);
        assert!((f[0] - 1.0 / (1.0 - 0.25)).abs() < 1e-8);
        for t in 1..w.len() {
            assert!((v[t] - e[t - 1]).abs() < 1e-9);
            assert!((f[t] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ml_refinement_runs_on_seasonal_ma() {
        let mut rng = crate::seed::rng(8);
        let e: Vec<f64> = (0..24 * 40).map(|_| rng.gen::<f64>() - 0.5).collect();
        // w_t = e_t - 0.6 e_{t-24}
        let w: Vec<f64> = (0..e.len())
            .map(|t| e[t] - if t >= 24 { 0.6 * e[t - 24] } else { 0.0 })
            .collect();
        let layout = Layout {
            p: 0,
            sp: 0,
            q: 0,
            sq: 1,
            s: 24,
            mean: false,
        };
        let cand = fit_css(&w, layout, 0.0, 60, 24).unwrap();
        let x = refine_ml(&w, &cand, 20).expect("refinement failed");
        assert!((x[0] + 0.6).abs() < 0.1);
    }

    #[test]
    fn seasonal_strength_extremes() {
        let pattern: Vec<f64> = (0..240).map(|t| ((t % 24) as f64).sin()).collect();
        assert!(seasonal_strength(&pattern, 24) > 0.99);
        let mut rng = crate::seed::rng(9);
        let noise: Vec<f64> = (0..240).map(|_| rng.gen::<f64>()).collect();
        assert!(seasonal_strength(&noise, 24) < 0.64);
    }
}
