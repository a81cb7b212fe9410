//! Levenberg-Marquardt for small nonlinear least-squares problems.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub x: Vec<f64>,
    /// Sum of squared residuals at `x`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sumsq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Minimises `sum(f(x)^2)` from `x0`. `f` returns `None` for points outside
/// the admissible region; such steps are rejected like uphill steps.
pub fn levenberg_marquardt<F>(f: F, x0: &[f64], max_iter: usize) -> Option<LmOutcome>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let k = x0.len();
    let mut x = x0.to_vec();
    let mut r = f(&x)?;
    let mut cost = sumsq(&r);
    if k == 0 {
        return Some(LmOutcome {
            x,
            cost,
            iterations: 0,
            converged: true,
        });
    }
    let n = r.len();
    let mut mu = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        // forward-difference Jacobian, backward where the forward probe is inadmissible
        let mut jac = DMatrix::<f64>::zeros(n, k);
        for j in 0..k {
            let h = 1e-6 * x[j].abs().max(1e-2);
            let mut xp = x.clone();
            xp[j] += h;
            let (rp, sign) = match f(&xp) {
                Some(rp) => (rp, 1.0),
                None => {
                    xp[j] = x[j] - h;
                    (f(&xp)?, -1.0)
                }
            };
            for i in 0..n {
                jac[(i, j)] = sign * (rp[i] - r[i]) / h;
            }
        }
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        if g.amax() < 1e-12 * (1.0 + cost) {
            converged = true;
            break;
        }
        let mut improved = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for d in 0..k {
                a[(d, d)] += mu * jtj[(d, d)].max(1e-12) + 1e-12;
            }
            let Some(chol) = a.cholesky() else {
                mu *= 4.0;
                continue;
            };
            let step = chol.solve(&(-&g));
            let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            match f(&cand) {
                Some(rc) if sumsq(&rc) < cost => {
                    let new_cost = sumsq(&rc);
                    let rel = (cost - new_cost) / cost.max(1e-300);
                    let small_step =
                        step.amax() < 1e-9 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs())));
                    x = cand;
                    r = rc;
                    cost = new_cost;
                    mu = (mu / 3.0).max(1e-12);
                    improved = true;
                    if rel < 1e-10 || small_step {
                        converged = true;
                    }
                    break;
                }
                _ => mu *= 4.0,
            }
        }
        if !improved {
            // No downhill step at any damping: a (constrained) local minimum.
            converged = true;
        }
        if converged {
            break;
        }
    }
    Some(LmOutcome {
        x,
        cost,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_exponential_decay() {
        let ts: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 2.0 * (-0.7 * t).exp()).collect();
        let out = levenberg_marquardt(
            |p| {
                Some(
                    ts.iter()
                        .zip(&ys)
                        .map(|(t, y)| p[0] * (-p[1] * t).exp() - y)
                        .collect(),
                )
            },
            &[1.0, 0.1],
            200,
        )
        .unwrap();
        assert!(
            (out.x[0] - 2.0).abs() < 1e-6 && (out.x[1] - 0.7).abs() < 1e-6,
            "{:?}",
            out.x
        );
    }

    #[test]
    fn respects_admissible_region() {
        // minimum of (x-3)^2 lies outside x < 1
        let out =
            levenberg_marquardt(|p| (p[0] < 1.0).then(|| vec![p[0] - 3.0]), &[0.0], 100).unwrap();
        assert!(out.x[0] < 1.0 && out.x[0] > 0.9);
    }
}
