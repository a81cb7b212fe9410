use crate::error::{Error, Result};

/// Dynamic time warping distance with a Sakoe-Chiba band of `band` bins.
///
/// Local cost is the squared difference; steps are (1,0), (0,1) and (1,1)
/// with equal weight. Returns the square root of the accumulated cost, so
/// a zero band gives the Euclidean distance.
pub fn dtw_distance(a: &[f64], b: &[f64], band: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "DTW needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n == 0 {
        return Ok(0.0);
    }
    let inf = f64::INFINITY;
    let mut prev = vec![inf; n + 1];
    let mut cur = vec![inf; n + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        cur.iter_mut().for_each(|v| *v = inf);
        let lo = i.saturating_sub(band).max(1);
        let hi = (i + band).min(n);
        for j in lo..=hi {
            let cost = (a[i - 1] - b[j - 1]).powi(2);
            cur[j] = cost + prev[j].min(cur[j - 1]).min(prev[j - 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[n].sqrt())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn identical_series() {
        let a = [1.0, 3.0, 2.0, 0.5];
        assert_eq!(dtw_distance(&a, &a, 2).unwrap(), 0.0);
    }

    #[test]
    fn zero_band_is_euclidean() {
        let a = [1.0, 2.0, 3.0];
        let b = [2.0, 2.0, 5.0];
        assert!((dtw_distance(&a, &b, 0).unwrap() - 5.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn shifted_peak_is_cheap() {
        let mut a = vec![1.0; 48];
        let mut b = vec![1.0; 48];
        a[20] = 5.0;
        b[23] = 5.0;
        let euclid = dtw_distance(&a, &b, 0).unwrap();
        let warped = dtw_distance(&a, &b, 4).unwrap();
        assert!(warped < 0.01 * euclid, "{warped} vs {euclid}");
    }

    #[test]
    fn unequal_lengths_rejected() {
        assert!(dtw_distance(&[1.0], &[1.0, 2.0], 1).is_err());
    }

    proptest! {
        #[test]
        fn symmetric_and_monotone_in_band(
            a in prop::collection::vec(0.0f64..5.0, 12),
            b in prop::collection::vec(0.0f64..5.0, 12),
            band in 0usize..12,
        ) {
            let ab = dtw_distance(&a, &b, band).unwrap();
            prop_assert_eq!(ab, dtw_distance(&b, &a, band).unwrap());
            prop_assert!(dtw_distance(&a, &b, band + 1).unwrap() <= ab);
            prop_assert_eq!(dtw_distance(&a, &a, band).unwrap(), 0.0);
        }
    }
}
