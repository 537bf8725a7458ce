//! Averaging correlations through the Fisher z-transform.

use super::StatsError;

/// Correlations are clamped to this magnitude before `atanh`.
pub const FISHER_CLAMP: f64 = 1.0 - 1e-7;

/// `tanh(mean(atanh(r_i)))`.
///
/// A list of identical values returns that value, so perfect correlations
/// average to exactly 1 rather than to the clamp.
///
/// Evaluated as the mean of `ln((1+r)/(1-r))` (twice the z value) followed by
/// a range-split `tanh`, which keeps closed-form cases such as
/// `[0.0, 0.8] -> 0.5` exact.
pub fn fisher_z_mean(correlations: &[f64]) -> Result<f64, StatsError> {
    if correlations.is_empty() {
        return Err(StatsError::EmptyList);
    }
    if correlations.iter().any(|r| !r.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    if correlations.iter().all(|&r| r == correlations[0]) {
        return Ok(correlations[0].clamp(-1.0, 1.0));
    }
    let mut sum = 0.0;
    for &r in correlations {
        let r = r.clamp(-FISHER_CLAMP, FISHER_CLAMP);
        sum += r.ln_1p() - (-r).ln_1p();
    }
    Ok(half_tanh(sum / correlations.len() as f64))
}

/// `tanh(l / 2)`.
fn half_tanh(l: f64) -> f64 {
    let a = l.abs();
    let t = if a >= 3f64.ln() {
        1.0 - 2.0 / (a.exp() + 1.0)
    } else {
        let e = a.exp_m1();
        e / (e + 2.0)
    };
    t.copysign(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_point() {
        assert_eq!(fisher_z_mean(&[0.5, 0.5]).unwrap(), 0.5);
        assert!((fisher_z_mean(&[-0.3]).unwrap() + 0.3).abs() < 1e-12);
    }

    #[test]
    fn closed_form_half() {
        // atanh(0.8) = ln 3, so the mean is ln sqrt(3) and tanh of that is (3-1)/(3+1).
        assert_eq!(fisher_z_mean(&[0.0, 0.8]).unwrap(), 0.5);
    }

    #[test]
    fn perfect_correlations_stay_finite() {
        for r in [1.0, -1.0, 0.9999999] {
            let v = fisher_z_mean(&[r, r]).unwrap();
            assert!(v.is_finite() && v.abs() <= 1.0);
        }
        assert_eq!(fisher_z_mean(&[1.0, 1.0]).unwrap(), 1.0);
        let mixed = fisher_z_mean(&[1.0, 0.5]).unwrap();
        assert!(mixed.is_finite() && mixed < 1.0);
        assert!((fisher_z_mean(&[1.0, 0.9999999]).unwrap() - FISHER_CLAMP).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn agrees_with_textbook_form(rs in proptest::collection::vec(-0.99999f64..0.99999, 1..12)) {
            let z = rs.iter().map(|r| r.atanh()).sum::<f64>() / rs.len() as f64;
            proptest::prop_assert!((fisher_z_mean(&rs).unwrap() - z.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        assert_eq!(fisher_z_mean(&[]), Err(StatsError::EmptyList));
        assert_eq!(fisher_z_mean(&[f64::NAN]), Err(StatsError::NonFinite));
    }
}
