/// Largest relative disagreement between `analytic` and a central
/// difference of `f` around `params`.
///
/// Each coordinate's error is `|analytic − cd| / max(1e-8, |cd|)`. `f`
/// must be deterministic; a stochastic `f` makes the result meaningless.
pub fn finite_diff_check<F>(mut f: F, params: &[f64], analytic: &[f64], step: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let numeric = central_differences(&mut f, params, step);
    numeric
        .iter()
        .zip(analytic)
        .map(|(cd, an)| relative_error(*an, *cd))
        .fold(0.0, f64::max)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1e-8)
}

/// Central-difference gradient of `f` at `params`.
pub fn central_differences<F>(f: &mut F, params: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut p = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + step;
            let up = f(&p);
            p[i] = orig - step;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let err = finite_diff_check(|w| w[0] * w[0], &[3.0], &[6.0], 1e-5);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let err = finite_diff_check(|_| 2.0, &[1.0, -4.0], &[0.0, 0.0], 1e-5);
        assert_eq!(err, 0.0);
    }

    #[test]
    fn wrong_gradient_is_flagged() {
        let err = finite_diff_check(|w| w[0].sin(), &[0.4], &[0.4f64.cos() * 1.01], 1e-5);
        assert!(err > 5e-3);
    }
}
