/// Central-difference gradient of `f` at `x`.
pub fn central_difference<F>(mut f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Max over coordinates of `|analytic - numeric| / (|analytic| + 1e-8)`.
pub fn finite_diff_check<F>(f: F, x: &[f64], analytic: &[f64], step: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len(), "gradient length must match the point");
    let numeric = central_difference(f, x, step);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + 1e-8))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let f = |x: &[f64]| 3.0 * x[0] * x[0] - x[0] * x[1] + 0.5 * x[1] * x[1];
        let x = [0.7, -1.3];
        let g = [6.0 * x[0] - x[1], -x[0] + x[1]];
        assert!(finite_diff_check(f, &x, &g, 1e-4) < 1e-8);
    }

    #[test]
    fn constant_function_has_zero_error() {
        assert_eq!(finite_diff_check(|_| 4.2, &[1.0, 2.0], &[0.0, 0.0], 1e-5), 0.0);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let f = |x: &[f64]| x[0] * x[0];
        assert!(finite_diff_check(f, &[1.0], &[3.0], 1e-5) > 0.3);
    }
}
