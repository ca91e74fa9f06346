/// Denominator floor of the relative error, so gradients that are exactly
/// zero analytically compare on an absolute scale instead of dividing by
/// roundoff.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compare `analytic` against central differences of the scalar map `f`
/// around `point`, coordinate by coordinate.
///
/// Relative error is `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn grad_check<F>(f: F, point: &[f64], analytic: &[f64], eps: f64, tolerance: f64) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(point.len(), analytic.len(), "gradient length mismatch");
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: analytic.first().copied().unwrap_or(0.0),
        numeric: 0.0,
        checked: point.len(),
        tolerance,
        passed: true,
    };
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = f(&x);
        x[i] = orig - eps;
        let minus = f(&x);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        let err = if err.is_nan() { f64::INFINITY } else { err };
        if i == 0 || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report.passed = report.max_rel_error < tolerance;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn linear_map_is_exact() {
        let coeffs = [0.5, -1.25, 3.0, 2.0];
        let r = grad_check(|x| dot(&coeffs, x), &[0.1, 0.2, -0.3, 0.25], &coeffs, 1e-5, 1e-10);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn quadratic_map() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let p = [0.3, -1.7, 2.2];
        let g: Vec<f64> = p.iter().map(|v| 2.0 * v).collect();
        assert!(grad_check(f, &p, &g, 1e-5, 1e-8).passed);
    }

    #[test]
    fn corrupted_coordinate_is_identified() {
        let coeffs = [0.5, -1.25, 3.0, 7.5];
        let mut bad = coeffs;
        bad[2] *= 1.1;
        let r = grad_check(|x| dot(&coeffs, x), &[0.0; 4], &bad, 1e-5, 1e-4);
        assert!(!r.passed);
        assert_eq!(r.worst_index, 2);
        assert!((r.max_rel_error - 0.3 / 3.3).abs() < 1e-6);
    }
}
