//! Central finite-difference gradient checking.

use serde::Serialize;

/// Denominator floor for the relative error. Central differences of an
/// O(1) objective carry roundoff near `eps / h ~ 1e-11`, so a gradient that
/// is exactly zero reads as about that much; the floor keeps such
/// coordinates near 1e-5 instead of reporting them as failures.
pub const REL_FLOOR: f64 = 1e-6;
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub n_checked: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares `analytic` against `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// coordinate of `x`.
pub fn finite_diff_check<F>(mut f: F, x: &[f64], analytic: &[f64], h: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len(), "gradient length must match parameters");
    let mut w = x.to_vec();
    let mut report = GradCheckReport {
        n_checked: x.len(),
        max_rel_error: 0.0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for i in 0..x.len() {
        w[i] = x[i] + h;
        let up = f(&w);
        w[i] = x[i] - h;
        let down = f(&w);
        w[i] = x[i];
        let numeric = (up - down) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error || i == 0 {
            report.max_rel_error = err;
            report.worst_index = i;
            report.worst_analytic = analytic[i];
            report.worst_numeric = numeric;
        }
    }
    report
}
