//! Central finite-difference gradient checker.

use super::layers::Parameters;

pub const DEFAULT_EPS: f64 = 1e-5;
/// Relative errors are measured against `max(|analytic|, |numeric|, DENOM_FLOOR)`.
pub const DENOM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (tensor index, element index) of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

/// Compares `analytic` (same shape as `params`) to `(L(θ+ε) − L(θ−ε)) / 2ε`
/// for every scalar parameter.
pub fn check_gradients<P: Parameters>(
    params: &P,
    analytic: &P,
    loss: impl Fn(&P) -> f64,
    eps: f64,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let grads = analytic.tensors();
    let mut probe = params.clone();
    for (ti, &n) in sizes.iter().enumerate() {
        for ei in 0..n {
            let orig = params.tensors()[ti].data[ei];
            probe.tensors_mut()[ti].data[ei] = orig + eps;
            let plus = loss(&probe);
            probe.tensors_mut()[ti].data[ei] = orig - eps;
            let minus = loss(&probe);
            probe.tensors_mut()[ti].data[ei] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(grads[ti].data[ei], numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (ti, ei);
            }
            report.checked += 1;
        }
    }
    report
}
