//! Central finite-difference gradient checks.

use crate::numerics::graph::ParamStore;
use crate::numerics::tensor::Tensor;

/// Magnitudes below this are compared absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Central differences `(f(p + h) - f(p - h)) / 2h` for every scalar of every
/// parameter, in store order.
pub fn numeric_gradients(
    store: &ParamStore,
    h: f64,
    mut f: impl FnMut(&ParamStore) -> f64,
) -> Vec<Tensor> {
    let mut probe = store.clone();
    let mut out = Vec::with_capacity(store.len());
    for k in 0..store.len() {
        let base = store.params()[k].tensor.clone();
        let mut grad = Tensor::zeros(base.rows(), base.cols());
        for i in 0..base.len() {
            probe.params_mut()[k].tensor.data_mut()[i] = base.data()[i] + h;
            let up = f(&probe);
            probe.params_mut()[k].tensor.data_mut()[i] = base.data()[i] - h;
            let down = f(&probe);
            probe.params_mut()[k].tensor.data_mut()[i] = base.data()[i];
            grad.data_mut()[i] = (up - down) / (2.0 * h);
        }
        out.push(grad);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares analytic gradients against central differences of `f`.
pub fn check_gradients(
    store: &ParamStore,
    analytic: &[Tensor],
    h: f64,
    f: impl FnMut(&ParamStore) -> f64,
) -> GradCheckReport {
    let numeric = numeric_gradients(store, h, f);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    for (k, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        for (i, (&x, &y)) in a.data().iter().zip(n.data()).enumerate() {
            let err = relative_error(x, y);
            report.checked += 1;
            if err > report.max_relative_error || err.is_nan() {
                report.max_relative_error = err;
                report.worst_param = store.params()[k].name.clone();
                report.worst_index = i;
            }
        }
    }
    report
}
