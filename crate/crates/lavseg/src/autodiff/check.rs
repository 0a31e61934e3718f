//! Finite-difference gradient verification.
//!
//! Anything that exposes a flat parameter view and a scalar loss can be
//! checked: the harness perturbs each parameter by ±eps, evaluates the
//! loss, and compares the central difference against the analytic
//! gradient. Run it in 64-bit mode with dropout disabled.

/// A model (or wrapped single layer) whose gradients can be verified.
///
/// "Parameters" here means whatever the check should differentiate with
/// respect to — weights, biases, and, for single-layer checks, the input
/// tensor itself.
pub trait GradCheckTarget {
    fn param_count(&self) -> usize;
    fn param(&self, i: usize) -> f64;
    fn set_param(&mut self, i: usize, v: f64);
    /// Forward pass only.
    fn loss(&mut self) -> f64;
    /// Forward + backward; gradients in parameter order.
    fn analytic_grads(&mut self) -> Vec<f64>;
}

/// Central finite differences over every parameter.
pub fn finite_difference_grads<T: GradCheckTarget>(target: &mut T, eps: f64) -> Vec<f64> {
    let n = target.param_count();
    let mut grads = Vec::with_capacity(n);
    for i in 0..n {
        let saved = target.param(i);
        target.set_param(i, saved + eps);
        let plus = target.loss();
        target.set_param(i, saved - eps);
        let minus = target.loss();
        target.set_param(i, saved);
        grads.push((plus - minus) / (2.0 * eps));
    }
    grads
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Maximum relative error between analytic and finite-difference
/// gradients.
pub fn grad_check<T: GradCheckTarget>(target: &mut T, eps: f64) -> f64 {
    let analytic = target.analytic_grads();
    let numeric = finite_difference_grads(target, eps);
    assert_eq!(analytic.len(), numeric.len(), "gradient count mismatch");
    analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}
