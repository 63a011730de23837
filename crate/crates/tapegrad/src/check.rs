//! Numerical differentiation helpers for validating analytic gradients.
//!
//! These only evaluate the forward pass, so they stay independent of the
//! backward implementations they are used to check.

/// Central difference estimate of df/dx at `x0` with step `h`.
pub fn central_difference(f: &mut dyn FnMut(f64) -> f64, x0: f64, h: f64) -> f64 {
    assert!(h > 0.0, "step must be positive");
    (f(x0 + h) - f(x0 - h)) / (2.0 * h)
}

/// Relative error between two quantities, floored so near-zero pairs do not
/// amplify rounding noise.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(1e-8);
    (a - b).abs() / scale
}
