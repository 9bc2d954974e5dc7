use crate::error::{Error, Result};
use crate::matkit::Vector;

const MAX_ITERATIONS: usize = 200;

/// Input that moves `x` to `x_target` in one step of `step_fn`.
///
/// Runs the fixed-point iteration `u ← u ± (x_target − step_fn(x, u))`, starting
/// from the input that would be exact if the dynamics were `step_fn(x, 0) + u`. The
/// sign follows the sign of the input channel, detected from the first update.
pub fn one_step_control(
    step_fn: impl Fn(&Vector, &Vector) -> Vector,
    x: &Vector,
    x_target: &Vector,
    tol: f64,
) -> Result<Vector> {
    let drift = step_fn(x, &Vector::zeros(x_target.len()));
    let mut u = x_target - &drift;
    let mut residual = x_target - step_fn(x, &u);
    if residual.norm() <= tol {
        return Ok(u);
    }
    let channel = if (step_fn(x, &(&u + &residual)) - x_target).norm() <= residual.norm() { 1.0 } else { -1.0 };
    for _ in 0..MAX_ITERATIONS {
        u += &residual * channel;
        residual = x_target - step_fn(x, &u);
        if residual.norm() <= tol {
            return Ok(u);
        }
        if !residual.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(Error::NotConverged { what: "one-step control", iterations: MAX_ITERATIONS })
}
