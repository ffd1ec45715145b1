use crate::error::{Error, Result};

/// `lr0 * (1 - iteration / max_iterations)^power`.
pub fn poly_decay_lr(lr0: f64, iteration: usize, max_iterations: usize, power: f64) -> Result<f64> {
    if iteration > max_iterations {
        return Err(Error::invalid(format!("iteration {iteration} exceeds the schedule length {max_iterations}")));
    }
    if iteration == 0 {
        return Ok(lr0);
    }
    Ok(lr0 * (1.0 - iteration as f64 / max_iterations as f64).powf(power))
}
