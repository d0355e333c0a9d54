//! Central-difference gradient verification.

use crate::error::{Error, Result};

/// Compares the analytic gradient returned by `loss_fn` at `params` with central
/// differences of its value, coordinate by coordinate, and returns
/// `max |g - ĝ| / max(1, |g|, |ĝ|)`.
pub fn finite_difference_check<F>(mut loss_fn: F, params: &[f64], epsilon: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::Config(format!(
            "epsilon must lie in [1e-6, 1e-3], got {epsilon}"
        )));
    }
    let (value, analytic) = loss_fn(params)?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss at base point is {value}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::Shape(format!(
            "gradient has {} entries for {} parameters",
            analytic.len(),
            params.len()
        )));
    }

    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for k in 0..params.len() {
        probe[k] = params[k] + epsilon;
        let (up, _) = loss_fn(&probe)?;
        probe[k] = params[k] - epsilon;
        let (down, _) = loss_fn(&probe)?;
        probe[k] = params[k];
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFinite(format!("loss near coordinate {k}")));
        }
        let numeric = (up - down) / (2.0 * epsilon);
        let g = analytic[k];
        let err = (g - numeric).abs() / 1f64.max(g.abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}
