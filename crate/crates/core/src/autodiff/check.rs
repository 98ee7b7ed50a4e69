//! Central finite differences, the reference the reverse-mode gradients are
//! checked against.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Gradient magnitudes below this are compared absolutely rather than
/// relatively; central differences at step 1e-5 carry about 1e-10 of
/// round-off, so smaller gradients cannot be resolved relatively.
pub const RELATIVE_FLOOR: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Central-difference gradient of `f` with respect to every entry of every input.
pub fn numerical_gradient<F>(f: F, inputs: &[Tensor], step: f64) -> Result<Vec<Tensor>>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidArgument(format!("invalid step {step}")));
    }
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[k].rows(), inputs[k].cols());
        for i in 0..inputs[k].len() {
            let x = inputs[k].data()[i];
            work[k].data_mut()[i] = x + step;
            let up = f(&work)?;
            work[k].data_mut()[i] = x - step;
            let down = f(&work)?;
            work[k].data_mut()[i] = x;
            g.data_mut()[i] = (up - down) / (2.0 * step);
        }
        out.push(g);
    }
    Ok(out)
}

/// Largest [`relative_error`] between matching entries.
pub fn max_relative_error(analytic: &[Tensor], numeric: &[Tensor]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.data().iter().zip(n.data()))
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}
