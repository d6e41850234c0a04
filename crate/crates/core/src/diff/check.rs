//! Central-finite-difference gradient checking.

use super::{DiffArray, Tape};
use crate::error::{Error, Result};

/// Compare the tape gradient of a scalar-valued function against central
/// finite differences. Returns the maximum relative error over every
/// coordinate of every input, where the relative error of analytic `a`
/// against numeric `n` is |a - n| / max(|a|, |n|, 1e-12).
///
/// `f` receives tracked copies of `inputs` for the analytic pass and plain
/// untracked copies for the perturbed evaluations.
pub fn finite_difference_check<F>(f: F, inputs: &[DiffArray], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[DiffArray]) -> Result<DiffArray>,
{
    if step <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }

    // Analytic gradients.
    let mut tape = Tape::new();
    let tracked: Vec<DiffArray> = inputs.iter().map(|a| tape.leaf(a)).collect();
    let loss = f(&mut tape, &tracked)?;
    if loss.len() != 1 {
        return Err(Error::InvalidArgument(format!(
            "function under test must return a scalar, got shape {:?}",
            loss.shape()
        )));
    }
    let grads = tape.backward(&loss)?;
    let analytic: Vec<DiffArray> = tracked.iter().map(|t| grads.grad_of(t)).collect();

    let eval_at = |point: &[DiffArray]| -> Result<f64> {
        let mut scratch = Tape::new();
        Ok(f(&mut scratch, point)?.item())
    };

    let mut max_rel = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        for coord in 0..input.len() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            let mut vp = input.values().to_vec();
            let mut vm = input.values().to_vec();
            vp[coord] += step;
            vm[coord] -= step;
            plus[i] = DiffArray::from_vec(input.shape().to_vec(), vp)?;
            minus[i] = DiffArray::from_vec(input.shape().to_vec(), vm)?;
            let numeric = (eval_at(&plus)? - eval_at(&minus)?) / (2.0 * step);
            let a = analytic[i].values()[coord];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}
