use std::collections::BTreeSet;

use rand::seq::index::sample;

use super::TransformerModel;
use crate::cohort::EncodedSequence;
use crate::util::rng_for;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradientComparison {
    pub index: usize,
    pub tensor: String,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

/// At least `n` parameter indices spread over every tensor in proportion to its
/// size, with at least one index per tensor.
pub fn sample_parameter_indices(model: &TransformerModel, n: usize, seed: u64) -> Vec<usize> {
    let total = model.parameter_count();
    let mut rng = rng_for(seed, 0x67726164);
    let mut out = BTreeSet::new();
    for t in model.tensors() {
        let want = ((n * t.len()).div_ceil(total)).max(1).min(t.len());
        for i in sample(&mut rng, t.len(), want) {
            out.insert(t.offset + i);
        }
    }
    out.into_iter().collect()
}

/// Backpropagated vs central-difference gradients of the evaluation-mode loss.
pub fn gradient_check_indices(
    model: &TransformerModel,
    seq: &EncodedSequence,
    label: u8,
    eps: f64,
    indices: &[usize],
) -> Result<Vec<GradientComparison>> {
    let (loss, grad) = model.loss_and_gradient(seq, label)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let mut params = model.params.clone();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= params.len() {
            return Err(Error::InvalidArgument(format!("parameter index {i} out of range")));
        }
        let orig = params[i];
        params[i] = orig + eps;
        let up = model.loss(&params, seq, label)?;
        params[i] = orig - eps;
        let down = model.loss(&params, seq, label)?;
        params[i] = orig;
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFinite("perturbed loss".into()));
        }
        let numeric = (up - down) / (2.0 * eps);
        let analytic = grad[i];
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        let tensor = model.tensors().iter().find(|t| t.range().contains(&i)).map(|t| t.name.clone()).unwrap_or_default();
        out.push(GradientComparison { index: i, tensor, analytic, numeric, relative_error: (analytic - numeric).abs() / denom });
    }
    Ok(out)
}

/// Max relative error over a 256-parameter sample covering every tensor.
pub fn gradient_check(model: &TransformerModel, seq: &EncodedSequence, label: u8, eps: f64) -> Result<f64> {
    let indices = sample_parameter_indices(model, 256, model.config.seed);
    let cmp = gradient_check_indices(model, seq, label, eps, &indices)?;
    Ok(cmp.iter().map(|c| c.relative_error).fold(0.0, f64::max))
}
