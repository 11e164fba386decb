//! Differentiable objectives that supply Euclidean kernel gradients.
//!
//! Every objective exposes its parameters as a list of layers, each a flat
//! vector laid out by its [`LayerShape`] (see [`LayerShape::kernel_offset`]).

mod conv;
mod dataset;
mod fd;
mod mlp;
mod procrustes;
mod rayleigh;

pub use conv::ConvNet;
pub use dataset::{make_synthetic_dataset, make_synthetic_dataset_with, DatasetShape, SyntheticDataset};
pub use fd::{finite_difference_gradient, max_relative_error};
pub use mlp::Mlp;
pub use procrustes::Procrustes;
pub use rayleigh::Rayleigh;

use thiserror::Error;

use crate::ensemble::LayerShape;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("parameter layout mismatch: {0}")]
    Shape(String),
    #[error("non-finite loss or gradient")]
    NonFiniteGradient,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dataset i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Which samples an evaluation averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Batch<'a> {
    Full,
    Indices(&'a [usize]),
}

/// Loss `𝓛(𝒲, 𝔰)` and its Euclidean gradient with respect to every kernel.
///
/// Implementations must be pure: identical parameters and batch give
/// identical results.
pub trait Objective: Sync {
    fn name(&self) -> &str;

    fn layers(&self) -> &[LayerShape];

    /// Number of samples for mini-batching; `None` for data-free objectives.
    fn num_samples(&self) -> Option<usize> {
        None
    }

    fn loss_and_grad(&self, params: &[Vec<f64>], batch: Batch<'_>) -> Result<(f64, Vec<Vec<f64>>)>;

    fn loss(&self, params: &[Vec<f64>], batch: Batch<'_>) -> Result<f64> {
        Ok(self.loss_and_grad(params, batch)?.0)
    }
}

pub(crate) fn check_params(layers: &[LayerShape], params: &[Vec<f64>]) -> Result<()> {
    if layers.len() != params.len() {
        return Err(HarnessError::Shape(format!(
            "expected {} layers, got {}",
            layers.len(),
            params.len()
        )));
    }
    for (s, p) in layers.iter().zip(params) {
        if s.param_len() != p.len() {
            return Err(HarnessError::Shape(format!(
                "layer {} expects {} values, got {}",
                s.layer,
                s.param_len(),
                p.len()
            )));
        }
    }
    Ok(())
}

pub(crate) fn check_finite(loss: f64, grads: &[Vec<f64>]) -> Result<()> {
    if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(HarnessError::NonFiniteGradient);
    }
    Ok(())
}

pub(crate) fn batch_indices(batch: Batch<'_>, n: usize) -> Result<Vec<usize>> {
    match batch {
        Batch::Full => Ok((0..n).collect()),
        Batch::Indices(ix) => {
            if ix.is_empty() {
                return Err(HarnessError::InvalidInput("empty batch".into()));
            }
            if let Some(&bad) = ix.iter().find(|&&i| i >= n) {
                return Err(HarnessError::InvalidInput(format!(
                    "sample index {bad} out of range for {n} samples"
                )));
            }
            Ok(ix.to_vec())
        }
    }
}

/// Softmax cross-entropy of `logits` against `label`; writes `softmax − onehot`
/// into `dlogits`.
pub(crate) fn softmax_cross_entropy(logits: &[f64], label: usize, dlogits: &mut [f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (d, &l) in dlogits.iter_mut().zip(logits) {
        *d = (l - m).exp();
        z += *d;
    }
    dlogits.iter_mut().for_each(|d| *d /= z);
    let loss = z.ln() - (logits[label] - m);
    dlogits[label] -= 1.0;
    loss
}
