use crate::ensemble::LayerShape;

use super::{check_finite, check_params, Batch, HarnessError, Objective, Result};

/// Orthogonal Procrustes loss `‖ωX − Y‖²_F` over `n×p` frames `ω`.
///
/// `X` is a fixed `p×p` conditioning matrix, the identity unless given, in
/// which case the loss is `‖ω − Y‖²_F` and its minimiser over the Stiefel
/// manifold is the polar factor of `Y`.
#[derive(Debug, Clone)]
pub struct Procrustes {
    n: usize,
    p: usize,
    target: Vec<f64>,
    conditioning: Option<Vec<f64>>,
    layers: [LayerShape; 1],
}

impl Procrustes {
    /// `target` is row-major `n×p`.
    pub fn new(n: usize, p: usize, target: Vec<f64>) -> Result<Self> {
        if n == 0 || p == 0 || n < p {
            return Err(HarnessError::InvalidInput(format!(
                "procrustes needs n >= p > 0, got {n}x{p}"
            )));
        }
        if target.len() != n * p {
            return Err(HarnessError::Shape(format!(
                "target should have {} entries, got {}",
                n * p,
                target.len()
            )));
        }
        Ok(Self {
            n,
            p,
            target,
            conditioning: None,
            layers: [LayerShape {
                layer: 1,
                kernel_rows: n,
                kernel_cols: p,
                in_channels: 1,
                out_channels: 1,
            }],
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(HarnessError::Shape("ragged target matrix".into()));
        }
        Self::new(n, p, rows.concat())
    }

    /// Row-major `p×p` conditioning matrix.
    pub fn with_conditioning(mut self, x: Vec<f64>) -> Result<Self> {
        if x.len() != self.p * self.p {
            return Err(HarnessError::Shape(format!(
                "conditioning should be {0}x{0}",
                self.p
            )));
        }
        self.conditioning = Some(x);
        Ok(self)
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.p)
    }
}

impl Objective for Procrustes {
    fn name(&self) -> &str {
        "procrustes"
    }

    fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    fn loss_and_grad(&self, params: &[Vec<f64>], _batch: Batch<'_>) -> Result<(f64, Vec<Vec<f64>>)> {
        check_params(&self.layers, params)?;
        let (n, p) = (self.n, self.p);
        let w = &params[0];
        let residual: Vec<f64> = match &self.conditioning {
            None => w.iter().zip(&self.target).map(|(a, b)| a - b).collect(),
            Some(x) => (0..n * p)
                .map(|ij| {
                    let (i, j) = (ij / p, ij % p);
                    (0..p).map(|k| w[i * p + k] * x[k * p + j]).sum::<f64>() - self.target[ij]
                })
                .collect(),
        };
        let loss = residual.iter().map(|r| r * r).sum();
        let grad = match &self.conditioning {
            None => residual.iter().map(|r| 2.0 * r).collect(),
            // 2 (ωX − Y) Xᵀ
            Some(x) => (0..n * p)
                .map(|ik| {
                    let (i, k) = (ik / p, ik % p);
                    2.0 * (0..p).map(|j| residual[i * p + j] * x[k * p + j]).sum::<f64>()
                })
                .collect(),
        };
        let grads = vec![grad];
        check_finite(loss, &grads)?;
        Ok((loss, grads))
    }
}
