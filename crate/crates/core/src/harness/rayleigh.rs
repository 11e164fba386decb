use crate::ensemble::LayerShape;

use super::{check_finite, check_params, Batch, HarnessError, Objective, Result};

/// Rayleigh quotient `ωᵀAω` on the unit sphere `S^{n−1}`.
///
/// The single parameter layer is one `n×1` kernel.
#[derive(Debug, Clone)]
pub struct Rayleigh {
    n: usize,
    a: Vec<f64>,
    layers: [LayerShape; 1],
}

impl Rayleigh {
    /// Builds from a row-major `n×n` matrix. An asymmetric matrix is replaced
    /// by its symmetric part `(A + Aᵀ)/2`.
    pub fn new(n: usize, a: Vec<f64>) -> Result<Self> {
        if n == 0 || a.len() != n * n {
            return Err(HarnessError::InvalidInput(format!(
                "expected a {n}x{n} matrix, got {} entries",
                a.len()
            )));
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(HarnessError::InvalidInput("matrix has non-finite entries".into()));
        }
        let mut a = a;
        let asym = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .any(|(i, j)| a[i * n + j] != a[j * n + i]);
        if asym {
            log::warn!("rayleigh: matrix is not symmetric, using its symmetric part");
            for i in 0..n {
                for j in (i + 1)..n {
                    let m = 0.5 * (a[i * n + j] + a[j * n + i]);
                    a[i * n + j] = m;
                    a[j * n + i] = m;
                }
            }
        }
        Ok(Self {
            n,
            a,
            layers: [LayerShape {
                layer: 1,
                kernel_rows: n,
                kernel_cols: 1,
                in_channels: 1,
                out_channels: 1,
            }],
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(HarnessError::InvalidInput("matrix is not square".into()));
        }
        Self::new(n, rows.concat())
    }

    pub fn diagonal(d: &[f64]) -> Result<Self> {
        let n = d.len();
        let mut a = vec![0.0; n * n];
        for (i, &x) in d.iter().enumerate() {
            a[i * n + i] = x;
        }
        Self::new(n, a)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Row-major symmetric matrix actually used.
    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    fn apply(&self, w: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.a[i * self.n + j] * w[j]).sum())
            .collect()
    }
}

impl Objective for Rayleigh {
    fn name(&self) -> &str {
        "rayleigh"
    }

    fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    fn loss_and_grad(&self, params: &[Vec<f64>], _batch: Batch<'_>) -> Result<(f64, Vec<Vec<f64>>)> {
        check_params(&self.layers, params)?;
        let w = &params[0];
        let aw = self.apply(w);
        let loss = w.iter().zip(&aw).map(|(x, y)| x * y).sum();
        let grad = vec![aw.into_iter().map(|x| 2.0 * x).collect()];
        check_finite(loss, &grad)?;
        Ok((loss, grad))
    }
}
