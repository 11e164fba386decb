use crate::ensemble::LayerShape;
use crate::exec::Execution;

use super::{
    batch_indices, check_finite, check_params, softmax_cross_entropy, Batch, HarnessError,
    Objective, Result,
};

/// Two-layer perceptron with tanh hidden units and softmax cross-entropy.
///
/// Layer 1 is an `inputs×hidden` matrix `W₁` and layer 2 a `hidden×classes`
/// matrix `W₂`; `logits = W₂ᵀ tanh(W₁ᵀ x)`. Storing `W₁` with `inputs` rows
/// lets it sit on a Stiefel manifold when `hidden ≤ inputs`. No biases.
#[derive(Debug, Clone)]
pub struct Mlp {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    in_dim: usize,
    hidden: usize,
    classes: usize,
    layers: [LayerShape; 2],
    exec: Execution,
}

impl Mlp {
    /// `inputs` is sample-major `samples × in_dim`.
    pub fn new(
        inputs: Vec<f64>,
        labels: Vec<usize>,
        in_dim: usize,
        hidden: usize,
        classes: usize,
    ) -> Result<Self> {
        if in_dim == 0 || hidden == 0 || classes < 2 {
            return Err(HarnessError::InvalidInput(format!(
                "bad mlp dimensions {in_dim}/{hidden}/{classes}"
            )));
        }
        if labels.is_empty() || inputs.len() != labels.len() * in_dim {
            return Err(HarnessError::Shape(format!(
                "{} inputs for {} samples of width {in_dim}",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(HarnessError::InvalidInput(format!("label {l} out of range")));
        }
        Ok(Self {
            inputs,
            labels,
            in_dim,
            hidden,
            classes,
            layers: [
                LayerShape {
                    layer: 1,
                    kernel_rows: in_dim,
                    kernel_cols: hidden,
                    in_channels: 1,
                    out_channels: 1,
                },
                LayerShape {
                    layer: 2,
                    kernel_rows: hidden,
                    kernel_cols: classes,
                    in_channels: 1,
                    out_channels: 1,
                },
            ],
            exec: Execution::default(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    fn forward(&self, w1: &[f64], w2: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (h, k) = (self.hidden, self.classes);
        let hid: Vec<f64> = (0..h)
            .map(|i| (0..self.in_dim).map(|j| w1[j * h + i] * x[j]).sum::<f64>().tanh())
            .collect();
        let logits = (0..k)
            .map(|c| (0..h).map(|i| w2[i * k + c] * hid[i]).sum())
            .collect();
        (hid, logits)
    }

    fn sample(&self, w1: &[f64], w2: &[f64], s: usize) -> (f64, Vec<Vec<f64>>) {
        let (h, k) = (self.hidden, self.classes);
        let x = &self.inputs[s * self.in_dim..(s + 1) * self.in_dim];
        let (hid, logits) = self.forward(w1, w2, x);
        let mut dl = vec![0.0; k];
        let loss = softmax_cross_entropy(&logits, self.labels[s], &mut dl);
        let mut g2 = vec![0.0; h * k];
        let mut dz = vec![0.0; h];
        for i in 0..h {
            let mut dh = 0.0;
            for c in 0..k {
                g2[i * k + c] = hid[i] * dl[c];
                dh += w2[i * k + c] * dl[c];
            }
            dz[i] = dh * (1.0 - hid[i] * hid[i]);
        }
        let mut g1 = vec![0.0; self.in_dim * h];
        for j in 0..self.in_dim {
            for i in 0..h {
                g1[j * h + i] = x[j] * dz[i];
            }
        }
        (loss, vec![g1, g2])
    }

    pub fn accuracy(&self, params: &[Vec<f64>]) -> Result<f64> {
        check_params(&self.layers, params)?;
        let n = self.labels.len();
        let correct = (0..n)
            .filter(|&s| {
                let x = &self.inputs[s * self.in_dim..(s + 1) * self.in_dim];
                argmax(&self.forward(&params[0], &params[1], x).1) == self.labels[s]
            })
            .count();
        Ok(correct as f64 / n as f64)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

impl Objective for Mlp {
    fn name(&self) -> &str {
        "mlp"
    }

    fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    fn num_samples(&self) -> Option<usize> {
        Some(self.labels.len())
    }

    fn loss_and_grad(&self, params: &[Vec<f64>], batch: Batch<'_>) -> Result<(f64, Vec<Vec<f64>>)> {
        check_params(&self.layers, params)?;
        let idx = batch_indices(batch, self.labels.len())?;
        let sizes = [self.layers[0].param_len(), self.layers[1].param_len()];
        let (sum, mut grads) = self
            .exec
            .sum_contributions(&idx, &sizes, |s| self.sample(&params[0], &params[1], s));
        let scale = 1.0 / idx.len() as f64;
        grads.iter_mut().flatten().for_each(|g| *g *= scale);
        let loss = sum * scale;
        check_finite(loss, &grads)?;
        Ok((loss, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{finite_difference_gradient, max_relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mlp(seed: u64, n: usize) -> (Mlp, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h, k) = (5, 4, 3);
        let inputs = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = (0..n).map(|i| i % k).collect();
        let mlp = Mlp::new(inputs, labels, d, h, k).unwrap();
        let params = vec![
            (0..d * h).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..h * k).map(|_| rng.random_range(-1.0..1.0)).collect(),
        ];
        (mlp, params)
    }

    #[test]
    fn zero_model_gives_uniform_loss() {
        let mlp = Mlp::new(vec![0.0; 6], vec![0, 1], 3, 2, 4).unwrap();
        let loss = mlp.loss(&[vec![0.0; 6], vec![0.0; 8]], Batch::Full).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn single_sample_gradient_check() {
        let (mlp, params) = random_mlp(3, 1);
        let (_, g) = mlp.loss_and_grad(&params, Batch::Full).unwrap();
        let fd = finite_difference_gradient(&mlp, &params, Batch::Full, 1e-5).unwrap();
        assert!(max_relative_error(&g, &fd) < 1e-5);
    }

    #[test]
    fn hidden_permutation_invariance() {
        let (mlp, params) = random_mlp(5, 6);
        let (d, h, k) = (5, 4, 3);
        let (a, b) = (0, 2);
        let mut p = params.clone();
        for j in 0..d {
            p[0].swap(j * h + a, j * h + b);
        }
        for c in 0..k {
            p[1].swap(a * k + c, b * k + c);
        }
        let l0 = mlp.loss(&params, Batch::Full).unwrap();
        let l1 = mlp.loss(&p, Batch::Full).unwrap();
        assert!((l0 - l1).abs() < 1e-14);
    }

    #[test]
    fn batches_and_errors() {
        let (mlp, params) = random_mlp(1, 4);
        let full = mlp.loss(&params, Batch::Full).unwrap();
        let parts: f64 = (0..4).map(|i| mlp.loss(&params, Batch::Indices(&[i])).unwrap()).sum();
        assert!((full - parts / 4.0).abs() < 1e-14);
        assert!(mlp.loss(&params[..1], Batch::Full).is_err());
        let mut bad = params.clone();
        bad[1][0] = f64::NAN;
        assert!(matches!(
            mlp.loss_and_grad(&bad, Batch::Full),
            Err(HarnessError::NonFiniteGradient)
        ));
    }
}
