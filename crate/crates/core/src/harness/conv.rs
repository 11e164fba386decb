use crate::ensemble::{KernelCoord, LayerShape};
use crate::exec::Execution;

use super::dataset::SyntheticDataset;
use super::mlp::argmax;
use super::{
    batch_indices, check_finite, check_params, softmax_cross_entropy, Batch, HarnessError,
    Objective, Result,
};

/// One convolution layer followed by ReLU, global average pooling and a
/// linear classifier, trained with softmax cross-entropy.
///
/// Output map `d` is `Σ_c W_{c,d} ⋆ X_c` (valid cross-correlation, stride 1).
/// Layer 1 holds the `C×D` kernel bank in [`LayerShape::kernel_offset`]
/// order; layer 2 is the `D×K` classifier. No biases.
#[derive(Debug, Clone)]
pub struct ConvNet {
    data: SyntheticDataset,
    layers: [LayerShape; 2],
    out_h: usize,
    out_w: usize,
    exec: Execution,
}

impl ConvNet {
    pub fn new(data: SyntheticDataset, kernel_size: usize, out_channels: usize) -> Result<Self> {
        let s = data.shape;
        if kernel_size == 0 || kernel_size > s.height || kernel_size > s.width || out_channels == 0 {
            return Err(HarnessError::InvalidInput(format!(
                "kernel {kernel_size} with {out_channels} outputs does not fit {}x{} images",
                s.height, s.width
            )));
        }
        if data.is_empty() {
            return Err(HarnessError::InvalidInput("empty dataset".into()));
        }
        Ok(Self {
            layers: [
                LayerShape {
                    layer: 1,
                    kernel_rows: kernel_size,
                    kernel_cols: kernel_size,
                    in_channels: s.channels,
                    out_channels,
                },
                LayerShape {
                    layer: 2,
                    kernel_rows: out_channels,
                    kernel_cols: data.classes,
                    in_channels: 1,
                    out_channels: 1,
                },
            ],
            out_h: s.height - kernel_size + 1,
            out_w: s.width - kernel_size + 1,
            data,
            exec: Execution::default(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn dataset(&self) -> &SyntheticDataset {
        &self.data
    }

    /// Pre-activations of every output map, `D × out_h × out_w`.
    fn preactivations(&self, kernels: &[f64], x: &[f64]) -> Vec<f64> {
        let shape = &self.layers[0];
        let (a, b) = (shape.kernel_rows, shape.kernel_cols);
        let (h, w) = (self.data.shape.height, self.data.shape.width);
        let (oh, ow) = (self.out_h, self.out_w);
        let mut y = vec![0.0; shape.out_channels * oh * ow];
        for d in 1..=shape.out_channels {
            let out = &mut y[(d - 1) * oh * ow..d * oh * ow];
            for c in 1..=shape.in_channels {
                let k = &kernels[shape.kernel_offset(KernelCoord { c, d })..][..a * b];
                let xc = &x[(c - 1) * h * w..c * h * w];
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = 0.0;
                        for r in 0..a {
                            let row = &xc[(i + r) * w + j..][..b];
                            acc += k[r * b..(r + 1) * b]
                                .iter()
                                .zip(row)
                                .map(|(p, q)| p * q)
                                .sum::<f64>();
                        }
                        out[i * ow + j] += acc;
                    }
                }
            }
        }
        y
    }

    /// Pooled features `f_d = mean(ReLU(Y_d))`.
    pub fn features(&self, kernels: &[f64], x: &[f64]) -> Vec<f64> {
        let area = self.out_h * self.out_w;
        self.preactivations(kernels, x)
            .chunks(area)
            .map(|m| m.iter().map(|v| v.max(0.0)).sum::<f64>() / area as f64)
            .collect()
    }

    fn logits(&self, classifier: &[f64], f: &[f64]) -> Vec<f64> {
        let k = self.data.classes;
        (0..k)
            .map(|c| f.iter().enumerate().map(|(d, fd)| fd * classifier[d * k + c]).sum())
            .collect()
    }

    fn sample(&self, params: &[Vec<f64>], s: usize) -> (f64, Vec<Vec<f64>>) {
        let shape = &self.layers[0];
        let (a, b) = (shape.kernel_rows, shape.kernel_cols);
        let (h, w) = (self.data.shape.height, self.data.shape.width);
        let (oh, ow) = (self.out_h, self.out_w);
        let area = (oh * ow) as f64;
        let k = self.data.classes;
        let x = self.data.image(s);
        let y = self.preactivations(&params[0], x);
        let f: Vec<f64> = y
            .chunks(oh * ow)
            .map(|m| m.iter().map(|v| v.max(0.0)).sum::<f64>() / area)
            .collect();
        let logits = self.logits(&params[1], &f);
        let mut dl = vec![0.0; k];
        let loss = softmax_cross_entropy(&logits, self.data.label(s), &mut dl);

        let dmaps = shape.out_channels;
        let mut gv = vec![0.0; dmaps * k];
        let mut df = vec![0.0; dmaps];
        for d in 0..dmaps {
            for c in 0..k {
                gv[d * k + c] = f[d] * dl[c];
                df[d] += params[1][d * k + c] * dl[c];
            }
        }
        let mut gw = vec![0.0; shape.param_len()];
        for d in 1..=dmaps {
            let yd = &y[(d - 1) * oh * ow..d * oh * ow];
            let scale = df[d - 1] / area;
            for c in 1..=shape.in_channels {
                let o = shape.kernel_offset(KernelCoord { c, d });
                let xc = &x[(c - 1) * h * w..c * h * w];
                for i in 0..oh {
                    for j in 0..ow {
                        if yd[i * ow + j] <= 0.0 {
                            continue;
                        }
                        for r in 0..a {
                            for q in 0..b {
                                gw[o + r * b + q] += scale * xc[(i + r) * w + j + q];
                            }
                        }
                    }
                }
            }
        }
        (loss, vec![gw, gv])
    }

    /// Smallest `|pre-activation|` over the batch; ReLU is not differentiable
    /// at zero, so finite-difference checks need this to stay away from it.
    pub fn min_abs_preactivation(&self, kernels: &[f64], batch: Batch<'_>) -> Result<f64> {
        let idx = batch_indices(batch, self.data.len())?;
        Ok(idx
            .iter()
            .flat_map(|&s| self.preactivations(kernels, self.data.image(s)))
            .map(f64::abs)
            .fold(f64::INFINITY, f64::min))
    }

    pub fn accuracy(&self, params: &[Vec<f64>]) -> Result<f64> {
        check_params(&self.layers, params)?;
        let n = self.data.len();
        let idx: Vec<usize> = (0..n).collect();
        let hits = self.exec.map(&idx, |&s| {
            let f = self.features(&params[0], self.data.image(s));
            argmax(&self.logits(&params[1], &f)) == self.data.label(s)
        });
        Ok(hits.iter().filter(|&&h| h).count() as f64 / n as f64)
    }
}

impl Objective for ConvNet {
    fn name(&self) -> &str {
        "conv"
    }

    fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    fn num_samples(&self) -> Option<usize> {
        Some(self.data.len())
    }

    fn loss_and_grad(&self, params: &[Vec<f64>], batch: Batch<'_>) -> Result<(f64, Vec<Vec<f64>>)> {
        check_params(&self.layers, params)?;
        let idx = batch_indices(batch, self.data.len())?;
        let sizes = [self.layers[0].param_len(), self.layers[1].param_len()];
        let (sum, mut grads) = self.exec.sum_contributions(&idx, &sizes, |s| self.sample(params, s));
        let scale = 1.0 / idx.len() as f64;
        grads.iter_mut().flatten().for_each(|g| *g *= scale);
        let loss = sum * scale;
        check_finite(loss, &grads)?;
        Ok((loss, grads))
    }
}
