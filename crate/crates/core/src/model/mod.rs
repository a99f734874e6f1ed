//! Reference masked autoencoder with hand-derived gradients.
//!
//! Visible patches are embedded as `h = tanh(W_e p + b_e + q)`, mean-pooled
//! into a context `c`, and every masked position `m` is reconstructed as
//! `W_d [c; q_m] + b_d`, where `q` is a fixed sinusoidal position code.

mod optim;
mod probe;

pub use optim::{lr_schedule, sgd_step, AdamState, OptimizerConfig, OptimizerKind};
pub use probe::{probe_loss_and_grad, LinearProbe, ProbeOutput};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{patchify, Image, PatchGrid};
use crate::rng::Rng;
use crate::tgm::MaskPartition;

/// Pixels enter the model scaled to `[0, 1]`.
pub const PIXEL_SCALE: f64 = 1.0 / 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Pixels per patch `N`.
    pub patch_dim: usize,
    pub embed_dim: usize,
    /// Patches per image `L`.
    pub patches: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("model.patch_dim", self.patch_dim),
            ("model.embed_dim", self.embed_dim),
            ("model.patches", self.patches),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout {
            n: self.patch_dim,
            e: self.embed_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().len()
    }
}

/// Offsets of the four blocks inside a flat parameter vector:
/// `[W_e (E x N) | b_e (E) | W_d (N x 2E) | b_d (N)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    n: usize,
    e: usize,
}

impl Layout {
    pub fn w_enc(&self) -> std::ops::Range<usize> {
        0..self.e * self.n
    }

    pub fn b_enc(&self) -> std::ops::Range<usize> {
        let s = self.e * self.n;
        s..s + self.e
    }

    pub fn w_dec(&self) -> std::ops::Range<usize> {
        let s = self.e * self.n + self.e;
        s..s + self.n * 2 * self.e
    }

    pub fn b_dec(&self) -> std::ops::Range<usize> {
        let s = self.e * self.n + self.e + self.n * 2 * self.e;
        s..s + self.n
    }

    pub fn len(&self) -> usize {
        self.b_dec().end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Length of the encoder prefix (`W_e`, `b_e`).
    pub fn encoder_len(&self) -> usize {
        self.b_enc().end
    }
}

/// Flat model parameters; the unit exchanged between clients and server.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn max_abs_diff(&self, other: &ParameterVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Uniform weights in `[-1/sqrt(N), 1/sqrt(N)]`, zero biases.
pub fn init_params(cfg: &ModelConfig) -> Result<ParameterVector> {
    cfg.validate()?;
    let layout = cfg.layout();
    let bound = 1.0 / (cfg.patch_dim as f64).sqrt();
    let mut rng = Rng::derive(cfg.seed, &[0x1417]);
    let mut p = vec![0.0; layout.len()];
    for range in [layout.w_enc(), layout.w_dec()] {
        for v in &mut p[range] {
            *v = rng.uniform_range(-bound, bound);
        }
    }
    Ok(ParameterVector(p))
}

/// Sinusoidal position codes: even dims `sin(l w_i)`, odd dims `cos(l w_i)`,
/// `w_i = 10000^(-2i/E)`.
pub fn positional_embedding(index: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|d| {
            let i = (d / 2) as f64;
            let angle = index as f64 / 10000f64.powf(2.0 * i / dim as f64);
            if d % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// One pre-training example: the (possibly corrupted) input patches, the
/// clean reconstruction target, and the masked/visible split. Pixel values
/// are on the `[0, 255]` scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: PatchGrid,
    pub target: PatchGrid,
    pub partition: MaskPartition,
}

impl Sample {
    /// A sample whose reconstruction target is its own input.
    pub fn uncorrupted(grid: PatchGrid, partition: MaskPartition) -> Self {
        Self {
            input: grid.clone(),
            target: grid,
            partition,
        }
    }
}

/// Result of [`MaskedAutoencoder::loss_and_grad`].
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: ParameterVector,
}

/// The model: a configuration plus its cached position codes. Parameters
/// live outside so that snapshots can be exchanged freely.
#[derive(Debug, Clone)]
pub struct MaskedAutoencoder {
    cfg: ModelConfig,
    layout: Layout,
    pos: Vec<Vec<f64>>,
}

struct Encoded {
    context: Vec<f64>,
    /// `1 - h^2` per visible patch, needed by the backward pass.
    tanh_grad: Vec<Vec<f64>>,
}

impl MaskedAutoencoder {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let pos = (0..cfg.patches)
            .map(|l| positional_embedding(l, cfg.embed_dim))
            .collect();
        Ok(Self {
            cfg,
            layout: cfg.layout(),
            pos,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    fn check_params(&self, params: &ParameterVector) -> Result<()> {
        if params.len() != self.layout.len() {
            return Err(Error::ShapeMismatch {
                expected: self.layout.len(),
                actual: params.len(),
            });
        }
        Ok(())
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.cfg.patches {
            return Err(Error::config("patch index", format!("{index} >= L = {}", self.cfg.patches)));
        }
        Ok(())
    }

    fn encode<'a>(
        &self,
        params: &[f64],
        visible: impl ExactSizeIterator<Item = (usize, &'a [f64])>,
        scale: f64,
    ) -> Result<Encoded> {
        let (n, e) = (self.cfg.patch_dim, self.cfg.embed_dim);
        let count = visible.len();
        if count == 0 {
            return Err(Error::EmptyVisibleSet);
        }
        let w = &params[self.layout.w_enc()];
        let b = &params[self.layout.b_enc()];
        let mut context = vec![0.0; e];
        let mut tanh_grad = Vec::with_capacity(count);
        for (index, patch) in visible {
            self.check_index(index)?;
            if patch.len() != n {
                return Err(Error::ShapeMismatch {
                    expected: n,
                    actual: patch.len(),
                });
            }
            let q = &self.pos[index];
            let mut tg = Vec::with_capacity(e);
            for k in 0..e {
                let row = &w[k * n..(k + 1) * n];
                let z: f64 = row.iter().zip(patch).map(|(a, x)| a * x).sum::<f64>() * scale + b[k] + q[k];
                let h = z.tanh();
                context[k] += h;
                tg.push(1.0 - h * h);
            }
            tanh_grad.push(tg);
        }
        let inv = 1.0 / count as f64;
        context.iter_mut().for_each(|c| *c *= inv);
        Ok(Encoded { context, tanh_grad })
    }

    fn decode_into(&self, params: &[f64], context: &[f64], index: usize, out: &mut [f64]) {
        let (n, e) = (self.cfg.patch_dim, self.cfg.embed_dim);
        let w = &params[self.layout.w_dec()];
        let b = &params[self.layout.b_dec()];
        let q = &self.pos[index];
        for (j, o) in out.iter_mut().enumerate().take(n) {
            let row = &w[j * 2 * e..(j + 1) * 2 * e];
            let mut s = b[j];
            s += row[..e].iter().zip(context).map(|(a, c)| a * c).sum::<f64>();
            s += row[e..].iter().zip(q).map(|(a, c)| a * c).sum::<f64>();
            *o = s;
        }
    }

    /// Predicts the masked patches from the visible ones. `visible` pairs a
    /// patch index with its pixel vector in model units (`[0, 1]`).
    /// Predictions are returned in the order of `masked`.
    pub fn forward(
        &self,
        params: &ParameterVector,
        visible: &[(usize, &[f64])],
        masked: &[usize],
    ) -> Result<Vec<Vec<f64>>> {
        self.check_params(params)?;
        for &m in masked {
            self.check_index(m)?;
        }
        let enc = self.encode(&params.0, visible.iter().copied(), 1.0)?;
        Ok(masked
            .iter()
            .map(|&m| {
                let mut out = vec![0.0; self.cfg.patch_dim];
                self.decode_into(&params.0, &enc.context, m, &mut out);
                out
            })
            .collect())
    }

    fn check_sample(&self, sample: &Sample) -> Result<()> {
        for grid in [&sample.input, &sample.target] {
            if grid.len() != self.cfg.patches || grid.patch_dim() != self.cfg.patch_dim {
                return Err(Error::ShapeMismatch {
                    expected: self.cfg.patches * self.cfg.patch_dim,
                    actual: grid.len() * grid.patch_dim(),
                });
            }
        }
        if sample.partition.total() != self.cfg.patches {
            return Err(Error::ShapeMismatch {
                expected: self.cfg.patches,
                actual: sample.partition.total(),
            });
        }
        Ok(())
    }

    /// Masked-patch MSE only, without the backward pass.
    pub fn loss(&self, params: &ParameterVector, sample: &Sample) -> Result<f64> {
        self.check_params(params)?;
        self.check_sample(sample)?;
        self.loss_from_slice(&params.0, sample)
    }

    fn loss_from_slice(&self, params: &[f64], sample: &Sample) -> Result<f64> {
        let n = self.cfg.patch_dim;
        let visible = sample.partition.visible();
        let masked = sample.partition.masked();
        let enc = self.encode(params, visible.iter().map(|&i| (i, sample.input.patch(i))), PIXEL_SCALE)?;
        let mut pred = vec![0.0; n];
        let mut total = 0.0;
        for &m in masked {
            self.decode_into(params, &enc.context, m, &mut pred);
            let target = sample.target.patch(m);
            total += pred
                .iter()
                .zip(target)
                .map(|(p, t)| (t * PIXEL_SCALE - p).powi(2))
                .sum::<f64>()
                / n as f64;
        }
        Ok(if masked.is_empty() { 0.0 } else { total / masked.len() as f64 })
    }

    /// Loss `(1/N_m) sum_m (1/N) ||x_m - x̂_m||^2` and its exact gradient.
    pub fn loss_and_grad(&self, params: &ParameterVector, sample: &Sample) -> Result<LossGrad> {
        let mut grad = ParameterVector::zeros(self.layout.len());
        let loss = self.accumulate_grad(params, sample, 1.0, &mut grad.0)?;
        Ok(LossGrad { loss, grad })
    }

    /// Adds `weight * d loss / d params` into `grad` and returns the loss.
    pub fn accumulate_grad(
        &self,
        params: &ParameterVector,
        sample: &Sample,
        weight: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        self.check_params(params)?;
        self.check_sample(sample)?;
        if grad.len() != self.layout.len() {
            return Err(Error::ShapeMismatch {
                expected: self.layout.len(),
                actual: grad.len(),
            });
        }
        let (n, e) = (self.cfg.patch_dim, self.cfg.embed_dim);
        let p = &params.0;
        let visible = sample.partition.visible();
        let masked = sample.partition.masked();
        let enc = self.encode(p, visible.iter().map(|&i| (i, sample.input.patch(i))), PIXEL_SCALE)?;
        if masked.is_empty() {
            return Ok(0.0);
        }

        let coef = 2.0 / (masked.len() * n) as f64;
        let w_dec = &p[self.layout.w_dec()];
        let mut pred = vec![0.0; n];
        let mut d_context = vec![0.0; e];
        let mut loss = 0.0;
        {
            let (gw_dec, gb_dec) = grad[self.layout.w_dec().start..].split_at_mut(n * 2 * e);
            for &m in masked {
                self.decode_into(p, &enc.context, m, &mut pred);
                let target = sample.target.patch(m);
                let q = &self.pos[m];
                for j in 0..n {
                    let r = pred[j] - target[j] * PIXEL_SCALE;
                    loss += r * r;
                    let g = coef * r * weight;
                    gb_dec[j] += g;
                    let row = &mut gw_dec[j * 2 * e..(j + 1) * 2 * e];
                    let wrow = &w_dec[j * 2 * e..j * 2 * e + e];
                    for k in 0..e {
                        row[k] += g * enc.context[k];
                        row[e + k] += g * q[k];
                        d_context[k] += g * wrow[k];
                    }
                }
            }
        }
        loss /= (masked.len() * n) as f64;

        let inv = 1.0 / visible.len() as f64;
        let (gw_enc, rest) = grad.split_at_mut(self.layout.b_enc().start);
        let gb_enc = &mut rest[..e];
        for (&i, tg) in visible.iter().zip(&enc.tanh_grad) {
            let patch = sample.input.patch(i);
            for k in 0..e {
                let dz = d_context[k] * inv * tg[k];
                gb_enc[k] += dz;
                let dzs = dz * PIXEL_SCALE;
                let row = &mut gw_enc[k * n..(k + 1) * n];
                for (g, x) in row.iter_mut().zip(patch) {
                    *g += dzs * x;
                }
            }
        }
        Ok(loss)
    }

    /// Mean loss and gradient over `samples`, summed in index order.
    pub fn batch_loss_and_grad(&self, params: &ParameterVector, samples: &[Sample]) -> Result<LossGrad> {
        if samples.is_empty() {
            return Err(Error::Empty);
        }
        let w = 1.0 / samples.len() as f64;
        let mut grad = ParameterVector::zeros(self.layout.len());
        let mut loss = 0.0;
        for s in samples {
            loss += self.accumulate_grad(params, s, w, &mut grad.0)?;
        }
        Ok(LossGrad {
            loss: loss * w,
            grad,
        })
    }

    pub fn batch_loss(&self, params: &ParameterVector, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Empty);
        }
        let mut total = 0.0;
        for s in samples {
            total += self.loss(params, s)?;
        }
        Ok(total / samples.len() as f64)
    }

    /// Context vector with every patch visible; the frozen-encoder feature.
    pub fn encode_features(&self, params: &ParameterVector, grid: &PatchGrid) -> Result<Vec<f64>> {
        self.check_params(params)?;
        if grid.len() != self.cfg.patches || grid.patch_dim() != self.cfg.patch_dim {
            return Err(Error::ShapeMismatch {
                expected: self.cfg.patches * self.cfg.patch_dim,
                actual: grid.len() * grid.patch_dim(),
            });
        }
        let enc = self.encode(
            &params.0,
            grid.patches().iter().enumerate().map(|(i, p)| (i, p.as_slice())),
            PIXEL_SCALE,
        )?;
        Ok(enc.context)
    }

    pub fn encode_image(
        &self,
        params: &ParameterVector,
        img: &Image,
        patch_h: usize,
        patch_w: usize,
    ) -> Result<Vec<f64>> {
        self.encode_features(params, &patchify(img, patch_h, patch_w)?)
    }
}

/// Central-difference gradient of `f` at `at`.
pub fn finite_diff_grad(f: impl Fn(&[f64]) -> f64, at: &[f64], eps: f64) -> Result<Vec<f64>> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::config("eps", "finite-difference step must be > 0"));
    }
    let mut x = at.to_vec();
    let mut g = Vec::with_capacity(at.len());
    for i in 0..at.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let up = f(&x);
        x[i] = orig - eps;
        let down = f(&x);
        x[i] = orig;
        g.push((up - down) / (2.0 * eps));
    }
    Ok(g)
}

/// Finite-difference gradient of the masked-patch loss for one sample.
pub fn model_finite_diff_grad(
    model: &MaskedAutoencoder,
    params: &ParameterVector,
    sample: &Sample,
    eps: f64,
) -> Result<ParameterVector> {
    model.check_params(params)?;
    model.check_sample(sample)?;
    let g = finite_diff_grad(
        |p| model.loss_from_slice(p, sample).unwrap_or(f64::NAN),
        &params.0,
        eps,
    )?;
    Ok(ParameterVector(g))
}

/// Denominator floor for [`gradient_rel_error`]. Central differences at
/// `eps = 1e-6` carry roughly `1e-10` of absolute round-off, so components
/// below this floor are compared absolutely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-2;

/// `|a - b| / max(|a|, |b|, GRAD_CHECK_FLOOR)`.
pub fn gradient_rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / GRAD_CHECK_FLOOR.max(a.abs()).max(b.abs())
}

#[cfg(test)]
mod tests;
