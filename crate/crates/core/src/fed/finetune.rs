//! Fine-tuning stage: a linear probe trained on frozen encoder features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{lr_schedule, probe_loss_and_grad, AdamState, LinearProbe, OptimizerConfig, OptimizerKind};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub eta_max: f64,
    pub eta_min: f64,
    pub warmup_epochs: usize,
    /// Share of the labeled set held out for model selection.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            eta_max: 0.05,
            eta_min: 1e-4,
            warmup_epochs: 10,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    fn schedule(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            eta_max: self.eta_max,
            eta_min: self.eta_min,
            warmup_rounds: self.warmup_epochs.min(self.epochs),
            total_rounds: self.epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("finetune.val_fraction", "must lie in [0, 1)"));
        }
        self.schedule().validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneResult {
    /// Operates on raw features; standardization is folded into the weights.
    pub probe: LinearProbe,
    /// 0 means the initial (all-zero) probe was kept.
    pub best_epoch: usize,
    pub val_accuracy: Option<f64>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Full-batch Adam on softmax cross-entropy over z-scored features. The
/// probe with the best validation accuracy is kept, ties going to the lower
/// validation loss.
pub fn train_probe(features: &[Vec<f64>], labels: &[usize], classes: usize, cfg: &FinetuneConfig) -> Result<FinetuneResult> {
    cfg.validate()?;
    if features.len() != labels.len() {
        return Err(Error::LengthMismatch(features.len(), labels.len()));
    }
    let dim = features.first().ok_or(Error::Empty)?.len();
    if let Some(f) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::ShapeMismatch {
            expected: dim,
            actual: f.len(),
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::BadLabel { label: l, classes });
    }

    let mut order: Vec<usize> = (0..features.len()).collect();
    Rng::derive(cfg.seed, &[0xF1E7]).shuffle(&mut order);
    let n_val = (cfg.val_fraction * features.len() as f64).round() as usize;
    let (val_idx, train_idx) = order.split_at(n_val.min(features.len() - 1));
    let (mut train_indices, mut val_indices) = (train_idx.to_vec(), val_idx.to_vec());
    train_indices.sort_unstable();
    val_indices.sort_unstable();

    let n = train_indices.len() as f64;
    let mean: Vec<f64> = (0..dim)
        .map(|j| train_indices.iter().map(|&i| features[i][j]).sum::<f64>() / n)
        .collect();
    let scale: Vec<f64> = (0..dim)
        .map(|j| {
            let var = train_indices.iter().map(|&i| (features[i][j] - mean[j]).powi(2)).sum::<f64>() / n;
            if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 }
        })
        .collect();
    let z: Vec<Vec<f64>> = features
        .iter()
        .map(|f| f.iter().zip(&mean).zip(&scale).map(|((x, m), s)| (x - m) * s).collect())
        .collect();

    let evaluate = |probe: &LinearProbe| -> Result<(f64, f64)> {
        let mut correct = 0usize;
        let mut loss = 0.0;
        for &i in &val_indices {
            let out = probe_loss_and_grad(probe, &z[i], labels[i])?;
            loss += out.loss;
            correct += usize::from(probe.predict(&z[i]) == labels[i]);
        }
        Ok((correct as f64, loss))
    };

    let mut probe = LinearProbe::zeros(classes, dim);
    let mut best = (probe.clone(), 0usize, evaluate(&probe)?);
    let mut adam = AdamState::new(probe.params.len());
    let schedule = cfg.schedule();
    for epoch in 0..cfg.epochs {
        let mut grad = vec![0.0; probe.params.len()];
        for &i in &train_indices {
            let out = probe_loss_and_grad(&probe, &z[i], labels[i])?;
            for (g, d) in grad.iter_mut().zip(&out.grad) {
                *g += d / n;
            }
        }
        adam.step(&mut probe.params, &grad, lr_schedule(epoch, &schedule))?;
        if !val_indices.is_empty() {
            let score = evaluate(&probe)?;
            let (acc, loss) = best.2;
            if score.0 > acc || (score.0 == acc && score.1 < loss) {
                best = (probe.clone(), epoch + 1, score);
            }
        }
    }
    let (chosen, best_epoch, (correct, _)) = if val_indices.is_empty() {
        (probe, cfg.epochs, (0.0, 0.0))
    } else {
        best
    };

    // Fold the standardization into W and b.
    let mut folded = chosen.clone();
    for c in 0..classes {
        let mut shift = 0.0;
        for j in 0..dim {
            let w = chosen.params[c * dim + j] * scale[j];
            folded.params[c * dim + j] = w;
            shift += w * mean[j];
        }
        folded.params[classes * dim + c] -= shift;
    }
    Ok(FinetuneResult {
        probe: folded,
        best_epoch,
        val_accuracy: (!val_indices.is_empty()).then(|| correct / val_indices.len() as f64),
        train_indices,
        val_indices,
    })
}
