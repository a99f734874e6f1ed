//! Linear + softmax classification head over frozen encoder features.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub classes: usize,
    pub dim: usize,
    /// `[W_c (C x E) | b_c (C)]`.
    pub params: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ProbeOutput {
    pub loss: f64,
    pub probs: Vec<f64>,
    pub grad: Vec<f64>,
}

impl LinearProbe {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            params: vec![0.0; classes * dim + classes],
        }
    }

    pub fn logits(&self, feature: &[f64]) -> Vec<f64> {
        let (w, b) = self.params.split_at(self.classes * self.dim);
        (0..self.classes)
            .map(|c| b[c] + w[c * self.dim..(c + 1) * self.dim].iter().zip(feature).map(|(a, x)| a * x).sum::<f64>())
            .collect()
    }

    pub fn probabilities(&self, feature: &[f64]) -> Vec<f64> {
        softmax(&self.logits(feature))
    }

    pub fn predict(&self, feature: &[f64]) -> usize {
        let p = self.probabilities(feature);
        (0..p.len()).fold(0, |best, c| if p[c] > p[best] { c } else { best })
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax cross-entropy and its gradient w.r.t. the probe parameters.
pub fn probe_loss_and_grad(probe: &LinearProbe, feature: &[f64], label: usize) -> Result<ProbeOutput> {
    if label >= probe.classes {
        return Err(Error::BadLabel {
            label,
            classes: probe.classes,
        });
    }
    if feature.len() != probe.dim {
        return Err(Error::ShapeMismatch {
            expected: probe.dim,
            actual: feature.len(),
        });
    }
    let logits = probe.logits(feature);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_total = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    let loss = log_total - logits[label];
    let probs = softmax(&logits);
    let mut grad = vec![0.0; probe.params.len()];
    let (gw, gb) = grad.split_at_mut(probe.classes * probe.dim);
    for c in 0..probe.classes {
        let d = probs[c] - if c == label { 1.0 } else { 0.0 };
        gb[c] = d;
        for (g, x) in gw[c * probe.dim..(c + 1) * probe.dim].iter_mut().zip(feature) {
            *g = d * x;
        }
    }
    Ok(ProbeOutput { loss, probs, grad })
}
