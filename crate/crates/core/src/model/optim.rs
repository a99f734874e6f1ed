use serde::{Deserialize, Serialize};

use super::ParameterVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain gradient descent, `w <- w - eta * g`.
    Gd,
    /// Adam with bias correction; moments live for one local update.
    Adam,
}

/// Linear warmup from 0 to `eta_max`, then cosine annealing to `eta_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub eta_max: f64,
    pub eta_min: f64,
    pub warmup_rounds: usize,
    pub total_rounds: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            eta_max: 5e-4,
            eta_min: 1e-6,
            warmup_rounds: 10,
            total_rounds: 600,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_min >= 0.0 && self.eta_min <= self.eta_max && self.eta_max.is_finite()) {
            return Err(Error::config("optimizer.eta", "need 0 <= eta_min <= eta_max"));
        }
        if self.warmup_rounds > self.total_rounds {
            return Err(Error::config("optimizer.warmup_rounds", "exceeds total_rounds"));
        }
        Ok(())
    }
}

pub fn lr_schedule(t: usize, opt: &OptimizerConfig) -> f64 {
    if t < opt.warmup_rounds {
        return opt.eta_max * t as f64 / opt.warmup_rounds as f64;
    }
    let span = opt.total_rounds.saturating_sub(opt.warmup_rounds);
    if span == 0 {
        return opt.eta_max;
    }
    let progress = ((t - opt.warmup_rounds) as f64 / span as f64).min(1.0);
    opt.eta_min + 0.5 * (opt.eta_max - opt.eta_min) * (1.0 + (std::f64::consts::PI * progress).cos())
}

pub fn sgd_step(params: &ParameterVector, grad: &ParameterVector, eta: f64) -> Result<ParameterVector> {
    if params.len() != grad.len() {
        return Err(Error::ShapeMismatch {
            expected: params.len(),
            actual: grad.len(),
        });
    }
    Ok(ParameterVector(
        params.0.iter().zip(&grad.0).map(|(w, g)| w - eta * g).collect(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u32,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], eta: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                expected: self.m.len(),
                actual: grad.len(),
            });
        }
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step as i32);
        let c2 = 1.0 - Self::BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= eta * m_hat / (v_hat.sqrt() + Self::EPS);
        }
        Ok(())
    }
}
