//! Federated pre-training: broadcast, local gradient steps, sample-weighted
//! aggregation.

mod checkpoint;
mod finetune;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest};
pub use finetune::{train_probe, FinetuneConfig, FinetuneResult};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrupt::CorruptionConfig;
use crate::error::{Error, Result};
use crate::imgcore::{patchify, Image};
use crate::model::{lr_schedule, AdamState, MaskedAutoencoder, OptimizerConfig, OptimizerKind, ParameterVector, Sample};
use crate::rng::Rng;
use crate::smat::{balance_dataset, ScanGeometry, ScanMode};
use crate::tgm::apply_uim;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    /// Client count `K`.
    pub clients: usize,
    /// Communication rounds `T`.
    pub rounds: usize,
    /// Full-batch gradient steps per client per round `E`.
    pub local_steps: usize,
    /// Learning-rate schedule; `total_rounds` is taken from `rounds`.
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    #[serde(default)]
    pub parallel_clients: bool,
    /// Redraw corruption and masks every round instead of once at setup.
    #[serde(default)]
    pub resample_each_round: bool,
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("federation.clients", self.clients),
            ("federation.rounds", self.rounds),
            ("federation.local_steps", self.local_steps),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be >= 1"));
            }
        }
        self.schedule().validate()
    }

    /// The optimizer schedule stretched over `rounds`; warmup is capped at
    /// the run length so short runs stay valid.
    pub fn schedule(&self) -> OptimizerConfig {
        OptimizerConfig {
            total_rounds: self.rounds,
            warmup_rounds: self.optimizer.warmup_rounds.min(self.rounds),
            ..self.optimizer
        }
    }
}

/// How raw images become training samples on a client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UimConfig {
    pub patch_h: usize,
    pub patch_w: usize,
    pub mask_ratio: f64,
    pub corruption: CorruptionConfig,
    /// Geometry for scan-mode balancing; `None` skips balancing.
    pub balance: Option<ScanGeometry>,
}

impl UimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_h == 0 || self.patch_w == 0 {
            return Err(Error::config("uim.patch", "patch size must be >= 1"));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::config("uim.mask_ratio", "must lie in (0, 1)"));
        }
        self.corruption.validate()?;
        if let Some(g) = &self.balance {
            g.validate()?;
        }
        Ok(())
    }
}

/// Turns one clean image into a training sample: corrupt, then mask by the
/// corrupted texture. The target stays the clean image.
pub fn prepare_sample(img: &Image, uim: &UimConfig, rng: &mut Rng) -> Result<Sample> {
    let (input, partition) = apply_uim(img, &uim.corruption, uim.patch_h, uim.patch_w, uim.mask_ratio, rng)?;
    Ok(Sample {
        input,
        target: patchify(img, uim.patch_h, uim.patch_w)?,
        partition,
    })
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    /// Clean images after scan-mode balancing.
    pub images: Vec<Image>,
    pub samples: Vec<Sample>,
}

impl ClientState {
    /// Builds a client from its raw images. Sample `i` is prepared with a
    /// stream derived from `(seed, id, i)`.
    pub fn new(id: usize, raw: &[(Image, ScanMode)], uim: &UimConfig, seed: u64) -> Result<Self> {
        uim.validate()?;
        let images: Vec<Image> = match &uim.balance {
            Some(geom) => balance_dataset(raw, geom)?.into_iter().map(|(i, _)| i).collect(),
            None => raw.iter().map(|(i, _)| i.clone()).collect(),
        };
        if images.is_empty() {
            return Err(Error::TooFewSamples { needed: 1, actual: 0 });
        }
        let samples = images
            .iter()
            .enumerate()
            .map(|(i, img)| prepare_sample(img, uim, &mut Rng::derive(seed, &[id as u64, i as u64])))
            .collect::<Result<_>>()?;
        Ok(Self { id, images, samples })
    }

    /// A client over ready-made samples.
    pub fn from_samples(id: usize, samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::TooFewSamples { needed: 1, actual: 0 });
        }
        Ok(Self {
            id,
            images: Vec::new(),
            samples,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    fn resampled(&self, uim: &UimConfig, seed: u64, round: usize) -> Result<Vec<Sample>> {
        self.images
            .iter()
            .enumerate()
            .map(|(i, img)| {
                prepare_sample(img, uim, &mut Rng::derive(seed, &[self.id as u64, i as u64, round as u64 + 1]))
            })
            .collect()
    }
}

/// `E` full-batch steps on the client's mean loss, starting from `global`.
pub fn local_update(
    model: &MaskedAutoencoder,
    global: &ParameterVector,
    samples: &[Sample],
    steps: usize,
    eta: f64,
    kind: OptimizerKind,
) -> Result<ParameterVector> {
    let mut params = global.clone();
    let mut adam = AdamState::new(params.len());
    for _ in 0..steps {
        let lg = model.batch_loss_and_grad(&params, samples)?;
        if !lg.loss.is_finite() {
            return Err(Error::NonFinite(format!("local loss {}", lg.loss)));
        }
        match kind {
            OptimizerKind::Gd => {
                for (w, g) in params.0.iter_mut().zip(&lg.grad.0) {
                    *w -= eta * g;
                }
            }
            OptimizerKind::Adam => adam.step(&mut params.0, &lg.grad.0, eta)?,
        }
    }
    Ok(params)
}

/// Aggregation weights `n_k / n`.
pub fn aggregation_weights(counts: &[usize]) -> Result<Vec<f64>> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(Error::TooFewSamples { needed: 1, actual: 0 });
    }
    Ok(counts.iter().map(|&k| k as f64 / n as f64).collect())
}

/// Sample-count weighted mean `sum_k (n_k / n) w_k`, accumulated in slice order.
pub fn aggregate(locals: &[(ParameterVector, usize)]) -> Result<ParameterVector> {
    let first = locals.first().ok_or(Error::Empty)?;
    let len = first.0.len();
    let counts: Vec<usize> = locals.iter().map(|(_, n)| *n).collect();
    let weights = aggregation_weights(&counts)?;
    let mut out = vec![0.0; len];
    for ((params, _), &w) in locals.iter().zip(&weights) {
        if params.len() != len {
            return Err(Error::ShapeMismatch {
                expected: len,
                actual: params.len(),
            });
        }
        for (o, v) in out.iter_mut().zip(&params.0) {
            *o += w * v;
        }
    }
    Ok(ParameterVector(out))
}

/// `(1/n) sum_k n_k L_k(w)`.
pub fn global_loss(model: &MaskedAutoencoder, params: &ParameterVector, clients: &[ClientState]) -> Result<f64> {
    let n: usize = clients.iter().map(ClientState::sample_count).sum();
    if n == 0 {
        return Err(Error::Empty);
    }
    let mut total = 0.0;
    for c in clients {
        total += c.sample_count() as f64 * model.batch_loss(params, &c.samples)?;
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub global_loss: f64,
    /// Learning rate of the round that produced these parameters (0 for the
    /// initial row).
    pub eta: f64,
}

/// Parameters and loss history after some number of rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    pub params: ParameterVector,
    pub round: usize,
    pub trace: Vec<RoundRecord>,
}

pub struct Federation<'a> {
    pub model: &'a MaskedAutoencoder,
    pub config: &'a FederationConfig,
    pub clients: &'a [ClientState],
    /// Needed only when `resample_each_round` is set.
    pub uim: Option<&'a UimConfig>,
}

impl Federation<'_> {
    /// Fresh state at round 0 with the initial global loss recorded.
    pub fn start(&self, init: ParameterVector) -> Result<TrainingState> {
        let loss = global_loss(self.model, &init, self.clients)?;
        Ok(TrainingState {
            params: init,
            round: 0,
            trace: vec![RoundRecord {
                round: 0,
                global_loss: loss,
                eta: 0.0,
            }],
        })
    }

    /// One communication round: broadcast, local updates, aggregation.
    pub fn round(&self, state: &TrainingState) -> Result<TrainingState> {
        let t = state.round;
        let eta = lr_schedule(t, &self.config.schedule());
        let kind = self.config.optimizer.kind;
        let resample = self.config.resample_each_round;
        let update = |c: &ClientState| -> Result<(ParameterVector, usize)> {
            let p = if resample {
                let uim = self.uim.ok_or_else(|| Error::config("uim", "required for per-round resampling"))?;
                let fresh = c.resampled(uim, self.config.seed, t)?;
                local_update(self.model, &state.params, &fresh, self.config.local_steps, eta, kind)?
            } else {
                local_update(self.model, &state.params, &c.samples, self.config.local_steps, eta, kind)?
            };
            Ok((p, c.sample_count()))
        };
        let locals: Vec<(ParameterVector, usize)> = if self.config.parallel_clients {
            self.clients.par_iter().map(update).collect::<Result<_>>()?
        } else {
            self.clients.iter().map(update).collect::<Result<_>>()?
        };
        let params = aggregate(&locals)?;
        let loss = global_loss(self.model, &params, self.clients)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("global loss after round {t}")));
        }
        let mut trace = state.trace.clone();
        trace.push(RoundRecord {
            round: t + 1,
            global_loss: loss,
            eta,
        });
        Ok(TrainingState {
            params,
            round: t + 1,
            trace,
        })
    }

    /// Runs rounds until `config.rounds`, calling `on_round` after each.
    pub fn run_from(
        &self,
        mut state: TrainingState,
        mut on_round: impl FnMut(&TrainingState) -> Result<()>,
    ) -> Result<TrainingState> {
        self.config.validate()?;
        while state.round < self.config.rounds {
            state = self.round(&state)?;
            on_round(&state)?;
        }
        Ok(state)
    }
}

/// Full pre-training from `init`; returns final parameters and the loss
/// trace (initial loss plus one entry per round).
pub fn run_pretraining(
    model: &MaskedAutoencoder,
    config: &FederationConfig,
    clients: &[ClientState],
    uim: Option<&UimConfig>,
    init: ParameterVector,
) -> Result<(ParameterVector, Vec<RoundRecord>)> {
    config.validate()?;
    if clients.is_empty() {
        return Err(Error::Empty);
    }
    let fed = Federation {
        model,
        config,
        clients,
        uim,
    };
    if config.resample_each_round && (uim.is_none() || clients.iter().any(|c| c.images.is_empty())) {
        return Err(Error::config("federation.resample_each_round", "needs a UIM config and clients built from images"));
    }
    let state = fed.start(init)?;
    let state = fed.run_from(state, |_| Ok(()))?;
    Ok((state.params, state.trace))
}

#[cfg(test)]
mod tests;
