//! Run configuration file: UTF-8 JSON, `"version": 1`, unknown keys rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sonofed::corrupt::CorruptionConfig;
use sonofed::fed::{FederationConfig, FinetuneConfig, UimConfig};
use sonofed::model::{ModelConfig, OptimizerConfig};
use sonofed::synth::SynthConfig;
use sonofed::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub generate: GenerateSection,
    pub model: ModelSection,
    pub uim: UimSection,
    pub pretrain: PretrainSection,
    pub finetune: FinetuneSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    pub samples: usize,
    /// Probabilities of (benign, malignant, none).
    pub class_mix: [f64; 3],
    pub phantom: SynthConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub embed_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UimSection {
    pub patch: usize,
    pub mask_ratio: f64,
    pub corruption: CorruptionConfig,
    /// Add the opposite-scan-mode copy of every image.
    pub balance_scan_modes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub clients: usize,
    pub rounds: usize,
    pub local_steps: usize,
    pub dirichlet_alpha: f64,
    pub optimizer: OptimizerConfig,
    pub resample_each_round: bool,
    /// Also save `<name>_rNNNNN` every this many rounds; 0 saves only the
    /// final checkpoint.
    pub checkpoint_every: usize,
    pub checkpoint_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    pub epochs: usize,
    pub eta_max: f64,
    pub eta_min: f64,
    pub warmup_epochs: usize,
    pub val_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            generate: GenerateSection::default(),
            model: ModelSection::default(),
            uim: UimSection::default(),
            pretrain: PretrainSection::default(),
            finetune: FinetuneSection::default(),
        }
    }
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self {
            samples: 512,
            class_mix: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            phantom: SynthConfig {
                width: 64,
                height: 64,
                ..SynthConfig::default()
            },
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { embed_dim: 32 }
    }
}

impl Default for UimSection {
    fn default() -> Self {
        Self {
            patch: 8,
            mask_ratio: 0.75,
            corruption: CorruptionConfig::default(),
            balance_scan_modes: true,
        }
    }
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self {
            clients: 8,
            rounds: 200,
            local_steps: 1,
            dirichlet_alpha: 0.5,
            optimizer: OptimizerConfig::default(),
            resample_each_round: false,
            checkpoint_every: 0,
            checkpoint_name: "checkpoint".into(),
        }
    }
}

impl Default for FinetuneSection {
    fn default() -> Self {
        let d = FinetuneConfig::default();
        Self {
            epochs: d.epochs,
            eta_max: d.eta_max,
            eta_min: d.eta_min,
            warmup_epochs: d.warmup_epochs,
            val_fraction: d.val_fraction,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| invalid("config", e.to_string()))?;
        if value.get("version").is_none() {
            return Err(invalid("version", "missing; expected \"version\": 1"));
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| invalid("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(invalid("version", format!("unsupported version {}", self.version)));
        }
        let g = &self.generate;
        if g.phantom.width == 0 || g.phantom.height == 0 {
            return Err(invalid("generate.phantom", "image size must be >= 1"));
        }
        if self.uim.patch == 0 || !g.phantom.width.is_multiple_of(self.uim.patch) || !g.phantom.height.is_multiple_of(self.uim.patch) {
            return Err(invalid("uim.patch", "must divide the image width and height"));
        }
        if self.model.embed_dim == 0 {
            return Err(invalid("model.embed_dim", "must be >= 1"));
        }
        if !(self.pretrain.dirichlet_alpha > 0.0 && self.pretrain.dirichlet_alpha.is_finite()) {
            return Err(invalid("pretrain.dirichlet_alpha", "must be > 0"));
        }
        if self.pretrain.checkpoint_name.is_empty()
            || self.pretrain.checkpoint_name.contains(['/', '\\'])
        {
            return Err(invalid("pretrain.checkpoint_name", "must be a plain file name"));
        }
        self.uim_config().validate()?;
        self.federation_config().validate()?;
        self.finetune_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        let (w, h, p) = (self.generate.phantom.width, self.generate.phantom.height, self.uim.patch);
        ModelConfig {
            patch_dim: p * p,
            embed_dim: self.model.embed_dim,
            patches: (w / p) * (h / p),
            seed: self.seed,
        }
    }

    pub fn uim_config(&self) -> UimConfig {
        UimConfig {
            patch_h: self.uim.patch,
            patch_w: self.uim.patch,
            mask_ratio: self.uim.mask_ratio,
            corruption: self.uim.corruption.clone(),
            balance: self.uim.balance_scan_modes.then(|| self.generate.phantom.geometry()),
        }
    }

    pub fn federation_config(&self) -> FederationConfig {
        let p = &self.pretrain;
        FederationConfig {
            clients: p.clients,
            rounds: p.rounds,
            local_steps: p.local_steps,
            optimizer: OptimizerConfig {
                total_rounds: p.rounds,
                ..p.optimizer
            },
            seed: self.seed,
            parallel_clients: true,
            resample_each_round: p.resample_each_round,
        }
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        let f = &self.finetune;
        FinetuneConfig {
            epochs: f.epochs,
            eta_max: f.eta_max,
            eta_min: f.eta_min,
            warmup_epochs: f.warmup_epochs,
            val_fraction: f.val_fraction,
            seed: self.seed,
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field: field.into(),
        reason: reason.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
        assert_eq!(RunConfig::parse(r#"{"version": 1}"#).unwrap(), cfg);
    }

    #[test]
    fn derived_model_shape() {
        let cfg = RunConfig::parse(r#"{"version": 1, "seed": 4, "uim": {"patch": 4}}"#).unwrap();
        let m = cfg.model_config();
        assert_eq!((m.patch_dim, m.patches, m.embed_dim, m.seed), (16, 256, 32, 4));
        assert_eq!(cfg.federation_config().seed, 4);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            r#"{"version": 1, "uim": {"patch": 7}}"#,
            r#"{"version": 1, "uim": {"mask_ratio": 1.0}}"#,
            r#"{"version": 1, "model": {"embed_dim": 0}}"#,
            r#"{"version": 1, "pretrain": {"dirichlet_alpha": 0.0}}"#,
            r#"{"version": 1, "pretrain": {"checkpoint_name": "a/b"}}"#,
            r#"{"version": 1, "finetune": {"val_fraction": 1.0}}"#,
            r#"{"version": 1, "uim": {"corruption": {"sigma": 1.0}}}"#,
            r#"{"seed": 1}"#,
        ] {
            let err = RunConfig::parse(text).unwrap_err();
            assert!(matches!(err, Error::InvalidConfig { .. }), "{text}: {err}");
        }
    }
}
