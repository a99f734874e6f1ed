//! Benchmark fixtures shared by the criterion benches.

use sonofed::fed::{prepare_sample, UimConfig};
use sonofed::model::{init_params, MaskedAutoencoder, ModelConfig, ParameterVector};
use sonofed::synth::{generate_dataset, SynthConfig};
use sonofed::{Rng, Sample};

/// A 64x64 model with 8x8 patches and `n` prepared phantom samples.
pub fn model_fixture(n: usize) -> (MaskedAutoencoder, ParameterVector, Vec<Sample>) {
    let cfg = ModelConfig {
        patch_dim: 64,
        embed_dim: 32,
        patches: 64,
        seed: 1,
    };
    let synth = SynthConfig {
        width: 64,
        height: 64,
        ..SynthConfig::default()
    };
    let uim = UimConfig {
        patch_h: 8,
        patch_w: 8,
        mask_ratio: 0.75,
        corruption: Default::default(),
        balance: None,
    };
    let samples = generate_dataset(n, [0.4, 0.4, 0.2], &synth, 3)
        .expect("valid synth config")
        .iter()
        .enumerate()
        .map(|(i, s)| prepare_sample(&s.image, &uim, &mut Rng::derive(5, &[i as u64])).expect("valid uim config"))
        .collect();
    let model = MaskedAutoencoder::new(cfg).expect("valid model config");
    let params = init_params(&cfg).expect("valid model config");
    (model, params, samples)
}
