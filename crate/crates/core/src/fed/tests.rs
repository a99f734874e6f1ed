use proptest::prelude::*;

use super::*;
use crate::rng::Rng;
use crate::imgcore::PatchGrid;
use crate::model::{init_params, ModelConfig};
use crate::tgm::MaskPartition;

fn random_samples(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = Rng::new(seed);
    (0..n)
        .map(|_| {
            let patches: Vec<Vec<f64>> = (0..cfg.patches)
                .map(|_| (0..cfg.patch_dim).map(|_| rng.uniform() * 255.0).collect())
                .collect();
            let grid = PatchGrid::from_patches(1, cfg.patch_dim, 1, cfg.patches, patches).unwrap();
            let mut order: Vec<usize> = (0..cfg.patches).collect();
            rng.shuffle(&mut order);
            order.truncate(cfg.patches * 3 / 4);
            Sample::uncorrupted(grid, MaskPartition::from_masked(order, cfg.patches).unwrap())
        })
        .collect()
}

fn cfg() -> ModelConfig {
    ModelConfig {
        patch_dim: 6,
        embed_dim: 5,
        patches: 8,
        seed: 11,
    }
}

fn fed_cfg(clients: usize, rounds: usize, kind: OptimizerKind) -> FederationConfig {
    FederationConfig {
        clients,
        rounds,
        local_steps: 1,
        optimizer: OptimizerConfig {
            kind,
            eta_max: 0.5,
            eta_min: 0.01,
            warmup_rounds: 2,
            total_rounds: 0,
        },
        seed: 5,
        parallel_clients: false,
        resample_each_round: false,
    }
}

fn two_pass_aggregate(locals: &[(ParameterVector, usize)]) -> Vec<f64> {
    let n: f64 = locals.iter().map(|(_, k)| *k as f64).sum();
    let weights: Vec<f64> = locals.iter().map(|(_, k)| *k as f64 / n).collect();
    (0..locals[0].0.len())
        .map(|j| locals.iter().zip(&weights).map(|((p, _), w)| w * p.0[j]).sum())
        .collect()
}

proptest! {
    #[test]
    fn aggregate_matches_two_pass(
        k in 1usize..8,
        len in 1usize..40,
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::new(seed);
        let locals: Vec<(ParameterVector, usize)> = (0..k)
            .map(|_| {
                let p = (0..len).map(|_| rng.normal() * 10.0).collect();
                (ParameterVector(p), 1 + rng.below(50))
            })
            .collect();
        let got = aggregate(&locals).unwrap();
        let want = two_pass_aggregate(&locals);
        for (a, b) in got.0.iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn aggregate_of_equal_vectors_is_that_vector(len in 1usize..20, k in 1usize..6, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let p = ParameterVector((0..len).map(|_| rng.normal()).collect());
        let locals: Vec<_> = (0..k).map(|i| (p.clone(), i + 1)).collect();
        let got = aggregate(&locals).unwrap();
        prop_assert!(got.max_abs_diff(&p) <= 1e-14);
    }
}

#[test]
fn aggregate_rejects_bad_input() {
    assert!(matches!(aggregate(&[]), Err(Error::Empty)));
    let a = (ParameterVector(vec![1.0, 2.0]), 1);
    let b = (ParameterVector(vec![1.0]), 1);
    assert!(matches!(aggregate(&[a.clone(), b]), Err(Error::ShapeMismatch { .. })));
    assert!(matches!(
        aggregate(&[(a.0.clone(), 0)]),
        Err(Error::TooFewSamples { .. })
    ));
}

#[test]
fn aggregate_weights_by_sample_count() {
    let a = (ParameterVector(vec![0.0, 4.0]), 1);
    let b = (ParameterVector(vec![4.0, 0.0]), 3);
    assert_eq!(aggregate(&[a, b]).unwrap().0, vec![3.0, 1.0]);
}

#[test]
fn local_update_gd_matches_manual_steps() {
    let c = cfg();
    let m = MaskedAutoencoder::new(c).unwrap();
    let samples = random_samples(&c, 3, 1);
    let w0 = init_params(&c).unwrap();
    let got = local_update(&m, &w0, &samples, 3, 0.2, OptimizerKind::Gd).unwrap();
    let mut w = w0.clone();
    for _ in 0..3 {
        let g = m.batch_loss_and_grad(&w, &samples).unwrap().grad;
        for (a, b) in w.0.iter_mut().zip(&g.0) {
            *a -= 0.2 * b;
        }
    }
    assert_eq!(got, w);
}

#[test]
fn identical_clients_track_centralized_descent() {
    let c = cfg();
    let m = MaskedAutoencoder::new(c).unwrap();
    let data = random_samples(&c, 16, 2);
    for k in [2, 4] {
        let fc = fed_cfg(k, 20, OptimizerKind::Gd);
        let clients: Vec<_> = (0..k)
            .map(|id| ClientState::from_samples(id, data.clone()).unwrap())
            .collect();
        let fed = Federation {
            model: &m,
            config: &fc,
            clients: &clients,
            uim: None,
        };
        let mut state = fed.start(init_params(&c).unwrap()).unwrap();
        let mut central = init_params(&c).unwrap();
        for t in 0..fc.rounds {
            state = fed.round(&state).unwrap();
            let eta = lr_schedule(t, &fc.schedule());
            let g = m.batch_loss_and_grad(&central, &data).unwrap().grad;
            for (a, b) in central.0.iter_mut().zip(&g.0) {
                *a -= eta * b;
            }
            assert!(state.params.max_abs_diff(&central) < 1e-9, "K={k} round {t}");
        }
    }
}

#[test]
fn trace_records_schedule_and_initial_loss() {
    let c = cfg();
    let m = MaskedAutoencoder::new(c).unwrap();
    let clients = vec![
        ClientState::from_samples(0, random_samples(&c, 4, 3)).unwrap(),
        ClientState::from_samples(1, random_samples(&c, 2, 4)).unwrap(),
    ];
    let fc = fed_cfg(2, 6, OptimizerKind::Adam);
    let init = init_params(&c).unwrap();
    let (_, trace) = run_pretraining(&m, &fc, &clients, None, init.clone()).unwrap();
    assert_eq!(trace.len(), 7);
    assert_eq!(trace[0].eta, 0.0);
    assert_eq!(trace[0].global_loss, global_loss(&m, &init, &clients).unwrap());
    for (t, r) in trace[1..].iter().enumerate() {
        assert_eq!(r.round, t + 1);
        assert_eq!(r.eta, lr_schedule(t, &fc.schedule()));
    }
}

#[test]
fn global_loss_is_sample_weighted() {
    let c = cfg();
    let m = MaskedAutoencoder::new(c).unwrap();
    let a = random_samples(&c, 3, 5);
    let b = random_samples(&c, 1, 6);
    let p = init_params(&c).unwrap();
    let clients = vec![
        ClientState::from_samples(0, a.clone()).unwrap(),
        ClientState::from_samples(1, b.clone()).unwrap(),
    ];
    let all: Vec<Sample> = a.into_iter().chain(b).collect();
    let want = m.batch_loss(&p, &all).unwrap();
    assert!((global_loss(&m, &p, &clients).unwrap() - want).abs() < 1e-14);
}

#[test]
fn parallel_clients_are_bit_identical() {
    let c = cfg();
    let m = MaskedAutoencoder::new(c).unwrap();
    let clients: Vec<_> = (0..4)
        .map(|i| ClientState::from_samples(i, random_samples(&c, 2 + i, 10 + i as u64)).unwrap())
        .collect();
    let mut fc = fed_cfg(4, 5, OptimizerKind::Adam);
    let serial = run_pretraining(&m, &fc, &clients, None, init_params(&c).unwrap()).unwrap();
    fc.parallel_clients = true;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let parallel = pool
        .install(|| run_pretraining(&m, &fc, &clients, None, init_params(&c).unwrap()))
        .unwrap();
    assert_eq!(serial, parallel);
}

#[test]
fn resume_continues_exactly() {
    let c = cfg();
    let m = MaskedAutoencoder::new(c).unwrap();
    let clients = vec![ClientState::from_samples(0, random_samples(&c, 3, 7)).unwrap()];
    let fc = fed_cfg(1, 8, OptimizerKind::Adam);
    let fed = Federation {
        model: &m,
        config: &fc,
        clients: &clients,
        uim: None,
    };
    let full = fed.run_from(fed.start(init_params(&c).unwrap()).unwrap(), |_| Ok(())).unwrap();

    let mut state = fed.start(init_params(&c).unwrap()).unwrap();
    for _ in 0..3 {
        state = fed.round(&state).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let ckpt = Checkpoint {
        model: c,
        federation: fc.clone(),
        uim: None,
        round: state.round,
        seed: fc.seed,
        params: state.params.clone(),
        trace: state.trace.clone(),
    };
    let path = save_checkpoint(dir.path(), "mid", &ckpt).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ckpt);
    let resumed = TrainingState {
        params: back.params,
        round: back.round,
        trace: back.trace,
    };
    let resumed = fed.run_from(resumed, |_| Ok(())).unwrap();
    assert_eq!(resumed, full);
}

fn saved(dir: &Path) -> (Checkpoint, PathBuf) {
    let c = cfg();
    let ckpt = Checkpoint {
        model: c,
        federation: fed_cfg(1, 1, OptimizerKind::Gd),
        uim: None,
        round: 1,
        seed: 5,
        params: init_params(&c).unwrap(),
        trace: vec![],
    };
    let path = save_checkpoint(dir, "ck", &ckpt).unwrap();
    (ckpt, path)
}

use std::path::{Path, PathBuf};

#[test]
fn checkpoint_detects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let (_, path) = saved(dir.path());
    let params = path.with_extension("params");
    let mut bytes = std::fs::read(&params).unwrap();
    bytes[3] ^= 0x10;
    std::fs::write(&params, &bytes).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::ChecksumMismatch { .. })));
    bytes.truncate(bytes.len() - 8);
    std::fs::write(&params, &bytes).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::MalformedFile(_))));
}

#[test]
fn checkpoint_rejects_config_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (_, path) = saved(dir.path());
    let text = std::fs::read_to_string(&path).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["model"]["embed_dim"] = serde_json::json!(6);
    std::fs::write(&path, v.to_string()).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::ConfigMismatch(_))));
}

#[test]
fn checkpoint_missing_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        load_checkpoint(&dir.path().join("nothing.json")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn checkpoint_payload_is_little_endian() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, path) = saved(dir.path());
    let bytes = std::fs::read(path.with_extension("params")).unwrap();
    assert_eq!(bytes.len(), ckpt.params.len() * 8);
    assert_eq!(&bytes[..8], &ckpt.params.0[0].to_le_bytes());
    assert_eq!(crc32fast::hash(&bytes), {
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        v["crc32"].as_u64().unwrap() as u32
    });
}

#[test]
fn clients_from_images_are_deterministic() {
    let uim = UimConfig {
        patch_h: 4,
        patch_w: 4,
        mask_ratio: 0.75,
        corruption: CorruptionConfig::default(),
        balance: Some(ScanGeometry::default_for(16, 16)),
    };
    let raw: Vec<(Image, ScanMode)> = (0..3)
        .map(|i| {
            let img = Image::from_fn(16, 16, |x, y| ((x * 7 + y * 13 + i * 5) % 256) as f64);
            (img, ScanMode::Linear)
        })
        .collect();
    let a = ClientState::new(2, &raw, &uim, 9).unwrap();
    let b = ClientState::new(2, &raw, &uim, 9).unwrap();
    assert_eq!(a.sample_count(), 6);
    assert_eq!(a.samples, b.samples);
    for s in &a.samples {
        assert_eq!(s.partition.masked().len(), 12);
    }
    assert!(ClientState::new(0, &[], &uim, 9).is_err());
}

#[test]
fn resampling_needs_uim() {
    let c = cfg();
    let m = MaskedAutoencoder::new(c).unwrap();
    let clients = vec![ClientState::from_samples(0, random_samples(&c, 2, 1)).unwrap()];
    let mut fc = fed_cfg(1, 2, OptimizerKind::Gd);
    fc.resample_each_round = true;
    assert!(run_pretraining(&m, &fc, &clients, None, init_params(&c).unwrap()).is_err());
}

#[test]
fn config_validation() {
    let mut fc = fed_cfg(1, 4, OptimizerKind::Gd);
    assert!(fc.validate().is_ok());
    fc.local_steps = 0;
    assert!(fc.validate().is_err());
    let mut fc = fed_cfg(1, 4, OptimizerKind::Gd);
    fc.optimizer.warmup_rounds = 5;
    assert!(fc.validate().is_ok());
    assert_eq!(fc.schedule().warmup_rounds, 4);
    fc.optimizer.eta_min = 1.0;
    assert!(fc.validate().is_err());
}
