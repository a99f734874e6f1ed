//! Subcommand implementations. Each returns a summary on success; the
//! caller maps errors to exit codes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sonofed::corrupt::mixed_corrupt;
use sonofed::fed::{
    load_checkpoint, save_checkpoint, train_probe, Checkpoint, ClientState, Federation, RoundRecord, TrainingState,
};
use sonofed::imgcore::{depatchify, quantized, read_pgm, write_pgm};
use sonofed::metrics::{auroc, ci95, dsc, hausdorff, aop_geometry, AopGeometry, PointSet};
use sonofed::model::{init_params, MaskedAutoencoder};
use sonofed::smat::{convex_to_linear, linear_to_convex};
use sonofed::synth::{generate_dataset, partition_clients, LabeledSample, LesionClass};
use sonofed::tgm::apply_uim;
use sonofed::{Error, Image, Result, Rng, ScanGeometry, ScanMode};

use crate::config::RunConfig;
use crate::dataset::{mask_name, read_dataset, read_manifest, write_dataset};

pub const LOSS_TRACE_FILE: &str = "loss_trace.csv";

const PARTITION_STREAM: u64 = 0xD1_71C7;
const CORRUPT_STREAM: u64 = 0xC0_4407;

/// Settings shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Global {
    pub config: RunConfig,
    pub out: PathBuf,
    pub threads: usize,
}

impl Global {
    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| Error::InvalidConfig {
                field: "threads".into(),
                reason: e.to_string(),
            })
    }
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Creates `dir` itself but never its parents.
fn ensure_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        return Ok(());
    }
    fs::create_dir(dir).map_err(|e| io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::MalformedFile(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io(path, e))
}

fn output_name(input: &Path, suffix: &str) -> String {
    let stem = input.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
    format!("{stem}_{suffix}.pgm")
}

pub fn cmd_generate(g: &Global) -> Result<usize> {
    let gen = &g.config.generate;
    let samples = g
        .pool()?
        .install(|| generate_dataset(gen.samples, gen.class_mix, &gen.phantom, g.config.seed))?;
    write_dataset(&g.out, &samples, g.config.seed)?;
    Ok(samples.len())
}

#[derive(Debug, Clone, Serialize)]
pub struct PretrainSummary {
    pub rounds: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub checkpoint: PathBuf,
}

/// Images that pre-training sees: the dataset at `data`, or a fresh
/// in-memory dataset from the config, quantized as if read from disk.
fn pretraining_images(cfg: &RunConfig, data: Option<&Path>) -> Result<Vec<LabeledSample>> {
    let samples = match data {
        Some(dir) => read_dataset(dir)?,
        None => {
            let gen = &cfg.generate;
            let mut s = generate_dataset(gen.samples, gen.class_mix, &gen.phantom, cfg.seed)?;
            for x in &mut s {
                x.image = quantized(&x.image);
            }
            s
        }
    };
    let (w, h) = (cfg.generate.phantom.width, cfg.generate.phantom.height);
    if let Some(s) = samples.iter().find(|s| (s.image.width(), s.image.height()) != (w, h)) {
        return Err(Error::ConfigMismatch(format!(
            "dataset images are {}x{}, config expects {w}x{h}",
            s.image.width(),
            s.image.height()
        )));
    }
    Ok(samples)
}

pub fn write_loss_trace(path: &Path, trace: &[RoundRecord]) -> Result<()> {
    let mut text = String::from("round,global_loss,eta\n");
    for r in trace {
        writeln!(text, "{},{},{}", r.round, r.global_loss, r.eta).expect("write to string");
    }
    fs::write(path, text).map_err(|e| io(path, e))
}

pub fn cmd_pretrain(g: &Global, data: Option<&Path>, resume: Option<&Path>) -> Result<PretrainSummary> {
    let cfg = &g.config;
    let model_cfg = cfg.model_config();
    let fed_cfg = cfg.federation_config();
    let uim = cfg.uim_config();
    ensure_dir(&g.out)?;

    let start = match resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.model != model_cfg || ck.federation != fed_cfg || ck.uim.as_ref() != Some(&uim) {
                return Err(Error::ConfigMismatch(format!(
                    "{} was written with a different configuration",
                    path.display()
                )));
            }
            Some(TrainingState {
                params: ck.params,
                round: ck.round,
                trace: ck.trace,
            })
        }
        None => None,
    };

    let samples = pretraining_images(cfg, data)?;
    let mut rng = Rng::derive(cfg.seed, &[PARTITION_STREAM]);
    let parts = partition_clients(&samples, fed_cfg.clients, cfg.pretrain.dirichlet_alpha, &mut rng)?;
    let model = MaskedAutoencoder::new(model_cfg)?;
    let name = &cfg.pretrain.checkpoint_name;
    let save = |state: &TrainingState, name: &str| -> Result<PathBuf> {
        let ck = Checkpoint {
            model: model_cfg,
            federation: fed_cfg.clone(),
            uim: Some(uim.clone()),
            round: state.round,
            seed: cfg.seed,
            params: state.params.clone(),
            trace: state.trace.clone(),
        };
        save_checkpoint(&g.out, name, &ck)
    };

    let state = g.pool()?.install(|| -> Result<TrainingState> {
        let clients: Vec<ClientState> = parts
            .par_iter()
            .enumerate()
            .map(|(id, part)| {
                let raw: Vec<(Image, ScanMode)> = part.iter().map(|s| (s.image.clone(), s.mode)).collect();
                ClientState::new(id, &raw, &uim, cfg.seed)
            })
            .collect::<Result<_>>()?;
        let fed = Federation {
            model: &model,
            config: &fed_cfg,
            clients: &clients,
            uim: Some(&uim),
        };
        let state = match start {
            Some(s) => s,
            None => fed.start(init_params(&model_cfg)?)?,
        };
        let every = cfg.pretrain.checkpoint_every;
        fed.run_from(state, |s| {
            if every > 0 && s.round % every == 0 && s.round < fed_cfg.rounds {
                save(s, &format!("{name}_r{:05}", s.round))?;
            }
            Ok(())
        })
    })?;
    let checkpoint = save(&state, name)?;
    write_loss_trace(&g.out.join(LOSS_TRACE_FILE), &state.trace)?;
    Ok(PretrainSummary {
        rounds: state.round,
        initial_loss: state.trace.first().map_or(f64::NAN, |r| r.global_loss),
        final_loss: state.trace.last().map_or(f64::NAN, |r| r.global_loss),
        checkpoint,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FinetuneReport {
    pub classes: Vec<LesionClass>,
    pub best_epoch: usize,
    pub val_accuracy: Option<f64>,
    /// `test` when a separate test directory was given, else `validation`.
    pub eval_set: String,
    pub eval_samples: usize,
    pub accuracy: f64,
    pub auroc: Option<f64>,
}

fn class_auroc(probs: &[Vec<f64>], labels: &[usize], class: usize) -> Result<f64> {
    let scores: Vec<f64> = probs.iter().map(|p| p[class]).collect();
    let truth: Vec<bool> = labels.iter().map(|&l| l == class).collect();
    auroc(&scores, &truth)
}

/// AUROC of the second class for binary tasks, one-vs-rest macro mean
/// otherwise. `None` when the evaluation set lacks a class.
pub fn probe_auroc(probs: &[Vec<f64>], labels: &[usize], classes: usize) -> Option<f64> {
    if classes == 2 {
        return class_auroc(probs, labels, 1).ok();
    }
    let per: Option<Vec<f64>> = (0..classes).map(|c| class_auroc(probs, labels, c).ok()).collect();
    per.map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn encode_all(g: &Global, model: &MaskedAutoencoder, ck: &Checkpoint, patch: usize, data: &[LabeledSample]) -> Result<Vec<Vec<f64>>> {
    g.pool()?.install(|| {
        data.par_iter()
            .map(|s| model.encode_image(&ck.params, &s.image, patch, patch))
            .collect()
    })
}

pub fn cmd_finetune(g: &Global, checkpoint: &Path, data: &Path, test: Option<&Path>) -> Result<FinetuneReport> {
    let ck = load_checkpoint(checkpoint)?;
    let model = MaskedAutoencoder::new(ck.model)?;
    let patch = ck.uim.as_ref().map_or(g.config.uim.patch, |u| u.patch_w);
    let labeled = read_dataset(data)?;
    if labeled.is_empty() {
        return Err(Error::Empty);
    }
    let mut classes: Vec<LesionClass> = labeled.iter().map(|s| s.label).collect();
    classes.sort_unstable();
    classes.dedup();
    let class_index = |c: LesionClass| classes.iter().position(|&k| k == c);
    let labels: Vec<usize> = labeled.iter().map(|s| class_index(s.label).expect("present")).collect();
    let features = encode_all(g, &model, &ck, patch, &labeled)?;
    let result = train_probe(&features, &labels, classes.len(), &g.config.finetune_config())?;

    let (eval_set, ids, eval_features, eval_labels) = match test {
        Some(dir) => {
            let test_data = read_dataset(dir)?;
            let mut idx = Vec::new();
            let mut lab = Vec::new();
            for (i, s) in test_data.iter().enumerate() {
                let c = class_index(s.label).ok_or_else(|| Error::BadLabel {
                    label: s.label.id(),
                    classes: classes.len(),
                })?;
                idx.push(i);
                lab.push(c);
            }
            ("test", idx, encode_all(g, &model, &ck, patch, &test_data)?, lab)
        }
        None => {
            let idx = if result.val_indices.is_empty() {
                result.train_indices.clone()
            } else {
                result.val_indices.clone()
            };
            let f = idx.iter().map(|&i| features[i].clone()).collect();
            let lab = idx.iter().map(|&i| labels[i]).collect();
            ("validation", idx, f, lab)
        }
    };
    let probs: Vec<Vec<f64>> = eval_features.iter().map(|f| result.probe.probabilities(f)).collect();
    let correct = probs
        .iter()
        .zip(&eval_labels)
        .filter(|(p, &l)| (0..p.len()).fold(0, |b, c| if p[c] > p[b] { c } else { b }) == l)
        .count();

    ensure_dir(&g.out)?;
    let mut csv = String::from("id,label");
    for c in &classes {
        write!(csv, ",p_{}", class_name(*c)).expect("write to string");
    }
    csv.push('\n');
    for ((id, p), &l) in ids.iter().zip(&probs).zip(&eval_labels) {
        write!(csv, "{id},{}", class_name(classes[l])).expect("write to string");
        for v in p {
            write!(csv, ",{v}").expect("write to string");
        }
        csv.push('\n');
    }
    let scores_path = g.out.join("scores.csv");
    fs::write(&scores_path, csv).map_err(|e| io(&scores_path, e))?;
    write_json(
        &g.out.join("probe.json"),
        &json!({
            "checkpoint": checkpoint,
            "classes": classes,
            "dim": result.probe.dim,
            "params": result.probe.params,
        }),
    )?;
    let report = FinetuneReport {
        classes: classes.clone(),
        best_epoch: result.best_epoch,
        val_accuracy: result.val_accuracy,
        eval_set: eval_set.into(),
        eval_samples: eval_labels.len(),
        accuracy: correct as f64 / eval_labels.len().max(1) as f64,
        auroc: probe_auroc(&probs, &eval_labels, classes.len()),
    };
    write_json(&g.out.join("finetune_metrics.json"), &report)?;
    Ok(report)
}

fn class_name(c: LesionClass) -> &'static str {
    match c {
        LesionClass::Benign => "benign",
        LesionClass::Malignant => "malignant",
        LesionClass::None => "none",
    }
}

/// Class names, label indices and per-class probabilities from `scores.csv`.
pub type Scores = (Vec<String>, Vec<usize>, Vec<Vec<f64>>);

/// Reads a `scores.csv` as written by `finetune`: class names from the
/// header, then `(label index, probabilities)` per row.
pub fn read_scores(path: &Path) -> Result<Scores> {
    let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
    let bad = |what: &str| Error::MalformedFile(format!("{}: {what}", path.display()));
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty file"))?.split(',').collect();
    if header.len() < 4 || header[0] != "id" || header[1] != "label" {
        return Err(bad("expected header id,label,p_<class>,..."));
    }
    let classes: Vec<String> = header[2..]
        .iter()
        .map(|h| h.strip_prefix("p_").map(str::to_owned).ok_or_else(|| bad("bad column name")))
        .collect::<Result<_>>()?;
    let (mut labels, mut probs) = (Vec::new(), Vec::new());
    for line in lines.filter(|l| !l.is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != header.len() {
            return Err(bad("ragged row"));
        }
        labels.push(classes.iter().position(|c| c == cols[1]).ok_or_else(|| bad("unknown label"))?);
        probs.push(
            cols[2..]
                .iter()
                .map(|v| v.parse::<f64>().map_err(|_| bad("bad number")))
                .collect::<Result<_>>()?,
        );
    }
    Ok((classes, labels, probs))
}

#[derive(Debug, Clone, Default)]
pub struct EvalInputs<'a> {
    pub pred: Option<&'a Path>,
    pub gt: Option<&'a Path>,
    pub scores: Option<&'a Path>,
    pub ps: Option<&'a Path>,
    pub fh: Option<&'a Path>,
}

fn mask_pairs(pred: &Path, gt: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    if !gt.is_dir() {
        let name = gt.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        return Ok(vec![(name, pred.to_path_buf(), gt.to_path_buf())]);
    }
    let names: Vec<String> = match read_manifest(gt) {
        Ok(m) => m.samples.iter().map(|e| mask_name(e.id)).collect(),
        Err(_) => {
            let mut v: Vec<String> = fs::read_dir(gt)
                .map_err(|e| io(gt, e))?
                .filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| n.ends_with(".pgm"))
                .collect();
            v.sort();
            v
        }
    };
    Ok(names
        .into_iter()
        .map(|n| (n.clone(), pred.join(&n), gt.join(&n)))
        .collect())
}

fn summary(values: &[f64]) -> Value {
    match ci95(values) {
        Ok((mean, half)) => json!({ "mean": mean, "ci95": half, "n": values.len() }),
        Err(_) => json!({ "mean": values.first(), "ci95": null, "n": values.len() }),
    }
}

pub fn cmd_eval(g: &Global, inputs: &EvalInputs) -> Result<Value> {
    let mut report = serde_json::Map::new();
    if inputs.pred.is_none() && inputs.scores.is_none() && inputs.ps.is_none() {
        return Err(Error::InvalidConfig {
            field: "eval".into(),
            reason: "give --pred/--gt, --scores, or --ps/--fh".into(),
        });
    }
    match (inputs.pred, inputs.gt) {
        (Some(pred), Some(gt)) => {
            let mut rows = Vec::new();
            let (mut dscs, mut hds) = (Vec::new(), Vec::new());
            for (name, p, t) in mask_pairs(pred, gt)? {
                let pm = PointSet::from_mask(&read_pgm(&p)?);
                let tm = PointSet::from_mask(&read_pgm(&t)?);
                let d = dsc(&pm, &tm);
                let hd = hausdorff(&pm.boundary(), &tm.boundary()).ok();
                dscs.push(d);
                hds.extend(hd);
                rows.push(json!({ "name": name, "dsc": d, "hausdorff": hd }));
            }
            report.insert(
                "segmentation".into(),
                json!({ "dsc": summary(&dscs), "hausdorff": summary(&hds), "images": rows }),
            );
        }
        (None, None) => {}
        _ => {
            return Err(Error::InvalidConfig {
                field: "eval".into(),
                reason: "--pred and --gt go together".into(),
            })
        }
    }
    if let Some(path) = inputs.scores {
        let (classes, labels, probs) = read_scores(path)?;
        let correct = probs
            .iter()
            .zip(&labels)
            .filter(|(p, &l)| (0..p.len()).fold(0, |b, c| if p[c] > p[b] { c } else { b }) == l)
            .count();
        report.insert(
            "classification".into(),
            json!({
                "classes": classes,
                "samples": labels.len(),
                "accuracy": correct as f64 / labels.len().max(1) as f64,
                "auroc": probe_auroc(&probs, &labels, classes.len()),
            }),
        );
    }
    match (inputs.ps, inputs.fh) {
        (Some(ps), Some(fh)) => {
            let geo: AopGeometry = aop_geometry(&read_pgm(ps)?, &read_pgm(fh)?)?;
            report.insert("aop".into(), serde_json::to_value(geo).expect("plain struct"));
        }
        (None, None) => {}
        _ => {
            return Err(Error::InvalidConfig {
                field: "eval".into(),
                reason: "--ps and --fh go together".into(),
            })
        }
    }
    let report = Value::Object(report);
    ensure_dir(&g.out)?;
    write_json(&g.out.join("report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Direction {
    LinearToConvex,
    ConvexToLinear,
}

fn geometry_for(cfg: &RunConfig, img: &Image) -> ScanGeometry {
    cfg.generate
        .phantom
        .geometry
        .unwrap_or_else(|| ScanGeometry::default_for(img.width(), img.height()))
}

pub fn cmd_transform(g: &Global, input: &Path, direction: Direction) -> Result<PathBuf> {
    let img = read_pgm(input)?;
    let geom = geometry_for(&g.config, &img);
    let (out, suffix) = match direction {
        Direction::LinearToConvex => (linear_to_convex(&img, &geom, img.width(), img.height())?, "convex"),
        Direction::ConvexToLinear => (convex_to_linear(&img, &geom, img.width(), img.height())?, "linear"),
    };
    ensure_dir(&g.out)?;
    let path = g.out.join(output_name(input, suffix));
    write_pgm(&out, &path)?;
    Ok(path)
}

pub fn cmd_corrupt(g: &Global, input: &Path, p: Option<f64>) -> Result<PathBuf> {
    let img = read_pgm(input)?;
    let mut cfg = g.config.uim.corruption.clone();
    if let Some(p) = p {
        cfg.p = p;
    }
    let out = mixed_corrupt(&img, &cfg, &mut Rng::derive(g.config.seed, &[CORRUPT_STREAM]))?;
    ensure_dir(&g.out)?;
    let path = g.out.join(output_name(input, "corrupt"));
    write_pgm(&out, &path)?;
    Ok(path)
}

/// Writes the corrupted input with masked patches zeroed; returns the path
/// and the masked patch indices.
pub fn cmd_mask_preview(g: &Global, input: &Path) -> Result<(PathBuf, Vec<usize>)> {
    let img = read_pgm(input)?;
    let u = &g.config.uim;
    let (mut grid, partition) = apply_uim(
        &img,
        &u.corruption,
        u.patch,
        u.patch,
        u.mask_ratio,
        &mut Rng::derive(g.config.seed, &[CORRUPT_STREAM]),
    )?;
    for &m in partition.masked() {
        grid.patch_mut(m).fill(0.0);
    }
    ensure_dir(&g.out)?;
    let path = g.out.join(output_name(input, "masked"));
    write_pgm(&depatchify(&grid), &path)?;
    Ok((path, partition.masked().to_vec()))
}
