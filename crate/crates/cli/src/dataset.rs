//! On-disk layout of a generated dataset: `img_%05d.pgm`, `mask_%05d.pgm`
//! and a `labels.json` manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sonofed::imgcore::{read_pgm, write_pgm};
use sonofed::synth::{LabeledSample, LesionClass};
use sonofed::{Error, Result, ScanMode};

pub const LABELS_FILE: &str = "labels.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsManifest {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub samples: Vec<LabelEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelEntry {
    pub id: usize,
    pub label: LesionClass,
    pub mode: ScanMode,
}

pub fn image_name(id: usize) -> String {
    format!("img_{id:05}.pgm")
}

pub fn mask_name(id: usize) -> String {
    format!("mask_{id:05}.pgm")
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Writes every sample plus the manifest. Masks are stored as 0/255.
pub fn write_dataset(dir: &Path, samples: &[LabeledSample], seed: u64) -> Result<()> {
    fs::create_dir(dir).or_else(|e| if dir.is_dir() { Ok(()) } else { Err(io(dir, e)) })?;
    let (width, height) = samples
        .first()
        .map_or((0, 0), |s| (s.image.width(), s.image.height()));
    let mut entries = Vec::with_capacity(samples.len());
    for (id, s) in samples.iter().enumerate() {
        write_pgm(&s.image, dir.join(image_name(id)))?;
        write_pgm(&s.mask.map(|v| if v > 0.0 { 255.0 } else { 0.0 }), dir.join(mask_name(id)))?;
        entries.push(LabelEntry {
            id,
            label: s.label,
            mode: s.mode,
        });
    }
    let manifest = LabelsManifest {
        seed,
        width,
        height,
        samples: entries,
    };
    let path = dir.join(LABELS_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::MalformedFile(e.to_string()))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<LabelsManifest> {
    let path = dir.join(LABELS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::MalformedFile(format!("{}: {e}", path.display())))
}

/// Loads images and masks listed in the manifest; masks come back as {0, 1}.
pub fn read_dataset(dir: &Path) -> Result<Vec<LabeledSample>> {
    let manifest = read_manifest(dir)?;
    manifest
        .samples
        .iter()
        .map(|e| {
            let image = read_pgm(dir.join(image_name(e.id)))?;
            let mask = read_pgm(dir.join(mask_name(e.id)))?.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
            if (image.width(), image.height()) != (manifest.width, manifest.height) {
                return Err(Error::MalformedFile(format!("{} has the wrong size", image_name(e.id))));
            }
            Ok(LabeledSample {
                image,
                mask,
                label: e.label,
                mode: e.mode,
            })
        })
        .collect()
}
