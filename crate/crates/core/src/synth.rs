//! Synthetic ultrasound phantoms with lesion masks and class labels, plus
//! Dirichlet non-IID splitting across clients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::Image;
use crate::rng::Rng;
use crate::smat::{linear_to_convex, ScanGeometry, ScanMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LesionClass {
    Benign = 0,
    Malignant = 1,
    None = 2,
}

impl LesionClass {
    pub const ALL: [LesionClass; 3] = [LesionClass::Benign, LesionClass::Malignant, LesionClass::None];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub center: (f64, f64),
    /// Semi-axes `(a, b)` along x and y.
    pub axes: (f64, f64),
    pub intensity_delta: f64,
    /// Boundary roughness in `[0, 1]`; 0 is an exact ellipse.
    pub irregularity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub background_level: f64,
    pub speckle_strength: f64,
    pub lesion: Option<Lesion>,
    pub class_label: LesionClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub image: Image,
    /// Lesion support, pixels in {0, 1}.
    pub mask: Image,
    pub label: LesionClass,
    pub mode: ScanMode,
}

/// Relative radius swing at `irregularity = 1`.
const MAX_RADIAL_SWING: f64 = 0.45;
const HARMONICS: std::ops::RangeInclusive<usize> = 2..=7;

/// Mean of the Rayleigh envelope `|N(0,1) + i N(0,1)|`.
const RAYLEIGH_MEAN: f64 = 1.253_314_137_315_500_3;

struct RadialProfile {
    coeffs: Vec<(usize, f64, f64)>,
    scale: f64,
}

impl RadialProfile {
    fn new(irregularity: f64, rng: &mut Rng) -> Self {
        let coeffs: Vec<_> = HARMONICS
            .map(|k| (k, rng.normal() / k as f64, rng.normal() / k as f64))
            .collect();
        let bound: f64 = coeffs.iter().map(|(_, c, s)| c.abs() + s.abs()).sum();
        let scale = if bound > 0.0 { irregularity * MAX_RADIAL_SWING / bound } else { 0.0 };
        Self { coeffs, scale }
    }

    fn radius(&self, phi: f64) -> f64 {
        if self.scale == 0.0 {
            return 1.0;
        }
        let s: f64 = self
            .coeffs
            .iter()
            .map(|&(k, c, sn)| c * (k as f64 * phi).cos() + sn * (k as f64 * phi).sin())
            .sum();
        1.0 + self.scale * s
    }
}

pub fn generate_phantom(spec: &PhantomSpec, rng: &mut Rng) -> Result<LabeledSample> {
    if spec.width == 0 || spec.height == 0 {
        return Err(Error::config("phantom", "empty image"));
    }
    if !(0.0..=1.0).contains(&spec.speckle_strength) {
        return Err(Error::config("phantom.speckle_strength", "must lie in [0, 1]"));
    }
    if (spec.class_label == LesionClass::None) != spec.lesion.is_none() {
        return Err(Error::config("phantom.lesion", "lesion must be present iff the class is not none"));
    }
    let (w, h) = (spec.width, spec.height);
    let mut mask = Image::filled(w, h, 0.0);
    if let Some(lesion) = &spec.lesion {
        if !(0.0..=1.0).contains(&lesion.irregularity) || lesion.axes.0 <= 0.0 || lesion.axes.1 <= 0.0 {
            return Err(Error::config("phantom.lesion", "bad axes or irregularity"));
        }
        let reach = 1.0 + lesion.irregularity * MAX_RADIAL_SWING;
        let (cx, cy) = lesion.center;
        let (a, b) = lesion.axes;
        if cx - a * reach < 0.0
            || cy - b * reach < 0.0
            || cx + a * reach > (w - 1) as f64
            || cy + b * reach > (h - 1) as f64
        {
            return Err(Error::LesionOutOfBounds);
        }
        let profile = RadialProfile::new(lesion.irregularity, rng);
        for y in 0..h {
            for x in 0..w {
                let u = (x as f64 - cx) / a;
                let v = (y as f64 - cy) / b;
                let rho = profile.radius(v.atan2(u));
                if u * u + v * v <= rho * rho {
                    mask.set(x, y, 1.0);
                }
            }
        }
    }
    let delta = spec.lesion.as_ref().map_or(0.0, |l| l.intensity_delta);
    let s = spec.speckle_strength;
    let image = Image::from_fn(w, h, |x, y| {
        let base = spec.background_level + delta * mask.get(x, y);
        let speckle = if s > 0.0 {
            let envelope = rng.normal().hypot(rng.normal());
            1.0 - s + s * envelope / RAYLEIGH_MEAN
        } else {
            1.0
        };
        (base * speckle).clamp(0.0, 255.0)
    });
    Ok(LabeledSample {
        image,
        mask,
        label: spec.class_label,
        mode: ScanMode::Linear,
    })
}

/// Dataset-level generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub background: (f64, f64),
    pub speckle_strength: f64,
    /// Lesion semi-axis range as a fraction of the image size.
    pub axis_fraction: (f64, f64),
    pub benign_delta: f64,
    pub malignant_delta: f64,
    pub malignant_irregularity: (f64, f64),
    /// Probability of rendering a sample in convex (sector) mode.
    pub convex_fraction: f64,
    /// Sector geometry for convex rendering; defaults to the frame default.
    pub geometry: Option<ScanGeometry>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            background: (70.0, 130.0),
            speckle_strength: 0.5,
            axis_fraction: (0.12, 0.22),
            benign_delta: 80.0,
            malignant_delta: -80.0,
            malignant_irregularity: (0.6, 1.0),
            convex_fraction: 0.5,
            geometry: None,
        }
    }
}

impl SynthConfig {
    pub fn geometry(&self) -> ScanGeometry {
        self.geometry
            .unwrap_or_else(|| ScanGeometry::default_for(self.width, self.height))
    }

    fn phantom_spec(&self, label: LesionClass, rng: &mut Rng) -> PhantomSpec {
        let (w, h) = (self.width as f64, self.height as f64);
        let background_level = rng.uniform_range(self.background.0, self.background.1);
        let lesion = match label {
            LesionClass::None => None,
            _ => {
                let a = w * rng.uniform_range(self.axis_fraction.0, self.axis_fraction.1);
                let b = h * rng.uniform_range(self.axis_fraction.0, self.axis_fraction.1);
                let (delta, irregularity) = if label == LesionClass::Benign {
                    (self.benign_delta, 0.0)
                } else {
                    let (lo, hi) = self.malignant_irregularity;
                    (self.malignant_delta, rng.uniform_range(lo, hi))
                };
                let reach = 1.0 + irregularity * MAX_RADIAL_SWING;
                let margin_x = a * reach + 1.0;
                let margin_y = b * reach + 1.0;
                Some(Lesion {
                    center: (
                        rng.uniform_range(margin_x, (w - 1.0 - margin_x).max(margin_x)),
                        rng.uniform_range(margin_y, (h - 1.0 - margin_y).max(margin_y)),
                    ),
                    axes: (a, b),
                    intensity_delta: delta,
                    irregularity,
                })
            }
        };
        PhantomSpec {
            width: self.width,
            height: self.height,
            background_level,
            speckle_strength: self.speckle_strength,
            lesion,
            class_label: label,
        }
    }
}

/// Draws one labeled sample; convex samples are warped through `geom`
/// (the mask is warped the same way and re-binarized at 0.5).
pub fn generate_sample(cfg: &SynthConfig, label: LesionClass, mode: ScanMode, rng: &mut Rng) -> Result<LabeledSample> {
    let spec = cfg.phantom_spec(label, rng);
    let mut sample = generate_phantom(&spec, rng)?;
    if mode == ScanMode::Convex {
        let geom = cfg.geometry();
        sample.image = linear_to_convex(&sample.image, &geom, cfg.width, cfg.height)?;
        sample.mask = linear_to_convex(&sample.mask, &geom, cfg.width, cfg.height)?
            .map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
        sample.mode = ScanMode::Convex;
    }
    Ok(sample)
}

/// `n` samples with labels drawn from `class_mix` (benign, malignant, none).
/// Sample `i` uses its own stream derived from `(seed, i)`.
pub fn generate_dataset(n: usize, class_mix: [f64; 3], cfg: &SynthConfig, seed: u64) -> Result<Vec<LabeledSample>> {
    let total: f64 = class_mix.iter().sum();
    if class_mix.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::config("class_mix", "probabilities must be non-negative and sum to 1"));
    }
    (0..n)
        .map(|i| {
            let mut rng = Rng::derive(seed, &[i as u64]);
            let u = rng.uniform();
            let label = if u < class_mix[0] {
                LesionClass::Benign
            } else if u < class_mix[0] + class_mix[1] {
                LesionClass::Malignant
            } else {
                LesionClass::None
            };
            // guard against u landing past a rounded cumulative sum
            let label = if class_mix[label.id()] == 0.0 {
                LesionClass::ALL.into_iter().rev().find(|c| class_mix[c.id()] > 0.0).unwrap_or(label)
            } else {
                label
            };
            let mode = if rng.uniform() < cfg.convex_fraction { ScanMode::Convex } else { ScanMode::Linear };
            generate_sample(cfg, label, mode, &mut rng)
        })
        .collect()
}

/// Splits item indices across `k` clients: for each class, client shares
/// are drawn from Dirichlet(alpha). Every client gets at least one item.
pub fn partition_indices(labels: &[usize], k: usize, alpha: f64, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::config("clients", "must be >= 1"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::config("alpha", "must be > 0"));
    }
    if labels.len() < k {
        return Err(Error::TooFewSamples {
            needed: k,
            actual: labels.len(),
        });
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    loop {
        let mut clients = vec![Vec::new(); k];
        for &c in &classes {
            let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            rng.shuffle(&mut members);
            let shares = rng.dirichlet(alpha, k);
            let mut start = 0;
            let mut cumulative = 0.0;
            for (client, share) in shares.iter().enumerate() {
                cumulative += share;
                let end = if client + 1 == k {
                    members.len()
                } else {
                    ((cumulative * members.len() as f64).round() as usize).clamp(start, members.len())
                };
                clients[client].extend_from_slice(&members[start..end]);
                start = end;
            }
        }
        if clients.iter().all(|c| !c.is_empty()) {
            for c in &mut clients {
                c.sort_unstable();
            }
            return Ok(clients);
        }
    }
}

pub fn partition_clients(dataset: &[LabeledSample], k: usize, alpha: f64, rng: &mut Rng) -> Result<Vec<Vec<LabeledSample>>> {
    let labels: Vec<usize> = dataset.iter().map(|s| s.label.id()).collect();
    Ok(partition_indices(&labels, k, alpha, rng)?
        .into_iter()
        .map(|idx| idx.into_iter().map(|i| dataset[i].clone()).collect())
        .collect())
}
