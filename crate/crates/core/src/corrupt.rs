//! Mixed image corruption: motion blur, Gaussian blur and salt-and-pepper
//! noise, composed stochastically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{bilinear_sample, convolve2d, Image, Kernel};
use crate::rng::Rng;

/// A closed interval a parameter is drawn from uniformly; `lo == hi` pins it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRange {
    pub lo: f64,
    pub hi: f64,
}

impl ParamRange {
    pub fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    fn draw(&self, rng: &mut Rng) -> f64 {
        rng.uniform_range(self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionConfig {
    /// Probability that any corruption is applied.
    pub p: f64,
    /// Motion blur length `d` (odd).
    pub motion_degree: usize,
    /// Motion angle in radians.
    pub motion_angle: ParamRange,
    pub gaussian_sigma: ParamRange,
    /// Gaussian truncation radius; `None` means `ceil(3 sigma)`.
    pub gaussian_radius: Option<usize>,
    /// Probability a pixel is forced to 0.
    pub salt: f64,
    /// Probability a pixel is forced to 255.
    pub pepper: f64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            p: 0.5,
            motion_degree: 7,
            motion_angle: ParamRange {
                lo: 0.0,
                hi: std::f64::consts::PI,
            },
            gaussian_sigma: ParamRange { lo: 0.5, hi: 2.5 },
            gaussian_radius: None,
            salt: 0.02,
            pepper: 0.02,
        }
    }
}

impl CorruptionConfig {
    /// Configuration that never corrupts.
    pub fn disabled() -> Self {
        Self {
            p: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(name, format!("{v} is not a probability")))
            }
        };
        prob("corruption.p", self.p)?;
        prob("corruption.salt", self.salt)?;
        prob("corruption.pepper", self.pepper)?;
        if self.salt + self.pepper > 1.0 {
            return Err(Error::config("corruption.salt", "salt + pepper exceeds 1"));
        }
        if self.motion_degree == 0 || self.motion_degree.is_multiple_of(2) {
            return Err(Error::config("corruption.motion_degree", "must be odd and >= 1"));
        }
        let ranges = [
            ("corruption.motion_angle", self.motion_angle),
            ("corruption.gaussian_sigma", self.gaussian_sigma),
        ];
        for (name, r) in ranges {
            if !(r.lo.is_finite() && r.hi.is_finite() && r.lo <= r.hi) {
                return Err(Error::config(name, "need finite lo <= hi"));
            }
        }
        if self.gaussian_sigma.lo <= 0.0 {
            return Err(Error::config("corruption.gaussian_sigma", "sigma must be > 0"));
        }
        if self.gaussian_radius == Some(0) {
            return Err(Error::config("corruption.gaussian_radius", "must be >= 1"));
        }
        Ok(())
    }
}

/// Motion blur kernel: the `d x d` identity image rotated by `angle` about its
/// center (bilinear, inverse-mapped), renormalized to unit sum.
pub fn motion_blur_kernel(d: usize, angle: f64) -> Result<Kernel> {
    if d == 0 || d.is_multiple_of(2) {
        return Err(Error::InvalidKernel(format!("motion degree {d} must be odd and >= 1")));
    }
    let identity = Image::from_fn(d, d, |x, y| if x == y { 1.0 } else { 0.0 });
    let c = (d / 2) as f64;
    let (s, co) = angle.sin_cos();
    let mut w = Vec::with_capacity(d * d);
    for y in 0..d {
        for x in 0..d {
            let (dx, dy) = (x as f64 - c, y as f64 - c);
            // rotate the output position back by -angle to find its source
            let sx = c + co * dx + s * dy;
            let sy = c - s * dx + co * dy;
            w.push(snap(bilinear_sample(&identity, snap(sx), snap(sy))));
        }
    }
    let total: f64 = w.iter().sum();
    Kernel::new(d, w.into_iter().map(|v| v / total).collect())
}

/// Removes floating-point dust around integers left by `sin`/`cos` of exact
/// right angles.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-12 {
        r
    } else {
        v
    }
}

/// Continuous 2-D Gaussian density `G(u, v; sigma)`.
pub fn gaussian_density(u: f64, v: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    (-(u * u + v * v) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2)
}

/// `(2 radius + 1)^2` Gaussian kernel sampled at integer offsets, unit sum.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Result<Kernel> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidKernel(format!("sigma {sigma} must be > 0")));
    }
    if radius == 0 {
        return Err(Error::InvalidKernel("radius must be >= 1".into()));
    }
    let size = 2 * radius + 1;
    let r = radius as f64;
    let mut w = Vec::with_capacity(size * size);
    for j in 0..size {
        for i in 0..size {
            w.push(gaussian_density(i as f64 - r, j as f64 - r, sigma));
        }
    }
    let total: f64 = w.iter().sum();
    Kernel::new(size, w.into_iter().map(|v| v / total).collect())
}

pub fn default_gaussian_radius(sigma: f64) -> usize {
    ((3.0 * sigma).ceil() as usize).max(1)
}

/// Independently forces each pixel to 0 (probability `salt`) or 255
/// (probability `pepper`). Consumes one draw per pixel in row-major order.
pub fn salt_pepper(img: &Image, salt: f64, pepper: f64, rng: &mut Rng) -> Image {
    let mut out = img.clone();
    for v in out.data_mut() {
        let u = rng.uniform();
        if u < salt {
            *v = 0.0;
        } else if u < salt + pepper {
            *v = 255.0;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    MotionBlur,
    GaussianBlur,
    SaltPepper,
}

impl Corruption {
    pub const ALL: [Corruption; 3] = [
        Corruption::MotionBlur,
        Corruption::GaussianBlur,
        Corruption::SaltPepper,
    ];
}

/// Applies a single corruption, drawing its random parameters from `rng`.
pub fn apply_corruption(img: &Image, op: Corruption, cfg: &CorruptionConfig, rng: &mut Rng) -> Result<Image> {
    match op {
        Corruption::MotionBlur => {
            let k = motion_blur_kernel(cfg.motion_degree, cfg.motion_angle.draw(rng))?;
            Ok(convolve2d(img, &k))
        }
        Corruption::GaussianBlur => {
            let sigma = cfg.gaussian_sigma.draw(rng);
            let radius = cfg.gaussian_radius.unwrap_or_else(|| default_gaussian_radius(sigma));
            Ok(convolve2d(img, &gaussian_kernel(sigma, radius)?))
        }
        Corruption::SaltPepper => Ok(salt_pepper(img, cfg.salt, cfg.pepper, rng)),
    }
}

/// Draws which corruptions to apply: nothing with probability `1 - p`,
/// otherwise `k` uniform in {1, 2, 3} distinct operations in draw order.
pub fn draw_plan(p: f64, rng: &mut Rng) -> Vec<Corruption> {
    if rng.uniform() >= p {
        return Vec::new();
    }
    let k = 1 + rng.below(3);
    let mut pool = Corruption::ALL.to_vec();
    let mut plan = Vec::with_capacity(k);
    for _ in 0..k {
        plan.push(pool.remove(rng.below(pool.len())));
    }
    plan
}

pub fn mixed_corrupt(img: &Image, cfg: &CorruptionConfig, rng: &mut Rng) -> Result<Image> {
    cfg.validate()?;
    let plan = draw_plan(cfg.p, rng);
    let mut out = img.clone();
    for op in plan {
        out = apply_corruption(&out, op, cfg, rng)?;
    }
    Ok(out)
}
