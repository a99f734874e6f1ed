//! Scan-mode conversion between linear-array (rectangular) and convex-array
//! (sector) ultrasound images.
//!
//! Both directions are inverse-mapped: every output pixel looks up its
//! source position, so the result has no holes. Angles are measured from
//! the downward vertical through the apex, positive toward +x.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgcore::{bilinear_sample, Image};

/// Convex-probe sector geometry, in output-image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanGeometry {
    pub apex_x: f64,
    pub apex_y: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub half_angle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanMode {
    Linear,
    Convex,
}

impl ScanMode {
    pub fn opposite(self) -> Self {
        match self {
            ScanMode::Linear => ScanMode::Convex,
            ScanMode::Convex => ScanMode::Linear,
        }
    }
}

impl ScanGeometry {
    /// 60 degree sector hanging from the top-center of a `width x height` frame.
    pub fn default_for(width: usize, height: usize) -> Self {
        let h = height as f64;
        Self {
            apex_x: width as f64 / 2.0,
            apex_y: 0.0,
            r_min: 0.08 * h,
            r_max: 0.98 * h,
            half_angle: 30f64.to_radians(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.apex_x, self.apex_y, self.r_min, self.r_max, self.half_angle];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGeometry("non-finite field".into()));
        }
        if self.r_min < 0.0 || self.r_min >= self.r_max {
            return Err(Error::InvalidGeometry(format!(
                "need 0 <= r_min < r_max, got {} and {}",
                self.r_min, self.r_max
            )));
        }
        if !(self.half_angle > 0.0 && self.half_angle < std::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidGeometry(format!(
                "half angle {} outside (0, pi/2)",
                self.half_angle
            )));
        }
        if self.apex_y > 0.0 {
            return Err(Error::InvalidGeometry("apex must lie on or above the top edge".into()));
        }
        Ok(())
    }

    /// Polar coordinates `(r, theta)` of a point relative to the apex.
    pub fn polar(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.apex_x;
        let dy = y - self.apex_y;
        (dx.hypot(dy), dx.atan2(dy))
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (r, theta) = self.polar(x, y);
        r >= self.r_min && r <= self.r_max && theta.abs() <= self.half_angle
    }
}

/// Warps a rectangular image into the sector described by `geom`.
pub fn linear_to_convex(img: &Image, geom: &ScanGeometry, out_w: usize, out_h: usize) -> Result<Image> {
    geom.validate()?;
    check_dims(out_w, out_h)?;
    let col_scale = (img.width() - 1) as f64 / (2.0 * geom.half_angle);
    let row_scale = (img.height() - 1) as f64 / (geom.r_max - geom.r_min);
    Ok(Image::from_fn(out_w, out_h, |x, y| {
        let (r, theta) = geom.polar(x as f64, y as f64);
        if r < geom.r_min || r > geom.r_max || theta.abs() > geom.half_angle {
            return 0.0;
        }
        let u = (theta + geom.half_angle) * col_scale;
        let v = (r - geom.r_min) * row_scale;
        bilinear_sample(img, u, v)
    }))
}

/// Unrolls the sector of a convex image onto an `out_w x out_h` rectangle.
pub fn convex_to_linear(img: &Image, geom: &ScanGeometry, out_w: usize, out_h: usize) -> Result<Image> {
    geom.validate()?;
    check_dims(out_w, out_h)?;
    let dtheta = if out_w > 1 { 2.0 * geom.half_angle / (out_w - 1) as f64 } else { 0.0 };
    let dr = if out_h > 1 { (geom.r_max - geom.r_min) / (out_h - 1) as f64 } else { 0.0 };
    Ok(Image::from_fn(out_w, out_h, |u, v| {
        let theta = -geom.half_angle + u as f64 * dtheta;
        let r = geom.r_min + v as f64 * dr;
        bilinear_sample(img, geom.apex_x + r * theta.sin(), geom.apex_y + r * theta.cos())
    }))
}

fn check_dims(w: usize, h: usize) -> Result<()> {
    if w == 0 || h == 0 {
        return Err(Error::config("output size", "width and height must be at least 1"));
    }
    Ok(())
}

/// Appends the opposite-mode transform of every image, so both modes end up
/// equally represented. Output keeps the input dimensions.
pub fn balance_dataset(items: &[(Image, ScanMode)], geom: &ScanGeometry) -> Result<Vec<(Image, ScanMode)>> {
    let mut out = Vec::with_capacity(items.len() * 2);
    for (img, mode) in items {
        let converted = match mode {
            ScanMode::Linear => linear_to_convex(img, geom, img.width(), img.height())?,
            ScanMode::Convex => convex_to_linear(img, geom, img.width(), img.height())?,
        };
        out.push((converted, mode.opposite()));
    }
    out.extend(items.iter().cloned());
    Ok(out)
}
