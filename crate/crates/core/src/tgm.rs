//! Texture-guided masking: patches with the most Laplacian energy are
//! hidden from the encoder, the smoothest ones stay visible.

use crate::corrupt::{mixed_corrupt, CorruptionConfig};
use crate::error::{Error, Result};
use crate::imgcore::{convolve2d, patchify, Image, Kernel, PatchGrid};
use crate::rng::Rng;

/// Per-patch texture complexity, row-major patch order.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureAttention {
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPartition {
    masked: Vec<usize>,
    visible: Vec<usize>,
}

impl MaskPartition {
    /// Builds a partition of `0..total` from the masked indices.
    pub fn from_masked(mut masked: Vec<usize>, total: usize) -> Result<Self> {
        masked.sort_unstable();
        masked.dedup();
        if masked.last().is_some_and(|&m| m >= total) {
            return Err(Error::config("mask", "patch index out of range"));
        }
        let visible = (0..total).filter(|i| masked.binary_search(i).is_err()).collect();
        Ok(Self { masked, visible })
    }

    pub fn masked(&self) -> &[usize] {
        &self.masked
    }

    pub fn visible(&self) -> &[usize] {
        &self.visible
    }

    pub fn total(&self) -> usize {
        self.masked.len() + self.visible.len()
    }
}

/// `round(ratio * total)` with halves rounded up.
pub fn mask_count(ratio: f64, total: usize) -> usize {
    ((ratio * total as f64 + 0.5).floor() as usize).min(total)
}

/// Signed discrete Laplacian (4-neighbor stencil, edge replication).
pub fn texture_map(img: &Image) -> Image {
    let stencil = Kernel::new(3, vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0])
        .expect("static stencil");
    convolve2d(img, &stencil)
}

pub fn patch_scores(texture: &Image, patch_h: usize, patch_w: usize) -> Result<TextureAttention> {
    let grid = patchify(texture, patch_h, patch_w)?;
    let scores = grid
        .patches()
        .iter()
        .map(|p| p.iter().map(|v| v.abs()).sum())
        .collect();
    Ok(TextureAttention { scores })
}

/// Masks the `round_half_up(ratio * L)` highest-scoring patches; ties go to
/// the lower patch index.
pub fn select_mask(att: &TextureAttention, ratio: f64) -> Result<MaskPartition> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidRatio(ratio));
    }
    let total = att.scores.len();
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| att.scores[b].total_cmp(&att.scores[a]).then(a.cmp(&b)));
    order.truncate(mask_count(ratio, total));
    MaskPartition::from_masked(order, total)
}

/// Corrupts `img`, then partitions its patches by the corrupted texture.
pub fn apply_uim(
    img: &Image,
    corruption: &CorruptionConfig,
    patch_h: usize,
    patch_w: usize,
    ratio: f64,
    rng: &mut Rng,
) -> Result<(PatchGrid, MaskPartition)> {
    let corrupted = mixed_corrupt(img, corruption, rng)?;
    let att = patch_scores(&texture_map(&corrupted), patch_h, patch_w)?;
    let partition = select_mask(&att, ratio)?;
    Ok((patchify(&corrupted, patch_h, patch_w)?, partition))
}
