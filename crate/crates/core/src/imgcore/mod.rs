//! Grayscale image container, patch tiling, convolution and sampling.

mod pgm;

pub use pgm::{decode_pgm, encode_pgm, quantized, read_pgm, write_pgm};

use crate::error::{Error, Result};

/// Row-major grayscale image with `f64` intensities, nominally in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::config("image", "width and height must be at least 1"));
        }
        if data.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("pixel value {v}")));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel lookup with coordinates clamped to the image (edge replication).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.get(cx, cy)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// An image cut into equally sized patches, stored in row-major patch order.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    patch_h: usize,
    patch_w: usize,
    rows: usize,
    cols: usize,
    patches: Vec<Vec<f64>>,
}

impl PatchGrid {
    pub fn from_patches(
        patch_h: usize,
        patch_w: usize,
        rows: usize,
        cols: usize,
        patches: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if patches.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: rows * cols,
                actual: patches.len(),
            });
        }
        if let Some(p) = patches.iter().find(|p| p.len() != patch_h * patch_w) {
            return Err(Error::ShapeMismatch {
                expected: patch_h * patch_w,
                actual: p.len(),
            });
        }
        Ok(Self {
            patch_h,
            patch_w,
            rows,
            cols,
            patches,
        })
    }

    pub fn patch_h(&self) -> usize {
        self.patch_h
    }

    pub fn patch_w(&self) -> usize {
        self.patch_w
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of patches `L`.
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Pixels per patch `N`.
    pub fn patch_dim(&self) -> usize {
        self.patch_h * self.patch_w
    }

    pub fn patch(&self, index: usize) -> &[f64] {
        &self.patches[index]
    }

    pub fn patch_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.patches[index]
    }

    pub fn patches(&self) -> &[Vec<f64>] {
        &self.patches
    }
}

/// Square odd-sized convolution kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size.is_multiple_of(2) {
            return Err(Error::InvalidKernel(format!("size {size} is not odd")));
        }
        if weights.len() != size * size {
            return Err(Error::InvalidKernel(format!(
                "expected {} weights, got {}",
                size * size,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidKernel("non-finite weight".into()));
        }
        Ok(Self { size, weights })
    }

    pub fn identity() -> Self {
        Self {
            size: 1,
            weights: vec![1.0],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at column `i`, row `j`.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.weights[j * self.size + i]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Splits `img` into `patch_h x patch_w` tiles in row-major order.
pub fn patchify(img: &Image, patch_h: usize, patch_w: usize) -> Result<PatchGrid> {
    if patch_h == 0 || patch_w == 0 || !img.height.is_multiple_of(patch_h) || !img.width.is_multiple_of(patch_w) {
        return Err(Error::NonDivisible {
            width: img.width,
            height: img.height,
            patch_w,
            patch_h,
        });
    }
    let rows = img.height / patch_h;
    let cols = img.width / patch_w;
    let mut patches = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut p = Vec::with_capacity(patch_h * patch_w);
            for y in r * patch_h..(r + 1) * patch_h {
                let start = y * img.width + c * patch_w;
                p.extend_from_slice(&img.data[start..start + patch_w]);
            }
            patches.push(p);
        }
    }
    Ok(PatchGrid {
        patch_h,
        patch_w,
        rows,
        cols,
        patches,
    })
}

/// Inverse of [`patchify`].
pub fn depatchify(grid: &PatchGrid) -> Image {
    let width = grid.cols * grid.patch_w;
    let height = grid.rows * grid.patch_h;
    let mut data = vec![0.0; width * height];
    for (index, p) in grid.patches.iter().enumerate() {
        let (r, c) = (index / grid.cols, index % grid.cols);
        for py in 0..grid.patch_h {
            let start = (r * grid.patch_h + py) * width + c * grid.patch_w;
            data[start..start + grid.patch_w]
                .copy_from_slice(&p[py * grid.patch_w..(py + 1) * grid.patch_w]);
        }
    }
    Image { width, height, data }
}

/// Sliding-window weighted sum with edge replication at the borders.
///
/// `out(x, y) = sum_{i,j} k(i, j) * img(x + i - r, y + j - r)`. Every kernel
/// built in this crate is point-symmetric, so this coincides with true
/// convolution.
pub fn convolve2d(img: &Image, kernel: &Kernel) -> Image {
    let r = kernel.radius() as isize;
    let k = kernel.size;
    let mut out = Vec::with_capacity(img.data.len());
    for y in 0..img.height as isize {
        for x in 0..img.width as isize {
            let mut acc = 0.0;
            for j in 0..k {
                let sy = y + j as isize - r;
                for i in 0..k {
                    let w = kernel.weights[j * k + i];
                    if w != 0.0 {
                        acc += w * img.get_clamped(x + i as isize - r, sy);
                    }
                }
            }
            out.push(acc);
        }
    }
    Image {
        width: img.width,
        height: img.height,
        data: out,
    }
}

/// Bilinear interpolation at a real-valued position. Positions outside
/// `[0, W-1] x [0, H-1]` read as background (0).
pub fn bilinear_sample(img: &Image, x: f64, y: f64) -> f64 {
    let max_x = (img.width - 1) as f64;
    let max_y = (img.height - 1) as f64;
    if !(0.0..=max_x).contains(&x) || !(0.0..=max_y).contains(&y) {
        return 0.0;
    }
    let x0 = (x.floor() as usize).min(img.width - 1);
    let y0 = (y.floor() as usize).min(img.height - 1);
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
    let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}
