//! Raster value types: RGB images, binary masks and probability maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;

/// Dense `height × width × 3` image, row-major with interleaved channels,
/// values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T: Real = f32> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Dimension(format!(
                "image {height}x{width} needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < T::zero() || **v > T::one()) {
            return Err(Error::NonFinite(format!("image value {v} outside [0,1]")));
        }
        Ok(Self { height, width, data })
    }

    /// Builds an image, clipping every value into `[0, 1]` (NaN becomes 0).
    pub fn from_clipped(height: usize, width: usize, mut data: Vec<T>) -> Result<Self> {
        for v in &mut data {
            *v = clip01(*v);
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, rgb: [T; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::from_clipped(height, width, data).expect("filled image is valid")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn pixel(&self, idx: usize) -> [T; 3] {
        let p = &self.data[idx * 3..idx * 3 + 3];
        [p[0], p[1], p[2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [T; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Replaces pixel `idx`, clipping to `[0, 1]`.
    pub fn set_pixel(&mut self, idx: usize, rgb: [T; 3]) {
        for c in 0..3 {
            self.data[idx * 3 + c] = clip01(rgb[c]);
        }
    }

    /// Planar `3 × H × W` copy used as network input.
    pub fn to_planar(&self) -> Vec<T> {
        let n = self.n_pixels();
        let mut out = vec![T::zero(); 3 * n];
        for (i, p) in self.pixels().enumerate() {
            for c in 0..3 {
                out[c * n + i] = p[c];
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image { height: self.height, width: self.width, data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }

    pub fn max_abs_diff(&self, other: &Image<T>) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a.as_f64() - b.as_f64()).abs()).fold(0.0, f64::max)
    }
}

fn clip01<T: Real>(v: T) -> T {
    if v.is_nan() {
        T::zero()
    } else {
        v.max(T::zero()).min(T::one())
    }
}

/// Boolean grid, `true` marks foreground.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self { height, width, data: vec![value; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count_fg(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn fg_fraction(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count_fg() as f64 / self.data.len() as f64
        }
    }

    pub fn same_shape(&self, other: &BinaryMask) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::Dimension(format!(
                "masks {}x{} and {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect();
        Ok(BinaryMask { height: self.height, width: self.width, data })
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask { height: self.height, width: self.width, data: self.data.iter().map(|v| !v).collect() }
    }

    /// True when every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.len() == other.data.len() && self.data.iter().zip(&other.data).all(|(a, b)| !a || *b)
    }
}

/// Per-pixel foreground probability.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap<T: Real = f32> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> ProbMap<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "prob map {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < T::zero() || **v > T::one()) {
            return Err(Error::NonFinite(format!("probability {v} outside [0,1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, p: T) -> Self {
        Self::new(height, width, vec![p; height * width]).expect("valid probability")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Strict threshold: foreground where `p > t`.
    pub fn threshold(&self, t: T) -> BinaryMask {
        BinaryMask { height: self.height, width: self.width, data: self.data.iter().map(|&p| p > t).collect() }
    }
}

impl ProbMap<f32> {
    /// Probability map that is exactly 1 on the mask and 0 elsewhere.
    pub fn from_mask(mask: &BinaryMask) -> Self {
        let data = mask.as_slice().iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        Self { height: mask.height(), width: mask.width(), data }
    }
}

/// Axis selector for per-region operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Fg,
    Bg,
}

impl Region {
    pub fn contains(self, mask_value: bool) -> bool {
        match self {
            Region::Fg => mask_value,
            Region::Bg => !mask_value,
        }
    }
}
