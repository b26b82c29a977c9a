//! Closed-form whitening–colouring transform in RGB space.

use crate::error::{Error, Result};
use crate::num::Real;
use crate::stylizer::stats::{matmul, matvec, sym_power, Mat3, RegionStats};

/// Affine map `p ↦ A (p − μc) + μs` with `A = Cs^{1/2} Cc^{−1/2}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WctMap<T: Real = f64> {
    pub matrix: Mat3<T>,
    pub content_mean: [T; 3],
    pub style_mean: [T; 3],
}

impl<T: Real> WctMap<T> {
    pub fn new(content: &RegionStats<T>, style: &RegionStats<T>, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Config(format!("wct epsilon must be > 0, got {epsilon}")));
        }
        if !content.is_finite() || !style.is_finite() {
            return Err(Error::NonFinite("region statistics".into()));
        }
        let eps = T::lit(epsilon);
        let whiten = sym_power(&content.cov, -0.5, eps);
        let color = sym_power(&style.cov, 0.5, eps);
        let matrix = matmul(&color, &whiten);
        if matrix.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("transfer matrix".into()));
        }
        Ok(Self { matrix, content_mean: content.mean, style_mean: style.mean })
    }

    pub fn apply_unclipped(&self, p: [T; 3]) -> [T; 3] {
        let d = [0, 1, 2].map(|c| p[c] - self.content_mean[c]);
        let o = matvec(&self.matrix, &d);
        [0, 1, 2].map(|c| o[c] + self.style_mean[c])
    }

    pub fn apply(&self, p: [T; 3]) -> [T; 3] {
        self.apply_unclipped(p).map(|v| v.max(T::zero()).min(T::one()))
    }
}

/// Recolours `pixels` from the content statistics to the style statistics;
/// outputs are clipped to `[0, 1]`.
pub fn wct_transfer<T: Real>(
    pixels: &[[T; 3]],
    content: &RegionStats<T>,
    style: &RegionStats<T>,
    epsilon: f64,
) -> Result<Vec<[T; 3]>> {
    let map = WctMap::new(content, style, epsilon)?;
    Ok(pixels.iter().map(|&p| map.apply(p)).collect())
}
