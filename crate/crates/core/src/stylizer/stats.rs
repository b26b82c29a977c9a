//! Colour statistics of image regions and symmetric 3×3 matrix functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;
use crate::types::{BinaryMask, Image, Region};

pub type Mat3<T> = [[T; 3]; 3];

/// Channel mean and population covariance of a pixel set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionStats<T: Real = f64> {
    pub mean: [T; 3],
    pub cov: Mat3<T>,
    pub n_pixels: usize,
}

impl<T: Real> RegionStats<T> {
    pub fn from_pixels<I: IntoIterator<Item = [f32; 3]>>(pixels: I) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = [T::zero(); 3];
        let mut sq = [[T::zero(); 3]; 3];
        for p in pixels {
            let v = p.map(|c| T::lit(c as f64));
            for i in 0..3 {
                sum[i] += v[i];
                for j in 0..3 {
                    sq[i][j] += v[i] * v[j];
                }
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyRegion);
        }
        let nt = T::lit(n as f64);
        let mean = sum.map(|s| s / nt);
        let mut cov = [[T::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] = sq[i][j] / nt - mean[i] * mean[j];
            }
        }
        // exact symmetry regardless of rounding order
        for i in 0..3 {
            for j in (i + 1)..3 {
                let s = (cov[i][j] + cov[j][i]) * T::lit(0.5);
                cov[i][j] = s;
                cov[j][i] = s;
            }
        }
        Ok(Self { mean, cov, n_pixels: n })
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().chain(self.cov.iter().flatten()).all(|v| v.is_finite())
    }
}

pub fn region_stats<T: Real>(image: &Image, mask: &BinaryMask, region: Region) -> Result<RegionStats<T>> {
    if mask.height() != image.height() || mask.width() != image.width() {
        return Err(Error::Dimension("mask and image differ in size".into()));
    }
    RegionStats::from_pixels(image.pixels().zip(mask.as_slice()).filter(|(_, &m)| region.contains(m)).map(|(p, _)| p))
}

pub fn image_stats<T: Real>(image: &Image) -> Result<RegionStats<T>> {
    RegionStats::from_pixels(image.pixels())
}

/// Eigen-decomposition of a symmetric 3×3 matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and the matrix whose columns are the eigenvectors.
pub fn sym_eigen<T: Real>(m: &Mat3<T>) -> ([T; 3], Mat3<T>) {
    let mut a = *m;
    let mut v = identity::<T>();
    let two = T::lit(2.0);
    for _sweep in 0..50 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        let scale = a[0][0].abs() + a[1][1].abs() + a[2][2].abs();
        if off <= T::epsilon() * scale * T::lit(1e-3) || off == T::zero() {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == T::zero() {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (two * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
            let c = T::one() / (t * t + T::one()).sqrt();
            let s = t * c;
            // a <- Jᵀ a J
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let vkp = row[p];
                let vkq = row[q];
                row[p] = c * vkp - s * vkq;
                row[q] = s * vkp + c * vkq;
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2]], v)
}

/// `C^power` through the eigenbasis, eigenvalues clamped to at least `floor`.
pub fn sym_power<T: Real>(m: &Mat3<T>, power: f64, floor: T) -> Mat3<T> {
    let (vals, vecs) = sym_eigen(m);
    let p = T::lit(power);
    let f = vals.map(|l| l.max(floor).powf(p));
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut s = T::zero();
            for k in 0..3 {
                s += vecs[i][k] * f[k] * vecs[j][k];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn identity<T: Real>() -> Mat3<T> {
    let mut m = [[T::zero(); 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = T::one();
    }
    m
}

pub fn matmul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

pub fn matvec<T: Real>(a: &Mat3<T>, v: &[T; 3]) -> [T; 3] {
    let mut out = [T::zero(); 3];
    for i in 0..3 {
        for k in 0..3 {
            out[i] += a[i][k] * v[k];
        }
    }
    out
}

/// Frobenius norm of `a - b` divided by that of `b`.
pub fn rel_frobenius<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let d = (a[i][j] - b[i][j]).as_f64();
            num += d * d;
            den += b[i][j].as_f64().powi(2);
        }
    }
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_region() {
        let img = Image::filled(3, 3, [0.2, 0.4, 0.6]);
        let mask = BinaryMask::filled(3, 3, true);
        let s = region_stats::<f64>(&img, &mask, Region::Fg).unwrap();
        for (m, want) in s.mean.iter().zip([0.2, 0.4, 0.6]) {
            assert!((m - want).abs() < 1e-7);
        }
        assert!(s.cov.iter().flatten().all(|v| v.abs() < 1e-12));
        assert_eq!(s.n_pixels, 9);
    }

    #[test]
    fn two_pixel_population_covariance() {
        let img = Image::<f32>::new(1, 2, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let s = image_stats::<f64>(&img).unwrap();
        assert_eq!(s.mean, [0.5; 3]);
        assert!(s.cov.iter().flatten().all(|&v| v == 0.25));
    }

    #[test]
    fn empty_region() {
        let img = Image::filled(2, 2, [0.5; 3]);
        let mask = BinaryMask::filled(2, 2, false);
        assert!(matches!(region_stats::<f64>(&img, &mask, Region::Fg), Err(Error::EmptyRegion)));
        assert!(region_stats::<f64>(&img, &mask, Region::Bg).is_ok());
    }

    #[test]
    fn eigen_reconstructs() {
        let m = [[2.0, 0.5, 0.1], [0.5, 1.0, -0.3], [0.1, -0.3, 0.5]];
        let (vals, vecs) = sym_eigen(&m);
        for i in 0..3 {
            for j in 0..3 {
                let r: f64 = (0..3).map(|k| vecs[i][k] * vals[k] * vecs[j][k]).sum();
                assert!((r - m[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn square_root_squares_back() {
        let m = [[0.04, 0.01, 0.0], [0.01, 0.03, 0.005], [0.0, 0.005, 0.02]];
        let r = sym_power(&m, 0.5, 1e-12);
        let back = matmul(&r, &r);
        assert!(rel_frobenius(&back, &m) < 1e-10);
        let inv = sym_power(&m, -0.5, 1e-12);
        let id = matmul(&matmul(&inv, &m), &inv);
        assert!(rel_frobenius(&id, &identity()) < 1e-10);
    }
}
