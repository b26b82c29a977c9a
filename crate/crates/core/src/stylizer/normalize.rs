//! Classical appearance normalizations used as baselines.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMethod {
    Gray,
    HistEq,
    /// Per-channel mean/std matching to a reference.
    Fdm,
    /// Per-channel histogram (quantile) matching to a reference.
    HistMatch,
}

impl NormMethod {
    pub fn needs_reference(self) -> bool {
        matches!(self, NormMethod::Fdm | NormMethod::HistMatch)
    }
}

impl FromStr for NormMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gray" => Ok(Self::Gray),
            "hist_eq" => Ok(Self::HistEq),
            "fdm" => Ok(Self::Fdm),
            "hist_match" => Ok(Self::HistMatch),
            _ => Err(Error::Unknown { kind: "normalization", name: s.into() }),
        }
    }
}

const BINS: usize = 256;

pub fn normalize_baseline(image: &Image, method: NormMethod, reference: Option<&Image>) -> Result<Image> {
    let reference = match (method.needs_reference(), reference) {
        (true, None) => return Err(Error::Config(format!("{method:?} needs a reference image"))),
        (_, r) => r,
    };
    let (h, w) = (image.height(), image.width());
    let mut planes = channels(image);
    match method {
        NormMethod::Gray => {
            let lum: Vec<f32> =
                (0..h * w).map(|i| 0.299 * planes[0][i] + 0.587 * planes[1][i] + 0.114 * planes[2][i]).collect();
            planes = [lum.clone(), lum.clone(), lum];
        }
        NormMethod::HistEq => {
            for p in &mut planes {
                equalize(p);
            }
        }
        NormMethod::Fdm => {
            let refp = channels(reference.expect("checked"));
            for (p, r) in planes.iter_mut().zip(&refp) {
                let (m, s) = moments(p);
                let (rm, rs) = moments(r);
                for v in p.iter_mut() {
                    let z = if s > 0.0 { (*v as f64 - m) / s } else { 0.0 };
                    *v = (z * rs + rm) as f32;
                }
            }
        }
        NormMethod::HistMatch => {
            let refp = channels(reference.expect("checked"));
            for (p, r) in planes.iter_mut().zip(&refp) {
                match_histogram(p, r);
            }
        }
    }
    let data = (0..h * w).flat_map(|i| [planes[0][i], planes[1][i], planes[2][i]]).collect();
    Image::from_clipped(h, w, data)
}

fn channels(image: &Image) -> [Vec<f32>; 3] {
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    for p in image.pixels() {
        for c in 0..3 {
            out[c].push(p[c]);
        }
    }
    out
}

fn moments(v: &[f32]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn bin(v: f32) -> usize {
    ((v.clamp(0.0, 1.0) * (BINS - 1) as f32).round() as usize).min(BINS - 1)
}

fn cdf(v: &[f32]) -> [usize; BINS] {
    let mut hist = [0usize; BINS];
    for &x in v {
        hist[bin(x)] += 1;
    }
    let mut acc = 0;
    for h in hist.iter_mut() {
        acc += *h;
        *h = acc;
    }
    hist
}

fn equalize(v: &mut [f32]) {
    let c = cdf(v);
    let n = v.len();
    let cmin = c.iter().copied().find(|&x| x > 0).unwrap_or(0);
    if n == cmin {
        return; // constant channel
    }
    for x in v.iter_mut() {
        *x = (c[bin(*x)] - cmin) as f32 / (n - cmin) as f32;
    }
}

fn match_histogram(v: &mut [f32], reference: &[f32]) {
    let src = cdf(v);
    let refc = cdf(reference);
    let (n, m) = (v.len() as f64, reference.len() as f64);
    let mut lut = [0f32; BINS];
    let mut j = 0;
    for (b, slot) in lut.iter_mut().enumerate() {
        let q = src[b] as f64 / n;
        while j < BINS - 1 && (refc[j] as f64 / m) < q {
            j += 1;
        }
        *slot = j as f32 / (BINS - 1) as f32;
    }
    for x in v.iter_mut() {
        *x = lut[bin(*x)];
    }
}
