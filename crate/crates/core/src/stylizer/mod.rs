//! Foreground-aware stylization of source images with target appearance.
//!
//! The aligned transfer recolours the source foreground with the statistics
//! of the style image's foreground and, independently, the source background
//! with the style background. The unaligned variant uses whole-image
//! statistics on both sides. Both run through [`StyleBackend`], so a learned
//! encoder/decoder can replace the closed-form transfer.

pub mod normalize;
pub mod stats;
pub mod wct;

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSplit, Sample};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::types::{BinaryMask, Image, Region};

pub use normalize::{normalize_baseline, NormMethod};
pub use stats::{image_stats, region_stats, RegionStats};
pub use wct::{wct_transfer, WctMap};

pub trait StyleBackend {
    fn stylize(&self, source: &Sample, style: &Sample) -> Result<Image>;
}

/// Closed-form region WCT.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionWct {
    pub epsilon: f64,
    pub aligned: bool,
}

impl StyleBackend for RegionWct {
    fn stylize(&self, source: &Sample, style: &Sample) -> Result<Image> {
        if self.aligned {
            stylize_aligned(source, style, self.epsilon)
        } else {
            stylize_unaligned(source, style, self.epsilon)
        }
    }
}

// Style statistics for one region, falling back to the whole style image
// when the style mask leaves the region empty.
fn style_region_stats(style: &Sample, mask: &BinaryMask, region: Region) -> Result<RegionStats> {
    match region_stats(&style.image, mask, region) {
        Err(Error::EmptyRegion) => {
            warn!("style {} has an empty {region:?} region; using whole-image statistics", style.sample_id);
            image_stats(&style.image)
        }
        other => other,
    }
}

/// Separate transfers for foreground and background pixels.
pub fn stylize_aligned(source: &Sample, style: &Sample, epsilon: f64) -> Result<Image> {
    let src_mask = source.mask()?;
    let sty_mask = style.mask()?;
    let mut out = source.image.clone();
    for region in [Region::Fg, Region::Bg] {
        let content = match region_stats::<f64>(&source.image, src_mask, region) {
            Ok(s) => s,
            // nothing to recolour in this region
            Err(Error::EmptyRegion) => continue,
            Err(e) => return Err(e),
        };
        let target = style_region_stats(style, sty_mask, region)?;
        let map = WctMap::new(&content, &target, epsilon)?;
        for (i, &m) in src_mask.as_slice().iter().enumerate() {
            if region.contains(m) {
                let p = source.image.pixel(i).map(|v| v as f64);
                out.set_pixel(i, map.apply(p).map(|v| v as f32));
            }
        }
    }
    Ok(out)
}

/// One whole-image transfer; masks are ignored.
pub fn stylize_unaligned(source: &Sample, style: &Sample, epsilon: f64) -> Result<Image> {
    let content = image_stats::<f64>(&source.image)?;
    let target = image_stats::<f64>(&style.image)?;
    let map = WctMap::new(&content, &target, epsilon)?;
    let mut out = source.image.clone();
    for i in 0..out.n_pixels() {
        let p = source.image.pixel(i).map(|v| v as f64);
        out.set_pixel(i, map.apply(p).map(|v| v as f32));
    }
    Ok(out)
}

/// Labeled target images used as styles, grouped by domain.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StylePool {
    pub samples: Vec<Sample>,
    pub per_domain: BTreeMap<String, Vec<usize>>,
}

impl StylePool {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let mut per_domain: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            s.mask()?;
            per_domain.entry(s.domain_id.clone()).or_default().push(i);
        }
        Ok(Self { samples, per_domain })
    }

    /// Draws `n_per_domain` distinct labeled images from each target's train
    /// split (all of them when fewer are available).
    pub fn sample_from(targets: &[&DatasetSplit], n_per_domain: usize, rng: &SeededRng) -> Result<Self> {
        let mut samples = Vec::new();
        for t in targets {
            let mut labeled: Vec<&Sample> = t.train.iter().filter(|s| s.mask.is_some()).collect();
            if labeled.is_empty() {
                return Err(Error::Empty(format!("no labeled train images in {}", t.domain_id)));
            }
            labeled.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
            let mut r = rng.named(&format!("style-pool/{}", t.domain_id));
            r.shuffle(&mut labeled);
            samples.extend(labeled.into_iter().take(n_per_domain).cloned());
        }
        Self::new(samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.samples.iter().map(|s| s.sample_id.as_str()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source_id: String,
    pub style_id: String,
    pub seed: u64,
}

/// Stylizes every source train sample with a style drawn uniformly from the
/// pool. Labels are copied unchanged; the test split is carried over as is.
pub fn build_style_adapted_dataset<B: StyleBackend + ?Sized>(
    source: &DatasetSplit,
    pool: &StylePool,
    backend: &B,
    rng: &SeededRng,
) -> Result<(DatasetSplit, Vec<ManifestEntry>)> {
    if pool.is_empty() {
        return Err(Error::Empty("style pool".into()));
    }
    let mut train = Vec::with_capacity(source.train.len());
    let mut manifest = Vec::with_capacity(source.train.len());
    for s in &source.train {
        // per-sample stream: independent of iteration order
        let mut r = rng.named(&s.sample_id);
        let style = &pool.samples[r.below(pool.len())];
        let image = backend.stylize(s, style)?;
        train.push(Sample {
            image,
            mask: s.mask.clone(),
            domain_id: format!("{}+style", source.domain_id),
            sample_id: format!("{}~{}", s.sample_id, style.sample_id),
        });
        manifest.push(ManifestEntry {
            source_id: s.sample_id.clone(),
            style_id: style.sample_id.clone(),
            seed: rng.seed(),
        });
    }
    let split = DatasetSplit { train, test: source.test.clone(), domain_id: format!("{}+style", source.domain_id) };
    Ok((split, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn two_region(fg: [f32; 3], bg: [f32; 3], id: &str) -> Sample {
        let mask = BinaryMask::from_fn(4, 4, |y, _| y < 2);
        let data = (0..16).flat_map(|i| if i < 8 { fg } else { bg }).collect();
        Sample::labeled(Image::new(4, 4, data).unwrap(), mask, "d", id).unwrap()
    }

    #[test]
    fn constant_regions_take_style_means() {
        let src = two_region([0.2; 3], [0.6; 3], "s");
        let sty = two_region([0.8, 0.1, 0.1], [0.1, 0.3, 0.9], "t");
        let out = stylize_aligned(&src, &sty, 1e-5).unwrap();
        for i in 0..16 {
            let want = if i < 8 { [0.8, 0.1, 0.1] } else { [0.1, 0.3, 0.9] };
            let got = out.pixel(i);
            for c in 0..3 {
                assert!((got[c] - want[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn empty_style_fg_falls_back() {
        let src = two_region([0.2; 3], [0.6; 3], "s");
        let img = Image::filled(4, 4, [0.5, 0.5, 0.5]);
        let sty = Sample::labeled(img, BinaryMask::filled(4, 4, false), "d", "t").unwrap();
        let out = stylize_aligned(&src, &sty, 1e-5).unwrap();
        assert!((out.pixel(0)[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn unaligned_uses_global_mean() {
        // style: dark fg over bright bg; global mean 0.5
        let src = two_region([0.3; 3], [0.3; 3], "s");
        let sty = two_region([0.1; 3], [0.9; 3], "t");
        let out = stylize_unaligned(&src, &sty, 1e-5).unwrap();
        assert!((out.pixel(0)[0] - 0.5).abs() < 1e-6);
        let aligned = stylize_aligned(&src, &sty, 1e-5).unwrap();
        assert!((aligned.pixel(0)[0] - 0.1).abs() < 1e-6);
        assert!(out.max_abs_diff(&aligned) > 0.3);
    }

    #[test]
    fn pool_requires_masks() {
        let s = Sample::unlabeled(Image::filled(2, 2, [0.1; 3]), "d", "x");
        assert!(StylePool::new(vec![s]).is_err());
    }

    #[test]
    fn empty_pool_is_error() {
        let src = DatasetSplit::new("s", vec![two_region([0.2; 3], [0.6; 3], "a")], vec![]).unwrap();
        let backend = RegionWct { epsilon: 1e-5, aligned: true };
        assert!(build_style_adapted_dataset(&src, &StylePool::default(), &backend, &seeded_rng(0)).is_err());
    }
}
