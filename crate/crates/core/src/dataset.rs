//! Samples, dataset splits and the on-disk dataset layout
//! `root/{train,test}/{images,masks}/<name>.png`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::types::{BinaryMask, Image};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub mask: Option<BinaryMask>,
    pub domain_id: String,
    pub sample_id: String,
}

impl Sample {
    pub fn labeled(image: Image, mask: BinaryMask, domain_id: &str, sample_id: &str) -> Result<Self> {
        if mask.height() != image.height() || mask.width() != image.width() {
            return Err(Error::Dimension(format!("mask/image mismatch for {sample_id}")));
        }
        Ok(Self { image, mask: Some(mask), domain_id: domain_id.into(), sample_id: sample_id.into() })
    }

    pub fn unlabeled(image: Image, domain_id: &str, sample_id: &str) -> Self {
        Self { image, mask: None, domain_id: domain_id.into(), sample_id: sample_id.into() }
    }

    pub fn mask(&self) -> Result<&BinaryMask> {
        self.mask.as_ref().ok_or_else(|| Error::Unlabeled(self.sample_id.clone()))
    }

    /// Copy without the label, as seen by unsupervised adaptation.
    pub fn without_label(&self) -> Sample {
        Sample { mask: None, ..self.clone() }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub domain_id: String,
}

impl DatasetSplit {
    pub fn new(domain_id: &str, train: Vec<Sample>, test: Vec<Sample>) -> Result<Self> {
        let split = Self { train, test, domain_id: domain_id.into() };
        split.check_disjoint()?;
        Ok(split)
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let train: HashSet<&str> = self.train.iter().map(|s| s.sample_id.as_str()).collect();
        if let Some(s) = self.test.iter().find(|s| train.contains(s.sample_id.as_str())) {
            return Err(Error::Leakage(format!("sample {} in both train and test", s.sample_id)));
        }
        Ok(())
    }

    pub fn resolution(&self) -> Option<(usize, usize)> {
        self.train.iter().chain(&self.test).next().map(|s| (s.image.height(), s.image.width()))
    }
}

/// How a directory tree is ingested.
#[derive(Clone, Copy, Debug)]
pub struct DatasetLayout {
    /// Square working resolution every image is resized to.
    pub resolution: usize,
    /// Whether train images must have masks. Test images always need them.
    pub train_labeled: bool,
}

impl Default for DatasetLayout {
    fn default() -> Self {
        Self { resolution: 256, train_labeled: true }
    }
}

pub const MASK_THRESHOLD: u8 = 127;

pub fn load_dataset(root: &Path, layout: DatasetLayout) -> Result<DatasetSplit> {
    if layout.resolution < 1 {
        return Err(Error::Config("resolution must be positive".into()));
    }
    let domain_id = root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into());
    let train = load_part(root, "train", &domain_id, layout.resolution, layout.train_labeled)?;
    let test = load_part(root, "test", &domain_id, layout.resolution, true)?;
    DatasetSplit::new(&domain_id, train, test)
}

fn load_part(root: &Path, part: &str, domain_id: &str, res: usize, labeled: bool) -> Result<Vec<Sample>> {
    let image_dir = root.join(part).join("images");
    if !image_dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut names: Vec<PathBuf> = std::fs::read_dir(&image_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    names.sort();
    let mut samples = Vec::with_capacity(names.len());
    for path in names {
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let image = read_rgb(&path, res)?;
        let sample_id = format!("{domain_id}:{part}/{stem}");
        let mask_path = root.join(part).join("masks").join(path.file_name().unwrap_or_default());
        let mask = if mask_path.is_file() {
            Some(read_mask(&mask_path, res)?)
        } else if labeled {
            return Err(Error::MissingMask(mask_path));
        } else {
            None
        };
        samples.push(Sample { image, mask, domain_id: domain_id.into(), sample_id });
    }
    Ok(samples)
}

fn read_rgb(path: &Path, res: usize) -> Result<Image> {
    let img =
        image::open(path).map_err(|e| Error::UnreadableImage { path: path.into(), reason: e.to_string() })?.to_rgb8();
    let img = if img.width() as usize != res || img.height() as usize != res {
        image::imageops::resize(&img, res as u32, res as u32, FilterType::Triangle)
    } else {
        img
    };
    let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    Image::new(res, res, data)
}

fn read_mask(path: &Path, res: usize) -> Result<BinaryMask> {
    let img =
        image::open(path).map_err(|e| Error::UnreadableImage { path: path.into(), reason: e.to_string() })?.to_luma8();
    Ok(binarize_mask(&img, res))
}

/// Nearest-neighbour resize to `res`, then foreground where value > 127.
pub fn binarize_mask(img: &GrayImage, res: usize) -> BinaryMask {
    let img = if img.width() as usize != res || img.height() as usize != res {
        image::imageops::resize(img, res as u32, res as u32, FilterType::Nearest)
    } else {
        img.clone()
    };
    let data = img.as_raw().iter().map(|&v| v > MASK_THRESHOLD).collect();
    BinaryMask::new(res, res, data).expect("resized mask has res*res pixels")
}

pub fn image_to_rgb8(image: &Image) -> RgbImage {
    let raw = image.as_slice().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    RgbImage::from_raw(image.width() as u32, image.height() as u32, raw).expect("buffer sized")
}

pub fn mask_to_gray8(mask: &BinaryMask) -> GrayImage {
    let raw = mask.as_slice().iter().map(|&m| if m { 255 } else { 0 }).collect();
    GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw).expect("buffer sized")
}

/// File stem used when writing a sample (the part after the last `/`).
pub fn sample_stem(sample: &Sample) -> String {
    let id = sample.sample_id.rsplit('/').next().unwrap_or(&sample.sample_id);
    id.replace([':', '\\'], "_")
}

/// Writes a split in the standard layout. Unlabeled samples get no mask file.
pub fn save_dataset(split: &DatasetSplit, root: &Path) -> Result<()> {
    for (part, samples) in [("train", &split.train), ("test", &split.test)] {
        let images = root.join(part).join("images");
        let masks = root.join(part).join("masks");
        std::fs::create_dir_all(&images)?;
        std::fs::create_dir_all(&masks)?;
        for s in samples.iter() {
            let name = format!("{}.png", sample_stem(s));
            image_to_rgb8(&s.image).save(images.join(&name))?;
            if let Some(m) = &s.mask {
                mask_to_gray8(m).save(masks.join(&name))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarization_rule() {
        let g = GrayImage::from_raw(2, 1, vec![127, 128]).unwrap();
        let m = binarize_mask(&g, 2);
        // nearest resize to 2x2 keeps columns
        assert!(!m.get(0, 0));
        assert!(m.get(0, 1));
    }

    #[test]
    fn disjointness_enforced() {
        let img = Image::filled(2, 2, [0.5; 3]);
        let s = Sample::unlabeled(img, "d", "x");
        assert!(DatasetSplit::new("d", vec![s.clone()], vec![s]).is_err());
    }
}
