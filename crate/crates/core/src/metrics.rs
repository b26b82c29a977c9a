//! IoU and mIoU between binary masks.
//!
//! Conventions: mIoU averages exactly two classes (foreground and
//! background), and a class absent from both masks scores IoU 1.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::nn::Segmenter;
use crate::types::{BinaryMask, Region};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IoUReport {
    pub iou_fg: f64,
    pub iou_bg: f64,
    pub miou: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Counts {
    fg_inter: usize,
    fg_union: usize,
    bg_inter: usize,
    bg_union: usize,
}

fn counts(a: &BinaryMask, b: &BinaryMask) -> Result<Counts> {
    a.same_shape(b)?;
    let mut c = Counts::default();
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        c.fg_inter += (x && y) as usize;
        c.fg_union += (x || y) as usize;
        c.bg_inter += (!x && !y) as usize;
        c.bg_union += (!x || !y) as usize;
    }
    Ok(c)
}

fn ratio(inter: usize, union: usize) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn iou(a: &BinaryMask, b: &BinaryMask, class: Region) -> Result<f64> {
    let c = counts(a, b)?;
    Ok(match class {
        Region::Fg => ratio(c.fg_inter, c.fg_union),
        Region::Bg => ratio(c.bg_inter, c.bg_union),
    })
}

pub fn miou(a: &BinaryMask, b: &BinaryMask) -> Result<IoUReport> {
    let c = counts(a, b)?;
    let iou_fg = ratio(c.fg_inter, c.fg_union);
    let iou_bg = ratio(c.bg_inter, c.bg_union);
    Ok(IoUReport { iou_fg, iou_bg, miou: (iou_fg + iou_bg) / 2.0 })
}

/// Per-sample row of an evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: String,
    #[serde(flatten)]
    pub report: IoUReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub mean_miou: f64,
    pub per_sample: Vec<SampleScore>,
}

impl Evaluation {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["sample_id", "iou_fg", "iou_bg", "miou"])?;
        for s in &self.per_sample {
            w.write_record([
                s.sample_id.clone(),
                s.report.iou_fg.to_string(),
                s.report.iou_bg.to_string(),
                s.report.miou.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Thresholds each prediction at `threshold` and averages per-sample mIoU.
pub fn evaluate_detailed<M: Segmenter + ?Sized>(model: &M, split: &[Sample], threshold: f32) -> Result<Evaluation> {
    if split.is_empty() {
        return Err(Error::Empty("evaluation split".into()));
    }
    let mut per_sample = Vec::with_capacity(split.len());
    for s in split {
        let gt = s.mask()?;
        let pred = model.predict(&s.image)?.threshold(threshold);
        per_sample.push(SampleScore { sample_id: s.sample_id.clone(), report: miou(&pred, gt)? });
    }
    let mean_miou = per_sample.iter().map(|s| s.report.miou).sum::<f64>() / per_sample.len() as f64;
    Ok(Evaluation { mean_miou, per_sample })
}

pub fn evaluate_model<M: Segmenter + ?Sized>(model: &M, split: &[Sample], threshold: f32) -> Result<f64> {
    evaluate_detailed(model, split, threshold).map(|e| e.mean_miou)
}
