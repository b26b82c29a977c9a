//! Consensus pseudo-labeling, the naive thresholding baseline and the
//! combined adaptation epoch.
//!
//! A target image gets a pseudo-label only when the thresholded predictions
//! of the model being adapted (M) and a reference model (R) agree with mIoU
//! above `alpha`; the label is then their intersection.

use std::collections::BTreeMap;
use std::io::Write;

use log::warn;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::adversarial::{AdvBranch, AdvStats};
use crate::config::ExperimentConfig;
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::metrics::miou;
use crate::nn::{bce_with_logit_grad, check_finite, OptimState, SegModel};
use crate::num::Real;
use crate::rng::{seeded_rng, SeededRng};
use crate::types::{BinaryMask, ProbMap};

/// Both predictions are binarized at this level before comparison.
pub const CONSENSUS_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelDecision {
    pub accepted: bool,
    pub agreement_miou: f64,
    /// `y1 ∩ y2`, present only when accepted.
    pub label: Option<BinaryMask>,
    pub y1: BinaryMask,
    pub y2: BinaryMask,
}

fn check_alpha(alpha: f64) -> Result<()> {
    // 0 is allowed for analysis sweeps ("accept everything with any overlap")
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0,1], got {alpha}")));
    }
    Ok(())
}

/// Gate on thresholded masks. `accepted` iff agreement mIoU is strictly
/// greater than `alpha`.
pub fn consensus_from_masks(y1: BinaryMask, y2: BinaryMask, alpha: f64) -> Result<PseudoLabelDecision> {
    check_alpha(alpha)?;
    let agreement = miou(&y1, &y2)?.miou;
    let accepted = agreement > alpha;
    let label = if accepted { Some(y1.intersection(&y2)?) } else { None };
    Ok(PseudoLabelDecision { accepted, agreement_miou: agreement, label, y1, y2 })
}

pub fn consensus_label<T: Real>(m_pred: &ProbMap<T>, r_pred: &ProbMap<T>, alpha: f64) -> Result<PseudoLabelDecision> {
    if m_pred.height() != r_pred.height() || m_pred.width() != r_pred.width() {
        return Err(Error::Dimension(format!(
            "prediction shapes differ: {}x{} vs {}x{}",
            m_pred.height(),
            m_pred.width(),
            r_pred.height(),
            r_pred.width()
        )));
    }
    let t = T::lit(CONSENSUS_THRESHOLD);
    consensus_from_masks(m_pred.threshold(t), r_pred.threshold(t), alpha)
}

/// Baseline pseudo-label: `pred > t`, always used.
pub fn naive_pl<T: Real>(pred: &ProbMap<T>, t: f64) -> Result<BinaryMask> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0,1), got {t}")));
    }
    Ok(pred.threshold(T::lit(t)))
}

/// Draws target samples by first picking a domain uniformly, then a sample
/// uniformly within it. With one domain this is plain uniform sampling.
#[derive(Clone, Debug)]
pub struct TargetSampler {
    groups: Vec<(String, Vec<usize>)>,
}

impl TargetSampler {
    pub fn new(targets: &[Sample]) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::Empty("target sample list".into()));
        }
        let mut by_domain: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in targets.iter().enumerate() {
            by_domain.entry(&s.domain_id).or_default().push(i);
        }
        Ok(Self { groups: by_domain.into_iter().map(|(d, v)| (d.to_string(), v)).collect() })
    }

    pub fn n_domains(&self) -> usize {
        self.groups.len()
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.groups.iter().map(|(d, _)| d.as_str())
    }

    pub fn draw(&self, rng: &mut SeededRng) -> usize {
        let (_, g) = &self.groups[rng.below(self.groups.len())];
        g[rng.below(g.len())]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PseudoLabels {
    /// No pseudo-label term; targets only feed the discriminator.
    Off,
    /// Threshold M's own prediction; every target is used.
    Naive { threshold: f64 },
    /// Gate against the reference model.
    Consensus { alpha: f64 },
}

/// The reference model, either fixed or trained alongside M on the labeled
/// source (optionally with its own discriminator).
pub enum Reference<'a, T: Real> {
    None,
    Frozen(&'a SegModel<T>),
    Trainable {
        model: &'a mut SegModel<T>,
        opt: &'a mut OptimState<T>,
        source: &'a [Sample],
        adv: Option<&'a mut AdvBranch<T>>,
    },
}

impl<T: Real> Reference<'_, T> {
    fn model(&self) -> Option<&SegModel<T>> {
        match self {
            Reference::None => None,
            Reference::Frozen(m) => Some(m),
            Reference::Trainable { model, .. } => Some(model),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Mean supervised (style-adapted or source) term per step.
    pub seg_loss: f64,
    /// Mean pseudo-label term over steps that had at least one accepted target.
    pub cpl_loss: f64,
    pub n_accepted: usize,
    pub n_rejected: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adv: Option<AdvStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_seg_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_adv: Option<AdvStats>,
}

/// One adaptation epoch. Each step takes one labeled batch from `labeled`
/// (style-adapted source, or source) and `batch_size` target samples, builds
/// pseudo-labels on the fly with the current M, and makes one optimizer step
/// on `w_seg · BCE(labeled) + w_cpl · mean over accepted targets of BCE`.
#[allow(clippy::too_many_arguments)]
pub fn adapt_epoch<T: Real>(
    model: &mut SegModel<T>,
    opt: &mut OptimState<T>,
    mut reference: Reference<'_, T>,
    labeled: &[Sample],
    targets: &[Sample],
    labels: PseudoLabels,
    mut adv: Option<&mut AdvBranch<T>>,
    cfg: &ExperimentConfig,
    rng: &mut SeededRng,
) -> Result<EpochStats> {
    if labeled.is_empty() {
        return Err(Error::Empty("labeled adaptation set".into()));
    }
    if matches!(labels, PseudoLabels::Consensus { .. }) && reference.model().is_none() {
        return Err(Error::Config("consensus pseudo-labels need a reference model".into()));
    }
    let sampler = TargetSampler::new(targets)?;
    let bs = cfg.batch_size.max(1);
    let res = model.arch().resolution;
    let w_seg = cfg.loss_weights.seg;
    let w_cpl = cfg.loss_weights.cpl;

    // independent streams so optional branches never shift the batch draws
    let epoch = seeded_rng(rng.next_u64());
    let mut ss_rng = epoch.named("labeled");
    let mut tgt_rng = epoch.named("target");
    let mut ref_rng = epoch.named("reference");

    let mut order: Vec<usize> = (0..labeled.len()).collect();
    ss_rng.shuffle(&mut order);

    let mut stats = EpochStats::default();
    let (mut seg_sum, mut cpl_sum, mut cpl_steps, mut steps) = (0.0, 0.0, 0usize, 0usize);
    let mut ref_sum = 0.0;
    let mut grads = vec![T::zero(); model.n_params()];

    for chunk in order.chunks(bs) {
        grads.iter_mut().for_each(|g| *g = T::zero());
        let tgt_idx: Vec<usize> = (0..bs).map(|_| sampler.draw(&mut tgt_rng)).collect();
        let n_disc = chunk.len() + tgt_idx.len();

        // labeled term
        let mut seg = 0.0;
        for &i in chunk {
            let s = &labeled[i];
            let fwd = model.forward(&model.prepare(&s.image)?);
            let (loss, dlog) = bce_with_logit_grad(fwd.probs(), s.mask()?, None, w_seg / chunk.len() as f64)?;
            seg += loss / chunk.len() as f64;
            let dfeat = match adv.as_deref_mut() {
                Some(a) => a.observe(fwd.features(), res, res, false, n_disc)?,
                None => None,
            };
            model.backward(&fwd, &dlog, dfeat.as_deref(), &mut grads);
        }
        if !seg.is_finite() {
            return Err(Error::NonFinite(format!("segmentation loss {seg}")));
        }

        // pseudo-labeled term; the forward pass that builds ŷ¹ is reused for the gradient
        let uses_targets = labels != PseudoLabels::Off || adv.is_some();
        let mut pending = Vec::with_capacity(tgt_idx.len());
        for &i in tgt_idx.iter().filter(|_| uses_targets) {
            let x = &targets[i];
            let fwd = model.forward(&model.prepare(&x.image)?);
            let probs = ProbMap::new(res, res, fwd.probs().to_vec())?;
            let label = match labels {
                PseudoLabels::Off => None,
                PseudoLabels::Naive { threshold } => Some(naive_pl(&probs, threshold)?),
                PseudoLabels::Consensus { alpha } => {
                    let r = reference.model().expect("checked above");
                    consensus_label(&probs, &r.predict_probs(&x.image)?, alpha)?.label
                }
            };
            pending.push((fwd, label));
        }
        let n_acc = pending.iter().filter(|(_, l)| l.is_some()).count();
        stats.n_accepted += n_acc;
        if labels != PseudoLabels::Off {
            stats.n_rejected += pending.len() - n_acc;
        }
        let mut cpl = 0.0;
        for (fwd, label) in &pending {
            let dlog = match label {
                Some(y) => {
                    let (loss, d) = bce_with_logit_grad(fwd.probs(), y, None, w_cpl / n_acc as f64)?;
                    cpl += loss / n_acc as f64;
                    Some(d)
                }
                None => None,
            };
            let dfeat = match adv.as_deref_mut() {
                Some(a) => a.observe(fwd.features(), res, res, true, n_disc)?,
                None => None,
            };
            if dlog.is_none() && dfeat.is_none() {
                continue;
            }
            let zeros;
            let dlog = match &dlog {
                Some(d) => d.as_slice(),
                None => {
                    zeros = vec![T::zero(); res * res];
                    &zeros
                }
            };
            model.backward(fwd, dlog, dfeat.as_deref(), &mut grads);
        }
        if !cpl.is_finite() {
            return Err(Error::NonFinite(format!("pseudo-label loss {cpl}")));
        }
        drop(pending);

        check_finite(&grads)?;
        opt.apply(model.params_mut(), &grads)?;
        if let Some(a) = adv.as_deref_mut() {
            a.step()?;
        }

        if let Reference::Trainable { model: r, opt: r_opt, source, adv: r_adv } = &mut reference {
            let src_idx: Vec<usize> = (0..bs).map(|_| ref_rng.below(source.len())).collect();
            ref_sum += reference_step(r, r_opt, source, &src_idx, targets, &tgt_idx, r_adv.as_deref_mut(), w_seg)?;
        }

        seg_sum += seg;
        if n_acc > 0 {
            cpl_sum += cpl;
            cpl_steps += 1;
        }
        steps += 1;
    }

    if stats.n_accepted == 0 && labels != PseudoLabels::Off {
        warn!("no pseudo-label accepted this epoch; only the labeled term was trained");
    }
    stats.seg_loss = seg_sum / steps as f64;
    stats.cpl_loss = if cpl_steps > 0 { cpl_sum / cpl_steps as f64 } else { 0.0 };
    stats.adv = adv.map(|a| a.take_stats());
    if let Reference::Trainable { adv: r_adv, .. } = reference {
        stats.reference_seg_loss = Some(ref_sum / steps as f64);
        stats.reference_adv = r_adv.map(|a| a.take_stats());
    }
    Ok(stats)
}

// Source-supervised step for an unfrozen reference, with optional alignment
// of its features between source and target batches.
#[allow(clippy::too_many_arguments)]
fn reference_step<T: Real>(
    r: &mut SegModel<T>,
    opt: &mut OptimState<T>,
    source: &[Sample],
    src_idx: &[usize],
    targets: &[Sample],
    tgt_idx: &[usize],
    mut adv: Option<&mut AdvBranch<T>>,
    w_seg: f64,
) -> Result<f64> {
    let res = r.arch().resolution;
    let mut grads = vec![T::zero(); r.n_params()];
    let n_disc = src_idx.len() + tgt_idx.len();
    let mut loss_sum = 0.0;
    for &i in src_idx {
        let s = &source[i];
        let fwd = r.forward(&r.prepare(&s.image)?);
        let (loss, dlog) = bce_with_logit_grad(fwd.probs(), s.mask()?, None, w_seg / src_idx.len() as f64)?;
        loss_sum += loss / src_idx.len() as f64;
        let dfeat = match adv.as_deref_mut() {
            Some(a) => a.observe(fwd.features(), res, res, false, n_disc)?,
            None => None,
        };
        r.backward(&fwd, &dlog, dfeat.as_deref(), &mut grads);
    }
    if let Some(a) = adv {
        let zeros = vec![T::zero(); res * res];
        for &i in tgt_idx {
            let fwd = r.forward(&r.prepare(&targets[i].image)?);
            if let Some(d) = a.observe(fwd.features(), res, res, true, n_disc)? {
                r.backward(&fwd, &zeros, Some(&d), &mut grads);
            }
        }
        a.step()?;
    }
    check_finite(&grads)?;
    opt.apply(r.params_mut(), &grads)?;
    Ok(loss_sum)
}

/// The combined objective with a fixed reference model.
pub fn cpl_train_epoch<T: Real>(
    model: &mut SegModel<T>,
    opt: &mut OptimState<T>,
    reference: &SegModel<T>,
    ss: &[Sample],
    target_unlabeled: &[Sample],
    cfg: &ExperimentConfig,
    rng: &mut SeededRng,
) -> Result<EpochStats> {
    adapt_epoch(
        model,
        opt,
        Reference::Frozen(reference),
        ss,
        target_unlabeled,
        PseudoLabels::Consensus { alpha: cfg.alpha },
        None,
        cfg,
        rng,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub n_accepted: usize,
    /// Mean mIoU of accepted labels against ground truth; `None` if nothing was accepted.
    pub mean_quality: Option<f64>,
    /// Mean mIoU of M's own mask on the same accepted instances.
    pub mean_y1_quality: Option<f64>,
}

/// Acceptance count and label quality per `alpha`, for fixed M and R.
pub fn pseudo_label_sweep<M: Real>(
    model: &SegModel<M>,
    reference: &SegModel<M>,
    targets_labeled: &[Sample],
    alphas: &[f64],
) -> Result<Vec<SweepRow>> {
    if targets_labeled.is_empty() {
        return Err(Error::Empty("sweep targets".into()));
    }
    for &a in alphas {
        check_alpha(a)?;
    }
    // (agreement, label quality, y1 quality) per target
    let mut scored = Vec::with_capacity(targets_labeled.len());
    for s in targets_labeled {
        let gt = s.mask()?;
        let d = consensus_label(&model.predict_probs(&s.image)?, &reference.predict_probs(&s.image)?, 0.0)?;
        let label = d.y1.intersection(&d.y2)?;
        scored.push((d.agreement_miou, miou(&label, gt)?.miou, miou(&d.y1, gt)?.miou));
    }
    let rows = alphas
        .iter()
        .map(|&alpha| {
            let acc: Vec<_> = scored.iter().filter(|(a, _, _)| *a > alpha).collect();
            let n = acc.len();
            let mean = |f: fn(&&(f64, f64, f64)) -> f64| (n > 0).then(|| acc.iter().map(f).sum::<f64>() / n as f64);
            SweepRow { alpha, n_accepted: n, mean_quality: mean(|t| t.1), mean_y1_quality: mean(|t| t.2) }
        })
        .collect();
    Ok(rows)
}

/// CSV with columns `alpha, n_accepted, mean_quality` (empty quality when nothing was accepted).
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["alpha", "n_accepted", "mean_quality"])?;
    for r in rows {
        w.write_record([
            r.alpha.to_string(),
            r.n_accepted.to_string(),
            r.mean_quality.map(|q| q.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(fg: &[(usize, usize)]) -> BinaryMask {
        BinaryMask::from_fn(4, 4, |y, x| fg.contains(&(y, x)))
    }

    fn probs(m: &BinaryMask) -> ProbMap<f64> {
        ProbMap::new(4, 4, m.as_slice().iter().map(|&v| if v { 0.9 } else { 0.1 }).collect()).unwrap()
    }

    #[test]
    fn identical_predictions_accepted() {
        let m = mask(&[(0, 0), (1, 1)]);
        let d = consensus_label(&probs(&m), &probs(&m), 0.8).unwrap();
        assert!(d.accepted);
        assert_eq!(d.agreement_miou, 1.0);
        assert_eq!(d.label.unwrap(), m);
    }

    #[test]
    fn shifted_squares_rejected() {
        let a = mask(&[(1, 1), (1, 2), (2, 1), (2, 2)]);
        let b = mask(&[(1, 2), (1, 3), (2, 2), (2, 3)]);
        let d = consensus_label(&probs(&a), &probs(&b), 0.8).unwrap();
        let want = (2.0 / 6.0 + 10.0 / 14.0) / 2.0;
        assert!((d.agreement_miou - want).abs() < 1e-12);
        assert!(!d.accepted);
        assert!(d.label.is_none());
    }

    #[test]
    fn both_empty_accepted_with_empty_label() {
        let p = ProbMap::<f64>::filled(4, 4, 0.3);
        let d = consensus_label(&p, &p, 0.8).unwrap();
        assert!(d.accepted);
        assert_eq!(d.label.unwrap().count_fg(), 0);
    }

    #[test]
    fn strict_gate_at_one() {
        let m = mask(&[(0, 0)]);
        assert!(!consensus_label(&probs(&m), &probs(&m), 1.0).unwrap().accepted);
    }

    #[test]
    fn shape_mismatch() {
        let a = ProbMap::<f64>::filled(4, 4, 0.3);
        let b = ProbMap::<f64>::filled(4, 3, 0.3);
        assert!(consensus_label(&a, &b, 0.5).is_err());
    }

    #[test]
    fn naive_threshold() {
        let p = ProbMap::<f64>::new(1, 2, vec![0.39, 0.41]).unwrap();
        let m = naive_pl(&p, 0.4).unwrap();
        assert_eq!(m.as_slice(), &[false, true]);
        assert_eq!(naive_pl(&ProbMap::<f64>::filled(2, 2, 0.0), 0.4).unwrap().count_fg(), 0);
        assert!(naive_pl(&p, 1.0).is_err());
    }

    #[test]
    fn sweep_csv_format() {
        let rows = vec![
            SweepRow { alpha: 0.6, n_accepted: 3, mean_quality: Some(0.75), mean_y1_quality: Some(0.7) },
            SweepRow { alpha: 0.9, n_accepted: 0, mean_quality: None, mean_y1_quality: None },
        ];
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "alpha,n_accepted,mean_quality\n0.6,3,0.75\n0.9,0,\n");
    }
}
