use fgsty::adversarial::grl_backward;
use fgsty::cpl::{consensus_from_masks, consensus_label};
use fgsty::metrics::miou;
use fgsty::stylizer::{stylize_aligned, stylize_unaligned};
use fgsty::{BinaryMask, ExperimentConfig, Image, LossWeights, ProbMap, Sample};
use proptest::prelude::*;

fn mask_strategy(h: usize, w: usize) -> impl Strategy<Value = BinaryMask> {
    prop::collection::vec(any::<bool>(), h * w).prop_map(move |d| BinaryMask::new(h, w, d).unwrap())
}

fn pair(h: usize, w: usize) -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (mask_strategy(h, w), mask_strategy(h, w))
}

fn image_strategy(h: usize, w: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0f32..=1.0, h * w * 3).prop_map(move |d| Image::new(h, w, d).unwrap())
}

// brute force: count each class separately, empty union scores 1
fn oracle_miou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let mut total = 0.0;
    for class in [true, false] {
        let (mut inter, mut union) = (0, 0);
        for y in 0..a.height() {
            for x in 0..a.width() {
                let (p, q) = (a.get(y, x) == class, b.get(y, x) == class);
                if p && q {
                    inter += 1;
                }
                if p || q {
                    union += 1;
                }
            }
        }
        total += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    }
    total / 2.0
}

fn false_positives(pred: &BinaryMask, gt: &BinaryMask) -> usize {
    pred.as_slice().iter().zip(gt.as_slice()).filter(|(&p, &g)| p && !g).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn miou_matches_oracle_and_is_symmetric((a, b) in pair(8, 8)) {
        let r = miou(&a, &b).unwrap();
        prop_assert_eq!(r.miou, oracle_miou(&a, &b));
        prop_assert_eq!(r.miou, miou(&b, &a).unwrap().miou);
        for v in [r.iou_fg, r.iou_bg, r.miou] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn gate_is_monotone_in_alpha((a, b) in pair(6, 6), lo in 0.0f64..1.0, hi in 0.0f64..1.0) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let strict = consensus_from_masks(a.clone(), b.clone(), hi).unwrap();
        let loose = consensus_from_masks(a, b, lo).unwrap();
        prop_assert!(!strict.accepted || loose.accepted);
    }

    #[test]
    fn label_never_adds_false_positives((y1, y2) in pair(6, 6), gt in mask_strategy(6, 6)) {
        let d = consensus_from_masks(y1.clone(), y2, 0.0).unwrap();
        if let Some(label) = d.label {
            prop_assert!(label.is_subset_of(&y1));
            prop_assert!(false_positives(&label, &gt) <= false_positives(&y1, &gt));
        }
    }

    #[test]
    fn consensus_is_symmetric(
        p in prop::collection::vec(0.0f64..1.0, 36),
        q in prop::collection::vec(0.0f64..1.0, 36),
        alpha in 0.0f64..1.0,
    ) {
        let p = ProbMap::new(6, 6, p).unwrap();
        let q = ProbMap::new(6, 6, q).unwrap();
        let pq = consensus_label(&p, &q, alpha).unwrap();
        let qp = consensus_label(&q, &p, alpha).unwrap();
        prop_assert_eq!(pq.accepted, qp.accepted);
        prop_assert_eq!(pq.agreement_miou, qp.agreement_miou);
        prop_assert_eq!(pq.label, qp.label);
    }

    #[test]
    fn raising_threshold_never_adds_foreground(p in prop::collection::vec(0.0f32..1.0, 64), t1 in 0.01f32..0.99, t2 in 0.01f32..0.99) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let p = ProbMap::new(8, 8, p).unwrap();
        prop_assert!(p.threshold(hi).is_subset_of(&p.threshold(lo)));
    }

    #[test]
    fn grl_backward_scales_exactly(g in prop::collection::vec(-10.0f64..10.0, 1..32), lambda in 0.0f64..2.0) {
        let out = grl_backward(&g, lambda);
        for (o, x) in out.iter().zip(&g) {
            prop_assert_eq!(*o, -lambda * x);
        }
    }

    #[test]
    fn config_round_trips(
        alpha in 0.01f64..=1.0,
        pl in 0.01f64..0.99,
        n_style in 1usize..50,
        lr in 1e-7f64..1e-1,
        epochs in 1usize..100,
        batch in 1usize..64,
        seed in any::<u64>(),
        lambda in 0.0f64..1.0,
        w in (0.0f64..3.0, 0.0f64..3.0, 0.0f64..3.0),
    ) {
        let cfg = ExperimentConfig {
            alpha,
            pl_threshold: pl,
            n_style_images: n_style,
            learning_rate: lr,
            epochs,
            batch_size: batch,
            seed,
            grl_lambda: lambda,
            loss_weights: LossWeights { seg: w.0, cpl: w.1, adv: w.2 },
            ..ExperimentConfig::default()
        };
        prop_assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn self_stylization_is_identity(img in image_strategy(6, 6), m in mask_strategy(6, 6)) {
        let s = Sample::labeled(img.clone(), m, "d", "d:0").unwrap();
        for out in [stylize_aligned(&s, &s, 1e-5).unwrap(), stylize_unaligned(&s, &s, 1e-5).unwrap()] {
            prop_assert!(out.max_abs_diff(&img) < 1e-3);
        }
    }

    #[test]
    fn stylized_output_stays_in_unit_range(
        a in image_strategy(6, 6),
        b in image_strategy(6, 6),
        ma in mask_strategy(6, 6),
        mb in mask_strategy(6, 6),
    ) {
        let src = Sample::labeled(a, ma, "s", "s:0").unwrap();
        let sty = Sample::labeled(b, mb, "t", "t:0").unwrap();
        let out = stylize_aligned(&src, &sty, 1e-5).unwrap();
        prop_assert!(out.as_slice().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }
}
