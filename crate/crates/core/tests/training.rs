use fgsty::adversarial::AdvBranch;
use fgsty::cpl::{adapt_epoch, PseudoLabels, Reference, TargetSampler};
use fgsty::nn::{supervised_epoch, train_step, Arch, OptimState, SegModel};
use fgsty::pipeline::{emit_report, replay, run, ArchKind, RunSpec, Variant};
use fgsty::synth::{generate_domain, preset_recipes};
use fgsty::{seeded_rng, BinaryMask, ExperimentConfig, Image, Sample};

fn micro() -> Arch {
    Arch { in_channels: 3, widths: vec![4, 8], bottleneck_convs: 1, resolution: 16 }
}

// bright square on a dark background, one per offset
fn toy(n: usize) -> Vec<Sample> {
    (0..n)
        .map(|k| {
            let (oy, ox) = (k % 5 + 2, (k * 3) % 6 + 2);
            let mask = BinaryMask::from_fn(16, 16, |y, x| (oy..oy + 6).contains(&y) && (ox..ox + 6).contains(&x));
            let data =
                mask.as_slice().iter().flat_map(|&m| if m { [0.9, 0.4, 0.3] } else { [0.1, 0.2, 0.2] }).collect();
            Sample::labeled(Image::new(16, 16, data).unwrap(), mask, "toy", &format!("toy:train/{k}")).unwrap()
        })
        .collect()
}

#[test]
fn training_is_bitwise_deterministic() {
    let data = toy(8);
    let train = || {
        let mut m = SegModel::<f32>::new(micro(), &mut seeded_rng(4)).unwrap();
        let mut opt = OptimState::adam(m.n_params(), 1e-3);
        let mut rng = seeded_rng(5);
        for _ in 0..3 {
            supervised_epoch(&mut m, &mut opt, &data, 3, &mut rng).unwrap();
        }
        m.params().to_vec()
    };
    assert_eq!(train(), train());
}

#[test]
fn loss_falls_on_separable_toy() {
    let data = toy(4);
    let batch: Vec<_> = data.iter().map(|s| (&s.image, s.mask().unwrap())).collect();
    let mut m = SegModel::<f32>::new(micro(), &mut seeded_rng(1)).unwrap();
    let mut opt = OptimState::adam(m.n_params(), 1e-3);
    let losses: Vec<f64> = (0..50).map(|_| train_step(&mut m, &batch, &mut opt).unwrap()).collect();
    for w in losses[..11].windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
    assert!(losses[49] < 0.5 * losses[0]);
}

#[test]
fn zero_lambda_leaves_segmentation_trajectory_unchanged() {
    let labeled = toy(8);
    let targets: Vec<Sample> = toy(6).iter().map(|s| s.without_label()).collect();
    let cfg = ExperimentConfig { batch_size: 4, grl_lambda: 0.0, ..ExperimentConfig::default() };
    let reference = SegModel::<f32>::new(micro(), &mut seeded_rng(9)).unwrap();

    let run = |with_adv: bool| {
        let mut m = SegModel::<f32>::new(micro(), &mut seeded_rng(3)).unwrap();
        let mut opt = OptimState::adam(m.n_params(), 1e-3);
        let mut branch = AdvBranch::new(m.arch().feature_channels(), 1e-3, 0.0, 1.0, &mut seeded_rng(77));
        let mut rng = seeded_rng(21);
        for _ in 0..2 {
            let adv = if with_adv { Some(&mut branch) } else { None };
            adapt_epoch(
                &mut m,
                &mut opt,
                Reference::Frozen(&reference),
                &labeled,
                &targets,
                PseudoLabels::Consensus { alpha: 0.5 },
                adv,
                &cfg,
                &mut rng,
            )
            .unwrap();
        }
        (m.params().to_vec(), branch.disc.params().to_vec())
    };
    let (plain, untouched) = run(false);
    let (with_disc, trained) = run(true);
    assert_eq!(plain, with_disc);
    // the discriminator itself still learned
    assert_ne!(untouched, trained);
}

#[test]
fn target_sampler_balances_domains() {
    let mut targets = Vec::new();
    for (d, n) in [("a", 10), ("b", 30)] {
        for i in 0..n {
            targets.push(Sample::unlabeled(Image::filled(2, 2, [0.0; 3]), d, &format!("{d}:{i}")));
        }
    }
    let sampler = TargetSampler::new(&targets).unwrap();
    assert_eq!(sampler.n_domains(), 2);
    let mut rng = seeded_rng(0);
    let mut counts = vec![0usize; targets.len()];
    let draws = 8000;
    for _ in 0..draws {
        counts[sampler.draw(&mut rng)] += 1;
    }
    // expected: half the draws per domain, uniform inside it
    let chi2: f64 = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let e = draws as f64 / 2.0 / if i < 10 { 10.0 } else { 30.0 };
            (c as f64 - e).powi(2) / e
        })
        .sum();
    // 39 degrees of freedom, p = 0.001
    assert!(chi2 < 72.06, "chi2 {chi2}");
}

fn tiny_spec(variant: Variant) -> RunSpec {
    let mut spec = RunSpec::preset("tiny", variant);
    spec.targets.truncate(1);
    spec.config.epochs = 2;
    spec.config.learning_rate = 1e-3;
    spec.config.n_style_images = 2;
    spec.settings.resolution = 16;
    spec.settings.arch = ArchKind::Compact;
    spec.settings.n_train = 8;
    spec.settings.n_test = 4;
    spec
}

#[test]
fn replay_reproduces_results() {
    let first = run(&tiny_spec(Variant::FgstyCpl)).unwrap();
    let again = replay(&first).unwrap();
    assert_eq!(first.per_target, again.per_target);
    assert_eq!(first.loss_curves, again.loss_curves);
}

#[test]
fn report_is_deterministic_and_handles_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    emit_report(&[], dir.path()).unwrap();
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1);
    assert_eq!(std::fs::read_to_string(dir.path().join("results.json")).unwrap(), "[]");

    let r = run(&tiny_spec(Variant::SourceOnly)).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    emit_report(std::slice::from_ref(&r), a.path()).unwrap();
    emit_report(std::slice::from_ref(&r), b.path()).unwrap();
    for f in ["results.json", "summary.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
    assert_eq!(std::fs::read_to_string(a.path().join("summary.csv")).unwrap().lines().count(), 2);
}

#[test]
fn domains_generate_with_requested_sizes() {
    for r in preset_recipes(16) {
        let split = generate_domain(&r, 3, 2, 0).unwrap();
        assert_eq!((split.train.len(), split.test.len()), (3, 2));
        split.check_disjoint().unwrap();
    }
}
