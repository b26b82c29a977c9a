//! Analytic gradients against central finite differences.

use fgsty::adversarial::{grl_backward, grl_forward, PixelDiscriminator};
use fgsty::nn::{accumulate, Arch, SegModel};
use fgsty::{seeded_rng, BinaryMask, Image};

const H: f64 = 1e-6;
const REL_TOL: f64 = 1e-3;
// components whose true gradient is this small are compared absolutely
const ABS_FLOOR: f64 = 1e-8;

fn random_image(seed: u64, res: usize) -> Image {
    let mut r = seeded_rng(seed);
    Image::new(res, res, (0..res * res * 3).map(|_| r.uniform() as f32).collect()).unwrap()
}

fn random_mask(seed: u64, res: usize) -> BinaryMask {
    let mut r = seeded_rng(seed);
    BinaryMask::from_fn(res, res, |_, _| r.uniform() < 0.4)
}

fn loss_at(model: &SegModel<f64>, image: &Image, target: &BinaryMask) -> f64 {
    let mut scratch = vec![0.0; model.n_params()];
    accumulate(model, image, target, None, 1.0, &mut scratch).unwrap()
}

fn check(arch: Arch, seed: u64, probes: usize) -> usize {
    let res = arch.resolution;
    let mut model = SegModel::<f64>::new(arch, &mut seeded_rng(seed)).unwrap();
    let image = random_image(seed + 1, res);
    let target = random_mask(seed + 2, res);
    let mut grads = vec![0.0; model.n_params()];
    accumulate(&model, &image, &target, None, 1.0, &mut grads).unwrap();

    let mut pick = seeded_rng(seed + 3);
    let mut failures = 0;
    for _ in 0..probes {
        let i = pick.below(model.n_params());
        let orig = model.params()[i];
        model.params_mut()[i] = orig + H;
        let up = loss_at(&model, &image, &target);
        model.params_mut()[i] = orig - H;
        let down = loss_at(&model, &image, &target);
        model.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * H);
        let err = (numeric - grads[i]).abs();
        if err > REL_TOL * numeric.abs().max(grads[i].abs()) + ABS_FLOOR {
            failures += 1;
            eprintln!("param {i}: analytic {} numeric {numeric}", grads[i]);
        }
    }
    failures
}

#[test]
fn micro_model_gradients() {
    let arch = Arch { in_channels: 3, widths: vec![2, 3], bottleneck_convs: 1, resolution: 8 };
    assert_eq!(check(arch, 10, 100), 0);
}

#[test]
fn three_level_model_gradients() {
    let arch = Arch { in_channels: 3, widths: vec![3, 4, 5], bottleneck_convs: 2, resolution: 8 };
    assert_eq!(check(arch, 20, 100), 0);
}

fn disc_loss(d: &PixelDiscriminator<f64>, feats: &[f64], res: usize) -> f64 {
    let mut scratch = vec![0.0; d.n_params()];
    d.domain_loss(feats, res, res, true, 1.0, &mut scratch).unwrap().0
}

fn close(analytic: f64, numeric: f64) -> bool {
    (numeric - analytic).abs() <= REL_TOL * numeric.abs().max(analytic.abs()) + ABS_FLOOR
}

// Discriminator on features passed through the reversal layer: its own
// parameters see the plain gradient, the features see -lambda times it.
#[test]
fn reversed_discriminator_path_gradients() {
    let (channels, res, lambda) = (4, 6, 0.3);
    let mut d = PixelDiscriminator::<f64>::new(channels, 5, &mut seeded_rng(30));
    let mut r = seeded_rng(31);
    let mut feats: Vec<f64> = (0..channels * res * res).map(|_| r.normal()).collect();

    let mut grads = vec![0.0; d.n_params()];
    let (_, dfeat, _) = d.domain_loss(&grl_forward(&feats), res, res, true, 1.0, &mut grads).unwrap();
    let reversed = grl_backward(&dfeat, lambda);

    let mut pick = seeded_rng(32);
    let mut failures = 0;
    for _ in 0..100 {
        let i = pick.below(d.n_params());
        let orig = d.params()[i];
        d.params_mut()[i] = orig + H;
        let up = disc_loss(&d, &feats, res);
        d.params_mut()[i] = orig - H;
        let down = disc_loss(&d, &feats, res);
        d.params_mut()[i] = orig;
        if !close(grads[i], (up - down) / (2.0 * H)) {
            failures += 1;
        }

        let j = pick.below(feats.len());
        let orig = feats[j];
        feats[j] = orig + H;
        let up = disc_loss(&d, &feats, res);
        feats[j] = orig - H;
        let down = disc_loss(&d, &feats, res);
        feats[j] = orig;
        if !close(reversed[j], -lambda * (up - down) / (2.0 * H)) {
            failures += 1;
        }
    }
    assert_eq!(failures, 0);
}
