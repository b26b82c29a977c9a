use fgsty::stylizer::{stylize_aligned, stylize_unaligned};
use fgsty::{seeded_rng, BinaryMask, Image, Sample, SeededRng};

const RES: usize = 32;

// correlated colour noise around `base`, kept clear of the clipping range
fn textured(rng: &mut SeededRng, base: [f64; 3], mix: [[f64; 3]; 3]) -> Vec<[f64; 3]> {
    (0..RES * RES)
        .map(|_| {
            let z = [rng.normal(), rng.normal(), rng.normal()];
            [0, 1, 2].map(|c| (base[c] + (0..3).map(|k| mix[c][k] * z[k]).sum::<f64>()).clamp(0.0, 1.0))
        })
        .collect()
}

fn compose(fg: &[[f64; 3]], bg: &[[f64; 3]], mask: &BinaryMask) -> Image {
    let data = (0..RES * RES).flat_map(|i| if mask.as_slice()[i] { fg[i] } else { bg[i] }).map(|v| v as f32).collect();
    Image::new(RES, RES, data).unwrap()
}

fn disc_mask(cx: f64, cy: f64, r: f64) -> BinaryMask {
    BinaryMask::from_fn(RES, RES, |y, x| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) < r * r)
}

// straightforward population mean and covariance
fn moments(image: &Image, mask: &BinaryMask, fg: bool) -> ([f64; 3], [[f64; 3]; 3]) {
    let px: Vec<[f64; 3]> =
        (0..image.n_pixels()).filter(|&i| mask.as_slice()[i] == fg).map(|i| image.pixel(i).map(f64::from)).collect();
    let n = px.len() as f64;
    let mut mean = [0.0; 3];
    for p in &px {
        for c in 0..3 {
            mean[c] += p[c] / n;
        }
    }
    let mut cov = [[0.0; 3]; 3];
    for p in &px {
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += (p[i] - mean[i]) * (p[j] - mean[j]) / n;
            }
        }
    }
    (mean, cov)
}

fn rel_err<const N: usize>(a: &[f64; N], b: &[f64; N]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn flat(m: &[[f64; 3]; 3]) -> [f64; 9] {
    [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
}

fn pair(seed: u64) -> (Sample, Sample) {
    let mut r = seeded_rng(seed);
    let src_mask = disc_mask(12.0, 18.0, 9.0);
    let sty_mask = disc_mask(20.0, 10.0, 8.0);
    let src = compose(
        &textured(&mut r, [0.7, 0.5, 0.4], [[0.04, 0.01, 0.0], [0.01, 0.03, 0.005], [0.0, 0.01, 0.03]]),
        &textured(&mut r, [0.35, 0.5, 0.35], [[0.05, 0.0, 0.01], [0.02, 0.04, 0.0], [0.0, 0.0, 0.02]]),
        &src_mask,
    );
    let sty = compose(
        &textured(&mut r, [0.45, 0.55, 0.6], [[0.03, 0.0, 0.0], [0.01, 0.05, 0.0], [0.01, 0.01, 0.04]]),
        &textured(&mut r, [0.5, 0.45, 0.55], [[0.06, 0.02, 0.0], [0.0, 0.03, 0.01], [0.01, 0.0, 0.05]]),
        &sty_mask,
    );
    (
        Sample::labeled(src, src_mask, "source", "source:train/0").unwrap(),
        Sample::labeled(sty, sty_mask, "t1", "t1:train/0").unwrap(),
    )
}

#[test]
fn aligned_transfer_matches_style_region_moments() {
    for seed in 0..4 {
        let (src, sty) = pair(seed);
        let out = stylize_aligned(&src, &sty, 1e-5).unwrap();
        for fg in [true, false] {
            let (m_out, c_out) = moments(&out, src.mask().unwrap(), fg);
            let (m_sty, c_sty) = moments(&sty.image, sty.mask().unwrap(), fg);
            assert!(rel_err(&m_out, &m_sty) < 0.05, "seed {seed} fg {fg}: mean");
            let e = rel_err(&flat(&c_out), &flat(&c_sty));
            assert!(e < 0.05, "seed {seed} fg {fg}: covariance error {e}");
        }
    }
}

#[test]
fn background_ignores_foreground_inputs() {
    let (src, sty) = pair(7);
    let base = stylize_aligned(&src, &sty, 1e-5).unwrap();

    // repaint every foreground pixel of both the source and the style
    let mut r = seeded_rng(99);
    let mut repaint = |s: &Sample| {
        let mut img = s.image.clone();
        for (i, &m) in s.mask().unwrap().as_slice().iter().enumerate() {
            if m {
                img.set_pixel(i, [r.uniform() as f32, r.uniform() as f32, r.uniform() as f32]);
            }
        }
        Sample::labeled(img, s.mask().unwrap().clone(), &s.domain_id, &s.sample_id).unwrap()
    };
    let (src2, sty2) = (repaint(&src), repaint(&sty));
    let out = stylize_aligned(&src2, &sty2, 1e-5).unwrap();

    let mask = src.mask().unwrap();
    let mut fg_changed = false;
    for i in 0..out.n_pixels() {
        if mask.as_slice()[i] {
            fg_changed |= out.pixel(i) != base.pixel(i);
        } else {
            assert_eq!(out.pixel(i), base.pixel(i), "background pixel {i}");
        }
    }
    assert!(fg_changed);
}

#[test]
fn unaligned_transfer_mixes_regions() {
    // whole-image statistics: repainting the style foreground moves source background pixels
    let (src, sty) = pair(3);
    let base = stylize_unaligned(&src, &sty, 1e-5).unwrap();
    let mut img = sty.image.clone();
    for (i, &m) in sty.mask().unwrap().as_slice().iter().enumerate() {
        if m {
            img.set_pixel(i, [0.1, 0.1, 0.9]);
        }
    }
    let sty2 = Sample::labeled(img, sty.mask().unwrap().clone(), "t1", "t1:train/0").unwrap();
    let out = stylize_unaligned(&src, &sty2, 1e-5).unwrap();
    let bg = src.mask().unwrap().complement();
    assert!((0..out.n_pixels()).any(|i| bg.as_slice()[i] && out.pixel(i) != base.pixel(i)));
}
