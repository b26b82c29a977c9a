//! Runs a set of variants on the preset suite and prints per-target mIoU.
//! usage: explore <variants,comma> [seeds=0] [epochs=20] [lr=1e-3] [arch=standard] [n_train=64]

use std::time::Instant;

use fgsty::pipeline::{run_with, ArchKind, DataBundle, DatasetRef, Mode, ModelCache, RunSpec, Variant};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let variants: Vec<Variant> = args[1].split(',').map(|v| v.parse().unwrap()).collect();
    let seeds: Vec<u64> = args.get(2).map_or(vec![0], |s| s.split(',').map(|x| x.parse().unwrap()).collect());
    let epochs: usize = args.get(3).map_or(20, |s| s.parse().unwrap());
    let lr: f64 = args.get(4).map_or(1e-3, |s| s.parse().unwrap());
    let arch = match args.get(5).map(String::as_str) {
        Some("compact") => ArchKind::Compact,
        _ => ArchKind::Standard,
    };
    let n_train: usize = args.get(6).map_or(64, |s| s.parse().unwrap());
    for seed in seeds {
        let mut base = RunSpec::preset("explore", Variant::SourceOnly);
        base.config.epochs = epochs;
        base.config.learning_rate = lr;
        base.config.seed = seed;
        base.settings.arch = arch;
        base.settings.n_train = n_train;
        base.settings.data_seed = seed;
        if std::env::var_os("RAMP").is_some() {
            base.settings.lambda_schedule = fgsty::adversarial::LambdaSchedule::Ramp;
        }
        if let Ok(sets) = std::env::var("SET") {
            for kv in sets.split(',') {
                base.config.apply_override(kv).unwrap();
            }
        }
        match std::env::var("MODE").as_deref() {
            Ok("multi") => base.mode = Mode::MultiTarget,
            Ok(m) if m.starts_with("dg:") => {
                let held = DatasetRef::Preset(m[3..].to_string());
                base.mode = Mode::DomainGeneralization;
                base.targets.retain(|t| *t != held);
                base.test_domain = Some(held);
            }
            _ => {}
        }
        let data = DataBundle::resolve(&base).unwrap();
        let mut cache = ModelCache::default();
        for &v in &variants {
            let t = Instant::now();
            let spec = RunSpec { variant: v, ..base.clone() };
            let art = run_with(&spec, &data, &mut cache).unwrap();
            if std::env::var_os("DUMP").is_some() {
                for ((tag, m), t) in art.models.iter().zip(&spec.targets) {
                    dump("/tmp/viz", &format!("{}-{tag}", v.name()), m, &data.get(t).unwrap().test);
                }
            }
            let r = art.result;
            let acc: Vec<String> = r
                .pseudo_label_stats
                .values()
                .map(|s| format!("{}", s.iter().map(|e| e.n_accepted).sum::<usize>()))
                .collect();
            println!(
                "seed {seed} {:>14} avg {:.4} | {} | acc [{}] | {:.1}s",
                v.name(),
                r.average_miou,
                r.per_target.iter().map(|(k, v)| format!("{k} {v:.3}")).collect::<Vec<_>>().join(" "),
                acc.join(","),
                t.elapsed().as_secs_f64()
            );
        }
    }
}

#[allow(dead_code)]
pub fn dump(dir: &str, tag: &str, model: &dyn fgsty::nn::Segmenter, samples: &[fgsty::Sample]) {
    use image::RgbImage;
    std::fs::create_dir_all(dir).unwrap();
    let n = samples.len().min(6);
    let r = samples[0].image.height() as u32;
    let mut canvas = RgbImage::new(3 * r, n as u32 * r);
    for (k, s) in samples.iter().take(n).enumerate() {
        let img = fgsty::dataset::image_to_rgb8(&s.image);
        let pred = model.predict(&s.image).unwrap().threshold(0.5);
        let gt = s.mask().unwrap();
        for y in 0..r {
            for x in 0..r {
                let i = (y * r + x) as usize;
                canvas.put_pixel(x, k as u32 * r + y, *img.get_pixel(x, y));
                let g = if gt.as_slice()[i] { 255 } else { 0 };
                canvas.put_pixel(r + x, k as u32 * r + y, image::Rgb([g, g, g]));
                let p = pred.as_slice()[i];
                let c = match (p, gt.as_slice()[i]) {
                    (true, true) => [255, 255, 255],
                    (true, false) => [255, 0, 0],
                    (false, true) => [0, 0, 255],
                    _ => [0, 0, 0],
                };
                canvas.put_pixel(2 * r + x, k as u32 * r + y, image::Rgb(c));
            }
        }
    }
    image::imageops::resize(&canvas, 6 * r, 2 * n as u32 * r, image::imageops::FilterType::Nearest)
        .save(format!("{dir}/{tag}.png"))
        .unwrap();
}
