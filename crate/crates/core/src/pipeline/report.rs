//! Persisted run artifacts:
//! `runs/<timestamp>-<name>/{config.json, results.json, summary.csv, plots/*.png, checkpoints/*}`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::cpl::{write_sweep_csv, SweepRow};
use crate::error::{Error, Result};
use crate::nn::{checkpoint, SegModel};
use crate::synth::LabelDistribution;

use super::plot::{heatmap, line_plot};
use super::{RunResult, SweepKind, SweepResult};

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Writes `results.json`, `summary.csv` and `plots/` into `out`.
pub fn emit_report(results: &[RunResult], out: &Path) -> Result<()> {
    create_dir(&out.join("plots"))?;
    fs::write(out.join("results.json"), serde_json::to_string_pretty(results)?)?;
    write_summary(results, &out.join("summary.csv"))?;
    for (i, r) in results.iter().enumerate() {
        let stem = format!("{i:02}-{}", sanitize(&r.name));
        let curves: Vec<Vec<(f64, f64)>> =
            r.loss_curves.values().map(|c| c.iter().enumerate().map(|(e, &v)| ((e + 1) as f64, v)).collect()).collect();
        if !curves.is_empty() {
            line_plot(&curves).save(out.join("plots").join(format!("{stem}-loss.png")))?;
        }
        if !r.label_quality.is_empty() {
            let counts: Vec<Vec<(f64, f64)>> = r
                .label_quality
                .values()
                .map(|rows| rows.iter().enumerate().map(|(e, q)| ((e + 1) as f64, q.n_accepted as f64)).collect())
                .collect();
            let quality: Vec<Vec<(f64, f64)>> = r
                .label_quality
                .values()
                .map(|rows| {
                    rows.iter().enumerate().filter_map(|(e, q)| q.mean_quality.map(|v| ((e + 1) as f64, v))).collect()
                })
                .collect();
            line_plot(&counts).save(out.join("plots").join(format!("{stem}-pl-count.png")))?;
            line_plot(&quality).save(out.join("plots").join(format!("{stem}-pl-quality.png")))?;
        }
    }
    Ok(())
}

/// One row per run: variant, name, mode, mIoU per domain, average.
fn write_summary(results: &[RunResult], path: &Path) -> Result<()> {
    let domains: BTreeSet<&String> = results.iter().flat_map(|r| r.per_target.keys()).collect();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["variant".to_string(), "name".into(), "mode".into()];
    header.extend(domains.iter().map(|d| d.to_string()));
    header.push("average".into());
    w.write_record(&header)?;
    for r in results {
        let mut row = vec![
            r.variant.name().to_string(),
            r.name.clone(),
            serde_json::to_value(r.mode)?.as_str().unwrap_or_default().to_string(),
        ];
        row.extend(domains.iter().map(|d| r.per_target.get(*d).map(|v| format!("{v:.6}")).unwrap_or_default()));
        row.push(format!("{:.6}", r.average_miou));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Sweep table (`value, average_miou, n_accepted, mean_quality`) plus, for
/// alpha sweeps, `alpha_sweep.csv` in the `(alpha, n_accepted, mean_quality)` form.
pub fn emit_sweep(sweep: &SweepResult, out: &Path) -> Result<()> {
    emit_report(&sweep.runs, out)?;
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    w.write_record(["value", "average_miou", "n_accepted", "mean_quality"])?;
    for (v, r) in sweep.grid.iter().zip(&sweep.runs) {
        w.write_record([
            v.to_string(),
            format!("{:.6}", r.average_miou),
            r.total_accepted().to_string(),
            r.mean_label_quality().map(|q| format!("{q:.6}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    let series = vec![sweep.grid.iter().zip(&sweep.runs).map(|(v, r)| (*v, r.average_miou)).collect()];
    line_plot(&series).save(out.join("plots").join("sweep-miou.png"))?;
    if sweep.kind == SweepKind::Alpha {
        let rows: Vec<SweepRow> = sweep
            .grid
            .iter()
            .zip(&sweep.runs)
            .map(|(&alpha, r)| SweepRow {
                alpha,
                n_accepted: r.total_accepted(),
                mean_quality: r.mean_label_quality(),
                mean_y1_quality: None,
            })
            .collect();
        emit_alpha_table(&rows, out)?;
    }
    Ok(())
}

/// `alpha_sweep.csv` and its count/quality plots.
pub fn emit_alpha_table(rows: &[SweepRow], out: &Path) -> Result<()> {
    create_dir(&out.join("plots"))?;
    write_sweep_csv(rows, fs::File::create(out.join("alpha_sweep.csv"))?)?;
    let counts = vec![rows.iter().map(|r| (r.alpha, r.n_accepted as f64)).collect()];
    let quality = vec![rows.iter().filter_map(|r| r.mean_quality.map(|q| (r.alpha, q))).collect()];
    line_plot(&counts).save(out.join("plots").join("alpha-count.png"))?;
    line_plot(&quality).save(out.join("plots").join("alpha-quality.png"))?;
    Ok(())
}

pub fn emit_label_distribution(name: &str, dist: &LabelDistribution, out: &Path) -> Result<()> {
    create_dir(&out.join("plots"))?;
    heatmap(&dist.mean_mask, dist.height, dist.width, &dist.marginal_x, &dist.marginal_y)
        .save(out.join("plots").join(format!("labels-{}.png", sanitize(name))))?;
    Ok(())
}

/// Creates `<root>/<timestamp>-<name>/` (suffixed if taken) with the config
/// snapshot, the report and model checkpoints. Returns the directory.
pub fn write_run_dir(
    root: &Path,
    name: &str,
    config: &ExperimentConfig,
    results: &[RunResult],
    models: &[(String, SegModel<f32>)],
) -> Result<PathBuf> {
    let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
    let base = format!("{stamp}-{}", sanitize(name));
    let mut dir = root.join(&base);
    let mut k = 1;
    while dir.exists() {
        dir = root.join(format!("{base}-{k}"));
        k += 1;
    }
    create_dir(&dir.join("checkpoints"))?;
    config.save(&dir.join("config.json"))?;
    emit_report(results, &dir)?;
    for (tag, m) in models {
        checkpoint::save(m, &dir.join("checkpoints").join(format!("{}.ckpt", sanitize(tag))))?;
    }
    Ok(dir)
}
