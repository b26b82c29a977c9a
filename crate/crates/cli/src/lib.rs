//! Argument parsing and verb dispatch for the `fgsty` binary.
//!
//! Exit codes: 0 success, 1 user error (bad flags, bad config, missing or
//! malformed data, leakage), 2 internal error (numerical failure and other
//! conditions the input cannot explain).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use log::info;

use fgsty::dataset::save_dataset;
use fgsty::nn::checkpoint;
use fgsty::pipeline::report::{emit_label_distribution, emit_sweep};
use fgsty::pipeline::{
    emit_report, run_with, runs_root, write_run_dir, ArchKind, DataBundle, DatasetRef, Mode, ModelCache, RunResult,
    RunSpec, SweepKind, Variant,
};
use fgsty::stylizer::{build_style_adapted_dataset, RegionWct, StylePool};
use fgsty::synth::{label_distribution_summary, preset_suite_with, PresetOptions};
use fgsty::{seeded_rng, DatasetSplit, Error, ExperimentConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "fgsty", version, about = "Foreground-aware stylization and consensus pseudo-labeling experiments")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Write the synthetic preset domains in the standard dataset layout.
    Generate(GenerateArgs),
    /// Stylize a source dataset with target style images.
    Stylize(RunArgs),
    /// Train a variant without an adaptation stage (default: source_only).
    Train(RunArgs),
    /// Pretrain and adapt (default: fgsty_cpl).
    Adapt(RunArgs),
    /// Score a checkpoint on a dataset's test split.
    Evaluate(EvaluateArgs),
    /// Repeat a run over a grid of one knob.
    Sweep(SweepArgs),
    /// Merge the results of finished run directories into one report.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field, `key=value` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (default: a fresh directory under the runs root).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    /// Square image size.
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    #[arg(long, default_value_t = 64)]
    n_train: usize,
    #[arg(long, default_value_t = 32)]
    n_test: usize,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    variant: Option<String>,
    /// single_target, multi_target or domain_generalization.
    #[arg(long)]
    mode: Option<String>,
    /// Source dataset: `preset:<domain>` or a directory.
    #[arg(long, default_value = "preset:source")]
    source: String,
    /// Target dataset (repeatable; default: the four preset targets).
    #[arg(long = "target")]
    targets: Vec<String>,
    /// Held-out domain for domain_generalization.
    #[arg(long)]
    test_domain: Option<String>,
    /// standard or compact.
    #[arg(long, default_value = "standard")]
    arch: String,
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset to score: `preset:<domain>` or a directory.
    #[arg(long = "target")]
    target: String,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// alpha, n_style or source_size.
    #[arg(long)]
    kind: String,
    /// Comma-separated values.
    #[arg(long)]
    grid: String,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// Run directories containing results.json.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    User(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite(_) | Error::EmptyRegion | Error::Csv(_) => Failure::Internal(e.to_string()),
            _ => Failure::User(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::User(e.to_string())
    }
}

fn user<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::User(msg.into()))
}

/// Parses `argv` (including the program name) and runs the verb.
/// Returns the process exit code; all messages go to standard error.
pub fn parse_and_dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USER,
            };
        }
    };
    match dispatch(cli.verb) {
        Ok(()) => EXIT_OK,
        Err(Failure::User(m)) => {
            eprintln!("error: {m}");
            EXIT_USER
        }
        Err(Failure::Internal(m)) => {
            eprintln!("internal error: {m}");
            EXIT_INTERNAL
        }
    }
}

fn dispatch(verb: Verb) -> Result<(), Failure> {
    match verb {
        Verb::Generate(a) => generate(a),
        Verb::Stylize(a) => stylize(a),
        Verb::Train(a) => train(a, false),
        Verb::Adapt(a) => train(a, true),
        Verb::Evaluate(a) => evaluate(a),
        Verb::Sweep(a) => sweep(a),
        Verb::Report(a) => report(a),
    }
}

/// Config from `--config` (or defaults), then `--set` overrides, then `--seed`.
fn load_config(c: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for kv in &c.set {
        cfg.apply_override(kv)?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn build_spec(a: &RunArgs, verb: &str, default_variant: Variant) -> Result<RunSpec, Failure> {
    let config = load_config(&a.common)?;
    let variant = match &a.variant {
        Some(v) => v.parse::<Variant>()?,
        None => default_variant,
    };
    let mode = match &a.mode {
        Some(m) => m.parse::<Mode>()?,
        None => Mode::SingleTarget,
    };
    let name = a.name.clone().unwrap_or_else(|| format!("{verb}-{}", variant.name()));
    let mut spec = RunSpec::preset(&name, variant);
    spec.config = config;
    spec.mode = mode;
    spec.source = a.source.parse()?;
    if !a.targets.is_empty() {
        spec.targets = a.targets.iter().map(|t| t.parse()).collect::<fgsty::Result<_>>()?;
    }
    spec.settings.arch = match a.arch.as_str() {
        "standard" => ArchKind::Standard,
        "compact" => ArchKind::Compact,
        other => return user(format!("unknown arch `{other}` (expected standard or compact)")),
    };
    if let Some(t) = &a.test_domain {
        let t: DatasetRef = t.parse()?;
        if a.targets.is_empty() {
            spec.targets.retain(|x| *x != t);
        }
        spec.test_domain = Some(t);
    }
    if mode == Mode::DomainGeneralization && spec.test_domain.is_none() {
        return user("domain_generalization needs --test-domain");
    }
    spec.validate()?;
    Ok(spec)
}

fn out_dir(c: &Common, name: &str) -> Result<PathBuf, Failure> {
    let dir = match &c.out {
        Some(p) => p.clone(),
        None => runs_root().join(format!("{}-{name}", chrono_stamp())),
    };
    fs::create_dir_all(&dir).map_err(|e| Failure::User(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn chrono_stamp() -> String {
    chrono::Utc::now().format("%Y%m%d-%H%M%S").to_string()
}

fn generate(a: GenerateArgs) -> Result<(), Failure> {
    let cfg = load_config(&a.common)?;
    let seed = a.common.seed.unwrap_or(cfg.seed);
    let out = out_dir(&a.common, "generate")?;
    let opts = PresetOptions { resolution: a.resolution, n_train: a.n_train, n_test: a.n_test };
    let suite = preset_suite_with(seed, opts)?;
    for split in std::iter::once(&suite.source).chain(&suite.targets) {
        save_dataset(split, &out.join(&split.domain_id))?;
        let dist = label_distribution_summary(split)?;
        emit_label_distribution(&split.domain_id, &dist, &out)?;
        info!("wrote {} ({} train, {} test)", split.domain_id, split.train.len(), split.test.len());
    }
    fs::write(out.join("recipes.json"), serde_json::to_string_pretty(&suite.recipes).map_err(Error::from)?)?;
    eprintln!("{}", out.display());
    Ok(())
}

fn stylize(a: RunArgs) -> Result<(), Failure> {
    let variant = match &a.variant {
        Some(v) => v.parse::<Variant>()?,
        None => Variant::Fgsty,
    };
    let aligned = match variant {
        Variant::Unaligned => false,
        Variant::Fgsty | Variant::FgstyCpl | Variant::FgstyAdv | Variant::FgstyCplAdv => true,
        other => return user(format!("variant {other} does not stylize")),
    };
    let spec = build_spec(&a, "stylize", variant)?;
    let data = DataBundle::resolve(&spec)?;
    let out = out_dir(&a.common, &spec.name)?;
    let source = data.get(&spec.source)?;
    let src = DatasetSplit { train: source.train.clone(), test: Vec::new(), domain_id: source.domain_id.clone() };
    let root = seeded_rng(spec.config.seed);
    let backend = RegionWct { epsilon: spec.config.wct_epsilon, aligned };
    let mut train = Vec::new();
    let mut manifest = Vec::new();
    for t in &spec.targets {
        let pool = StylePool::sample_from(&[data.get(t)?], spec.config.n_style_images, &root)?;
        let (ss, m) = build_style_adapted_dataset(&src, &pool, &backend, &root.named("stylize"))?;
        train.extend(ss.train);
        manifest.extend(m);
    }
    // file names keep the source stem and the style id
    let domain = format!("{}+style", source.domain_id);
    for (s, m) in train.iter_mut().zip(&manifest) {
        let stem = m.source_id.rsplit('/').next().unwrap_or(&m.source_id);
        s.sample_id = format!("{domain}:train/{stem}__{}", m.style_id.replace([':', '/'], "_"));
    }
    let ss = DatasetSplit { train, test: Vec::new(), domain_id: domain };
    save_dataset(&ss, &out)?;
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest).map_err(Error::from)?)?;
    info!("stylized {} images", manifest.len());
    eprintln!("{}", out.display());
    Ok(())
}

fn train(a: RunArgs, adapt: bool) -> Result<(), Failure> {
    let (verb, default) = if adapt { ("adapt", Variant::FgstyCpl) } else { ("train", Variant::SourceOnly) };
    let spec = build_spec(&a, verb, default)?;
    if adapt && !spec.variant.adapts() {
        return user(format!("variant {} has no adaptation stage; use `train`", spec.variant));
    }
    if !adapt && spec.variant.adapts() {
        return user(format!("variant {} adapts; use `adapt`", spec.variant));
    }
    let data = DataBundle::resolve(&spec)?;
    let art = run_with(&spec, &data, &mut ModelCache::default())?;
    let dir = persist(&a.common, &spec, std::slice::from_ref(&art.result), &art.models)?;
    if !art.style_manifest.is_empty() {
        fs::write(
            dir.join("style_manifest.json"),
            serde_json::to_string_pretty(&art.style_manifest).map_err(Error::from)?,
        )?;
    }
    summary(&art.result);
    eprintln!("{}", dir.display());
    Ok(())
}

fn persist(
    c: &Common,
    spec: &RunSpec,
    results: &[RunResult],
    models: &[(String, fgsty::nn::SegModel<f32>)],
) -> Result<PathBuf, Failure> {
    match &c.out {
        Some(dir) => {
            fs::create_dir_all(dir.join("checkpoints"))?;
            spec.config.save(&dir.join("config.json"))?;
            emit_report(results, dir)?;
            for (tag, m) in models {
                checkpoint::save(m, &dir.join("checkpoints").join(format!("{tag}.ckpt")))?;
            }
            Ok(dir.clone())
        }
        None => Ok(write_run_dir(&runs_root(), &spec.name, &spec.config, results, models)?),
    }
}

fn summary(r: &RunResult) {
    for (d, v) in &r.per_target {
        eprintln!("{d}: {v:.4}");
    }
    eprintln!("average mIoU {:.4} ({:.1}s)", r.average_miou, r.wall_clock_secs);
}

fn evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    let cfg = load_config(&a.common)?;
    let model = checkpoint::load::<f32>(&a.checkpoint, None)?;
    let target: DatasetRef = a.target.parse()?;
    let mut spec = RunSpec::preset("evaluate", Variant::SourceOnly);
    spec.settings.resolution = model.arch().resolution;
    spec.source = target.clone();
    spec.targets = vec![target.clone()];
    let data = DataBundle::resolve(&spec)?;
    let split = data.get(&target)?;
    let eval = fgsty::metrics::evaluate_detailed(&model, &split.test, cfg.predict_threshold as f32)?;
    let out = out_dir(&a.common, "evaluate")?;
    eval.write_csv(fs::File::create(out.join("eval.csv"))?)?;
    eprintln!("{}: mean mIoU {:.4} over {} samples", split.domain_id, eval.mean_miou, eval.per_sample.len());
    eprintln!("{}", out.join("eval.csv").display());
    Ok(())
}

fn parse_grid(s: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .filter(|v| !v.trim().is_empty())
        .map(|v| v.trim().parse::<f64>().or_else(|_| user(format!("grid value `{v}` is not a number"))))
        .collect()
}

fn sweep(a: SweepArgs) -> Result<(), Failure> {
    let kind: SweepKind = a.kind.parse()?;
    let grid = parse_grid(&a.grid)?;
    if grid.is_empty() {
        return user("--grid is empty");
    }
    let spec = build_spec(&a.run, "sweep", Variant::FgstyCpl)?;
    let data = DataBundle::resolve(&spec)?;
    let result = fgsty::pipeline::run_sweep_with(kind, &grid, &spec, &data, &mut ModelCache::default())?;
    let dir = persist(&a.run.common, &spec, &result.runs, &[])?;
    emit_sweep(&result, &dir)?;
    for (v, r) in result.grid.iter().zip(&result.runs) {
        eprintln!("{v}: average mIoU {:.4}, accepted {}", r.average_miou, r.total_accepted());
    }
    eprintln!("{}", dir.display());
    Ok(())
}

fn read_results(dir: &Path) -> Result<Vec<RunResult>, Failure> {
    let path = if dir.is_file() { dir.to_path_buf() } else { dir.join("results.json") };
    let text = fs::read_to_string(&path).map_err(|e| Failure::User(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::User(format!("{}: {e}", path.display())))
}

fn report(a: ReportArgs) -> Result<(), Failure> {
    let mut results = Vec::new();
    for r in &a.runs {
        results.extend(read_results(r)?);
    }
    let out = out_dir(&a.common, "report")?;
    emit_report(&results, &out)?;
    eprintln!("{} runs -> {}", results.len(), out.display());
    Ok(())
}
