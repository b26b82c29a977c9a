//! Experiment orchestration: method variants, baselines, multi-target
//! adaptation, domain generalization, sweeps and persisted reports.

mod cache;
pub mod plot;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::adversarial::{AdvBranch, LambdaSchedule};
use crate::config::ExperimentConfig;
use crate::cpl::{adapt_epoch, pseudo_label_sweep, EpochStats, PseudoLabels, Reference, SweepRow};
use crate::dataset::{load_dataset, DatasetLayout, DatasetSplit, Sample};
use crate::error::{Error, Result};
use crate::metrics::evaluate_model;
use crate::nn::{Arch, OptimState, SegModel, Segmenter};
use crate::rng::{seeded_rng, SeededRng};
use crate::stylizer::{
    build_style_adapted_dataset, normalize_baseline, ManifestEntry, NormMethod, RegionWct, StylePool,
};
use crate::synth::{generate_domain, preset_recipes};
use crate::types::{Image, ProbMap};

pub use cache::ModelCache;
pub use report::{emit_report, write_run_dir};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum Variant {
    #[default]
    SourceOnly,
    TargetOnly,
    Pl,
    Fgsty,
    Cpl,
    FgstyCpl,
    FgstyAdv,
    CplAdv,
    FgstyCplAdv,
    Gray,
    HistEq,
    Fdm,
    HistMatch,
    Unaligned,
}

impl Variant {
    pub const ALL: [Variant; 14] = [
        Variant::SourceOnly,
        Variant::TargetOnly,
        Variant::Pl,
        Variant::Fgsty,
        Variant::Cpl,
        Variant::FgstyCpl,
        Variant::FgstyAdv,
        Variant::CplAdv,
        Variant::FgstyCplAdv,
        Variant::Gray,
        Variant::HistEq,
        Variant::Fdm,
        Variant::HistMatch,
        Variant::Unaligned,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SourceOnly => "source_only",
            Variant::TargetOnly => "target_only",
            Variant::Pl => "pl",
            Variant::Fgsty => "fgsty",
            Variant::Cpl => "cpl",
            Variant::FgstyCpl => "fgsty_cpl",
            Variant::FgstyAdv => "fgsty_adv",
            Variant::CplAdv => "cpl_adv",
            Variant::FgstyCplAdv => "fgsty_cpl_adv",
            Variant::Gray => "gray",
            Variant::HistEq => "hist_eq",
            Variant::Fdm => "fdm",
            Variant::HistMatch => "hist_match",
            Variant::Unaligned => "unaligned",
        }
    }

    fn training_set(self) -> TrainingSet {
        match self {
            Variant::SourceOnly | Variant::Pl | Variant::Cpl | Variant::CplAdv => TrainingSet::Source,
            Variant::TargetOnly => TrainingSet::Target,
            Variant::Fgsty | Variant::FgstyCpl | Variant::FgstyAdv | Variant::FgstyCplAdv => {
                TrainingSet::Stylized { aligned: true }
            }
            Variant::Unaligned => TrainingSet::Stylized { aligned: false },
            Variant::Gray => TrainingSet::Normalized(NormMethod::Gray),
            Variant::HistEq => TrainingSet::Normalized(NormMethod::HistEq),
            Variant::Fdm => TrainingSet::Normalized(NormMethod::Fdm),
            Variant::HistMatch => TrainingSet::Normalized(NormMethod::HistMatch),
        }
    }

    /// Whether the variant has an adaptation stage after pretraining.
    pub fn adapts(self) -> bool {
        matches!(
            self,
            Variant::Pl | Variant::Cpl | Variant::FgstyCpl | Variant::FgstyAdv | Variant::CplAdv | Variant::FgstyCplAdv
        )
    }

    pub fn uses_consensus(self) -> bool {
        matches!(self, Variant::Cpl | Variant::FgstyCpl | Variant::CplAdv | Variant::FgstyCplAdv)
    }

    pub fn adversarial(self) -> bool {
        matches!(self, Variant::FgstyAdv | Variant::CplAdv | Variant::FgstyCplAdv)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Unknown { kind: "variant", name: s.into() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TrainingSet {
    Source,
    Target,
    Stylized { aligned: bool },
    Normalized(NormMethod),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    SingleTarget,
    MultiTarget,
    DomainGeneralization,
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_target" => Ok(Mode::SingleTarget),
            "multi_target" => Ok(Mode::MultiTarget),
            "domain_generalization" => Ok(Mode::DomainGeneralization),
            _ => Err(Error::Unknown { kind: "mode", name: s.into() }),
        }
    }
}

/// A dataset: either a synthetic preset domain or a directory in the
/// standard layout.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetRef {
    Preset(String),
    Path(PathBuf),
}

impl FromStr for DatasetRef {
    type Err = Error;
    /// `preset:<domain>` or a filesystem path.
    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("preset:") {
            Some(d) if !d.is_empty() => Ok(DatasetRef::Preset(d.into())),
            Some(_) => Err(Error::Config("empty preset name".into())),
            None => Ok(DatasetRef::Path(s.into())),
        }
    }
}

impl fmt::Display for DatasetRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetRef::Preset(d) => write!(f, "preset:{d}"),
            DatasetRef::Path(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    #[default]
    Standard,
    Compact,
}

impl ArchKind {
    pub fn build(self, resolution: usize) -> Arch {
        match self {
            ArchKind::Standard => Arch::standard(resolution),
            ArchKind::Compact => Arch::compact(resolution),
        }
    }
}

/// Run settings that are not hyperparameters of the method itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    /// Working resolution (square).
    pub resolution: usize,
    pub arch: ArchKind,
    /// Share of `epochs` spent pretraining before adaptation.
    pub pretrain_fraction: f64,
    /// Seed and sizes for generating preset domains.
    pub data_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    /// Share of the source train split kept (source-size sweep).
    pub source_fraction: f64,
    pub lambda_schedule: LambdaSchedule,
    /// Track pseudo-label quality against target ground truth each
    /// adaptation epoch, when the target train split is labeled.
    pub track_label_quality: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            resolution: 64,
            arch: ArchKind::Standard,
            pretrain_fraction: 0.5,
            data_seed: 0,
            n_train: 64,
            n_test: 32,
            source_fraction: 1.0,
            lambda_schedule: LambdaSchedule::Ramp,
            track_label_quality: true,
        }
    }
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 8 {
            return Err(Error::Config(format!("resolution {} too small", self.resolution)));
        }
        if !(0.0..1.0).contains(&self.pretrain_fraction) {
            return Err(Error::Config("pretrain_fraction must lie in [0,1)".into()));
        }
        if !(self.source_fraction > 0.0 && self.source_fraction <= 1.0) {
            return Err(Error::Config("source_fraction must lie in (0,1]".into()));
        }
        self.arch.build(self.resolution).validate()
    }

    pub fn arch(&self) -> Arch {
        self.arch.build(self.resolution)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub name: String,
    pub variant: Variant,
    pub mode: Mode,
    pub source: DatasetRef,
    pub targets: Vec<DatasetRef>,
    /// Held-out evaluation domain for domain generalization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_domain: Option<DatasetRef>,
    pub config: ExperimentConfig,
    #[serde(default)]
    pub settings: RunSettings,
}

impl RunSpec {
    /// Preset source with the four preset targets.
    pub fn preset(name: &str, variant: Variant) -> Self {
        Self {
            name: name.into(),
            variant,
            mode: Mode::SingleTarget,
            source: DatasetRef::Preset("source".into()),
            targets: ["t1", "t2", "t3", "t4"].iter().map(|t| DatasetRef::Preset((*t).into())).collect(),
            test_domain: None,
            config: ExperimentConfig::default(),
            settings: RunSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.settings.validate()?;
        if self.targets.is_empty() {
            return Err(Error::Config("at least one target is required".into()));
        }
        if self.mode == Mode::DomainGeneralization {
            let test = self
                .test_domain
                .as_ref()
                .ok_or_else(|| Error::Config("domain generalization needs a test domain".into()))?;
            if self.targets.contains(test) {
                return Err(Error::Leakage(format!("test domain {test} is also an adaptation domain")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub name: String,
    pub variant: Variant,
    pub mode: Mode,
    /// Test mIoU per evaluated domain.
    pub per_target: BTreeMap<String, f64>,
    pub average_miou: f64,
    /// Mean loss per epoch, keyed by `<adaptation tag>/<stage>`.
    pub loss_curves: BTreeMap<String, Vec<f64>>,
    pub pseudo_label_stats: BTreeMap<String, Vec<EpochStats>>,
    /// Per adaptation epoch: accepted count and label quality against ground truth.
    pub label_quality: BTreeMap<String, Vec<SweepRow>>,
    pub spec: RunSpec,
    pub seed: u64,
    pub wall_clock_secs: f64,
}


impl Default for RunSpec {
    fn default() -> Self {
        RunSpec::preset("run", Variant::SourceOnly)
    }
}

impl RunResult {
    /// Total pseudo-labels accepted over every adaptation epoch.
    pub fn total_accepted(&self) -> usize {
        self.pseudo_label_stats.values().flatten().map(|s| s.n_accepted).sum()
    }

    /// Acceptance-weighted mean label quality over all adaptation epochs.
    pub fn mean_label_quality(&self) -> Option<f64> {
        let (mut num, mut den) = (0.0, 0usize);
        for row in self.label_quality.values().flatten() {
            if let Some(q) = row.mean_quality {
                num += q * row.n_accepted as f64;
                den += row.n_accepted;
            }
        }
        (den > 0).then(|| num / den as f64)
    }
}

/// Resolved datasets.
#[derive(Clone, Debug, Default)]
pub struct DataBundle {
    pub domains: BTreeMap<DatasetRef, DatasetSplit>,
}

impl DataBundle {
    /// Loads every dataset a spec refers to. Presets are generated from the
    /// spec's settings; paths are read in the standard layout.
    pub fn resolve(spec: &RunSpec) -> Result<Self> {
        let mut bundle = DataBundle::default();
        let refs = std::iter::once(&spec.source).chain(&spec.targets).chain(spec.test_domain.as_ref());
        for r in refs {
            if bundle.domains.contains_key(r) {
                continue;
            }
            let split = match r {
                DatasetRef::Preset(name) => {
                    let recipe = preset_recipes(spec.settings.resolution)
                        .into_iter()
                        .find(|x| &x.domain_id == name)
                        .ok_or_else(|| Error::Unknown { kind: "preset domain", name: name.clone() })?;
                    generate_domain(&recipe, spec.settings.n_train, spec.settings.n_test, spec.settings.data_seed)?
                }
                DatasetRef::Path(p) => {
                    let layout = DatasetLayout { resolution: spec.settings.resolution, train_labeled: false };
                    load_dataset(p, layout)?
                }
            };
            bundle.domains.insert(r.clone(), split);
        }
        Ok(bundle)
    }

    pub fn insert(&mut self, r: DatasetRef, split: DatasetSplit) {
        self.domains.insert(r, split);
    }

    pub fn get(&self, r: &DatasetRef) -> Result<&DatasetSplit> {
        self.domains.get(r).ok_or_else(|| Error::Unknown { kind: "dataset", name: r.to_string() })
    }
}

/// Model plus the input normalization applied at test time.
pub struct DeployedModel {
    pub model: SegModel<f32>,
    pub input_norm: Option<NormMethod>,
}

impl Segmenter for DeployedModel {
    fn predict(&self, image: &Image) -> Result<ProbMap> {
        match self.input_norm {
            Some(m) => self.model.predict(&normalize_baseline(image, m, None)?),
            None => self.model.predict(image),
        }
    }
}

/// Everything a run produced besides the result record.
pub struct RunArtifacts {
    pub result: RunResult,
    /// Final models keyed by adaptation tag.
    pub models: Vec<(String, SegModel<f32>)>,
    pub style_manifest: Vec<ManifestEntry>,
}

struct Log {
    curves: BTreeMap<String, Vec<f64>>,
    pl: BTreeMap<String, Vec<EpochStats>>,
    quality: BTreeMap<String, Vec<SweepRow>>,
    used_ids: BTreeSet<String>,
    manifest: Vec<ManifestEntry>,
}

/// Executes a spec, resolving its datasets first.
pub fn run(spec: &RunSpec) -> Result<RunResult> {
    let data = DataBundle::resolve(spec)?;
    Ok(run_with(spec, &data, &mut ModelCache::default())?.result)
}

/// Executes a spec on already resolved data. Dispatches on the spec's mode.
pub fn run_with(spec: &RunSpec, data: &DataBundle, cache: &mut ModelCache) -> Result<RunArtifacts> {
    spec.validate()?;
    match spec.mode {
        Mode::SingleTarget => run_single(spec, data, cache),
        Mode::MultiTarget => run_multi_target_with(spec, data, cache),
        Mode::DomainGeneralization => run_domain_generalization_with(spec, data, cache),
    }
}

fn new_log() -> Log {
    Log {
        curves: BTreeMap::new(),
        pl: BTreeMap::new(),
        quality: BTreeMap::new(),
        used_ids: BTreeSet::new(),
        manifest: Vec::new(),
    }
}

fn finish(
    spec: &RunSpec,
    per_target: BTreeMap<String, f64>,
    log: Log,
    models: Vec<(String, SegModel<f32>)>,
    start: Instant,
    data: &DataBundle,
) -> Result<RunArtifacts> {
    audit_ids(&log.used_ids, data)?;
    let average_miou = per_target.values().sum::<f64>() / per_target.len().max(1) as f64;
    let result = RunResult {
        name: spec.name.clone(),
        variant: spec.variant,
        mode: spec.mode,
        per_target,
        average_miou,
        loss_curves: log.curves,
        pseudo_label_stats: log.pl,
        label_quality: log.quality,
        spec: spec.clone(),
        seed: spec.config.seed,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    info!("{} [{}]: average mIoU {:.4}", spec.name, spec.variant, result.average_miou);
    Ok(RunArtifacts { result, models, style_manifest: log.manifest })
}

fn run_single(spec: &RunSpec, data: &DataBundle, cache: &mut ModelCache) -> Result<RunArtifacts> {
    let start = Instant::now();
    let mut log = new_log();
    let mut per_target = BTreeMap::new();
    let mut models = Vec::new();
    for t in &spec.targets {
        let target = data.get(t)?;
        let tag = target.domain_id.clone();
        let model = train_variant(spec, data, &[target], &tag, cache, &mut log)?;
        per_target.insert(tag.clone(), evaluate_model(&model, &target.test, spec.config.predict_threshold as f32)?);
        models.push((tag, model.model));
    }
    finish(spec, per_target, log, models, start, data)
}

/// One adaptation over the union of all targets, evaluated per target.
pub fn run_multi_target(spec: &RunSpec) -> Result<RunResult> {
    let data = DataBundle::resolve(spec)?;
    Ok(run_multi_target_with(spec, &data, &mut ModelCache::default())?.result)
}

pub fn run_multi_target_with(spec: &RunSpec, data: &DataBundle, cache: &mut ModelCache) -> Result<RunArtifacts> {
    spec.config.validate()?;
    if spec.targets.len() < 2 {
        return Err(Error::Config(format!("multi-target needs >= 2 targets, got {}", spec.targets.len())));
    }
    let start = Instant::now();
    let mut log = new_log();
    let targets = spec.targets.iter().map(|t| data.get(t)).collect::<Result<Vec<_>>>()?;
    let model = train_variant(spec, data, &targets, "multi", cache, &mut log)?;
    let mut per_target = BTreeMap::new();
    for t in &targets {
        // identical domains listed twice keep distinct keys
        let mut key = t.domain_id.clone();
        while per_target.contains_key(&key) {
            key.push('\'');
        }
        per_target.insert(key, evaluate_model(&model, &t.test, spec.config.predict_threshold as f32)?);
    }
    finish(spec, per_target, log, vec![("multi".into(), model.model)], start, data)
}

/// Adapts to the auxiliary domains (`spec.targets`) and evaluates only on
/// the held-out `test_domain`.
pub fn run_domain_generalization(spec: &RunSpec, test_domain: &DatasetRef) -> Result<RunResult> {
    let spec = RunSpec { mode: Mode::DomainGeneralization, test_domain: Some(test_domain.clone()), ..spec.clone() };
    let data = DataBundle::resolve(&spec)?;
    Ok(run_domain_generalization_with(&spec, &data, &mut ModelCache::default())?.result)
}

pub fn run_domain_generalization_with(
    spec: &RunSpec,
    data: &DataBundle,
    cache: &mut ModelCache,
) -> Result<RunArtifacts> {
    if spec.targets.is_empty() {
        return Err(Error::Config("domain generalization needs at least one auxiliary domain".into()));
    }
    let test_ref =
        spec.test_domain.as_ref().ok_or_else(|| Error::Config("domain generalization needs a test domain".into()))?;
    if spec.targets.contains(test_ref) {
        return Err(Error::Leakage(format!("test domain {test_ref} is also an auxiliary domain")));
    }
    let test = data.get(test_ref)?;
    let aux = spec.targets.iter().map(|t| data.get(t)).collect::<Result<Vec<_>>>()?;
    if aux.iter().any(|a| a.domain_id == test.domain_id) {
        return Err(Error::Leakage(format!("domain {} used for adaptation and testing", test.domain_id)));
    }
    let start = Instant::now();
    let mut log = new_log();
    let model = train_variant(spec, data, &aux, "dg", cache, &mut log)?;
    if log.used_ids.iter().any(|id| id.starts_with(&format!("{}:", test.domain_id))) {
        return Err(Error::Leakage(format!("held-out domain {} reached training", test.domain_id)));
    }
    let mut per_target = BTreeMap::new();
    per_target
        .insert(test.domain_id.clone(), evaluate_model(&model, &test.test, spec.config.predict_threshold as f32)?);
    finish(spec, per_target, log, vec![("dg".into(), model.model)], start, data)
}

// No test sample may be trained on or used as a style image.
fn audit_ids(used: &BTreeSet<String>, data: &DataBundle) -> Result<()> {
    for split in data.domains.values() {
        for s in &split.test {
            if used.contains(&s.sample_id) {
                return Err(Error::Leakage(format!("test sample {} was used during training", s.sample_id)));
            }
        }
    }
    Ok(())
}

/// Deterministic subset: sort by id, seeded shuffle, keep the first `ceil(fraction·n)`.
pub fn subsample(samples: &[Sample], fraction: f64, rng: &SeededRng) -> Vec<Sample> {
    if fraction >= 1.0 {
        return samples.to_vec();
    }
    let mut v: Vec<&Sample> = samples.iter().collect();
    v.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    rng.named("subsample").shuffle(&mut v);
    let keep = ((fraction * samples.len() as f64).ceil() as usize).clamp(1, samples.len());
    v.into_iter().take(keep).cloned().collect()
}

fn labeled_train(targets: &[&DatasetSplit]) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for t in targets {
        for s in &t.train {
            s.mask()?;
            out.push(s.clone());
        }
    }
    Ok(out)
}

fn supervised_stage(
    init: &str,
    samples: &[Sample],
    epochs: usize,
    spec: &RunSpec,
    cache: &mut ModelCache,
) -> Result<cache::Stage> {
    let cfg = &spec.config;
    let arch = spec.settings.arch();
    let root = seeded_rng(cfg.seed);
    let split = ((cfg.epochs as f64) * spec.settings.pretrain_fraction).round() as usize;
    cache.train(init, samples, epochs, &[split, cfg.epochs], &arch, cfg, &root)
}

/// Builds the variant's training data, trains (and adapts) the model.
fn train_variant(
    spec: &RunSpec,
    data: &DataBundle,
    targets: &[&DatasetSplit],
    tag: &str,
    cache: &mut ModelCache,
    log: &mut Log,
) -> Result<DeployedModel> {
    let cfg = &spec.config;
    let variant = spec.variant;
    let root = seeded_rng(cfg.seed);
    let source = data.get(&spec.source)?;
    let source_train = subsample(&source.train, spec.settings.source_fraction, &root);
    for s in &source_train {
        s.mask()?;
    }
    let epochs = cfg.epochs;
    let pre_epochs =
        if variant.adapts() { ((epochs as f64) * spec.settings.pretrain_fraction).round() as usize } else { epochs };
    let adapt_epochs = epochs - pre_epochs;

    let mut input_norm = None;
    let training_set = variant.training_set();
    let labeled: Vec<Sample> = match training_set {
        TrainingSet::Source => source_train.clone(),
        TrainingSet::Target => labeled_train(targets)?,
        TrainingSet::Stylized { aligned } => {
            // one stylized copy of the source per target, each from that target's own pool
            let backend = RegionWct { epsilon: cfg.wct_epsilon, aligned };
            let src =
                DatasetSplit { train: source_train.clone(), test: Vec::new(), domain_id: source.domain_id.clone() };
            let mut union = Vec::with_capacity(source_train.len() * targets.len());
            for t in targets {
                let pool = StylePool::sample_from(&[*t], cfg.n_style_images, &root)?;
                log.used_ids.extend(pool.ids().into_iter().map(String::from));
                let (ss, manifest) = build_style_adapted_dataset(&src, &pool, &backend, &root.named("stylize"))?;
                log.manifest.extend(manifest);
                union.extend(ss.train);
            }
            union
        }
        TrainingSet::Normalized(method) => {
            let pool = if method.needs_reference() {
                let p = StylePool::sample_from(targets, cfg.n_style_images, &root)?;
                log.used_ids.extend(p.ids().into_iter().map(String::from));
                Some(p)
            } else {
                input_norm = Some(method);
                None
            };
            source_train
                .iter()
                .map(|s| {
                    let reference = pool.as_ref().map(|p| {
                        let mut r = root.named(&format!("reference/{}", s.sample_id));
                        &p.samples[r.below(p.len())].image
                    });
                    Ok(Sample { image: normalize_baseline(&s.image, method, reference)?, ..s.clone() })
                })
                .collect::<Result<_>>()?
        }
    };
    log.used_ids.extend(labeled.iter().map(|s| s.sample_id.clone()));
    log.used_ids.extend(source_train.iter().map(|s| s.sample_id.clone()));

    // the source-only model doubles as the consensus reference
    let init = if variant == Variant::SourceOnly { "reference" } else { "model" };
    let cache::Stage { mut model, opt, rng, curve } = supervised_stage(init, &labeled, pre_epochs, spec, cache)?;
    log.curves.insert(format!("{tag}/train"), curve);

    if variant.adapts() && adapt_epochs > 0 {
        let unlabeled: Vec<Sample> = targets.iter().flat_map(|t| t.train.iter().map(Sample::without_label)).collect();
        log.used_ids.extend(unlabeled.iter().map(|s| s.sample_id.clone()));
        let gt: Option<Vec<Sample>> =
            targets.iter().flat_map(|t| t.train.iter()).map(|s| s.mask.is_some().then(|| s.clone())).collect();
        let reference = if variant.uses_consensus() {
            Some(supervised_stage("reference", &source_train, epochs, spec, cache)?.model)
        } else {
            None
        };
        adapt_stage(
            spec,
            &mut model,
            opt,
            rng,
            reference,
            &labeled,
            &source_train,
            &unlabeled,
            gt.as_deref(),
            adapt_epochs,
            tag,
            log,
        )?;
    }
    Ok(DeployedModel { model, input_norm })
}

#[allow(clippy::too_many_arguments)]
fn adapt_stage(
    spec: &RunSpec,
    model: &mut SegModel<f32>,
    mut opt: OptimState<f32>,
    mut rng: SeededRng,
    reference: Option<SegModel<f32>>,
    labeled: &[Sample],
    source_train: &[Sample],
    unlabeled: &[Sample],
    gt: Option<&[Sample]>,
    epochs: usize,
    tag: &str,
    log: &mut Log,
) -> Result<()> {
    let cfg = &spec.config;
    let variant = spec.variant;
    let root = seeded_rng(cfg.seed);
    let labels = if variant.uses_consensus() {
        PseudoLabels::Consensus { alpha: cfg.alpha }
    } else if variant == Variant::Pl {
        PseudoLabels::Naive { threshold: cfg.pl_threshold }
    } else {
        PseudoLabels::Off
    };
    let feat = model.arch().feature_channels();
    let new_branch = |name: &str| {
        AdvBranch::<f32>::new(feat, cfg.learning_rate, cfg.grl_lambda, cfg.loss_weights.adv, &mut root.named(name))
    };
    let mut adv = variant.adversarial().then(|| new_branch("disc/model"));
    // the reference keeps learning only when it has its own adversarial branch
    let trainable_ref = variant.adversarial() && reference.is_some();
    let mut r_model = reference;
    let mut r_opt = r_model.as_ref().map(|r| OptimState::adam(r.n_params(), cfg.learning_rate));
    let mut r_adv = trainable_ref.then(|| new_branch("disc/reference"));

    let mut curve = Vec::with_capacity(epochs);
    let mut stats_log = Vec::with_capacity(epochs);
    let mut quality = Vec::new();
    for e in 0..epochs {
        let lambda = spec.settings.lambda_schedule.at(cfg.grl_lambda, e as f64 / epochs.max(1) as f64);
        for b in adv.iter_mut().chain(r_adv.iter_mut()) {
            b.lambda = lambda;
        }
        let reference = match (&mut r_model, trainable_ref) {
            (None, _) => Reference::None,
            (Some(r), false) => Reference::Frozen(r),
            (Some(r), true) => Reference::Trainable {
                model: r,
                opt: r_opt.as_mut().expect("reference optimizer"),
                source: source_train,
                adv: r_adv.as_mut(),
            },
        };
        let stats = adapt_epoch(model, &mut opt, reference, labeled, unlabeled, labels, adv.as_mut(), cfg, &mut rng)?;
        info!(
            "{tag} epoch {}/{epochs}: seg {:.4} pl {:.4} accepted {} rejected {}",
            e + 1,
            stats.seg_loss,
            stats.cpl_loss,
            stats.n_accepted,
            stats.n_rejected
        );
        curve.push(stats.seg_loss + cfg.loss_weights.cpl * stats.cpl_loss);
        stats_log.push(stats);
        if let (Some(r), Some(gt), true) = (&r_model, gt, spec.settings.track_label_quality) {
            if variant.uses_consensus() {
                quality.extend(pseudo_label_sweep(model, r, gt, &[cfg.alpha])?);
            }
        }
    }
    log.curves.insert(format!("{tag}/adapt"), curve);
    log.pl.insert(tag.to_string(), stats_log);
    if !quality.is_empty() {
        log.quality.insert(tag.to_string(), quality);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Alpha,
    NStyle,
    SourceSize,
}

impl FromStr for SweepKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepKind::Alpha),
            "n_style" => Ok(SweepKind::NStyle),
            "source_size" => Ok(SweepKind::SourceSize),
            _ => Err(Error::Unknown { kind: "sweep kind", name: s.into() }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub kind: SweepKind,
    pub grid: Vec<f64>,
    pub runs: Vec<RunResult>,
}

/// Applies one sweep value to a copy of `base`.
pub fn sweep_point(kind: SweepKind, value: f64, base: &RunSpec) -> Result<RunSpec> {
    let mut spec = base.clone();
    match kind {
        SweepKind::Alpha => spec.config.alpha = value,
        SweepKind::NStyle => {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(Error::Config(format!("n_style grid values must be positive integers, got {value}")));
            }
            spec.config.n_style_images = value as usize;
        }
        SweepKind::SourceSize => spec.settings.source_fraction = value,
    }
    spec.name = format!("{}-{}{}", base.name, kind_name(kind), value);
    spec.validate()?;
    Ok(spec)
}

fn kind_name(kind: SweepKind) -> &'static str {
    match kind {
        SweepKind::Alpha => "alpha",
        SweepKind::NStyle => "n_style",
        SweepKind::SourceSize => "source_size",
    }
}

pub fn run_sweep(kind: SweepKind, grid: &[f64], base: &RunSpec) -> Result<SweepResult> {
    let data = DataBundle::resolve(base)?;
    run_sweep_with(kind, grid, base, &data, &mut ModelCache::default())
}

pub fn run_sweep_with(
    kind: SweepKind,
    grid: &[f64],
    base: &RunSpec,
    data: &DataBundle,
    cache: &mut ModelCache,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let mut runs = Vec::with_capacity(grid.len());
    for &v in grid {
        let spec = sweep_point(kind, v, base)?;
        runs.push(run_with(&spec, data, cache)?.result);
    }
    Ok(SweepResult { kind, grid: grid.to_vec(), runs })
}

/// Re-executes a run from its recorded spec (config snapshot and seed).
pub fn replay(result: &RunResult) -> Result<RunResult> {
    run(&result.spec)
}

/// Default output root: `$FGSTY_RUNS_DIR`, else `./runs`.
pub fn runs_root() -> PathBuf {
    std::env::var_os("FGSTY_RUNS_DIR").map(PathBuf::from).unwrap_or_else(|| Path::new("runs").to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.name()));
        }
        assert!("best".parse::<Variant>().is_err());
    }

    #[test]
    fn dataset_ref_parsing() {
        assert_eq!("preset:t2".parse::<DatasetRef>().unwrap(), DatasetRef::Preset("t2".into()));
        assert_eq!("data/x".parse::<DatasetRef>().unwrap(), DatasetRef::Path("data/x".into()));
        assert!("preset:".parse::<DatasetRef>().is_err());
    }

    #[test]
    fn dg_spec_rejects_leakage() {
        let mut spec = RunSpec::preset("dg", Variant::FgstyCpl);
        spec.mode = Mode::DomainGeneralization;
        spec.test_domain = Some(DatasetRef::Preset("t2".into()));
        assert!(matches!(spec.validate(), Err(Error::Leakage(_))));
        spec.targets.retain(|t| t != &DatasetRef::Preset("t2".into()));
        spec.validate().unwrap();
    }

    #[test]
    fn subsample_is_deterministic() {
        let img = Image::filled(2, 2, [0.5; 3]);
        let samples: Vec<Sample> = (0..10).map(|i| Sample::unlabeled(img.clone(), "d", &format!("d:{i}"))).collect();
        let a = subsample(&samples, 0.3, &seeded_rng(1));
        let mut rev = samples.clone();
        rev.reverse();
        let b = subsample(&rev, 0.3, &seeded_rng(1));
        assert_eq!(a.len(), 3);
        assert_eq!(a, b);
    }
}
