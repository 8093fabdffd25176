//! Experiment orchestration: TOML configs, the (strategy, noise, seed) grid,
//! per-run JSON records, the results/aggregate CSVs and the summary table.
//!
//! Layout of an output directory:
//!
//! ```text
//! runs/<strategy>__<noise_kind>-<level>__seed<seed>.json
//! results.csv     one row per run, includes wall-clock time
//! aggregate.csv   mean and sample std per (strategy, noise); deterministic
//! summary.txt
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::continual::{self, subseed, ContinualError, RunRecord, StrategyConfig, StrategyKind};
use crate::data::{self, DataError, Dataset, ExperienceStream, FlipTarget, NoiseSpec};
use crate::model::TrainConfig;

pub const SCHEMA_VERSION: u32 = 1;
pub const WORKERS_ENV: &str = "CRUST_WORKERS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("no run records found in {0}")]
    NoResults(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("reading {images} / {labels}: {source}")]
    Idx {
        images: PathBuf,
        labels: PathBuf,
        source: DataError,
    },
    #[error(transparent)]
    Continual(#[from] ContinualError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("worker pool: {0}")]
    Pool(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Gaussian blobs; features are rescaled into `[0, 1]` when the grid has
    /// instance-noise levels.
    Synthetic {
        num_classes: usize,
        per_class: usize,
        test_per_class: usize,
        feature_dim: usize,
        separation: f64,
        #[serde(default)]
        seed: u64,
    },
    /// IDX image/label files; paths are relative to the working directory.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        per_class: Option<usize>,
        test_per_class: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseGrid {
    /// Label-flip probabilities.
    pub label_flip: Vec<f64>,
    /// Fractions of training samples given salt-and-pepper noise.
    pub instance: Vec<f64>,
    pub flip_target: FlipTarget,
    pub pixel_corrupt_prob: f64,
    pub blend: f64,
}

impl Default for NoiseGrid {
    fn default() -> Self {
        Self {
            label_flip: vec![0.0],
            instance: Vec::new(),
            flip_target: FlipTarget::AnyClass,
            pixel_corrupt_prob: 0.9,
            blend: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    LabelFlip,
    Instance,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::LabelFlip => "label_flip",
            NoiseKind::Instance => "instance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyEntry {
    pub name: StrategyKind,
    pub learning_rate: Option<f64>,
    pub coreset_k: Option<usize>,
}

fn default_first() -> usize {
    2
}

fn default_step() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing)]
    pub workers: Option<usize>,
    #[serde(default = "default_first")]
    pub first_experience_classes: usize,
    #[serde(default = "default_step")]
    pub classes_per_experience: usize,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub noise: NoiseGrid,
    /// Shared settings; each strategy entry may override a few of them.
    #[serde(default)]
    pub defaults: StrategyConfig,
    pub strategies: Vec<StrategyEntry>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.strategies.is_empty() {
            return bad("strategies must not be empty".into());
        }
        let mut seen = Vec::new();
        for s in &self.strategies {
            if seen.contains(&s.name) {
                return bad(format!("strategy {} listed twice", s.name));
            }
            seen.push(s.name);
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.noise.label_flip.is_empty() && self.noise.instance.is_empty() {
            return bad("noise grid needs at least one label_flip or instance level".into());
        }
        for &v in self.noise.label_flip.iter().chain(&self.noise.instance) {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("noise level {v} outside [0,1]"));
            }
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        if self.first_experience_classes == 0 || self.classes_per_experience == 0 {
            return bad("experience class counts must be positive".into());
        }
        NoiseSpec {
            pixel_corrupt_prob: self.noise.pixel_corrupt_prob,
            blend: self.noise.blend,
            ..NoiseSpec::default()
        }
        .validate()?;
        for s in self.strategy_configs() {
            s.validate()?;
        }
        if let DatasetSpec::Synthetic {
            num_classes,
            per_class,
            test_per_class,
            feature_dim,
            separation,
            ..
        } = &self.dataset
        {
            if *num_classes < 2 || *per_class == 0 || *test_per_class == 0 || *feature_dim == 0 {
                return bad("synthetic dataset needs >= 2 classes and positive sizes".into());
            }
            if !(*separation > 0.0) {
                return bad("synthetic separation must be positive".into());
            }
        }
        Ok(())
    }

    /// Fully resolved strategy settings, in config order.
    pub fn strategy_configs(&self) -> Vec<StrategyConfig> {
        self.strategies
            .iter()
            .map(|e| {
                let mut c = self.defaults.clone();
                c.strategy = e.name;
                if let Some(lr) = e.learning_rate {
                    c.train.learning_rate = lr;
                }
                if let Some(k) = e.coreset_k {
                    c.coreset_k = k;
                }
                c
            })
            .collect()
    }

    pub fn noise_cells(&self) -> Vec<(NoiseKind, f64)> {
        self.noise
            .label_flip
            .iter()
            .map(|&v| (NoiseKind::LabelFlip, v))
            .chain(self.noise.instance.iter().map(|&v| (NoiseKind::Instance, v)))
            .collect()
    }

    /// Every (strategy, noise, seed) job in output order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut strategies = self.strategy_configs();
        strategies.sort_by_key(|s| s.strategy);
        let mut out = Vec::new();
        for s in &strategies {
            for &(kind, level) in &self.noise_cells() {
                for &seed in &self.seeds {
                    out.push(Cell {
                        strategy: s.clone(),
                        noise_kind: kind,
                        noise_level: level,
                        seed,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub strategy: StrategyConfig,
    pub noise_kind: NoiseKind,
    pub noise_level: f64,
    pub seed: u64,
}

impl Cell {
    pub fn label(&self) -> String {
        format!(
            "{}__{}-{:.4}__seed{}",
            self.strategy.strategy,
            self.noise_kind.name(),
            self.noise_level,
            self.seed
        )
    }
}

/// Config echo plus build stamp, embedded in every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub git_rev: String,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            git_rev: option_env!("CRUST_REPLAY_GIT_REV").unwrap_or("unknown").to_string(),
            config: ExperimentConfig {
                workers: None,
                ..config.clone()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub afa: f64,
    pub forgetting: Option<f64>,
    pub purity: Option<f64>,
    pub wallclock_s: f64,
}

/// One JSON file per grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub schema_version: u32,
    pub manifest: Manifest,
    pub noise_kind: NoiseKind,
    pub noise_level: f64,
    pub metrics: RunMetrics,
    pub record: RunRecord,
}

/// Clean train/test splits shared by every cell.
#[derive(Debug, Clone)]
pub struct BaseData {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn load_base_data(cfg: &ExperimentConfig) -> Result<BaseData> {
    let (train, test) = match &cfg.dataset {
        DatasetSpec::Synthetic {
            num_classes,
            per_class,
            test_per_class,
            feature_dim,
            separation,
            seed,
        } => {
            let train = data::generate_gaussian_blobs(*num_classes, *per_class, *feature_dim, *separation, *seed)?;
            let test = data::generate_gaussian_blobs(
                *num_classes,
                *test_per_class,
                *feature_dim,
                *separation,
                subseed(*seed, 0x7465_7374),
            )?;
            if cfg.noise.instance.is_empty() {
                (train, test)
            } else {
                let scaled_test = data::rescale_unit_interval_like(&test, &train);
                (data::rescale_unit_interval(&train), scaled_test)
            }
        }
        DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            per_class,
            test_per_class,
        } => {
            let load = |images: &PathBuf, labels: &PathBuf| {
                data::load_idx(images, labels).map_err(|source| CliError::Idx {
                    images: images.clone(),
                    labels: labels.clone(),
                    source,
                })
            };
            let mut train = load(train_images, train_labels)?;
            let mut test = load(test_images, test_labels)?;
            if let Some(n) = per_class {
                train = train.take_per_class(*n);
            }
            if let Some(n) = test_per_class {
                test = test.take_per_class(*n);
            }
            (train, test)
        }
    };
    Ok(BaseData { train, test })
}

const FLIP_STREAM: u64 = 0x666c_6970;
const INSTANCE_STREAM: u64 = 0x696e_7374;

/// Noisy train split and curriculum for one cell. The noise realization
/// depends only on (noise, seed), so strategies see identical data.
pub fn cell_data(
    base: &BaseData,
    cfg: &ExperimentConfig,
    kind: NoiseKind,
    level: f64,
    seed: u64,
) -> Result<(Dataset, ExperienceStream)> {
    let (first, step) = (cfg.first_experience_classes, cfg.classes_per_experience);
    let clean_stream = data::build_stream_with(&base.train, &base.test, seed, first, step)?;
    let train = match kind {
        NoiseKind::LabelFlip => match cfg.noise.flip_target {
            FlipTarget::AnyClass => data::flip_labels(
                &base.train,
                level,
                base.train.num_classes(),
                subseed(seed, FLIP_STREAM),
            )?,
            FlipTarget::SeenClasses => data::flip_labels_seen(
                &base.train,
                level,
                &clean_stream.class_order,
                first,
                subseed(seed, FLIP_STREAM),
            )?,
        },
        NoiseKind::Instance => data::perturb_instances(
            &base.train,
            &NoiseSpec {
                instance_noise_fraction: level,
                pixel_corrupt_prob: cfg.noise.pixel_corrupt_prob,
                blend: cfg.noise.blend,
                rng_seed: subseed(seed, INSTANCE_STREAM),
                ..NoiseSpec::default()
            },
        )?,
    };
    // membership follows clean labels, so the curriculum is unchanged
    let stream = data::build_stream_with(&train, &base.test, seed, first, step)?;
    Ok((train, stream))
}

pub fn run_cell(base: &BaseData, cfg: &ExperimentConfig, cell: &Cell) -> Result<RunFile> {
    let (train, stream) = cell_data(base, cfg, cell.noise_kind, cell.noise_level, cell.seed)?;
    let record = continual::run_curriculum(&train, &base.test, &stream, &cell.strategy, cell.seed)?;
    let metrics = RunMetrics {
        afa: record.afa()?,
        forgetting: record.forgetting(),
        purity: record.final_purity(),
        wallclock_s: record.total_wallclock_s(),
    };
    Ok(RunFile {
        schema_version: SCHEMA_VERSION,
        manifest: Manifest::new(cfg),
        noise_kind: cell.noise_kind,
        noise_level: cell.noise_level,
        metrics,
        record,
    })
}

/// Write-to-temp-then-rename in the destination directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

/// Worker count: explicit value, else the config's, else available cores.
pub fn resolve_workers(explicit: Option<usize>, cfg: &ExperimentConfig) -> usize {
    explicit
        .or(cfg.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .max(1)
}

#[derive(Debug)]
pub struct CellFailure {
    pub cell: String,
    pub error: String,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunFile>,
    pub failures: Vec<CellFailure>,
    pub summary: String,
}

pub fn runs_dir(output_dir: &Path) -> PathBuf {
    output_dir.join("runs")
}

/// Executes the whole grid on a bounded pool, persisting each run as it
/// finishes, then writes the CSVs and summary. A failing cell is reported
/// in the outcome without stopping its siblings.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let base = load_base_data(cfg)?;
    let cells = cfg.cells();
    let dir = runs_dir(&cfg.output_dir);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Pool(e.to_string()))?;
    log::info!("running {} cells on {workers} workers", cells.len());
    let results: Vec<std::result::Result<RunFile, CellFailure>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let label = cell.label();
                let fail = |e: CliError| CellFailure {
                    cell: label.clone(),
                    error: e.to_string(),
                };
                let run = run_cell(&base, cfg, cell).map_err(fail)?;
                let path = dir.join(format!("{label}.json"));
                let json = serde_json::to_vec_pretty(&run).expect("run records serialize");
                write_atomic(&path, &json).map_err(fail)?;
                log::info!("{label}: afa {:.4}", run.metrics.afa);
                Ok(run)
            })
            .collect()
    });
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(run) => runs.push(run),
            Err(f) => {
                log::error!("{}: {}", f.cell, f.error);
                failures.push(f);
            }
        }
    }
    let manifest = Manifest::new(cfg);
    write_atomic(&cfg.output_dir.join("results.csv"), results_csv(&runs)?.as_bytes())?;
    let summary = if runs.is_empty() {
        String::new()
    } else {
        let table = aggregate(&runs);
        write_atomic(&cfg.output_dir.join("aggregate.csv"), aggregate_csv(&table, &manifest)?.as_bytes())?;
        let text = render_summary(&table);
        write_atomic(&cfg.output_dir.join("summary.txt"), text.as_bytes())?;
        text
    };
    Ok(ExperimentOutcome {
        runs,
        failures,
        summary,
    })
}

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt4).unwrap_or_default()
}

fn sort_key(run: &RunFile) -> (StrategyKind, NoiseKind, u64, u64) {
    (run.record.strategy, run.noise_kind, run.noise_level.to_bits(), run.record.seed)
}

/// One row per run with the fixed column set.
pub fn results_csv(runs: &[RunFile]) -> Result<String> {
    let mut sorted: Vec<&RunFile> = runs.iter().collect();
    sorted.sort_by_key(|r| sort_key(r));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["strategy", "noise_kind", "noise_level", "seed", "afa", "forgetting", "purity", "wallclock_s"])?;
    for r in sorted {
        w.write_record([
            r.record.strategy.name().to_string(),
            r.noise_kind.name().to_string(),
            fmt4(r.noise_level),
            r.record.seed.to_string(),
            fmt4(r.metrics.afa),
            fmt_opt(r.metrics.forgetting),
            fmt_opt(r.metrics.purity),
            fmt4(r.metrics.wallclock_s),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).expect("csv is utf-8"))
}

/// Mean and sample standard deviation; `None` for an empty slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub strategy: StrategyKind,
    pub noise_kind: NoiseKind,
    pub noise_level: f64,
    pub runs: usize,
    pub afa: MeanStd,
    pub forgetting: Option<MeanStd>,
    pub purity: Option<MeanStd>,
}

/// Groups runs by (strategy, noise), in declared strategy order.
pub fn aggregate(runs: &[RunFile]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(StrategyKind, NoiseKind, u64), Vec<&RunFile>> = BTreeMap::new();
    for r in runs {
        groups
            .entry((r.record.strategy, r.noise_kind, r.noise_level.to_bits()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((strategy, noise_kind, level), rs)| {
            let pick = |f: &dyn Fn(&RunFile) -> Option<f64>| -> Vec<f64> { rs.iter().filter_map(|r| f(r)).collect() };
            AggregateRow {
                strategy,
                noise_kind,
                noise_level: f64::from_bits(level),
                runs: rs.len(),
                afa: MeanStd::of(&pick(&|r| Some(r.metrics.afa))).expect("group is nonempty"),
                forgetting: MeanStd::of(&pick(&|r| r.metrics.forgetting)),
                purity: MeanStd::of(&pick(&|r| r.metrics.purity)),
            }
        })
        .collect()
}

/// Aggregate table preceded by a `#` line holding the manifest as JSON.
/// Contains no timing, so reruns are byte-identical.
pub fn aggregate_csv(rows: &[AggregateRow], manifest: &Manifest) -> Result<String> {
    let mut out = format!("# manifest: {}\n", serde_json::to_string(manifest).expect("manifest serializes"));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "strategy",
        "noise_kind",
        "noise_level",
        "runs",
        "afa_mean",
        "afa_std",
        "forgetting_mean",
        "forgetting_std",
        "purity_mean",
        "purity_std",
    ])?;
    for r in rows {
        w.write_record([
            r.strategy.name().to_string(),
            r.noise_kind.name().to_string(),
            fmt4(r.noise_level),
            r.runs.to_string(),
            fmt4(r.afa.mean),
            fmt4(r.afa.std),
            fmt_opt(r.forgetting.map(|m| m.mean)),
            fmt_opt(r.forgetting.map(|m| m.std)),
            fmt_opt(r.purity.map(|m| m.mean)),
            fmt_opt(r.purity.map(|m| m.std)),
        ])?;
    }
    out.push_str(std::str::from_utf8(&w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?).expect("csv is utf-8"));
    Ok(out)
}

fn cell2(m: Option<MeanStd>) -> String {
    match m {
        Some(m) => format!("{:.2} ± {:.2}", m.mean, m.std),
        None => "n/a".to_string(),
    }
}

/// Strategy x noise grid of `mean ± std`, two decimals.
pub fn render_summary(rows: &[AggregateRow]) -> String {
    let mut out = format!(
        "{:<24} {:<18} {:>5}  {:<14} {:<14} {:<14}\n",
        "strategy", "noise", "runs", "acc", "forg", "purity"
    );
    for r in rows {
        let noise = format!("{}={:.2}", r.noise_kind.name(), r.noise_level);
        out.push_str(&format!(
            "{:<24} {:<18} {:>5}  {:<14} {:<14} {:<14}\n",
            r.strategy.name(),
            noise,
            r.runs,
            cell2(Some(r.afa)),
            cell2(r.forgetting),
            cell2(r.purity)
        ));
    }
    out
}

/// Reads every run record under `dir` (or `dir/runs`).
pub fn load_runs(dir: &Path) -> Result<Vec<RunFile>> {
    let runs = runs_dir(dir);
    let src = if runs.is_dir() { runs } else { dir.to_path_buf() };
    let entries = fs::read_dir(&src).map_err(io_err(&src))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let bytes = fs::read(&p).map_err(io_err(&p))?;
        let run: RunFile = serde_json::from_slice(&bytes).map_err(|source| CliError::Json { path: p.clone(), source })?;
        if run.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "{} has schema version {}, expected {SCHEMA_VERSION}",
                p.display(),
                run.schema_version
            )));
        }
        out.push(run);
    }
    Ok(out)
}

/// Recomputes `aggregate.csv` and `summary.txt` from the stored records.
pub fn summarize(dir: &Path) -> Result<String> {
    let runs = load_runs(dir)?;
    let first = runs.first().ok_or_else(|| CliError::NoResults(dir.to_path_buf()))?;
    let table = aggregate(&runs);
    write_atomic(&dir.join("aggregate.csv"), aggregate_csv(&table, &first.manifest)?.as_bytes())?;
    let text = render_summary(&table);
    write_atomic(&dir.join("summary.txt"), text.as_bytes())?;
    Ok(text)
}

/// Small synthetic grid that finishes in seconds.
pub fn demo_config(output_dir: PathBuf) -> ExperimentConfig {
    ExperimentConfig {
        output_dir,
        seeds: vec![0, 1],
        workers: None,
        first_experience_classes: 2,
        classes_per_experience: 1,
        dataset: DatasetSpec::Synthetic {
            num_classes: 4,
            per_class: 120,
            test_per_class: 60,
            feature_dim: 8,
            separation: 6.0,
            seed: 7,
        },
        noise: NoiseGrid {
            label_flip: vec![0.0, 0.3],
            ..NoiseGrid::default()
        },
        defaults: StrategyConfig {
            coreset_k: 20,
            hidden: vec![32],
            train: TrainConfig {
                learning_rate: 0.005,
                epochs_phase1: 8,
                epochs_phase2: 4,
                ..TrainConfig::default()
            },
            ..StrategyConfig::default()
        },
        strategies: [
            StrategyKind::Naive,
            StrategyKind::Cumulative,
            StrategyKind::RandomReplay,
            StrategyKind::ContinualCrust,
            StrategyKind::ContinualCosineCrust,
        ]
        .into_iter()
        .map(|name| StrategyEntry {
            name,
            learning_rate: None,
            coreset_k: None,
        })
        .collect(),
    }
}
