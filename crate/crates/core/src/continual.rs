//! Class-incremental training: the two-phase coreset replay loop and the
//! baseline strategies it is compared against.
//!
//! Each experience first trains for `epochs_phase1` epochs on the new
//! classes' full data plus every stored coreset. Coreset strategies then
//! spend `epochs_phase2` epochs refining: at the start of each epoch the
//! new classes' gradients are recomputed on their full data, their coresets
//! are reselected, and the model trains on the union of all coresets only.
//! Coresets of past classes are read but never reselected.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{self, BoundInputs, BoundReport, MeasuredInputs};
use crate::coreset::{self, ClusterAssignment, CoresetError, CoresetSelection};
use crate::data::{Dataset, Experience, ExperienceStream, LabeledSample};
use crate::metrics::{self, AccuracyMatrix, MetricsError, PurityRecord};
use crate::model::{
    self, ClassWeighting, GradientMode, MlpClassifier, ModelError, Optimizer, TrainConfig,
};

#[derive(Debug, Error)]
pub enum ContinualError {
    #[error("experience {0} has no training samples")]
    EmptyExperience(usize),
    #[error("class {0} already has a stored coreset")]
    ClassAlreadyStored(usize),
    #[error("empty experience stream")]
    EmptyStream,
    #[error("bad strategy config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Coreset(#[from] CoresetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T> = std::result::Result<T, ContinualError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Naive,
    Cumulative,
    Joint,
    RandomReplay,
    ContinualCrust,
    ContinualCosineCrust,
}

impl StrategyKind {
    /// Declaration order, also the row order of summary tables.
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::Naive,
        StrategyKind::Cumulative,
        StrategyKind::Joint,
        StrategyKind::RandomReplay,
        StrategyKind::ContinualCrust,
        StrategyKind::ContinualCosineCrust,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Naive => "naive",
            StrategyKind::Cumulative => "cumulative",
            StrategyKind::Joint => "joint",
            StrategyKind::RandomReplay => "random_replay",
            StrategyKind::ContinualCrust => "continual_crust",
            StrategyKind::ContinualCosineCrust => "continual_cosine_crust",
        }
    }

    /// Keeps a bounded per-class memory.
    pub fn is_replay(self) -> bool {
        matches!(
            self,
            StrategyKind::RandomReplay | StrategyKind::ContinualCrust | StrategyKind::ContinualCosineCrust
        )
    }

    /// Selects its memory from gradients.
    pub fn is_gradient_based(self) -> bool {
        matches!(self, StrategyKind::ContinualCrust | StrategyKind::ContinualCosineCrust)
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = ContinualError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ContinualError::BadConfig(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoresetParams {
    pub gradient_mode: GradientMode,
    /// Spectral cluster count; defaults to `min(8, n / (2A + 1), n)`.
    pub k_clusters: Option<usize>,
    /// Clusters with at most this many members are dropped (`A`); defaults
    /// to `max(2, ceil(0.05 n))`.
    pub min_cluster_size: Option<usize>,
    pub seed: u64,
    /// Label margin fed to the label-flip bound diagnostics.
    pub label_margin: f64,
    /// Target residual for the perturbation bound diagnostics.
    pub target_residual: f64,
}

impl Default for CoresetParams {
    fn default() -> Self {
        Self {
            gradient_mode: GradientMode::Logits,
            k_clusters: None,
            min_cluster_size: None,
            seed: 0,
            label_margin: 1.0,
            target_residual: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyConfig {
    pub strategy: StrategyKind,
    /// Per-class memory size `k`.
    pub coreset_k: usize,
    /// Hidden layer widths of the MLP.
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub coreset: CoresetParams,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            strategy: StrategyKind::ContinualCrust,
            coreset_k: 100,
            hidden: vec![128],
            train: TrainConfig::default(),
            coreset: CoresetParams::default(),
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.strategy.is_replay() && self.coreset_k == 0 {
            return Err(ContinualError::BadConfig("coreset_k must be at least 1".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(ContinualError::BadConfig("hidden widths must be positive".into()));
        }
        if self.coreset.k_clusters == Some(0) {
            return Err(ContinualError::BadConfig("k_clusters must be positive".into()));
        }
        if !(self.coreset.label_margin >= 0.0 && self.coreset.label_margin <= 1.0) {
            return Err(ContinualError::BadConfig("label_margin must lie in [0,1]".into()));
        }
        if !(self.coreset.target_residual > 0.0) {
            return Err(ContinualError::BadConfig("target_residual must be positive".into()));
        }
        if self.train.total_epochs() == 0 {
            return Err(ContinualError::BadConfig("at least one epoch is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoresetEntry {
    /// Sample ids, in selection order.
    pub ids: Vec<usize>,
    /// Facility-location value of the final selection, if gradient based.
    pub objective: Option<f64>,
    /// Epoch (within its experience) of the last reselection.
    pub last_refresh_epoch: usize,
    pub refreshes: usize,
}

/// Per-class replay memory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CoresetStore {
    entries: BTreeMap<usize, CoresetEntry>,
}

impl CoresetStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, class: usize) -> Option<&CoresetEntry> {
        self.entries.get(&class)
    }

    pub fn contains(&self, class: usize) -> bool {
        self.entries.contains_key(&class)
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.keys().copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, &CoresetEntry)> {
        self.entries.iter().map(|(&c, e)| (c, e))
    }

    /// Total stored samples.
    pub fn total_len(&self) -> usize {
        self.entries.values().map(|e| e.ids.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every stored id, grouped by class in ascending class order.
    pub fn all_ids(&self) -> Vec<usize> {
        self.entries.values().flat_map(|e| e.ids.iter().copied()).collect()
    }

    pub fn purity_record(&self, dataset: &Dataset) -> PurityRecord {
        PurityRecord::measure(self.entries.iter().map(|(&c, e)| (c, e.ids.as_slice())), dataset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Full,
    Refine,
}

/// The training pool of one epoch, for auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochPool {
    pub epoch: usize,
    pub phase: Phase,
    /// Sorted sample ids.
    pub ids: Vec<usize>,
    pub loss: f64,
}

/// Diagnostics for one class's final gradient-based selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBounds {
    pub experience: usize,
    pub class: usize,
    pub measured: MeasuredInputs,
    /// Fraction of selected samples with a flipped label.
    pub rho: f64,
    /// Fraction of candidates that were perturbed.
    pub perturbed_fraction: f64,
    /// Absent when `rho = 0`, where the bound is undefined.
    pub label_flip: Option<BoundReport>,
    pub perturbation: Option<BoundReport>,
    pub fell_back: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperienceOutcome {
    pub pools: Vec<EpochPool>,
    pub bounds: Vec<ClassBounds>,
    /// CosineCRUST selections that fell back to plain CRUST.
    pub fallbacks: usize,
}

/// Deterministic sub-seed for independent random streams.
pub fn subseed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn train_one_epoch(
    model: &mut MlpClassifier,
    optimizer: &mut Optimizer,
    pool: &[&LabeledSample],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let c = model.num_outputs();
    let loss = match cfg.class_weighting {
        ClassWeighting::WeightedLoss => {
            let w = model::inverse_frequency_weights(pool, c);
            model::train_epoch(model, optimizer, pool, &w, cfg.batch_size, rng)?
        }
        ClassWeighting::Upsample => {
            let up = model::upsample_pool(pool, c, rng);
            model::train_epoch(model, optimizer, &up, &vec![1.0; c], cfg.batch_size, rng)?
        }
        ClassWeighting::None => model::train_epoch(model, optimizer, pool, &vec![1.0; c], cfg.batch_size, rng)?,
    };
    Ok(loss)
}

fn audit(epoch: usize, phase: Phase, pool: &[&LabeledSample], loss: f64) -> EpochPool {
    let mut ids: Vec<usize> = pool.iter().map(|s| s.id).collect();
    ids.sort_unstable();
    EpochPool { epoch, phase, ids, loss }
}

struct Selected {
    selection: CoresetSelection,
    clusters: ClusterAssignment,
    fell_back: bool,
}

/// Selects up to `k` of `candidates` (all of one class) from their
/// gradients under the observed labels.
fn select_by_gradient(
    model: &MlpClassifier,
    candidates: &[&LabeledSample],
    cfg: &StrategyConfig,
    seed: u64,
) -> Result<Selected> {
    let n = candidates.len();
    let k = cfg.coreset_k.min(n);
    let g = model::last_layer_gradients(model, candidates, cfg.coreset.gradient_mode)?;
    let single = || ClusterAssignment::from_labels(vec![0; n], 1, 0);
    if k == n {
        let rows: Vec<usize> = (0..n).collect();
        return Ok(Selected {
            selection: CoresetSelection {
                ids: g.ids.clone(),
                objective: n as f64 * coreset::pairwise_dissimilarity(&g, coreset::Metric::Euclidean).d0(),
                rows,
                provenance: None,
            },
            clusters: single(),
            fell_back: false,
        });
    }
    match cfg.strategy {
        StrategyKind::ContinualCosineCrust => {
            let a = cfg.coreset.min_cluster_size.unwrap_or_else(|| coreset::default_min_cluster_size(n));
            let kc = cfg.coreset.k_clusters.unwrap_or_else(|| coreset::default_k_clusters(n, a));
            let out = coreset::cosine_crust_select(&g, k, kc, a, seed)?;
            Ok(Selected {
                selection: out.selection,
                clusters: out.clusters,
                fell_back: out.fell_back,
            })
        }
        _ => Ok(Selected {
            selection: coreset::crust_select(&g, k)?,
            clusters: single(),
            fell_back: false,
        }),
    }
}

fn class_bounds(
    model: &MlpClassifier,
    candidates: &[&LabeledSample],
    sel: &Selected,
    experience: usize,
    class: usize,
    cfg: &StrategyConfig,
) -> Option<ClassBounds> {
    // the spectrum of the full output-layer gradient is too wide to be cheap
    if cfg.coreset.gradient_mode != GradientMode::Logits {
        return None;
    }
    let g = model::last_layer_gradients(model, candidates, GradientMode::Logits).ok()?;
    let clusters = if sel.fell_back {
        ClusterAssignment::from_labels(vec![0; candidates.len()], 1, 0)
    } else {
        sel.clusters.clone()
    };
    let measured = bounds::measure_inputs(&g, &clusters, &sel.selection).ok()?;
    let selected: Vec<&LabeledSample> = sel.selection.rows.iter().map(|&r| candidates[r]).collect();
    let flipped = selected.iter().filter(|s| s.label != s.clean_label).count();
    let rho = flipped as f64 / selected.len() as f64;
    let perturbed_fraction =
        candidates.iter().filter(|s| s.perturbed).count() as f64 / candidates.len() as f64;
    let r0_norm = sel
        .selection
        .rows
        .iter()
        .map(|&r| g.matrix.row(r).iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    let base = BoundInputs {
        rho,
        delta: cfg.coreset.label_margin,
        eta: cfg.train.learning_rate,
        r0_norm,
        nu: cfg.coreset.target_residual,
        ..BoundInputs::default()
    };
    let inputs = measured.apply(&base);
    let label_flip = bounds::eval_theorem1(&inputs).ok();
    let perturbation = bounds::eval_theorem2(&BoundInputs {
        delta: perturbed_fraction,
        ..inputs
    })
    .ok();
    Some(ClassBounds {
        experience,
        class,
        measured,
        rho,
        perturbed_fraction,
        label_flip,
        perturbation,
        fell_back: sel.fell_back,
    })
}

/// Trains on one experience and updates the store for its classes.
///
/// Candidates for class `c`'s coreset are the experience's samples whose
/// clean label is `c`; training always uses observed labels. The optimizer
/// state starts fresh for every experience.
pub fn run_experience(
    model: &mut MlpClassifier,
    store: &mut CoresetStore,
    train: &Dataset,
    experience: &Experience,
    index: usize,
    cfg: &StrategyConfig,
    seed: u64,
) -> Result<ExperienceOutcome> {
    if experience.train.is_empty() {
        return Err(ContinualError::EmptyExperience(index));
    }
    if let Some(&c) = experience.classes.iter().find(|&&c| store.contains(c)) {
        return Err(ContinualError::ClassAlreadyStored(c));
    }
    let strategy = cfg.strategy;
    let tc = &cfg.train;
    let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, 0x7261_696e ^ index as u64));
    let mut optimizer = Optimizer::from_config(model, tc);
    let mut outcome = ExperienceOutcome::default();

    let new: Vec<&LabeledSample> = experience.train.iter().map(|&id| train.sample(id)).collect();
    let by_class: Vec<(usize, Vec<&LabeledSample>)> = experience
        .classes
        .iter()
        .map(|&c| (c, new.iter().copied().filter(|s| s.clean_label == c).collect()))
        .collect();

    let stored: Vec<&LabeledSample> = match strategy {
        StrategyKind::Naive => Vec::new(),
        _ => store.all_ids().into_iter().map(|id| train.sample(id)).collect(),
    };
    let mut full_pool = new.clone();
    full_pool.extend(&stored);

    let (phase1, phase2) = if strategy.is_gradient_based() {
        (tc.epochs_phase1, tc.epochs_phase2)
    } else {
        (tc.total_epochs(), 0)
    };

    for epoch in 0..phase1 {
        let loss = train_one_epoch(model, &mut optimizer, &full_pool, tc, &mut rng)?;
        outcome.pools.push(audit(epoch, Phase::Full, &full_pool, loss));
    }

    match strategy {
        StrategyKind::Naive | StrategyKind::Joint => {}
        StrategyKind::Cumulative => {
            for (c, members) in &by_class {
                store.entries.insert(
                    *c,
                    CoresetEntry {
                        ids: members.iter().map(|s| s.id).collect(),
                        objective: None,
                        last_refresh_epoch: phase1,
                        refreshes: 1,
                    },
                );
            }
        }
        StrategyKind::RandomReplay => {
            for (c, members) in &by_class {
                let k = cfg.coreset_k.min(members.len());
                let mut picks = index::sample(&mut rng, members.len(), k).into_vec();
                picks.sort_unstable();
                store.entries.insert(
                    *c,
                    CoresetEntry {
                        ids: picks.into_iter().map(|i| members[i].id).collect(),
                        objective: None,
                        last_refresh_epoch: phase1,
                        refreshes: 1,
                    },
                );
            }
        }
        StrategyKind::ContinualCrust | StrategyKind::ContinualCosineCrust => {
            // with no refinement epochs, select once after the full-data phase
            let refreshes = phase2.max(1);
            let mut last: Vec<Option<Selected>> = by_class.iter().map(|_| None).collect();
            for r in 0..refreshes {
                let epoch = phase1 + r;
                for (slot, (c, members)) in last.iter_mut().zip(&by_class) {
                    if members.is_empty() {
                        continue;
                    }
                    let sel_seed = subseed(cfg.coreset.seed ^ seed, ((index as u64) << 40) ^ ((epoch as u64) << 20) ^ *c as u64);
                    let sel = select_by_gradient(model, members, cfg, sel_seed)?;
                    outcome.fallbacks += usize::from(sel.fell_back);
                    let entry = store.entries.entry(*c).or_insert(CoresetEntry {
                        ids: Vec::new(),
                        objective: None,
                        last_refresh_epoch: epoch,
                        refreshes: 0,
                    });
                    entry.ids = sel.selection.ids.clone();
                    entry.objective = Some(sel.selection.objective);
                    entry.last_refresh_epoch = epoch;
                    entry.refreshes += 1;
                    *slot = Some(sel);
                }
                if phase2 == 0 {
                    break;
                }
                let pool: Vec<&LabeledSample> = store.all_ids().into_iter().map(|id| train.sample(id)).collect();
                let loss = train_one_epoch(model, &mut optimizer, &pool, tc, &mut rng)?;
                outcome.pools.push(audit(epoch, Phase::Refine, &pool, loss));
            }
            for (sel, (c, members)) in last.iter().zip(&by_class) {
                if let Some(sel) = sel {
                    outcome.bounds.extend(class_bounds(model, members, sel, index, *c, cfg));
                }
            }
        }
    }
    Ok(outcome)
}

/// One full curriculum run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub config: StrategyConfig,
    pub class_order: Vec<usize>,
    pub accuracy: AccuracyMatrix,
    /// Store purity after each experience; absent for memoryless strategies.
    pub purity: Vec<Option<PurityRecord>>,
    pub wallclock_s: Vec<f64>,
    pub bounds: Vec<ClassBounds>,
    pub fallbacks: usize,
    /// Stored samples after each experience.
    pub memory: Vec<usize>,
}

impl RunRecord {
    pub fn afa(&self) -> Result<f64> {
        Ok(metrics::average_final_accuracy(&self.accuracy)?)
    }

    /// Absent for joint training, whose matrix has a single filled row.
    pub fn forgetting(&self) -> Option<f64> {
        if self.strategy == StrategyKind::Joint {
            return None;
        }
        metrics::forgetting(&self.accuracy).ok()
    }

    /// Purity of the final store.
    pub fn final_purity(&self) -> Option<f64> {
        self.purity.last()?.as_ref().and_then(|r| metrics::purity(r).ok())
    }

    pub fn total_wallclock_s(&self) -> f64 {
        self.wallclock_s.iter().sum()
    }
}

fn evaluate_row(model: &MlpClassifier, test: &[&LabeledSample]) -> Result<Vec<Option<f64>>> {
    Ok(model::evaluate(model, test)?.per_class)
}

/// Runs a fresh model through every experience, evaluating on the test
/// split of every class after each one.
pub fn run_curriculum(
    train: &Dataset,
    test: &Dataset,
    stream: &ExperienceStream,
    cfg: &StrategyConfig,
    seed: u64,
) -> Result<RunRecord> {
    cfg.validate()?;
    if stream.experiences.is_empty() {
        return Err(ContinualError::EmptyStream);
    }
    let mut dims = vec![train.feature_dim()];
    dims.extend(&cfg.hidden);
    dims.push(stream.num_classes);
    let mut model = MlpClassifier::new(&dims, subseed(seed, 0x006d_6f64_656c))?;
    let test_samples: Vec<&LabeledSample> = test.samples().iter().collect();
    let t = stream.experiences.len();
    let mut accuracy = AccuracyMatrix::new(t, stream.teaching_experience())?;
    let mut record = RunRecord {
        strategy: cfg.strategy,
        seed,
        config: cfg.clone(),
        class_order: stream.class_order.clone(),
        accuracy: accuracy.clone(),
        purity: Vec::new(),
        wallclock_s: Vec::new(),
        bounds: Vec::new(),
        fallbacks: 0,
        memory: Vec::new(),
    };

    if cfg.strategy == StrategyKind::Joint {
        let start = Instant::now();
        let all: Vec<usize> = stream.experiences.iter().flat_map(|e| e.train.iter().copied()).collect();
        let everything = Experience {
            classes: stream.experiences.iter().flat_map(|e| e.classes.iter().copied()).collect(),
            train: all,
            test: Vec::new(),
        };
        let mut store = CoresetStore::new();
        run_experience(&mut model, &mut store, train, &everything, 0, cfg, seed)?;
        accuracy.set_row(t - 1, evaluate_row(&model, &test_samples)?)?;
        record.wallclock_s.push(start.elapsed().as_secs_f64());
        record.purity.push(None);
        record.memory.push(0);
        record.accuracy = accuracy;
        return Ok(record);
    }

    let mut store = CoresetStore::new();
    for (i, exp) in stream.experiences.iter().enumerate() {
        let start = Instant::now();
        let outcome = run_experience(&mut model, &mut store, train, exp, i, cfg, seed)?;
        accuracy.set_row(i, evaluate_row(&model, &test_samples)?)?;
        record.wallclock_s.push(start.elapsed().as_secs_f64());
        record.purity.push(cfg.strategy.is_replay().then(|| store.purity_record(train)));
        record.memory.push(store.total_len());
        record.bounds.extend(outcome.bounds);
        record.fallbacks += outcome.fallbacks;
        log::debug!(
            "{} seed {seed}: experience {i} done in {:.2}s, memory {}",
            cfg.strategy,
            start.elapsed().as_secs_f64(),
            store.total_len()
        );
    }
    record.accuracy = accuracy;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_stream, flip_labels, generate_gaussian_blobs, Dataset};

    fn blobs(seed: u64, per_class: usize, classes: usize) -> (Dataset, Dataset) {
        let train = generate_gaussian_blobs(classes, per_class, 4, 6.0, seed).unwrap();
        let test = generate_gaussian_blobs(classes, 40, 4, 6.0, seed + 1000).unwrap();
        (train, test)
    }

    fn cfg(strategy: StrategyKind, k: usize) -> StrategyConfig {
        StrategyConfig {
            strategy,
            coreset_k: k,
            hidden: vec![16],
            train: TrainConfig {
                learning_rate: 0.01,
                batch_size: 16,
                epochs_phase1: 4,
                epochs_phase2: 3,
                ..TrainConfig::default()
            },
            ..StrategyConfig::default()
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(json, format!("\"{}\"", k.name()));
        }
        assert!("crust".parse::<StrategyKind>().is_err());
    }

    #[test]
    fn subseeds_differ() {
        let a: Vec<u64> = (0..50).map(|s| subseed(7, s)).collect();
        let mut b = a.clone();
        b.sort_unstable();
        b.dedup();
        assert_eq!(b.len(), 50);
        assert_ne!(subseed(0, 0), subseed(1, 0));
    }

    #[test]
    fn config_validation() {
        assert!(cfg(StrategyKind::RandomReplay, 0).validate().is_err());
        assert!(cfg(StrategyKind::Naive, 0).validate().is_ok());
        let mut c = cfg(StrategyKind::ContinualCrust, 5);
        c.hidden = vec![0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn replay_memory_contract_and_audit() {
        let (train, test) = blobs(1, 30, 4);
        let train = flip_labels(&train, 0.3, 4, 9).unwrap();
        let stream = build_stream(&train, &test, 3).unwrap();
        for strategy in [StrategyKind::RandomReplay, StrategyKind::ContinualCrust, StrategyKind::ContinualCosineCrust] {
            let k = 7;
            let c = cfg(strategy, k);
            let mut dims = vec![4, 16, 4];
            let mut model = MlpClassifier::new(&dims, 0).unwrap();
            dims.clear();
            let mut store = CoresetStore::new();
            let mut seen = 0;
            for (i, exp) in stream.experiences.iter().enumerate() {
                let before: Vec<(usize, CoresetEntry)> = store.entries().map(|(c, e)| (c, e.clone())).collect();
                let out = run_experience(&mut model, &mut store, &train, exp, i, &c, 5).unwrap();
                seen += exp.classes.len();
                assert!(store.total_len() <= seen * k, "{strategy}");
                for (class, entry) in &before {
                    assert_eq!(store.get(*class), Some(entry), "past coreset changed");
                }
                for &class in &exp.classes {
                    let entry = store.get(class).unwrap();
                    assert_eq!(entry.ids.len(), k);
                    assert!(entry.ids.iter().all(|&id| train.sample(id).clean_label == class));
                }
                let union = {
                    let mut u = store.all_ids();
                    u.sort_unstable();
                    u
                };
                let refine: Vec<&EpochPool> = out.pools.iter().filter(|p| p.phase == Phase::Refine).collect();
                if strategy.is_gradient_based() {
                    assert_eq!(refine.len(), 3);
                    let past: Vec<usize> = before.iter().flat_map(|(_, e)| e.ids.iter().copied()).collect();
                    for p in &refine {
                        assert_eq!(p.ids.len(), past.len() + k * exp.classes.len());
                        for id in &p.ids {
                            let own = exp.classes.contains(&train.sample(*id).clean_label);
                            assert!(own || past.contains(id), "phase-2 pool left the coreset union");
                        }
                    }
                    assert_eq!(refine.last().unwrap().ids, union);
                } else {
                    assert!(refine.is_empty());
                }
                let full = &out.pools[0];
                let mut expected: Vec<usize> = exp.train.clone();
                expected.extend(before.iter().flat_map(|(_, e)| e.ids.iter().copied()));
                expected.sort_unstable();
                assert_eq!(full.ids, expected);
            }
        }
    }

    #[test]
    fn no_refinement_selects_once() {
        let (train, test) = blobs(2, 20, 3);
        let stream = build_stream(&train, &test, 0).unwrap();
        let mut c = cfg(StrategyKind::ContinualCrust, 4);
        c.train.epochs_phase2 = 0;
        let mut model = MlpClassifier::new(&[4, 16, 3], 0).unwrap();
        let mut store = CoresetStore::new();
        let out = run_experience(&mut model, &mut store, &train, &stream.experiences[0], 0, &c, 1).unwrap();
        assert!(out.pools.iter().all(|p| p.phase == Phase::Full));
        for class in &stream.experiences[0].classes {
            assert_eq!(store.get(*class).unwrap().refreshes, 1);
        }
    }

    #[test]
    fn saturated_budget_keeps_whole_class() {
        let (train, test) = blobs(3, 10, 3);
        let stream = build_stream(&train, &test, 0).unwrap();
        let exp = &stream.experiences[0];
        let mut members: Vec<Vec<usize>> = Vec::new();
        for strategy in [StrategyKind::RandomReplay, StrategyKind::ContinualCrust, StrategyKind::ContinualCosineCrust] {
            let mut model = MlpClassifier::new(&[4, 16, 3], 0).unwrap();
            let mut store = CoresetStore::new();
            run_experience(&mut model, &mut store, &train, exp, 0, &cfg(strategy, 50), 1).unwrap();
            let mut ids = store.all_ids();
            ids.sort_unstable();
            members.push(ids);
        }
        assert!(members.windows(2).all(|w| w[0] == w[1]));
        let mut all = exp.train.clone();
        all.sort_unstable();
        assert_eq!(members[0], all);
    }

    #[test]
    fn naive_store_stays_empty() {
        let (train, test) = blobs(4, 20, 3);
        let stream = build_stream(&train, &test, 0).unwrap();
        let mut model = MlpClassifier::new(&[4, 16, 3], 0).unwrap();
        let mut store = CoresetStore::new();
        for (i, exp) in stream.experiences.iter().enumerate() {
            let out = run_experience(&mut model, &mut store, &train, exp, i, &cfg(StrategyKind::Naive, 5), 0).unwrap();
            assert!(store.is_empty());
            let mut own = exp.train.clone();
            own.sort_unstable();
            assert!(out.pools.iter().all(|p| p.ids == own));
            assert_eq!(out.pools.len(), 7);
        }
    }

    #[test]
    fn rejects_repeated_classes() {
        let (train, test) = blobs(5, 10, 3);
        let stream = build_stream(&train, &test, 0).unwrap();
        let mut model = MlpClassifier::new(&[4, 16, 3], 0).unwrap();
        let mut store = CoresetStore::new();
        let c = cfg(StrategyKind::RandomReplay, 3);
        run_experience(&mut model, &mut store, &train, &stream.experiences[0], 0, &c, 0).unwrap();
        assert!(matches!(
            run_experience(&mut model, &mut store, &train, &stream.experiences[0], 1, &c, 0),
            Err(ContinualError::ClassAlreadyStored(_))
        ));
    }

    #[test]
    fn clean_data_gives_pure_coresets() {
        let (train, test) = blobs(6, 25, 4);
        let stream = build_stream(&train, &test, 1).unwrap();
        for strategy in [StrategyKind::ContinualCrust, StrategyKind::ContinualCosineCrust] {
            let r = run_curriculum(&train, &test, &stream, &cfg(strategy, 5), 2).unwrap();
            for p in r.purity.iter() {
                assert_eq!(metrics::purity(p.as_ref().unwrap()).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn curriculum_is_deterministic() {
        let (train, test) = blobs(7, 20, 4);
        let train = flip_labels(&train, 0.2, 4, 1).unwrap();
        let stream = build_stream(&train, &test, 2).unwrap();
        for strategy in StrategyKind::ALL {
            let a = run_curriculum(&train, &test, &stream, &cfg(strategy, 4), 11).unwrap();
            let b = run_curriculum(&train, &test, &stream, &cfg(strategy, 4), 11).unwrap();
            assert_eq!(a.accuracy, b.accuracy, "{strategy}");
            assert_eq!(a.purity, b.purity);
            assert_eq!(a.bounds, b.bounds);
            assert_eq!(a.memory, b.memory);
        }
    }

    #[test]
    fn joint_fills_only_final_row() {
        let (train, test) = blobs(8, 40, 3);
        let stream = build_stream(&train, &test, 0).unwrap();
        let mut c = cfg(StrategyKind::Joint, 1);
        c.train.epochs_phase1 = 20;
        let r = run_curriculum(&train, &test, &stream, &c, 0).unwrap();
        let t = stream.experiences.len();
        for i in 0..t - 1 {
            assert!(r.accuracy.rows()[i].iter().all(Option::is_none));
        }
        assert!(r.forgetting().is_none());
        assert!(r.final_purity().is_none());
        for v in &r.accuracy.rows()[t - 1] {
            assert!(v.unwrap() >= 0.95, "{:?}", r.accuracy.rows()[t - 1]);
        }
    }

    #[test]
    fn crust_records_bounds() {
        let (train, test) = blobs(9, 20, 3);
        let train = flip_labels(&train, 0.3, 3, 4).unwrap();
        let stream = build_stream(&train, &test, 0).unwrap();
        let r = run_curriculum(&train, &test, &stream, &cfg(StrategyKind::ContinualCrust, 6), 0).unwrap();
        assert_eq!(r.bounds.len(), 3);
        for b in &r.bounds {
            assert_eq!(b.measured.k, 6);
            assert_eq!(b.measured.r_min, 6.0);
            assert_eq!(b.label_flip.is_some(), b.rho > 0.0);
        }
    }
}
