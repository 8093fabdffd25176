//! Datasets, noise injection, and class-incremental experience streams.
//!
//! A [`Dataset`] carries both the observed label and the hidden clean label
//! of every sample so that selection quality can be scored after the fact.
//! Learners only ever read `label`.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("bad IDX magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { found: u32, expected: u32 },
    #[error("file truncated: {0}")]
    TruncatedFile(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("bad cache file: {0}")]
    BadCache(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: usize,
    pub features: Vec<f64>,
    /// Observed label, possibly corrupted.
    pub label: usize,
    /// Ground truth; never used for training.
    pub clean_label: usize,
    /// Instance noise was applied.
    pub perturbed: bool,
}

impl LabeledSample {
    /// Unflipped and unperturbed.
    pub fn is_clean(&self) -> bool {
        self.label == self.clean_label && !self.perturbed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    num_classes: usize,
    feature_dim: usize,
}

impl Dataset {
    /// Validates shared dimensions, dense ids, finite features and label range.
    pub fn new(samples: Vec<LabeledSample>, num_classes: usize, feature_dim: usize) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if s.id != i {
                return Err(DataError::InvalidSample(format!("sample {i} has id {}", s.id)));
            }
            if s.features.len() != feature_dim {
                return Err(DataError::DimensionMismatch(format!(
                    "sample {i} has {} features, expected {feature_dim}",
                    s.features.len()
                )));
            }
            if s.label >= num_classes || s.clean_label >= num_classes {
                return Err(DataError::InvalidSample(format!(
                    "sample {i} label out of range 0..{num_classes}"
                )));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(DataError::InvalidSample(format!("sample {i} has non-finite features")));
            }
        }
        Ok(Self {
            samples,
            num_classes,
            feature_dim,
        })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn sample(&self, id: usize) -> &LabeledSample {
        &self.samples[id]
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Number of samples per clean label.
    pub fn clean_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for s in &self.samples {
            h[s.clean_label] += 1;
        }
        h
    }

    /// Keeps at most `per_class` samples of every clean class, in id order,
    /// and renumbers ids densely.
    pub fn take_per_class(&self, per_class: usize) -> Dataset {
        let mut counts = vec![0usize; self.num_classes];
        let mut kept = Vec::new();
        for s in &self.samples {
            if counts[s.clean_label] < per_class {
                counts[s.clean_label] += 1;
                let mut s = s.clone();
                s.id = kept.len();
                kept.push(s);
            }
        }
        Dataset {
            samples: kept,
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
        }
    }

    fn with_samples(&self, samples: Vec<LabeledSample>) -> Dataset {
        Dataset {
            samples,
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
        }
    }
}

/// Gaussian blobs with unit isotropic noise.
///
/// Class `c` is centered on axis `c mod feature_dim`. Classes that wrap
/// around the axes alternate sign and grow in radius so every center is
/// distinct: cycle `w = c / feature_dim` uses sign `(-1)^w` and radius
/// `separation * (1 + w / 2)`.
pub fn generate_gaussian_blobs(
    num_classes: usize,
    per_class: usize,
    feature_dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(DataError::BadConfig(format!("num_classes must be >= 2, got {num_classes}")));
    }
    if per_class == 0 || feature_dim == 0 {
        return Err(DataError::BadConfig("per_class and feature_dim must be positive".into()));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(DataError::BadConfig(format!("separation must be positive, got {separation}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(num_classes * per_class);
    for c in 0..num_classes {
        let axis = c % feature_dim;
        let wrap = c / feature_dim;
        let sign = if wrap % 2 == 0 { 1.0 } else { -1.0 };
        let radius = separation * (1.0 + (wrap / 2) as f64);
        for _ in 0..per_class {
            let mut features: Vec<f64> = (0..feature_dim).map(|_| standard_normal(&mut rng)).collect();
            features[axis] += sign * radius;
            samples.push(LabeledSample {
                id: samples.len(),
                features,
                label: c,
                clean_label: c,
                perturbed: false,
            });
        }
    }
    Dataset::new(samples, num_classes, feature_dim)
}

/// Box-Muller; consumes exactly two uniforms.
fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Affinely rescales all features into `[0, 1]` using the global min and max.
/// Lets synthetic data go through the salt-and-pepper path.
pub fn rescale_unit_interval(ds: &Dataset) -> Dataset {
    rescale_unit_interval_like(ds, ds)
}

/// Rescales `ds` with the global min and max of `reference` (typically the
/// train split), clipping anything that falls outside `[0, 1]`.
pub fn rescale_unit_interval_like(ds: &Dataset, reference: &Dataset) -> Dataset {
    let (lo, hi) = reference
        .samples
        .iter()
        .flat_map(|s| s.features.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let samples = ds
        .samples
        .iter()
        .map(|s| LabeledSample {
            features: s.features.iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect(),
            ..s.clone()
        })
        .collect();
    ds.with_samples(samples)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::TruncatedFile(format!("{what} header")))
}

/// Parses an IDX image/label pair already in memory. Pixels are scaled by
/// 1/255; `num_classes` is one past the largest label seen.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = be_u32(images, 0, "image")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let n_images = be_u32(images, 4, "image")? as usize;
    let rows = be_u32(images, 8, "image")? as usize;
    let cols = be_u32(images, 12, "image")? as usize;

    let magic = be_u32(labels, 0, "label")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            found: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let n_labels = be_u32(labels, 4, "label")? as usize;
    if n_images != n_labels {
        return Err(DataError::DimensionMismatch(format!(
            "{n_images} images but {n_labels} labels"
        )));
    }

    let dim = rows * cols;
    let pixels = &images[16..];
    if pixels.len() < n_images * dim {
        return Err(DataError::TruncatedFile(format!(
            "expected {} pixel bytes, found {}",
            n_images * dim,
            pixels.len()
        )));
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() < n_labels {
        return Err(DataError::TruncatedFile(format!(
            "expected {n_labels} label bytes, found {}",
            label_bytes.len()
        )));
    }
    let num_classes = label_bytes[..n_labels].iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let samples = (0..n_images)
        .map(|i| {
            let label = label_bytes[i] as usize;
            LabeledSample {
                id: i,
                features: pixels[i * dim..(i + 1) * dim].iter().map(|&p| p as f64 / 255.0).collect(),
                label,
                clean_label: label,
                perturbed: false,
            }
        })
        .collect();
    Dataset::new(samples, num_classes, dim)
}

/// Loads an IDX image file (magic 2051) and label file (magic 2049).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    parse_idx(&images, &labels)
}

/// Which replacement labels a flipped sample may receive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipTarget {
    /// Uniform over every other dataset class, including classes the
    /// curriculum has not reached yet.
    #[default]
    AnyClass,
    /// Uniform over other classes taught no later than the sample's own
    /// experience. Needs the class order, see [`flip_labels_seen`].
    SeenClasses,
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(DataError::BadConfig(format!("{name} must lie in [0,1], got {p}")))
    }
}

/// Flips each label independently with probability `prob` to a different
/// class drawn uniformly from the other `num_classes - 1`.
pub fn flip_labels(ds: &Dataset, prob: f64, num_classes: usize, seed: u64) -> Result<Dataset> {
    check_prob("label flip probability", prob)?;
    if num_classes < 2 {
        return Err(DataError::TooFewClasses(num_classes));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = ds
        .samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            if rng.gen::<f64>() < prob {
                let offset = rng.gen_range(1..num_classes);
                s.label = (s.clean_label + offset) % num_classes;
            }
            s
        })
        .collect();
    Ok(ds.with_samples(samples))
}

/// Label flipping restricted to classes taught at or before the sample's own
/// experience. `class_order` is the curriculum order; the first
/// `first_experience_classes` entries are taught together.
pub fn flip_labels_seen(
    ds: &Dataset,
    prob: f64,
    class_order: &[usize],
    first_experience_classes: usize,
    seed: u64,
) -> Result<Dataset> {
    check_prob("label flip probability", prob)?;
    let mut rank = vec![usize::MAX; ds.num_classes];
    for (r, &c) in class_order.iter().enumerate() {
        rank[c] = r;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = ds
        .samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            if rng.gen::<f64>() < prob {
                let horizon = rank[s.clean_label].max(first_experience_classes - 1);
                let candidates: Vec<usize> = class_order[..=horizon.min(class_order.len() - 1)]
                    .iter()
                    .copied()
                    .filter(|&c| c != s.clean_label)
                    .collect();
                if let Some(&c) = candidates.choose(&mut rng) {
                    s.label = c;
                }
            }
            s
        })
        .collect();
    Ok(ds.with_samples(samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub label_flip_prob: f64,
    /// Fraction of samples receiving salt-and-pepper noise.
    pub instance_noise_fraction: f64,
    pub pixel_corrupt_prob: f64,
    /// Weight of the noise mask in the blend with the original image.
    pub blend: f64,
    pub rng_seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            label_flip_prob: 0.0,
            instance_noise_fraction: 0.0,
            pixel_corrupt_prob: 0.9,
            blend: 0.5,
            rng_seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        check_prob("label_flip_prob", self.label_flip_prob)?;
        check_prob("instance_noise_fraction", self.instance_noise_fraction)?;
        check_prob("pixel_corrupt_prob", self.pixel_corrupt_prob)?;
        check_prob("blend", self.blend)
    }
}

/// Salt-and-pepper perturbation of exactly `floor(fraction * n)` samples.
///
/// Each chosen sample becomes `(1 - blend) * x + blend * m`, where the mask
/// `m` replaces a pixel by 0 or 1 (equal odds) with probability
/// `pixel_corrupt_prob` and keeps it otherwise.
pub fn perturb_instances(ds: &Dataset, spec: &NoiseSpec) -> Result<Dataset> {
    spec.validate()?;
    if let Some(s) = ds
        .samples
        .iter()
        .find(|s| s.features.iter().any(|v| !(0.0..=1.0).contains(v)))
    {
        return Err(DataError::InvalidSample(format!(
            "sample {} has features outside [0,1]",
            s.id
        )));
    }
    let n = ds.len();
    let count = ((spec.instance_noise_fraction * n as f64).floor() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut chosen: Vec<usize> = index::sample(&mut rng, n, count).into_vec();
    chosen.sort_unstable();

    let mut samples = ds.samples.clone();
    for id in chosen {
        let s = &mut samples[id];
        for x in s.features.iter_mut() {
            let m = if rng.gen::<f64>() < spec.pixel_corrupt_prob {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    0.0
                }
            } else {
                *x
            };
            *x = ((1.0 - spec.blend) * *x + spec.blend * m).clamp(0.0, 1.0);
        }
        s.perturbed = true;
    }
    Ok(ds.with_samples(samples))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub classes: Vec<usize>,
    /// Train sample ids whose clean label is in `classes`.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceStream {
    pub experiences: Vec<Experience>,
    pub class_order: Vec<usize>,
    pub num_classes: usize,
}

impl ExperienceStream {
    /// Experience index that teaches each class.
    pub fn teaching_experience(&self) -> Vec<Option<usize>> {
        let mut t = vec![None; self.num_classes];
        for (e, exp) in self.experiences.iter().enumerate() {
            for &c in &exp.classes {
                t[c] = Some(e);
            }
        }
        t
    }
}

/// Shuffles the class order by `seed` and splits it into a first experience
/// of two classes followed by one class per experience.
pub fn build_stream(train: &Dataset, test: &Dataset, seed: u64) -> Result<ExperienceStream> {
    build_stream_with(train, test, seed, 2, 1)
}

/// Like [`build_stream`] with configurable class counts per experience.
pub fn build_stream_with(
    train: &Dataset,
    test: &Dataset,
    seed: u64,
    first: usize,
    step: usize,
) -> Result<ExperienceStream> {
    let k = train.num_classes;
    if k < 2 {
        return Err(DataError::TooFewClasses(k));
    }
    if test.num_classes != k || test.feature_dim != train.feature_dim {
        return Err(DataError::DimensionMismatch(format!(
            "train has {k} classes / {} features, test has {} / {}",
            train.feature_dim, test.num_classes, test.feature_dim
        )));
    }
    if first == 0 || step == 0 {
        return Err(DataError::BadConfig("experience sizes must be positive".into()));
    }
    let mut class_order: Vec<usize> = (0..k).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    class_order.shuffle(&mut rng);

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut at = 0;
    let mut size = first.min(k);
    while at < k {
        let end = (at + size).min(k);
        groups.push(class_order[at..end].to_vec());
        at = end;
        size = step;
    }
    let experiences = groups
        .into_iter()
        .map(|classes| {
            let set: BTreeSet<usize> = classes.iter().copied().collect();
            let pick = |ds: &Dataset| {
                ds.samples
                    .iter()
                    .filter(|s| set.contains(&s.clean_label))
                    .map(|s| s.id)
                    .collect::<Vec<_>>()
            };
            Experience {
                train: pick(train),
                test: pick(test),
                classes,
            }
        })
        .collect();
    Ok(ExperienceStream {
        experiences,
        class_order,
        num_classes: k,
    })
}

const CACHE_TAG: &[u8; 4] = b"CRD1";

/// Writes the binary dataset cache: tag, then `num_classes`, `feature_dim`
/// and `n` as little-endian u64, then per sample `id`, `label`,
/// `clean_label` (u64), `perturbed` (u8) and the features as f64.
pub fn write_cache(ds: &Dataset, mut w: impl Write) -> Result<()> {
    w.write_all(CACHE_TAG)?;
    for v in [ds.num_classes, ds.feature_dim, ds.len()] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for s in &ds.samples {
        for v in [s.id, s.label, s.clean_label] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&[s.perturbed as u8])?;
        for x in &s.features {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_cache(mut r: impl Read) -> Result<Dataset> {
    let mut tag = [0u8; 4];
    r.read_exact(&mut tag).map_err(truncated)?;
    if &tag != CACHE_TAG {
        return Err(DataError::BadCache(format!("unknown tag {tag:?}")));
    }
    let mut u64_buf = [0u8; 8];
    let mut next_u64 = |r: &mut dyn Read| -> Result<usize> {
        r.read_exact(&mut u64_buf).map_err(truncated)?;
        Ok(u64::from_le_bytes(u64_buf) as usize)
    };
    let num_classes = next_u64(&mut r)?;
    let feature_dim = next_u64(&mut r)?;
    let n = next_u64(&mut r)?;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let id = next_u64(&mut r)?;
        let label = next_u64(&mut r)?;
        let clean_label = next_u64(&mut r)?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag).map_err(truncated)?;
        let mut features = Vec::with_capacity(feature_dim);
        let mut f = [0u8; 8];
        for _ in 0..feature_dim {
            r.read_exact(&mut f).map_err(truncated)?;
            features.push(f64::from_le_bytes(f));
        }
        samples.push(LabeledSample {
            id,
            features,
            label,
            clean_label,
            perturbed: flag[0] != 0,
        });
    }
    Dataset::new(samples, num_classes, feature_dim)
}

fn truncated(e: io::Error) -> DataError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        DataError::TruncatedFile("dataset cache".into())
    } else {
        DataError::Io(e)
    }
}
