//! Feed-forward classifier with hand-written backpropagation.
//!
//! Weights of each layer are stored input-major (`fan_in x fan_out`), so a
//! forward pass accumulates one output row per nonzero input. Sparse inputs
//! such as MNIST digits and post-ReLU activations skip most of the work.

use std::io::{self, Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::LabeledSample;
use crate::linalg::{DenseMatrix, LinalgError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("label {label} out of range for {outputs} outputs")]
    LabelOutOfRange { label: usize, outputs: usize },
    #[error("loss or parameters became non-finite; reduce the learning rate")]
    NonFiniteLoss,
    #[error("empty sample set")]
    Empty,
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    fan_in: usize,
    fan_out: usize,
    /// `weights[p * fan_out + o]` connects input `p` to output `o`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    pub fn new(fan_in: usize, fan_out: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != fan_in * fan_out {
            return Err(ModelError::DimMismatch {
                expected: fan_in * fan_out,
                got: weights.len(),
            });
        }
        if bias.len() != fan_out {
            return Err(ModelError::DimMismatch {
                expected: fan_out,
                got: bias.len(),
            });
        }
        Ok(Self {
            fan_in,
            fan_out,
            weights,
            bias,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn affine(&self, input: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (p, &x) in input.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &self.weights[p * self.fan_out..(p + 1) * self.fan_out];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
    }
}

/// ReLU MLP whose output layer is sized to every class of the dataset up front.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    layers: Vec<Layer>,
}

/// Activations of one forward pass; `activations[0]` is the input and the
/// last entry holds the logits.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn logits(&self) -> &[f64] {
        self.activations.last().expect("at least the input")
    }

    /// Input to the output layer.
    pub fn penultimate(&self) -> &[f64] {
        &self.activations[self.activations.len() - 2]
    }
}

impl MlpClassifier {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization for weights and biases.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        Self::check_dims(dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weights = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
                let bias = (0..fan_out).map(|_| rng.gen_range(-bound..bound)).collect();
                Layer {
                    fan_in,
                    fan_out,
                    weights,
                    bias,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| Layer {
                fan_in: w[0],
                fan_out: w[1],
                weights: vec![0.0; w[0] * w[1]],
                bias: vec![0.0; w[1]],
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(ModelError::BadConfig("no layers".into()));
        }
        for w in layers.windows(2) {
            if w[0].fan_out != w[1].fan_in {
                return Err(ModelError::DimMismatch {
                    expected: w[0].fan_out,
                    got: w[1].fan_in,
                });
            }
        }
        Ok(Self { layers })
    }

    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(ModelError::BadConfig(format!("invalid layer dims {dims:?}")));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].fan_in];
        d.extend(self.layers.iter().map(|l| l.fan_out));
        d
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn num_outputs(&self) -> usize {
        self.layers.last().map(|l| l.fan_out).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Parameters in declaration order: per layer, weights then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(ModelError::DimMismatch {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    pub fn forward(&self, features: &[f64]) -> Result<ForwardCache> {
        if features.len() != self.input_dim() {
            return Err(ModelError::DimMismatch {
                expected: self.input_dim(),
                got: features.len(),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(features.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.fan_out];
            layer.affine(&activations[i], &mut out);
            if i + 1 < self.layers.len() {
                for v in out.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            activations.push(out);
        }
        Ok(ForwardCache { activations })
    }

    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(features)?.activations.pop().unwrap_or_default())
    }

    /// Argmax of the logits; ties go to the lowest class index.
    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        let logits = self.logits(features)?;
        Ok(argmax(&logits))
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `logits` against `label`, via log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Parameter gradients with the same layout as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(model: &MlpClassifier) -> Self {
        Self {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: model.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    fn clear(&mut self) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// One training example as seen by the loss: features, observed label, weight.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub features: &'a [f64],
    pub label: usize,
    pub weight: f64,
}

/// Weighted mean cross-entropy `Σ wᵢ lᵢ / Σ wᵢ` over `batch` and its gradient.
/// Returns `(0, zeros)` when every weight is zero.
pub fn loss_and_gradients(model: &MlpClassifier, batch: &[Example<'_>]) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros_like(model);
    let loss = accumulate_gradients(model, batch, &mut grads)?;
    Ok((loss, grads))
}

fn accumulate_gradients(model: &MlpClassifier, batch: &[Example<'_>], grads: &mut Gradients) -> Result<f64> {
    let total_w: f64 = batch.iter().map(|e| e.weight).sum();
    if total_w <= 0.0 {
        return Ok(0.0);
    }
    let outputs = model.num_outputs();
    let mut loss = 0.0;
    for ex in batch {
        if ex.label >= outputs {
            return Err(ModelError::LabelOutOfRange {
                label: ex.label,
                outputs,
            });
        }
        if ex.weight == 0.0 {
            continue;
        }
        let cache = model.forward(ex.features)?;
        let scale = ex.weight / total_w;
        loss += scale * cross_entropy(cache.logits(), ex.label);

        let mut delta = softmax(cache.logits());
        delta[ex.label] -= 1.0;
        delta.iter_mut().for_each(|d| *d *= scale);

        for li in (0..model.layers.len()).rev() {
            let layer = &model.layers[li];
            let input = &cache.activations[li];
            let gw = &mut grads.weights[li];
            for (p, &a) in input.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (g, &d) in gw[p * layer.fan_out..(p + 1) * layer.fan_out].iter_mut().zip(&delta) {
                    *g += a * d;
                }
            }
            for (g, &d) in grads.bias[li].iter_mut().zip(&delta) {
                *g += d;
            }
            if li > 0 {
                // back through W and the ReLU that produced `input`
                let mut prev = vec![0.0; layer.fan_in];
                for (p, out) in prev.iter_mut().enumerate() {
                    if input[p] <= 0.0 {
                        continue;
                    }
                    let row = &layer.weights[p * layer.fan_out..(p + 1) * layer.fan_out];
                    *out = row.iter().zip(&delta).map(|(w, d)| w * d).sum();
                }
                delta = prev;
            }
        }
    }
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    /// Per-class weight proportional to 1 / frequency, mean 1 over samples.
    #[default]
    WeightedLoss,
    /// Duplicate minority-class samples up to the majority count.
    Upsample,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs on full current-class data plus stored coresets.
    pub epochs_phase1: usize,
    /// Coreset-only refinement epochs.
    pub epochs_phase2: usize,
    pub weight_decay: f64,
    pub class_weighting: ClassWeighting,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs_phase1: 40,
            epochs_phase2: 20,
            weight_decay: 1e-6,
            class_weighting: ClassWeighting::WeightedLoss,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::BadConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(ModelError::BadConfig("batch_size must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(ModelError::BadConfig("weight_decay must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs_phase1 + self.epochs_phase2
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// SGD or Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    weight_decay: f64,
    step: i32,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(model: &MlpClassifier, kind: OptimizerKind, learning_rate: f64, weight_decay: f64) -> Self {
        let shapes: Vec<Vec<f64>> = model
            .layers
            .iter()
            .flat_map(|l| [vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]])
            .collect();
        Self {
            kind,
            learning_rate,
            weight_decay,
            step: 0,
            first_moment: shapes.clone(),
            second_moment: shapes,
        }
    }

    pub fn from_config(model: &MlpClassifier, cfg: &TrainConfig) -> Self {
        Self::new(model, cfg.optimizer, cfg.learning_rate, cfg.weight_decay)
    }

    pub fn apply(&mut self, model: &mut MlpClassifier, grads: &Gradients) {
        self.step += 1;
        let lr = self.learning_rate;
        let wd = self.weight_decay;
        let (bc1, bc2) = (
            1.0 - ADAM_BETA1.powi(self.step),
            1.0 - ADAM_BETA2.powi(self.step),
        );
        let mut slot = 0;
        for (li, layer) in model.layers.iter_mut().enumerate() {
            for (params, g) in [
                (&mut layer.weights, &grads.weights[li]),
                (&mut layer.bias, &grads.bias[li]),
            ] {
                match self.kind {
                    OptimizerKind::Sgd => {
                        for (p, &g) in params.iter_mut().zip(g) {
                            *p -= lr * (g + wd * *p);
                        }
                    }
                    OptimizerKind::Adam => {
                        let m = &mut self.first_moment[slot];
                        let v = &mut self.second_moment[slot];
                        for i in 0..params.len() {
                            let g = g[i] + wd * params[i];
                            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                            let m_hat = m[i] / bc1;
                            let v_hat = v[i] / bc2;
                            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                        }
                    }
                }
                slot += 1;
            }
        }
    }
}

/// Weight per observed class: `N / (C_present * count_c)`, which averages to
/// 1 over the pool. Absent classes get 0.
pub fn inverse_frequency_weights(pool: &[&LabeledSample], num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; num_classes];
    for s in pool {
        counts[s.label] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count();
    let n = pool.len() as f64;
    counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { n / (present as f64 * c as f64) })
        .collect()
}

/// Duplicates samples of minority observed classes (drawn with replacement)
/// until every present class matches the majority count.
pub fn upsample_pool<'a>(pool: &[&'a LabeledSample], num_classes: usize, rng: &mut impl Rng) -> Vec<&'a LabeledSample> {
    let mut by_class: Vec<Vec<&LabeledSample>> = vec![Vec::new(); num_classes];
    for &s in pool {
        by_class[s.label].push(s);
    }
    let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = pool.to_vec();
    for members in &by_class {
        if members.is_empty() {
            continue;
        }
        for _ in members.len()..target {
            out.push(members[rng.gen_range(0..members.len())]);
        }
    }
    out
}

/// One epoch of mini-batch training over a shuffled order of `pool`.
///
/// Each sample's loss is weighted by `class_weights[label]`; the batch loss
/// is the weighted mean. Returns the weighted mean loss over the epoch,
/// measured before each batch's update.
pub fn train_epoch(
    model: &mut MlpClassifier,
    optimizer: &mut Optimizer,
    pool: &[&LabeledSample],
    class_weights: &[f64],
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    if pool.is_empty() {
        return Err(ModelError::Empty);
    }
    if batch_size == 0 {
        return Err(ModelError::BadConfig("batch_size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(rng);

    let mut grads = Gradients::zeros_like(model);
    let mut weighted_loss = 0.0;
    let mut total_weight = 0.0;
    let mut batch = Vec::with_capacity(batch_size);
    for chunk in order.chunks(batch_size) {
        batch.clear();
        for &i in chunk {
            let s = pool[i];
            batch.push(Example {
                features: &s.features,
                label: s.label,
                weight: class_weights.get(s.label).copied().unwrap_or(1.0),
            });
        }
        let w: f64 = batch.iter().map(|e| e.weight).sum();
        if w <= 0.0 {
            continue;
        }
        grads.clear();
        let loss = accumulate_gradients(model, &batch, &mut grads)?;
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss);
        }
        weighted_loss += loss * w;
        total_weight += w;
        optimizer.apply(model, &grads);
        if !model.params_finite() {
            return Err(ModelError::NonFiniteLoss);
        }
    }
    Ok(if total_weight > 0.0 {
        weighted_loss / total_weight
    } else {
        0.0
    })
}

/// Which last-layer gradient is used as the per-sample feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// `softmax(logits) - onehot(label)`, one entry per class.
    #[default]
    Logits,
    /// Outer product of the logit gradient with `[penultimate, 1]`, i.e. the
    /// full gradient of the output layer's weights and bias.
    LastLayerWeights,
}

/// Per-sample gradient rows aligned with `ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientFeatures {
    pub matrix: DenseMatrix,
    pub ids: Vec<usize>,
}

impl GradientFeatures {
    pub fn new(matrix: DenseMatrix, ids: Vec<usize>) -> Result<Self> {
        if matrix.rows() != ids.len() {
            return Err(ModelError::DimMismatch {
                expected: matrix.rows(),
                got: ids.len(),
            });
        }
        Ok(Self { matrix, ids })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Rows at the given positions, ids carried along.
    pub fn subset(&self, rows: &[usize]) -> GradientFeatures {
        GradientFeatures {
            matrix: self.matrix.select_rows(rows),
            ids: rows.iter().map(|&r| self.ids[r]).collect(),
        }
    }
}

/// Gradient of each sample's cross-entropy loss with respect to the logits
/// (or the output-layer parameters, see [`GradientMode`]). Read-only.
pub fn last_layer_gradients(
    model: &MlpClassifier,
    samples: &[&LabeledSample],
    mode: GradientMode,
) -> Result<GradientFeatures> {
    let c = model.num_outputs();
    let hidden = model.layers.last().map(|l| l.fan_in).unwrap_or(0);
    let width = match mode {
        GradientMode::Logits => c,
        GradientMode::LastLayerWeights => c * (hidden + 1),
    };
    let mut data = Vec::with_capacity(samples.len() * width);
    for s in samples {
        if s.label >= c {
            return Err(ModelError::LabelOutOfRange { label: s.label, outputs: c });
        }
        let cache = model.forward(&s.features)?;
        let mut g = softmax(cache.logits());
        g[s.label] -= 1.0;
        match mode {
            GradientMode::Logits => data.extend_from_slice(&g),
            GradientMode::LastLayerWeights => {
                for &h in cache.penultimate().iter().chain(std::iter::once(&1.0)) {
                    data.extend(g.iter().map(|d| d * h));
                }
            }
        }
    }
    let matrix = DenseMatrix::new(samples.len(), width, data)?;
    GradientFeatures::new(matrix, samples.iter().map(|s| s.id).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// `None` for classes with no test samples.
    pub per_class: Vec<Option<f64>>,
    pub overall: f64,
}

/// Accuracy of argmax predictions against clean labels.
pub fn evaluate(model: &MlpClassifier, samples: &[&LabeledSample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(ModelError::Empty);
    }
    let c = model.num_outputs();
    let mut correct = vec![0usize; c];
    let mut total = vec![0usize; c];
    for s in samples {
        if s.clean_label >= c {
            return Err(ModelError::LabelOutOfRange {
                label: s.clean_label,
                outputs: c,
            });
        }
        total[s.clean_label] += 1;
        if model.predict(&s.features)? == s.clean_label {
            correct[s.clean_label] += 1;
        }
    }
    let per_class = correct
        .iter()
        .zip(&total)
        .map(|(&k, &n)| (n > 0).then(|| k as f64 / n as f64))
        .collect();
    let overall = correct.iter().sum::<usize>() as f64 / samples.len() as f64;
    Ok(Evaluation { per_class, overall })
}

const CHECKPOINT_TAG: &[u8; 4] = b"CRM1";

/// Tag, layer count and dims as little-endian u64, then each layer's weights
/// (input-major) and bias as little-endian f64.
pub fn write_checkpoint(model: &MlpClassifier, mut w: impl Write) -> Result<()> {
    w.write_all(CHECKPOINT_TAG)?;
    let dims = model.dims();
    w.write_all(&(dims.len() as u64).to_le_bytes())?;
    for d in dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in model.flat_params() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<MlpClassifier> {
    let mut tag = [0u8; 4];
    r.read_exact(&mut tag)?;
    if &tag != CHECKPOINT_TAG {
        return Err(ModelError::BadCheckpoint(format!("unknown tag {tag:?}")));
    }
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    let n = u64::from_le_bytes(buf) as usize;
    if !(2..=64).contains(&n) {
        return Err(ModelError::BadCheckpoint(format!("implausible layer count {n}")));
    }
    let mut dims = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        dims.push(u64::from_le_bytes(buf) as usize);
    }
    let mut model = MlpClassifier::zeros(&dims)?;
    let mut params = Vec::with_capacity(model.num_params());
    for _ in 0..model.num_params() {
        r.read_exact(&mut buf)?;
        params.push(f64::from_le_bytes(buf));
    }
    if params.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::BadCheckpoint("non-finite parameter".into()));
    }
    model.set_flat_params(&params)?;
    Ok(model)
}
