//! Coreset selection over per-sample gradient features.
//!
//! [`crust_select`] maximizes the facility-location function
//! `F(S) = Σᵢ max_{j∈S} (d0 - dᵢⱼ)` greedily, which is the same as greedily
//! minimizing the k-medoids cost `Σᵢ min_{j∈S} dᵢⱼ`. [`cosine_crust_select`]
//! first clusters the gradients spectrally under cosine affinity, drops small
//! clusters as likely noise, and runs the greedy selection inside every
//! surviving cluster with a budget proportional to its size.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, DenseMatrix, LinalgError};
use crate::model::GradientFeatures;

#[derive(Debug, Error)]
pub enum CoresetError {
    #[error("invalid budget k={k} for {n} candidates")]
    BadK { k: usize, n: usize },
    #[error("empty id set")]
    EmptySet,
    #[error("id {id} out of range for {n} rows")]
    BadId { id: usize, n: usize },
    #[error("d0={d0} is below the largest dissimilarity {max}")]
    BadD0 { d0: f64, max: f64 },
    #[error("affinity row {0} sums to zero")]
    DegenerateAffinity(usize),
    #[error("every cluster has at most {0} members")]
    AllClustersFiltered(usize),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, CoresetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 - a·b / (‖a‖‖b‖)`; a zero row is at distance 1 from any nonzero
    /// row and 0 from another zero row.
    Cosine,
}

/// Rows with norm at or below this are treated as zero under cosine.
const ZERO_NORM: f64 = 1e-12;

/// Symmetric `n x n` dissimilarities with a zero diagonal and an upper bound `d0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    n: usize,
    data: Vec<f64>,
    metric: Metric,
    d0: f64,
}

impl DissimilarityMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn d0(&self) -> f64 {
        self.d0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn max_entry(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Same entries with a looser upper bound.
    pub fn with_d0(&self, d0: f64) -> Result<Self> {
        let max = self.max_entry();
        if !(d0 >= max) {
            return Err(CoresetError::BadD0 { d0, max });
        }
        Ok(Self { d0, ..self.clone() })
    }
}

fn unit_rows(g: &DenseMatrix) -> (Vec<f64>, Vec<bool>) {
    let (n, c) = (g.rows(), g.cols());
    let mut units = vec![0.0; n * c];
    let mut zero = vec![false; n];
    for i in 0..n {
        let row = g.row(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= ZERO_NORM {
            zero[i] = true;
        } else {
            for (u, v) in units[i * c..(i + 1) * c].iter_mut().zip(row) {
                *u = v / norm;
            }
        }
    }
    (units, zero)
}

/// Pairwise gradient dissimilarities; `d0` is set to the exact maximum.
pub fn pairwise_dissimilarity(g: &GradientFeatures, metric: Metric) -> DissimilarityMatrix {
    let m = &g.matrix;
    let n = m.rows();
    let c = m.cols();
    let mut data = vec![0.0; n * n];
    match metric {
        Metric::Euclidean => {
            for i in 0..n {
                let a = m.row(i);
                for j in (i + 1)..n {
                    let d = a
                        .iter()
                        .zip(m.row(j))
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt();
                    data[i * n + j] = d;
                    data[j * n + i] = d;
                }
            }
        }
        Metric::Cosine => {
            let (units, zero) = unit_rows(m);
            for i in 0..n {
                for j in (i + 1)..n {
                    let d = match (zero[i], zero[j]) {
                        (true, true) => 0.0,
                        (true, false) | (false, true) => 1.0,
                        (false, false) => {
                            let dot: f64 = units[i * c..(i + 1) * c]
                                .iter()
                                .zip(&units[j * c..(j + 1) * c])
                                .map(|(x, y)| x * y)
                                .sum();
                            (1.0 - dot).clamp(0.0, 2.0)
                        }
                    };
                    data[i * n + j] = d;
                    data[j * n + i] = d;
                }
            }
        }
    }
    let d0 = data.iter().copied().fold(0.0, f64::max);
    DissimilarityMatrix { n, data, metric, d0 }
}

fn check_ids(d: &DissimilarityMatrix, s: &[usize]) -> Result<()> {
    if s.is_empty() {
        return Err(CoresetError::EmptySet);
    }
    if let Some(&id) = s.iter().find(|&&id| id >= d.n) {
        return Err(CoresetError::BadId { id, n: d.n });
    }
    Ok(())
}

/// `Σᵢ min_{j∈S} dᵢⱼ`.
pub fn kmedoids_cost(d: &DissimilarityMatrix, s: &[usize]) -> Result<f64> {
    check_ids(d, s)?;
    Ok((0..d.n)
        .map(|i| s.iter().map(|&j| d.get(i, j)).fold(f64::INFINITY, f64::min))
        .sum())
}

/// `F(S) = Σᵢ (d0 - min_{j∈S} dᵢⱼ) = n·d0 - kmedoids_cost(S)`.
pub fn facility_location_value(d: &DissimilarityMatrix, s: &[usize]) -> Result<f64> {
    check_ids(d, s)?;
    Ok((0..d.n)
        .map(|i| d.d0 - s.iter().map(|&j| d.get(i, j)).fold(f64::INFINITY, f64::min))
        .sum())
}

/// Marginal gain `F(e | S)` given `S` and `F(∅) = 0`.
pub fn marginal_gain(d: &DissimilarityMatrix, s: &[usize], e: usize) -> f64 {
    (0..d.n)
        .map(|i| {
            let cur = s.iter().map(|&j| d.get(i, j)).fold(d.d0, f64::min);
            (cur - d.get(i, e)).max(0.0)
        })
        .sum()
}

/// Result of a selection. `rows` index the dissimilarity matrix (or the
/// gradient rows); `ids` are the corresponding sample ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoresetSelection {
    /// Greedy insertion order.
    pub ids: Vec<usize>,
    pub rows: Vec<usize>,
    /// `F(S)` on the euclidean dissimilarities of every candidate.
    pub objective: f64,
    /// Cluster of every selected sample, when clustering was used.
    pub provenance: Option<Vec<usize>>,
}

/// The first greedy pick maximizes `F({e}) = n·d0 − Σᵢ dᵢₑ`; choosing the
/// smallest column sum directly keeps the choice independent of `d0`, even
/// under exact ties. Afterwards every gain depends on `d` alone.
fn first_pick(d: &DissimilarityMatrix) -> usize {
    let mut best = 0;
    let mut best_sum = f64::INFINITY;
    for j in 0..d.n {
        let s: f64 = d.row(j).iter().sum();
        if s < best_sum {
            best_sum = s;
            best = j;
        }
    }
    best
}

#[inline]
fn gain_against(cur: &[f64], row: &[f64]) -> f64 {
    cur.iter().zip(row).map(|(&c, &d)| (c - d).max(0.0)).sum()
}

/// Plain greedy maximization of the facility-location function.
///
/// Keeps each point's current distance to the selection so every marginal
/// gain costs `O(n)`. Ties go to the lowest row index.
pub fn greedy_select(d: &DissimilarityMatrix, k: usize) -> Result<CoresetSelection> {
    let n = d.n;
    if k == 0 || k > n {
        return Err(CoresetError::BadK { k, n });
    }
    let first = first_pick(d);
    let mut cur = d.row(first).to_vec();
    let mut chosen = vec![false; n];
    chosen[first] = true;
    let mut rows = Vec::with_capacity(k);
    rows.push(first);
    for _ in 1..k {
        let mut best = usize::MAX;
        let mut best_gain = f64::NEG_INFINITY;
        for j in 0..n {
            if chosen[j] {
                continue;
            }
            let g = gain_against(&cur, d.row(j));
            if g > best_gain {
                best_gain = g;
                best = j;
            }
        }
        chosen[best] = true;
        rows.push(best);
        for (c, &dist) in cur.iter_mut().zip(d.row(best)) {
            *c = c.min(dist);
        }
    }
    let objective = cur.iter().map(|c| d.d0 - c).sum();
    Ok(CoresetSelection {
        ids: rows.clone(),
        rows,
        objective,
        provenance: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    gain: f64,
    row: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| Reverse(self.row).cmp(&Reverse(other.row)))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Lazy greedy: stale marginal gains in a max-heap are upper bounds
/// (submodularity), so only the top candidate needs re-evaluation.
/// Produces exactly the output of [`greedy_select`].
pub fn lazy_greedy_select(d: &DissimilarityMatrix, k: usize) -> Result<CoresetSelection> {
    let n = d.n;
    if k == 0 || k > n {
        return Err(CoresetError::BadK { k, n });
    }
    let first = first_pick(d);
    let mut cur = d.row(first).to_vec();
    let mut heap: BinaryHeap<Candidate> = (0..n)
        .filter(|&row| row != first)
        .map(|row| Candidate {
            gain: gain_against(&cur, d.row(row)),
            row,
        })
        .collect();
    let mut rows = Vec::with_capacity(k);
    rows.push(first);
    let mut fresh = vec![1; n];
    while rows.len() < k {
        let Some(top) = heap.pop() else { break };
        if fresh[top.row] == rows.len() {
            rows.push(top.row);
            for (c, &dist) in cur.iter_mut().zip(d.row(top.row)) {
                *c = c.min(dist);
            }
            continue;
        }
        let updated = Candidate {
            gain: gain_against(&cur, d.row(top.row)),
            row: top.row,
        };
        fresh[top.row] = rows.len();
        heap.push(updated);
    }
    let objective = cur.iter().map(|c| d.d0 - c).sum();
    Ok(CoresetSelection {
        ids: rows.clone(),
        rows,
        objective,
        provenance: None,
    })
}

/// Per-class CRUST unit: euclidean dissimilarities, then greedy selection.
/// Returned `ids` are sample ids from `g.ids`.
pub fn crust_select(g: &GradientFeatures, k: usize) -> Result<CoresetSelection> {
    let d = pairwise_dissimilarity(g, Metric::Euclidean);
    let mut sel = lazy_greedy_select(&d, k)?;
    sel.ids = sel.rows.iter().map(|&r| g.ids[r]).collect();
    Ok(sel)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Cluster of each gradient row.
    pub labels: Vec<usize>,
    pub sizes: Vec<usize>,
    /// Clusters with more than `min_cluster_size` members, ascending.
    pub kept: Vec<usize>,
    pub k_clusters: usize,
    pub min_cluster_size: usize,
}

impl ClusterAssignment {
    pub fn from_labels(labels: Vec<usize>, k_clusters: usize, min_cluster_size: usize) -> Self {
        let mut sizes = vec![0; k_clusters];
        for &l in &labels {
            sizes[l] += 1;
        }
        let kept = (0..k_clusters).filter(|&c| sizes[c] > min_cluster_size).collect();
        Self {
            labels,
            sizes,
            kept,
            k_clusters,
            min_cluster_size,
        }
    }

    pub fn with_min_size(&self, min_cluster_size: usize) -> Self {
        Self::from_labels(self.labels.clone(), self.k_clusters, min_cluster_size)
    }

    /// Rows belonging to cluster `c`, ascending.
    pub fn members(&self, c: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == c)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Dense cosine affinity `aᵢⱼ = 1 - cos_dist(i, j) / 2`.
pub fn cosine_affinity(g: &GradientFeatures) -> DenseMatrix {
    let d = pairwise_dissimilarity(g, Metric::Cosine);
    let n = d.n();
    let data = d.data.iter().map(|v| 1.0 - v / 2.0).collect();
    DenseMatrix::new(n, n, data).expect("finite affinities")
}

/// Factor `Φ` with `A = ΦΦᵀ` for the cosine affinity: row `i` is
/// `[1, uᵢ, zᵢ] / √2`, where `uᵢ` is the unit gradient (zero for zero rows)
/// and `zᵢ` flags zero rows.
fn cosine_affinity_factor(g: &GradientFeatures) -> DenseMatrix {
    let n = g.matrix.rows();
    let c = g.matrix.cols();
    let (units, zero) = unit_rows(&g.matrix);
    let r = c + 2;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut data = vec![0.0; n * r];
    for i in 0..n {
        let row = &mut data[i * r..(i + 1) * r];
        row[0] = s;
        for (dst, u) in row[1..=c].iter_mut().zip(&units[i * c..(i + 1) * c]) {
            *dst = u * s;
        }
        row[c + 1] = if zero[i] { s } else { 0.0 };
    }
    DenseMatrix::new(n, r, data).expect("finite factor")
}

const EMBED_TOL: f64 = 1e-10;

/// Rows of the eigenvectors of `L = I - D^{-1/2} A D^{-1/2}` belonging to
/// its `k` smallest eigenvalues.
///
/// The cosine affinity has rank at most `features + 2`, so the normalized
/// affinity `BBᵀ` (with `B = D^{-1/2}Φ`) is diagonalized through the small
/// Gram matrix `BᵀB`: if `BᵀB v = λ v` then `Bv / √λ` is a unit eigenvector
/// of `BBᵀ` with eigenvalue `λ`, i.e. of `L` with eigenvalue `1 - λ`. Only
/// eigenvalues `λ > 0` carry structure; when `k` exceeds that rank the
/// embedding keeps just the informative columns.
pub fn spectral_embedding(g: &GradientFeatures, k: usize) -> Result<DenseMatrix> {
    let phi = cosine_affinity_factor(g);
    let n = phi.rows();
    let r = phi.cols();
    let mut col_sum = vec![0.0; r];
    for i in 0..n {
        for (s, v) in col_sum.iter_mut().zip(phi.row(i)) {
            *s += v;
        }
    }
    let mut b = Vec::with_capacity(n * r);
    for i in 0..n {
        let degree: f64 = phi.row(i).iter().zip(&col_sum).map(|(x, y)| x * y).sum();
        if degree <= 0.0 {
            return Err(CoresetError::DegenerateAffinity(i));
        }
        let inv = 1.0 / degree.sqrt();
        b.extend(phi.row(i).iter().map(|v| v * inv));
    }
    let b = DenseMatrix::new(n, r, b)?;
    let eig = linalg::sym_eigen(&b.gram())?;
    let top = eig.eigenvalues[r - 1].max(0.0);
    let cols: Vec<usize> = (0..r)
        .rev()
        .filter(|&c| eig.eigenvalues[c] > EMBED_TOL * top.max(1.0))
        .take(k)
        .collect();
    let m = cols.len().max(1);
    let mut emb = vec![0.0; n * m];
    for (dst, &c) in cols.iter().enumerate() {
        let v = eig.eigenvectors.column(c);
        let scale = 1.0 / eig.eigenvalues[c].sqrt();
        for i in 0..n {
            emb[i * m + dst] = b.row(i).iter().zip(&v).map(|(x, y)| x * y).sum::<f64>() * scale;
        }
    }
    Ok(DenseMatrix::new(n, m, emb)?)
}

const SPECTRAL_KMEANS_ITERS: usize = 300;
const SPECTRAL_KMEANS_RESTARTS: u64 = 10;

/// Normalized spectral clustering of gradient directions under cosine
/// affinity; row-normalized spectral embedding clustered by seeded k-means,
/// keeping the lowest-inertia of several restarts.
pub fn spectral_cluster(g: &GradientFeatures, k_clusters: usize, seed: u64) -> Result<ClusterAssignment> {
    let n = g.len();
    if k_clusters < 2 || k_clusters > n {
        return Err(CoresetError::BadK { k: k_clusters, n });
    }
    let emb = spectral_embedding(g, k_clusters)?;
    let m = emb.cols();
    let mut rows = Vec::with_capacity(n * m);
    for i in 0..n {
        let row = emb.row(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            rows.extend(row.iter().map(|v| v / norm));
        } else {
            rows.extend_from_slice(row);
        }
    }
    let points = DenseMatrix::new(n, m, rows)?;
    let mut best: Option<linalg::KMeansResult> = None;
    for r in 0..SPECTRAL_KMEANS_RESTARTS {
        let km = linalg::kmeans(&points, k_clusters, seed ^ r.wrapping_mul(0x9e37_79b9_7f4a_7c15), SPECTRAL_KMEANS_ITERS)?;
        if best.as_ref().is_none_or(|b| km.inertia < b.inertia) {
            best = Some(km);
        }
    }
    let km = best.expect("at least one restart");
    Ok(ClusterAssignment::from_labels(km.assignments, k_clusters, 0))
}

/// Splits `total` across groups proportionally to `sizes` by largest
/// remainder; remainder ties go to the lower index.
pub fn proportional_budgets(sizes: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = sizes.iter().sum();
    if sum == 0 {
        return vec![0; sizes.len()];
    }
    let total = total.min(sum);
    let mut budgets: Vec<usize> = sizes.iter().map(|&s| s * total / sum).collect();
    let assigned: usize = budgets.iter().sum();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // remainder of s*total/sum, compared exactly in integers
    order.sort_by(|&a, &b| ((sizes[b] * total) % sum).cmp(&((sizes[a] * total) % sum)).then(a.cmp(&b)));
    for &i in order.iter().take(total - assigned) {
        budgets[i] += 1;
    }
    budgets
}

/// Default cluster-size threshold: `max(2, ceil(0.05 n))`.
pub fn default_min_cluster_size(n: usize) -> usize {
    2usize.max((n as f64 * 0.05).ceil() as usize)
}

/// Default cluster count: `min(8, floor(n / (2A + 1)), n)`, at least 1.
pub fn default_k_clusters(n: usize, min_cluster_size: usize) -> usize {
    8.min(n / (2 * min_cluster_size + 1)).min(n).max(1)
}

/// A CosineCRUST selection together with the clustering that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineCrustOutcome {
    pub selection: CoresetSelection,
    pub clusters: ClusterAssignment,
    /// Every cluster was filtered and plain CRUST ran on all rows instead.
    pub fell_back: bool,
}

/// CosineCRUST without the fallback: fails with `AllClustersFiltered` when
/// no cluster is larger than `min_cluster_size`.
pub fn cosine_crust_select_strict(
    g: &GradientFeatures,
    k: usize,
    k_clusters: usize,
    min_cluster_size: usize,
    seed: u64,
) -> Result<CosineCrustOutcome> {
    let n = g.len();
    if k == 0 || k > n {
        return Err(CoresetError::BadK { k, n });
    }
    let k_clusters = k_clusters.clamp(1, n);
    let clusters = if k_clusters == 1 {
        ClusterAssignment::from_labels(vec![0; n], 1, min_cluster_size)
    } else {
        spectral_cluster(g, k_clusters, seed)?.with_min_size(min_cluster_size)
    };
    if clusters.kept.is_empty() {
        return Err(CoresetError::AllClustersFiltered(min_cluster_size));
    }
    let kept_sizes: Vec<usize> = clusters.kept.iter().map(|&c| clusters.sizes[c]).collect();
    let budgets = proportional_budgets(&kept_sizes, k);

    let mut rows = Vec::new();
    let mut provenance = Vec::new();
    for (&c, &budget) in clusters.kept.iter().zip(&budgets) {
        if budget == 0 {
            continue;
        }
        let members = clusters.members(c);
        let sub = g.subset(&members);
        let sel = crust_select(&sub, budget)?;
        for r in sel.rows {
            rows.push(members[r]);
            provenance.push(c);
        }
    }
    let full = pairwise_dissimilarity(g, Metric::Euclidean);
    let objective = facility_location_value(&full, &rows)?;
    Ok(CosineCrustOutcome {
        selection: CoresetSelection {
            ids: rows.iter().map(|&r| g.ids[r]).collect(),
            rows,
            objective,
            provenance: Some(provenance),
        },
        clusters,
        fell_back: false,
    })
}

/// CosineCRUST: spectral clustering under cosine affinity, removal of
/// clusters with at most `min_cluster_size` members, then CRUST inside each
/// kept cluster with budgets proportional to cluster size.
///
/// If every cluster is filtered, logs a warning and falls back to
/// [`crust_select`] on all rows.
pub fn cosine_crust_select(
    g: &GradientFeatures,
    k: usize,
    k_clusters: usize,
    min_cluster_size: usize,
    seed: u64,
) -> Result<CosineCrustOutcome> {
    match cosine_crust_select_strict(g, k, k_clusters, min_cluster_size, seed) {
        Err(CoresetError::AllClustersFiltered(a)) => {
            log::warn!("all clusters have at most {a} members; falling back to plain CRUST");
            let k_clusters = k_clusters.clamp(1, g.len());
            let clusters = if k_clusters == 1 {
                ClusterAssignment::from_labels(vec![0; g.len()], 1, min_cluster_size)
            } else {
                spectral_cluster(g, k_clusters, seed)?.with_min_size(min_cluster_size)
            };
            Ok(CosineCrustOutcome {
                selection: crust_select(g, k)?,
                clusters,
                fell_back: true,
            })
        }
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Descending.
    pub singular_values: Vec<f64>,
    /// Number of leading "information" directions: the smallest `i` with
    /// `σ_{i+1} / σ_1 < split_ratio`, or the rank if no such `i` exists.
    pub split_index: usize,
    pub split_ratio: f64,
    pub rank: usize,
}

// singular values come from the Gram matrix, so they are only accurate to
// about sqrt(machine epsilon) relative to the largest one
const RANK_TOL: f64 = 1e-6;

/// Singular spectrum of the gradient matrix and its information/nuisance split.
pub fn spectrum_report(g: &GradientFeatures, split_ratio: f64) -> Result<SpectrumReport> {
    let sv = linalg::singular_values(&g.matrix)?;
    let top = sv.first().copied().unwrap_or(0.0);
    let rank = sv.iter().filter(|&&s| top > 0.0 && s > RANK_TOL * top).count();
    let split_index = if top == 0.0 {
        0
    } else {
        (1..sv.len())
            .find(|&i| sv[i] / top < split_ratio)
            .unwrap_or(rank)
            .min(rank.max(1))
    };
    Ok(SpectrumReport {
        singular_values: sv,
        split_index,
        split_ratio,
        rank,
    })
}
