//! Diagnostic evaluators for the label-flip and perturbation robustness
//! bounds of coreset training.
//!
//! Every big-O constant is taken as 1, so the numbers are trend diagnostics
//! over measured gradient spectra rather than certified guarantees. `log` is
//! the natural logarithm.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coreset::{ClusterAssignment, CoresetSelection};
use crate::linalg::{self, LinalgError};
use crate::model::GradientFeatures;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("bad bound input: {0}")]
    BadInput(String),
    #[error("selection is empty")]
    EmptySelection,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, BoundsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    LabelFlip,
    Perturbation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Smallest cluster size.
    pub r_min: f64,
    /// Smallest singular value of the coreset Jacobian.
    pub sigma_min: f64,
    /// Spectral norm of the Jacobian.
    pub jac_norm: f64,
    /// Jacobian approximation error.
    pub eps: f64,
    pub k: usize,
    pub n: usize,
    /// Noisy-label fraction in the coreset.
    pub rho: f64,
    /// Label margin for the label-flip bound, perturbed fraction for the
    /// perturbation bound.
    pub delta: f64,
    pub eta: f64,
    pub e_min: f64,
    pub e_max: f64,
    pub e_j1: f64,
    pub e_j2: f64,
    pub r0_norm: f64,
    pub nu: f64,
}

impl Default for BoundInputs {
    fn default() -> Self {
        Self {
            r_min: 1.0,
            sigma_min: 1.0,
            jac_norm: 1.0,
            eps: 0.0,
            k: 1,
            n: 1,
            rho: 0.01,
            delta: 0.5,
            eta: 0.1,
            e_min: 0.0,
            e_max: 0.0,
            e_j1: 0.0,
            e_j2: 0.0,
            r0_norm: 1.0,
            nu: 1e-3,
        }
    }
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let magnitudes = [
            ("r_min", self.r_min),
            ("sigma_min", self.sigma_min),
            ("jac_norm", self.jac_norm),
            ("eps", self.eps),
            ("eta", self.eta),
            ("e_min", self.e_min),
            ("e_max", self.e_max),
            ("e_j1", self.e_j1),
            ("e_j2", self.e_j2),
            ("r0_norm", self.r0_norm),
            ("nu", self.nu),
        ];
        for (name, v) in magnitudes {
            if !(v.is_finite() && v >= 0.0) {
                return Err(BoundsError::BadInput(format!("{name}={v} must be finite and nonnegative")));
            }
        }
        for (name, v) in [("rho", self.rho), ("delta", self.delta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(BoundsError::BadInput(format!("{name}={v} must lie in [0,1]")));
            }
        }
        if self.k == 0 || self.k > self.n {
            return Err(BoundsError::BadInput(format!("need 1 <= k={} <= n={}", self.k, self.n)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub theorem: Theorem,
    pub alpha: f64,
    pub beta: f64,
    /// Absent when the logarithm in its denominator vanishes or flips sign.
    pub eps_ceiling: Option<f64>,
    pub eta_suggested: f64,
    /// Absent when infeasible or unbounded.
    pub iteration_floor: Option<f64>,
    pub feasible: bool,
    /// Always true: all hidden constants were set to 1.
    pub unit_constants: bool,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Label-flip bound: `α = √r_min σ_min`, `β = ‖J‖ + ε`,
/// `ε ≤ δα² / (kβ log(√k/ρ))`, `η = 1/(2β²)`,
/// `τ ≥ log(√n/ρ) / (ηα²)`; feasible iff `ρ < δ/8`.
pub fn eval_theorem1(inp: &BoundInputs) -> Result<BoundReport> {
    inp.validate()?;
    if !(inp.rho > 0.0) || !(inp.eta > 0.0) {
        return Err(BoundsError::BadInput("rho and eta must be positive".into()));
    }
    let alpha = inp.r_min.sqrt() * inp.sigma_min;
    let beta = inp.jac_norm + inp.eps;
    let k = inp.k as f64;
    let log_k = ((k.sqrt()) / inp.rho).ln();
    let eps_ceiling = if log_k > 0.0 {
        finite(inp.delta * alpha * alpha / (k * beta * log_k))
    } else {
        None
    };
    let feasible = inp.rho < inp.delta / 8.0;
    let floor = ((inp.n as f64).sqrt() / inp.rho).ln() / (inp.eta * alpha * alpha);
    Ok(BoundReport {
        theorem: Theorem::LabelFlip,
        alpha,
        beta,
        eps_ceiling,
        eta_suggested: 1.0 / (2.0 * beta * beta),
        iteration_floor: if feasible { finite(floor) } else { None },
        feasible,
        unit_constants: true,
    })
}

/// Perturbation bound: `α = √r_min σ_min − E_min`, `β = ‖J‖ + ε + E_max`,
/// `ε ≤ δα² / (kβ |log δ|)`, `η = 1/(2β²)` and
/// `T ≥ log(‖r₀‖/ν) / (η D)` with
/// `D = α/2 + E_J2 α + E_J1 α − η E_J2 β³/2 − η E_J1 β/3`; feasible iff `D > 0`.
pub fn eval_theorem2(inp: &BoundInputs) -> Result<BoundReport> {
    inp.validate()?;
    if !(inp.nu > 0.0) || !(inp.r0_norm > 0.0) || !(inp.eta > 0.0) {
        return Err(BoundsError::BadInput("nu, r0_norm and eta must be positive".into()));
    }
    let alpha = inp.r_min.sqrt() * inp.sigma_min - inp.e_min;
    let beta = inp.jac_norm + inp.eps + inp.e_max;
    let k = inp.k as f64;
    let log_delta = inp.delta.ln().abs();
    let eps_ceiling = if inp.delta > 0.0 && inp.delta < 1.0 {
        finite(inp.delta * alpha * alpha / (k * beta * log_delta))
    } else {
        None
    };
    let eta = inp.eta;
    let denom = alpha / 2.0 + inp.e_j2 * alpha + inp.e_j1 * alpha
        - eta * inp.e_j2 * beta.powi(3) / 2.0
        - eta * inp.e_j1 * beta / 3.0;
    let feasible = denom > 0.0;
    let floor = ((inp.r0_norm / inp.nu).ln() / (eta * denom)).max(0.0);
    Ok(BoundReport {
        theorem: Theorem::Perturbation,
        alpha,
        beta,
        eps_ceiling,
        eta_suggested: 1.0 / (2.0 * beta * beta),
        iteration_floor: if feasible { finite(floor) } else { None },
        feasible,
        unit_constants: true,
    })
}

/// The data-derived subset of [`BoundInputs`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredInputs {
    pub sigma_min: f64,
    pub jac_norm: f64,
    pub r_min: f64,
    pub k: usize,
    pub n: usize,
}

impl MeasuredInputs {
    /// Merges into `base`, keeping its theory-only fields.
    pub fn apply(&self, base: &BoundInputs) -> BoundInputs {
        BoundInputs {
            sigma_min: self.sigma_min,
            jac_norm: self.jac_norm,
            r_min: self.r_min,
            k: self.k,
            n: self.n,
            ..base.clone()
        }
    }
}

/// `σ_min` is the smallest of the `min(k, features)` singular values of the
/// selected gradient rows; `‖J‖` is the top singular value of all rows;
/// `r_min` counts the selected samples of the least represented cluster.
pub fn measure_inputs(
    g: &GradientFeatures,
    clusters: &ClusterAssignment,
    selection: &CoresetSelection,
) -> Result<MeasuredInputs> {
    if selection.rows.is_empty() {
        return Err(BoundsError::EmptySelection);
    }
    let sel = g.matrix.select_rows(&selection.rows);
    let sv_sel = linalg::singular_values(&sel)?;
    let sigma_min = sv_sel[sel.rows().min(sel.cols()) - 1];
    let jac_norm = linalg::singular_values(&g.matrix)?[0];

    let mut counts = vec![0usize; clusters.k_clusters];
    match &selection.provenance {
        Some(prov) => prov.iter().for_each(|&c| counts[c] += 1),
        None => selection.rows.iter().for_each(|&r| counts[clusters.labels[r]] += 1),
    }
    let r_min = counts.iter().copied().filter(|&c| c > 0).min().unwrap_or(0);
    Ok(MeasuredInputs {
        sigma_min,
        jac_norm,
        r_min: r_min as f64,
        k: selection.rows.len(),
        n: g.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coreset::crust_select;
    use crate::linalg::DenseMatrix;
    use approx::assert_abs_diff_eq;

    fn base() -> BoundInputs {
        BoundInputs {
            r_min: 4.0,
            sigma_min: 0.5,
            jac_norm: 2.0,
            eps: 0.1,
            k: 16,
            n: 400,
            rho: 0.02,
            delta: 0.4,
            eta: 0.05,
            ..BoundInputs::default()
        }
    }

    #[test]
    fn theorem1_formulas() {
        let r = eval_theorem1(&base()).unwrap();
        let alpha = 2.0 * 0.5;
        let beta = 2.1;
        assert_abs_diff_eq!(r.alpha, alpha);
        assert_abs_diff_eq!(r.beta, beta);
        assert_abs_diff_eq!(r.eta_suggested, 1.0 / (2.0 * beta * beta));
        let want_eps = 0.4 * alpha * alpha / (16.0 * beta * (4.0f64 / 0.02).ln());
        assert_abs_diff_eq!(r.eps_ceiling.unwrap(), want_eps, epsilon = 1e-15);
        let want_floor = (20.0f64 / 0.02).ln() / (0.05 * alpha * alpha);
        assert_abs_diff_eq!(r.iteration_floor.unwrap(), want_floor, epsilon = 1e-12);
        assert!(r.feasible);
        assert!(r.unit_constants);
    }

    #[test]
    fn theorem1_feasibility_is_strict() {
        let at = BoundInputs { rho: 0.05, delta: 0.4, ..base() };
        let r = eval_theorem1(&at).unwrap();
        assert!(!r.feasible);
        assert!(r.iteration_floor.is_none());
        let below = BoundInputs { rho: 0.0499, ..at };
        assert!(eval_theorem1(&below).unwrap().feasible);
    }

    #[test]
    fn doubling_beta_quarters_eta() {
        let a = eval_theorem1(&BoundInputs { eps: 0.0, ..base() }).unwrap();
        let b = eval_theorem1(&BoundInputs { eps: 0.0, jac_norm: 4.0, ..base() }).unwrap();
        assert_abs_diff_eq!(b.beta, 2.0 * a.beta);
        assert_abs_diff_eq!(b.eta_suggested / a.eta_suggested, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn bad_inputs() {
        assert!(eval_theorem1(&BoundInputs { rho: 0.0, ..base() }).is_err());
        assert!(eval_theorem1(&BoundInputs { eta: 0.0, ..base() }).is_err());
        assert!(eval_theorem1(&BoundInputs { delta: 1.5, ..base() }).is_err());
        assert!(eval_theorem1(&BoundInputs { k: 500, ..base() }).is_err());
        assert!(eval_theorem1(&BoundInputs { sigma_min: -1.0, ..base() }).is_err());
        assert!(eval_theorem2(&BoundInputs { nu: 0.0, ..base() }).is_err());
        assert!(eval_theorem2(&BoundInputs { r0_norm: 0.0, ..base() }).is_err());
    }

    #[test]
    fn theorem2_reduces_without_perturbation() {
        for rho in [0.001, 0.01, 0.04] {
            for jac in [0.5, 1.0, 3.0] {
                let inp = BoundInputs { rho, jac_norm: jac, ..base() };
                let t1 = eval_theorem1(&inp).unwrap();
                let t2 = eval_theorem2(&inp).unwrap();
                assert_eq!(t1.alpha, t2.alpha);
                assert_eq!(t1.beta, t2.beta);
                assert_eq!(t1.eta_suggested, t2.eta_suggested);
            }
        }
    }

    #[test]
    fn theorem2_formulas() {
        let inp = BoundInputs {
            e_min: 0.1,
            e_max: 0.2,
            e_j1: 0.05,
            e_j2: 0.01,
            r0_norm: 10.0,
            nu: 0.01,
            ..base()
        };
        let r = eval_theorem2(&inp).unwrap();
        let alpha = 1.0 - 0.1;
        let beta = 2.0 + 0.1 + 0.2;
        assert_abs_diff_eq!(r.alpha, alpha, epsilon = 1e-15);
        assert_abs_diff_eq!(r.beta, beta, epsilon = 1e-15);
        let want_eps = 0.4 * alpha * alpha / (16.0 * beta * 0.4f64.ln().abs());
        assert_abs_diff_eq!(r.eps_ceiling.unwrap(), want_eps, epsilon = 1e-15);
        let d = alpha / 2.0 + 0.01 * alpha + 0.05 * alpha - 0.05 * 0.01 * beta.powi(3) / 2.0 - 0.05 * 0.05 * beta / 3.0;
        assert_abs_diff_eq!(r.iteration_floor.unwrap(), 1000.0f64.ln() / (0.05 * d), epsilon = 1e-9);
        assert!(r.feasible);
    }

    #[test]
    fn theorem2_sign_condition() {
        let inp = BoundInputs { e_j2: 50.0, eta: 1.0, ..base() };
        let r = eval_theorem2(&inp).unwrap();
        assert!(!r.feasible);
        assert!(r.iteration_floor.is_none());
    }

    #[test]
    fn theorem2_e_max_monotone() {
        let mut prev: Option<BoundReport> = None;
        for e_max in [0.0, 0.1, 0.5, 1.0, 3.0] {
            let r = eval_theorem2(&BoundInputs { e_max, ..base() }).unwrap();
            if let Some(p) = &prev {
                assert!(r.beta > p.beta);
                assert!(r.eta_suggested < p.eta_suggested);
            }
            prev = Some(r);
        }
    }

    #[test]
    fn theorem2_eps_absent_at_delta_edges() {
        assert!(eval_theorem2(&BoundInputs { delta: 1.0, ..base() }).unwrap().eps_ceiling.is_none());
        assert!(eval_theorem2(&BoundInputs { delta: 0.0, ..base() }).unwrap().eps_ceiling.is_none());
    }

    fn features(rows: &[Vec<f64>]) -> GradientFeatures {
        GradientFeatures::new(DenseMatrix::from_rows(rows).unwrap(), (0..rows.len()).collect()).unwrap()
    }

    #[test]
    fn measure_full_selection() {
        let rows = vec![vec![3.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]];
        let g = features(&rows);
        let sel = CoresetSelection { ids: vec![0, 1, 2], rows: vec![0, 1, 2], objective: 0.0, provenance: None };
        let clusters = ClusterAssignment::from_labels(vec![0; 3], 1, 0);
        let m = measure_inputs(&g, &clusters, &sel).unwrap();
        assert_abs_diff_eq!(m.sigma_min, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.jac_norm, 3.0, epsilon = 1e-12);
        assert_eq!(m.r_min, 3.0);
        assert_eq!((m.k, m.n), (3, 3));
    }

    #[test]
    fn measure_rank_deficient_selection() {
        let g = features(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![1.0, -1.0]]);
        let sel = CoresetSelection { ids: vec![0, 1], rows: vec![0, 1], objective: 0.0, provenance: None };
        let clusters = ClusterAssignment::from_labels(vec![0, 0, 1], 2, 0);
        let m = measure_inputs(&g, &clusters, &sel).unwrap();
        assert!(m.sigma_min < 1e-7);
        let r = eval_theorem1(&m.apply(&BoundInputs { rho: 0.01, delta: 0.5, ..BoundInputs::default() })).unwrap();
        assert!(r.alpha < 1e-6);
        assert!(r.iteration_floor.map_or(true, |f| f > 1e9));
    }

    #[test]
    fn measure_counts_per_cluster() {
        let g = features(&[vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0], vec![0.1, 0.9], vec![0.05, 1.0]]);
        let clusters = ClusterAssignment::from_labels(vec![0, 0, 1, 1, 1], 2, 0);
        let sel = CoresetSelection { ids: vec![0, 2, 3], rows: vec![0, 2, 3], objective: 0.0, provenance: None };
        assert_eq!(measure_inputs(&g, &clusters, &sel).unwrap().r_min, 1.0);
        let crust = crust_select(&g, 2).unwrap();
        let single = ClusterAssignment::from_labels(vec![0; 5], 1, 0);
        assert_eq!(measure_inputs(&g, &single, &crust).unwrap().r_min, 2.0);
        let empty = CoresetSelection { ids: vec![], rows: vec![], objective: 0.0, provenance: None };
        assert!(matches!(measure_inputs(&g, &single, &empty), Err(BoundsError::EmptySelection)));
    }

    #[test]
    fn grid_monotonicity() {
        let rhos = [0.001, 0.003, 0.01, 0.02, 0.04];
        let deltas = [0.1, 0.3, 0.5, 0.7, 0.9];
        let ks = [1usize, 2, 8, 32, 128];
        for &delta in &deltas {
            let floors: Vec<f64> = rhos
                .iter()
                .map(|&rho| eval_theorem1(&BoundInputs { rho, delta, k: 8, ..base() }).unwrap())
                .filter(|r| r.feasible)
                .map(|r| r.iteration_floor.unwrap())
                .collect();
            assert!(floors.windows(2).all(|w| w[1] < w[0]));
        }
        for eval in [eval_theorem1, eval_theorem2] {
            for &rho in &[0.001, 0.01] {
                for &k in &ks {
                    let eps: Vec<f64> = deltas
                        .iter()
                        .map(|&delta| eval(&BoundInputs { rho, delta, k, ..base() }).unwrap().eps_ceiling.unwrap())
                        .collect();
                    assert!(eps.windows(2).all(|w| w[1] > w[0]));
                }
                for &delta in &deltas {
                    let eps: Vec<f64> = ks
                        .iter()
                        .map(|&k| eval(&BoundInputs { rho, delta, k, ..base() }).unwrap().eps_ceiling.unwrap())
                        .collect();
                    assert!(eps.windows(2).all(|w| w[1] < w[0]));
                }
            }
        }
    }
}
