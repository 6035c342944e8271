//! Importance weights for local covariate shift (discriminative, kernel mean
//! matching) and local label shift (black-box shift estimation).
//!
//! Sample weights are clipped to `[0, eta]` and then normalized to mean 1;
//! the normalization factor is kept so the effective ceiling `eta · scale`
//! can be reported.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{fit_linear, LossKind};
use crate::segmentation::{KernelSpec, ResolvedKernel};

pub const DEFAULT_ETA: f64 = 10.0;
pub const DEFAULT_BBSE_RIDGE: f64 = 1e-8;
/// Bound on the classifier probability before forming odds.
pub const PROBA_CLAMP: f64 = 1e-3;

const KMM_POWER_ITERS: usize = 50;
const KMM_MAX_ITER: usize = 500;
const KMM_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMethod {
    Discriminative,
    Kmm,
    Bbse,
    None,
}

impl WeightMethod {
    pub const ALL: [WeightMethod; 4] = [
        WeightMethod::Discriminative,
        WeightMethod::Kmm,
        WeightMethod::Bbse,
        WeightMethod::None,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            WeightMethod::Discriminative => "discriminative",
            WeightMethod::Kmm => "kmm",
            WeightMethod::Bbse => "bbse",
            WeightMethod::None => "none",
        }
    }
}

impl fmt::Display for WeightMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        WeightMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown weight method '{s}' (expected discriminative, kmm, bbse or none)"
                ))
            })
    }
}

/// Per-row importance weights for one segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub values: Vec<f64>,
    pub method: WeightMethod,
    pub eta: f64,
    /// Factor applied after clipping to reach mean 1.
    pub scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl WeightVector {
    pub fn uniform(n: usize, eta: f64) -> Self {
        WeightVector {
            values: vec![1.0; n],
            method: WeightMethod::None,
            eta,
            scale: 1.0,
        }
    }

    /// Clips raw weights to `[0, eta]` and rescales them to mean 1. Falls
    /// back to uniform weights when everything clips to zero.
    pub fn from_raw(raw: &[f64], eta: f64, method: WeightMethod) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::invalid(format!("eta must be positive, got {eta}")));
        }
        if raw.is_empty() {
            return Err(Error::Empty("no weights".into()));
        }
        if raw.iter().any(|w| w.is_nan()) {
            return Err(Error::Numerical("NaN importance weight".into()));
        }
        let clipped: Vec<f64> = raw.iter().map(|w| w.clamp(0.0, eta)).collect();
        let mean = clipped.iter().sum::<f64>() / clipped.len() as f64;
        if !(mean > 0.0) {
            log::warn!("all {method} weights are zero; using uniform weights");
            return Ok(WeightVector {
                method,
                ..WeightVector::uniform(raw.len(), eta)
            });
        }
        let scale = 1.0 / mean;
        Ok(WeightVector {
            values: clipped.iter().map(|w| w * scale).collect(),
            method,
            eta,
            scale,
        })
    }

    /// Weights of the given rows, renormalized to mean 1.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let raw: Vec<f64> = idx.iter().map(|&i| self.values[i]).collect();
        // Values are already within the ceiling, so only the mean changes.
        let mut w = WeightVector::from_raw(&raw, f64::INFINITY, self.method)?;
        w.eta = self.eta;
        w.scale *= self.scale;
        Ok(w)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn summary(&self) -> WeightSummary {
        let n = self.values.len().max(1) as f64;
        WeightSummary {
            min: self.values.iter().copied().fold(f64::INFINITY, f64::min),
            mean: self.values.iter().sum::<f64>() / n,
            max: self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// One weight per class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeightVector {
    pub values: Vec<f64>,
}

fn check_pair(train_x: &ArrayView2<f64>, test_x: &ArrayView2<f64>) -> Result<()> {
    if train_x.nrows() == 0 || test_x.nrows() == 0 {
        return Err(Error::Empty("weight estimation needs train and test rows".into()));
    }
    if train_x.ncols() != test_x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: train_x.ncols(),
            got: test_x.ncols(),
        });
    }
    Ok(())
}

/// Density-ratio weights from an L2 logistic classifier separating test
/// rows (label 1) from training rows (label 0):
/// `w(x) = p/(1−p) · n_tr/n_te` with `p` clamped away from 0 and 1.
pub fn fit_discriminative_weights(
    train_x: &ArrayView2<f64>,
    test_x: &ArrayView2<f64>,
    eta: f64,
) -> Result<WeightVector> {
    check_pair(train_x, test_x)?;
    let (n_tr, n_te) = (train_x.nrows(), test_x.nrows());
    let stacked = ndarray::concatenate(ndarray::Axis(0), &[train_x.view(), test_x.view()])
        .expect("equal widths");
    let mut y = vec![0.0; n_tr];
    y.resize(n_tr + n_te, 1.0);
    let clf = fit_linear(&stacked.view(), &y, LossKind::Logistic, 1.0 / n_tr as f64, None)?;
    let margins = clf.predict_margin(train_x)?;
    let prior = n_tr as f64 / n_te as f64;
    let raw: Vec<f64> = margins
        .column(0)
        .iter()
        .map(|&m| {
            let p = crate::learners::sigmoid(m).clamp(PROBA_CLAMP, 1.0 - PROBA_CLAMP);
            p / (1.0 - p) * prior
        })
        .collect();
    WeightVector::from_raw(&raw, eta, WeightMethod::Discriminative)
}

/// Result of the kernel mean matching quadratic program.
#[derive(Clone, Debug)]
pub struct KmmSolution {
    pub weights: Vec<f64>,
    /// Objective value at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
}

fn kmm_objective(g: &DMatrix<f64>, kappa: &DVector<f64>, w: &DVector<f64>) -> f64 {
    let n2 = (w.len() * w.len()) as f64;
    (w.dot(&(g * w)) - 2.0 * kappa.dot(w)) / n2
}

/// Euclidean projection onto `{0 ≤ w ≤ eta, lo ≤ Σw ≤ hi}`: the box
/// projection of `v − τ` for the shift `τ` (found by bisection) that puts
/// the sum on the violated bound.
pub fn project_box_sum(v: &DVector<f64>, eta: f64, lo: f64, hi: f64) -> DVector<f64> {
    let clamp = |tau: f64| v.map(|x| (x - tau).clamp(0.0, eta));
    let w = clamp(0.0);
    let s = w.sum();
    let target = if s > hi {
        hi
    } else if s < lo {
        lo
    } else {
        return w;
    };
    // Σ clamp(v − τ) is nonincreasing in τ
    let (mut a, mut b) = (v.min() - eta, v.max());
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if clamp(mid).sum() > target {
            a = mid;
        } else {
            b = mid;
        }
        if b - a <= f64::EPSILON * (a.abs() + b.abs()).max(1.0) {
            break;
        }
    }
    clamp(0.5 * (a + b))
}

fn largest_eigenvalue(g: &DMatrix<f64>) -> f64 {
    let n = g.nrows();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..KMM_POWER_ITERS {
        let gv = g * &v;
        let norm = gv.norm();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = v.dot(&gv);
        v = gv / norm;
    }
    lambda
}

/// Minimizes `(1/n²) wᵀGw − (2/n²) κᵀw` over `0 ≤ w ≤ eta`,
/// `|Σw − n| ≤ n·epsilon` by projected gradient descent from `w = 1`.
pub fn solve_kmm_qp(g: &DMatrix<f64>, kappa: &DVector<f64>, eta: f64, epsilon: f64) -> Result<KmmSolution> {
    let n = g.nrows();
    if g.ncols() != n || kappa.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: kappa.len(),
        });
    }
    if g.iter().chain(kappa.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite kernel entries".into()));
    }
    if !(epsilon >= 0.0) || !(eta > 0.0) {
        return Err(Error::invalid("KMM needs eta > 0 and epsilon >= 0"));
    }
    let nf = n as f64;
    let (lo, hi) = ((nf * (1.0 - epsilon)).max(0.0), nf * (1.0 + epsilon));
    if lo > nf * eta {
        return Err(Error::invalid(format!(
            "KMM constraints infeasible: eta {eta} below 1 − epsilon"
        )));
    }
    let mut lipschitz = 2.0 * largest_eigenvalue(g) / (nf * nf);
    if lipschitz <= 0.0 {
        lipschitz = 1.0;
    }
    let mut w = project_box_sum(&DVector::from_element(n, 1.0), eta, lo, hi);
    let mut obj = kmm_objective(g, kappa, &w);
    let mut trace = vec![obj];
    for _ in 0..KMM_MAX_ITER {
        let grad = (g * &w - kappa) * (2.0 / (nf * nf));
        // The power estimate approaches λ_max from below; grow L on overshoot.
        let (next, next_obj) = loop {
            let cand = project_box_sum(&(&w - &grad / lipschitz), eta, lo, hi);
            let cand_obj = kmm_objective(g, kappa, &cand);
            if cand_obj <= obj + 1e-15 * obj.abs().max(1.0) || lipschitz > 1e300 {
                break (cand, cand_obj);
            }
            lipschitz *= 2.0;
        };
        let decrease = obj - next_obj;
        if next_obj <= obj {
            w = next;
            obj = next_obj;
            trace.push(obj);
        }
        if decrease < KMM_TOL {
            break;
        }
    }
    Ok(KmmSolution {
        weights: w.iter().copied().collect(),
        objective_trace: trace,
    })
}

fn gram(k: &ResolvedKernel, a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = (0..a.nrows())
        .into_par_iter()
        .map(|i| b.outer_iter().map(|bj| k.eval(a.row(i), bj)).collect())
        .collect();
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| rows[i][j])
}

/// Kernel mean matching weights. `epsilon` defaults to `eta/√n_tr`; the
/// bandwidth (if median) comes from the pooled rows.
pub fn fit_kmm(
    train_x: &ArrayView2<f64>,
    test_x: &ArrayView2<f64>,
    kernel: &KernelSpec,
    eta: f64,
    epsilon: Option<f64>,
) -> Result<WeightVector> {
    check_pair(train_x, test_x)?;
    let (n_tr, n_te) = (train_x.nrows(), test_x.nrows());
    if n_tr < 2 {
        return Err(Error::invalid("KMM needs at least 2 training rows"));
    }
    let pooled = ndarray::concatenate(ndarray::Axis(0), &[train_x.view(), test_x.view()])
        .expect("equal widths");
    let k = kernel.resolve(&pooled.view(), 0)?;
    let g = gram(&k, train_x, train_x);
    let cross = gram(&k, train_x, test_x);
    let kappa = cross.column_sum() * (n_tr as f64 / n_te as f64);
    let eps = epsilon.unwrap_or(eta / (n_tr as f64).sqrt());
    let sol = solve_kmm_qp(&g, &kappa, eta, eps)?;
    WeightVector::from_raw(&sol.weights, eta, WeightMethod::Kmm)
}

/// `C[i][j] = P̂(ŷ = i, y = j)`.
pub fn confusion_matrix(true_labels: &[usize], predicted: &[usize], k: usize) -> Result<Array2<f64>> {
    if true_labels.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            expected: true_labels.len(),
            got: predicted.len(),
        });
    }
    if true_labels.is_empty() {
        return Err(Error::Empty("no rows for the confusion matrix".into()));
    }
    let mut c = Array2::zeros((k, k));
    for (&y, &p) in true_labels.iter().zip(predicted) {
        if y >= k || p >= k {
            return Err(Error::invalid(format!("class index out of range 0..{k}")));
        }
        c[[p, y]] += 1.0;
    }
    c /= true_labels.len() as f64;
    Ok(c)
}

/// Solves `(C + ridge·tr(C)·I) w = μ` and clamps negative entries to zero.
pub fn solve_bbse(c: &Array2<f64>, mu: &[f64], ridge: f64) -> Result<ClassWeightVector> {
    let k = mu.len();
    if c.dim() != (k, k) {
        return Err(Error::DimensionMismatch {
            expected: k * k,
            got: c.len(),
        });
    }
    let trace: f64 = (0..k).map(|i| c[[i, i]]).sum();
    let a = DMatrix::from_fn(k, k, |i, j| c[[i, j]] + if i == j { ridge * trace } else { 0.0 });
    let sol = a
        .lu()
        .solve(&DVector::from_column_slice(mu))
        .ok_or_else(|| Error::Singular("confusion matrix is singular".into()))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("confusion matrix is singular".into()));
    }
    Ok(ClassWeightVector {
        values: sol.iter().map(|v| v.max(0.0)).collect(),
    })
}

/// Black-box shift estimation from held-out source predictions and target
/// predictions of the same classifier.
pub fn fit_bbse(
    source_true: &[usize],
    source_pred: &[usize],
    test_pred: &[usize],
    k: usize,
    ridge: f64,
) -> Result<ClassWeightVector> {
    let c = confusion_matrix(source_true, source_pred, k)?;
    for j in 0..k {
        if !source_true.contains(&j) {
            return Err(Error::MissingClass(j));
        }
    }
    if test_pred.is_empty() {
        return Err(Error::Empty("no target predictions".into()));
    }
    let mut mu = vec![0.0; k];
    for &p in test_pred {
        if p >= k {
            return Err(Error::invalid(format!("class index out of range 0..{k}")));
        }
        mu[p] += 1.0;
    }
    for m in mu.iter_mut() {
        *m /= test_pred.len() as f64;
    }
    solve_bbse(&c, &mu, ridge)
}

/// Per-row weights `w_i = cw[y_i]`, clipped and normalized.
pub fn expand_class_weights(cw: &ClassWeightVector, labels: &[usize], eta: f64) -> Result<WeightVector> {
    let raw = labels
        .iter()
        .map(|&y| {
            cw.values
                .get(y)
                .copied()
                .ok_or_else(|| Error::invalid(format!("label {y} has no class weight")))
        })
        .collect::<Result<Vec<f64>>>()?;
    WeightVector::from_raw(&raw, eta, WeightMethod::Bbse)
}
