use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::glm::{Design, GlmProblem};
use super::LossKind;
use crate::error::{Error, Result};

/// Linear model on raw margins: `margin_k = x · coef[:, k] + intercept[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// `d × width` coefficients.
    pub coefficients: Array2<f64>,
    pub intercept: Vec<f64>,
    pub loss: LossKind,
    pub l2: f64,
}

impl LinearModel {
    pub fn n_features(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn predict_margin(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                got: x.ncols(),
            });
        }
        let mut m = x.dot(&self.coefficients);
        for mut row in m.outer_iter_mut() {
            for (v, b) in row.iter_mut().zip(&self.intercept) {
                *v += b;
            }
        }
        Ok(m)
    }
}

/// Minimizes `Σ w_i ℓ(y_i, margin_i) + (l2/2)‖coef‖²` with an unpenalized
/// intercept, by Newton iterations (one exact step for the squared loss).
pub fn fit_linear(
    x: &ArrayView2<f64>,
    y: &[f64],
    loss: LossKind,
    l2: f64,
    sample_weight: Option<&[f64]>,
) -> Result<LinearModel> {
    let (n, d) = x.dim();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if n == 0 {
        return Err(Error::Empty("no rows to fit".into()));
    }
    if !(l2 >= 0.0 && l2.is_finite()) {
        return Err(Error::invalid(format!("l2 must be finite and >= 0, got {l2}")));
    }
    if let Some(w) = sample_weight {
        if w.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: w.len(),
            });
        }
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("sample weights must be finite and nonnegative"));
        }
    }
    let width = loss.width();
    let block = d + 1;
    let p = block * width;
    let mut design = Design::zeros(n, width, p);
    for i in 0..n {
        for k in 0..width {
            let row = design.row_mut(i, k);
            let base = k * block;
            for j in 0..d {
                row[base + j] = x[[i, j]];
            }
            row[base + d] = 1.0;
        }
    }
    let mut penalty = vec![l2; p];
    for k in 0..width {
        penalty[k * block + d] = 0.0;
    }
    let problem = GlmProblem {
        design: &design,
        y,
        loss,
        penalty: &penalty,
        weights: sample_weight,
        strict: loss == LossKind::Squared && l2 == 0.0,
    };
    let mut start = vec![0.0; p];
    let init = loss.initial_margin(y, sample_weight);
    for k in 0..width {
        start[k * block + d] = init[k];
    }
    let fit = problem.solve(start)?;
    let mut coefficients = Array2::zeros((d, width));
    let mut intercept = vec![0.0; width];
    for k in 0..width {
        for j in 0..d {
            coefficients[[j, k]] = fit.theta[k * block + j];
        }
        intercept[k] = fit.theta[k * block + d];
    }
    Ok(LinearModel {
        coefficients,
        intercept,
        loss,
        l2,
    })
}
