use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::glm::{Design, GlmProblem};
use crate::learners::{fit_gbt, GbtConfig, GbtModel, LossKind};

pub const LAMBDA_MIN: f64 = 1e-8;
const BISECT_ITERS: usize = 60;
/// Accepted norm band `[1 − BALL_TOL, 1]` when shrinking onto the ball.
const BALL_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Options {
    /// Restrict `β` to the unit ball.
    pub ball: bool,
    pub intercept: bool,
    pub lambda_max: f64,
}

impl Default for Stage1Options {
    fn default() -> Self {
        Stage1Options {
            ball: true,
            intercept: true,
            lambda_max: 1e6,
        }
    }
}

/// Linear stacking of base-model margins: `margin_k = Σ_m β_m z_{m,k} + b_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Model {
    pub beta: Vec<f64>,
    /// Per-margin-column intercept; the first class is pinned at zero for
    /// softmax.
    pub intercept: Option<Vec<f64>>,
    pub lambda: f64,
    /// Set when even `lambda_max` left `β` outside the ball.
    pub outside_ball: bool,
}

impl Stage1Model {
    pub fn beta_norm(&self) -> f64 {
        self.beta.iter().map(|b| b * b).sum::<f64>().sqrt()
    }

    /// Stacked margin from per-model margins (each `n × width`).
    pub fn margin(&self, z: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
        if z.len() != self.beta.len() || z.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: self.beta.len(),
                got: z.len(),
            });
        }
        let mut out = z[0].to_owned();
        out.mapv_inplace(|v| self.beta[0] * v);
        for (b, zm) in self.beta.iter().zip(z).skip(1) {
            if zm.dim() != out.dim() {
                return Err(Error::DimensionMismatch {
                    expected: out.nrows(),
                    got: zm.nrows(),
                });
            }
            out.zip_mut_with(zm, |o, v| *o += b * v);
        }
        if let Some(c) = &self.intercept {
            for mut row in out.outer_iter_mut() {
                for (o, b) in row.iter_mut().zip(c) {
                    *o += b;
                }
            }
        }
        Ok(out)
    }
}

struct StackProblem {
    design: Design,
    n_models: usize,
    width: usize,
    intercept: bool,
}

impl StackProblem {
    fn new(z: &[ArrayView2<f64>], width: usize, intercept: bool) -> Self {
        let n = z[0].nrows();
        let n_models = z.len();
        let extra = match (intercept, width) {
            (false, _) => 0,
            (true, 1) => 1,
            (true, k) => k - 1,
        };
        let p = n_models + extra;
        let mut design = Design::zeros(n, width, p);
        for i in 0..n {
            for k in 0..width {
                let row = design.row_mut(i, k);
                for (m, zm) in z.iter().enumerate() {
                    row[m] = zm[[i, k]];
                }
                if intercept {
                    if width == 1 {
                        row[n_models] = 1.0;
                    } else if k > 0 {
                        row[n_models + k - 1] = 1.0;
                    }
                }
            }
        }
        StackProblem {
            design,
            n_models,
            width,
            intercept,
        }
    }

    fn solve(&self, y: &[f64], loss: LossKind, lambda: f64, start: Vec<f64>) -> Result<Vec<f64>> {
        let mut penalty = vec![0.0; self.design.p];
        for p in penalty.iter_mut().take(self.n_models) {
            *p = lambda;
        }
        let problem = GlmProblem {
            design: &self.design,
            y,
            loss,
            penalty: &penalty,
            weights: None,
            strict: false,
        };
        Ok(problem.solve(start)?.theta)
    }

    fn norm(&self, theta: &[f64]) -> f64 {
        theta[..self.n_models].iter().map(|b| b * b).sum::<f64>().sqrt()
    }

    fn model(&self, theta: &[f64], lambda: f64, outside_ball: bool) -> Stage1Model {
        let intercept = self.intercept.then(|| {
            if self.width == 1 {
                vec![theta[self.n_models]]
            } else {
                let mut c = vec![0.0];
                c.extend_from_slice(&theta[self.n_models..]);
                c
            }
        });
        Stage1Model {
            beta: theta[..self.n_models].to_vec(),
            intercept,
            lambda,
            outside_ball,
        }
    }
}

/// Stage 1: fits the loss-appropriate linear model on the base-model margins
/// `z` of one segment's tuning rows. With the ball restriction, a solution
/// of norm above 1 is shrunk by bisecting the ridge strength on a log scale
/// until the norm falls just inside the unit ball.
pub fn fit_stage1(z: &[ArrayView2<f64>], y: &[f64], loss: LossKind, opts: &Stage1Options) -> Result<Stage1Model> {
    if z.is_empty() {
        return Err(Error::invalid("stage 1 needs at least one base model"));
    }
    let n = y.len();
    let width = loss.width();
    for zm in z {
        if zm.dim() != (n, width) {
            return Err(Error::DimensionMismatch {
                expected: n * width,
                got: zm.len(),
            });
        }
    }
    if n < z.len() + 1 {
        return Err(Error::invalid(format!(
            "stage 1 needs at least {} tuning rows, got {n}",
            z.len() + 1
        )));
    }
    if !(opts.lambda_max > LAMBDA_MIN) {
        return Err(Error::invalid("lambda_max must exceed the minimum ridge strength"));
    }
    let problem = StackProblem::new(z, width, opts.intercept);
    let mut start = vec![0.0; problem.design.p];
    if opts.intercept && width == 1 {
        start[z.len()] = loss.initial_margin(y, None)[0];
    }
    let theta = problem.solve(y, loss, LAMBDA_MIN, start)?;
    if !opts.ball || problem.norm(&theta) <= 1.0 {
        return Ok(problem.model(&theta, LAMBDA_MIN, false));
    }
    let at_max = problem.solve(y, loss, opts.lambda_max, theta.clone())?;
    if problem.norm(&at_max) > 1.0 {
        log::warn!(
            "stage-1 coefficients stay outside the unit ball at lambda {}",
            opts.lambda_max
        );
        return Ok(problem.model(&at_max, opts.lambda_max, true));
    }
    let (mut lo, mut hi) = (LAMBDA_MIN.ln(), opts.lambda_max.ln());
    let mut inside = (at_max, opts.lambda_max);
    let mut warm = theta;
    for _ in 0..BISECT_ITERS {
        let mid = 0.5 * (lo + hi);
        let lambda = mid.exp();
        let cand = problem.solve(y, loss, lambda, warm.clone())?;
        let norm = problem.norm(&cand);
        if norm > 1.0 {
            lo = mid;
            warm = cand;
        } else {
            hi = mid;
            let done = norm >= 1.0 - BALL_TOL;
            inside = (cand, lambda);
            if done {
                break;
            }
        }
    }
    Ok(problem.model(&inside.0, inside.1, false))
}

/// Stage 2: boosts a correction on the weighted tuning rows starting from
/// the stage-1 margin `delta`.
pub fn fit_stage2(
    x: &ArrayView2<f64>,
    y: &[f64],
    loss: LossKind,
    delta: &ArrayView2<f64>,
    weights: &[f64],
    cfg: &GbtConfig,
) -> Result<GbtModel> {
    if weights.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: weights.len(),
        });
    }
    fit_gbt(x, y, loss, cfg, Some(weights), Some(delta))
}
