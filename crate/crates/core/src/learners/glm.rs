//! Newton solver for penalized generalized linear models whose margins are
//! linear in the parameters: `margin[i][k] = Σ_j D[i][k][j] θ_j`.

use nalgebra::{DMatrix, DVector};

use super::LossKind;
use crate::error::{Error, Result};

/// Dense design tensor of shape `n × width × p`.
pub(crate) struct Design {
    pub n: usize,
    pub width: usize,
    pub p: usize,
    pub data: Vec<f64>,
}

impl Design {
    pub fn zeros(n: usize, width: usize, p: usize) -> Self {
        Design {
            n,
            width,
            p,
            data: vec![0.0; n * width * p],
        }
    }

    #[inline]
    pub fn row(&self, i: usize, k: usize) -> &[f64] {
        let start = (i * self.width + k) * self.p;
        &self.data[start..start + self.p]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize, k: usize) -> &mut [f64] {
        let start = (i * self.width + k) * self.p;
        &mut self.data[start..start + self.p]
    }

    fn margins(&self, theta: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            for k in 0..self.width {
                out[i * self.width + k] = dot(self.row(i, k), theta);
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) struct GlmProblem<'a> {
    pub design: &'a Design,
    pub y: &'a [f64],
    pub loss: LossKind,
    /// Per-parameter ridge strength; the objective adds `½ Σ pen_j θ_j²`.
    pub penalty: &'a [f64],
    pub weights: Option<&'a [f64]>,
    /// Report a singular Hessian as an error instead of damping it.
    pub strict: bool,
}

pub(crate) struct GlmFit {
    pub theta: Vec<f64>,
}

pub(crate) const MAX_ITER: usize = 100;
pub(crate) const GRAD_TOL: f64 = 1e-8;

impl GlmProblem<'_> {
    fn weight(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i])
    }

    pub fn objective(&self, theta: &[f64]) -> f64 {
        let d = self.design;
        let mut m = vec![0.0; d.n * d.width];
        d.margins(theta, &mut m);
        let mut total = 0.0;
        for i in 0..d.n {
            let w = self.weight(i);
            if w != 0.0 {
                total += w * self.loss.value(self.y[i], &m[i * d.width..(i + 1) * d.width]);
            }
        }
        total
            + 0.5
                * self
                    .penalty
                    .iter()
                    .zip(theta)
                    .map(|(p, t)| p * t * t)
                    .sum::<f64>()
    }

    /// Gradient and full Hessian of the objective at `theta`.
    fn derivatives(&self, theta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.design;
        let p = d.p;
        let width = d.width;
        let mut grad = DVector::<f64>::zeros(p);
        let mut hess = DMatrix::<f64>::zeros(p, p);
        let mut margin = vec![0.0; width];
        let mut g = vec![0.0; width];
        let mut h = vec![0.0; width];
        let mut prob = vec![0.0; width];
        let mut a = vec![0.0; p];
        for i in 0..d.n {
            let w = self.weight(i);
            if w == 0.0 {
                continue;
            }
            for (k, m) in margin.iter_mut().enumerate() {
                *m = dot(d.row(i, k), theta);
            }
            self.loss.grad_hess(self.y[i], &margin, &mut g, &mut h);
            for k in 0..width {
                let row = d.row(i, k);
                for j in 0..p {
                    grad[j] += w * g[k] * row[j];
                }
            }
            match self.loss {
                LossKind::Softmax(_) => {
                    // Σ_k p_k D_k D_kᵀ − a aᵀ with a = Σ_k p_k D_k
                    super::loss::softmax_into(&margin, &mut prob);
                    a.iter_mut().for_each(|v| *v = 0.0);
                    for k in 0..width {
                        let row = d.row(i, k);
                        for j in 0..p {
                            a[j] += prob[k] * row[j];
                        }
                        for j in 0..p {
                            let s = w * prob[k] * row[j];
                            if s != 0.0 {
                                for l in 0..=j {
                                    hess[(j, l)] += s * row[l];
                                }
                            }
                        }
                    }
                    for j in 0..p {
                        for l in 0..=j {
                            hess[(j, l)] -= w * a[j] * a[l];
                        }
                    }
                }
                _ => {
                    let row = d.row(i, 0);
                    for j in 0..p {
                        let s = w * h[0] * row[j];
                        if s != 0.0 {
                            for l in 0..=j {
                                hess[(j, l)] += s * row[l];
                            }
                        }
                    }
                }
            }
        }
        for j in 0..p {
            grad[j] += self.penalty[j] * theta[j];
            hess[(j, j)] += self.penalty[j];
            for l in 0..j {
                hess[(l, j)] = hess[(j, l)];
            }
        }
        (grad, hess)
    }

    /// Minimizes the objective from `start` (for the squared loss the first
    /// Newton step is exact). A Hessian that does not factor is damped unless
    /// the problem is strict.
    pub fn solve(&self, start: Vec<f64>) -> Result<GlmFit> {
        let mut theta = start;
        let mut obj = self.objective(&theta);
        let mut grad_norm = f64::INFINITY;
        for _ in 0..MAX_ITER {
            let (grad, hess) = self.derivatives(&theta);
            grad_norm = grad.norm();
            if !grad_norm.is_finite() {
                return Err(Error::Numerical("non-finite gradient in Newton solve".into()));
            }
            if grad_norm <= GRAD_TOL {
                return Ok(GlmFit { theta });
            }
            let step = self.newton_step(&grad, hess)?;
            // backtracking line search on the objective
            let slope = -grad.dot(&step);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
                let c = self.objective(&cand);
                if c.is_finite() && c <= obj + 1e-4 * t * slope.min(0.0) {
                    theta = cand;
                    obj = c;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // no further decrease is representable
                break;
            }
        }
        if grad_norm > GRAD_TOL {
            log::debug!("Newton solve stopped with gradient norm {grad_norm:.3e}");
        }
        Ok(GlmFit { theta })
    }

    fn newton_step(&self, grad: &DVector<f64>, hess: DMatrix<f64>) -> Result<DVector<f64>> {
        let p = hess.nrows();
        let scale = (0..p).map(|j| hess[(j, j)].abs()).fold(0.0, f64::max).max(1e-300);
        if let Some(step) = factor_solve(&hess, grad, scale) {
            return Ok(step);
        }
        if self.strict {
            return Err(Error::Singular(
                "normal equations are singular; use a positive l2 penalty".into(),
            ));
        }
        let mut damp = 1e-10 * scale;
        for _ in 0..30 {
            let mut h = hess.clone();
            for j in 0..p {
                h[(j, j)] += damp;
            }
            if let Some(step) = factor_solve(&h, grad, scale) {
                return Ok(step);
            }
            damp *= 10.0;
        }
        Err(Error::Singular("Hessian could not be factored".into()))
    }
}

/// Cholesky solve, refusing near-singular factorizations.
fn factor_solve(h: &DMatrix<f64>, rhs: &DVector<f64>, scale: f64) -> Option<DVector<f64>> {
    let chol = nalgebra::linalg::Cholesky::new(h.clone())?;
    let l = chol.l_dirty();
    let min_pivot = (0..h.nrows()).map(|j| l[(j, j)] * l[(j, j)]).fold(f64::INFINITY, f64::min);
    if min_pivot < 1e-12 * scale {
        return None;
    }
    Some(chol.solve(rhs))
}
