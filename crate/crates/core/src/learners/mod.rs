//! Base learners: penalized linear models and boosted trees.

mod gbt;
pub(crate) mod glm;
mod linear;
mod loss;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use gbt::{fit_gbt, GbtConfig, GbtModel, Tree, TreeNode};
pub use linear::{fit_linear, LinearModel};
pub use loss::{margin_to_proba, LossKind};

pub(crate) use loss::sigmoid;

/// Either kind of fitted base learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Learner {
    Linear(LinearModel),
    Gbt(GbtModel),
}

impl Learner {
    pub fn loss(&self) -> LossKind {
        match self {
            Learner::Linear(m) => m.loss,
            Learner::Gbt(m) => m.loss,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Learner::Linear(m) => m.n_features(),
            Learner::Gbt(m) => m.n_features,
        }
    }

    /// Raw margins (`n × width`).
    pub fn predict_margin(&self, x: &ArrayView2<f64>) -> crate::Result<Array2<f64>> {
        match self {
            Learner::Linear(m) => m.predict_margin(x),
            Learner::Gbt(m) => m.predict_margin(x, None),
        }
    }
}

#[cfg(test)]
mod gradient_check {
    use super::LossKind;
    use rand::Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    /// Analytic gradients against central differences of the loss, and
    /// diagonal hessians against central differences of the gradient.
    pub(crate) fn max_relative_error(loss: LossKind, points: usize, seed: u64) -> f64 {
        let mut r = crate::rng::rng(seed);
        let width = loss.width();
        let step = 1e-5;
        let mut worst = 0.0f64;
        for _ in 0..points {
            let y = match loss {
                LossKind::Squared => r.random_range(-3.0..3.0),
                LossKind::Logistic => r.random_range(0..2) as f64,
                LossKind::Softmax(k) => r.random_range(0..k) as f64,
            };
            let m: Vec<f64> = (0..width).map(|_| r.random_range(-3.0..3.0)).collect();
            let mut g = vec![0.0; width];
            let mut h = vec![0.0; width];
            loss.grad_hess(y, &m, &mut g, &mut h);
            for k in 0..width {
                let mut up = m.clone();
                let mut dn = m.clone();
                up[k] += step;
                dn[k] -= step;
                let fd_g = (loss.value(y, &up) - loss.value(y, &dn)) / (2.0 * step);
                let mut gu = vec![0.0; width];
                let mut gd = vec![0.0; width];
                let mut scratch = vec![0.0; width];
                loss.grad_hess(y, &up, &mut gu, &mut scratch);
                loss.grad_hess(y, &dn, &mut gd, &mut scratch);
                let fd_h = (gu[k] - gd[k]) / (2.0 * step);
                worst = worst.max(rel(g[k], fd_g)).max(rel(h[k], fd_h));
            }
        }
        worst
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        for loss in [LossKind::Squared, LossKind::Logistic, LossKind::Softmax(4)] {
            let err = max_relative_error(loss, 20, 17);
            assert!(err <= 1e-5, "{loss:?}: {err}");
        }
    }
}
