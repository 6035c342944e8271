use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-sample loss on raw margins.
///
/// - `Squared`: `½ (f − y)²`
/// - `Logistic`: `log(1 + e^f) − y f` with `y ∈ {0, 1}`
/// - `Softmax(K)`: `logsumexp(f) − f_y` with `y ∈ 0..K`
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Squared,
    Logistic,
    Softmax(usize),
}

pub(crate) fn sigmoid(f: f64) -> f64 {
    if f >= 0.0 {
        1.0 / (1.0 + (-f).exp())
    } else {
        let e = f.exp();
        e / (1.0 + e)
    }
}

fn softplus(f: f64) -> f64 {
    if f > 0.0 {
        f + (-f).exp().ln_1p()
    } else {
        f.exp().ln_1p()
    }
}

pub(crate) fn softmax_into(f: &[f64], out: &mut [f64]) {
    let m = f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(f) {
        *o = (v - m).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

impl LossKind {
    /// Number of margin columns.
    pub fn width(&self) -> usize {
        match *self {
            LossKind::Softmax(k) => k,
            _ => 1,
        }
    }

    pub fn value(&self, y: f64, margin: &[f64]) -> f64 {
        match *self {
            LossKind::Squared => 0.5 * (margin[0] - y).powi(2),
            LossKind::Logistic => softplus(margin[0]) - y * margin[0],
            LossKind::Softmax(_) => {
                let m = margin.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + margin.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                lse - margin[y as usize]
            }
        }
    }

    /// First and (diagonal) second derivatives with respect to each margin.
    pub fn grad_hess(&self, y: f64, margin: &[f64], g: &mut [f64], h: &mut [f64]) {
        match *self {
            LossKind::Squared => {
                g[0] = margin[0] - y;
                h[0] = 1.0;
            }
            LossKind::Logistic => {
                let p = sigmoid(margin[0]);
                g[0] = p - y;
                h[0] = p * (1.0 - p);
            }
            LossKind::Softmax(_) => {
                softmax_into(margin, g);
                for k in 0..margin.len() {
                    h[k] = g[k] * (1.0 - g[k]);
                }
                g[y as usize] -= 1.0;
            }
        }
    }

    /// Constant margin minimizing the weighted loss without features
    /// (zero for softmax).
    pub fn initial_margin(&self, y: &[f64], weights: Option<&[f64]>) -> Vec<f64> {
        let (mut sw, mut swy) = (0.0, 0.0);
        for (i, &v) in y.iter().enumerate() {
            let w = weights.map_or(1.0, |w| w[i]);
            sw += w;
            swy += w * v;
        }
        let mean = if sw > 0.0 { swy / sw } else { 0.0 };
        match *self {
            LossKind::Squared => vec![mean],
            LossKind::Logistic => {
                let p = mean.clamp(1e-6, 1.0 - 1e-6);
                vec![(p / (1.0 - p)).ln()]
            }
            LossKind::Softmax(k) => vec![0.0; k],
        }
    }

    /// Applies the inverse link to a row of margins.
    pub fn link_row(&self, margin: &[f64], out: &mut [f64]) {
        match *self {
            LossKind::Squared => out.copy_from_slice(margin),
            LossKind::Logistic => out[0] = sigmoid(margin[0]),
            LossKind::Softmax(_) => softmax_into(margin, out),
        }
    }
}

/// Sigmoid (logistic) or row-wise softmax of raw margins.
pub fn margin_to_proba(margins: &Array2<f64>, loss: LossKind) -> Result<Array2<f64>> {
    if loss == LossKind::Squared {
        return Err(Error::invalid("probabilities need a logistic or softmax loss"));
    }
    if margins.ncols() != loss.width() {
        return Err(Error::DimensionMismatch {
            expected: loss.width(),
            got: margins.ncols(),
        });
    }
    let mut out = Array2::zeros(margins.raw_dim());
    let mut buf = vec![0.0; loss.width()];
    for (i, row) in margins.outer_iter().enumerate() {
        let row = row.to_vec();
        loss.link_row(&row, &mut buf);
        for (k, v) in buf.iter().enumerate() {
            out[[i, k]] = *v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn link_values() {
        let p = margin_to_proba(&array![[0.0], [3f64.ln()]], LossKind::Logistic).unwrap();
        assert_eq!(p[[0, 0]], 0.5);
        assert!((p[[1, 0]] - 0.75).abs() < 1e-15);
        let p = margin_to_proba(&array![[0.0, 0.0, 0.0]], LossKind::Softmax(3)).unwrap();
        for k in 0..3 {
            assert!((p[[0, k]] - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(margin_to_proba(&array![[0.0]], LossKind::Squared).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut r = crate::rng::rng(1);
        for _ in 0..100 {
            let m: Vec<f64> = (0..5).map(|_| r.random_range(-30.0..30.0)).collect();
            let mut p = vec![0.0; 5];
            softmax_into(&m, &mut p);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stable_at_extreme_margins() {
        assert!(LossKind::Logistic.value(1.0, &[800.0]).abs() < 1e-12);
        assert!((LossKind::Logistic.value(0.0, &[800.0]) - 800.0).abs() < 1e-9);
        assert!(LossKind::Softmax(2).value(0.0, &[1000.0, 0.0]).abs() < 1e-12);
    }

    #[test]
    fn initial_margins() {
        assert_eq!(LossKind::Squared.initial_margin(&[1.0, 3.0], None), vec![2.0]);
        let m = LossKind::Logistic.initial_margin(&[1.0, 0.0, 0.0, 0.0], None);
        assert!((m[0] - (1.0f64 / 3.0).ln()).abs() < 1e-12);
        let m = LossKind::Squared.initial_margin(&[1.0, 3.0], Some(&[3.0, 1.0]));
        assert_eq!(m, vec![1.5]);
    }
}
