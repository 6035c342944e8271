use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ColumnKind, DataSchema, Dataset, FeatureColumn, TaskKind, SEGMENT_COLUMN};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng, Rng};

const DIM: usize = 4;

/// Regression fixture with a segment-specific linear signal, a shared
/// nonlinear interaction and a covariate shift between train and test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_segments: usize,
    /// Interaction coefficient per segment; a single value applies to all.
    pub gamma: Vec<f64>,
    /// Standard deviation of the additive label noise.
    pub noise_sd: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_segments: 20,
            gamma: vec![1.0],
            noise_sd: 0.3,
            n_train: 10_000,
            n_test: 2_000,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_segments == 0 {
            return Err(Error::invalid("n_segments must be at least 1"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::invalid("noise_sd must be a finite value >= 0"));
        }
        if self.gamma.len() != 1 && self.gamma.len() != self.n_segments {
            return Err(Error::invalid(format!(
                "gamma must have 1 or {} entries, got {}",
                self.n_segments,
                self.gamma.len()
            )));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::invalid("n_train and n_test must be positive"));
        }
        Ok(())
    }

    fn gamma_of(&self, s: usize) -> f64 {
        if self.gamma.len() == 1 {
            self.gamma[0]
        } else {
            self.gamma[s]
        }
    }
}

/// Segment intercepts, evenly spaced over `[-2, 2]` (a single segment gets 0).
pub fn segment_intercepts(n_segments: usize) -> Vec<f64> {
    if n_segments == 1 {
        return vec![0.0];
    }
    (0..n_segments)
        .map(|s| -2.0 + 4.0 * s as f64 / (n_segments - 1) as f64)
        .collect()
}

/// Noise-free response: `a0 - a0 * sum(x) + gamma * x2 * (1 + sin(3 x1))`.
fn mean_response(a0: f64, gamma: f64, x: &[f64]) -> f64 {
    let linear: f64 = x.iter().map(|v| -a0 * v).sum();
    a0 + linear + gamma * x[1] * (1.0 + (3.0 * x[0]).sin())
}

/// Draws a training set with `x ~ N(0, I)` and a test set with
/// `x ~ N(1, 0.3² I)`. Rows are dealt to segments round-robin, so sizes are
/// equal up to one row and segment ids follow first-appearance order.
pub fn simulate_local_covshift(cfg: &SyntheticConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let width = cfg.n_segments.to_string().len();
    let schema = DataSchema {
        label_col: "y".into(),
        segment_col: SEGMENT_COLUMN.into(),
        group_col: None,
        task: TaskKind::Regression,
        columns: (1..=DIM)
            .map(|j| FeatureColumn {
                name: format!("x{j}"),
                kind: ColumnKind::Numeric,
            })
            .collect(),
        segment_names: (1..=cfg.n_segments)
            .map(|s| format!("s{s:0width$}"))
            .collect(),
        class_names: None,
    };
    let a0 = segment_intercepts(cfg.n_segments);
    let train = draw(cfg, &a0, cfg.n_train, 0.0, 1.0, derive_seed(cfg.seed, 0), &schema)?;
    let test = draw(cfg, &a0, cfg.n_test, 1.0, 0.3, derive_seed(cfg.seed, 1), &schema)?;
    Ok((train, test))
}

fn draw(
    cfg: &SyntheticConfig,
    a0: &[f64],
    n: usize,
    mean: f64,
    sd: f64,
    seed: u64,
    schema: &DataSchema,
) -> Result<Dataset> {
    let mut r: Rng = rng(seed);
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::invalid(e.to_string()))?;
    let mut x = Array2::<f64>::zeros((n, DIM));
    let mut y = Array1::<f64>::zeros(n);
    let mut segments = Vec::with_capacity(n);
    for i in 0..n {
        let s = i % cfg.n_segments;
        for j in 0..DIM {
            let z: f64 = StandardNormal.sample(&mut r);
            x[[i, j]] = mean + sd * z;
        }
        let row: Vec<f64> = x.row(i).to_vec();
        y[i] = mean_response(a0[s], cfg.gamma_of(s), &row) + noise.sample(&mut r);
        segments.push(s);
    }
    Dataset::new(x, y, segments, None, schema.clone())
}
