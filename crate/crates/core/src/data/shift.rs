use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Dataset, TaskKind};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng, shuffled};

/// Procedures that turn one labeled dataset into a shifted train/test pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ShiftConstructionConfig {
    /// Rows with `feature > threshold` go to test with probability `p_above`,
    /// others with `p_below`.
    Covariate {
        feature: usize,
        threshold: f64,
        p_above: f64,
        p_below: f64,
    },
    /// Random split, then positives in the test part are kept with
    /// probability `positive_keep`.
    LabelBinary { test_frac: f64, positive_keep: f64 },
    /// Random split, then the test part is resampled with replacement so that
    /// class frequencies follow `target_rates`.
    LabelMulticlass {
        test_frac: f64,
        target_rates: Vec<f64>,
    },
}

impl ShiftConstructionConfig {
    pub fn covariate(feature: usize, threshold: f64) -> Self {
        ShiftConstructionConfig::Covariate {
            feature,
            threshold,
            p_above: 0.8,
            p_below: 0.2,
        }
    }

    pub fn label_binary() -> Self {
        ShiftConstructionConfig::LabelBinary {
            test_frac: 0.2,
            positive_keep: 0.5,
        }
    }

    pub fn label_multiclass(target_rates: Vec<f64>) -> Self {
        ShiftConstructionConfig::LabelMulticlass {
            test_frac: 0.2,
            target_rates,
        }
    }

    fn validate(&self, task: TaskKind, d: usize) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must lie in [0, 1], got {p}")))
            }
        };
        match self {
            ShiftConstructionConfig::Covariate {
                feature,
                p_above,
                p_below,
                ..
            } => {
                if *feature >= d {
                    return Err(Error::invalid(format!(
                        "feature {feature} out of range for {d} columns"
                    )));
                }
                prob("p_above", *p_above)?;
                prob("p_below", *p_below)
            }
            ShiftConstructionConfig::LabelBinary {
                test_frac,
                positive_keep,
            } => {
                if task != TaskKind::Binary {
                    return Err(Error::invalid("label_binary shift needs a binary task"));
                }
                prob("test_frac", *test_frac)?;
                prob("positive_keep", *positive_keep)
            }
            ShiftConstructionConfig::LabelMulticlass {
                test_frac,
                target_rates,
            } => {
                let k = match task {
                    TaskKind::Multiclass { classes } => classes,
                    _ => {
                        return Err(Error::invalid(
                            "label_multiclass shift needs a multiclass task",
                        ))
                    }
                };
                prob("test_frac", *test_frac)?;
                if target_rates.len() != k {
                    return Err(Error::DimensionMismatch {
                        expected: k,
                        got: target_rates.len(),
                    });
                }
                for &r in target_rates {
                    prob("target rate", r)?;
                }
                let total: f64 = target_rates.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::invalid(format!(
                        "target rates sum to {total}, expected 1"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Splits `data` into a shifted `(train, test)` pair.
pub fn construct_shift(
    data: &Dataset,
    cfg: &ShiftConstructionConfig,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    cfg.validate(data.task(), data.n_features())?;
    let n = data.n_rows();
    let mut r = rng(seed);
    let (train, test) = match cfg {
        ShiftConstructionConfig::Covariate {
            feature,
            threshold,
            p_above,
            p_below,
        } => {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for i in 0..n {
                let p = if data.features()[[i, *feature]] > *threshold {
                    *p_above
                } else {
                    *p_below
                };
                if r.random::<f64>() < p {
                    test.push(i);
                } else {
                    train.push(i);
                }
            }
            (train, test)
        }
        ShiftConstructionConfig::LabelBinary {
            test_frac,
            positive_keep,
        } => {
            let (train, test) = random_split(n, *test_frac, &mut r);
            let test = test
                .into_iter()
                .filter(|&i| data.labels()[i] < 0.5 || r.random::<f64>() < *positive_keep)
                .collect();
            (train, test)
        }
        ShiftConstructionConfig::LabelMulticlass {
            test_frac,
            target_rates,
        } => {
            let (train, test) = random_split(n, *test_frac, &mut r);
            let mut by_class = vec![Vec::new(); target_rates.len()];
            for &i in &test {
                by_class[data.labels()[i] as usize].push(i);
            }
            if let Some(c) = by_class.iter().position(Vec::is_empty) {
                return Err(Error::Empty(format!(
                    "class {c} has no rows in the test split"
                )));
            }
            let counts = apportion(target_rates, test.len());
            let mut resampled = Vec::with_capacity(test.len());
            let mut rr = rng(derive_seed(seed, 1));
            for (rows, &m) in by_class.iter().zip(&counts) {
                for _ in 0..m {
                    resampled.push(rows[rr.random_range(0..rows.len())]);
                }
            }
            (train, resampled)
        }
    };
    if train.is_empty() || test.is_empty() {
        return Err(Error::Empty("shift construction left one side empty".into()));
    }
    Ok((data.select(&train), data.select(&test)))
}

fn random_split(n: usize, test_frac: f64, r: &mut crate::rng::Rng) -> (Vec<usize>, Vec<usize>) {
    let perm = shuffled((0..n).collect(), r);
    let n_test = (test_frac * n as f64).round() as usize;
    let mut test = perm[..n_test].to_vec();
    let mut train = perm[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

/// Integer counts summing to `total`, proportional to `rates` (largest remainder).
fn apportion(rates: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = rates.iter().map(|r| r * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..rates.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut left = total.saturating_sub(counts.iter().sum());
    for &c in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[c] += 1;
        left -= 1;
    }
    counts
}
