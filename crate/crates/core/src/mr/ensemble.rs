use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::canonical_rows;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learners::{fit_gbt, GbtConfig, Learner, LossKind};
use crate::rng::derive_seed;
use crate::segmentation::ClusterAssignment;

/// Base models `h_1..h_M` (one per cluster) followed by `h_{M+1}` trained on
/// every segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseEnsemble {
    pub models: Vec<Learner>,
    pub clusters: ClusterAssignment,
    pub loss: LossKind,
}

impl BaseEnsemble {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// The all-segments model `h_{M+1}`.
    pub fn global(&self) -> &Learner {
        self.models.last().expect("ensemble has models")
    }

    /// Margins of every model on `x`, one `n × width` matrix per model.
    pub fn margins(&self, x: &ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        self.models.par_iter().map(|m| m.predict_margin(x)).collect()
    }
}

/// Fits `h_m` on the rows of cluster `m` for every cluster and `h_{M+1}` on
/// all rows. Model `m` uses the learner seed `derive_seed(cfg.seed, m)`.
pub fn fit_base_ensemble(
    train_base: &Dataset,
    clusters: &ClusterAssignment,
    cfg: &GbtConfig,
) -> Result<BaseEnsemble> {
    let loss = train_base.task().loss();
    let seg_rows = train_base.segment_rows();
    let mut groups: Vec<Vec<usize>> = Vec::with_capacity(clusters.m() + 1);
    for (m, cluster) in clusters.clusters.iter().enumerate() {
        let rows: Vec<usize> = cluster
            .iter()
            .flat_map(|&s| seg_rows.get(s).into_iter().flatten().copied())
            .collect();
        if rows.is_empty() {
            return Err(Error::Empty(format!("cluster {m} has no base rows")));
        }
        groups.push(rows);
    }
    groups.push((0..train_base.n_rows()).collect());

    let models = groups
        .par_iter()
        .enumerate()
        .map(|(m, rows)| {
            let rows = canonical_rows(train_base, rows);
            let sub = train_base.select(&rows);
            let y = sub.labels().to_vec();
            let cfg = GbtConfig {
                seed: derive_seed(cfg.seed, m as u64),
                ..cfg.clone()
            };
            fit_gbt(&sub.features().view(), &y, loss, &cfg, None, None).map(Learner::Gbt)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BaseEnsemble {
        models,
        clusters: clusters.clone(),
        loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TaskKind;
    use crate::rng::{rng, shuffled};
    use ndarray::Array1;
    use rand::Rng;

    /// Segments 0,1 follow y = 3·x0, segments 2,3 follow y = −3·x1.
    fn two_signals(n_per: usize, seed: u64) -> Dataset {
        let mut r = rng(seed);
        let n = 4 * n_per;
        let x = Array2::from_shape_fn((n, 2), |_| r.random_range(-1.0..1.0));
        let segments: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let y = Array1::from_shape_fn(n, |i| {
            if segments[i] < 2 {
                3.0 * x[[i, 0]]
            } else {
                -3.0 * x[[i, 1]]
            }
        });
        Dataset::from_parts(x, y, segments, TaskKind::Regression, vec!["x0".into(), "x1".into()]).unwrap()
    }

    fn mse(pred: &Array2<f64>, y: &Array1<f64>) -> f64 {
        pred.column(0).iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64
    }

    #[test]
    fn sizes() {
        let data = two_signals(30, 0);
        let one = ClusterAssignment::single(&[0, 1, 2, 3]);
        let e = fit_base_ensemble(&data, &one, &GbtConfig::cluster_default()).unwrap();
        assert_eq!(e.len(), 2);
        let empty = ClusterAssignment { clusters: vec![vec![0, 1, 2, 3], vec![7]] };
        assert!(fit_base_ensemble(&data, &empty, &GbtConfig::cluster_default()).is_err());
    }

    #[test]
    fn cluster_models_specialize() {
        let train = two_signals(200, 1);
        let held = two_signals(200, 2);
        let clusters = ClusterAssignment::new(vec![vec![0, 1], vec![2, 3]], &[0, 1, 2, 3]).unwrap();
        let e = fit_base_ensemble(&train, &clusters, &GbtConfig::cluster_default()).unwrap();
        let rows = held.segment_rows();
        for (m, own) in [(0usize, [0usize, 1]), (1, [2, 3])] {
            let idx: Vec<usize> = own.iter().flat_map(|&s| rows[s].clone()).collect();
            let part = held.select(&idx);
            let x = part.features().view();
            let mine = mse(&e.models[m].predict_margin(&x).unwrap(), part.labels());
            let other = mse(&e.models[1 - m].predict_margin(&x).unwrap(), part.labels());
            assert!(mine < other, "cluster {m}: {mine} vs {other}");
        }
    }

    #[test]
    fn row_order_does_not_matter() {
        let data = two_signals(50, 3);
        let perm = shuffled((0..data.n_rows()).collect(), &mut rng(9));
        let shuffled_data = data.select(&perm);
        let clusters = ClusterAssignment::new(vec![vec![0, 1], vec![2, 3]], &[0, 1, 2, 3]).unwrap();
        let cfg = GbtConfig::cluster_default();
        let a = fit_base_ensemble(&data, &clusters, &cfg).unwrap();
        let b = fit_base_ensemble(&shuffled_data, &clusters, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
