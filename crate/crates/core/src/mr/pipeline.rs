use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baseline::{check_test, estimate_segment_weights, fit_dr_with_weights, HeldOut, WeightInfo};
use super::stage::{fit_stage1, fit_stage2, Stage1Model, Stage1Options};
use super::{check_segments, fit_base_ensemble, streams, BaseEnsemble, ClusterPolicy, DrModel, MrConfig};
use crate::data::{split_base_tune, Dataset, SegmentedFeatures, TaskKind};
use crate::error::{Error, Result};
use crate::learners::{GbtModel, LossKind};
use crate::rng::derive_seed;
use crate::segmentation::{
    choose_num_clusters, cluster_segments, segment_distance_matrix, ClusterAssignment, KernelSpec,
    SegmentDistanceMatrix,
};
use crate::FORMAT_VERSION;

/// Stage-1 and stage-2 models of one segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentFit {
    pub stage1: Stage1Model,
    pub stage2: GbtModel,
    pub weights: WeightInfo,
    pub n_tune: usize,
}

/// A training segment; without a fit its rows go to the fallback model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentEntry {
    pub segment: usize,
    pub name: String,
    pub fit: Option<SegmentFit>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MrModel {
    pub format_version: u32,
    pub task: TaskKind,
    pub loss: LossKind,
    pub n_features: usize,
    pub config: MrConfig,
    pub n_base: usize,
    pub n_tune: usize,
    pub distance: Option<SegmentDistanceMatrix>,
    pub ensemble: BaseEnsemble,
    pub segments: Vec<SegmentEntry>,
    pub fallback: DrModel,
}

impl MrModel {
    fn segment_fit(&self, s: usize) -> Option<&SegmentFit> {
        self.segments.get(s).and_then(|e| e.fit.as_ref())
    }

    /// Stage-1 margins of rows routed to segment models; rows of unknown
    /// segments are left at zero.
    pub fn stage1_margin(&self, x: &ArrayView2<f64>, segments: &[usize]) -> Result<Array2<f64>> {
        self.route(x, segments, false)
    }

    pub fn predict_margin(&self, x: &ArrayView2<f64>, segments: &[usize]) -> Result<Array2<f64>> {
        self.route(x, segments, true)
    }

    fn route(&self, x: &ArrayView2<f64>, segments: &[usize], full: bool) -> Result<Array2<f64>> {
        check_segments(x, segments)?;
        if x.ncols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.ncols(),
            });
        }
        let width = self.loss.width();
        let mut out = Array2::zeros((x.nrows(), width));
        let mut by_segment: Vec<Vec<usize>> = vec![Vec::new(); self.segments.len()];
        let mut fallback_rows = Vec::new();
        for (i, &s) in segments.iter().enumerate() {
            match self.segment_fit(s) {
                Some(_) => by_segment[s].push(i),
                None => fallback_rows.push(i),
            }
        }
        let known: Vec<usize> = by_segment.iter().flatten().copied().collect();
        if !known.is_empty() {
            let xk = x.select(Axis(0), &known);
            let z = self.ensemble.margins(&xk.view())?;
            let mut offset = 0;
            for (s, rows) in by_segment.iter().enumerate() {
                if rows.is_empty() {
                    continue;
                }
                let fit = self.segment_fit(s).expect("routed rows have a fit");
                let range = offset..offset + rows.len();
                offset += rows.len();
                let zs: Vec<ArrayView2<f64>> = z.iter().map(|m| m.slice(ndarray::s![range.clone(), ..])).collect();
                let mut margin = fit.stage1.margin(&zs)?;
                if full {
                    let xs = xk.slice(ndarray::s![range, ..]);
                    margin = fit.stage2.predict_margin(&xs, Some(&margin.view()))?;
                }
                for (r, &i) in rows.iter().enumerate() {
                    out.row_mut(i).assign(&margin.row(r));
                }
            }
        }
        if full && !fallback_rows.is_empty() {
            let xf = x.select(Axis(0), &fallback_rows);
            let sf: Vec<usize> = fallback_rows.iter().map(|&i| segments[i]).collect();
            let m = self.fallback.predict_margin(&xf.view(), &sf)?;
            for (r, &i) in fallback_rows.iter().enumerate() {
                out.row_mut(i).assign(&m.row(r));
            }
        }
        Ok(out)
    }
}

fn positions(sorted: &[usize], rows: &[usize]) -> Vec<usize> {
    rows.iter()
        .map(|r| sorted.binary_search(r).expect("row belongs to segment"))
        .collect()
}

/// Chooses the segment clusters for the base models.
fn clusters_for(
    base: &Dataset,
    min_tune: usize,
    cfg: &MrConfig,
) -> Result<(ClusterAssignment, Option<SegmentDistanceMatrix>)> {
    let seg_rows = base.segment_rows();
    let present: Vec<usize> = (0..seg_rows.len()).filter(|&s| !seg_rows[s].is_empty()).collect();
    if let ClusterPolicy::Explicit(c) = &cfg.clusters {
        return Ok((ClusterAssignment::new(c.clone(), &present)?, None));
    }
    let clusterable: Vec<usize> = present.iter().copied().filter(|&s| seg_rows[s].len() >= 2).collect();
    if clusterable.len() < present.len() {
        log::warn!(
            "{} segments have fewer than 2 base rows and only use the all-segments model",
            present.len() - clusterable.len()
        );
    }
    if clusterable.is_empty() {
        return Err(Error::Empty("no segment has enough base rows to cluster".into()));
    }
    let rows: Vec<usize> = clusterable.iter().flat_map(|&s| seg_rows[s].clone()).collect();
    let sub = base.select(&rows);
    let kernel = KernelSpec::joint(base.task().is_classification());
    let d = segment_distance_matrix(&sub, &kernel, cfg.max_per_segment, derive_seed(cfg.seed, streams::CLUSTER))?;
    let m = match cfg.clusters {
        ClusterPolicy::Fixed(m) => {
            if m > d.len() {
                return Err(Error::invalid(format!(
                    "{m} clusters requested but only {} segments can be clustered",
                    d.len()
                )));
            }
            m
        }
        _ => {
            let m = choose_num_clusters(&d, cfg.min_cluster_size);
            // stage 1 needs more tuning rows than base models
            let cap = min_tune.saturating_sub(2).max(1);
            if m > cap {
                log::info!("capping {m} clusters at {cap} for the smallest tuning segment");
            }
            m.min(cap)
        }
    };
    Ok((cluster_segments(&d, m)?, Some(d)))
}

/// Fits the multiply robust estimator: base/tune split, segment clusters,
/// base ensemble, then per-segment weights, stage 1 and stage 2, plus the
/// doubly robust fallback for segments without a model.
pub fn fit_mr(train: &Dataset, test: &SegmentedFeatures, cfg: &MrConfig) -> Result<MrModel> {
    let loss = train.task().loss();
    cfg.validate(loss)?;
    check_test(train, test)?;
    let plan = split_base_tune(train, cfg.varsigma, derive_seed(cfg.seed, streams::SPLIT))?;
    let base = train.select(&plan.base);
    let tune = train.select(&plan.tune);
    let seg_rows = train.segment_rows();
    let tune_rows = tune.segment_rows();
    let min_tune = tune_rows.iter().map(Vec::len).filter(|&n| n > 0).min().unwrap_or(0);

    let (clusters, distance) = clusters_for(&base, min_tune, cfg)?;
    log::info!("{} base clusters", clusters.m());
    let bcfg = MrConfig::gbt_seeded(&cfg.base, derive_seed(cfg.seed, streams::BASE));
    let ensemble = fit_base_ensemble(&base, &clusters, &bcfg)?;
    let z = ensemble.margins(&tune.features().view())?;

    let held_out = HeldOut {
        classifier: ensemble.global(),
        rows: &plan.tune,
    };
    let weights = estimate_segment_weights(train, test, cfg, Some(&held_out))?;

    let opts = Stage1Options {
        ball: cfg.ball,
        intercept: cfg.intercept,
        lambda_max: cfg.lambda_max,
    };
    let segment_seed = derive_seed(cfg.seed, streams::SEGMENT);
    let names = train.segment_names();
    let entries = (0..train.n_segments())
        .into_par_iter()
        .map(|s| {
            let mut entry = SegmentEntry {
                segment: s,
                name: names[s].clone(),
                fit: None,
                note: None,
            };
            let rows = &tune_rows[s];
            if seg_rows[s].is_empty() {
                entry.note = Some("no training rows".into());
                return Ok(entry);
            }
            if rows.len() < ensemble.len() + 1 {
                log::warn!(
                    "segment {} has {} tuning rows, fewer than {}; using the fallback model",
                    names[s],
                    rows.len(),
                    ensemble.len() + 1
                );
                entry.note = Some(format!("{} tuning rows", rows.len()));
                return Ok(entry);
            }
            let global_rows: Vec<usize> = rows.iter().map(|&r| plan.tune[r]).collect();
            let w = weights[s].subset(&positions(&seg_rows[s], &global_rows))?;
            let zs: Vec<Array2<f64>> = z.iter().map(|m| m.select(Axis(0), rows)).collect();
            let zv: Vec<ArrayView2<f64>> = zs.iter().map(|m| m.view()).collect();
            let xs = tune.features().select(Axis(0), rows);
            let ys: Vec<f64> = rows.iter().map(|&r| tune.labels()[r]).collect();
            let stage1 = fit_stage1(&zv, &ys, loss, &opts)?;
            let delta = stage1.margin(&zv)?;
            let rcfg = MrConfig::gbt_seeded(&cfg.refine, derive_seed(segment_seed, s as u64));
            let stage2 = fit_stage2(&xs.view(), &ys, loss, &delta.view(), &w.values, &rcfg)?;
            entry.fit = Some(SegmentFit {
                stage1,
                stage2,
                weights: WeightInfo::from(&w),
                n_tune: rows.len(),
            });
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;

    let fallback = fit_dr_with_weights(train, cfg, false, &weights)?;
    Ok(MrModel {
        format_version: FORMAT_VERSION,
        task: train.task(),
        loss,
        n_features: train.n_features(),
        config: cfg.clone(),
        n_base: plan.base.len(),
        n_tune: plan.tune.len(),
        distance,
        ensemble,
        segments: entries,
        fallback,
    })
}
