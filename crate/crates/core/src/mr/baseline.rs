//! Global baselines: the unweighted boosted model, and the doubly robust
//! refinement of it on pooled per-segment importance weights (optionally
//! with one-hot segment features).

use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_segments, streams, MrConfig, ShiftType};
use crate::data::{split_base_tune, Dataset, SegmentedFeatures};
use crate::error::{Error, Result};
use crate::learners::{fit_gbt, GbtModel, Learner, LossKind};
use crate::rng::derive_seed;
use crate::weights::{
    expand_class_weights, fit_bbse, fit_discriminative_weights, fit_kmm, WeightMethod, WeightSummary,
    WeightVector,
};

/// Largest segment KMM will build a Gram matrix for.
pub const KMM_MAX_ROWS: usize = 5000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalModel {
    pub model: GbtModel,
}

impl GlobalModel {
    pub fn predict_margin(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.model.predict_margin(x, None)
    }
}

/// Plain boosted model on all training rows, ignoring segments and shift.
pub fn fit_global(train: &Dataset, cfg: &MrConfig) -> Result<GlobalModel> {
    let gcfg = MrConfig::gbt_seeded(&cfg.global, derive_seed(cfg.seed, streams::GLOBAL));
    let y = train.labels().to_vec();
    Ok(GlobalModel {
        model: fit_gbt(&train.features().view(), &y, train.task().loss(), &gcfg, None, None)?,
    })
}

/// Weight metadata kept in fitted models and reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightInfo {
    pub method: WeightMethod,
    pub eta: f64,
    pub scale: f64,
    pub summary: WeightSummary,
}

impl From<&WeightVector> for WeightInfo {
    fn from(w: &WeightVector) -> Self {
        WeightInfo {
            method: w.method,
            eta: w.eta,
            scale: w.scale,
            summary: w.summary(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrModel {
    pub global: GbtModel,
    pub refine: GbtModel,
    /// Number of one-hot segment columns appended to the features.
    pub segment_columns: Option<usize>,
    pub n_features: usize,
    pub weights: Vec<Option<WeightInfo>>,
}

impl DrModel {
    pub fn input_width(&self) -> usize {
        self.n_features + self.segment_columns.unwrap_or(0)
    }

    pub fn predict_margin(&self, x: &ArrayView2<f64>, segments: &[usize]) -> Result<Array2<f64>> {
        check_segments(x, segments)?;
        if x.ncols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.ncols(),
            });
        }
        let xa = augment(x, segments, self.segment_columns);
        let base = self.global.predict_margin(&xa.view(), None)?;
        self.refine.predict_margin(&xa.view(), Some(&base.view()))
    }
}

/// Appends one-hot segment columns; ids past `columns` get all zeros.
pub(crate) fn augment(x: &ArrayView2<f64>, segments: &[usize], columns: Option<usize>) -> Array2<f64> {
    let Some(k) = columns else {
        return x.to_owned();
    };
    let d = x.ncols();
    let mut out = Array2::zeros((x.nrows(), d + k));
    out.slice_mut(s![.., ..d]).assign(x);
    for (i, &s) in segments.iter().enumerate() {
        if s < k {
            out[[i, d + s]] = 1.0;
        }
    }
    out
}

pub(crate) fn predicted_classes(margins: &ArrayView2<f64>, loss: LossKind) -> Vec<usize> {
    margins
        .outer_iter()
        .map(|row| match loss {
            LossKind::Softmax(_) => row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                .0,
            _ => usize::from(row[0] > 0.0),
        })
        .collect()
}

/// Held-out classifier for label-shift weights: its margins on the
/// held-out training rows and on the test rows.
pub(crate) struct HeldOut<'a> {
    pub classifier: &'a Learner,
    pub rows: &'a [usize],
}

/// Importance weights over every training row of each segment (indexed by
/// segment id; empty for segments without rows).
pub(crate) fn estimate_segment_weights(
    train: &Dataset,
    test: &SegmentedFeatures,
    cfg: &MrConfig,
    held_out: Option<&HeldOut>,
) -> Result<Vec<WeightVector>> {
    let seg_rows = train.segment_rows();
    let test_rows = test.segment_rows(seg_rows.len());
    let names = train.segment_names();
    let x = train.features();
    let loss = train.task().loss();

    let label_inputs = match (cfg.shift, cfg.weight_method, held_out) {
        (ShiftType::Label, WeightMethod::Bbse, Some(h)) => {
            let src = train.select(h.rows);
            let src_pred = predicted_classes(&h.classifier.predict_margin(&src.features().view())?.view(), loss);
            let test_pred = predicted_classes(&h.classifier.predict_margin(&test.x.view())?.view(), loss);
            Some((src.segments().to_vec(), src.class_labels(), src_pred, test_pred))
        }
        (ShiftType::Label, WeightMethod::Bbse, None) => {
            return Err(Error::invalid("label-shift weights need a held-out classifier"))
        }
        _ => None,
    };

    (0..seg_rows.len())
        .into_par_iter()
        .map(|s| {
            let rows = &seg_rows[s];
            if rows.is_empty() {
                return Ok(WeightVector::uniform(0, cfg.eta));
            }
            let uniform = WeightVector::uniform(rows.len(), cfg.eta);
            if cfg.weight_method == WeightMethod::None {
                return Ok(uniform);
            }
            if test_rows[s].is_empty() {
                log::warn!("segment {} has no test rows; using uniform weights", names[s]);
                return Ok(uniform);
            }
            match &label_inputs {
                None => {
                    let tx = x.select(ndarray::Axis(0), rows);
                    let sx = test.x.select(ndarray::Axis(0), &test_rows[s]);
                    match cfg.weight_method {
                        WeightMethod::Kmm => {
                            if rows.len() > KMM_MAX_ROWS {
                                return Err(Error::invalid(format!(
                                    "segment {} has {} rows; KMM is limited to {KMM_MAX_ROWS}",
                                    names[s],
                                    rows.len()
                                )));
                            }
                            fit_kmm(&tx.view(), &sx.view(), &cfg.kmm_kernel, cfg.eta, None)
                        }
                        _ => fit_discriminative_weights(&tx.view(), &sx.view(), cfg.eta),
                    }
                }
                Some((src_seg, src_y, src_pred, test_pred)) => {
                    let k = loss.width().max(2);
                    let (mut yt, mut yp) = (Vec::new(), Vec::new());
                    for ((&seg, &y), &p) in src_seg.iter().zip(src_y).zip(src_pred) {
                        if seg == s {
                            yt.push(y);
                            yp.push(p);
                        }
                    }
                    let tp: Vec<usize> = test_rows[s].iter().map(|&i| test_pred[i]).collect();
                    let cw = match fit_bbse(&yt, &yp, &tp, k, cfg.bbse_ridge) {
                        Ok(cw) => cw,
                        Err(e @ (Error::MissingClass(_) | Error::Empty(_) | Error::Singular(_))) => {
                            log::warn!("segment {}: {e}; using uniform weights", names[s]);
                            return Ok(uniform);
                        }
                        Err(e) => return Err(e),
                    };
                    let labels: Vec<usize> = rows.iter().map(|&i| train.labels()[i] as usize).collect();
                    expand_class_weights(&cw, &labels, cfg.eta)
                }
            }
        })
        .collect()
}

/// Pools per-segment weights into one vector over all training rows.
fn pool(train: &Dataset, per_segment: &[WeightVector]) -> Vec<f64> {
    let mut out = vec![1.0; train.n_rows()];
    for (rows, w) in train.segment_rows().iter().zip(per_segment) {
        for (&i, &v) in rows.iter().zip(&w.values) {
            out[i] = v;
        }
    }
    out
}

/// Doubly robust baseline: an unweighted global model refined on all rows
/// with pooled per-segment importance weights, starting from its margin.
/// With `segment_onehot` the segments enter as one-hot feature columns.
pub fn fit_dr(train: &Dataset, test: &SegmentedFeatures, cfg: &MrConfig, segment_onehot: bool) -> Result<DrModel> {
    let loss = train.task().loss();
    cfg.validate(loss)?;
    check_test(train, test)?;
    let aux;
    let held_out = if cfg.shift == ShiftType::Label && cfg.weight_method == WeightMethod::Bbse {
        let plan = split_base_tune(train, cfg.varsigma, derive_seed(cfg.seed, streams::SPLIT))?;
        let base = train.select(&plan.base);
        let acfg = MrConfig::gbt_seeded(&cfg.global, derive_seed(cfg.seed, streams::AUX));
        let y = base.labels().to_vec();
        aux = (Learner::Gbt(fit_gbt(&base.features().view(), &y, loss, &acfg, None, None)?), plan.tune);
        Some(HeldOut {
            classifier: &aux.0,
            rows: &aux.1,
        })
    } else {
        None
    };
    let weights = estimate_segment_weights(train, test, cfg, held_out.as_ref())?;
    fit_dr_with_weights(train, cfg, segment_onehot, &weights)
}

pub(crate) fn check_test(train: &Dataset, test: &SegmentedFeatures) -> Result<()> {
    if test.x.ncols() != train.n_features() {
        return Err(Error::DimensionMismatch {
            expected: train.n_features(),
            got: test.x.ncols(),
        });
    }
    if test.segments.len() != test.x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: test.x.nrows(),
            got: test.segments.len(),
        });
    }
    Ok(())
}

pub(crate) fn fit_dr_with_weights(
    train: &Dataset,
    cfg: &MrConfig,
    segment_onehot: bool,
    per_segment: &[WeightVector],
) -> Result<DrModel> {
    let loss = train.task().loss();
    let columns = segment_onehot.then(|| train.n_segments());
    let xa = augment(&train.features().view(), train.segments(), columns);
    let y = train.labels().to_vec();
    let gcfg = MrConfig::gbt_seeded(&cfg.global, derive_seed(cfg.seed, streams::GLOBAL));
    let global = fit_gbt(&xa.view(), &y, loss, &gcfg, None, None)?;
    let base = global.predict_margin(&xa.view(), None)?;
    let w = pool(train, per_segment);
    let rcfg = MrConfig::gbt_seeded(&cfg.refine, derive_seed(cfg.seed, streams::REFINE));
    let refine = fit_gbt(&xa.view(), &y, loss, &rcfg, Some(&w), Some(&base.view()))?;
    Ok(DrModel {
        global,
        refine,
        segment_columns: columns,
        n_features: train.n_features(),
        weights: per_segment
            .iter()
            .map(|w| (!w.is_empty()).then(|| WeightInfo::from(w)))
            .collect(),
    })
}
