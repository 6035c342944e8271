//! The two-stage multiply robust estimator and its baselines.
//!
//! Training rows are split into a base part, on which one boosted model is
//! fit per segment cluster plus one on all segments, and a tuning part. For
//! every segment, stage 1 stacks the base models' margins with a linear
//! model restricted to the unit ball, and stage 2 boosts a small correction
//! on importance-weighted tuning rows starting from the stage-1 margin.

mod baseline;
mod ensemble;
mod pipeline;
mod stage;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use baseline::{fit_dr, fit_global, DrModel, GlobalModel, WeightInfo};
pub(crate) use baseline::{estimate_segment_weights, HeldOut};
pub use ensemble::{fit_base_ensemble, BaseEnsemble};
pub use pipeline::{fit_mr, MrModel, SegmentEntry, SegmentFit};
pub use stage::{fit_stage1, fit_stage2, Stage1Model, Stage1Options, LAMBDA_MIN};

use crate::data::{Dataset, SegmentedFeatures};
use crate::error::{Error, Result};
use crate::learners::{GbtConfig, LossKind};
use crate::segmentation::{Bandwidth, KernelSpec};
use crate::weights::{WeightMethod, DEFAULT_BBSE_RIDGE, DEFAULT_ETA};

/// Which within-segment shift the importance weights correct.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftType {
    Covariate,
    Label,
}

impl FromStr for ShiftType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "covariate" => Ok(ShiftType::Covariate),
            "label" => Ok(ShiftType::Label),
            _ => Err(Error::invalid(format!(
                "unknown shift type '{s}' (expected covariate or label)"
            ))),
        }
    }
}

impl fmt::Display for ShiftType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShiftType::Covariate => "covariate",
            ShiftType::Label => "label",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterPolicy {
    /// Ward clustering cut at the largest count whose clusters all have at
    /// least `min_cluster_size` segments.
    Auto,
    Fixed(usize),
    /// Explicit clusters of segment ids.
    Explicit(Vec<Vec<usize>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MrConfig {
    pub shift: ShiftType,
    pub weight_method: WeightMethod,
    pub eta: f64,
    pub varsigma: f64,
    pub clusters: ClusterPolicy,
    pub min_cluster_size: usize,
    /// Rows per segment used by the MMD distance.
    pub max_per_segment: usize,
    pub kmm_kernel: KernelSpec,
    pub bbse_ridge: f64,
    /// Base models `h_1..h_{M+1}`.
    pub base: GbtConfig,
    /// Unweighted global model of the baselines.
    pub global: GbtConfig,
    /// Stage-2 and baseline refinement.
    pub refine: GbtConfig,
    pub ball: bool,
    pub intercept: bool,
    pub lambda_max: f64,
    pub seed: u64,
}

impl Default for MrConfig {
    fn default() -> Self {
        MrConfig {
            shift: ShiftType::Covariate,
            weight_method: WeightMethod::Discriminative,
            eta: DEFAULT_ETA,
            varsigma: 0.8,
            clusters: ClusterPolicy::Auto,
            min_cluster_size: 2,
            max_per_segment: crate::segmentation::DEFAULT_MAX_PER_SEGMENT,
            kmm_kernel: KernelSpec::gaussian(Bandwidth::Median),
            bbse_ridge: DEFAULT_BBSE_RIDGE,
            base: GbtConfig::cluster_default(),
            global: GbtConfig::global_default(),
            refine: GbtConfig::refine_default(),
            ball: true,
            intercept: true,
            lambda_max: 1e6,
            seed: 0,
        }
    }
}

impl MrConfig {
    pub fn validate(&self, loss: LossKind) -> Result<()> {
        self.base.validate()?;
        self.global.validate()?;
        self.refine.validate()?;
        if !(self.eta > 0.0) {
            return Err(Error::invalid(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.varsigma > 0.0 && self.varsigma < 1.0) {
            return Err(Error::invalid(format!(
                "varsigma must lie in (0, 1), got {}",
                self.varsigma
            )));
        }
        if !(self.lambda_max > LAMBDA_MIN) {
            return Err(Error::invalid("lambda_max must exceed the minimum ridge strength"));
        }
        if self.min_cluster_size == 0 {
            return Err(Error::invalid("min_cluster_size must be at least 1"));
        }
        if let ClusterPolicy::Fixed(0) = self.clusters {
            return Err(Error::invalid("cluster count must be at least 1"));
        }
        match (self.shift, self.weight_method) {
            (_, WeightMethod::None) => {}
            (ShiftType::Covariate, WeightMethod::Discriminative | WeightMethod::Kmm) => {}
            (ShiftType::Label, WeightMethod::Bbse) => {
                if loss == LossKind::Squared {
                    return Err(Error::invalid("label shift needs a classification task"));
                }
            }
            (shift, method) => {
                return Err(Error::invalid(format!(
                    "weight method {method} does not correct {shift} shift"
                )))
            }
        }
        Ok(())
    }

    /// Same config with every learner seed derived from `seed`.
    pub(crate) fn gbt_seeded(cfg: &GbtConfig, seed: u64) -> GbtConfig {
        GbtConfig {
            seed,
            ..cfg.clone()
        }
    }
}

/// Estimators available to the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Mr,
    Dr,
    DrSf,
    Gbt,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Mr, Method::Dr, Method::DrSf, Method::Gbt];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Mr => "mr",
            Method::Dr => "dr",
            Method::DrSf => "dr-sf",
            Method::Gbt => "gbt",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::invalid(format!("unknown method '{s}' (expected mr, dr, dr-sf or gbt)"))
        })
    }
}

/// Any fitted estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum FittedModel {
    Mr(MrModel),
    Dr(DrModel),
    DrSf(DrModel),
    Gbt(GlobalModel),
}

impl FittedModel {
    pub fn fit(method: Method, train: &Dataset, test: &SegmentedFeatures, cfg: &MrConfig) -> Result<Self> {
        Ok(match method {
            Method::Mr => FittedModel::Mr(fit_mr(train, test, cfg)?),
            Method::Dr => FittedModel::Dr(fit_dr(train, test, cfg, false)?),
            Method::DrSf => FittedModel::DrSf(fit_dr(train, test, cfg, true)?),
            Method::Gbt => FittedModel::Gbt(fit_global(train, cfg)?),
        })
    }

    pub fn method(&self) -> Method {
        match self {
            FittedModel::Mr(_) => Method::Mr,
            FittedModel::Dr(_) => Method::Dr,
            FittedModel::DrSf(_) => Method::DrSf,
            FittedModel::Gbt(_) => Method::Gbt,
        }
    }

    pub fn loss(&self) -> LossKind {
        match self {
            FittedModel::Mr(m) => m.loss,
            FittedModel::Dr(m) | FittedModel::DrSf(m) => m.global.loss,
            FittedModel::Gbt(m) => m.model.loss,
        }
    }

    /// Raw margins for rows `x` belonging to `segments`.
    pub fn predict_margin(&self, x: &ArrayView2<f64>, segments: &[usize]) -> Result<Array2<f64>> {
        match self {
            FittedModel::Mr(m) => m.predict_margin(x, segments),
            FittedModel::Dr(m) | FittedModel::DrSf(m) => m.predict_margin(x, segments),
            FittedModel::Gbt(m) => m.predict_margin(x),
        }
    }

    /// Predictions on the response scale: values for regression, the
    /// positive-class probability for binary tasks, class probabilities for
    /// multiclass tasks.
    pub fn predict(&self, x: &ArrayView2<f64>, segments: &[usize]) -> Result<Array2<f64>> {
        Ok(apply_link(self.predict_margin(x, segments)?, self.loss()))
    }
}

pub(crate) fn apply_link(mut margins: Array2<f64>, loss: LossKind) -> Array2<f64> {
    let width = loss.width();
    let mut out = vec![0.0; width];
    for mut row in margins.outer_iter_mut() {
        let m: Vec<f64> = row.to_vec();
        loss.link_row(&m, &mut out);
        for (v, o) in row.iter_mut().zip(&out) {
            *v = *o;
        }
    }
    margins
}

fn check_segments(x: &ArrayView2<f64>, segments: &[usize]) -> Result<()> {
    if segments.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: segments.len(),
        });
    }
    Ok(())
}

/// Rows reordered by their contents so that fits do not depend on the
/// order rows arrive in.
pub(crate) fn canonical_rows(data: &Dataset, rows: &[usize]) -> Vec<usize> {
    let x = data.features();
    let y = data.labels();
    let mut out = rows.to_vec();
    out.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b).iter())
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(y[a].total_cmp(&y[b]))
            .then(data.segments()[a].cmp(&data.segments()[b]))
    });
    out
}

/// Seed streams derived from the master seed.
pub mod streams {
    pub const SPLIT: u64 = 1;
    pub const CLUSTER: u64 = 2;
    pub const BASE: u64 = 3;
    pub const SEGMENT: u64 = 4;
    pub const GLOBAL: u64 = 5;
    pub const REFINE: u64 = 6;
    pub const AUX: u64 = 7;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        let err = "unknown".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("dr-sf"));
        assert_eq!("label".parse::<ShiftType>().unwrap(), ShiftType::Label);
    }

    #[test]
    fn config_consistency() {
        let cfg = MrConfig::default();
        cfg.validate(LossKind::Squared).unwrap();
        let bad = MrConfig {
            weight_method: WeightMethod::Bbse,
            ..MrConfig::default()
        };
        assert!(bad.validate(LossKind::Logistic).is_err());
        let label = MrConfig {
            shift: ShiftType::Label,
            weight_method: WeightMethod::Bbse,
            ..MrConfig::default()
        };
        label.validate(LossKind::Logistic).unwrap();
        assert!(label.validate(LossKind::Squared).is_err());
        assert!(MrConfig { varsigma: 1.0, ..MrConfig::default() }.validate(LossKind::Squared).is_err());
    }
}
