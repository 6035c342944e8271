//! Metrics with standard errors, per-segment reports and the k-fold
//! cross-validation driver for hyperparameter grids.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{kfold_plan, Dataset, SegmentedFeatures, TaskKind};
use crate::error::{Error, Result};
use crate::learners::{fit_gbt, GbtConfig, Learner};
use crate::mr::{FittedModel, Method, MrConfig, ShiftType};
use crate::rng::derive_seed;
use crate::weights::WeightMethod;
use crate::FORMAT_VERSION;

/// Probability clamp for the cross entropy.
pub const CE_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Mse,
    Ce,
    Brier,
}

impl MetricKind {
    pub fn default_for(task: TaskKind) -> Self {
        if task.is_classification() {
            MetricKind::Ce
        } else {
            MetricKind::Mse
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Mse => "mse",
            MetricKind::Ce => "ce",
            MetricKind::Brier => "brier",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(MetricKind::Mse),
            "ce" => Ok(MetricKind::Ce),
            "brier" => Ok(MetricKind::Brier),
            _ => Err(Error::invalid(format!("unknown metric '{s}' (expected mse, ce or brier)"))),
        }
    }
}

/// Per-row losses. `pred` holds values (regression), positive-class
/// probabilities (one column) or class probabilities (one column per class).
pub fn per_sample_losses(y: &[f64], pred: &ArrayView2<f64>, kind: MetricKind) -> Result<Vec<f64>> {
    if y.len() != pred.nrows() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: pred.nrows(),
        });
    }
    let width = pred.ncols();
    if kind == MetricKind::Mse {
        if width != 1 {
            return Err(Error::invalid("mse needs one prediction column"));
        }
        return Ok(y.iter().zip(pred.column(0)).map(|(t, p)| (p - t) * (p - t)).collect());
    }
    if pred.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid(format!("{kind} needs probabilities in [0, 1]")));
    }
    let mut out = Vec::with_capacity(y.len());
    for (&t, row) in y.iter().zip(pred.outer_iter()) {
        let label_ok = if width == 1 { t == 0.0 || t == 1.0 } else { t.fract() == 0.0 && t >= 0.0 && (t as usize) < width };
        if !label_ok {
            return Err(Error::invalid(format!("{kind} needs class labels, got {t}")));
        }
        let loss = match (kind, width) {
            (MetricKind::Ce, 1) => {
                let p = row[0].clamp(CE_CLAMP, 1.0 - CE_CLAMP);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            }
            (MetricKind::Ce, _) => -row[t as usize].clamp(CE_CLAMP, 1.0 - CE_CLAMP).ln(),
            (_, 1) => (row[0] - t) * (row[0] - t),
            _ => row
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    let e = if k == t as usize { 1.0 } else { 0.0 };
                    (p - e) * (p - e)
                })
                .sum(),
        };
        out.push(loss);
    }
    Ok(out)
}

/// Weighted mean of `losses` and its standard error: the weighted standard
/// deviation over `√n_eff` with `n_eff = (Σw)² / Σw²`.
pub fn mean_and_se(losses: &[f64], weights: Option<&[f64]>) -> Result<(f64, f64)> {
    if losses.is_empty() {
        return Err(Error::Empty("no rows to score".into()));
    }
    if let Some(w) = weights {
        if w.len() != losses.len() {
            return Err(Error::DimensionMismatch {
                expected: losses.len(),
                got: w.len(),
            });
        }
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("sample weights must be finite and nonnegative"));
        }
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let (mut sw, mut sw2, mut swl) = (0.0, 0.0, 0.0);
    for (i, l) in losses.iter().enumerate() {
        sw += w(i);
        sw2 += w(i) * w(i);
        swl += w(i) * l;
    }
    if !(sw > 0.0) {
        return Err(Error::invalid("sample weights sum to zero"));
    }
    let mean = swl / sw;
    let var = losses
        .iter()
        .enumerate()
        .map(|(i, l)| w(i) * (l - mean) * (l - mean))
        .sum::<f64>()
        / sw;
    let n_eff = sw * sw / sw2;
    Ok((mean, (var / n_eff).sqrt()))
}

/// `(value, standard error)` of a metric.
pub fn metric(y: &[f64], pred: &ArrayView2<f64>, kind: MetricKind, weights: Option<&[f64]>) -> Result<(f64, f64)> {
    mean_and_se(&per_sample_losses(y, pred, kind)?, weights)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub segment: String,
    pub n: usize,
    pub value: f64,
    pub se: f64,
    pub baseline: Option<f64>,
    /// `value / baseline` on the same rows.
    pub relative: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub format_version: u32,
    pub metric: MetricKind,
    pub segments: Vec<ReportRow>,
    pub overall: ReportRow,
}

/// Inputs for [`per_segment_report`].
pub struct ReportInput<'a> {
    pub y: &'a [f64],
    pub pred: ArrayView2<'a, f64>,
    pub segments: &'a [usize],
    pub segment_names: &'a [String],
    pub baseline: Option<ArrayView2<'a, f64>>,
    pub weights: Option<&'a [f64]>,
}

fn row(name: &str, idx: &[usize], losses: &[f64], base: Option<&[f64]>, weights: Option<&[f64]>) -> Result<ReportRow> {
    let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let w = weights.map(pick);
    let (value, se) = mean_and_se(&pick(losses), w.as_deref())?;
    let baseline = base.map(|b| mean_and_se(&pick(b), w.as_deref()).map(|r| r.0)).transpose()?;
    Ok(ReportRow {
        segment: name.to_string(),
        n: idx.len(),
        value,
        se,
        baseline,
        relative: baseline.map(|b| value / b),
    })
}

/// One row per segment present in `segments` plus the overall row, which
/// averages per-row losses over all rows.
pub fn per_segment_report(input: &ReportInput, kind: MetricKind) -> Result<SegmentReport> {
    let n = input.y.len();
    if input.segments.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: input.segments.len(),
        });
    }
    let losses = per_sample_losses(input.y, &input.pred, kind)?;
    let base = input
        .baseline
        .as_ref()
        .map(|b| {
            if b.dim() != input.pred.dim() {
                return Err(Error::DimensionMismatch {
                    expected: input.pred.nrows(),
                    got: b.nrows(),
                });
            }
            per_sample_losses(input.y, b, kind)
        })
        .transpose()?;
    let n_seg = input.segments.iter().max().map_or(0, |m| m + 1);
    let mut idx = vec![Vec::new(); n_seg];
    for (i, &s) in input.segments.iter().enumerate() {
        idx[s].push(i);
    }
    let mut segments = Vec::new();
    for (s, rows) in idx.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let name = input.segment_names.get(s).cloned().unwrap_or_else(|| s.to_string());
        segments.push(row(&name, rows, &losses, base.as_deref(), input.weights)?);
    }
    let all: Vec<usize> = (0..n).collect();
    Ok(SegmentReport {
        format_version: FORMAT_VERSION,
        metric: kind,
        segments,
        overall: row("overall", &all, &losses, base.as_deref(), input.weights)?,
    })
}

impl SegmentReport {
    /// Aligned text table with `value (se)` cells.
    pub fn to_table(&self) -> String {
        let cells: Vec<[String; 4]> = self
            .segments
            .iter()
            .chain(std::iter::once(&self.overall))
            .map(|r| {
                [
                    r.segment.clone(),
                    r.n.to_string(),
                    format!("{:.4} ({:.4})", r.value, r.se),
                    r.relative.map_or_else(|| "-".into(), |v| format!("{v:.4}")),
                ]
            })
            .collect();
        let header = ["segment".to_string(), "n".into(), self.metric.name().into(), "relative".into()];
        let mut widths = header.clone().map(|h| h.len());
        for c in &cells {
            for (w, v) in widths.iter_mut().zip(c) {
                *w = (*w).max(v.len());
            }
        }
        let mut out = String::new();
        for line in std::iter::once(&header).chain(&cells) {
            let _ = writeln!(
                out,
                "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}",
                line[0],
                line[1],
                line[2],
                line[3],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2],
                w3 = widths[3]
            );
        }
        out
    }
}

/// Boosting settings varied by the grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub subsample: f64,
    pub colsample_bytree: f64,
}

impl GbtParams {
    pub fn apply(&self, cfg: &GbtConfig) -> GbtConfig {
        GbtConfig {
            n_estimators: self.n_estimators,
            max_depth: self.max_depth,
            learning_rate: self.learning_rate,
            subsample: self.subsample,
            colsample_bytree: self.colsample_bytree,
            ..cfg.clone()
        }
    }

    fn key(&self) -> (usize, usize, u64, u64, u64) {
        (
            self.n_estimators,
            self.max_depth,
            self.learning_rate.to_bits(),
            self.subsample.to_bits(),
            self.colsample_bytree.to_bits(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub base: GbtParams,
    pub refine: GbtParams,
}

impl CvPoint {
    fn key(&self) -> impl Ord {
        (self.base.key(), self.refine.key())
    }

    /// Applies the point: `base` sets the base models (and the global model
    /// of the baselines), `refine` the refinement.
    pub fn apply(&self, cfg: &MrConfig) -> MrConfig {
        MrConfig {
            base: self.base.apply(&cfg.base),
            global: self.base.apply(&cfg.global),
            refine: self.refine.apply(&cfg.refine),
            ..cfg.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamLists {
    pub n_estimators: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub subsample: Vec<f64>,
    pub colsample_bytree: Vec<f64>,
}

impl ParamLists {
    fn points(&self) -> Vec<GbtParams> {
        let mut out = Vec::new();
        for &n_estimators in &self.n_estimators {
            for &max_depth in &self.max_depth {
                for &learning_rate in &self.learning_rate {
                    for &subsample in &self.subsample {
                        for &colsample_bytree in &self.colsample_bytree {
                            out.push(GbtParams {
                                n_estimators,
                                max_depth,
                                learning_rate,
                                subsample,
                                colsample_bytree,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    fn single(p: &GbtConfig) -> Self {
        ParamLists {
            n_estimators: vec![p.n_estimators],
            max_depth: vec![p.max_depth],
            learning_rate: vec![p.learning_rate],
            subsample: vec![p.subsample],
            colsample_bytree: vec![p.colsample_bytree],
        }
    }

    fn is_valid(&self) -> bool {
        !(self.n_estimators.is_empty()
            || self.max_depth.is_empty()
            || self.learning_rate.is_empty()
            || self.subsample.is_empty()
            || self.colsample_bytree.is_empty())
    }
}

/// Hyperparameter lists for base and refinement models; the grid is their
/// Cartesian product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvGrid {
    pub base: ParamLists,
    pub refine: ParamLists,
}

impl Default for CvGrid {
    fn default() -> Self {
        CvGrid {
            base: ParamLists {
                n_estimators: vec![10, 25, 50, 200, 300, 500],
                max_depth: vec![2, 3, 5, 7],
                learning_rate: vec![0.1],
                subsample: vec![0.8, 1.0],
                colsample_bytree: vec![0.8, 1.0],
            },
            refine: ParamLists {
                n_estimators: vec![0, 10, 25, 50],
                max_depth: vec![0, 1, 3],
                learning_rate: vec![0.001, 0.01, 0.1],
                subsample: vec![0.8, 1.0],
                colsample_bytree: vec![0.8, 1.0],
            },
        }
    }
}

impl CvGrid {
    /// The one-point grid of an existing configuration.
    pub fn from_config(cfg: &MrConfig) -> Self {
        CvGrid {
            base: ParamLists::single(&cfg.base),
            refine: ParamLists::single(&cfg.refine),
        }
    }

    /// Distinct grid points in a canonical order.
    pub fn points(&self) -> Result<Vec<CvPoint>> {
        if !self.base.is_valid() || !self.refine.is_valid() {
            return Err(Error::invalid("every grid list must be nonempty"));
        }
        let mut out = Vec::new();
        for base in self.base.points() {
            for refine in self.refine.points() {
                out.push(CvPoint { base, refine });
            }
        }
        out.sort_by_key(|p| p.key());
        out.dedup_by_key(|p| p.key());
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointScore {
    pub point: CvPoint,
    /// Mean weighted validation loss over the folds where fitting succeeded.
    pub score: Option<f64>,
    pub fold_scores: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub format_version: u32,
    pub method: Method,
    pub metric: MetricKind,
    pub best: CvPoint,
    pub scores: Vec<PointScore>,
    /// Reports of the selected point, one per fold.
    pub fold_reports: Vec<SegmentReport>,
}

struct PreparedFold {
    train: Dataset,
    valid: Dataset,
    weights: Vec<f64>,
}

/// Validation-fold weights toward the test features, pooled over segments.
fn fold_weights(train: &Dataset, valid: &Dataset, test: &SegmentedFeatures, cfg: &MrConfig) -> Result<Vec<f64>> {
    use crate::mr::{estimate_segment_weights, HeldOut};
    let aux;
    let all: Vec<usize> = (0..valid.n_rows()).collect();
    let held = if cfg.shift == ShiftType::Label && cfg.weight_method == WeightMethod::Bbse {
        let gcfg = MrConfig::gbt_seeded(&cfg.global, derive_seed(cfg.seed, 97));
        let y = train.labels().to_vec();
        aux = Learner::Gbt(fit_gbt(&train.features().view(), &y, train.task().loss(), &gcfg, None, None)?);
        Some(HeldOut {
            classifier: &aux,
            rows: &all,
        })
    } else {
        None
    };
    let per_segment = estimate_segment_weights(valid, test, cfg, held.as_ref())?;
    let mut out = vec![1.0; valid.n_rows()];
    for (rows, w) in valid.segment_rows().iter().zip(&per_segment) {
        for (&i, &v) in rows.iter().zip(&w.values) {
            out[i] = v;
        }
    }
    Ok(out)
}

/// k-fold selection of boosting hyperparameters: each fold's model is fit on
/// the training folds, and scored on the validation fold weighted toward the
/// test features (weights computed once per fold). The point with the lowest
/// mean weighted validation loss wins; ties go to the first point in the
/// canonical grid order.
pub fn cross_validate(
    train: &Dataset,
    test: &SegmentedFeatures,
    grid: &CvGrid,
    k: usize,
    method: Method,
    cfg: &MrConfig,
) -> Result<CvResult> {
    cfg.validate(train.task().loss())?;
    let points = grid.points()?;
    let kind = MetricKind::default_for(train.task());
    let folds = kfold_plan(train, k, derive_seed(cfg.seed, 11))?;
    let prepared = folds
        .par_iter()
        .map(|f| {
            let tr = train.select(&f.train);
            let va = train.select(&f.valid);
            let weights = fold_weights(&tr, &va, test, cfg)?;
            Ok(PreparedFold { train: tr, valid: va, weights })
        })
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> = (0..points.len()).flat_map(|p| (0..k).map(move |f| (p, f))).collect();
    let outcomes: Vec<Option<SegmentReport>> = jobs
        .par_iter()
        .map(|&(p, f)| {
            let fold = &prepared[f];
            let run = || -> Result<SegmentReport> {
                let model = FittedModel::fit(method, &fold.train, test, &points[p].apply(cfg))?;
                let x = fold.valid.features().view();
                let pred = model.predict(&x, fold.valid.segments())?;
                let y = fold.valid.labels().to_vec();
                per_segment_report(
                    &ReportInput {
                        y: &y,
                        pred: pred.view(),
                        segments: fold.valid.segments(),
                        segment_names: fold.valid.segment_names(),
                        baseline: None,
                        weights: Some(&fold.weights),
                    },
                    kind,
                )
            };
            match run() {
                Ok(r) => Some(r),
                Err(e) => {
                    log::warn!("grid point {p} failed on fold {f}: {e}");
                    None
                }
            }
        })
        .collect();

    let mut scores = Vec::with_capacity(points.len());
    let mut best: Option<(usize, f64)> = None;
    for (p, point) in points.iter().enumerate() {
        let fold_scores: Vec<Option<f64>> = (0..k).map(|f| outcomes[p * k + f].as_ref().map(|r| r.overall.value)).collect();
        let ok: Vec<f64> = fold_scores.iter().flatten().copied().collect();
        let score = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
        match score {
            None => log::warn!("grid point {p} failed on every fold; excluded"),
            Some(s) => {
                if best.is_none_or(|(_, b)| s < b) {
                    best = Some((p, s));
                }
            }
        }
        scores.push(PointScore {
            point: *point,
            score,
            fold_scores,
        });
    }
    let (bp, _) = best.ok_or_else(|| Error::Numerical("every grid point failed".into()))?;
    let fold_reports = (0..k).filter_map(|f| outcomes[bp * k + f].clone()).collect();
    Ok(CvResult {
        format_version: FORMAT_VERSION,
        method,
        metric: kind,
        best: points[bp],
        scores,
        fold_reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate_local_covshift, SyntheticConfig};
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn metric_examples() {
        let y = [0.0, 1.0, 1.0];
        let perfect = array![[0.0], [1.0], [1.0]];
        assert_eq!(metric(&y, &perfect.view(), MetricKind::Brier, None).unwrap().0, 0.0);
        assert!(metric(&y, &perfect.view(), MetricKind::Ce, None).unwrap().0 < 1e-11);
        let half = array![[0.5], [0.5], [0.5]];
        let (ce, se) = metric(&y, &half.view(), MetricKind::Ce, None).unwrap();
        assert!((ce - std::f64::consts::LN_2).abs() < 1e-15 && se == 0.0);
        let yr = [1.0, -2.0, 0.5];
        let shifted = array![[2.0], [-1.0], [1.5]];
        assert_eq!(metric(&yr, &shifted.view(), MetricKind::Mse, None).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn multiclass_brier_and_errors() {
        let y = [2.0];
        let p = array![[0.2, 0.3, 0.5]];
        let (b, _) = metric(&y, &p.view(), MetricKind::Brier, None).unwrap();
        assert!((b - (0.04 + 0.09 + 0.25)).abs() < 1e-15);
        assert!(metric(&y, &p.view(), MetricKind::Mse, None).is_err());
        assert!(metric(&[0.5], &array![[0.5]].view(), MetricKind::Ce, None).is_err());
        assert!(metric(&[1.0], &array![[1.5]].view(), MetricKind::Brier, None).is_err());
        assert!(metric(&[1.0, 2.0], &array![[1.5]].view(), MetricKind::Mse, None).is_err());
    }

    #[test]
    fn report_examples() {
        // segment A: losses 2 vs 4, segment B: 1 vs 1
        let y = [0.0, 0.0, 0.0, 0.0];
        let pred = array![[2f64.sqrt()], [-(2f64.sqrt())], [1.0], [-1.0]];
        let base = array![[2.0], [-2.0], [1.0], [1.0]];
        let names = vec!["A".to_string(), "B".to_string()];
        let input = ReportInput {
            y: &y,
            pred: pred.view(),
            segments: &[0, 0, 1, 1],
            segment_names: &names,
            baseline: Some(base.view()),
            weights: None,
        };
        let r = per_segment_report(&input, MetricKind::Mse).unwrap();
        assert!((r.segments[0].relative.unwrap() - 0.5).abs() < 1e-12);
        assert!((r.segments[1].relative.unwrap() - 1.0).abs() < 1e-12);
        assert!((r.overall.value - 1.5).abs() < 1e-12);
        let table = r.to_table();
        assert!(table.contains("overall") && table.contains("(0.0000)"));
        let same = ReportInput { baseline: Some(pred.view()), ..input };
        let r = per_segment_report(&same, MetricKind::Mse).unwrap();
        assert!(r.segments.iter().chain([&r.overall]).all(|row| row.relative == Some(1.0)));
    }

    #[test]
    fn overall_is_per_row_mean() {
        let y = [0.0; 4];
        let pred = array![[1.0], [3.0], [3.0], [3.0]];
        let names: Vec<String> = vec!["a".into(), "b".into()];
        let r = per_segment_report(
            &ReportInput {
                y: &y,
                pred: pred.view(),
                segments: &[0, 1, 1, 1],
                segment_names: &names,
                baseline: None,
                weights: None,
            },
            MetricKind::Mse,
        )
        .unwrap();
        assert_eq!(r.overall.value, (1.0 + 27.0) / 4.0);
        assert_ne!(r.overall.value, (1.0 + 9.0) / 2.0);
    }

    proptest! {
        #[test]
        fn uniform_weights_change_nothing(losses in proptest::collection::vec(0.0f64..10.0, 1..50)) {
            let ones = vec![1.0; losses.len()];
            let (a, sa) = mean_and_se(&losses, None).unwrap();
            let (b, sb) = mean_and_se(&losses, Some(&ones)).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 && (sa - sb).abs() <= 1e-12);
        }

        #[test]
        fn se_matches_direct_formula(
            pairs in proptest::collection::vec((0.0f64..10.0, 0.01f64..5.0), 2..40)
        ) {
            let (l, w): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let (m, se) = mean_and_se(&l, Some(&w)).unwrap();
            // direct recomputation
            let sw: f64 = w.iter().sum();
            let mean: f64 = l.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
            let var: f64 = l.iter().zip(&w).map(|(a, b)| b * (a - mean).powi(2)).sum::<f64>() / sw;
            let n_eff = sw * sw / w.iter().map(|b| b * b).sum::<f64>();
            prop_assert!((m - mean).abs() <= 1e-12);
            prop_assert!((se - (var / n_eff).sqrt()).abs() <= 1e-12);
        }
    }

    fn fixture() -> (Dataset, SegmentedFeatures) {
        let (train, test) = simulate_local_covshift(&SyntheticConfig {
            n_segments: 4,
            n_train: 800,
            n_test: 400,
            seed: 3,
            ..SyntheticConfig::default()
        })
        .unwrap();
        (train, test.to_features())
    }

    fn point(refine_trees: usize) -> CvPoint {
        let base = GbtConfig::cluster_default();
        let refine = GbtConfig::refine_default();
        let p = |c: &GbtConfig, n| GbtParams {
            n_estimators: n,
            max_depth: c.max_depth,
            learning_rate: c.learning_rate,
            subsample: c.subsample,
            colsample_bytree: c.colsample_bytree,
        };
        CvPoint {
            base: p(&base, 30),
            refine: p(&refine, refine_trees),
        }
    }

    fn grid_of(points: &[CvPoint]) -> CvGrid {
        let lists = |ps: Vec<GbtParams>| ParamLists {
            n_estimators: ps.iter().map(|p| p.n_estimators).collect(),
            max_depth: vec![ps[0].max_depth],
            learning_rate: vec![ps[0].learning_rate],
            subsample: vec![ps[0].subsample],
            colsample_bytree: vec![ps[0].colsample_bytree],
        };
        CvGrid {
            base: lists(points.iter().map(|p| p.base).collect()),
            refine: lists(points.iter().map(|p| p.refine).collect()),
        }
    }

    #[test]
    fn single_point_grid() {
        let (train, test) = fixture();
        let grid = grid_of(&[point(5)]);
        let r = cross_validate(&train, &test, &grid, 3, Method::Mr, &MrConfig::default()).unwrap();
        assert_eq!(r.best, point(5));
        assert_eq!(r.fold_reports.len(), 3);
    }

    #[test]
    fn dominating_point_wins_in_any_order() {
        let (train, test) = fixture();
        // base models with few trees leave structure that refinement removes
        let a = cross_validate(&train, &test, &grid_of(&[point(0), point(25)]), 3, Method::Mr, &MrConfig::default()).unwrap();
        let b = cross_validate(&train, &test, &grid_of(&[point(25), point(0)]), 3, Method::Mr, &MrConfig::default()).unwrap();
        assert_eq!(a.best, point(25));
        assert_eq!(a.best, b.best);
        let s0 = &a.scores.iter().find(|s| s.point == point(0)).unwrap().fold_scores;
        let s25 = &a.scores.iter().find(|s| s.point == point(25)).unwrap().fold_scores;
        for (x, y) in s0.iter().zip(s25) {
            assert!(y.unwrap() < x.unwrap());
        }
    }

    #[test]
    fn default_grid_shape() {
        let g = CvGrid::default();
        assert_eq!(g.points().unwrap().len(), 96 * 144);
        let mut empty = g.clone();
        empty.refine.max_depth.clear();
        assert!(empty.points().is_err());
    }
}
