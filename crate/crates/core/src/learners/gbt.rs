//! Second-order gradient-boosted regression trees on quantile histograms.
//!
//! Each round computes per-row gradients `g` and hessians `h` of the loss at
//! the current margin (multiplied by the sample weight), grows one tree per
//! margin column depth-wise, and scores candidate splits with
//! `½ [G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)]`. Leaves hold
//! `−G/(H+λ) · learning_rate`. Margins start from a caller-supplied base
//! margin when given, so the ensemble learns an additive correction to it.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::LossKind;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng, subsample_sorted};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtConfig {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub subsample: f64,
    pub colsample_bytree: f64,
    /// Minimum hessian sum in each child of a split.
    pub min_child_weight: f64,
    /// L2 penalty λ on leaf values.
    pub leaf_l2: f64,
    pub n_bins: usize,
    pub seed: u64,
}

impl Default for GbtConfig {
    /// Same values as [`GbtConfig::global_default`].
    fn default() -> Self {
        GbtConfig::global_default()
    }
}

impl GbtConfig {
    /// Stock settings of common boosting libraries, used for global models.
    pub fn global_default() -> Self {
        GbtConfig {
            n_estimators: 100,
            max_depth: 6,
            learning_rate: 0.3,
            subsample: 1.0,
            colsample_bytree: 1.0,
            min_child_weight: 1.0,
            leaf_l2: 1.0,
            n_bins: 256,
            seed: 0,
        }
    }

    /// Defaults for base models trained on segment clusters.
    pub fn cluster_default() -> Self {
        GbtConfig {
            n_estimators: 200,
            max_depth: 3,
            learning_rate: 0.1,
            subsample: 0.8,
            colsample_bytree: 1.0,
            ..GbtConfig::global_default()
        }
    }

    /// Defaults for the per-segment refinement on top of the stacked margin.
    pub fn refine_default() -> Self {
        GbtConfig {
            n_estimators: 25,
            max_depth: 2,
            ..GbtConfig::global_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must lie in (0, 1], got {v}")))
            }
        };
        unit("subsample", self.subsample)?;
        unit("colsample_bytree", self.colsample_bytree)?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.min_child_weight >= 0.0 && self.leaf_l2 >= 0.0) {
            return Err(Error::invalid("min_child_weight and leaf_l2 must be >= 0"));
        }
        if !(2..=u16::MAX as usize).contains(&self.n_bins) {
            return Err(Error::invalid(format!("n_bins must lie in 2..=65535, got {}", self.n_bins)));
        }
        Ok(())
    }
}

/// One node of a flat tree. Leaves have no feature and no children; rows
/// with `x[feature] <= threshold` go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub feature: Option<usize>,
    pub threshold: f64,
    pub left: Option<usize>,
    pub right: Option<usize>,
    pub leaf_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    fn leaf(value: f64) -> TreeNode {
        TreeNode {
            feature: None,
            threshold: 0.0,
            left: None,
            right: None,
            leaf_value: value,
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            let node = &self.nodes[at];
            match (node.feature, node.left, node.right) {
                (Some(f), Some(l), Some(r)) => {
                    at = if row[f] <= node.threshold { l } else { r };
                }
                _ => return node.leaf_value,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, at: usize) -> usize {
            match (t.nodes[at].left, t.nodes[at].right) {
                (Some(l), Some(r)) => 1 + walk(t, l).max(walk(t, r)),
                _ => 0,
            }
        }
        walk(self, 0)
    }
}

/// Fitted boosted ensemble. `rounds[r][k]` is the round-`r` tree for margin
/// column `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub loss: LossKind,
    pub learning_rate: f64,
    pub n_features: usize,
    /// Constant starting margin; `None` when trained on a base margin, which
    /// the caller must then supply again at prediction time.
    pub init_margin: Option<Vec<f64>>,
    pub rounds: Vec<Vec<Tree>>,
}

impl GbtModel {
    pub fn n_trees(&self) -> usize {
        self.rounds.iter().map(Vec::len).sum()
    }

    pub fn predict_margin(
        &self,
        x: &ArrayView2<f64>,
        base_margin: Option<&ArrayView2<f64>>,
    ) -> Result<Array2<f64>> {
        self.predict_margin_rounds(x, base_margin, self.rounds.len())
    }

    /// Margins using only the first `n_rounds` boosting rounds.
    pub fn predict_margin_rounds(
        &self,
        x: &ArrayView2<f64>,
        base_margin: Option<&ArrayView2<f64>>,
        n_rounds: usize,
    ) -> Result<Array2<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.ncols(),
            });
        }
        let width = self.loss.width();
        let n = x.nrows();
        let mut out = start_margins(n, width, base_margin, self.init_margin.as_deref())?;
        let mut row = vec![0.0; x.ncols()];
        for i in 0..n {
            for (j, v) in row.iter_mut().enumerate() {
                *v = x[[i, j]];
            }
            for trees in self.rounds.iter().take(n_rounds) {
                for (k, t) in trees.iter().enumerate() {
                    out[[i, k]] += t.predict_row(&row);
                }
            }
        }
        Ok(out)
    }
}

fn start_margins(
    n: usize,
    width: usize,
    base_margin: Option<&ArrayView2<f64>>,
    init: Option<&[f64]>,
) -> Result<Array2<f64>> {
    match base_margin {
        Some(b) => {
            if b.dim() != (n, width) {
                return Err(Error::DimensionMismatch {
                    expected: n * width,
                    got: b.len(),
                });
            }
            Ok(b.to_owned())
        }
        None => {
            let mut m = Array2::zeros((n, width));
            if let Some(init) = init {
                for mut r in m.outer_iter_mut() {
                    for (v, c) in r.iter_mut().zip(init) {
                        *v = *c;
                    }
                }
            }
            Ok(m)
        }
    }
}

/// Quantile cut points and per-row bin codes for every feature.
struct Binned {
    cuts: Vec<Vec<f64>>,
    codes: Vec<Vec<u16>>,
}

impl Binned {
    fn new(x: &ArrayView2<f64>, n_bins: usize) -> Binned {
        let (n, d) = x.dim();
        let cols: Vec<(Vec<f64>, Vec<u16>)> = (0..d)
            .into_par_iter()
            .map(|j| {
                let col: Vec<f64> = x.column(j).to_vec();
                let cuts = cut_points(&col, n_bins);
                let codes = col
                    .iter()
                    .map(|&v| cuts.partition_point(|&c| c < v) as u16)
                    .collect();
                (cuts, codes)
            })
            .collect();
        debug_assert!(cols.iter().all(|(_, c)| c.len() == n));
        let (cuts, codes) = cols.into_iter().unzip();
        Binned { cuts, codes }
    }
}

fn cut_points(col: &[f64], n_bins: usize) -> Vec<f64> {
    let mut v = col.to_vec();
    v.sort_by(f64::total_cmp);
    let mut uniq = v.clone();
    uniq.dedup();
    if uniq.len() <= 1 {
        return Vec::new();
    }
    if uniq.len() <= n_bins {
        return uniq.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    let n = v.len();
    let max = v[n - 1];
    let mut cuts: Vec<f64> = (1..n_bins)
        .map(|q| v[(q * n / n_bins).max(1) - 1])
        .filter(|&c| c < max)
        .collect();
    cuts.dedup();
    cuts
}

struct Split {
    gain: f64,
    feature: usize,
    bin: usize,
}

struct Grower<'a> {
    binned: &'a Binned,
    g: &'a [f64],
    h: &'a [f64],
    cfg: &'a GbtConfig,
    features: &'a [usize],
}

impl Grower<'_> {
    fn sums(&self, rows: &[usize]) -> (f64, f64) {
        rows.iter()
            .fold((0.0, 0.0), |(g, h), &i| (g + self.g[i], h + self.h[i]))
    }

    fn leaf_value(&self, g: f64, h: f64) -> f64 {
        let denom = h + self.cfg.leaf_l2;
        if denom > 0.0 {
            -g / denom * self.cfg.learning_rate
        } else {
            0.0
        }
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        let denom = h + self.cfg.leaf_l2;
        if denom > 0.0 {
            g * g / denom
        } else {
            0.0
        }
    }

    fn best_for_feature(&self, f: usize, rows: &[usize], g: f64, h: f64) -> Option<Split> {
        let nb = self.binned.cuts[f].len() + 1;
        if nb < 2 {
            return None;
        }
        let codes = &self.binned.codes[f];
        let mut hist = vec![(0.0f64, 0.0f64, 0usize); nb];
        for &i in rows {
            let b = &mut hist[codes[i] as usize];
            b.0 += self.g[i];
            b.1 += self.h[i];
            b.2 += 1;
        }
        let parent = self.score(g, h);
        let mcw = self.cfg.min_child_weight;
        let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0usize);
        let mut best: Option<Split> = None;
        for (b, bin) in hist.iter().enumerate().take(nb - 1) {
            gl += bin.0;
            hl += bin.1;
            cl += bin.2;
            let (gr, hr, cr) = (g - gl, h - hl, rows.len() - cl);
            if cl == 0 || cr == 0 || hl < mcw || hr < mcw {
                continue;
            }
            if hl + self.cfg.leaf_l2 <= 0.0 || hr + self.cfg.leaf_l2 <= 0.0 {
                continue;
            }
            let gain = 0.5 * (self.score(gl, hl) + self.score(gr, hr) - parent);
            if gain > 0.0 && best.as_ref().is_none_or(|s| gain > s.gain) {
                best = Some(Split {
                    gain,
                    feature: f,
                    bin: b,
                });
            }
        }
        best
    }

    fn best_split(&self, rows: &[usize], g: f64, h: f64) -> Option<Split> {
        let per_feature: Vec<Option<Split>> = if rows.len() * self.features.len() >= 16_384 {
            self.features
                .par_iter()
                .map(|&f| self.best_for_feature(f, rows, g, h))
                .collect()
        } else {
            self.features
                .iter()
                .map(|&f| self.best_for_feature(f, rows, g, h))
                .collect()
        };
        // first strictly-better candidate wins: ties go to the lower feature
        per_feature.into_iter().flatten().fold(None, |acc, s| match acc {
            Some(a) if a.gain >= s.gain => Some(a),
            _ => Some(s),
        })
    }

    /// Grows one tree; also returns the split bin of every node for
    /// evaluating the tree on the binned training rows.
    fn grow(&self, rows: Vec<usize>) -> (Tree, Vec<usize>) {
        let mut nodes = vec![Tree::leaf(0.0)];
        let mut bins = vec![0usize];
        let mut stack = vec![(0usize, rows, 0usize)];
        while let Some((at, rows, depth)) = stack.pop() {
            let (g, h) = self.sums(&rows);
            let split = if depth < self.cfg.max_depth && rows.len() >= 2 {
                self.best_split(&rows, g, h)
            } else {
                None
            };
            match split {
                None => nodes[at] = Tree::leaf(self.leaf_value(g, h)),
                Some(s) => {
                    let codes = &self.binned.codes[s.feature];
                    let (left, right): (Vec<usize>, Vec<usize>) =
                        rows.iter().partition(|&&i| codes[i] as usize <= s.bin);
                    let l = nodes.len();
                    nodes.push(Tree::leaf(0.0));
                    nodes.push(Tree::leaf(0.0));
                    bins.extend([0, 0]);
                    bins[at] = s.bin;
                    nodes[at] = TreeNode {
                        feature: Some(s.feature),
                        threshold: self.binned.cuts[s.feature][s.bin],
                        left: Some(l),
                        right: Some(l + 1),
                        leaf_value: 0.0,
                    };
                    stack.push((l + 1, right, depth + 1));
                    stack.push((l, left, depth + 1));
                }
            }
        }
        (Tree { nodes }, bins)
    }
}

/// Fits a boosted tree ensemble. With a `base_margin` (shape `n × width`)
/// boosting starts from it; otherwise from the loss's constant initializer.
pub fn fit_gbt(
    x: &ArrayView2<f64>,
    y: &[f64],
    loss: LossKind,
    cfg: &GbtConfig,
    sample_weight: Option<&[f64]>,
    base_margin: Option<&ArrayView2<f64>>,
) -> Result<GbtModel> {
    cfg.validate()?;
    let (n, d) = x.dim();
    if n == 0 {
        return Err(Error::Empty("no rows to fit".into()));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if let Some(w) = sample_weight {
        if w.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: w.len(),
            });
        }
    }
    let width = loss.width();
    let init_margin = match base_margin {
        Some(_) => None,
        None => Some(loss.initial_margin(y, sample_weight)),
    };
    let mut margin = start_margins(n, width, base_margin, init_margin.as_deref())?;
    let binned = Binned::new(x, cfg.n_bins);

    let mut g = vec![0.0; n * width];
    let mut h = vec![0.0; n * width];
    let mut gk = vec![0.0; n];
    let mut hk = vec![0.0; n];
    let mut rounds = Vec::with_capacity(cfg.n_estimators);
    let n_rows = ((cfg.subsample * n as f64).round() as usize).clamp(1, n);
    let n_cols = ((cfg.colsample_bytree * d as f64).ceil() as usize).clamp(1, d.max(1));

    for r in 0..cfg.n_estimators {
        for i in 0..n {
            let row = margin.row(i);
            let m = row.as_slice().expect("row-major margins");
            loss.grad_hess(y[i], m, &mut g[i * width..(i + 1) * width], &mut h[i * width..(i + 1) * width]);
            if let Some(w) = sample_weight {
                for k in 0..width {
                    g[i * width + k] *= w[i];
                    h[i * width + k] *= w[i];
                }
            }
        }
        if g.iter().chain(&h).any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient in round {r}")));
        }
        let rows = if n_rows < n {
            subsample_sorted(n, n_rows, &mut rng(derive_seed(cfg.seed, 2 * r as u64)))
        } else {
            (0..n).collect()
        };
        let mut trees = Vec::with_capacity(width);
        for k in 0..width {
            let features = if n_cols < d {
                let stream = derive_seed(cfg.seed, 2 * r as u64 + 1);
                subsample_sorted(d, n_cols, &mut rng(derive_seed(stream, k as u64)))
            } else {
                (0..d).collect()
            };
            for i in 0..n {
                gk[i] = g[i * width + k];
                hk[i] = h[i * width + k];
            }
            let grower = Grower {
                binned: &binned,
                g: &gk,
                h: &hk,
                cfg,
                features: &features,
            };
            let (tree, split_bins) = grower.grow(rows.clone());
            for i in 0..n {
                margin[[i, k]] += predict_binned(&tree, &split_bins, &binned, i);
            }
            trees.push(tree);
        }
        rounds.push(trees);
    }
    Ok(GbtModel {
        loss,
        learning_rate: cfg.learning_rate,
        n_features: d,
        init_margin,
        rounds,
    })
}

fn predict_binned(tree: &Tree, split_bins: &[usize], binned: &Binned, i: usize) -> f64 {
    let mut at = 0;
    loop {
        let node = &tree.nodes[at];
        match (node.feature, node.left, node.right) {
            (Some(f), Some(l), Some(r)) => {
                at = if binned.codes[f][i] as usize <= split_bins[at] { l } else { r };
            }
            _ => return node.leaf_value,
        }
    }
}
