//! Segment similarity and clustering.
//!
//! Segments are compared through the unbiased MMD U-statistic between their
//! joint `(y, x)` training samples under a product kernel (Gaussian on
//! continuous dimensions, delta on categorical ones). The resulting distance
//! matrix is clustered with Ward-linkage agglomeration.

use std::cmp::Ordering;

use ndarray::{concatenate, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng, subsample_sorted};

/// Rows used by the median heuristic.
pub const MEDIAN_SUBSAMPLE: usize = 1000;
pub const DEFAULT_MAX_PER_SEGMENT: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise distance of the pooled sample.
    Median,
}

/// Product kernel: delta kernel `I(a = b)` on the listed categorical
/// columns times a Gaussian `exp(−‖a − b‖² / 2σ²)` on the rest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub bandwidth: Bandwidth,
    pub categorical: Vec<usize>,
}

impl KernelSpec {
    pub fn gaussian(bandwidth: Bandwidth) -> Self {
        KernelSpec {
            bandwidth,
            categorical: Vec::new(),
        }
    }

    /// Delta kernel on every one of `d` columns.
    pub fn delta(d: usize) -> Self {
        KernelSpec {
            bandwidth: Bandwidth::Fixed(1.0),
            categorical: (0..d).collect(),
        }
    }

    /// Kernel over joint `[y, x]` rows: the label column is categorical for
    /// classification and continuous for regression.
    pub fn joint(classification: bool) -> Self {
        KernelSpec {
            bandwidth: Bandwidth::Median,
            categorical: if classification { vec![0] } else { Vec::new() },
        }
    }

    fn validate(&self) -> Result<()> {
        if let Bandwidth::Fixed(b) = self.bandwidth {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::invalid(format!("bandwidth must be positive, got {b}")));
            }
        }
        Ok(())
    }

    fn continuous_columns(&self, d: usize) -> Vec<usize> {
        (0..d).filter(|j| !self.categorical.contains(j)).collect()
    }

    /// Fixes the bandwidth, using `sample` for the median heuristic.
    pub fn resolve(&self, sample: &ArrayView2<f64>, seed: u64) -> Result<ResolvedKernel> {
        self.validate()?;
        let d = sample.ncols();
        let continuous = self.continuous_columns(d);
        let sigma = match self.bandwidth {
            Bandwidth::Fixed(b) => b,
            Bandwidth::Median => {
                if continuous.is_empty() {
                    1.0
                } else {
                    median_bandwidth(&sample.select(Axis(1), &continuous).view(), seed)
                }
            }
        };
        Ok(ResolvedKernel {
            inv_two_sigma2: 1.0 / (2.0 * sigma * sigma),
            bandwidth: sigma,
            categorical: (0..d).map(|j| self.categorical.contains(&j)).collect(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct ResolvedKernel {
    pub bandwidth: f64,
    inv_two_sigma2: f64,
    categorical: Vec<bool>,
}

impl ResolvedKernel {
    pub fn eval(&self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        let mut sq = 0.0;
        for ((x, y), &cat) in a.iter().zip(b.iter()).zip(&self.categorical) {
            if cat {
                if x != y {
                    return 0.0;
                }
            } else {
                sq += (x - y) * (x - y);
            }
        }
        (-sq * self.inv_two_sigma2).exp()
    }

    /// `Σ_{i≠j} k(u_i, u_j)`.
    fn within_sum(&self, u: &ArrayView2<f64>) -> f64 {
        let m = u.nrows();
        let rows: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|i| {
                let ui = u.row(i);
                (i + 1..m).map(|j| self.eval(ui, u.row(j))).sum::<f64>()
            })
            .collect();
        2.0 * rows.iter().sum::<f64>()
    }

    /// `Σ_i Σ_j k(u_i, v_j)`.
    fn cross_sum(&self, u: &ArrayView2<f64>, v: &ArrayView2<f64>) -> f64 {
        let rows: Vec<f64> = (0..u.nrows())
            .into_par_iter()
            .map(|i| {
                let ui = u.row(i);
                v.outer_iter().map(|vj| self.eval(ui, vj)).sum::<f64>()
            })
            .collect();
        rows.iter().sum()
    }

    /// Unbiased squared MMD between two samples.
    pub fn mmd(&self, u: &ArrayView2<f64>, v: &ArrayView2<f64>) -> f64 {
        let (u, v) = canonical_order(u, v);
        let (m1, m2) = (u.nrows() as f64, v.nrows() as f64);
        self.within_sum(&u) / (m1 * (m1 - 1.0)) + self.within_sum(&v) / (m2 * (m2 - 1.0))
            - 2.0 * self.cross_sum(&u, &v) / (m1 * m2)
    }
}

/// Orders two samples deterministically so that floating-point sums do not
/// depend on argument order.
fn canonical_order<'a>(
    u: &ArrayView2<'a, f64>,
    v: &ArrayView2<'a, f64>,
) -> (ArrayView2<'a, f64>, ArrayView2<'a, f64>) {
    let ord = u.nrows().cmp(&v.nrows()).then_with(|| {
        u.iter()
            .zip(v.iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    if ord == Ordering::Greater {
        (*v, *u)
    } else {
        (*u, *v)
    }
}

/// Unbiased MMD U-statistic between samples `u` (m1 × d) and `v` (m2 × d).
/// A median bandwidth is taken from the pooled sample.
pub fn mmd_unbiased(u: &ArrayView2<f64>, v: &ArrayView2<f64>, kernel: &KernelSpec) -> Result<f64> {
    if u.nrows() < 2 || v.nrows() < 2 {
        return Err(Error::invalid(format!(
            "MMD needs at least 2 rows per sample, got {} and {}",
            u.nrows(),
            v.nrows()
        )));
    }
    if u.ncols() != v.ncols() {
        return Err(Error::DimensionMismatch {
            expected: u.ncols(),
            got: v.ncols(),
        });
    }
    let (a, b) = canonical_order(u, v);
    let pooled = concatenate(Axis(0), &[a, b]).expect("equal widths");
    let k = kernel.resolve(&pooled.view(), 0)?;
    Ok(k.mmd(u, v))
}

/// Median pairwise Euclidean distance over at most [`MEDIAN_SUBSAMPLE`]
/// rows; 1.0 when that median is zero or there are fewer than two rows.
pub fn median_bandwidth(x: &ArrayView2<f64>, seed: u64) -> f64 {
    let n = x.nrows();
    if n < 2 {
        return 1.0;
    }
    let idx = subsample_sorted(n, MEDIAN_SUBSAMPLE, &mut rng(seed));
    let mut dists = Vec::with_capacity(idx.len() * (idx.len() - 1) / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            let d2: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j).iter())
                .map(|(p, q)| (p - q) * (p - q))
                .sum();
            dists.push(d2.sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let med = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if med > 0.0 && med.is_finite() {
        med
    } else {
        1.0
    }
}

/// Symmetric matrix of floored MMD values between segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentDistanceMatrix {
    pub values: Array2<f64>,
    /// Segment id of each row/column.
    pub segments: Vec<usize>,
}

impl SegmentDistanceMatrix {
    pub fn new(values: Array2<f64>, segments: Vec<usize>) -> Result<Self> {
        let n = segments.len();
        if values.dim() != (n, n) {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                got: values.len(),
            });
        }
        for i in 0..n {
            for j in 0..n {
                if values[[i, j]] != values[[j, i]] || !values[[i, j]].is_finite() {
                    return Err(Error::invalid("distance matrix must be finite and symmetric"));
                }
            }
        }
        Ok(SegmentDistanceMatrix { values, segments })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

/// Joint `[y, x]` rows of a dataset.
pub fn joint_sample(data: &Dataset, rows: &[usize]) -> Array2<f64> {
    let d = data.n_features();
    let mut out = Array2::zeros((rows.len(), d + 1));
    for (r, &i) in rows.iter().enumerate() {
        out[[r, 0]] = data.labels()[i];
        for j in 0..d {
            out[[r, j + 1]] = data.features()[[i, j]];
        }
    }
    out
}

/// MMD between the joint `(y, x)` samples of every pair of segments present
/// in `train`. `kernel` addresses the joint columns (label first). Segments
/// larger than `max_per_segment` are subsampled; negative estimates are
/// floored at zero.
pub fn segment_distance_matrix(
    train: &Dataset,
    kernel: &KernelSpec,
    max_per_segment: usize,
    seed: u64,
) -> Result<SegmentDistanceMatrix> {
    let all_rows = train.segment_rows();
    let mut ids = Vec::new();
    let mut samples = Vec::new();
    for (s, rows) in all_rows.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        if rows.len() < 2 {
            return Err(Error::SegmentTooSmall {
                segment: train.segment_names()[s].clone(),
                rows: rows.len(),
                needed: 2,
            });
        }
        let keep = subsample_sorted(rows.len(), max_per_segment.max(2), &mut rng(derive_seed(seed, s as u64)));
        let chosen: Vec<usize> = keep.iter().map(|&k| rows[k]).collect();
        ids.push(s);
        samples.push(joint_sample(train, &chosen));
    }
    let n = ids.len();
    if n == 0 {
        return Err(Error::Empty("no segments".into()));
    }
    let views: Vec<ArrayView2<f64>> = samples.iter().map(|s| s.view()).collect();
    let pooled = concatenate(Axis(0), &views).expect("equal widths");
    let k = kernel.resolve(&pooled.view(), seed)?;

    let within: Vec<f64> = samples
        .iter()
        .map(|s| {
            let m = s.nrows() as f64;
            k.within_sum(&s.view()) / (m * (m - 1.0))
        })
        .collect();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let cross: Vec<f64> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (m1, m2) = (samples[a].nrows() as f64, samples[b].nrows() as f64);
            k.cross_sum(&samples[a].view(), &samples[b].view()) / (m1 * m2)
        })
        .collect();
    let mut values = Array2::zeros((n, n));
    for (&(a, b), c) in pairs.iter().zip(cross) {
        let v = (within[a] + within[b] - 2.0 * c).max(0.0);
        values[[a, b]] = v;
        values[[b, a]] = v;
    }
    Ok(SegmentDistanceMatrix { values, segments: ids })
}

/// Disjoint, nonempty segment clusters covering the clustered segments.
/// The all-segments group is implicit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Segment ids per cluster; sorted within and ordered by smallest member.
    pub clusters: Vec<Vec<usize>>,
}

impl ClusterAssignment {
    /// Validates and normalizes an explicit partition of `segments`.
    pub fn new(mut clusters: Vec<Vec<usize>>, segments: &[usize]) -> Result<Self> {
        if clusters.is_empty() || clusters.iter().any(Vec::is_empty) {
            return Err(Error::invalid("clusters must be nonempty"));
        }
        for c in clusters.iter_mut() {
            c.sort_unstable();
        }
        clusters.sort();
        let mut flat: Vec<usize> = clusters.iter().flatten().copied().collect();
        flat.sort_unstable();
        let mut expect = segments.to_vec();
        expect.sort_unstable();
        if flat != expect {
            return Err(Error::invalid(
                "clusters must partition the training segments exactly",
            ));
        }
        Ok(ClusterAssignment { clusters })
    }

    /// Every segment in its own cluster... or all in one.
    pub fn single(segments: &[usize]) -> Self {
        let mut all = segments.to_vec();
        all.sort_unstable();
        ClusterAssignment {
            clusters: vec![all],
        }
    }

    pub fn m(&self) -> usize {
        self.clusters.len()
    }

    pub fn cluster_of(&self, segment: usize) -> Option<usize> {
        self.clusters.iter().position(|c| c.contains(&segment))
    }
}

/// One agglomeration step: the two merged clusters (matrix positions) and
/// the Ward linkage value at which they merged.
#[derive(Clone, Debug, PartialEq)]
pub struct Merge {
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    pub height: f64,
}

/// Full Ward agglomeration of `d`, treating entries as squared distances
/// (Lance–Williams update). Ties go to the pair with the smallest
/// `(min member, min member)` positions.
pub fn ward_linkage(d: &SegmentDistanceMatrix) -> Vec<Merge> {
    let n = d.len();
    let mut dist = d.values.clone();
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut active: Vec<bool> = vec![true; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for _ in 1..n {
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..n {
            if !active[a] {
                continue;
            }
            for b in a + 1..n {
                if active[b] && best.is_none_or(|(_, _, v)| dist[[a, b]] < v) {
                    best = Some((a, b, dist[[a, b]]));
                }
            }
        }
        let (a, b, height) = best.expect("at least two active clusters");
        let (na, nb) = (members[a].len() as f64, members[b].len() as f64);
        for k in 0..n {
            if !active[k] || k == a || k == b {
                continue;
            }
            let nk = members[k].len() as f64;
            let v = ((na + nk) * dist[[k, a]] + (nb + nk) * dist[[k, b]] - nk * height)
                / (na + nb + nk);
            dist[[k, a]] = v;
            dist[[a, k]] = v;
        }
        merges.push(Merge {
            left: members[a].clone(),
            right: members[b].clone(),
            height,
        });
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
        members[a].sort_unstable();
        active[b] = false;
    }
    merges
}

/// Ward clustering of the segments in `d` cut at `m` clusters.
pub fn cluster_segments(d: &SegmentDistanceMatrix, m: usize) -> Result<ClusterAssignment> {
    let n = d.len();
    if m < 1 || m > n {
        return Err(Error::invalid(format!(
            "cluster count {m} outside 1..={n}"
        )));
    }
    let mut groups: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for merge in ward_linkage(d).into_iter().take(n - m) {
        let a = groups.iter().position(|g| *g == merge.left).expect("tracked cluster");
        let b = groups.iter().position(|g| *g == merge.right).expect("tracked cluster");
        let moved = std::mem::take(&mut groups[b]);
        groups[a].extend(moved);
        groups[a].sort_unstable();
        groups.remove(b);
    }
    let clusters = groups
        .into_iter()
        .map(|g| g.into_iter().map(|p| d.segments[p]).collect())
        .collect();
    ClusterAssignment::new(clusters, &d.segments)
}

/// Largest `m` whose Ward cut has no cluster smaller than `min_cluster_size`;
/// 1 when no cut qualifies.
pub fn choose_num_clusters(d: &SegmentDistanceMatrix, min_cluster_size: usize) -> usize {
    let n = d.len();
    if n == 0 {
        return 1;
    }
    let merges = ward_linkage(d);
    let mut groups: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut best = 1;
    let ok = |gs: &[Vec<usize>]| gs.iter().all(|g| g.len() >= min_cluster_size);
    if ok(&groups) {
        return n;
    }
    for merge in merges {
        let a = groups.iter().position(|g| *g == merge.left).expect("tracked");
        let b = groups.iter().position(|g| *g == merge.right).expect("tracked");
        let moved = std::mem::take(&mut groups[b]);
        groups[a].extend(moved);
        groups[a].sort_unstable();
        groups.remove(b);
        if ok(&groups) {
            best = groups.len();
            break;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn constant_identical_samples() {
        let u = array![[0.0], [0.0]];
        for bw in [0.1, 1.0, 7.0] {
            let v = mmd_unbiased(&u.view(), &u.view(), &KernelSpec::gaussian(Bandwidth::Fixed(bw))).unwrap();
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn two_point_closed_form() {
        // brute force over the four cross pairs: 1 + 1 − 2·e^{−c²/2σ²}
        let (c, sigma) = (1.3, 0.7);
        let u = array![[0.0], [0.0]];
        let v = array![[c], [c]];
        let got = mmd_unbiased(&u.view(), &v.view(), &KernelSpec::gaussian(Bandwidth::Fixed(sigma))).unwrap();
        let mut cross = 0.0;
        for a in [0.0, 0.0] {
            for b in [c, c] {
                cross += f64::exp(-(a - b) * (a - b) / (2.0 * sigma * sigma));
            }
        }
        let expect = 1.0 + 1.0 - 2.0 * cross / 4.0;
        assert!((got - expect).abs() < 1e-15);
        assert!((got - 2.0 * (1.0 - (-c * c / (2.0 * sigma * sigma)).exp())).abs() < 1e-15);
    }

    #[test]
    fn delta_kernel_categories() {
        let u = array![[0.0], [0.0]]; // "a", "a"
        let v = array![[1.0], [1.0]]; // "b", "b"
        assert_eq!(mmd_unbiased(&u.view(), &v.view(), &KernelSpec::delta(1)).unwrap(), 2.0);
        assert!(mmd_unbiased(&array![[0.0]].view(), &v.view(), &KernelSpec::delta(1)).is_err());
    }

    #[test]
    fn median_heuristic() {
        assert_eq!(median_bandwidth(&array![[0.0, 0.0], [3.0, 0.0]].view(), 0), 3.0);
        assert_eq!(median_bandwidth(&array![[2.0], [2.0], [2.0]].view(), 0), 1.0);
        assert_eq!(median_bandwidth(&array![[0.0], [1.0], [2.0], [3.0]].view(), 0), 1.5);
    }

    fn gaussian_sample(n: usize, d: usize, shift: f64, seed: u64) -> Array2<f64> {
        let mut r = rng(seed);
        Array2::from_shape_fn((n, d), |_| { let z: f64 = StandardNormal.sample(&mut r); shift + z })
    }

    #[test]
    fn mmd_symmetric_exactly() {
        let u = gaussian_sample(30, 2, 0.0, 1);
        let v = gaussian_sample(45, 2, 0.5, 2);
        for k in [KernelSpec::gaussian(Bandwidth::Median), KernelSpec::gaussian(Bandwidth::Fixed(0.8))] {
            let a = mmd_unbiased(&u.view(), &v.view(), &k).unwrap();
            let b = mmd_unbiased(&v.view(), &u.view(), &k).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn same_distribution_mmd_is_small() {
        // |MMD| < 0.05 in at least 95 of 100 seeded trials at m = 2000
        let kernel = KernelSpec::gaussian(Bandwidth::Median);
        let small = (0..100u64)
            .filter(|&s| {
                let u = gaussian_sample(2000, 2, 0.0, 2 * s);
                let v = gaussian_sample(2000, 2, 0.0, 2 * s + 1);
                mmd_unbiased(&u.view(), &v.view(), &kernel).unwrap().abs() < 0.05
            })
            .count();
        assert!(small >= 95, "{small}");
    }

    fn blocks() -> SegmentDistanceMatrix {
        let v = array![
            [0.0, 0.1, 1.0, 1.0],
            [0.1, 0.0, 1.0, 1.0],
            [1.0, 1.0, 0.0, 0.1],
            [1.0, 1.0, 0.1, 0.0]
        ];
        SegmentDistanceMatrix::new(v, vec![0, 1, 2, 3]).unwrap()
    }

    /// Ward criterion from squared distances: SSE(C) = Σ_{i<j∈C} D_ij / |C|.
    fn sse(d: &Array2<f64>, c: &[usize]) -> f64 {
        let mut s = 0.0;
        for (a, &i) in c.iter().enumerate() {
            for &j in &c[a + 1..] {
                s += d[[i, j]];
            }
        }
        s / c.len() as f64
    }

    #[test]
    fn block_matrix_two_clusters() {
        let d = blocks();
        let c = cluster_segments(&d, 2).unwrap();
        assert_eq!(c.clusters, vec![vec![0, 1], vec![2, 3]]);
        // brute force: the best 2-partition by total within-cluster SSE
        let mut best = (f64::INFINITY, 0u32);
        for mask in 1u32..(1 << 4) - 1 {
            let a: Vec<usize> = (0..4).filter(|i| mask >> i & 1 == 1).collect();
            let b: Vec<usize> = (0..4).filter(|i| mask >> i & 1 == 0).collect();
            let cost = sse(&d.values, &a) + sse(&d.values, &b);
            if cost < best.0 {
                best = (cost, mask);
            }
        }
        let a: Vec<usize> = (0..4).filter(|i| best.1 >> i & 1 == 1).collect();
        assert!(c.clusters.contains(&a));
        assert_eq!(choose_num_clusters(&d, 2), 2);
    }

    #[test]
    fn cut_extremes() {
        let d = blocks();
        assert_eq!(cluster_segments(&d, 4).unwrap().clusters, vec![vec![0], vec![1], vec![2], vec![3]]);
        assert_eq!(cluster_segments(&d, 1).unwrap().clusters, vec![vec![0, 1, 2, 3]]);
        assert!(cluster_segments(&d, 0).is_err());
        assert!(cluster_segments(&d, 5).is_err());
    }

    #[test]
    fn choose_small_cases() {
        let one = SegmentDistanceMatrix::new(array![[0.0]], vec![0]).unwrap();
        assert_eq!(choose_num_clusters(&one, 2), 1);
        let two = SegmentDistanceMatrix::new(array![[0.0, 0.5], [0.5, 0.0]], vec![0, 1]).unwrap();
        assert_eq!(choose_num_clusters(&two, 2), 1);
    }

    fn random_matrix(n: usize, seed: u64) -> SegmentDistanceMatrix {
        // squared distances between random points, so the Ward geometry is Euclidean
        let mut r = rng(seed);
        let pts: Vec<[f64; 2]> = (0..n).map(|_| [r.random::<f64>(), r.random::<f64>()]).collect();
        let v = Array2::from_shape_fn((n, n), |(i, j)| {
            (pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)
        });
        SegmentDistanceMatrix::new(v, (0..n).collect()).unwrap()
    }

    #[test]
    fn ward_matches_brute_force_merges() {
        for seed in 0..50 {
            let n = 3 + (seed as usize % 4);
            let d = random_matrix(n, seed);
            let mut groups: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
            for merge in ward_linkage(&d) {
                // brute force: merge with the smallest SSE increase
                let mut best = (f64::INFINITY, 0, 0);
                for a in 0..groups.len() {
                    for b in a + 1..groups.len() {
                        let mut u = groups[a].clone();
                        u.extend(&groups[b]);
                        let inc = sse(&d.values, &u) - sse(&d.values, &groups[a]) - sse(&d.values, &groups[b]);
                        if inc < best.0 {
                            best = (inc, a, b);
                        }
                    }
                }
                let (_, a, b) = best;
                let mut pair = [groups[a].clone(), groups[b].clone()];
                pair.sort();
                let mut got = [merge.left.clone(), merge.right.clone()];
                got.sort();
                assert_eq!(pair, got, "seed {seed}");
                // Lance–Williams height equals twice the SSE increase
                assert!((merge.height - 2.0 * best.0).abs() < 1e-12);
                let moved = groups.remove(b);
                groups[a].extend(moved);
                groups[a].sort_unstable();
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn relabeling_permutes_clusters(seed in 0u64..1000, m in 1usize..6) {
            let n = 6;
            let d = random_matrix(n, seed);
            let mut perm: Vec<usize> = (0..n).collect();
            let mut r = rng(seed + 7);
            for i in (1..n).rev() {
                perm.swap(i, r.random_range(0..=i));
            }
            // position p of the permuted matrix holds original segment perm[p]
            let pv = Array2::from_shape_fn((n, n), |(i, j)| d.values[[perm[i], perm[j]]]);
            let pd = SegmentDistanceMatrix::new(pv, perm.clone()).unwrap();
            let a = cluster_segments(&d, m).unwrap();
            let b = cluster_segments(&pd, m).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
