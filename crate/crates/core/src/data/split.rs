use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng, shuffled};

/// Partition of the training rows into a base-model part and a tuning part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub base: Vec<usize>,
    pub tune: Vec<usize>,
    pub varsigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
}

/// Random base/tune partition with `|base| / n ≈ varsigma`, stratified by
/// segment. When the dataset carries group ids, whole groups are assigned
/// to one side.
pub fn split_base_tune(data: &Dataset, varsigma: f64, seed: u64) -> Result<SplitPlan> {
    if !(varsigma > 0.0 && varsigma < 1.0) {
        return Err(Error::invalid(format!(
            "varsigma must lie in (0, 1), got {varsigma}"
        )));
    }
    let seg_rows = data.segment_rows();
    for (s, rows) in seg_rows.iter().enumerate() {
        if rows.len() == 1 {
            return Err(Error::SegmentTooSmall {
                segment: data.segment_names()[s].clone(),
                rows: 1,
                needed: 2,
            });
        }
    }
    let n = data.n_rows();
    let target = (varsigma * n as f64).round() as usize;

    let (mut base, mut tune) = match data.groups() {
        Some(groups) => split_groups(groups, target, seed),
        None => split_stratified(&seg_rows, varsigma, target, seed),
    };
    base.sort_unstable();
    tune.sort_unstable();
    Ok(SplitPlan {
        base,
        tune,
        varsigma,
    })
}

fn split_stratified(
    seg_rows: &[Vec<usize>],
    varsigma: f64,
    target: usize,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    // largest-remainder allocation of `target` base rows across segments
    let mut counts: Vec<usize> = Vec::with_capacity(seg_rows.len());
    let mut order: Vec<(f64, u64, usize)> = Vec::new();
    let mut tie = rng(derive_seed(seed, u64::MAX));
    for (s, rows) in seg_rows.iter().enumerate() {
        let exact = varsigma * rows.len() as f64;
        counts.push(exact.floor() as usize);
        if !rows.is_empty() {
            order.push((exact - exact.floor(), tie.random::<u64>(), s));
        }
    }
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut extra = target.saturating_sub(counts.iter().sum());
    for &(_, _, s) in &order {
        if extra == 0 {
            break;
        }
        if counts[s] < seg_rows[s].len() {
            counts[s] += 1;
            extra -= 1;
        }
    }

    let mut base = Vec::new();
    let mut tune = Vec::new();
    for (s, rows) in seg_rows.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let take = counts[s].clamp(1, rows.len() - 1);
        let mut r = rng(derive_seed(seed, s as u64));
        let perm = shuffled(rows.clone(), &mut r);
        base.extend_from_slice(&perm[..take]);
        tune.extend_from_slice(&perm[take..]);
    }
    (base, tune)
}

fn group_members(groups: &[usize]) -> Vec<Vec<usize>> {
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &g) in groups.iter().enumerate() {
        members.entry(g).or_default().push(i);
    }
    members.into_values().collect()
}

fn split_groups(groups: &[usize], target: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let members = group_members(groups);
    let mut r = rng(seed);
    let order = shuffled((0..members.len()).collect(), &mut r);
    let mut base = Vec::new();
    let mut tune = Vec::new();
    for (pos, &g) in order.iter().enumerate() {
        let rows = &members[g];
        let closer = base.len() + rows.len() <= target
            || (base.len() + rows.len() - target) < target.saturating_sub(base.len());
        let last_for_tune = pos + 1 == order.len() && tune.is_empty();
        if (closer || base.is_empty()) && !last_for_tune {
            base.extend_from_slice(rows);
        } else {
            tune.extend_from_slice(rows);
        }
    }
    (base, tune)
}

/// `k` folds whose validation sets partition the rows, stratified by segment,
/// or by whole groups when group ids are present.
pub fn kfold_plan(data: &Dataset, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::invalid(format!("k-fold needs k >= 2, got {k}")));
    }
    let n = data.n_rows();
    let seg_rows = data.segment_rows();
    for (s, rows) in seg_rows.iter().enumerate() {
        if !rows.is_empty() && rows.len() < k {
            return Err(Error::SegmentTooSmall {
                segment: data.segment_names()[s].clone(),
                rows: rows.len(),
                needed: k,
            });
        }
    }

    let mut fold_of = vec![0usize; n];
    match data.groups() {
        Some(groups) => {
            let members = group_members(groups);
            if members.len() < k {
                return Err(Error::invalid(format!(
                    "{} groups cannot fill {k} folds",
                    members.len()
                )));
            }
            let mut r = rng(seed);
            let mut order = shuffled((0..members.len()).collect(), &mut r);
            order.sort_by_key(|&g| std::cmp::Reverse(members[g].len()));
            let mut sizes = vec![0usize; k];
            for g in order {
                let f = (0..k).min_by_key(|&f| (sizes[f], f)).unwrap_or(0);
                sizes[f] += members[g].len();
                for &i in &members[g] {
                    fold_of[i] = f;
                }
            }
        }
        None => {
            let mut offset = 0;
            for (s, rows) in seg_rows.iter().enumerate() {
                let mut r = rng(derive_seed(seed, s as u64));
                for (j, i) in shuffled(rows.clone(), &mut r).into_iter().enumerate() {
                    fold_of[i] = (offset + j) % k;
                }
                offset += rows.len();
            }
        }
    }

    Ok((0..k)
        .map(|f| {
            let (valid, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| fold_of[i] == f);
            Fold { train, valid }
        })
        .collect())
}
