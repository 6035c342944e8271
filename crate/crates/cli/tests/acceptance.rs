//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use mrshift_core::data::{
    construct_shift, simulate_local_covshift, Dataset, ShiftConstructionConfig, SyntheticConfig,
    TaskKind,
};
use mrshift_core::evalcv::{metric, MetricKind};
use mrshift_core::learners::{fit_gbt, GbtConfig, LossKind};
use mrshift_core::mr::{fit_stage1, FittedModel, Method, MrConfig, Stage1Options};
use mrshift_core::rng::{derive_seed, rng, Rng};
use mrshift_core::segmentation::{cluster_segments, segment_distance_matrix, KernelSpec};
use mrshift_core::weights::{fit_bbse, fit_discriminative_weights};

struct Outcome {
    pass: bool,
    detail: String,
}

fn normal(r: &mut Rng) -> f64 {
    StandardNormal.sample(r)
}

fn mse(model: &FittedModel, test: &Dataset) -> f64 {
    let pred = model
        .predict(&test.features().view(), test.segments())
        .expect("predict");
    let y = test.labels().to_vec();
    metric(&y, &pred.view(), MetricKind::Mse, None).expect("metric").0
}

/// Test MSE of MR, DR-SF and DR relative to the global GBT, per seed.
fn simulation_relatives(n_train: usize, seeds: u64) -> Vec<[f64; 4]> {
    (0..seeds)
        .map(|seed| {
            let sim = SyntheticConfig {
                n_train,
                seed,
                ..SyntheticConfig::default()
            };
            let (train, test) = simulate_local_covshift(&sim).expect("simulate");
            let features = test.to_features();
            let cfg = MrConfig {
                seed,
                ..MrConfig::default()
            };
            let mut out = [0.0; 4];
            for (k, method) in [Method::Mr, Method::DrSf, Method::Dr, Method::Gbt].into_iter().enumerate() {
                let model = FittedModel::fit(method, &train, &features, &cfg).expect("fit");
                out[k] = mse(&model, &test);
            }
            [out[0] / out[3], out[1] / out[3], out[2] / out[3], out[0] - out[3]]
        })
        .collect()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn criteria_1_and_2() -> (Outcome, Outcome) {
    let start = Instant::now();
    let small = simulation_relatives(1_000, 20);
    let large = simulation_relatives(10_000, 20);
    let elapsed = start.elapsed();
    let wins = large.iter().filter(|r| r[3] < 0.0).count();
    let mr_small = mean(small.iter().map(|r| r[0]));
    let mr_large = mean(large.iter().map(|r| r[0]));
    let drsf = mean(large.iter().map(|r| r[1]));
    let dr = mean(large.iter().map(|r| r[2]));
    let c1 = Outcome {
        pass: wins >= 18 && mr_large < mr_small && elapsed <= Duration::from_secs(300),
        detail: format!(
            "MR beats GBT in {wins}/20 seeds at n=10000; mean MR relative MSE {mr_small:.4} (n=1000) -> {mr_large:.4} (n=10000); {:.1}s",
            elapsed.as_secs_f64()
        ),
    };
    let c2 = Outcome {
        pass: mr_large < drsf && drsf <= dr * 1.02,
        detail: format!("mean relative MSE at n=10000: MR {mr_large:.4}, DR-SF {drsf:.4}, DR {dr:.4}"),
    };
    (c1, c2)
}

fn gaussian_rows(n: usize, mean: &[f64], r: &mut Rng) -> Array2<f64> {
    Array2::from_shape_fn((n, mean.len()), |(_, j)| mean[j] + normal(r))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let means = [[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]];
    let source_prior = [0.4, 0.4, 0.2];
    let truth = [0.5, 1.0, 2.0];
    let target_prior: Vec<f64> = (0..3).map(|k| source_prior[k] * truth[k]).collect();
    let n = 50_000;
    let mut r = rng(3);
    let draw = |prior: &[f64], r: &mut Rng| -> (Vec<usize>, Vec<[f64; 2]>) {
        let mut ys = Vec::with_capacity(n);
        let mut xs = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = r.random();
            let y = if u < prior[0] {
                0
            } else if u < prior[0] + prior[1] {
                1
            } else {
                2
            };
            ys.push(y);
            xs.push([means[y][0] + normal(r), means[y][1] + normal(r)]);
        }
        (ys, xs)
    };
    let (src_y, src_x) = draw(&source_prior, &mut r);
    let (_, tgt_x) = draw(&target_prior, &mut r);
    // Bayes classifier under the source prior
    let classify = |x: &[f64; 2]| -> usize {
        (0..3)
            .map(|k| {
                let d2 = (x[0] - means[k][0]).powi(2) + (x[1] - means[k][1]).powi(2);
                (k, source_prior[k].ln() - 0.5 * d2)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k)
            .unwrap()
    };
    let src_pred: Vec<usize> = src_x.iter().map(classify).collect();
    let tgt_pred: Vec<usize> = tgt_x.iter().map(classify).collect();
    let w = fit_bbse(&src_y, &src_pred, &tgt_pred, 3, 1e-8).expect("bbse");
    let err = (0..3).map(|k| (w.values[k] - truth[k]).abs()).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    Outcome {
        pass: err <= 0.05 && elapsed <= Duration::from_secs(10),
        detail: format!(
            "estimated ({:.4}, {:.4}, {:.4}); max abs error {err:.4}; {:.2}s",
            w.values[0],
            w.values[1],
            w.values[2],
            elapsed.as_secs_f64()
        ),
    }
}

fn criterion_4() -> Outcome {
    let n = 50_000;
    let mut r = rng(4);
    let train = gaussian_rows(n, &[0.0, 0.0], &mut r);
    let test = gaussian_rows(n, &[1.0, 1.0], &mut r);
    // no clipping: the analytic ratio is unbounded
    let w = fit_discriminative_weights(&train.view(), &test.view(), 1e6).expect("weights");
    let truth: Vec<f64> = train.outer_iter().map(|x| (x[0] + x[1] - 1.0).exp()).collect();
    let err = mean(w.values.iter().zip(&truth).map(|(a, b)| (a - b).abs() / b));
    Outcome {
        pass: err <= 0.1,
        detail: format!("mean relative L1 error {err:.4}"),
    }
}

fn stacked_loss(y: &[f64], loss: LossKind, margin: &ArrayView2<f64>) -> f64 {
    mean((0..y.len()).map(|i| loss.value(y[i], &margin.row(i).to_vec())))
}

fn criterion_5() -> Outcome {
    let mut worst_norm = 0.0f64;
    let mut worst_gap = f64::NEG_INFINITY;
    let mut r = rng(5);
    for t in 0..100u64 {
        let loss = match t % 3 {
            0 => LossKind::Squared,
            1 => LossKind::Logistic,
            _ => LossKind::Softmax(3),
        };
        let width = loss.width();
        let models = r.random_range(2..6);
        let n = r.random_range(40..200);
        let signal = Array2::from_shape_fn((n, width), |_| 2.0 * normal(&mut r));
        let scale = [0.3, 1.0, 3.0][(t / 3 % 3) as usize];
        let z: Vec<Array2<f64>> = (0..models)
            .map(|_| {
                let noise = r.random_range(0.1..1.5);
                Array2::from_shape_fn((n, width), |(i, k)| signal[[i, k]] + noise * normal(&mut r))
            })
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|i| match loss {
                LossKind::Squared => scale * signal[[i, 0]] + 0.5 * normal(&mut r),
                LossKind::Logistic => {
                    let p = 1.0 / (1.0 + (-scale * signal[[i, 0]]).exp());
                    f64::from(r.random::<f64>() < p)
                }
                LossKind::Softmax(_) => {
                    let score: Vec<f64> = (0..width)
                        .map(|k| scale * signal[[i, k]] - (-r.random::<f64>().ln()).ln())
                        .collect();
                    (0..width).max_by(|&a, &b| score[a].total_cmp(&score[b])).unwrap() as f64
                }
            })
            .collect();
        let views: Vec<ArrayView2<f64>> = z.iter().map(|m| m.view()).collect();
        let fit = fit_stage1(&views, &y, loss, &Stage1Options::default()).expect("stage 1");
        let margin = fit.margin(&views).expect("margin");
        let stacked = stacked_loss(&y, loss, &margin.view());
        let best = z
            .iter()
            .map(|m| stacked_loss(&y, loss, &m.view()))
            .fold(f64::INFINITY, f64::min);
        worst_norm = worst_norm.max(fit.beta_norm());
        worst_gap = worst_gap.max(stacked - best);
    }
    Outcome {
        pass: worst_norm <= 1.0 + 1e-4 && worst_gap <= 1e-4,
        detail: format!("max |beta| {worst_norm:.6}; max (stacked - best single) loss {worst_gap:.2e}"),
    }
}

fn criterion_6() -> Outcome {
    let sim = SyntheticConfig {
        n_segments: 6,
        n_train: 3_000,
        n_test: 600,
        seed: 6,
        ..SyntheticConfig::default()
    };
    let (train, test) = simulate_local_covshift(&sim).expect("simulate");
    let mut cfg = MrConfig::default();
    cfg.refine.n_estimators = 0;
    let model = match FittedModel::fit(Method::Mr, &train, &test.to_features(), &cfg).expect("fit") {
        FittedModel::Mr(m) => m,
        _ => unreachable!(),
    };
    let x = test.features().view();
    let full = model.predict_margin(&x, test.segments()).expect("predict");
    let stage1 = model.stage1_margin(&x, test.segments()).expect("stage 1");
    let bitwise = full.iter().zip(stage1.iter()).all(|(a, b)| a.to_bits() == b.to_bits());

    let mut r = rng(66);
    let n = 2_000;
    let xr = gaussian_rows(n, &[0.0, 0.0, 0.0], &mut r);
    let y: Vec<f64> = (0..n).map(|i| xr[[i, 0]].sin() + xr[[i, 1]] * xr[[i, 2]] + 0.1 * normal(&mut r)).collect();
    let base = Array2::from_shape_fn((n, 1), |(i, _)| 0.8 * xr[[i, 0]] - 0.3);
    let resid: Vec<f64> = (0..n).map(|i| y[i] - base[[i, 0]]).collect();
    let zeros = Array2::zeros((n, 1));
    let gcfg = GbtConfig {
        n_estimators: 50,
        max_depth: 4,
        learning_rate: 0.1,
        ..GbtConfig::default()
    };
    let a = fit_gbt(&xr.view(), &y, LossKind::Squared, &gcfg, None, Some(&base.view())).expect("gbt");
    let b = fit_gbt(&xr.view(), &resid, LossKind::Squared, &gcfg, None, Some(&zeros.view())).expect("gbt");
    let pa = a.predict_margin(&xr.view(), Some(&base.view())).expect("predict");
    let pb = b.predict_margin(&xr.view(), Some(&zeros.view())).expect("predict") + &base;
    let gap = pa.iter().zip(pb.iter()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    Outcome {
        pass: bitwise && gap <= 1e-10,
        detail: format!("zero refinement equals stage 1 bitwise: {bitwise}; residual vs base-margin max gap {gap:.2e}"),
    }
}

fn criterion_7() -> Outcome {
    let mut r = rng(7);
    let mut worst = 0.0f64;
    for loss in [LossKind::Squared, LossKind::Logistic, LossKind::Softmax(4)] {
        let width = loss.width();
        for _ in 0..20 {
            let margin: Vec<f64> = (0..width).map(|_| r.random_range(-4.0..4.0)).collect();
            let y = match loss {
                LossKind::Squared => r.random_range(-4.0..4.0),
                LossKind::Logistic => f64::from(r.random::<bool>()),
                LossKind::Softmax(k) => r.random_range(0..k) as f64,
            };
            let mut g = vec![0.0; width];
            let mut h = vec![0.0; width];
            loss.grad_hess(y, &margin, &mut g, &mut h);
            let step = 1e-5;
            for k in 0..width {
                let mut up = margin.clone();
                let mut down = margin.clone();
                up[k] += step;
                down[k] -= step;
                let fd_g = (loss.value(y, &up) - loss.value(y, &down)) / (2.0 * step);
                let (mut gu, mut hu) = (vec![0.0; width], vec![0.0; width]);
                let (mut gd, mut hd) = (vec![0.0; width], vec![0.0; width]);
                loss.grad_hess(y, &up, &mut gu, &mut hu);
                loss.grad_hess(y, &down, &mut gd, &mut hd);
                let fd_h = (gu[k] - gd[k]) / (2.0 * step);
                let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
                worst = worst.max(rel(g[k], fd_g)).max(rel(h[k], fd_h));
            }
        }
    }
    Outcome {
        pass: worst <= 1e-5,
        detail: format!("max relative error over 60 points {worst:.2e}"),
    }
}

fn two_generator_segments(seed: u64) -> (Dataset, Vec<usize>) {
    let (n_seg, n_s) = (20, 500);
    let mut r = rng(seed);
    let mut generator: Vec<usize> = (0..n_seg).map(|s| s % 2).collect();
    for i in (1..n_seg).rev() {
        generator.swap(i, r.random_range(0..=i));
    }
    let n = n_seg * n_s;
    let mut x = Array2::zeros((n, 2));
    let mut y = Array1::zeros(n);
    let mut segments = Vec::with_capacity(n);
    for s in 0..n_seg {
        let shift = 2.0 * generator[s] as f64;
        for j in 0..n_s {
            let i = s * n_s + j;
            x[[i, 0]] = shift + normal(&mut r);
            x[[i, 1]] = normal(&mut r);
            y[i] = x[[i, 0]] + x[[i, 1]] + 0.5 * normal(&mut r);
            segments.push(s);
        }
    }
    let data = Dataset::from_parts(x, y, segments, TaskKind::Regression, vec!["x1".into(), "x2".into()])
        .expect("dataset");
    (data, generator)
}

fn criterion_8() -> Outcome {
    let kernel = KernelSpec::joint(false);
    let recovered = (0..100u64)
        .filter(|&seed| {
            let (data, generator) = two_generator_segments(seed);
            let d = segment_distance_matrix(&data, &kernel, 2000, derive_seed(seed, 2)).expect("mmd");
            let c = cluster_segments(&d, 2).expect("ward");
            c.clusters.iter().all(|cl| {
                let g = generator[cl[0]];
                cl.iter().all(|&s| generator[s] == g)
            }) && c.clusters.len() == 2
        })
        .count();
    Outcome {
        pass: recovered >= 95,
        detail: format!("exact partition recovered in {recovered}/100 seeds"),
    }
}

fn criterion_9() -> Outcome {
    let n = 50_000;
    let mut r = rng(9);
    let x = gaussian_rows(n, &[0.0, 0.0], &mut r);
    let y: Array1<f64> = x.outer_iter().map(|row| row[0] + row[0] * row[0] + 0.5 * normal(&mut r)).collect();
    let pool = Dataset::from_parts(x, y, vec![0; n], TaskKind::Regression, vec!["x1".into(), "x2".into()])
        .expect("dataset");
    let (p_above, p_below, threshold) = (0.8, 0.2, 0.5);
    let shift = ShiftConstructionConfig::Covariate {
        feature: 0,
        threshold,
        p_above,
        p_below,
    };
    let (train, test) = construct_shift(&pool, &shift, 99).expect("shift");
    // fixed model f(x) = 1.5 x1
    let predict = |d: &Dataset| -> Array2<f64> {
        Array2::from_shape_fn((d.n_rows(), 1), |(i, _)| 1.5 * d.features()[[i, 0]])
    };
    let odds = |p: f64| p / (1.0 - p);
    let w: Vec<f64> = train
        .features()
        .column(0)
        .iter()
        .map(|&v| if v > threshold { odds(p_above) } else { odds(p_below) })
        .collect();
    let ytr = train.labels().to_vec();
    let yte = test.labels().to_vec();
    let (wr, wse) = metric(&ytr, &predict(&train).view(), MetricKind::Mse, Some(&w)).expect("metric");
    let (ur, _) = metric(&ytr, &predict(&train).view(), MetricKind::Mse, None).expect("metric");
    let (tr, tse) = metric(&yte, &predict(&test).view(), MetricKind::Mse, None).expect("metric");
    let combined = (wse * wse + tse * tse).sqrt();
    let gap = (wr - tr).abs();
    Outcome {
        pass: gap <= 3.0 * combined,
        detail: format!(
            "weighted train {wr:.4}, test {tr:.4}, |gap| {gap:.4} vs 3 SE {:.4} (unweighted train {ur:.4})",
            3.0 * combined
        ),
    }
}

fn run_cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_mrshift"))
        .current_dir(dir)
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn pipeline(dir: &Path) -> Option<(Vec<u8>, Vec<u8>)> {
    let steps: [&[&str]; 3] = [
        &["simulate", "--segments", "8", "--n-train", "3000", "--n-test", "800", "--seed", "5"],
        &["fit", "--train", "train.csv", "--test", "test.csv", "--method", "mr", "--seed", "5"],
        &["evaluate", "--model", "model.json", "--data", "test.csv"],
    ];
    for s in steps {
        if !run_cli(dir, s) {
            return None;
        }
    }
    Some((fs::read(dir.join("model.json")).ok()?, fs::read(dir.join("report.json")).ok()?))
}

fn criterion_10() -> Outcome {
    let a = tempfile::tempdir().expect("tempdir");
    let b = tempfile::tempdir().expect("tempdir");
    match (pipeline(a.path()), pipeline(b.path())) {
        (Some(x), Some(y)) => Outcome {
            pass: x == y,
            detail: format!(
                "model.json identical: {}; report.json identical: {}",
                x.0 == y.0,
                x.1 == y.1
            ),
        },
        _ => Outcome {
            pass: false,
            detail: "a CLI step failed".into(),
        },
    }
}

fn main() {
    let checks: Vec<(&str, Box<dyn Fn() -> Outcome + Send>)> = vec![
        ("3 BBSE class-weight recovery", Box::new(criterion_3)),
        ("4 discriminative weight recovery", Box::new(criterion_4)),
        ("5 unit ball and stacking dominance", Box::new(criterion_5)),
        ("6 collapse exactness", Box::new(criterion_6)),
        ("7 loss derivatives vs finite differences", Box::new(criterion_7)),
        ("8 clustering recovery", Box::new(criterion_8)),
        ("9 debiasing with oracle weights", Box::new(criterion_9)),
        ("10 CLI determinism", Box::new(criterion_10)),
    ];
    let mut results = Vec::new();
    let (c1, c2) = criteria_1_and_2();
    results.push(("1 simulation trend", c1));
    results.push(("2 baseline ordering", c2));
    for (name, check) in checks {
        results.push((name, check()));
    }
    let mut failed = 0;
    for (name, o) in &results {
        println!("criterion {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {}/{} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
