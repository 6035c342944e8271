use std::fs;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use mrshift_core::data::{
    load_csv, load_csv_with_schema, load_features_with_schema, simulate_local_covshift, write_csv,
    CsvSpec, DataSchema, Dataset, SyntheticConfig, TaskKind,
};
use mrshift_core::evalcv::{cross_validate, per_segment_report, CvGrid, MetricKind, ReportInput};
use mrshift_core::learners::GbtConfig;
use mrshift_core::mr::{streams, ClusterPolicy, FittedModel, Method, MrConfig, ShiftType, WeightInfo};
use mrshift_core::rng::derive_seed;
use mrshift_core::segmentation::{
    choose_num_clusters, cluster_segments, segment_distance_matrix, KernelSpec,
};
use mrshift_core::weights::WeightMethod;
use mrshift_core::{Error, FORMAT_VERSION};

use crate::args::{
    ClusterArgs, CvArgs, DataArgs, EvaluateArgs, FitArgs, ModelArgs, PredictArgs, SimulateArgs,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Clap(#[from] clap::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Core(#[from] Error),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Clap(_) | CliError::Usage(_) => 2,
            CliError::Core(
                Error::Io { .. }
                | Error::Json(_)
                | Error::MissingColumn(_)
                | Error::DimensionMismatch { .. }
                | Error::InvalidArgument(_),
            ) => 2,
            CliError::Core(_) | CliError::Runtime(_) => 3,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// On-disk model: the fitted estimator plus what is needed to encode new data.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub schema: DataSchema,
    pub input_width: usize,
    pub model: FittedModel,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn read_model(path: &Path) -> Result<ModelFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let file: ModelFile = serde_json::from_str(&text).map_err(Error::from)?;
    if file.format_version != FORMAT_VERSION {
        return Err(CliError::Usage(format!(
            "{} has format version {}, expected {FORMAT_VERSION}",
            path.display(),
            file.format_version
        )));
    }
    Ok(file)
}

fn load_train(args: &DataArgs) -> Result<Dataset> {
    let task: TaskKind = args.task.parse()?;
    let mut spec = CsvSpec::new(&args.label_col, &args.segment_col, task);
    if let Some(g) = &args.group_col {
        spec = spec.group_col(g);
    }
    spec.categorical = args.categorical.clone();
    Ok(load_csv(&args.train, &spec)?)
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        n_segments: args.segments,
        gamma: args.gamma.clone(),
        noise_sd: args.noise_sd,
        n_train: args.n_train,
        n_test: args.n_test,
        seed: args.seed,
    };
    let (train, test) = simulate_local_covshift(&cfg)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| Error::Io {
        path: args.out_dir.clone(),
        source: e,
    })?;
    write_csv(&train, args.out_dir.join("train.csv"))?;
    write_csv(&test, args.out_dir.join("test.csv"))?;
    info!("wrote {} train and {} test rows", train.n_rows(), test.n_rows());
    Ok(())
}

#[derive(Serialize)]
struct ClusterOutput {
    format_version: u32,
    clusters: Vec<Vec<String>>,
    segments: Vec<String>,
    distance_matrix: Vec<Vec<f64>>,
}

pub fn cluster(args: &ClusterArgs) -> Result<()> {
    let data = load_train(&args.data)?;
    let seg_rows = data.segment_rows();
    let rows: Vec<usize> = seg_rows.iter().filter(|r| r.len() >= 2).flatten().copied().collect();
    let sub = data.select(&rows);
    let kernel = KernelSpec::joint(data.task().is_classification());
    let d = segment_distance_matrix(
        &sub,
        &kernel,
        args.max_per_segment,
        derive_seed(args.seed, streams::CLUSTER),
    )?;
    if d.is_empty() {
        return Err(Error::Empty("no segment has at least 2 rows".into()).into());
    }
    let m = match args.m {
        Some(m) if m == 0 || m > d.len() => {
            return Err(CliError::Usage(format!(
                "--m must lie in 1..={}, got {m}",
                d.len()
            )))
        }
        Some(m) => m,
        None => choose_num_clusters(&d, args.min_cluster_size),
    };
    let assignment = cluster_segments(&d, m)?;
    let names = data.segment_names();
    let out = ClusterOutput {
        format_version: FORMAT_VERSION,
        clusters: assignment
            .clusters
            .iter()
            .map(|c| c.iter().map(|&s| names[s].clone()).collect())
            .collect(),
        segments: d.segments.iter().map(|&s| names[s].clone()).collect(),
        distance_matrix: d.values.outer_iter().map(|r| r.to_vec()).collect(),
    };
    write_json(&args.out, &out)?;
    println!("{m} clusters written to {}", args.out.display());
    Ok(())
}

fn parse_clusters(spec: &str, names: &[String]) -> Result<ClusterPolicy> {
    let spec = spec.trim();
    if spec == "auto" {
        return Ok(ClusterPolicy::Auto);
    }
    if let Ok(m) = spec.parse::<usize>() {
        return Ok(ClusterPolicy::Fixed(m));
    }
    let mut clusters = Vec::new();
    for group in spec.split(';') {
        let mut ids = Vec::new();
        for name in group.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            let id = names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| CliError::Usage(format!("unknown segment `{name}` in --clusters")))?;
            ids.push(id);
        }
        clusters.push(ids);
    }
    Ok(ClusterPolicy::Explicit(clusters))
}

fn override_gbt(
    cfg: &mut GbtConfig,
    trees: Option<usize>,
    depth: Option<usize>,
    lr: Option<f64>,
    subsample: Option<f64>,
) {
    if let Some(v) = trees {
        cfg.n_estimators = v;
    }
    if let Some(v) = depth {
        cfg.max_depth = v;
    }
    if let Some(v) = lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = subsample {
        cfg.subsample = v;
    }
}

fn build_config(args: &ModelArgs, train: &Dataset) -> Result<(Method, MrConfig)> {
    let method: Method = args.method.parse()?;
    let shift: ShiftType = args.shift.parse()?;
    let weight_method: WeightMethod = match &args.weights {
        Some(w) => w.parse()?,
        None => match shift {
            ShiftType::Covariate => WeightMethod::Discriminative,
            ShiftType::Label => WeightMethod::Bbse,
        },
    };
    let mut cfg = MrConfig {
        shift,
        weight_method,
        eta: args.eta,
        varsigma: args.varsigma,
        clusters: parse_clusters(&args.clusters, train.segment_names())?,
        min_cluster_size: args.min_cluster_size,
        ball: args.ball,
        intercept: args.intercept,
        lambda_max: args.lambda_max,
        seed: args.seed,
        ..MrConfig::default()
    };
    override_gbt(&mut cfg.base, args.base_trees, args.base_depth, args.base_lr, args.base_subsample);
    override_gbt(&mut cfg.global, args.global_trees, args.global_depth, args.global_lr, None);
    override_gbt(&mut cfg.refine, args.refine_trees, args.refine_depth, args.refine_lr, None);
    cfg.validate(train.task().loss())?;
    Ok((method, cfg))
}

#[derive(Serialize)]
struct WeightReport {
    method: WeightMethod,
    min: f64,
    mean: f64,
    max: f64,
    scale: f64,
}

impl From<&WeightInfo> for WeightReport {
    fn from(w: &WeightInfo) -> Self {
        WeightReport {
            method: w.method,
            min: w.summary.min,
            mean: w.summary.mean,
            max: w.summary.max,
            scale: w.scale,
        }
    }
}

#[derive(Serialize)]
struct SegmentSummary {
    segment: String,
    n_tune: Option<usize>,
    weights: Option<WeightReport>,
    beta: Option<Vec<f64>>,
    intercept: Option<Vec<f64>>,
    lambda: Option<f64>,
    fallback: Option<String>,
}

#[derive(Serialize)]
struct FitReport {
    format_version: u32,
    method: Method,
    task: TaskKind,
    input_width: usize,
    n_train: usize,
    n_test: usize,
    clusters: Option<Vec<Vec<String>>>,
    segments: Vec<SegmentSummary>,
}

fn fit_report(model: &FittedModel, schema: &DataSchema, input_width: usize, n_train: usize, n_test: usize) -> FitReport {
    let names = &schema.segment_names;
    let (clusters, segments) = match model {
        FittedModel::Mr(m) => {
            let clusters = m
                .ensemble
                .clusters
                .clusters
                .iter()
                .map(|c| c.iter().map(|&s| names[s].clone()).collect())
                .collect();
            let segments = m
                .segments
                .iter()
                .map(|e| match &e.fit {
                    Some(f) => SegmentSummary {
                        segment: e.name.clone(),
                        n_tune: Some(f.n_tune),
                        weights: Some((&f.weights).into()),
                        beta: Some(f.stage1.beta.clone()),
                        intercept: f.stage1.intercept.clone(),
                        lambda: Some(f.stage1.lambda),
                        fallback: None,
                    },
                    None => SegmentSummary {
                        segment: e.name.clone(),
                        n_tune: None,
                        weights: None,
                        beta: None,
                        intercept: None,
                        lambda: None,
                        fallback: Some(e.note.clone().unwrap_or_else(|| "no segment model".into())),
                    },
                })
                .collect();
            (Some(clusters), segments)
        }
        FittedModel::Dr(m) | FittedModel::DrSf(m) => {
            let segments = names
                .iter()
                .enumerate()
                .map(|(s, name)| SegmentSummary {
                    segment: name.clone(),
                    n_tune: None,
                    weights: m.weights.get(s).and_then(Option::as_ref).map(Into::into),
                    beta: None,
                    intercept: None,
                    lambda: None,
                    fallback: None,
                })
                .collect();
            (None, segments)
        }
        FittedModel::Gbt(_) => (None, Vec::new()),
    };
    FitReport {
        format_version: FORMAT_VERSION,
        method: model.method(),
        task: schema.task,
        input_width,
        n_train,
        n_test,
        clusters,
        segments,
    }
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let train = load_train(&args.data)?;
    let test = load_features_with_schema(&args.test, train.schema())?;
    let (method, cfg) = build_config(&args.model, &train)?;
    info!("fitting {method} on {} rows", train.n_rows());
    let model = FittedModel::fit(method, &train, &test, &cfg)?;
    let input_width = match &model {
        FittedModel::DrSf(m) => m.input_width(),
        _ => train.n_features(),
    };
    let report = fit_report(&model, train.schema(), input_width, train.n_rows(), test.n_rows());
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        schema: train.schema().clone(),
        input_width,
        model,
    };
    write_json(&args.out, &file)?;
    write_json(&args.report, &report)?;
    println!("{method} model written to {}", args.out.display());
    Ok(())
}

fn prediction_header(schema: &DataSchema) -> Vec<String> {
    match (&schema.task, &schema.class_names) {
        (TaskKind::Multiclass { .. }, Some(names)) => names.iter().map(|c| format!("p_{c}")).collect(),
        _ => vec!["prediction".into()],
    }
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let file = read_model(&args.model)?;
    let data = load_features_with_schema(&args.data, &file.schema)?;
    let pred = file.model.predict(&data.x.view(), &data.segments)?;
    let mut w = csv::Writer::from_path(&args.out).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut header = vec![file.schema.segment_col.clone()];
    header.extend(prediction_header(&file.schema));
    let csv_err = |e: csv::Error| CliError::Runtime(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for (i, row) in pred.outer_iter().enumerate() {
        let mut rec = vec![data.segment_names[data.segments[i]].clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("{} predictions written to {}", pred.nrows(), args.out.display());
    Ok(())
}

fn predict_labeled(file: &ModelFile, path: &Path) -> Result<(Dataset, ndarray::Array2<f64>)> {
    let data = load_csv_with_schema(path, &file.schema)?;
    let pred = file.model.predict(&data.features().view(), data.segments())?;
    Ok((data, pred))
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let file = read_model(&args.model)?;
    let (data, pred) = predict_labeled(&file, &args.data)?;
    let kind = match &args.metric {
        Some(m) => m.parse()?,
        None => MetricKind::default_for(file.schema.task),
    };
    let baseline = match &args.baseline {
        Some(path) => {
            let base = read_model(path)?;
            let (bdata, bpred) = predict_labeled(&base, &args.data)?;
            if bdata.labels() != data.labels() {
                return Err(CliError::Usage("baseline model encodes the labels differently".into()));
            }
            Some(bpred)
        }
        None => None,
    };
    let y = data.labels().to_vec();
    let input = ReportInput {
        y: &y,
        pred: pred.view(),
        segments: data.segments(),
        segment_names: data.segment_names(),
        baseline: baseline.as_ref().map(|b| b.view()),
        weights: None,
    };
    let report = per_segment_report(&input, kind)?;
    write_json(&args.out, &report)?;
    print!("{}", report.to_table());
    Ok(())
}

pub fn cv(args: &CvArgs) -> Result<()> {
    let train = load_train(&args.data)?;
    let test = load_features_with_schema(&args.test, train.schema())?;
    let (method, cfg) = build_config(&args.model, &train)?;
    let grid: CvGrid = match &args.grid {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            serde_json::from_str(&text).map_err(Error::from)?
        }
        None => CvGrid::default(),
    };
    info!("cross-validating {} grid points", grid.points()?.len());
    let result = cross_validate(&train, &test, &grid, args.folds, method, &cfg)?;
    write_json(&args.out, &result)?;
    println!(
        "best base {:?}, refine {:?}",
        result.best.base, result.best.refine
    );
    Ok(())
}
