use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use nalgebra::DMatrix;
use serde::Serialize;

use dpfaga_core::bench::{self, BenchPlan, BenchReport, CellStatus, NamedPerturbation, PredictionDump};
use dpfaga_core::can::{self, Metric};
use dpfaga_core::datagen::{derive_seed, generate_suite, rng_from_seed, write_suite, Dataset, Suite, SuiteConfig};
use dpfaga_core::models::{self, Checkpoint, Model, ModelKind};
use dpfaga_core::nn::{write_loss_csv, Activation, OptimizerKind, TrainConfig};
use dpfaga_core::sscrf::{
    confusion_matrix, em_train, fault_graph, generate_fault_scenarios, predict_labels, Annotation, CrfModel, CrfSpec,
    EmConfig, FaultClass, FaultConfig, GraphSource,
};
use dpfaga_core::GridCase;

use crate::error::CliError;
use crate::Common;

type Result<T = ()> = std::result::Result<T, CliError>;

fn load_case(path: Option<&Path>) -> Result<GridCase> {
    match path {
        Some(p) => Ok(GridCase::load(p)?),
        None => Ok(GridCase::ieee14()),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(v[n / 2]),
        _ => Some(0.5 * (v[n / 2 - 1] + v[n / 2])),
    }
}

#[derive(Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0.5)]
    load_variation: f64,
    #[arg(long, default_value_t = 1)]
    n_train: usize,
    #[arg(long, default_value_t = 1)]
    n_val: usize,
    #[arg(long, default_value_t = 100)]
    n_test: usize,
}

pub fn generate(a: GenerateArgs) -> Result {
    let case = load_case(a.common.case.as_deref())?;
    let cfg = SuiteConfig {
        n_train: a.n_train,
        n_val: a.n_val,
        n_test: a.n_test,
        steps: a.steps,
        load_variation: a.load_variation,
        master_seed: a.common.seed,
    };
    let start = Instant::now();
    let datasets = generate_suite(&case, &cfg)?;
    let paths = write_suite(&a.common.out, &datasets)?;
    log::info!(
        "wrote {} datasets of {} samples to {} in {:.1}s",
        paths.len(),
        a.steps,
        a.common.out.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

#[derive(Args)]
pub struct PerturbArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset file to corrupt.
    #[arg(long = "in")]
    input: PathBuf,
    /// Gaussian measurement noise at this SNR.
    #[arg(long)]
    snr_db: Option<f64>,
    /// Zero the loads of this many random buses in every sample.
    #[arg(long)]
    drop_buses: Option<usize>,
    /// Zero each input entry with this probability.
    #[arg(long)]
    loss_prob: Option<f64>,
}

pub fn perturb(a: PerturbArgs) -> Result {
    if a.snr_db.is_none() && a.drop_buses.is_none() && a.loss_prob.is_none() {
        return Err(CliError::usage("perturb needs at least one of --snr-db, --drop-buses, --loss-prob"));
    }
    let ds = Dataset::load(&a.input)?;
    let p = NamedPerturbation {
        name: "cli".into(),
        snr_db: a.snr_db,
        n_drop_buses: a.drop_buses,
        loss_prob: a.loss_prob,
    };
    let out = p.apply(&ds, a.common.seed)?;
    out.save(&a.common.out)?;
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "gat")]
    model: ModelKind,
    #[arg(long, default_value = "tanh", value_parser = parse_activation)]
    activation: Activation,
    /// Epoch budget; 10000 for FCNN and 2000 for graph models when omitted.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value = "adam")]
    optimizer: OptimizerKind,
    /// Stop after this many epochs without a new best validation loss.
    #[arg(long)]
    early_stop: Option<usize>,
    /// Training dataset file.
    #[arg(long, conflicts_with = "suite", required_unless_present = "suite")]
    train: Option<PathBuf>,
    /// Validation dataset file.
    #[arg(long, requires = "train")]
    val: Option<PathBuf>,
    /// Suite directory; its first training and validation datasets are used.
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Fraction of the training samples to keep.
    #[arg(long, default_value_t = 1.0)]
    train_fraction: f64,
}

fn parse_activation(s: &str) -> std::result::Result<Activation, String> {
    match s.to_ascii_lowercase().as_str() {
        "identity" => Ok(Activation::Identity),
        "sigmoid" => Ok(Activation::Sigmoid),
        "tanh" => Ok(Activation::Tanh),
        "relu" => Ok(Activation::Relu),
        other => Err(format!("unknown activation '{other}' (expected identity, sigmoid, tanh or relu)")),
    }
}

pub fn train(a: TrainArgs) -> Result {
    let case = load_case(a.common.case.as_deref())?;
    let (train, val) = match (&a.train, &a.suite) {
        (Some(t), _) => (Dataset::load(t)?, a.val.as_ref().map(Dataset::load).transpose()?),
        (None, Some(dir)) => {
            let mut suite = Suite::load(dir)?;
            if suite.train.is_empty() {
                return Err(CliError::data(format!("{} has no training dataset", dir.display())));
            }
            let val = (!suite.val.is_empty()).then(|| suite.val.swap_remove(0));
            (suite.train.swap_remove(0), val)
        }
        (None, None) => unreachable!("clap requires --train or --suite"),
    };
    let train = bench::subsample_training(&train, a.train_fraction, derive_seed(a.common.seed, 0x5AB5))
        .map_err(|e| CliError::usage(e.to_string()))?;
    let cfg = TrainConfig {
        epochs: a.epochs.unwrap_or(bench::EpochBudgets::default().get(a.model)),
        learning_rate: a.lr,
        optimizer: a.optimizer,
        activation: a.activation,
        seed: derive_seed(a.common.seed, 1),
        early_stop: a.early_stop,
    };
    let start = Instant::now();
    let (model, curves) = models::fit(a.model, &case, &train, val.as_ref(), &cfg)?;
    let out = &a.common.out;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    model.checkpoint(Some(&cfg), Some(&curves)).save(out.join("checkpoint.json"))?;
    let path = out.join("loss.csv");
    let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    write_loss_csv(&curves, std::io::BufWriter::new(file)).map_err(|e| CliError::io(&path, e))?;
    log::info!(
        "{} ({}) trained {} epochs on {} samples in {:.1}s; final train loss {:.3e}, best val loss {}",
        a.model,
        a.activation,
        curves.train.len(),
        train.len(),
        start.elapsed().as_secs_f64(),
        curves.final_train().unwrap_or(f64::NAN),
        curves.best_val().map_or("n/a".into(), |v| format!("{v:.3e} at epoch {}", curves.best_epoch)),
    );
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset files to evaluate.
    #[arg(long = "data", num_args = 1.., conflicts_with = "suite", required_unless_present = "suite")]
    data: Vec<PathBuf>,
    /// Suite directory; all its test datasets are evaluated.
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Also write every prediction to this JSON-lines file.
    #[arg(long)]
    dump_predictions: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalRow {
    dataset: String,
    mse: f64,
    nrmse: Option<f64>,
}

#[derive(Serialize)]
struct EvalOutput {
    checkpoint: String,
    model: ModelKind,
    activation: Activation,
    datasets: Vec<EvalRow>,
    median_mse: Option<f64>,
    median_nrmse: Option<f64>,
}

pub fn eval(a: EvalArgs) -> Result {
    let case = load_case(a.common.case.as_deref())?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = Model::from_checkpoint(&ck, &case)?;
    let sets: Vec<(String, Dataset)> = match &a.suite {
        Some(dir) => Suite::load(dir)?
            .test
            .into_iter()
            .enumerate()
            .map(|(i, ds)| (format!("test_{i:03}"), ds))
            .collect(),
        None => a
            .data
            .iter()
            .map(|p| Ok((p.display().to_string(), Dataset::load(p)?)))
            .collect::<Result<_>>()?,
    };
    if sets.is_empty() {
        return Err(CliError::data("no datasets to evaluate"));
    }
    let mut dump = String::new();
    let mut rows = Vec::with_capacity(sets.len());
    for (name, ds) in &sets {
        let p = models::predict_dataset(&model, ds)?;
        if a.dump_predictions.is_some() {
            let line = serde_json::json!({
                "dataset": name,
                "rows": ds.len(),
                "cols": 2 * ds.n_buses(),
                "predictions": p.predictions,
            });
            dump.push_str(&line.to_string());
            dump.push('\n');
        }
        rows.push(EvalRow {
            dataset: name.clone(),
            mse: p.mse,
            nrmse: p.nrmse,
        });
    }
    if let Some(path) = &a.dump_predictions {
        fs::write(path, dump).map_err(|e| CliError::io(path, e))?;
    }
    let mse: Vec<f64> = rows.iter().map(|r| r.mse).collect();
    let nrmse: Vec<f64> = rows.iter().filter_map(|r| r.nrmse).collect();
    let out = EvalOutput {
        checkpoint: a.checkpoint.display().to_string(),
        model: ck.model_spec.kind,
        activation: ck.model_spec.activation,
        median_mse: median(&mse),
        median_nrmse: median(&nrmse),
        datasets: rows,
    };
    log::info!(
        "{} datasets: median MSE {:.3e}, median NRMSE {}",
        out.datasets.len(),
        out.median_mse.unwrap_or(f64::NAN),
        out.median_nrmse.map_or("n/a".into(), |v| format!("{v:.3e}"))
    );
    write_json(&a.common.out, &out)
}

#[derive(Args)]
pub struct CanArgs {
    #[command(flatten)]
    common: Common,
    /// CSV with one sample per row; a non-numeric first row is taken as a header.
    #[arg(long)]
    features: PathBuf,
    /// Number of connected components to enforce.
    #[arg(long)]
    clusters: usize,
    /// Neighbors per point, or `auto`.
    #[arg(long, default_value = "auto")]
    k: String,
    /// Largest neighbor count tried by `--k auto`.
    #[arg(long, default_value_t = 20)]
    k_max: usize,
    #[arg(long, default_value_t = 30)]
    max_outer: usize,
}

#[derive(Serialize)]
struct CanEdge {
    i: usize,
    j: usize,
    s_ij: f64,
}

#[derive(Serialize)]
struct CanOutput {
    n: usize,
    c_requested: usize,
    c_achieved: usize,
    k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    k_scores: Option<Vec<(usize, f64)>>,
    lambda: f64,
    outer_iterations: usize,
    labels: Vec<usize>,
    edges: Vec<CanEdge>,
    gamma: Vec<f64>,
}

fn read_features(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if line == 0 => continue,
            Err(e) => return Err(CliError::data(format!("{}:{}: {e}", path.display(), line + 1))),
        }
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(CliError::data(format!("{} holds no samples", path.display())));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
        return Err(CliError::data(format!("{}: row {} has {} columns, expected {cols}", path.display(), bad + 1, rows[bad].len())));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
}

pub fn can(a: CanArgs) -> Result {
    let z = read_features(&a.features)?;
    let n = z.nrows();
    let d = can::pairwise_distances(&z, Metric::Euclidean);
    let (k, k_scores) = if a.k.eq_ignore_ascii_case("auto") {
        let hi = a.k_max.min(n.saturating_sub(1));
        if hi < 2 {
            return Err(CliError::data(format!("--k auto needs at least 3 samples, got {n}")));
        }
        let candidates: Vec<usize> = (2..=hi).collect();
        let (k, scores) = can::adaptive_k_scores(&d, &candidates)?;
        log::info!("selected k = {k}");
        (k, Some(scores))
    } else {
        let k = a
            .k
            .parse::<usize>()
            .map_err(|_| CliError::usage(format!("--k must be a positive integer or auto, got '{}'", a.k)))?;
        (k, None)
    };
    let g = can::enforce_rank_constraint(&d, a.clusters, k, a.max_outer)?;
    let out = CanOutput {
        n,
        c_requested: a.clusters,
        c_achieved: g.n_components,
        k,
        k_scores,
        lambda: g.lambda,
        outer_iterations: g.outer_iterations,
        labels: g.labels.clone(),
        edges: g.edges().into_iter().map(|(i, j, s_ij)| CanEdge { i, j, s_ij }).collect(),
        gamma: g.gamma.clone(),
    };
    write_json(&a.common.out, &out)
}

#[derive(Args)]
pub struct FaultEmArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 200)]
    scenarios: usize,
    #[arg(long, default_value_t = 0.2)]
    label_frac: f64,
    #[arg(long, default_value_t = 3)]
    rounds: usize,
    #[arg(long, default_value = "topology")]
    graph: GraphSource,
    /// Neighbors per node for `--graph can`.
    #[arg(long, default_value_t = 10)]
    can_k: usize,
    /// Epochs of every network fit.
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    /// Measurement noise; `inf` keeps measurements clean.
    #[arg(long, default_value_t = 45.0)]
    snr_db: f64,
    #[arg(long, default_value = "argmax", value_parser = parse_annotation)]
    annotation: Annotation,
}

fn parse_annotation(s: &str) -> std::result::Result<Annotation, String> {
    match s.to_ascii_lowercase().as_str() {
        "argmax" => Ok(Annotation::Argmax),
        "sample" => Ok(Annotation::Sample),
        other => Err(format!("unknown annotation '{other}' (expected argmax or sample)")),
    }
}

#[derive(Serialize)]
struct FaultEmConfigEcho {
    case: String,
    seed: u64,
    scenarios: usize,
    label_frac: f64,
    rounds: usize,
    graph: GraphSource,
    can_k: usize,
    fault: FaultConfig,
    em: EmConfig,
}

#[derive(Serialize)]
struct FaultEmOutput {
    config: FaultEmConfigEcho,
    n_nodes: usize,
    n_labeled: usize,
    classes: Vec<FaultClass>,
    rounds: Vec<dpfaga_core::sscrf::RoundReport>,
    final_accuracy_labeled: f64,
    final_accuracy_unlabeled: Option<f64>,
    /// `[true][predicted]` over unlabeled nodes.
    confusion_unlabeled: Vec<Vec<usize>>,
    wall_clock_s: f64,
}

pub fn fault_em(a: FaultEmArgs) -> Result {
    if a.scenarios == 0 {
        return Err(CliError::usage("--scenarios must be at least 1"));
    }
    let start = Instant::now();
    let case = load_case(a.common.case.as_deref())?;
    let fault = FaultConfig {
        snr_db: a.snr_db.is_finite().then_some(a.snr_db),
        ..FaultConfig::default()
    };
    let seed = a.common.seed;
    let scenarios = generate_fault_scenarios(&case, a.scenarios, &fault, &mut rng_from_seed(derive_seed(seed, 0)))?;
    let (g, truth) = fault_graph(
        &case,
        &scenarios,
        a.graph,
        a.can_k,
        a.label_frac,
        &mut rng_from_seed(derive_seed(seed, 1)),
    )?;
    let train = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        seed: derive_seed(seed, 3),
        ..TrainConfig::default()
    };
    let em = EmConfig {
        q: train.clone(),
        p: train,
        n_rounds: a.rounds,
        annotation: a.annotation,
        ..EmConfig::default()
    };
    let mut model = CrfModel::new(&g, CrfSpec::default(), derive_seed(seed, 2))?;
    let report = em_train(&mut model, &g, &em, Some(&truth))?;
    let pred = predict_labels(&model, &g)?;
    let unlabeled = g.unlabeled();
    let last = report.rounds.last().expect("warm start is always recorded");
    let out = FaultEmOutput {
        n_nodes: g.n_nodes(),
        n_labeled: g.labeled().len(),
        classes: FaultClass::ALL.to_vec(),
        final_accuracy_labeled: last.accuracy_labeled,
        final_accuracy_unlabeled: last.accuracy_unlabeled,
        confusion_unlabeled: confusion_matrix(&pred.labels, &truth, &unlabeled, g.n_classes()),
        rounds: report.rounds,
        config: FaultEmConfigEcho {
            case: case.name.clone(),
            seed,
            scenarios: a.scenarios,
            label_frac: a.label_frac,
            rounds: a.rounds,
            graph: a.graph,
            can_k: a.can_k,
            fault,
            em,
        },
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    for r in &out.rounds {
        log::info!(
            "round {}: labeled {:.4}, unlabeled {}",
            r.round,
            r.accuracy_labeled,
            r.accuracy_unlabeled.map_or("n/a".into(), |v| format!("{v:.4}"))
        );
    }
    write_json(&a.common.out, &out)
}

#[derive(Args)]
pub struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Run configuration or plan JSON. Without it, the built-in comparison
    /// plan runs for `--comparison-seeds`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    comparison_seeds: Vec<u64>,
    /// Suite directory used by runs that name none; generated from `--seed` when absent.
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Write raw test predictions next to the report.
    #[arg(long)]
    dump_predictions: bool,
    /// Also render loss curves and histograms as SVG.
    #[arg(long)]
    svg: bool,
}

pub fn bench(a: BenchArgs) -> Result {
    let start = Instant::now();
    let plan = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            let mut plan = BenchPlan::from_json(&text)?;
            let base = p.parent().unwrap_or(Path::new(""));
            for run in &mut plan.runs {
                for path in [&mut run.case, &mut run.suite].into_iter().flatten() {
                    if path.is_relative() {
                        *path = base.join(&*path);
                    }
                }
            }
            plan
        }
        None => BenchPlan::comparison(&a.comparison_seeds),
    };
    plan.validate()?;

    let default_case = a.common.case.clone();
    let mut cases: BTreeMap<Option<PathBuf>, GridCase> = BTreeMap::new();
    let mut suites: BTreeMap<(Option<PathBuf>, Option<PathBuf>), Suite> = BTreeMap::new();
    let dump = a.dump_predictions.then(|| PredictionDump {
        dir: a.common.out.join("predictions"),
    });
    let mut cells = Vec::new();
    for run in &plan.runs {
        let case_path = run.case.clone().or_else(|| default_case.clone());
        if !cases.contains_key(&case_path) {
            cases.insert(case_path.clone(), load_case(case_path.as_deref())?);
        }
        let case = &cases[&case_path];
        let suite_path = run.suite.clone().or_else(|| a.suite.clone());
        let key = (case_path.clone(), suite_path.clone());
        if !suites.contains_key(&key) {
            let suite = match &suite_path {
                Some(dir) => Suite::load(dir)?,
                None => {
                    log::info!("generating a dataset suite with seed {}", a.common.seed);
                    let cfg = SuiteConfig {
                        master_seed: a.common.seed,
                        ..SuiteConfig::default()
                    };
                    Suite::from_datasets(generate_suite(case, &cfg)?)
                }
            };
            suites.insert(key.clone(), suite);
        }
        cells.extend(bench::run_matrix(run, case, &suites[&key], dump.as_ref())?);
    }
    let report = BenchReport {
        schema_version: bench::REPORT_SCHEMA_VERSION,
        plan,
        cells,
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    bench::write_outputs(&report, &a.common.out, a.svg)?;
    print_summary(&report);
    let failed = report.cells.iter().filter(|c| c.status == CellStatus::Failed).count();
    if failed > 0 {
        return Err(CliError::numeric(format!("{failed} of {} cells failed", report.cells.len())));
    }
    Ok(())
}

fn print_summary(report: &BenchReport) {
    println!("{:<16} {:<6} {:<8} {:>6} {:>12} {:>12} {:>10}", "run", "model", "act", "n", "median_mse", "median_nrmse", "time_s");
    for c in &report.cells {
        let (mse, nrmse) = c
            .evaluation("clean")
            .map_or((f64::NAN, None), |e| (e.median_mse, e.median_nrmse));
        println!(
            "{:<16} {:<6} {:<8} {:>6} {:>12.4e} {:>12} {:>10.1}",
            c.run,
            c.model.to_string(),
            c.activation.to_string(),
            c.n_train,
            mse,
            nrmse.map_or("n/a".into(), |v| format!("{v:.4e}")),
            c.wall_clock_s
        );
    }
}
