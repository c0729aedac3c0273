//! Experiment matrix: train every configured model on a (subsampled) training
//! set, evaluate on every test dataset, and summarize the per-dataset errors.

mod svg;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{
    add_gaussian_noise, derive_seed, drop_bus_data, random_measurement_loss, rng_from_seed, DataError, Dataset, Suite,
};
use crate::grid::GridCase;
use crate::models::{self, ModelError, ModelKind};
use crate::nn::{write_loss_csv, Activation, LossCurves, OptimizerKind, TrainConfig};

pub use svg::{histogram_svg, loss_curves_svg};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Bundled JSON schema of [`BenchReport`].
pub const REPORT_SCHEMA: &str = include_str!("../../schema/bench_report.schema.json");

pub const DEFAULT_BINS: usize = 20;

/// Key of every nondeterministic field in a serialized report.
pub const WALL_CLOCK_KEY: &str = "wall_clock_s";

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid bench configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl BenchError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochBudgets {
    pub fcnn: usize,
    pub gnn: usize,
    pub gat: usize,
}

impl Default for EpochBudgets {
    fn default() -> Self {
        EpochBudgets {
            fcnn: 10_000,
            gnn: 2_000,
            gat: 2_000,
        }
    }
}

impl EpochBudgets {
    pub fn get(&self, kind: ModelKind) -> usize {
        match kind {
            ModelKind::Fcnn => self.fcnn,
            ModelKind::Gnn => self.gnn,
            ModelKind::Gat => self.gat,
        }
    }
}

/// Test-time corruption applied to every test dataset, in field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedPerturbation {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_drop_buses: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_prob: Option<f64>,
}

impl NamedPerturbation {
    pub fn apply(&self, ds: &Dataset, seed: u64) -> Result<Dataset> {
        let mut rng = rng_from_seed(seed);
        let mut out = ds.clone();
        if let Some(snr) = self.snr_db {
            out = add_gaussian_noise(&out, snr, &mut rng)?;
        }
        if let Some(n) = self.n_drop_buses {
            out = drop_bus_data(&out, n, &mut rng)?;
        }
        if let Some(p) = self.loss_prob {
            out = random_measurement_loss(&out, p, &mut rng)?;
        }
        Ok(out)
    }
}

/// One training regime: every listed model and activation on one subsample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "default_run_name")]
    pub name: String,
    /// Grid case file; the bundled IEEE 14-bus case when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case: Option<PathBuf>,
    /// Directory of a generated dataset suite.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<PathBuf>,
    #[serde(default = "all_models")]
    pub models: Vec<ModelKind>,
    #[serde(default = "one")]
    pub train_fraction: f64,
    #[serde(default)]
    pub epochs: EpochBudgets,
    #[serde(default = "tanh_only")]
    pub activations: Vec<Activation>,
    /// Per-model activation sweeps that replace `activations`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub model_activations: BTreeMap<ModelKind, Vec<Activation>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub perturbations: Vec<NamedPerturbation>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
}

fn default_run_name() -> String {
    "run".into()
}
fn all_models() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}
fn one() -> f64 {
    1.0
}
fn tanh_only() -> Vec<Activation> {
    vec![Activation::Tanh]
}
fn default_lr() -> f64 {
    1e-3
}
fn default_bins() -> usize {
    DEFAULT_BINS
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            name: default_run_name(),
            case: None,
            suite: None,
            models: all_models(),
            train_fraction: 1.0,
            epochs: EpochBudgets::default(),
            activations: tanh_only(),
            model_activations: BTreeMap::new(),
            perturbations: Vec::new(),
            seed: 0,
            learning_rate: default_lr(),
            histogram_bins: DEFAULT_BINS,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BenchError::InvalidConfig(m));
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad(format!("train_fraction must lie in (0, 1], got {}", self.train_fraction));
        }
        if self.models.is_empty() {
            return bad("no models selected".into());
        }
        for kind in ModelKind::ALL {
            if self.epochs.get(kind) == 0 {
                return bad(format!("epoch budget for {kind} must be at least 1"));
            }
        }
        if self.cells().is_empty() {
            return bad("no activations selected".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if self.histogram_bins == 0 {
            return bad("histogram_bins must be at least 1".into());
        }
        let mut names: Vec<&str> = self.perturbations.iter().map(|p| p.name.as_str()).collect();
        names.push("clean");
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("perturbation names must be unique and not 'clean'".into());
        }
        Ok(())
    }

    /// `(model, activation)` pairs in report order.
    pub fn cells(&self) -> Vec<(ModelKind, Activation)> {
        self.models
            .iter()
            .flat_map(|&m| {
                self.model_activations
                    .get(&m)
                    .unwrap_or(&self.activations)
                    .iter()
                    .map(move |&a| (m, a))
            })
            .collect()
    }
}

/// Several runs sharing one suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchPlan {
    pub runs: Vec<BenchConfig>,
}

impl BenchPlan {
    /// Accepts either a plan `{"runs": [...]}` or a single run configuration.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Either {
            Plan(BenchPlan),
            Single(BenchConfig),
        }
        Ok(match serde_json::from_str::<Either>(text) {
            Ok(Either::Plan(p)) => p,
            Ok(Either::Single(c)) => BenchPlan { runs: vec![c] },
            Err(_) => {
                // Re-parse as a single run for a precise error message.
                let c: BenchConfig = serde_json::from_str(text)?;
                BenchPlan { runs: vec![c] }
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs.is_empty() {
            return Err(BenchError::InvalidConfig("plan has no runs".into()));
        }
        let mut names: Vec<&str> = self.runs.iter().map(|r| r.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(BenchError::InvalidConfig("run names must be unique".into()));
        }
        self.runs.iter().try_for_each(BenchConfig::validate)
    }

    /// The three comparison regimes: all models on the full training set,
    /// all models on 20% for each seed (GAT with Tanh and ReLU), and a
    /// Sigmoid FCNN on the full training set.
    pub fn comparison(seeds: &[u64]) -> Self {
        let first = seeds.first().copied().unwrap_or(0);
        let mut runs = vec![BenchConfig {
            name: "full".into(),
            seed: first,
            ..BenchConfig::default()
        }];
        for &s in seeds {
            runs.push(BenchConfig {
                name: format!("frac20_seed{s}"),
                train_fraction: 0.2,
                model_activations: BTreeMap::from([(ModelKind::Gat, vec![Activation::Tanh, Activation::Relu])]),
                seed: s,
                ..BenchConfig::default()
            });
        }
        runs.push(BenchConfig {
            name: "fcnn_sigmoid".into(),
            models: vec![ModelKind::Fcnn],
            activations: vec![Activation::Sigmoid],
            seed: first,
            ..BenchConfig::default()
        });
        BenchPlan { runs }
    }
}

/// `⌈fraction · len⌉` samples drawn uniformly without replacement, in original order.
pub fn subsample_training(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(BenchError::InvalidConfig(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let n = ds.len();
    let m = ((fraction * n as f64).ceil() as usize).min(n);
    let mut idx = index::sample(&mut rng_from_seed(seed), n, m).into_vec();
    idx.sort_unstable();
    let mut out = ds.clone();
    out.samples = idx.into_iter().map(|i| ds.samples[i].clone()).collect();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width bins spanning `[min, max]`; the last bin is closed. When all
/// values coincide every bin is the degenerate interval at that value and the
/// first one holds all counts.
pub fn histogram(values: &[f64], n_bins: usize) -> Result<Vec<Bin>> {
    if values.is_empty() || n_bins == 0 {
        return Err(BenchError::InvalidConfig("histogram needs values and at least one bin".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(BenchError::InvalidConfig("histogram values must be finite".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins as f64;
    let mut bins: Vec<Bin> = (0..n_bins)
        .map(|b| Bin {
            lo: lo + b as f64 * width,
            hi: if b + 1 == n_bins { hi } else { lo + (b + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for &v in values {
        let b = if width > 0.0 { (((v - lo) / width) as usize).min(n_bins - 1) } else { 0 };
        bins[b].count += 1;
    }
    Ok(bins)
}

/// [`histogram`] as CSV with header `bin_lo,bin_hi,count`.
pub fn emit_histogram(values: &[f64], n_bins: usize) -> Result<String> {
    Ok(histogram_csv(&histogram(values, n_bins)?))
}

pub fn histogram_csv(bins: &[Bin]) -> String {
    let mut s = String::from("bin_lo,bin_hi,count\n");
    for b in bins {
        s.push_str(&format!("{},{},{}\n", b.lo, b.hi, b.count));
    }
    s
}

/// First epoch from which the best validation loss never improves by 0.1% or
/// more within the following 100 epochs. `None` for curves shorter than 101
/// epochs or that keep improving to the end.
pub fn saturation_epoch(val: &[f64]) -> Option<usize> {
    const WINDOW: usize = 100;
    const REL: f64 = 1e-3;
    if val.len() <= WINDOW {
        return None;
    }
    let mut best = Vec::with_capacity(val.len());
    let mut b = f64::INFINITY;
    for &v in val {
        b = b.min(v);
        best.push(b);
    }
    let flat = |e: usize| best[e + WINDOW] >= best[e] * (1.0 - REL);
    let last = val.len() - 1 - WINDOW;
    if !flat(last) {
        return None;
    }
    let mut e = last;
    while e > 0 && flat(e - 1) {
        e -= 1;
    }
    Some(e)
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `clean` or a perturbation name.
    pub variant: String,
    /// One value per test dataset, in suite order.
    pub mse: Vec<f64>,
    pub nrmse: Vec<Option<f64>>,
    pub median_mse: f64,
    pub median_nrmse: Option<f64>,
    pub mse_histogram: Vec<Bin>,
    pub nrmse_histogram: Vec<Bin>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub run: String,
    pub model: ModelKind,
    pub activation: Activation,
    pub train_fraction: f64,
    pub seed: u64,
    pub n_train: usize,
    pub epochs: usize,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub final_val_loss: Option<f64>,
    pub best_val_loss: Option<f64>,
    pub saturation_epoch: Option<usize>,
    pub evaluations: Vec<EvalReport>,
    pub wall_clock_s: f64,
}

impl CellReport {
    /// File-name stem, unique within a report.
    pub fn id(&self) -> String {
        format!("{}_{}_{}", self.run, self.model, self.activation)
    }

    pub fn evaluation(&self, variant: &str) -> Option<&EvalReport> {
        self.evaluations.iter().find(|e| e.variant == variant)
    }

    pub fn curves(&self) -> LossCurves {
        LossCurves {
            train: self.train_loss.clone(),
            val: self.val_loss.clone(),
            best_epoch: self.best_epoch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub plan: BenchPlan,
    pub cells: Vec<CellReport>,
    pub wall_clock_s: f64,
}

impl BenchReport {
    pub fn cell(&self, run: &str, model: ModelKind, activation: Activation) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.run == run && c.model == model && c.activation == activation)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// JSON with every wall-clock field removed; identical for identical inputs.
    pub fn to_deterministic_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        strip_wall_clock(&mut v);
        Ok(serde_json::to_string_pretty(&v)?)
    }
}

/// Removes every `wall_clock_s` key, recursively.
pub fn strip_wall_clock(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            map.remove(WALL_CLOCK_KEY);
            map.values_mut().for_each(strip_wall_clock);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_wall_clock),
        _ => {}
    }
}

/// Where to write raw test predictions while the matrix runs.
#[derive(Debug, Clone)]
pub struct PredictionDump {
    pub dir: PathBuf,
}

struct Prepared<'s> {
    train: Dataset,
    val: Option<&'s Dataset>,
    variants: Vec<(String, Vec<Dataset>)>,
}

fn prepare<'s>(cfg: &BenchConfig, suite: &'s Suite) -> Result<Prepared<'s>> {
    let train = suite
        .train
        .first()
        .ok_or_else(|| BenchError::InvalidConfig("suite has no training dataset".into()))?;
    if suite.test.is_empty() {
        return Err(BenchError::InvalidConfig("suite has no test datasets".into()));
    }
    let train = subsample_training(train, cfg.train_fraction, derive_seed(cfg.seed, 0x5AB5))?;
    let mut variants = Vec::with_capacity(cfg.perturbations.len());
    for (p, pert) in cfg.perturbations.iter().enumerate() {
        let base = derive_seed(cfg.seed, 0x9E27 + p as u64);
        let sets = suite
            .test
            .par_iter()
            .enumerate()
            .map(|(i, ds)| pert.apply(ds, derive_seed(base, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        variants.push((pert.name.clone(), sets));
    }
    Ok(Prepared {
        train,
        val: suite.val.first(),
        variants,
    })
}

fn evaluate(
    model: &models::Model,
    variant: &str,
    sets: &[Dataset],
    bins: usize,
    dump: Option<(&Path, &str)>,
) -> Result<EvalReport> {
    let mut mse = Vec::with_capacity(sets.len());
    let mut nrmse = Vec::with_capacity(sets.len());
    let mut writer = match dump {
        Some((dir, id)) => {
            let path = dir.join(format!("{id}_{variant}_predictions.jsonl"));
            Some((BufWriter::new(File::create(&path).map_err(|e| BenchError::io(&path, e))?), path))
        }
        None => None,
    };
    for (i, ds) in sets.iter().enumerate() {
        let p = models::predict_dataset(model, ds)?;
        mse.push(p.mse);
        nrmse.push(p.nrmse);
        if let Some((w, path)) = writer.as_mut() {
            let line = serde_json::json!({
                "dataset": i,
                "rows": ds.len(),
                "cols": 2 * ds.n_buses(),
                "predictions": p.predictions,
            });
            writeln!(w, "{line}").map_err(|e| BenchError::io(path, e))?;
        }
    }
    if let Some((mut w, path)) = writer {
        w.flush().map_err(|e| BenchError::io(&path, e))?;
    }
    let defined: Vec<f64> = nrmse.iter().flatten().copied().collect();
    Ok(EvalReport {
        variant: variant.to_string(),
        median_mse: median(&mse).unwrap_or(f64::NAN),
        median_nrmse: median(&defined),
        mse_histogram: histogram(&mse, bins)?,
        nrmse_histogram: if defined.is_empty() { Vec::new() } else { histogram(&defined, bins)? },
        mse,
        nrmse,
    })
}

fn run_cell(
    cfg: &BenchConfig,
    case: &GridCase,
    suite: &Suite,
    prep: &Prepared<'_>,
    kind: ModelKind,
    activation: Activation,
    dump: Option<&PredictionDump>,
) -> CellReport {
    let start = Instant::now();
    let train_cfg = TrainConfig {
        epochs: cfg.epochs.get(kind),
        learning_rate: cfg.learning_rate,
        optimizer: OptimizerKind::Adam,
        activation,
        seed: derive_seed(cfg.seed, 1),
        early_stop: None,
    };
    let mut cell = CellReport {
        run: cfg.name.clone(),
        model: kind,
        activation,
        train_fraction: cfg.train_fraction,
        seed: cfg.seed,
        n_train: prep.train.len(),
        epochs: train_cfg.epochs,
        status: CellStatus::Ok,
        error: None,
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        final_val_loss: None,
        best_val_loss: None,
        saturation_epoch: None,
        evaluations: Vec::new(),
        wall_clock_s: 0.0,
    };
    let outcome = (|| -> Result<()> {
        let (model, curves) = models::fit(kind, case, &prep.train, prep.val, &train_cfg)?;
        cell.saturation_epoch = saturation_epoch(&curves.val);
        cell.final_val_loss = curves.val.last().copied();
        cell.best_val_loss = curves.best_val();
        cell.best_epoch = curves.best_epoch;
        cell.train_loss = curves.train;
        cell.val_loss = curves.val;
        let id = cell.id();
        let dump = dump.map(|d| (d.dir.as_path(), id.as_str()));
        cell.evaluations
            .push(evaluate(&model, "clean", &suite.test, cfg.histogram_bins, dump)?);
        for (name, sets) in &prep.variants {
            cell.evaluations
                .push(evaluate(&model, name, sets, cfg.histogram_bins, dump)?);
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        log::warn!("cell {} failed: {e}", cell.id());
        cell.status = CellStatus::Failed;
        cell.error = Some(e.to_string());
        cell.evaluations.clear();
    }
    cell.wall_clock_s = start.elapsed().as_secs_f64();
    cell
}

/// Runs one configuration. Cells run in parallel; a failing cell is marked
/// in the report and does not stop the others.
pub fn run_matrix(cfg: &BenchConfig, case: &GridCase, suite: &Suite, dump: Option<&PredictionDump>) -> Result<Vec<CellReport>> {
    cfg.validate()?;
    let prep = prepare(cfg, suite)?;
    if let Some(d) = dump {
        fs::create_dir_all(&d.dir).map_err(|e| BenchError::io(&d.dir, e))?;
    }
    Ok(cfg
        .cells()
        .into_par_iter()
        .map(|(kind, act)| {
            log::info!("{}: training {kind} with {act}", cfg.name);
            run_cell(cfg, case, suite, &prep, kind, act, dump)
        })
        .collect())
}

/// Runs every configuration of `plan` on the same case and suite.
pub fn run_plan(plan: &BenchPlan, case: &GridCase, suite: &Suite, dump: Option<&PredictionDump>) -> Result<BenchReport> {
    plan.validate()?;
    let start = Instant::now();
    let mut cells = Vec::new();
    for cfg in &plan.runs {
        cells.extend(run_matrix(cfg, case, suite, dump)?);
    }
    Ok(BenchReport {
        schema_version: REPORT_SCHEMA_VERSION,
        plan: plan.clone(),
        cells,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

/// Writes `report.json`, loss curves, per-dataset metrics and histograms as
/// CSV, and optionally SVG plots. Returns the written paths.
pub fn write_outputs(report: &BenchReport, dir: &Path, svg: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, body: &[u8]| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| BenchError::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    put("report.json".into(), report.to_json()?.as_bytes())?;
    for cell in &report.cells {
        let id = cell.id();
        let mut csv = Vec::new();
        write_loss_csv(&cell.curves(), &mut csv).map_err(|e| BenchError::io(dir, e))?;
        put(format!("{id}_loss.csv"), &csv)?;
        if svg && !cell.train_loss.is_empty() {
            put(format!("{id}_loss.svg"), loss_curves_svg(&id, &cell.train_loss, &cell.val_loss).as_bytes())?;
        }
        for ev in &cell.evaluations {
            let stem = format!("{id}_{}", ev.variant);
            let mut metrics = String::from("dataset,mse,nrmse\n");
            for (i, (m, n)) in ev.mse.iter().zip(&ev.nrmse).enumerate() {
                let n = n.map_or(String::new(), |v| v.to_string());
                metrics.push_str(&format!("{i},{m},{n}\n"));
            }
            put(format!("{stem}_metrics.csv"), metrics.as_bytes())?;
            put(format!("{stem}_mse_hist.csv"), histogram_csv(&ev.mse_histogram).as_bytes())?;
            put(format!("{stem}_nrmse_hist.csv"), histogram_csv(&ev.nrmse_histogram).as_bytes())?;
            if svg {
                put(format!("{stem}_mse_hist.svg"), histogram_svg(&format!("{stem} MSE"), &ev.mse_histogram).as_bytes())?;
                put(
                    format!("{stem}_nrmse_hist.svg"),
                    histogram_svg(&format!("{stem} NRMSE"), &ev.nrmse_histogram).as_bytes(),
                )?;
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_partitions_uniform_values() {
        let v: Vec<f64> = (0..100).map(f64::from).collect();
        let bins = histogram(&v, 10).unwrap();
        assert!(bins.iter().all(|b| b.count == 10));
        assert_eq!(bins[0].lo, 0.0);
        assert_eq!(bins[9].hi, 99.0);
    }

    #[test]
    fn equal_values_fill_one_bin() {
        let bins = histogram(&[2.5; 7], 4).unwrap();
        assert_eq!(bins[0].count, 7);
        assert!(bins[1..].iter().all(|b| b.count == 0));
        assert!(histogram(&[], 3).is_err());
        assert!(histogram(&[1.0], 0).is_err());
    }

    #[test]
    fn csv_layout() {
        let csv = emit_histogram(&[0.0, 1.0], 2).unwrap();
        assert_eq!(csv, "bin_lo,bin_hi,count\n0,0.5,1\n0.5,1,1\n");
    }

    #[test]
    fn saturation_of_a_step_curve() {
        let mut v = vec![1.0; 50];
        v.extend(vec![0.5; 300]);
        assert_eq!(saturation_epoch(&v), Some(50));
        let decaying: Vec<f64> = (0..400).map(|e| (-(e as f64) / 20.0).exp()).collect();
        assert_eq!(saturation_epoch(&decaying), None);
        assert_eq!(saturation_epoch(&[1.0; 100]), None);
    }

    #[test]
    fn comparison_plan_is_valid() {
        let plan = BenchPlan::comparison(&[0, 1, 2, 3, 4]);
        plan.validate().unwrap();
        assert_eq!(plan.runs.len(), 7);
        assert_eq!(plan.runs[1].cells().len(), 4);
        let text = serde_json::to_string(&plan).unwrap();
        assert_eq!(BenchPlan::from_json(&text).unwrap(), plan);
        let single = BenchPlan::from_json(r#"{"models": ["gat"], "train_fraction": 0.2}"#).unwrap();
        assert_eq!(single.runs[0].models, vec![ModelKind::Gat]);
        assert!(BenchPlan::from_json(r#"{"modles": ["gat"]}"#).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = BenchConfig::default();
        c.train_fraction = 0.0;
        assert!(c.validate().is_err());
        c.train_fraction = 0.5;
        c.epochs.gnn = 0;
        assert!(c.validate().is_err());
        c.epochs.gnn = 1;
        c.perturbations.push(NamedPerturbation {
            name: "clean".into(),
            snr_db: Some(45.0),
            n_drop_buses: None,
            loss_prob: None,
        });
        assert!(c.validate().is_err());
    }

    #[test]
    fn strip_removes_nested_keys() {
        let mut v = serde_json::json!({"a": 1, "wall_clock_s": 2.0, "b": [{"wall_clock_s": 3.0, "c": 4}]});
        strip_wall_clock(&mut v);
        assert_eq!(v, serde_json::json!({"a": 1, "b": [{"c": 4}]}));
    }
}
