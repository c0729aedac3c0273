//! Dataset suites of (load → voltage) samples and test-time measurement corruption.
//!
//! Every sample owns an RNG stream derived from `(dataset seed, time step)`, so a
//! suite is a pure function of the case, the configuration and the master seed,
//! independent of thread scheduling.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{build_ybus, GridCase};
use crate::powerflow::{solve_pf_with_ybus, LoadVector, PfError, PfOptions};

pub const SCHEMA_VERSION: u32 = 1;

/// Consecutive solver failures tolerated for one time step before giving up.
pub const MAX_REJECTIONS: usize = 100;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("power flow failed {attempts} consecutive times at step {step}: {source}")]
    Solver {
        step: usize,
        attempts: usize,
        #[source]
        source: PfError,
    },
}

impl DataError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Val,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Val => "val",
            Role::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_drop_buses: Option<usize>,
    /// Dropped (sample, bus) pairs whose clean loads were already zero, so the
    /// drop is invisible in `x`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_collisions: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_prob: Option<f64>,
    pub load_variation: f64,
}

impl PerturbationConfig {
    pub fn clean(load_variation: f64) -> Self {
        PerturbationConfig {
            snr_db: None,
            n_drop_buses: None,
            drop_collisions: None,
            loss_prob: None,
            load_variation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: usize,
    /// Demand the power flow was solved for, `[p.., q..]`.
    pub x_clean: Vec<f64>,
    /// Measured demand after perturbations.
    pub x: Vec<f64>,
    /// Solved `[v_mag.., v_ang..]`.
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Metadata {
    case: String,
    role: Role,
    steps: usize,
    seed: u64,
    perturbation: PerturbationConfig,
    schema_version: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub case_name: String,
    pub role: Role,
    pub seed: u64,
    pub perturbation: PerturbationConfig,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of buses.
    pub fn n_buses(&self) -> usize {
        self.samples.first().map_or(0, |s| s.x.len() / 2)
    }

    /// Inputs as a row-major `len × 2N` buffer.
    pub fn x_rows(&self) -> Vec<f64> {
        self.samples.iter().flat_map(|s| s.x.iter().copied()).collect()
    }

    /// Targets as a row-major `len × 2N` buffer.
    pub fn y_rows(&self) -> Vec<f64> {
        self.samples.iter().flat_map(|s| s.y.iter().copied()).collect()
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let meta = Metadata {
            case: self.case_name.clone(),
            role: self.role,
            steps: self.samples.len(),
            seed: self.seed,
            perturbation: self.perturbation.clone(),
            schema_version: SCHEMA_VERSION,
        };
        serde_json::to_writer(&mut w, &meta)?;
        w.write_all(b"\n")?;
        for s in &self.samples {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| DataError::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| DataError::io(path, e))?;
        w.flush().map_err(|e| DataError::io(path, e))
    }

    pub fn read_from(r: impl BufRead) -> Result<Dataset, DataError> {
        let mut lines = r.lines().enumerate();
        let (_, first) = lines.next().ok_or(DataError::Format {
            line: 1,
            message: "empty dataset file".into(),
        })?;
        let first = first.map_err(|e| DataError::Format {
            line: 1,
            message: e.to_string(),
        })?;
        let meta: Metadata = serde_json::from_str(&first).map_err(|e| DataError::Format {
            line: 1,
            message: e.to_string(),
        })?;
        if meta.schema_version != SCHEMA_VERSION {
            return Err(DataError::Format {
                line: 1,
                message: format!("unsupported schema_version {}", meta.schema_version),
            });
        }
        let mut samples = Vec::with_capacity(meta.steps);
        for (i, line) in lines {
            let fmt_err = |message: String| DataError::Format { line: i + 1, message };
            let line = line.map_err(|e| fmt_err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let s: Sample = serde_json::from_str(&line).map_err(|e| fmt_err(e.to_string()))?;
            if s.x.len() != s.y.len() || s.x.len() != s.x_clean.len() || s.x.len() % 2 != 0 {
                return Err(fmt_err("inconsistent sample widths".into()));
            }
            samples.push(s);
        }
        if samples.len() != meta.steps {
            return Err(DataError::Format {
                line: 1,
                message: format!("metadata announces {} steps, file has {}", meta.steps, samples.len()),
            });
        }
        Ok(Dataset {
            case_name: meta.case,
            role: meta.role,
            seed: meta.seed,
            perturbation: meta.perturbation,
            samples,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| DataError::io(path, e))?;
        Dataset::read_from(BufReader::new(file))
    }
}

/// SplitMix64 finalizer over `(master, stream)`, used to derive independent seeds.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws each load component uniformly from `base·[1−variation, 1+variation]`.
pub fn sample_loads(case: &GridCase, variation: f64, rng: &mut impl Rng) -> Result<LoadVector, DataError> {
    if !(0.0..1.0).contains(&variation) {
        return Err(DataError::InvalidArgument(format!(
            "load variation must lie in [0, 1), got {variation}"
        )));
    }
    let mut draw = |base: f64| {
        let u: f64 = rng.random();
        base * (1.0 + variation * (2.0 * u - 1.0))
    };
    let p = case.buses.iter().map(|b| draw(b.base_p_load)).collect();
    let q = case.buses.iter().map(|b| draw(b.base_q_load)).collect();
    Ok(LoadVector { p, q })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub steps: usize,
    pub load_variation: f64,
    pub master_seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            n_train: 1,
            n_val: 1,
            n_test: 100,
            steps: 2000,
            load_variation: 0.5,
            master_seed: 0,
        }
    }
}

impl SuiteConfig {
    /// Role of every dataset in suite order: train, then val, then test.
    pub fn roles(&self) -> Vec<Role> {
        std::iter::repeat_n(Role::Train, self.n_train)
            .chain(std::iter::repeat_n(Role::Val, self.n_val))
            .chain(std::iter::repeat_n(Role::Test, self.n_test))
            .collect()
    }
}

/// One clean dataset of `steps` independent operating points.
pub fn generate_dataset(
    case: &GridCase,
    role: Role,
    steps: usize,
    load_variation: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if steps == 0 {
        return Err(DataError::InvalidArgument("steps must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&load_variation) {
        return Err(DataError::InvalidArgument(format!(
            "load variation must lie in [0, 1), got {load_variation}"
        )));
    }
    let ybus = build_ybus(case);
    let opts = PfOptions::default();
    let samples = (0..steps)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(seed, t as u64));
            let mut rejected = 0;
            loop {
                let loads = sample_loads(case, load_variation, &mut rng)?;
                match solve_pf_with_ybus(case, &ybus, &loads, &opts) {
                    Ok(sol) => {
                        if rejected > 0 {
                            log::info!("step {t}: resampled {rejected} non-convergent load draws");
                        }
                        let x = loads.to_flat();
                        return Ok(Sample {
                            t,
                            x_clean: x.clone(),
                            x,
                            y: sol.to_flat(),
                        });
                    }
                    Err(source) => {
                        rejected += 1;
                        if rejected > MAX_REJECTIONS {
                            return Err(DataError::Solver {
                                step: t,
                                attempts: rejected,
                                source,
                            });
                        }
                    }
                }
            }
        })
        .collect::<Result<Vec<_>, DataError>>()?;
    Ok(Dataset {
        case_name: case.name.clone(),
        role,
        seed,
        perturbation: PerturbationConfig::clean(load_variation),
        samples,
    })
}

/// Train, validation and test datasets, each seeded from `(master_seed, index)`.
pub fn generate_suite(case: &GridCase, cfg: &SuiteConfig) -> Result<Vec<Dataset>, DataError> {
    cfg.roles()
        .into_iter()
        .enumerate()
        .map(|(i, role)| {
            generate_dataset(
                case,
                role,
                cfg.steps,
                cfg.load_variation,
                derive_seed(cfg.master_seed, i as u64),
            )
        })
        .collect()
}

/// File name for the `index`-th dataset of its role, e.g. `test_007.jsonl`.
pub fn dataset_file_name(role: Role, index: usize) -> String {
    format!("{role}_{index:03}.jsonl")
}

/// Writes a suite as one JSON-lines file per dataset, returning the paths.
pub fn write_suite(dir: impl AsRef<Path>, datasets: &[Dataset]) -> Result<Vec<PathBuf>, DataError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let mut counters = [0usize; 3];
    datasets
        .iter()
        .map(|ds| {
            let slot = &mut counters[ds.role as usize];
            let path = dir.join(dataset_file_name(ds.role, *slot));
            *slot += 1;
            ds.save(&path)?;
            Ok(path)
        })
        .collect()
}

/// A suite read back from disk, grouped by role.
#[derive(Debug, Clone)]
pub struct Suite {
    pub train: Vec<Dataset>,
    pub val: Vec<Dataset>,
    pub test: Vec<Dataset>,
}

impl Suite {
    pub fn from_datasets(datasets: Vec<Dataset>) -> Self {
        let mut suite = Suite {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        for ds in datasets {
            match ds.role {
                Role::Train => suite.train.push(ds),
                Role::Val => suite.val.push(ds),
                Role::Test => suite.test.push(ds),
            }
        }
        suite
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Suite, DataError> {
        let dir = dir.as_ref();
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| DataError::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        let datasets = files.iter().map(Dataset::load).collect::<Result<Vec<_>, _>>()?;
        Ok(Suite::from_datasets(datasets))
    }
}

/// Adds i.i.d. zero-mean Gaussian noise with `σ = 10^(−snr_db/20)` to every input.
///
/// An infinite SNR leaves the dataset untouched.
pub fn add_gaussian_noise(ds: &Dataset, snr_db: f64, rng: &mut impl Rng) -> Result<Dataset, DataError> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(DataError::InvalidArgument(format!("snr_db must be finite, got {snr_db}")));
    }
    let mut out = ds.clone();
    if snr_db == f64::INFINITY {
        return Ok(out);
    }
    let sigma = noise_sigma(snr_db);
    for s in &mut out.samples {
        for v in &mut s.x {
            let z: f64 = rng.sample(StandardNormal);
            *v += sigma * z;
        }
    }
    out.perturbation.snr_db = Some(snr_db);
    Ok(out)
}

pub fn noise_sigma(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 20.0)
}

/// Zeroes both load channels of `n_drop` distinct random buses in every sample.
pub fn drop_bus_data(ds: &Dataset, n_drop: usize, rng: &mut impl Rng) -> Result<Dataset, DataError> {
    let n = ds.n_buses();
    if n_drop > n {
        return Err(DataError::InvalidArgument(format!(
            "cannot drop {n_drop} of {n} buses"
        )));
    }
    let mut out = ds.clone();
    if n_drop == 0 {
        return Ok(out);
    }
    let mut collisions = 0;
    for s in &mut out.samples {
        for bus in index::sample(rng, n, n_drop) {
            if s.x_clean[bus] == 0.0 && s.x_clean[n + bus] == 0.0 {
                collisions += 1;
            }
            s.x[bus] = 0.0;
            s.x[n + bus] = 0.0;
        }
    }
    out.perturbation.n_drop_buses = Some(n_drop);
    out.perturbation.drop_collisions = Some(collisions);
    Ok(out)
}

/// Zeroes every input component independently with probability `p_loss`.
pub fn random_measurement_loss(ds: &Dataset, p_loss: f64, rng: &mut impl Rng) -> Result<Dataset, DataError> {
    if !(0.0..=1.0).contains(&p_loss) {
        return Err(DataError::InvalidArgument(format!(
            "loss probability must lie in [0, 1], got {p_loss}"
        )));
    }
    let mut out = ds.clone();
    for s in &mut out.samples {
        for v in &mut s.x {
            if rng.random_bool(p_loss) {
                *v = 0.0;
            }
        }
    }
    out.perturbation.loss_prob = Some(p_loss);
    Ok(out)
}
