//! End-to-end experiment: load data, run the ensemble, summarise the
//! post-burn-in posterior and persist chains and plot-ready tables.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, ClassificationDataset, DataError, Dataset, Split};
use crate::inference::{self, InferenceError, PriorSpec};
use crate::model::{forward_batch, ModelError, NetworkShape, ParamVector, Task};
use crate::proposal::{ProposalConfig, ProposalKind};
use crate::sampler::{Chain, Target, TemperingMode};
use crate::tempering::{self, EnsembleConfig, EnsembleOutput, Execution, PhaseSchedule, TemperingError};

/// Error from one stage of [`run_experiment`].
#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("config: cannot read {path}: {source}")]
    ConfigRead { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    ConfigParse(#[from] toml::de::Error),
    #[error("load: {0}")]
    Load(#[from] DataError),
    #[error("prepare: {0}")]
    Model(#[from] ModelError),
    #[error("sample: {0}")]
    Sample(#[from] TemperingError),
    #[error("predict: {0}")]
    Predict(#[from] InferenceError),
    #[error("write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "pt-rw")]
    PtRw,
    #[serde(rename = "pt-lg")]
    PtLg,
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pt-rw" | "rw" => Ok(Method::PtRw),
            "pt-lg" | "lg" => Ok(Method::PtLg),
            other => Err(format!("unknown method {other:?} (expected pt-rw or pt-lg)")),
        }
    }
}

/// Which retained samples feed the posterior summaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Every replica's post-burn-in samples from the untempered phase.
    #[default]
    Pooled,
    /// Post-burn-in samples of the `T = 1` slot only.
    Coldest,
}

/// Experiment profile. Field defaults follow the reference experimental setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    /// Data file; relative paths are resolved against the profile's directory.
    pub dataset: PathBuf,
    pub task: Task,
    /// Hidden units.
    pub hidden: usize,
    /// Number of classes; inferred from the labels when absent.
    pub classes: Option<usize>,
    /// Leading points of the series to keep (time series only).
    pub series_points: Option<usize>,
    pub embed_dim: usize,
    pub time_lag: usize,
    pub train_fraction: f64,
    pub method: Method,
    pub learn_rate: f64,
    pub lg_freq: f64,
    pub total_samples: usize,
    /// `total_samples` counts all replicas together (each runs `total / R`).
    pub samples_are_total: bool,
    pub replicas: usize,
    pub swap_interval: usize,
    pub max_temp: f64,
    pub global_fraction: f64,
    pub burn_in_fraction: f64,
    pub sigma2: f64,
    pub nu1: f64,
    pub nu2: f64,
    pub step_weights: f64,
    pub step_eta: f64,
    pub seed: u64,
    pub tempering: TemperingMode,
    pub pooling: Pooling,
    pub execution: Execution,
    /// Parameter whose trace and histogram are written.
    pub trace_param: usize,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            dataset: PathBuf::new(),
            task: Task::Regression,
            hidden: 5,
            classes: None,
            series_points: Some(1000),
            embed_dim: 4,
            time_lag: 2,
            train_fraction: 0.6,
            method: Method::PtRw,
            learn_rate: 0.1,
            lg_freq: 0.5,
            total_samples: 100_000,
            samples_are_total: true,
            replicas: 10,
            swap_interval: 100,
            max_temp: 10.0,
            global_fraction: 0.6,
            burn_in_fraction: 0.5,
            sigma2: 25.0,
            nu1: 0.0,
            nu2: 0.0,
            step_weights: 0.025,
            step_eta: 0.2,
            seed: 1,
            tempering: TemperingMode::Likelihood,
            pooling: Pooling::Pooled,
            execution: Execution::Threaded,
            trace_param: 0,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        Ok(toml::from_str(text)?)
    }

    /// Read a profile and resolve its dataset path against the profile's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::ConfigRead { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_toml_str(&text)?;
        if cfg.dataset.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.dataset = dir.join(&cfg.dataset);
            }
        }
        Ok(cfg)
    }

    pub fn prior(&self) -> PriorSpec {
        PriorSpec { sigma2: self.sigma2, nu1: self.nu1, nu2: self.nu2 }
    }

    pub fn proposal(&self) -> ProposalConfig {
        ProposalConfig {
            kind: match self.method {
                Method::PtRw => ProposalKind::RandomWalk,
                Method::PtLg => ProposalKind::Langevin,
            },
            step_weights: self.step_weights,
            step_eta: self.step_eta,
            learn_rate: self.learn_rate,
            lg_freq: self.lg_freq,
        }
    }

    pub fn steps_per_replica(&self) -> usize {
        if self.samples_are_total {
            self.total_samples / self.replicas.max(1)
        } else {
            self.total_samples
        }
    }

    pub fn ensemble(&self) -> EnsembleConfig {
        EnsembleConfig {
            replicas: self.replicas,
            max_temp: self.max_temp,
            swap_interval: self.swap_interval,
            steps_per_replica: self.steps_per_replica(),
            schedule: PhaseSchedule { global_fraction: self.global_fraction },
            seed: self.seed,
            execution: self.execution,
            verify_caches: false,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let err = |m: String| Err(ExperimentError::Config(m));
        if self.replicas == 0 {
            return err("replicas must be at least 1".into());
        }
        if self.swap_interval == 0 {
            return err("swap_interval must be at least 1".into());
        }
        if self.steps_per_replica() == 0 {
            return err(format!("{} samples leave no steps for {} replicas", self.total_samples, self.replicas));
        }
        if !(self.max_temp >= 1.0 && self.max_temp.is_finite()) {
            return err(format!("max_temp must be at least 1 (got {})", self.max_temp));
        }
        for (name, v) in [
            ("global_fraction", self.global_fraction),
            ("burn_in_fraction", self.burn_in_fraction),
            ("train_fraction", self.train_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return err(format!("{name} must lie in [0, 1] (got {v})"));
            }
        }
        if self.burn_in_fraction >= 1.0 {
            return err("burn_in_fraction of 1 discards every sample".into());
        }
        if self.hidden == 0 {
            return err("hidden must be at least 1".into());
        }
        if self.task == Task::Regression && (self.embed_dim == 0 || self.time_lag == 0) {
            return err("embed_dim and time_lag must be at least 1".into());
        }
        self.prior().validate().map_err(ExperimentError::Config)?;
        self.proposal().validate().map_err(ExperimentError::Config)?;
        Ok(())
    }
}

/// Train/test data ready for sampling.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub shape: NetworkShape,
    pub train: Dataset,
    pub test: Dataset,
}

pub fn prepare(config: &RunConfig) -> Result<Prepared, ExperimentError> {
    let table = data::load_csv(&config.dataset)?;
    match config.task {
        Task::Regression => {
            let mut series = table.target;
            if let Some(n) = config.series_points {
                series.truncate(n);
            }
            let (scaled, _) = data::minmax_scale(&series);
            let embedded = data::takens_embed(&scaled, config.embed_dim, config.time_lag)?;
            let ds = embedded.into_dataset();
            let (train, test) = data::train_test_split(&ds, config.train_fraction, Split::Chronological)?;
            let shape = NetworkShape::regression(config.embed_dim, config.hidden)?;
            Ok(Prepared { shape, train, test })
        }
        Task::Classification => {
            let labels = data::labels_from_column(&table.target)?;
            let classes = match config.classes {
                Some(k) => k,
                None => labels.iter().max().map_or(0, |m| m + 1),
            };
            let inputs = table.features.ncols();
            let ds = ClassificationDataset::from_table(table, classes)?.into_dataset();
            let (train, test) = data::train_test_split(&ds, config.train_fraction, Split::Shuffled { seed: config.seed })?;
            let shape = NetworkShape::classification(inputs, config.hidden, classes)?;
            Ok(Prepared { shape, train, test })
        }
    }
}

/// Mean, best and (population) standard deviation of a per-sample metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub best: f64,
    pub std: f64,
}

impl MetricSummary {
    /// `best` is the minimum when `lower_is_better`, the maximum otherwise.
    pub fn from_values(values: &[f64], lower_is_better: bool) -> Self {
        if values.is_empty() {
            return Self { mean: f64::NAN, best: f64::NAN, std: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let best = if lower_is_better {
            values.iter().copied().fold(f64::INFINITY, f64::min)
        } else {
            values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        Self { mean, best, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub train: MetricSummary,
    pub test: MetricSummary,
    pub samples: usize,
}

/// Sample positions `(slot, index)` retained for prediction.
pub fn retained_samples(
    chains: &[&Chain],
    steps_per_replica: usize,
    burn_in_fraction: f64,
    schedule: &PhaseSchedule,
    pooling: Pooling,
) -> Vec<(usize, usize)> {
    let burn = (burn_in_fraction * steps_per_replica as f64).floor() as usize;
    let coldest = |chains: &[&Chain]| -> Vec<(usize, usize)> {
        chains.first().map_or_else(Vec::new, |c| (burn.min(c.len())..c.len()).map(|i| (0, i)).collect())
    };
    match pooling {
        Pooling::Coldest => coldest(chains),
        Pooling::Pooled => {
            let start = burn.max(schedule.global_steps(steps_per_replica));
            let picked: Vec<(usize, usize)> = chains
                .iter()
                .enumerate()
                .flat_map(|(slot, c)| (start.min(c.len())..c.len()).map(move |i| (slot, i)))
                .collect();
            if picked.is_empty() {
                log::warn!("no untempered samples after burn-in; summarising the T = 1 slot only");
                coldest(chains)
            } else {
                picked
            }
        }
    }
}

/// Train and test metric of every retained sample, summarised.
pub fn posterior_predict(
    chains: &[&Chain],
    picks: &[(usize, usize)],
    shape: &NetworkShape,
    train: &Dataset,
    test: &Dataset,
) -> Result<PosteriorSummary, ExperimentError> {
    let lower_is_better = shape.task() == Task::Regression;
    let mut train_m = Vec::with_capacity(picks.len());
    let mut test_m = Vec::with_capacity(picks.len());
    for &(slot, i) in picks {
        let theta = ParamVector::new(shape, chains[slot].theta(i).to_vec())?;
        train_m.push(inference::metric(shape, &theta, train)?);
        if !test.is_empty() {
            test_m.push(inference::metric(shape, &theta, test)?);
        }
    }
    Ok(PosteriorSummary {
        train: MetricSummary::from_values(&train_m, lower_is_better),
        test: MetricSummary::from_values(&test_m, lower_is_better),
        samples: picks.len(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub method: Method,
    /// `rmse` or `accuracy`.
    pub metric: String,
    pub train: MetricSummary,
    pub test: MetricSummary,
    pub swap_percent: f64,
    pub accept_percent: f64,
    pub retained_samples: usize,
    pub numerical_failures: u64,
    pub elapsed_seconds: f64,
    pub config: RunConfig,
}

impl RunReport {
    /// The report with the wall-clock field zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        Self { elapsed_seconds: 0.0, ..self.clone() }
    }
}

/// Everything produced by a run, kept in memory.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: RunConfig,
    pub prepared: Prepared,
    pub ensemble: EnsembleOutput,
    pub picks: Vec<(usize, usize)>,
    pub report: RunReport,
}

pub fn run_experiment(config: &RunConfig) -> Result<Experiment, ExperimentError> {
    config.validate()?;
    let prepared = prepare(config)?;
    let target = Target {
        shape: prepared.shape,
        train: prepared.train.clone(),
        prior: config.prior(),
        proposal: config.proposal(),
        tempering: config.tempering,
    };
    let ens_cfg = config.ensemble();
    log::info!(
        "{}: {:?}, {} replicas x {} steps, {} parameters",
        config.name,
        config.method,
        ens_cfg.replicas,
        ens_cfg.steps_per_replica,
        prepared.shape.param_count()
    );
    let ensemble = tempering::run(&ens_cfg, &target)?;

    let chains: Vec<&Chain> = ensemble.replicas.iter().map(|r| &r.history).collect();
    let picks = retained_samples(&chains, ens_cfg.steps_per_replica, config.burn_in_fraction, &ens_cfg.schedule, config.pooling);
    let summary = posterior_predict(&chains, &picks, &prepared.shape, &prepared.train, &prepared.test)?;

    let report = RunReport {
        name: config.name.clone(),
        method: config.method,
        metric: match config.task {
            Task::Regression => "rmse".into(),
            Task::Classification => "accuracy".into(),
        },
        train: summary.train,
        test: summary.test,
        swap_percent: ensemble.swap_stats.percent(),
        accept_percent: ensemble.accept_percent(),
        retained_samples: summary.samples,
        numerical_failures: ensemble.replicas.iter().map(|r| r.failures).sum(),
        elapsed_seconds: ensemble.elapsed.as_secs_f64(),
        config: config.clone(),
    };
    let experiment = Experiment { config: config.clone(), prepared, ensemble, picks, report };
    if let Some(dir) = &config.out {
        experiment.write_artifacts(dir)?;
    }
    Ok(experiment)
}

/// One histogram bin `[lo, hi)`; the last bin is closed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width histogram over the observed range. A constant input puts
/// every value in the first bin.
pub fn histogram(values: &[f64], bins: usize) -> Vec<Bin> {
    assert!(bins > 0, "need at least one bin");
    if values.is_empty() {
        return Vec::new();
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (max - min) / bins as f64;
    let mut out: Vec<Bin> = (0..bins)
        .map(|b| Bin { lo: min + b as f64 * width, hi: if b + 1 == bins { max } else { min + (b + 1) as f64 * width }, count: 0 })
        .collect();
    for &v in values {
        let b = if width > 0.0 { (((v - min) / width) as usize).min(bins - 1) } else { 0 };
        out[b].count += 1;
    }
    out
}

fn create(path: &Path) -> Result<BufWriter<File>, ExperimentError> {
    File::create(path).map(BufWriter::new).map_err(|source| ExperimentError::Write { path: path.to_path_buf(), source })
}

fn io_at<T>(path: &Path, r: std::io::Result<T>) -> Result<T, ExperimentError> {
    r.map_err(|source| ExperimentError::Write { path: path.to_path_buf(), source })
}

/// Write `trace.csv` (iteration, value) and `posterior.csv` (50-bin histogram)
/// for one coordinate of `chain`, starting at sample `start`.
pub fn emit_trace(chain: &Chain, start: usize, parameter_index: usize, dir: &Path) -> Result<(), ExperimentError> {
    let values: Vec<f64> = chain.coordinate(parameter_index).skip(start).collect();
    let path = dir.join("trace.csv");
    let mut w = create(&path)?;
    io_at(&path, writeln!(w, "iteration,value"))?;
    for (rec, v) in chain.records()[start.min(chain.len())..].iter().zip(&values) {
        io_at(&path, writeln!(w, "{},{}", rec.iteration, v))?;
    }
    io_at(&path, w.flush())?;

    let path = dir.join("posterior.csv");
    let mut w = create(&path)?;
    io_at(&path, writeln!(w, "bin_lo,bin_hi,count"))?;
    for bin in histogram(&values, 50) {
        io_at(&path, writeln!(w, "{},{},{}", bin.lo, bin.hi, bin.count))?;
    }
    io_at(&path, w.flush())
}

/// Header of the per-replica chain files.
pub fn chain_header(params: usize) -> String {
    let mut h = String::from("iteration,phase,temperature,loglik,logprior");
    for i in 1..=params {
        h.push_str(&format!(",theta_{i}"));
    }
    h
}

fn write_chain(path: &Path, chain: &Chain, schedule: &PhaseSchedule, steps: usize) -> Result<(), ExperimentError> {
    let mut w = create(path)?;
    io_at(path, writeln!(w, "{}", chain_header(chain.width())))?;
    for (i, rec) in chain.records().iter().enumerate() {
        let phase = if schedule.is_global(rec.iteration, steps) { "global" } else { "local" };
        let mut line = format!("{},{},{},{},{}", rec.iteration, phase, 1.0 / rec.beta, rec.loglik, rec.logprior);
        for v in chain.theta(i) {
            line.push(',');
            line.push_str(&v.to_string());
        }
        io_at(path, writeln!(w, "{line}"))?;
    }
    io_at(path, w.flush())
}

impl Experiment {
    /// `report.json`, `chain_XX.csv` per replica, `trace.csv`, `posterior.csv`
    /// and, for regression, `predictions.csv` with posterior-predictive bands
    /// on the test set.
    pub fn write_artifacts(&self, dir: &Path) -> Result<(), ExperimentError> {
        io_at(dir, fs::create_dir_all(dir))?;
        let path = dir.join("report.json");
        let json = serde_json::to_string_pretty(&self.report).expect("report serialises");
        io_at(&path, fs::write(&path, json + "\n"))?;

        let steps = self.config.steps_per_replica();
        let schedule = PhaseSchedule { global_fraction: self.config.global_fraction };
        for r in &self.ensemble.replicas {
            write_chain(&dir.join(format!("chain_{:02}.csv", r.id)), &r.history, &schedule, steps)?;
        }

        let burn = (self.config.burn_in_fraction * steps as f64).floor() as usize;
        let coldest = &self.ensemble.replicas[0].history;
        if self.config.trace_param >= coldest.width() {
            return Err(ExperimentError::Config(format!(
                "trace_param {} is outside the {} parameters",
                self.config.trace_param,
                coldest.width()
            )));
        }
        emit_trace(coldest, burn, self.config.trace_param, dir)?;

        if self.prepared.shape.task() == Task::Regression && !self.prepared.test.is_empty() {
            self.write_predictions(&dir.join("predictions.csv"))?;
        }
        Ok(())
    }

    fn write_predictions(&self, path: &Path) -> Result<(), ExperimentError> {
        let shape = &self.prepared.shape;
        let test = &self.prepared.test;
        let n = test.len();
        let mut per_row: Vec<Vec<f64>> = vec![Vec::with_capacity(self.picks.len()); n];
        for &(slot, i) in &self.picks {
            let theta = ParamVector::new(shape, self.ensemble.replicas[slot].history.theta(i).to_vec())?;
            let out = forward_batch(shape, &theta, test.inputs().view())?;
            for (row, v) in per_row.iter_mut().zip(out.column(0)) {
                row.push(*v);
            }
        }
        let targets: &Array1<f64> = test.values().expect("regression test set");
        let mut w = create(path)?;
        io_at(path, writeln!(w, "row,target,mean,lower_95,upper_95"))?;
        for (r, preds) in per_row.iter_mut().enumerate() {
            preds.sort_by(f64::total_cmp);
            let mean = preds.iter().sum::<f64>() / preds.len().max(1) as f64;
            let q = |p: f64| preds.get(((preds.len() as f64 - 1.0) * p).round() as usize).copied().unwrap_or(f64::NAN);
            io_at(path, writeln!(w, "{},{},{},{},{}", r, targets[r], mean, q(0.025), q(0.975)))?;
        }
        io_at(path, w.flush())
    }
}
