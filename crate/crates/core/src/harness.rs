//! Experiment runner: data, trainer and search wired together, with every
//! artifact written under one output directory.
//!
//! A run is fully described by its [`ExperimentConfig`]. The resolved form,
//! including derived seeds, is written as `run_manifest.json`; loading that
//! file back with [`load_config`] reproduces the run byte for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{self, NoiseKind, NoisyDataset, SplitSpec};
use crate::distributions::ThetaParams;
use crate::error::{invalid, Result};
use crate::schedule::{
    fit_to_reference, schedule_csv, CoTeachingSchedule, FitResult, ScheduleParams, ShapeMap,
};
use crate::search::{run_search, SearchConfig, SearchOutcome, SearchTrace, UpdateRule};
use crate::seeds;
use crate::surrogate::{QuadraticSurrogate, QuarticSurrogate};
use crate::trainer::{TrainConfig, TrainReport, TrainingObjective};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "MEMOSCHED_WORKERS";

pub const SEARCH_TRACE_CSV: &str = "search_trace.csv";
pub const SEARCH_TRACE_JSON: &str = "search_trace.json";
pub const BEST_SCHEDULE_JSON: &str = "best_schedule.json";
pub const BEST_SCHEDULE_CURVE_CSV: &str = "best_schedule_curve.csv";
pub const FINAL_REPORT_CSV: &str = "final_report.csv";
pub const RUN_MANIFEST_JSON: &str = "run_manifest.json";
pub const COMPARISON_CSV: &str = "comparison.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Gaussian {
        classes: usize,
        dim: usize,
        n_per_class: usize,
        spread: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Gaussian {
            classes: 3,
            dim: 20,
            n_per_class: 500,
            spread: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            kind: NoiseKind::Symmetric,
            rate: 0.4,
        }
    }
}

/// What the search evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveMode {
    /// Train a network per candidate and read its validation metric.
    Trainer,
    /// [`QuadraticSurrogate::default`], no training.
    Quadratic,
    /// [`QuarticSurrogate::default`], no training.
    Quartic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub noise: NoiseSpec,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub train: TrainConfig,
    pub search: SearchConfig,
    pub objective: ObjectiveMode,
    pub shape_map: ShapeMap,
    /// Rules run by [`compare_search_algorithms`].
    pub rules: Vec<UpdateRule>,
    pub out_dir: PathBuf,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    /// The desk-scale setup: 3-class 20-d Gaussian data, 40% symmetric
    /// noise, full-batch training for 300 epochs.
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            dataset: DatasetSpec::default(),
            noise: NoiseSpec::default(),
            val_fraction: 0.1,
            test_fraction: 0.2,
            train: desk_train_config(),
            search: SearchConfig::default(),
            objective: ObjectiveMode::Trainer,
            shape_map: ShapeMap::default(),
            rules: UpdateRule::ALL.to_vec(),
            out_dir: PathBuf::from("out"),
            workers: 1,
        }
    }
}

/// Full-batch gradient descent settings under which the memorization
/// pattern shows up cleanly on the default Gaussian data.
pub fn desk_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 300,
        batch_size: 4096,
        learning_rate: 0.3,
        momentum: 0.0,
        hidden: vec![32],
        ..TrainConfig::default()
    }
}

/// Seeds handed to each component, all derived from the experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedSeeds {
    pub data: u64,
    pub noise: u64,
    pub search: u64,
    pub train: u64,
}

impl ResolvedSeeds {
    pub fn from_root(seed: u64) -> ResolvedSeeds {
        ResolvedSeeds {
            data: seeds::derive(seed, seeds::DATA),
            noise: seeds::derive(seed, seeds::NOISE),
            search: seeds::derive(seed, seeds::SEARCH),
            train: seeds::derive(seed, seeds::TRAIN),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub seeds: ResolvedSeeds,
    pub version: String,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(invalid("worker count must be at least one"));
        }
        if !(0.0..1.0).contains(&self.noise.rate) {
            return Err(invalid(format!("noise rate must lie in [0, 1), got {}", self.noise.rate)));
        }
        if self.noise.kind == NoiseKind::None && self.noise.rate != 0.0 {
            return Err(invalid("noise kind `none` needs rate 0"));
        }
        let held_out = self.val_fraction + self.test_fraction;
        if !(self.val_fraction >= 0.0 && self.test_fraction >= 0.0 && held_out < 1.0) {
            return Err(invalid("validation and test fractions must be non-negative and sum below 1"));
        }
        if self.rules.is_empty() {
            return Err(invalid("need at least one search rule"));
        }
        self.train.validate()?;
        self.search.validate()
    }

    /// Component configs with derived seeds and the worker count filled in.
    pub fn resolved(&self) -> (TrainConfig, SearchConfig, ResolvedSeeds) {
        let s = ResolvedSeeds::from_root(self.seed);
        let train = TrainConfig {
            seed: s.train,
            ..self.train.clone()
        };
        let search = SearchConfig {
            seed: s.search,
            workers: self.workers,
            ..self.search.clone()
        };
        (train, search, s)
    }

    pub fn manifest(&self) -> RunManifest {
        RunManifest {
            config: self.clone(),
            seeds: ResolvedSeeds::from_root(self.seed),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Reads a config file, accepting either a bare [`ExperimentConfig`] or a
/// [`RunManifest`] written by an earlier run.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("config").is_some() && value.get("seeds").is_some() {
        Ok(serde_json::from_value::<RunManifest>(value)?.config)
    } else {
        Ok(serde_json::from_value(value)?)
    }
}

/// Worker count from [`WORKERS_ENV`], if set and valid.
pub fn workers_from_env() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Builds the noisy dataset the config describes.
pub fn build_dataset(config: &ExperimentConfig) -> Result<NoisyDataset> {
    let s = ResolvedSeeds::from_root(config.seed);
    let split = SplitSpec {
        val_fraction: config.val_fraction,
        test_fraction: config.test_fraction,
        seed: s.data,
    };
    let clean = match &config.dataset {
        DatasetSpec::Gaussian {
            classes,
            dim,
            n_per_class,
            spread,
        } => data::make_gaussian_mixture(*classes, *dim, *n_per_class, *spread, s.data)?.with_splits(split)?,
        DatasetSpec::Idx { images, labels, limit } => data::load_idx(images, labels, *limit)?.with_splits(split)?,
    };
    match config.noise.kind {
        NoiseKind::None => Ok(clean),
        NoiseKind::Symmetric => data::inject_symmetric_noise(&clean, config.noise.rate, s.noise),
        NoiseKind::Pair => data::inject_pair_noise(&clean, config.noise.rate, s.noise),
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::write(dir.join(name), contents)?;
    Ok(())
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Runs one search with `search` under the configured objective.
fn search_with(config: &ExperimentConfig, search: &SearchConfig, env: Option<&TrainingObjective>) -> Result<SearchOutcome> {
    match config.objective {
        ObjectiveMode::Trainer => {
            let env = env.ok_or_else(|| invalid("trainer objective needs a dataset"))?;
            run_search(search, env)
        }
        ObjectiveMode::Quadratic => {
            let s = QuadraticSurrogate::default();
            run_search(search, &|x: &ScheduleParams| s.value(x))
        }
        ObjectiveMode::Quartic => {
            let s = QuarticSurrogate::default();
            run_search(search, &|x: &ScheduleParams| s.value(x))
        }
    }
}

fn training_env(config: &ExperimentConfig, train: &TrainConfig) -> Result<Option<TrainingObjective>> {
    if config.objective != ObjectiveMode::Trainer {
        return Ok(None);
    }
    let dataset = Arc::new(build_dataset(config)?);
    Ok(Some(TrainingObjective::new(dataset, train.clone(), config.shape_map)?))
}

/// Everything [`run_experiment`] produced, in memory.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub outcome: SearchOutcome,
    /// The best schedule retrained; `None` for surrogate objectives.
    pub report: Option<TrainReport>,
    pub manifest: RunManifest,
}

/// Searches a schedule and writes the six run artifacts into `config.out_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    prepare_out_dir(&config.out_dir)?;
    let (train, search, _) = config.resolved();
    let env = training_env(config, &train)?;
    let outcome = search_with(config, &search, env.as_ref())?;
    let report = env.as_ref().map(|e| e.train(&outcome.best)).transpose()?;

    let dir = &config.out_dir;
    let manifest = config.manifest();
    write(dir, SEARCH_TRACE_CSV, &outcome.trace.to_csv())?;
    write(dir, SEARCH_TRACE_JSON, &outcome.trace.to_json()?)?;
    write(dir, BEST_SCHEDULE_JSON, &outcome.best.to_json()?)?;
    write(
        dir,
        BEST_SCHEDULE_CURVE_CSV,
        &emit_schedule_plot_data(&outcome.best, train.epochs, &config.shape_map)?,
    )?;
    let final_report = match &report {
        Some(r) => r.to_csv(),
        None => surrogate_report(config.objective, &outcome),
    };
    write(dir, FINAL_REPORT_CSV, &final_report)?;
    write(dir, RUN_MANIFEST_JSON, &serde_json::to_string_pretty(&manifest)?)?;
    Ok(ExperimentResult {
        outcome,
        report,
        manifest,
    })
}

fn surrogate_report(mode: ObjectiveMode, outcome: &SearchOutcome) -> String {
    let expected = |theta: &ThetaParams| match mode {
        ObjectiveMode::Quadratic => QuadraticSurrogate::default().expected(theta),
        _ => QuarticSurrogate::default().expected(theta),
    };
    let mut out = String::from("iteration,expected_f\n");
    for r in &outcome.trace.iterations {
        out.push_str(&format!("{},{}\n", r.iteration, expected(&r.theta)));
    }
    out.push_str(&format!("final,{}\n", expected(&outcome.final_theta)));
    out
}

/// One point of a calls-vs-best curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub rule: UpdateRule,
    pub calls: usize,
    pub best_f: f64,
}

/// Runs every rule in `config.rules` with the same budget and seed and
/// writes `comparison.csv` (`rule,calls,best_f`, one row per iteration).
pub fn compare_search_algorithms(config: &ExperimentConfig) -> Result<Vec<(UpdateRule, SearchTrace)>> {
    config.validate()?;
    prepare_out_dir(&config.out_dir)?;
    let (train, search, _) = config.resolved();
    let env = training_env(config, &train)?;
    let mut traces = Vec::with_capacity(config.rules.len());
    for &rule in &config.rules {
        let cfg = SearchConfig {
            rule,
            step_size: if rule == search.rule { search.step_size } else { rule.default_step() },
            ..search.clone()
        };
        traces.push((rule, search_with(config, &cfg, env.as_ref())?.trace));
    }
    write(&config.out_dir, COMPARISON_CSV, &comparison_csv(&traces))?;
    write(&config.out_dir, RUN_MANIFEST_JSON, &serde_json::to_string_pretty(&config.manifest())?)?;
    Ok(traces)
}

pub fn comparison_rows(traces: &[(UpdateRule, SearchTrace)]) -> Vec<ComparisonRow> {
    traces
        .iter()
        .flat_map(|(rule, trace)| {
            trace.iterations.iter().map(move |r| ComparisonRow {
                rule: *rule,
                calls: r.calls,
                best_f: r.best_f,
            })
        })
        .collect()
}

pub fn comparison_csv(traces: &[(UpdateRule, SearchTrace)]) -> String {
    let mut out = String::from("rule,calls,best_f\n");
    for row in comparison_rows(traces) {
        out.push_str(&format!("{},{},{}\n", row.rule, row.calls, row.best_f));
    }
    out
}

/// `t,R` rows for `t = 0..=horizon`.
pub fn emit_schedule_plot_data(x: &ScheduleParams, horizon: usize, map: &ShapeMap) -> Result<String> {
    schedule_csv(x, horizon, map)
}

/// Fits the mixture to the co-teaching curve and writes the fitted schedule
/// and both curves.
pub fn fit_coteaching(tau: f64, c: f64, t_k: f64, horizon: usize, map: &ShapeMap, out_dir: &Path) -> Result<FitResult> {
    let reference = CoTeachingSchedule::new(tau, c, t_k)?;
    let fit = fit_to_reference(|t: f64| reference.at(t), horizon, map)?;
    prepare_out_dir(out_dir)?;
    write(out_dir, "fitted_schedule.json", &fit.params.to_json()?)?;
    let mut curve = String::from("t,reference,fitted\n");
    for t in 0..=horizon {
        let r = crate::schedule::eval_schedule(&fit.params, t as f64, horizon, map)?;
        curve.push_str(&format!("{},{},{}\n", t, reference.at(t as f64), r));
    }
    write(out_dir, "fitted_curve.csv", &curve)?;
    write(out_dir, "fit_residual.txt", &format!("{}\n", fit.residual))?;
    Ok(fit)
}

/// Trains once with schedule `x` (keep everything when `None`) and writes
/// `final_report.csv`.
pub fn train_once(config: &ExperimentConfig, x: Option<&ScheduleParams>) -> Result<TrainReport> {
    config.validate()?;
    prepare_out_dir(&config.out_dir)?;
    let (train, _, _) = config.resolved();
    let dataset = Arc::new(build_dataset(config)?);
    let env = TrainingObjective::new(dataset, train, config.shape_map)?;
    let keep_all = ScheduleParams::keep_all();
    let report = env.train(x.unwrap_or(&keep_all))?;
    write(&config.out_dir, FINAL_REPORT_CSV, &report.to_csv())?;
    Ok(report)
}

/// Reads a schedule JSON file.
pub fn load_schedule(path: &Path) -> Result<ScheduleParams> {
    ScheduleParams::from_json(&fs::read_to_string(path)?)
}
