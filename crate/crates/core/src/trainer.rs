//! Mini-batch training with small-loss sample selection.
//!
//! In every epoch `t` each mini-batch keeps the `keep_count(R(t), |batch|)`
//! samples with the smallest current loss and updates on those only. The
//! co-teaching variant trains two networks that pick samples for each other.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{label_precision, NoisyDataset, Split};
use crate::error::{invalid, Result};
use crate::mlp::{stack_rows, Forward, Mlp, Sgd};
use crate::schedule::{keep_count, KeepRate, MixtureSchedule, ScheduleParams, ShapeMap};
use crate::search::Evaluator;
use crate::seeds;

/// Objective value reported for a diverged run.
pub const DIVERGENCE_SENTINEL: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    /// Train on every sample.
    None,
    /// One network selects its own small-loss samples.
    Single,
    /// Two networks select for each other.
    Coteaching,
}

/// What the black-box objective reads from a finished run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    ValLoss,
    ValError,
}

/// Which epoch the objective is read at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadAt {
    Final,
    Best,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub hidden: Vec<usize>,
    pub selection: SelectionMode,
    pub objective: ObjectiveKind,
    pub read_at: ReadAt,
    pub seed: u64,
    /// Co-teaching only: start both networks from the same weights.
    pub identical_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            hidden: vec![32],
            selection: SelectionMode::Coteaching,
            objective: ObjectiveKind::ValLoss,
            read_at: ReadAt::Final,
            seed: 0,
            identical_init: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("training needs at least one epoch"));
        }
        if self.batch_size < 2 {
            return Err(invalid("batch size must be at least 2"));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("need a positive learning rate and momentum in [0, 1)"));
        }
        if self.hidden.contains(&0) {
            return Err(invalid("hidden layers need at least one unit"));
        }
        Ok(())
    }

    fn layer_sizes(&self, dataset: &NoisyDataset) -> Vec<usize> {
        let mut sizes = vec![dataset.dim()];
        sizes.extend(&self.hidden);
        sizes.push(dataset.classes());
        sizes
    }
}

/// Per-epoch curves of one run. Co-teaching reports follow network A.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Accuracy against the training-visible (noisy) labels.
    pub train_acc: Vec<f64>,
    pub val_acc: Vec<f64>,
    pub test_acc: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Mean over mini-batches of the clean fraction among selected samples.
    pub label_precision: Vec<f64>,
    /// Mean keep rate applied in each epoch.
    pub keep_rate: Vec<f64>,
    /// Test accuracy of network B, co-teaching only.
    pub peer_test_acc: Option<Vec<f64>>,
    pub final_val_loss: f64,
    pub wall_time_secs: f64,
}

impl TrainReport {
    pub fn final_test_acc(&self) -> f64 {
        self.test_acc.last().copied().unwrap_or(0.0)
    }

    pub fn mean_label_precision(&self) -> f64 {
        self.label_precision.iter().sum::<f64>() / self.label_precision.len().max(1) as f64
    }

    /// The objective value under `kind` read at `at`; non-finite runs map to
    /// [`DIVERGENCE_SENTINEL`].
    pub fn objective(&self, kind: ObjectiveKind, at: ReadAt) -> f64 {
        let curve: Vec<f64> = match kind {
            ObjectiveKind::ValLoss => self.val_loss.clone(),
            ObjectiveKind::ValError => self.val_acc.iter().map(|a| 1.0 - a).collect(),
        };
        let v = match at {
            ReadAt::Final => curve.last().copied().unwrap_or(f64::NAN),
            ReadAt::Best => curve.iter().copied().fold(f64::NAN, f64::min),
        };
        if v.is_finite() && curve.iter().all(|c| c.is_finite()) {
            v
        } else {
            DIVERGENCE_SENTINEL
        }
    }

    /// `epoch,train_acc,val_acc,test_acc,label_precision`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_acc,val_acc,test_acc,label_precision\n");
        for e in 0..self.train_acc.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e, self.train_acc[e], self.val_acc[e], self.test_acc[e], self.label_precision[e]
            ));
        }
        out
    }
}

/// Indices of the `n_keep` smallest losses, ties to the lower index, sorted ascending.
pub fn select_small_loss(losses: &[f64], n_keep: usize) -> Vec<usize> {
    let n_keep = n_keep.min(losses.len());
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    let mut keep = order[..n_keep].to_vec();
    keep.sort_unstable();
    keep
}

/// A split materialized as a feature matrix plus labels.
struct SplitData {
    rows: Vec<usize>,
    x: DMatrix<f64>,
    y: Vec<usize>,
}

impl SplitData {
    fn new(dataset: &NoisyDataset, split: Split) -> SplitData {
        let rows = dataset.indices(split);
        let x = stack_rows(rows.iter().map(|&i| dataset.row(i)), dataset.dim());
        let y = rows.iter().map(|&i| dataset.labels()[i]).collect();
        SplitData { rows, x, y }
    }

    fn batch(&self, positions: &[usize]) -> (DMatrix<f64>, Vec<usize>) {
        let x = DMatrix::from_fn(positions.len(), self.x.ncols(), |r, c| self.x[(positions[r], c)]);
        let y = positions.iter().map(|&p| self.y[p]).collect();
        (x, y)
    }
}

fn accuracy(model: &Mlp, data: &SplitData) -> Result<f64> {
    if data.y.is_empty() {
        return Ok(0.0);
    }
    let pred = model.predict(&data.x)?;
    let hits = pred.iter().zip(&data.y).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / data.y.len() as f64)
}

fn update(
    model: &mut Mlp,
    opt: &mut Sgd,
    x: &DMatrix<f64>,
    y: &[usize],
    cache: Option<&Forward>,
    rows: &[usize],
) -> Result<()> {
    let (g, _) = match cache {
        Some(c) => model.backward_rows(x, c, y, rows)?,
        None => model.backward(x, y)?,
    };
    opt.step(model, &g);
    Ok(())
}

/// Trains one network with small-loss selection (or none, per `config.selection`).
pub fn train_single(dataset: &NoisyDataset, schedule: &dyn KeepRate, config: &TrainConfig) -> Result<TrainReport> {
    train(dataset, schedule, config, false)
}

/// Trains two networks that select small-loss samples for each other.
pub fn train_coteaching(dataset: &NoisyDataset, schedule: &dyn KeepRate, config: &TrainConfig) -> Result<TrainReport> {
    train(dataset, schedule, config, true)
}

/// Dispatches on `config.selection`.
pub fn train_with(dataset: &NoisyDataset, schedule: &dyn KeepRate, config: &TrainConfig) -> Result<TrainReport> {
    match config.selection {
        SelectionMode::Coteaching => train_coteaching(dataset, schedule, config),
        SelectionMode::None | SelectionMode::Single => train_single(dataset, schedule, config),
    }
}

/// Which per-epoch curves a run records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Record {
    All,
    /// Validation curves only; train and test entries are NaN.
    Validation,
}

fn train(dataset: &NoisyDataset, schedule: &dyn KeepRate, config: &TrainConfig, twin: bool) -> Result<TrainReport> {
    train_recording(dataset, schedule, config, twin, Record::All)
}

fn train_recording(
    dataset: &NoisyDataset,
    schedule: &dyn KeepRate,
    config: &TrainConfig,
    twin: bool,
    record: Record,
) -> Result<TrainReport> {
    config.validate()?;
    let started = Instant::now();
    let train_data = SplitData::new(dataset, Split::Train);
    if train_data.rows.is_empty() {
        return Err(invalid("dataset has no training rows"));
    }
    let val = SplitData::new(dataset, Split::Val);
    let test = SplitData::new(dataset, Split::Test);
    let clean = dataset.clean_mask(&train_data.rows);

    let sizes = config.layer_sizes(dataset);
    let mut model_a = Mlp::new(&sizes, &mut seeds::stream(config.seed, seeds::INIT_A))?;
    let mut model_b = if twin {
        let tag = if config.identical_init { seeds::INIT_A } else { seeds::INIT_B };
        Some(Mlp::new(&sizes, &mut seeds::stream(config.seed, tag))?)
    } else {
        None
    };
    let mut opt_a = Sgd::new(config.learning_rate, config.momentum);
    let mut opt_b = Sgd::new(config.learning_rate, config.momentum);
    let mut shuffle = seeds::stream(config.seed, seeds::SHUFFLE);
    let select = config.selection != SelectionMode::None;

    let epochs = config.epochs;
    let mut report = TrainReport {
        train_acc: Vec::with_capacity(epochs),
        val_acc: Vec::with_capacity(epochs),
        test_acc: Vec::with_capacity(epochs),
        val_loss: Vec::with_capacity(epochs),
        label_precision: Vec::with_capacity(epochs),
        keep_rate: Vec::with_capacity(epochs),
        peer_test_acc: twin.then(|| Vec::with_capacity(epochs)),
        final_val_loss: f64::NAN,
        wall_time_secs: 0.0,
    };

    let mut order: Vec<usize> = (0..train_data.rows.len()).collect();
    for epoch in 0..epochs {
        let rate = if select { schedule.rate(epoch, epochs) } else { 1.0 };
        order.shuffle(&mut shuffle);
        let mut precision_sum = 0.0;
        let mut batches = 0usize;
        for positions in order.chunks(config.batch_size) {
            let (x, y) = train_data.batch(positions);
            let batch_clean: Vec<bool> = positions.iter().map(|&p| clean[p]).collect();
            let n_keep = if select { keep_count(rate, positions.len()) } else { positions.len() };
            let partial = n_keep < positions.len();

            // One forward pass per net serves both its selection and its update.
            let cache_a = if partial { Some(model_a.forward_cached(&x)?) } else { None };
            let picked_by_a = match &cache_a {
                Some(c) => select_small_loss(&c.losses(&y)?, n_keep),
                None => (0..positions.len()).collect(),
            };
            precision_sum += label_precision(&picked_by_a, &batch_clean)?;
            batches += 1;

            match model_b.as_mut() {
                None => update(&mut model_a, &mut opt_a, &x, &y, cache_a.as_ref(), &picked_by_a)?,
                Some(b) => {
                    let cache_b = if partial { Some(b.forward_cached(&x)?) } else { None };
                    let picked_by_b = match &cache_b {
                        Some(c) => select_small_loss(&c.losses(&y)?, n_keep),
                        None => (0..positions.len()).collect(),
                    };
                    update(&mut model_a, &mut opt_a, &x, &y, cache_a.as_ref(), &picked_by_b)?;
                    update(b, &mut opt_b, &x, &y, cache_b.as_ref(), &picked_by_a)?;
                }
            }
        }

        report.keep_rate.push(rate);
        report.label_precision.push(precision_sum / batches as f64);
        let (val_loss, val_acc) = if val.y.is_empty() {
            (f64::NAN, 0.0)
        } else {
            model_a.loss_and_accuracy(&val.x, &val.y)?
        };
        report.val_loss.push(val_loss);
        report.val_acc.push(val_acc);
        if record == Record::All {
            report.train_acc.push(accuracy(&model_a, &train_data)?);
            report.test_acc.push(accuracy(&model_a, &test)?);
            if let (Some(b), Some(peer)) = (model_b.as_ref(), report.peer_test_acc.as_mut()) {
                peer.push(accuracy(b, &test)?);
            }
        } else {
            report.train_acc.push(f64::NAN);
            report.test_acc.push(f64::NAN);
            if let Some(peer) = report.peer_test_acc.as_mut() {
                peer.push(f64::NAN);
            }
        }
    }
    report.final_val_loss = report.val_loss.last().copied().unwrap_or(f64::NAN);
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// The search objective: train with the candidate schedule, read the
/// configured validation metric.
#[derive(Debug, Clone)]
pub struct TrainingObjective {
    pub dataset: Arc<NoisyDataset>,
    pub config: TrainConfig,
    pub map: ShapeMap,
}

impl TrainingObjective {
    pub fn new(dataset: Arc<NoisyDataset>, config: TrainConfig, map: ShapeMap) -> Result<TrainingObjective> {
        config.validate()?;
        Ok(TrainingObjective { dataset, config, map })
    }

    pub fn train(&self, x: &ScheduleParams) -> Result<TrainReport> {
        let schedule = MixtureSchedule::new(x.clone(), self.map)?;
        train_with(&self.dataset, &schedule, &self.config)
    }
}

/// f̄(x): deterministic in `(x, dataset, config)`.
///
/// Only the validation curves are recorded, so this is cheaper than
/// [`TrainingObjective::train`] but returns the same value.
pub fn evaluate_objective(x: &ScheduleParams, env: &TrainingObjective) -> Result<f64> {
    let schedule = MixtureSchedule::new(x.clone(), env.map)?;
    let twin = env.config.selection == SelectionMode::Coteaching;
    let report = train_recording(&env.dataset, &schedule, &env.config, twin, Record::Validation)?;
    Ok(report.objective(env.config.objective, env.config.read_at))
}

impl Evaluator for TrainingObjective {
    fn evaluate(&self, x: &ScheduleParams) -> Result<f64> {
        evaluate_objective(x, self)
    }
}
