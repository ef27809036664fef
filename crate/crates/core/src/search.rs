//! The outer search loop over distribution parameters θ.
//!
//! Each iteration samples K schedules from p_θ, evaluates the black-box
//! objective on each, forms score-function estimates of ∇J and ∇²J, and
//! takes a preconditioned descent step. Gradient descent, natural gradient
//! and random search share the same loop and accounting.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{self, ThetaBounds, ThetaParams};
use crate::error::{invalid, Error, Result};
use crate::schedule::ScheduleParams;

/// How θ is moved after each batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateRule {
    /// Preconditioned by the clamped Monte-Carlo Hessian of J.
    Newton,
    /// Plain gradient descent.
    Gd,
    /// Preconditioned by the clamped sample Fisher matrix.
    Ng,
    /// θ stays at the uniform initialization.
    Random,
}

impl UpdateRule {
    pub const ALL: [UpdateRule; 4] = [UpdateRule::Newton, UpdateRule::Gd, UpdateRule::Ng, UpdateRule::Random];

    pub fn name(self) -> &'static str {
        match self {
            UpdateRule::Newton => "newton",
            UpdateRule::Gd => "gd",
            UpdateRule::Ng => "ng",
            UpdateRule::Random => "random",
        }
    }

    /// Default step size for the rule.
    pub fn default_step(self) -> f64 {
        match self {
            UpdateRule::Newton => 1.0,
            UpdateRule::Gd | UpdateRule::Ng | UpdateRule::Random => 0.05,
        }
    }
}

impl std::str::FromStr for UpdateRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UpdateRule::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| invalid(format!("unknown update rule `{s}`")))
    }
}

impl std::fmt::Display for UpdateRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Outer iterations M.
    pub iterations: usize,
    /// Samples per iteration K.
    pub samples: usize,
    /// Step size ρ.
    pub step_size: f64,
    /// Lower eigenvalue clamp η.
    pub eta: f64,
    /// Upper eigenvalue clamp L.
    pub l_clamp: f64,
    pub rule: UpdateRule,
    /// Subtract the batch-mean objective in the gradient estimate.
    pub baseline: bool,
    pub seed: u64,
    /// Hard cap on evaluator calls.
    pub budget: Option<usize>,
    /// Parallel evaluations per iteration.
    pub workers: usize,
    pub bounds: ThetaBounds,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            iterations: 20,
            samples: 8,
            step_size: 1.0,
            eta: 0.1,
            l_clamp: 100.0,
            rule: UpdateRule::Newton,
            baseline: true,
            seed: 0,
            budget: None,
            workers: 1,
            bounds: ThetaBounds::default(),
        }
    }
}

impl SearchConfig {
    /// Defaults for `rule`, including its default step size.
    pub fn for_rule(rule: UpdateRule) -> SearchConfig {
        SearchConfig {
            rule,
            step_size: rule.default_step(),
            ..SearchConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(invalid("search needs at least one iteration"));
        }
        if self.samples < 2 {
            return Err(invalid("search needs at least two samples per iteration"));
        }
        if !(self.step_size > 0.0) {
            return Err(invalid("step size must be positive"));
        }
        if !(self.eta > 0.0 && self.eta <= self.l_clamp) {
            return Err(invalid(format!("need 0 < eta <= L, got {} and {}", self.eta, self.l_clamp)));
        }
        if self.workers == 0 {
            return Err(invalid("worker count must be at least one"));
        }
        self.bounds.validate()
    }

    /// Total evaluator calls the run will make.
    pub fn total_calls(&self) -> usize {
        let full = self.iterations * self.samples;
        self.budget.map_or(full, |b| b.min(full))
    }
}

/// The per-sample quantities the estimators average over.
///
/// The log-density Hessian of p_θ does not depend on x, so the batch keeps a
/// single copy instead of one per sample.
#[derive(Debug, Clone)]
pub struct EstimatorBatch {
    f_values: Vec<f64>,
    scores: Vec<DVector<f64>>,
    logp_hessian: DMatrix<f64>,
}

impl EstimatorBatch {
    pub fn new(
        f_values: Vec<f64>,
        scores: Vec<DVector<f64>>,
        logp_hessian: DMatrix<f64>,
    ) -> Result<EstimatorBatch> {
        if f_values.len() < 2 || f_values.len() != scores.len() {
            return Err(invalid("a batch needs K >= 2 objective values with one score each"));
        }
        if f_values.iter().any(|f| !f.is_finite()) {
            return Err(invalid("objective values must be finite"));
        }
        let d = logp_hessian.nrows();
        if logp_hessian.ncols() != d || scores.iter().any(|s| s.len() != d) {
            return Err(invalid("score and Hessian dimensions disagree"));
        }
        Ok(EstimatorBatch {
            f_values,
            scores,
            logp_hessian,
        })
    }

    /// Builds the batch for schedule samples drawn from `theta`.
    pub fn from_samples(theta: &ThetaParams, xs: &[ScheduleParams], f_values: Vec<f64>) -> Result<EstimatorBatch> {
        let scores = xs
            .iter()
            .map(|x| distributions::score(theta, x))
            .collect::<Result<Vec<_>>>()?;
        EstimatorBatch::new(f_values, scores, distributions::parameter_hessian(theta)?)
    }

    pub fn len(&self) -> usize {
        self.f_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f_values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.logp_hessian.nrows()
    }

    pub fn f_values(&self) -> &[f64] {
        &self.f_values
    }
}

/// `(1/K) Σ (f_i - b) s_i`, with `b` the batch mean when `baseline` is set.
pub fn estimate_gradient(batch: &EstimatorBatch, baseline: bool) -> DVector<f64> {
    let k = batch.len() as f64;
    let b = if baseline {
        batch.f_values.iter().sum::<f64>() / k
    } else {
        0.0
    };
    let mut g = DVector::zeros(batch.dim());
    for (f, s) in batch.f_values.iter().zip(&batch.scores) {
        g.axpy((f - b) / k, s, 1.0);
    }
    g
}

/// `(1/K) Σ f_i (∇² log p + s_i s_iᵀ)`, symmetrized.
pub fn estimate_hessian(batch: &EstimatorBatch) -> DMatrix<f64> {
    let k = batch.len() as f64;
    let mean_f = batch.f_values.iter().sum::<f64>() / k;
    let mut h = &batch.logp_hessian * mean_f;
    for (f, s) in batch.f_values.iter().zip(&batch.scores) {
        h.ger(f / k, s, s, 1.0);
    }
    symmetrize(h)
}

/// Sample Fisher matrix `(1/K) Σ s_i s_iᵀ`.
pub fn estimate_fisher(batch: &EstimatorBatch) -> DMatrix<f64> {
    let k = batch.len() as f64;
    let d = batch.dim();
    let mut h = DMatrix::zeros(d, d);
    for s in &batch.scores {
        h.ger(1.0 / k, s, s, 1.0);
    }
    symmetrize(h)
}

fn symmetrize(h: DMatrix<f64>) -> DMatrix<f64> {
    let t = h.transpose();
    (h + t) * 0.5
}

/// Maps every eigenvalue λ of `h` to `min(max(|λ|, eta), l_clamp)`.
///
/// If the eigensolver fails (or `h` is not finite) the result is `eta * I`.
pub fn clamp_hessian(h: &DMatrix<f64>, eta: f64, l_clamp: f64) -> Result<DMatrix<f64>> {
    if !(eta > 0.0 && eta <= l_clamp) {
        return Err(invalid(format!("need 0 < eta <= L, got {eta} and {l_clamp}")));
    }
    if !h.is_square() {
        return Err(invalid("Hessian must be square"));
    }
    let n = h.nrows();
    let fallback = DMatrix::identity(n, n) * eta;
    if h.iter().any(|v| !v.is_finite()) {
        return Ok(fallback);
    }
    let Some(eig) = SymmetricEigen::try_new(symmetrize(h.clone()), f64::EPSILON, 10_000) else {
        return Ok(fallback);
    };
    let clamped = eig.eigenvalues.map(|l| l.abs().max(eta).min(l_clamp));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clamped) * v.transpose();
    Ok(symmetrize(out))
}

/// Step geometry shared by every rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSettings {
    pub step_size: f64,
    pub eta: f64,
    pub l_clamp: f64,
    pub bounds: ThetaBounds,
}

impl From<&SearchConfig> for StepSettings {
    fn from(c: &SearchConfig) -> Self {
        StepSettings {
            step_size: c.step_size,
            eta: c.eta,
            l_clamp: c.l_clamp,
            bounds: c.bounds,
        }
    }
}

/// One descent step `θ' = clip(θ - ρ H⁻¹ g)`.
///
/// `delta` is the already clamped Hessian used by Newton; `fisher` is the raw
/// sample Fisher matrix, clamped here before use by the natural gradient.
pub fn update_theta(
    theta: &ThetaParams,
    gradient: &DVector<f64>,
    rule: UpdateRule,
    delta: Option<&DMatrix<f64>>,
    fisher: Option<&DMatrix<f64>>,
    step: &StepSettings,
) -> Result<ThetaParams> {
    let current = theta.to_vector();
    if gradient.len() != current.len() {
        return Err(invalid("gradient and parameter dimensions differ"));
    }
    let direction = match rule {
        UpdateRule::Random => return Err(Error::NoUpdate),
        UpdateRule::Gd => gradient.clone(),
        UpdateRule::Newton => {
            let delta = delta.ok_or_else(|| invalid("newton update needs a curvature matrix"))?;
            solve_spd(delta, gradient)?
        }
        UpdateRule::Ng => {
            let fisher = fisher.ok_or_else(|| invalid("natural-gradient update needs a Fisher matrix"))?;
            solve_spd(&clamp_hessian(fisher, step.eta, step.l_clamp)?, gradient)?
        }
    };
    let next = (current - direction * step.step_size).map(|v| step.bounds.clip(v));
    theta.with_vector(&next)
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if m.nrows() != rhs.len() || !m.is_square() {
        return Err(invalid("curvature matrix has the wrong shape"));
    }
    m.clone()
        .cholesky()
        .map(|c| c.solve(rhs))
        .ok_or_else(|| invalid("curvature matrix is not positive definite"))
}

/// The black-box objective f̄(x).
pub trait Evaluator: Sync {
    fn evaluate(&self, x: &ScheduleParams) -> Result<f64>;
}

impl<F> Evaluator for F
where
    F: Fn(&ScheduleParams) -> f64 + Sync,
{
    fn evaluate(&self, x: &ScheduleParams) -> Result<f64> {
        Ok(self(x))
    }
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// θ the candidates were drawn from.
    pub theta: ThetaParams,
    pub samples: Vec<ScheduleParams>,
    /// `None` marks a failed evaluation.
    pub f_values: Vec<Option<f64>>,
    pub grad_norm: f64,
    pub step_norm: f64,
    pub best_f: f64,
    /// Cumulative evaluator calls after this iteration.
    pub calls: usize,
    /// Fewer than two evaluations survived, so θ was left unchanged.
    pub aborted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub rule: Option<UpdateRule>,
    pub iterations: Vec<IterationRecord>,
}

impl SearchTrace {
    pub fn calls(&self) -> usize {
        self.iterations.last().map_or(0, |r| r.calls)
    }

    /// `iteration,calls,best_f,grad_norm,step_norm` with LF line endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,calls,best_f,grad_norm,step_norm\n");
        for r in &self.iterations {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.iteration, r.calls, r.best_f, r.grad_norm, r.step_norm
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: ScheduleParams,
    pub best_f: f64,
    pub final_theta: ThetaParams,
    pub trace: SearchTrace,
}

/// Runs the search from the uniform initialization θ = 1.
pub fn run_search<E: Evaluator + ?Sized>(config: &SearchConfig, evaluator: &E) -> Result<SearchOutcome> {
    run_search_from(config, ThetaParams::uniform(), evaluator)
}

/// Random search: every candidate comes from the uniform distribution.
pub fn random_search<E: Evaluator + ?Sized>(config: &SearchConfig, evaluator: &E) -> Result<SearchOutcome> {
    let config = SearchConfig {
        rule: UpdateRule::Random,
        ..config.clone()
    };
    run_search(&config, evaluator)
}

/// Runs the search starting from `theta`.
pub fn run_search_from<E: Evaluator + ?Sized>(
    config: &SearchConfig,
    theta: ThetaParams,
    evaluator: &E,
) -> Result<SearchOutcome> {
    config.validate()?;
    theta.validate(&config.bounds)?;
    let pool = if config.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.workers)
                .build()
                .map_err(|e| Error::Evaluation(format!("worker pool: {e}")))?,
        )
    } else {
        None
    };
    let step = StepSettings::from(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut theta = theta;
    let mut best: Option<(ScheduleParams, f64)> = None;
    let mut trace = SearchTrace {
        rule: Some(config.rule),
        iterations: Vec::with_capacity(config.iterations),
    };
    let mut calls = 0;
    let budget = config.total_calls();

    for iteration in 0..config.iterations {
        let k = config.samples.min(budget - calls);
        if k == 0 {
            break;
        }
        let xs: Vec<ScheduleParams> = (0..k).map(|_| distributions::sample(&theta, &mut rng)).collect();
        let evaluate = |x: &ScheduleParams| evaluator.evaluate(x).ok().filter(|f| f.is_finite());
        let f_values: Vec<Option<f64>> = match &pool {
            Some(pool) => pool.install(|| xs.par_iter().map(evaluate).collect()),
            None => xs.iter().map(evaluate).collect(),
        };
        calls += k;

        for (x, f) in xs.iter().zip(&f_values) {
            if let Some(f) = *f {
                if best.as_ref().is_none_or(|(_, b)| f < *b) {
                    best = Some((x.clone(), f));
                }
            }
        }

        let (kept_x, kept_f): (Vec<ScheduleParams>, Vec<f64>) = xs
            .iter()
            .zip(&f_values)
            .filter_map(|(x, f)| f.map(|f| (x.clone(), f)))
            .unzip();
        let aborted = kept_f.len() < 2;
        let (next, grad_norm) = if aborted || config.rule == UpdateRule::Random {
            (theta.clone(), 0.0)
        } else {
            let batch = EstimatorBatch::from_samples(&theta, &kept_x, kept_f)?;
            let g = estimate_gradient(&batch, config.baseline);
            let next = match config.rule {
                UpdateRule::Newton => {
                    let delta = clamp_hessian(&estimate_hessian(&batch), config.eta, config.l_clamp)?;
                    update_theta(&theta, &g, config.rule, Some(&delta), None, &step)?
                }
                UpdateRule::Ng => update_theta(&theta, &g, config.rule, None, Some(&estimate_fisher(&batch)), &step)?,
                _ => update_theta(&theta, &g, config.rule, None, None, &step)?,
            };
            (next, g.norm())
        };
        let step_norm = (next.to_vector() - theta.to_vector()).norm();
        trace.iterations.push(IterationRecord {
            iteration,
            theta: theta.clone(),
            samples: xs,
            f_values,
            grad_norm,
            step_norm,
            best_f: best.as_ref().map_or(f64::INFINITY, |(_, f)| *f),
            calls,
            aborted,
        });
        theta = next;
    }

    let (best, best_f) = best.ok_or_else(|| Error::Evaluation("every candidate evaluation failed".into()))?;
    Ok(SearchOutcome {
        best,
        best_f,
        final_theta: theta,
        trace,
    })
}
