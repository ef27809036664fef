//! Keep-rate schedules R(t).
//!
//! The search space is a convex mixture of four decaying basis curves, each
//! with four shape parameters. Raw shape parameters live in the unit interval
//! and are mapped to effective values by a [`ShapeMap`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Number of registered basis functions.
pub const NUM_BASIS: usize = 4;
/// Shape parameters per basis function (a1..a4).
pub const SHAPE_DIM: usize = 4;

const SIMPLEX_TOL: f64 = 1e-9;

/// One of the four basis curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    /// `exp(-a2 t^a1) + a3 (t/T)^a4`
    ExpPower,
    /// `exp(-a2 t^a1) + a3 log(1+t^a4) / log(1+T^a4)`
    ExpLog,
    /// `(1 + a2 t)^-a1 + a3 (t/T)^a4`
    RationalPower,
    /// `(1 + a2 t)^-a1 + a3 log(1+t^a4) / log(1+T^a4)`
    RationalLog,
}

impl Basis {
    pub const ALL: [Basis; NUM_BASIS] = [
        Basis::ExpPower,
        Basis::ExpLog,
        Basis::RationalPower,
        Basis::RationalLog,
    ];

    /// Zero-based lookup.
    pub fn from_index(index: usize) -> Result<Basis> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| invalid(format!("basis index {index} out of range 0..{NUM_BASIS}")))
    }

    /// Evaluates the curve with effective shape parameters `a`.
    pub fn eval(self, t: f64, horizon: f64, a: &[f64; SHAPE_DIM]) -> f64 {
        let [a1, a2, a3, a4] = *a;
        let decay = match self {
            Basis::ExpPower | Basis::ExpLog => (-a2 * t.powf(a1)).exp(),
            Basis::RationalPower | Basis::RationalLog => (1.0 + a2 * t).powf(-a1),
        };
        let growth = match self {
            Basis::ExpPower | Basis::RationalPower => (t / horizon).powf(a4),
            Basis::ExpLog | Basis::RationalLog => {
                (t.powf(a4)).ln_1p() / (horizon.powf(a4)).ln_1p()
            }
        };
        decay + a3 * growth
    }
}

/// Affine map from raw unit-interval shape values to effective values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeMap {
    ranges: [(f64, f64); SHAPE_DIM],
}

impl Default for ShapeMap {
    fn default() -> Self {
        ShapeMap {
            ranges: [(0.5, 2.0), (0.0, 1.0), (0.0, 1.0), (0.5, 2.0)],
        }
    }
}

impl ShapeMap {
    /// Builds a map from `(lo, hi)` per slot.
    ///
    /// The exponent slots a1 and a4 must stay strictly positive so that every
    /// basis curve starts at exactly 1.
    pub fn new(ranges: [(f64, f64); SHAPE_DIM]) -> Result<ShapeMap> {
        for (slot, &(lo, hi)) in ranges.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(invalid(format!("shape slot {slot}: need lo < hi, got [{lo}, {hi}]")));
            }
        }
        if ranges[0].0 <= 0.0 || ranges[3].0 <= 0.0 {
            return Err(invalid("exponent slots a1 and a4 need a positive lower bound"));
        }
        if ranges[1].0 < 0.0 {
            return Err(invalid("decay rate a2 must be non-negative"));
        }
        Ok(ShapeMap { ranges })
    }

    pub fn ranges(&self) -> &[(f64, f64); SHAPE_DIM] {
        &self.ranges
    }

    pub fn apply(&self, raw: &[f64; SHAPE_DIM]) -> [f64; SHAPE_DIM] {
        let mut out = [0.0; SHAPE_DIM];
        for ((o, &r), &(lo, hi)) in out.iter_mut().zip(raw).zip(&self.ranges) {
            *o = lo + (hi - lo) * r;
        }
        out
    }

    /// Inverse of [`ShapeMap::apply`].
    pub fn raw_for(&self, effective: &[f64; SHAPE_DIM]) -> Result<[f64; SHAPE_DIM]> {
        let mut out = [0.0; SHAPE_DIM];
        for (slot, ((o, &e), &(lo, hi))) in out.iter_mut().zip(effective).zip(&self.ranges).enumerate() {
            let r = (e - lo) / (hi - lo);
            if !(0.0..=1.0).contains(&r) {
                return Err(invalid(format!("effective value {e} outside slot {slot} range [{lo}, {hi}]")));
            }
            *o = r;
        }
        Ok(out)
    }
}

/// A point in the search space: mixture weights plus raw shape rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<[f64; SHAPE_DIM]>,
}

impl ScheduleParams {
    pub fn new(alpha: Vec<f64>, beta: Vec<[f64; SHAPE_DIM]>) -> Result<ScheduleParams> {
        let params = ScheduleParams { alpha, beta };
        params.validate()?;
        Ok(params)
    }

    /// All weight on basis `index`, every raw shape set to `raw`.
    pub fn single(index: usize, raw: [f64; SHAPE_DIM]) -> Result<ScheduleParams> {
        Basis::from_index(index)?;
        let mut alpha = vec![0.0; NUM_BASIS];
        alpha[index] = 1.0;
        ScheduleParams::new(alpha, vec![raw; NUM_BASIS])
    }

    /// The schedule that keeps every sample at every epoch (no decay, no growth).
    pub fn keep_all() -> ScheduleParams {
        ScheduleParams {
            alpha: vec![1.0 / NUM_BASIS as f64; NUM_BASIS],
            beta: vec![[0.5, 0.0, 0.0, 0.5]; NUM_BASIS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.len() != NUM_BASIS || self.beta.len() != NUM_BASIS {
            return Err(invalid(format!(
                "expected {NUM_BASIS} mixture weights and shape rows, got {} and {}",
                self.alpha.len(),
                self.beta.len()
            )));
        }
        if self.alpha.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(invalid("mixture weights must be finite and non-negative"));
        }
        let total: f64 = self.alpha.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(invalid(format!("mixture weights sum to {total}, not 1")));
        }
        for row in &self.beta {
            check_shape_row(row)?;
        }
        Ok(())
    }

    /// Parameters flattened as `[alpha..., beta row 0..., beta row 1..., ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.alpha.clone();
        for row in &self.beta {
            v.extend_from_slice(row);
        }
        v
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<ScheduleParams> {
        let p: ScheduleParams = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }
}

fn check_shape_row(row: &[f64; SHAPE_DIM]) -> Result<()> {
    if row.iter().all(|b| (0.0..=1.0).contains(b)) {
        Ok(())
    } else {
        Err(invalid(format!("shape parameters {row:?} outside [0, 1]")))
    }
}

fn check_epoch(t: f64, horizon: usize) -> Result<()> {
    if horizon == 0 {
        return Err(invalid("horizon must be at least one epoch"));
    }
    if !(0.0..=horizon as f64).contains(&t) {
        return Err(invalid(format!("epoch {t} outside [0, {horizon}]")));
    }
    Ok(())
}

/// Evaluates basis `index` (zero-based) at epoch `t` of a `horizon`-epoch run.
pub fn eval_basis(
    index: usize,
    t: f64,
    horizon: usize,
    raw_shape: &[f64; SHAPE_DIM],
    map: &ShapeMap,
) -> Result<f64> {
    let basis = Basis::from_index(index)?;
    check_shape_row(raw_shape)?;
    check_epoch(t, horizon)?;
    Ok(basis.eval(t, horizon as f64, &map.apply(raw_shape)))
}

/// R(t) for a mixture, clamped to [0, 1]. R(0) is exactly 1.
pub fn eval_schedule(params: &ScheduleParams, t: f64, horizon: usize, map: &ShapeMap) -> Result<f64> {
    params.validate()?;
    check_epoch(t, horizon)?;
    Ok(mixture_value(params, t, horizon as f64, map))
}

fn mixture_value(params: &ScheduleParams, t: f64, horizon: f64, map: &ShapeMap) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let raw: f64 = Basis::ALL
        .iter()
        .zip(&params.alpha)
        .zip(&params.beta)
        .map(|((basis, &w), row)| w * basis.eval(t, horizon, &map.apply(row)))
        .sum();
    raw.clamp(0.0, 1.0)
}

/// Number of samples kept from a mini-batch of `batch_size` at keep rate `rate`.
pub fn keep_count(rate: f64, batch_size: usize) -> usize {
    let n = (rate.clamp(0.0, 1.0) * batch_size as f64).round() as usize;
    n.clamp(1, batch_size.max(1))
}

/// The hand-designed schedule `1 - tau * min((t / t_k)^c, 1)`.
pub fn coteaching_schedule(tau: f64, c: f64, t_k: f64, t: f64) -> f64 {
    1.0 - tau * (t / t_k).powf(c).min(1.0)
}

/// Something that yields a keep rate for every epoch of a run.
pub trait KeepRate: Sync {
    fn rate(&self, epoch: usize, horizon: usize) -> f64;
}

/// A search-space point together with the map that interprets it.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSchedule {
    pub params: ScheduleParams,
    pub map: ShapeMap,
}

impl MixtureSchedule {
    pub fn new(params: ScheduleParams, map: ShapeMap) -> Result<MixtureSchedule> {
        params.validate()?;
        Ok(MixtureSchedule { params, map })
    }
}

impl KeepRate for MixtureSchedule {
    fn rate(&self, epoch: usize, horizon: usize) -> f64 {
        mixture_value(&self.params, epoch as f64, horizon as f64, &self.map)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoTeachingSchedule {
    pub tau: f64,
    pub c: f64,
    pub t_k: f64,
}

impl CoTeachingSchedule {
    /// `tau` is usually set to the label-noise rate.
    pub fn new(tau: f64, c: f64, t_k: f64) -> Result<CoTeachingSchedule> {
        if !(0.0..1.0).contains(&tau) || c <= 0.0 || t_k <= 0.0 {
            return Err(invalid(format!("bad co-teaching schedule ({tau}, {c}, {t_k})")));
        }
        Ok(CoTeachingSchedule { tau, c, t_k })
    }

    pub fn at(&self, t: f64) -> f64 {
        coteaching_schedule(self.tau, self.c, self.t_k, t)
    }
}

impl KeepRate for CoTeachingSchedule {
    fn rate(&self, epoch: usize, _horizon: usize) -> f64 {
        self.at(epoch as f64)
    }
}

/// Keeps a fixed fraction of every batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantRate(pub f64);

impl KeepRate for ConstantRate {
    fn rate(&self, _epoch: usize, _horizon: usize) -> f64 {
        self.0.clamp(0.0, 1.0)
    }
}

/// Knobs for [`fit_to_reference_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub restarts: usize,
    /// How many of the best rough fits get polished against the max deviation.
    pub polished: usize,
    pub initial_step: f64,
    /// Step at which the mean-square stage stops.
    pub rough_min_step: f64,
    pub rough_max_sweeps: usize,
    pub min_step: f64,
    pub max_sweeps: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 50,
            polished: 5,
            initial_step: 0.25,
            rough_min_step: 1e-4,
            rough_max_sweeps: 100,
            min_step: 1e-8,
            max_sweeps: 300,
            seed: 0x05ee_df17,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ScheduleParams,
    /// Max absolute deviation from the reference over the epoch grid.
    pub residual: f64,
}

/// Fits a mixture to `reference` on the grid `0..=horizon`, minimizing the
/// max absolute deviation. Uses [`FitOptions::default`].
pub fn fit_to_reference(
    reference: impl Fn(f64) -> f64,
    horizon: usize,
    map: &ShapeMap,
) -> Result<FitResult> {
    fit_to_reference_with(reference, horizon, map, &FitOptions::default())
}

/// Multi-start coordinate descent over the unit cube of raw coordinates
/// (four unnormalized weights followed by the shape rows).
pub fn fit_to_reference_with(
    reference: impl Fn(f64) -> f64,
    horizon: usize,
    map: &ShapeMap,
    opts: &FitOptions,
) -> Result<FitResult> {
    if horizon == 0 {
        return Err(invalid("horizon must be at least one epoch"));
    }
    if opts.restarts == 0 || opts.polished == 0 || !(opts.initial_step > 0.0) {
        return Err(invalid("fit needs at least one restart and a positive step"));
    }
    let target: Vec<f64> = (0..=horizon).map(|t| reference(t as f64)).collect();
    let mut fitter = CurveFitter::new(target, horizon, *map);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut rough: Vec<(Vec<f64>, f64)> = (0..opts.restarts)
        .map(|restart| {
            let start: Vec<f64> = if restart == 0 {
                vec![0.5; CurveFitter::DIM]
            } else {
                (0..CurveFitter::DIM).map(|_| rng.random::<f64>()).collect()
            };
            fitter.rough_fit(start, opts)
        })
        .collect();
    rough.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut best: Option<(Vec<f64>, f64)> = None;
    for (z, _) in rough.into_iter().take(opts.polished) {
        let (z, err) = fitter.polish(z, opts);
        if best.as_ref().is_none_or(|(_, e)| err < *e) {
            best = Some((z, err));
        }
    }
    let (z, residual) = best.expect("at least one restart");
    Ok(FitResult {
        params: CurveFitter::decode(&z),
        residual,
    })
}

struct CurveFitter {
    target: Vec<f64>,
    horizon: usize,
    map: ShapeMap,
    // unweighted basis curves on the grid, one row per basis
    curves: Vec<Vec<f64>>,
}

impl CurveFitter {
    const DIM: usize = NUM_BASIS * (1 + SHAPE_DIM);

    fn new(target: Vec<f64>, horizon: usize, map: ShapeMap) -> Self {
        CurveFitter {
            target,
            horizon,
            map,
            curves: vec![vec![0.0; horizon + 1]; NUM_BASIS],
        }
    }

    fn decode(z: &[f64]) -> ScheduleParams {
        let weights = &z[..NUM_BASIS];
        let total: f64 = weights.iter().sum();
        let alpha = if total > 0.0 {
            weights.iter().map(|w| w / total).collect()
        } else {
            vec![1.0 / NUM_BASIS as f64; NUM_BASIS]
        };
        let beta = (0..NUM_BASIS)
            .map(|i| {
                let mut row = [0.0; SHAPE_DIM];
                row.copy_from_slice(&z[NUM_BASIS + i * SHAPE_DIM..NUM_BASIS + (i + 1) * SHAPE_DIM]);
                row
            })
            .collect();
        ScheduleParams { alpha, beta }
    }

    fn refresh_curve(&mut self, z: &[f64], basis: usize) {
        let mut raw = [0.0; SHAPE_DIM];
        raw.copy_from_slice(&z[NUM_BASIS + basis * SHAPE_DIM..NUM_BASIS + (basis + 1) * SHAPE_DIM]);
        let a = self.map.apply(&raw);
        let b = Basis::ALL[basis];
        let horizon = self.horizon as f64;
        for (t, v) in self.curves[basis].iter_mut().enumerate() {
            *v = b.eval(t as f64, horizon, &a);
        }
    }

    /// Sum of |deviation|^(2^squarings) over the grid; `None` is the max.
    fn deviation(&self, z: &[f64], power: Option<u32>) -> f64 {
        let weights = &z[..NUM_BASIS];
        let total: f64 = weights.iter().sum();
        let alpha: Vec<f64> = if total > 0.0 {
            weights.iter().map(|w| w / total).collect()
        } else {
            vec![1.0 / NUM_BASIS as f64; NUM_BASIS]
        };
        let errors = (0..=self.horizon).map(|t| {
            let r = if t == 0 {
                1.0
            } else {
                (0..NUM_BASIS).map(|i| alpha[i] * self.curves[i][t]).sum::<f64>().clamp(0.0, 1.0)
            };
            (r - self.target[t]).abs()
        });
        match power {
            None => errors.fold(0.0, f64::max),
            // monotone in the power mean, so the root is skipped
            Some(squarings) => errors
                .map(|e| {
                    let mut v = e;
                    for _ in 0..squarings {
                        v *= v;
                    }
                    v
                })
                .sum(),
        }
    }

    /// Coordinate descent on the mean-square deviation from `start`.
    fn rough_fit(&mut self, mut z: Vec<f64>, opts: &FitOptions) -> (Vec<f64>, f64) {
        for i in 0..NUM_BASIS {
            self.refresh_curve(&z, i);
        }
        let err = self.coordinate_descent(&mut z, Some(1), opts.initial_step, opts.rough_min_step, opts.rough_max_sweeps);
        (z, err)
    }

    /// Sharpens a rough fit through higher power means and finally the max
    /// deviation itself, whose kinks stall coordinate moves from far away.
    fn polish(&mut self, mut z: Vec<f64>, opts: &FitOptions) -> (Vec<f64>, f64) {
        for i in 0..NUM_BASIS {
            self.refresh_curve(&z, i);
        }
        for (stage, power) in [Some(3), Some(5), None].into_iter().enumerate() {
            let step = opts.initial_step * 0.25f64.powi(stage as i32 + 1);
            self.coordinate_descent(&mut z, power, step, opts.min_step, opts.max_sweeps);
        }
        let err = self.deviation(&z, None);
        (z, err)
    }

    /// Compass search with expanding moves; returns the final criterion value.
    fn coordinate_descent(
        &mut self,
        z: &mut [f64],
        power: Option<u32>,
        mut step: f64,
        min_step: f64,
        max_sweeps: usize,
    ) -> f64 {
        let mut err = self.deviation(z, power);
        for _ in 0..max_sweeps {
            let mut improved = false;
            for j in 0..Self::DIM {
                let basis = (j >= NUM_BASIS).then(|| (j - NUM_BASIS) / SHAPE_DIM);
                for dir in [1.0, -1.0] {
                    let mut stride = step;
                    let mut moved = false;
                    loop {
                        let old = z[j];
                        let trial = (old + dir * stride).clamp(0.0, 1.0);
                        if trial == old {
                            break;
                        }
                        z[j] = trial;
                        if let Some(b) = basis {
                            self.refresh_curve(z, b);
                        }
                        let e = self.deviation(z, power);
                        if e < err {
                            err = e;
                            moved = true;
                            stride *= 2.0;
                            continue;
                        }
                        z[j] = old;
                        if let Some(b) = basis {
                            self.refresh_curve(z, b);
                        }
                        break;
                    }
                    if moved {
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                step *= 0.5;
                if step < min_step {
                    break;
                }
            }
        }
        err
    }
}

/// CSV rows `t,R` for `t = 0..=horizon`, LF line endings.
pub fn schedule_csv(params: &ScheduleParams, horizon: usize, map: &ShapeMap) -> Result<String> {
    params.validate()?;
    if horizon == 0 {
        return Err(invalid("horizon must be at least one epoch"));
    }
    let mut out = String::from("t,R\n");
    for t in 0..=horizon {
        let r = mixture_value(params, t as f64, horizon as f64, map);
        out.push_str(&format!("{t},{r}\n"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(map: &ShapeMap, a: [f64; SHAPE_DIM]) -> [f64; SHAPE_DIM] {
        map.raw_for(&a).unwrap()
    }

    #[test]
    fn rational_power_closed_form() {
        let map = ShapeMap::default();
        let v = eval_basis(2, 1.0, 10, &raw(&map, [1.0, 1.0, 0.0, 1.0]), &map).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn every_basis_starts_at_one() {
        let map = ShapeMap::default();
        for i in 0..NUM_BASIS {
            for r in [[0.0; 4], [1.0; 4], [0.3, 0.7, 0.9, 0.1]] {
                assert_eq!(eval_basis(i, 0.0, 50, &r, &map).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn exp_power_at_horizon() {
        let map = ShapeMap::default();
        let v = eval_basis(0, 10.0, 10, &raw(&map, [1.0, 1.0, 1.0, 1.0]), &map).unwrap();
        let oracle = (-10.0f64).exp() + 1.0;
        assert!((v - oracle).abs() < 1e-12, "{v}");
    }

    #[test]
    fn uniform_mixture_at_horizon_is_clamped_mean() {
        let map = ShapeMap::default();
        let r = raw(&map, [1.0, 1.0, 1.0, 1.0]);
        let p = ScheduleParams::new(vec![0.25; 4], vec![r; 4]).unwrap();
        let t: f64 = 20.0;
        let e = (-t).exp();
        let q = 1.0 / (1.0 + t);
        // growth term is 1 at t = T for both the power and the log form
        let oracle = ((e + 1.0) + (e + 1.0) + (q + 1.0) + (q + 1.0)) / 4.0;
        let v = eval_schedule(&p, t, 20, &map).unwrap();
        assert_eq!(v, oracle.clamp(0.0, 1.0));
    }

    #[test]
    fn single_basis_mixture_reduces_to_basis() {
        let map = ShapeMap::default();
        let p = ScheduleParams::single(2, raw(&map, [1.0, 1.0, 0.0, 1.0])).unwrap();
        assert!((eval_schedule(&p, 1.0, 10, &map).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn keep_count_examples() {
        assert_eq!(keep_count(1.0, 128), 128);
        assert_eq!(keep_count(0.0, 128), 1);
        assert_eq!(keep_count(0.75, 128), 96);
    }

    #[test]
    fn coteaching_examples() {
        assert_eq!(coteaching_schedule(0.5, 1.0, 10.0, 0.0), 1.0);
        assert_eq!(coteaching_schedule(0.5, 1.0, 10.0, 5.0), 0.75);
        assert_eq!(coteaching_schedule(0.3, 2.0, 10.0, 10.0), 0.7);
        assert_eq!(coteaching_schedule(0.3, 2.0, 10.0, 40.0), 0.7);
        assert!(CoTeachingSchedule::new(1.0, 1.0, 10.0).is_err());
        assert!(CoTeachingSchedule::new(0.2, 0.0, 10.0).is_err());
    }

    #[test]
    fn invalid_arguments_are_rejected() {
        let map = ShapeMap::default();
        assert!(eval_basis(4, 1.0, 10, &[0.5; 4], &map).is_err());
        assert!(eval_basis(0, 1.0, 10, &[1.5, 0.5, 0.5, 0.5], &map).is_err());
        assert!(eval_basis(0, 11.0, 10, &[0.5; 4], &map).is_err());
        assert!(eval_basis(0, 0.0, 0, &[0.5; 4], &map).is_err());
        assert!(ScheduleParams::new(vec![0.5, 0.5, 0.1, 0.0], vec![[0.5; 4]; 4]).is_err());
        assert!(ScheduleParams::new(vec![1.0, 0.0, 0.0], vec![[0.5; 4]; 3]).is_err());
        assert!(ScheduleParams::new(vec![1.0, -0.0, 0.0, 0.0], vec![[0.5; 4]; 4]).is_ok());
        assert!(ShapeMap::new([(0.0, 2.0), (0.0, 1.0), (0.0, 1.0), (0.5, 2.0)]).is_err());
        assert!(ShapeMap::new([(0.5, 0.5), (0.0, 1.0), (0.0, 1.0), (0.5, 2.0)]).is_err());
        assert!(schedule_csv(&ScheduleParams::keep_all(), 0, &map).is_err());
    }

    #[test]
    fn keep_all_is_identically_one() {
        let map = ShapeMap::default();
        let p = ScheduleParams::keep_all();
        for t in 0..=100 {
            assert_eq!(eval_schedule(&p, t as f64, 100, &map).unwrap(), 1.0);
        }
    }

    #[test]
    fn shape_map_round_trip() {
        let map = ShapeMap::default();
        let r = [0.1, 0.2, 0.3, 0.4];
        let back = map.raw_for(&map.apply(&r)).unwrap();
        for (a, b) in r.iter().zip(&back) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn json_round_trip() {
        let p = ScheduleParams::new(vec![0.1, 0.2, 0.3, 0.4], vec![[0.1, 0.2, 0.3, 0.4]; 4]).unwrap();
        let text = p.to_json().unwrap();
        assert!(text.contains("\"alpha\"") && text.contains("\"beta\""));
        assert_eq!(ScheduleParams::from_json(&text).unwrap(), p);
        assert!(ScheduleParams::from_json("{\"alpha\":[1,0,0,0],\"beta\":[[2,0,0,0],[0,0,0,0],[0,0,0,0],[0,0,0,0]]}").is_err());
    }

    #[test]
    fn csv_has_one_row_per_epoch() {
        let map = ShapeMap::default();
        let p = ScheduleParams::single(0, [0.5; 4]).unwrap();
        let csv = schedule_csv(&p, 200, &map).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 202);
        assert_eq!(lines[0], "t,R");
        assert_eq!(lines[1], "0,1");
        for (t, line) in lines[1..].iter().enumerate() {
            let v: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
            assert_eq!(v, eval_schedule(&p, t as f64, 200, &map).unwrap());
        }
    }

    #[test]
    fn constant_reference_is_fitted_exactly() {
        let map = ShapeMap::default();
        let fit = fit_to_reference(|_| 1.0, 50, &map).unwrap();
        assert!(fit.residual <= 1e-6, "{}", fit.residual);
    }

    #[test]
    fn fit_recovers_curve_in_space_better_than_coteaching() {
        let map = ShapeMap::default();
        let x0 = ScheduleParams::new(
            vec![0.6, 0.0, 0.4, 0.0],
            vec![[0.4, 0.2, 0.3, 0.6], [0.5; 4], [0.7, 0.5, 0.1, 0.2], [0.5; 4]],
        )
        .unwrap();
        let own = fit_to_reference(|t| eval_schedule(&x0, t, 100, &map).unwrap(), 100, &map).unwrap();
        assert!(own.residual <= 1e-3, "{}", own.residual);
        let co = fit_to_reference(|t| coteaching_schedule(0.5, 1.0, 10.0, t), 100, &map).unwrap();
        assert!(own.residual * 10.0 <= co.residual, "{} vs {}", own.residual, co.residual);
    }

    fn params_strategy() -> impl Strategy<Value = ScheduleParams> {
        (
            proptest::collection::vec(0.0f64..1.0, NUM_BASIS),
            proptest::collection::vec(proptest::array::uniform4(0.0f64..=1.0), NUM_BASIS),
        )
            .prop_filter_map("positive weight", |(w, beta)| {
                let total: f64 = w.iter().sum();
                (total > 1e-6).then(|| ScheduleParams {
                    alpha: w.iter().map(|v| v / total).collect(),
                    beta,
                })
            })
    }

    proptest! {
        #[test]
        fn schedule_in_unit_interval(p in params_strategy(), horizon in 1usize..300) {
            let map = ShapeMap::default();
            prop_assert_eq!(eval_schedule(&p, 0.0, horizon, &map).unwrap(), 1.0);
            for t in 0..=horizon {
                let r = eval_schedule(&p, t as f64, horizon, &map).unwrap();
                prop_assert!((0.0..=1.0).contains(&r));
            }
        }

        #[test]
        fn keep_count_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, n in 1usize..512) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (kl, kh) = (keep_count(lo, n), keep_count(hi, n));
            prop_assert!(kl <= kh);
            prop_assert!((1..=n).contains(&kh));
        }

        #[test]
        fn decay_without_growth_is_non_increasing(i in 0usize..NUM_BASIS, r in proptest::array::uniform4(0.0f64..=1.0), horizon in 1usize..200) {
            let map = ShapeMap::default();
            let row = [r[0], r[1], 0.0, r[3]];
            let mut prev = f64::INFINITY;
            for t in 0..=horizon {
                let v = eval_basis(i, t as f64, horizon, &row, &map).unwrap();
                prop_assert!(v <= prev);
                prev = v;
            }
        }
    }
}
