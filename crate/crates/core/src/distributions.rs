//! The relaxation distribution p_θ(x): a Dirichlet over the mixture weights
//! and an independent Beta over every raw shape component.
//!
//! Parameters are flattened as
//! `[c_1, ..., c_k, a_11, b_11, a_12, b_12, ..., a_kp, b_kp]`
//! and every vector or matrix in this module follows that order.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::schedule::{ScheduleParams, NUM_BASIS, SHAPE_DIM};
use crate::special::{digamma, ln_gamma, trigamma};

/// Floor applied to sampled coordinates so every draw stays strictly inside
/// the support. Upper Beta draws stop at the largest double below 1.
pub const INTERIOR_EPS: f64 = 1e-300;

/// Box every distribution parameter is projected into.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for ThetaBounds {
    fn default() -> Self {
        ThetaBounds { min: 1e-3, max: 1e3 }
    }
}

impl ThetaBounds {
    pub fn validate(&self) -> Result<()> {
        if self.min > 0.0 && self.min < self.max && self.max.is_finite() {
            Ok(())
        } else {
            Err(invalid(format!("bad parameter box [{}, {}]", self.min, self.max)))
        }
    }

    pub fn clip(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }
}

/// Distribution parameters θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaParams {
    /// Dirichlet concentrations, one per basis function.
    pub dirichlet: Vec<f64>,
    /// `(a, b)` per shape component, basis-major.
    pub beta: Vec<[f64; 2]>,
}

impl ThetaParams {
    /// θ = 1 everywhere: uniform over the simplex and over every shape component.
    pub fn uniform() -> ThetaParams {
        ThetaParams {
            dirichlet: vec![1.0; NUM_BASIS],
            beta: vec![[1.0, 1.0]; NUM_BASIS * SHAPE_DIM],
        }
    }

    /// Total parameter count D = k + 2kp.
    pub fn dim(&self) -> usize {
        self.dirichlet.len() + 2 * self.beta.len()
    }

    pub fn validate(&self, bounds: &ThetaBounds) -> Result<()> {
        if self.dirichlet.len() != NUM_BASIS || self.beta.len() != NUM_BASIS * SHAPE_DIM {
            return Err(invalid(format!(
                "expected {NUM_BASIS} concentrations and {} beta pairs",
                NUM_BASIS * SHAPE_DIM
            )));
        }
        let ok = self
            .to_vector()
            .iter()
            .all(|&v| v.is_finite() && v >= bounds.min && v <= bounds.max);
        if ok {
            Ok(())
        } else {
            Err(invalid(format!(
                "distribution parameters must lie in [{}, {}]",
                bounds.min, bounds.max
            )))
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.dirichlet);
        for [a, b] in &self.beta {
            v.push(*a);
            v.push(*b);
        }
        DVector::from_vec(v)
    }

    /// Rebuilds parameters with the same layout as `self` from a flat vector.
    pub fn with_vector(&self, v: &DVector<f64>) -> Result<ThetaParams> {
        if v.len() != self.dim() {
            return Err(invalid(format!("expected {} parameters, got {}", self.dim(), v.len())));
        }
        let k = self.dirichlet.len();
        let dirichlet = v.as_slice()[..k].to_vec();
        let beta = v.as_slice()[k..].chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        Ok(ThetaParams { dirichlet, beta })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<ThetaParams> {
        Ok(serde_json::from_str(text)?)
    }
}

/// log of a Gamma(shape, 1) variate, Marsaglia-Tsang with the shape < 1 boost.
///
/// Working in log space keeps tiny shapes from underflowing to zero.
pub fn sample_ln_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        let u: f64 = 1.0 - rng.random::<f64>();
        return sample_ln_gamma(shape + 1.0, rng) + u.ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = 1.0 - rng.random::<f64>();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return (d * v).ln();
        }
    }
}

/// A Beta(a, b) variate, nudged into the open unit interval.
pub fn sample_beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let lx = sample_ln_gamma(a, rng);
    let ly = sample_ln_gamma(b, rng);
    let x = 1.0 / (1.0 + (ly - lx).exp());
    x.clamp(INTERIOR_EPS, 1.0 - f64::EPSILON / 2.0)
}

/// A Dirichlet variate with strictly positive components.
pub fn sample_dirichlet<R: Rng + ?Sized>(conc: &[f64], rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = conc.iter().map(|&c| sample_ln_gamma(c, rng)).collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logs.iter().map(|l| (l - top).exp().max(INTERIOR_EPS)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Draws x ~ p_θ.
pub fn sample<R: Rng + ?Sized>(theta: &ThetaParams, rng: &mut R) -> ScheduleParams {
    let alpha = sample_dirichlet(&theta.dirichlet, rng);
    let beta = theta
        .beta
        .chunks_exact(SHAPE_DIM)
        .map(|pairs| {
            let mut row = [0.0; SHAPE_DIM];
            for (r, [a, b]) in row.iter_mut().zip(pairs) {
                *r = sample_beta(*a, *b, rng);
            }
            row
        })
        .collect();
    ScheduleParams { alpha, beta }
}

/// Log-density of Dirichlet(`conc`) at `w`.
pub fn dirichlet_log_density(conc: &[f64], w: &[f64]) -> Result<f64> {
    let total: f64 = conc.iter().sum();
    let mut lp = ln_gamma(total)?;
    for (&c, &x) in conc.iter().zip(w) {
        lp += (c - 1.0) * x.ln() - ln_gamma(c)?;
    }
    Ok(lp)
}

/// Log-density of Beta(a, b) at `x`.
pub fn beta_log_density(a: f64, b: f64, x: f64) -> Result<f64> {
    Ok(ln_gamma(a + b)? - ln_gamma(a)? - ln_gamma(b)? + (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p())
}

/// Gradient of the Beta log-density with respect to `(a, b)`.
pub fn beta_score(a: f64, b: f64, x: f64) -> Result<[f64; 2]> {
    let common = digamma(a + b)?;
    Ok([common - digamma(a)? + x.ln(), common - digamma(b)? + (-x).ln_1p()])
}

/// Hessian of the Beta log-density with respect to `(a, b)`; independent of x.
pub fn beta_hessian(a: f64, b: f64) -> Result<[[f64; 2]; 2]> {
    let common = trigamma(a + b)?;
    Ok([
        [common - trigamma(a)?, common],
        [common, common - trigamma(b)?],
    ])
}

fn check_pair(theta: &ThetaParams, x: &ScheduleParams) -> Result<()> {
    x.validate()?;
    if theta.dirichlet.len() != x.alpha.len() || theta.beta.len() != x.beta.len() * SHAPE_DIM {
        return Err(invalid("distribution parameters and point have different layouts"));
    }
    if theta.to_vector().iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(invalid("distribution parameters must be finite and positive"));
    }
    if x.alpha.iter().any(|&a| a <= 0.0) {
        return Err(Error::BoundaryPoint("a mixture weight is zero".into()));
    }
    if x.beta.iter().flatten().any(|&b| b <= 0.0 || b >= 1.0) {
        return Err(Error::BoundaryPoint("a shape component is 0 or 1".into()));
    }
    Ok(())
}

/// log p_θ(x).
pub fn log_density(theta: &ThetaParams, x: &ScheduleParams) -> Result<f64> {
    check_pair(theta, x)?;
    let mut lp = dirichlet_log_density(&theta.dirichlet, &x.alpha)?;
    for ([a, b], &v) in theta.beta.iter().zip(x.beta.iter().flatten()) {
        lp += beta_log_density(*a, *b, v)?;
    }
    Ok(lp)
}

/// ∇_θ log p_θ(x).
pub fn score(theta: &ThetaParams, x: &ScheduleParams) -> Result<DVector<f64>> {
    check_pair(theta, x)?;
    let k = theta.dirichlet.len();
    let mut g = DVector::zeros(theta.dim());
    let common = digamma(theta.dirichlet.iter().sum())?;
    for i in 0..k {
        g[i] = common - digamma(theta.dirichlet[i])? + x.alpha[i].ln();
    }
    for (j, ([a, b], &v)) in theta.beta.iter().zip(x.beta.iter().flatten()).enumerate() {
        let [ga, gb] = beta_score(*a, *b, v)?;
        g[k + 2 * j] = ga;
        g[k + 2 * j + 1] = gb;
    }
    Ok(g)
}

/// ∇²_θ log p_θ(x). Block diagonal and independent of x; `x` is only checked.
pub fn log_density_hessian(theta: &ThetaParams, x: &ScheduleParams) -> Result<DMatrix<f64>> {
    check_pair(theta, x)?;
    parameter_hessian(theta)
}

/// The x-independent log-density Hessian.
pub fn parameter_hessian(theta: &ThetaParams) -> Result<DMatrix<f64>> {
    let k = theta.dirichlet.len();
    let d = theta.dim();
    let mut h = DMatrix::zeros(d, d);
    let common = trigamma(theta.dirichlet.iter().sum())?;
    for i in 0..k {
        for j in 0..k {
            h[(i, j)] = common;
        }
        h[(i, i)] -= trigamma(theta.dirichlet[i])?;
    }
    for (j, [a, b]) in theta.beta.iter().enumerate() {
        let block = beta_hessian(*a, *b)?;
        let o = k + 2 * j;
        for r in 0..2 {
            for c in 0..2 {
                h[(o + r, o + c)] = block[r][c];
            }
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn interior_point() -> ScheduleParams {
        ScheduleParams::new(
            vec![0.1, 0.2, 0.3, 0.4],
            vec![[0.2, 0.4, 0.6, 0.8], [0.5; 4], [0.3, 0.7, 0.1, 0.9], [0.05, 0.5, 0.95, 0.25]],
        )
        .unwrap()
    }

    #[test]
    fn uniform_density_is_log_gamma_k() {
        let lp = log_density(&ThetaParams::uniform(), &interior_point()).unwrap();
        assert!((lp - 6f64.ln()).abs() < 1e-12);
        assert!((lp - 1.791_759_5).abs() < 1e-7);
    }

    #[test]
    fn two_dim_uniform_dirichlet_has_zero_log_density() {
        let lp = dirichlet_log_density(&[1.0, 1.0], &[0.37, 0.63]).unwrap();
        assert!(lp.abs() < 1e-14);
    }

    #[test]
    fn beta_density_integrates_to_one() {
        // midpoint rule on a coarse 200-cell grid
        let n = 200;
        let sum: f64 = (0..n)
            .map(|i| {
                let x = (i as f64 + 0.5) / n as f64;
                beta_log_density(2.0, 3.0, x).unwrap().exp() / n as f64
            })
            .sum();
        assert!((sum - 1.0).abs() < 0.01, "{sum}");
    }

    #[test]
    fn uniform_beta_score_at_half() {
        let [ga, gb] = beta_score(1.0, 1.0, 0.5).unwrap();
        let expected = 1.0 - 2f64.ln();
        assert!((ga - expected).abs() < 1e-12);
        assert!((gb - expected).abs() < 1e-12);
        assert!((expected - 0.306_852_8).abs() < 1e-7);
    }

    #[test]
    fn dirichlet_block_of_uniform_hessian() {
        let h = parameter_hessian(&ThetaParams::uniform()).unwrap();
        let t4 = trigamma(4.0).unwrap();
        let t1 = trigamma(1.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { t4 - t1 } else { t4 };
                assert_eq!(h[(i, j)], want);
            }
        }
        assert_eq!(h, h.transpose());
    }

    #[test]
    fn boundary_points_are_rejected() {
        let mut x = interior_point();
        x.beta[1][2] = 0.0;
        assert!(matches!(
            log_density(&ThetaParams::uniform(), &x),
            Err(Error::BoundaryPoint(_))
        ));
        let x = ScheduleParams::single(0, [0.5; 4]).unwrap();
        assert!(matches!(score(&ThetaParams::uniform(), &x), Err(Error::BoundaryPoint(_))));
    }

    #[test]
    fn samples_are_interior_and_deterministic() {
        let theta = ThetaParams {
            dirichlet: vec![1e-3, 1e3, 0.5, 2.0],
            beta: vec![[1e-3, 1e-3]; 16],
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let x = sample(&theta, &mut r1);
            assert_eq!(x, sample(&theta, &mut r2));
            x.validate().unwrap();
            assert!(log_density(&theta, &x).unwrap().is_finite());
            assert!(score(&theta, &x).unwrap().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn flat_vector_round_trip() {
        let mut theta = ThetaParams::uniform();
        theta.beta[3] = [2.0, 5.0];
        theta.dirichlet[1] = 7.0;
        let v = theta.to_vector();
        assert_eq!(v.len(), 36);
        assert_eq!(v[1], 7.0);
        assert_eq!(v[4 + 6], 2.0);
        assert_eq!(v[4 + 7], 5.0);
        assert_eq!(theta.with_vector(&v).unwrap(), theta);
        let json = theta.to_json().unwrap();
        assert!(json.starts_with("{\"dirichlet\":["));
        assert_eq!(ThetaParams::from_json(&json).unwrap(), theta);
    }
}
