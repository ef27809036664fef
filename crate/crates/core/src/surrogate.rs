//! Closed-form objectives over schedule parameters.
//!
//! Both surrogates are polynomials in the sampled coordinates, so their
//! expectation under p_θ follows from Dirichlet and Beta moments. That makes
//! J(θ) and its finite-difference derivatives available exactly, which the
//! search tests lean on.

use crate::distributions::ThetaParams;
use crate::error::{invalid, Result};
use crate::schedule::{ScheduleParams, SHAPE_DIM};

/// `f(x) = Σ_i (α_i - α*_i)² + Σ_ij (β_ij - β*_ij)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSurrogate {
    pub alpha_target: Vec<f64>,
    pub beta_target: Vec<[f64; SHAPE_DIM]>,
}

impl Default for QuadraticSurrogate {
    fn default() -> Self {
        QuadraticSurrogate {
            alpha_target: vec![0.7, 0.1, 0.1, 0.1],
            beta_target: vec![
                [0.8, 0.2, 0.6, 0.3],
                [0.3, 0.7, 0.2, 0.9],
                [0.5, 0.1, 0.9, 0.4],
                [0.2, 0.6, 0.4, 0.7],
            ],
        }
    }
}

impl QuadraticSurrogate {
    pub fn new(alpha_target: Vec<f64>, beta_target: Vec<[f64; SHAPE_DIM]>) -> Result<QuadraticSurrogate> {
        ScheduleParams::new(alpha_target.clone(), beta_target.clone())?;
        Ok(QuadraticSurrogate {
            alpha_target,
            beta_target,
        })
    }

    pub fn value(&self, x: &ScheduleParams) -> f64 {
        let a: f64 = x.alpha.iter().zip(&self.alpha_target).map(|(v, t)| (v - t).powi(2)).sum();
        let b: f64 = x
            .beta
            .iter()
            .zip(&self.beta_target)
            .flat_map(|(row, trow)| row.iter().zip(trow).map(|(v, t)| (v - t).powi(2)))
            .sum();
        a + b
    }

    /// `J(θ) = E_θ f`.
    pub fn expected(&self, theta: &ThetaParams) -> f64 {
        let c0: f64 = theta.dirichlet.iter().sum();
        let a: f64 = theta
            .dirichlet
            .iter()
            .zip(&self.alpha_target)
            .map(|(&c, t)| {
                let mean = c / c0;
                let var = c * (c0 - c) / (c0 * c0 * (c0 + 1.0));
                var + (mean - t).powi(2)
            })
            .sum();
        let b: f64 = theta
            .beta
            .iter()
            .zip(self.beta_target.iter().flatten())
            .map(|(&[p, q], t)| {
                let s = p + q;
                let mean = p / s;
                let var = p * q / (s * s * (s + 1.0));
                var + (mean - t).powi(2)
            })
            .sum();
        a + b
    }
}

/// `f(x) = scale · Σ_ij [(β_ij - m)⁴ - w (β_ij - m)²]`.
///
/// The quartic rewards spread around `m` up to a width set by `w`, so J has
/// an interior minimizer in the Beta concentrations. The weights α do not
/// enter f.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuarticSurrogate {
    pub center: f64,
    pub width: f64,
    pub scale: f64,
}

impl Default for QuarticSurrogate {
    fn default() -> Self {
        QuarticSurrogate {
            center: 0.5,
            width: 0.1,
            scale: 100.0,
        }
    }
}

impl QuarticSurrogate {
    pub fn new(center: f64, width: f64, scale: f64) -> Result<QuarticSurrogate> {
        if !(0.0..=1.0).contains(&center) || !(width >= 0.0) || !(scale > 0.0) {
            return Err(invalid("quartic surrogate needs center in [0,1], width >= 0, scale > 0"));
        }
        Ok(QuarticSurrogate { center, width, scale })
    }

    fn term(&self, v: f64) -> f64 {
        let d = v - self.center;
        let d2 = d * d;
        d2 * d2 - self.width * d2
    }

    pub fn value(&self, x: &ScheduleParams) -> f64 {
        self.scale * x.beta.iter().flatten().map(|&v| self.term(v)).sum::<f64>()
    }

    /// `J(θ) = E_θ f` from Beta raw moments.
    pub fn expected(&self, theta: &ThetaParams) -> f64 {
        let m = self.center;
        let total: f64 = theta
            .beta
            .iter()
            .map(|&[a, b]| {
                let mut raw = [1.0; 5];
                for k in 1..5 {
                    let r = (k - 1) as f64;
                    raw[k] = raw[k - 1] * (a + r) / (a + b + r);
                }
                let c4 = raw[4] - 4.0 * m * raw[3] + 6.0 * m * m * raw[2] - 4.0 * m.powi(3) * raw[1] + m.powi(4);
                let c2 = raw[2] - 2.0 * m * raw[1] + m * m;
                c4 - self.width * c2
            })
            .sum();
        self.scale * total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::sample;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn theta_example() -> ThetaParams {
        let mut t = ThetaParams::uniform();
        t.dirichlet = vec![2.0, 0.5, 1.5, 3.0];
        for (i, p) in t.beta.iter_mut().enumerate() {
            *p = [0.5 + i as f64 * 0.3, 2.0 + (i % 3) as f64];
        }
        t
    }

    fn monte_carlo<F: Fn(&ScheduleParams) -> f64>(theta: &ThetaParams, f: F, n: usize) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vals: Vec<f64> = (0..n).map(|_| f(&sample(theta, &mut rng))).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (mean, (var / n as f64).sqrt())
    }

    #[test]
    fn quadratic_expectation_matches_sampling() {
        let s = QuadraticSurrogate::default();
        let theta = theta_example();
        let (mean, se) = monte_carlo(&theta, |x| s.value(x), 200_000);
        assert!((mean - s.expected(&theta)).abs() < 4.0 * se, "{mean} vs {}", s.expected(&theta));
    }

    #[test]
    fn quartic_expectation_matches_sampling() {
        let s = QuarticSurrogate::default();
        let theta = theta_example();
        let (mean, se) = monte_carlo(&theta, |x| s.value(x), 200_000);
        assert!((mean - s.expected(&theta)).abs() < 4.0 * se, "{mean} vs {}", s.expected(&theta));
    }

    #[test]
    fn quadratic_is_zero_at_target() {
        let s = QuadraticSurrogate::default();
        let x = ScheduleParams::new(s.alpha_target.clone(), s.beta_target.clone()).unwrap();
        assert_eq!(s.value(&x), 0.0);
    }

    #[test]
    fn quartic_has_interior_minimum_in_concentration() {
        let s = QuarticSurrogate::default();
        let at = |conc: f64| {
            let mut t = ThetaParams::uniform();
            for p in &mut t.beta {
                *p = [conc / 2.0, conc / 2.0];
            }
            s.expected(&t)
        };
        let grid: Vec<f64> = (0..200).map(|i| 0.1 * 1.05f64.powi(i)).collect();
        let (best, _) = grid
            .iter()
            .map(|&c| (c, at(c)))
            .fold((0.0, f64::INFINITY), |acc, (c, v)| if v < acc.1 { (c, v) } else { acc });
        assert!(best > 1.0 && best < 100.0, "minimizer at {best}");
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(QuarticSurrogate::new(1.5, 0.1, 1.0).is_err());
        assert!(QuarticSurrogate::new(0.5, 0.1, 0.0).is_err());
        assert!(QuadraticSurrogate::new(vec![0.5, 0.5], vec![[0.5; 4]; 4]).is_err());
    }
}
