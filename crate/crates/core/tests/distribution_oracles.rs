use memosched::distributions::{self, ThetaParams};
use memosched::schedule::ScheduleParams;
use memosched::Error;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_theta(rng: &mut ChaCha8Rng) -> ThetaParams {
    let mut t = ThetaParams::uniform();
    let v = t.to_vector().map(|_| (rng.random_range(-1.5f64..3.0)).exp());
    t = t.with_vector(&v).unwrap();
    t
}

fn mean_and_se(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m).powi(2) / (n - 1.0);
        }
    }
    (mean, var.iter().map(|v| (v / n).sqrt()).collect())
}

#[test]
fn uniform_dirichlet_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let theta = ThetaParams::uniform();
    let draws: Vec<Vec<f64>> = (0..100_000)
        .map(|_| {
            let x = distributions::sample(&theta, &mut rng);
            vec![x.alpha[0], x.alpha[1], x.alpha[2], x.alpha[3], x.beta[0][0]]
        })
        .collect();
    let (mean, se) = mean_and_se(&draws);
    for i in 0..4 {
        assert!((mean[i] - 0.25).abs() < 3.0 * se[i], "alpha {i}: {} ± {}", mean[i], se[i]);
    }
    assert!((mean[4] - 0.5).abs() < 3.0 * se[4]);
}

#[test]
fn same_seed_same_samples() {
    let theta = ThetaParams::uniform();
    let a = distributions::sample(&theta, &mut ChaCha8Rng::seed_from_u64(9));
    let b = distributions::sample(&theta, &mut ChaCha8Rng::seed_from_u64(9));
    assert_eq!(a, b);
}

#[test]
fn tiny_shapes_still_sample_interior_points() {
    let mut theta = ThetaParams::uniform();
    theta = theta.with_vector(&theta.to_vector().map(|_| 1e-3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let x = distributions::sample(&theta, &mut rng);
        x.validate().unwrap();
        assert!(distributions::log_density(&theta, &x).unwrap().is_finite());
    }
}

#[test]
fn sample_fisher_is_positive_semidefinite() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let theta = random_theta(&mut rng);
        let d = theta.dim();
        let mut f = DMatrix::zeros(d, d);
        for _ in 0..200 {
            let s = distributions::score(&theta, &distributions::sample(&theta, &mut rng)).unwrap();
            f += &s * s.transpose() / 200.0;
        }
        let eig = SymmetricEigen::new(f);
        assert!(eig.eigenvalues.min() >= -1e-8, "{}", eig.eigenvalues.min());
    }
}

#[test]
fn information_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let theta = random_theta(&mut rng);
    let d = theta.dim();
    let n = 50_000;
    let neg_h = -distributions::parameter_hessian(&theta).unwrap();
    let mut sum = DMatrix::zeros(d, d);
    let mut sum_sq = DMatrix::zeros(d, d);
    for _ in 0..n {
        let s = distributions::score(&theta, &distributions::sample(&theta, &mut rng)).unwrap();
        let o = &s * s.transpose();
        sum_sq += o.component_mul(&o);
        sum += o;
    }
    let mean = &sum / n as f64;
    let mut misses = 0;
    for i in 0..d {
        for j in 0..d {
            let var = sum_sq[(i, j)] / n as f64 - mean[(i, j)].powi(2);
            let se = (var / n as f64).sqrt();
            if (mean[(i, j)] - neg_h[(i, j)]).abs() > 3.0 * se + 1e-12 {
                misses += 1;
            }
        }
    }
    // about 0.3% of entries are expected outside 3 SE
    assert!(misses <= (d * d) / 100, "{misses} of {} entries outside 3 SE", d * d);
}

#[test]
fn log_density_hessian_is_symmetric_and_x_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let theta = random_theta(&mut rng);
    let x1 = distributions::sample(&theta, &mut rng);
    let x2 = distributions::sample(&theta, &mut rng);
    let h1 = distributions::log_density_hessian(&theta, &x1).unwrap();
    let h2 = distributions::log_density_hessian(&theta, &x2).unwrap();
    assert_eq!(h1, h1.transpose());
    assert_eq!(h1, h2);
}

#[test]
fn boundary_points_error() {
    let theta = ThetaParams::uniform();
    let x = ScheduleParams::new(vec![1.0, 0.0, 0.0, 0.0], vec![[0.5; 4]; 4]).unwrap();
    assert!(matches!(distributions::score(&theta, &x), Err(Error::BoundaryPoint(_))));
    let y = ScheduleParams::new(vec![0.25; 4], vec![[1.0, 0.5, 0.5, 0.5]; 4]).unwrap();
    assert!(matches!(distributions::log_density(&theta, &y), Err(Error::BoundaryPoint(_))));
}
