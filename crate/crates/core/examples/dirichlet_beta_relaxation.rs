//! Samples schedules from the Dirichlet x Beta relaxation and checks the
//! score identities by Monte Carlo.

use memosched::distributions::{self, ThetaParams};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> memosched::Result<()> {
    let mut theta = ThetaParams::uniform();
    theta.dirichlet = vec![4.0, 1.0, 1.0, 2.0];
    theta.beta[0] = [8.0, 2.0];
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let x = distributions::sample(&theta, &mut rng);
    println!("one draw: alpha {:.3?}", x.alpha);
    println!("          beta row 0 {:.3?}", x.beta[0]);
    println!("log density {:.3}", distributions::log_density(&theta, &x)?);

    let n = 20_000;
    let d = theta.dim();
    let mut mean = DVector::zeros(d);
    let mut fisher = DMatrix::zeros(d, d);
    for _ in 0..n {
        let s = distributions::score(&theta, &distributions::sample(&theta, &mut rng))?;
        fisher += &s * s.transpose() / n as f64;
        mean += s / n as f64;
    }
    let neg_h = -distributions::parameter_hessian(&theta)?;
    println!("|E[score]|             {:.4}", mean.norm());
    println!("|E[s s'] + Hessian|/|H| {:.4}", (fisher - &neg_h).norm() / neg_h.norm());
    Ok(())
}
