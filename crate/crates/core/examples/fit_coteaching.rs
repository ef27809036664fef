//! Fits the four-basis mixture to the co-teaching keep-rate curve.
//!
//! `cargo run --release --example fit_coteaching -- [tau] [c] [t_k]`

use memosched::schedule::{eval_schedule, fit_to_reference, CoTeachingSchedule, ShapeMap};

fn main() -> memosched::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let tau = args.first().copied().unwrap_or(0.5);
    let c = args.get(1).copied().unwrap_or(1.0);
    let t_k = args.get(2).copied().unwrap_or(10.0);
    let horizon = 200;
    let map = ShapeMap::default();

    let reference = CoTeachingSchedule::new(tau, c, t_k)?;
    let fit = fit_to_reference(|t| reference.at(t), horizon, &map)?;
    println!("max deviation {:.4}", fit.residual);
    println!("weights {:?}", fit.params.alpha);
    for t in [0, 2, 5, 10, 20, 50, 100, 200] {
        let t = t as f64;
        println!("t={t:>3}  reference {:.4}  fitted {:.4}", reference.at(t), eval_schedule(&fit.params, t, horizon, &map)?);
    }
    Ok(())
}
