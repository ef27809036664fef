//! Searches a keep-rate schedule by training a network per candidate, then
//! retrains the best one. Writes the run artifacts to `out/search_schedule`.
//!
//! `cargo run --release --example search_schedule -- [budget]`

use memosched::harness::{run_experiment, ExperimentConfig};

fn main() -> memosched::Result<()> {
    let budget = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(40);
    let mut config = ExperimentConfig {
        out_dir: "out/search_schedule".into(),
        ..ExperimentConfig::default()
    };
    config.search.budget = Some(budget);

    let result = run_experiment(&config)?;
    for r in &result.outcome.trace.iterations {
        println!("iteration {:>2}: calls {:>3}, best val loss {:.4}", r.iteration, r.calls, r.best_f);
    }
    let report = result.report.expect("trainer objective retrains the best schedule");
    println!("best schedule weights {:.3?}", result.outcome.best.alpha);
    println!(
        "retrained: test accuracy {:.3}, label precision {:.3}",
        report.final_test_acc(),
        report.mean_label_precision()
    );
    println!("artifacts in {}", config.out_dir.display());
    Ok(())
}
