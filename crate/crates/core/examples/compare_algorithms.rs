//! Newton, gradient descent, natural gradient and random search under one
//! evaluator budget on the quartic surrogate.

use memosched::harness::{compare_search_algorithms, comparison_rows, ExperimentConfig, ObjectiveMode};

fn main() -> memosched::Result<()> {
    let mut wins = [0usize; 4];
    for seed in 0..5 {
        let config = ExperimentConfig {
            seed,
            objective: ObjectiveMode::Quartic,
            out_dir: std::env::temp_dir().join("memosched-compare"),
            ..ExperimentConfig::default()
        };
        let traces = compare_search_algorithms(&config)?;
        let finals: Vec<f64> = traces.iter().map(|(_, t)| t.iterations.last().map_or(f64::INFINITY, |r| r.best_f)).collect();
        let winner = finals.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
        wins[winner] += 1;
        let line: Vec<String> = traces.iter().zip(&finals).map(|((rule, _), f)| format!("{rule} {f:.4}")).collect();
        println!("seed {seed}: {}", line.join(", "));
        if seed == 0 {
            for row in comparison_rows(&traces).iter().filter(|r| r.calls % 40 == 0) {
                println!("    {:<7} calls {:>3} best {:.4}", row.rule.to_string(), row.calls, row.best_f);
            }
        }
    }
    let rules = ExperimentConfig::default().rules;
    for (rule, w) in rules.iter().zip(wins) {
        println!("{rule}: best on {w} of 5 seeds");
    }
    Ok(())
}
