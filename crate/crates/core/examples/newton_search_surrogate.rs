//! Newton search on a closed-form surrogate, printing the trace and the
//! exact relaxed objective J(θ) at every iteration.

use memosched::schedule::ScheduleParams;
use memosched::search::{run_search, SearchConfig};
use memosched::surrogate::QuadraticSurrogate;

fn main() -> memosched::Result<()> {
    let s = QuadraticSurrogate::default();
    let config = SearchConfig {
        iterations: 30,
        samples: 16,
        ..SearchConfig::default()
    };
    let out = run_search(&config, &|x: &ScheduleParams| s.value(x))?;
    println!("{:>4} {:>6} {:>10} {:>10} {:>10}", "iter", "calls", "best_f", "J(theta)", "|g|");
    for r in &out.trace.iterations {
        println!(
            "{:>4} {:>6} {:>10.4} {:>10.4} {:>10.4}",
            r.iteration,
            r.calls,
            r.best_f,
            s.expected(&r.theta),
            r.grad_norm
        );
    }
    println!("final J {:.4}", s.expected(&out.final_theta));
    println!("best alpha {:.3?}", out.best.alpha);
    Ok(())
}
