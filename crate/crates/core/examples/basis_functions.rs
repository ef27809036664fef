//! Prints the four basis curves and a mixture of them over a 200-epoch run.
//!
//! `cargo run --example basis_functions`

use memosched::schedule::{eval_basis, eval_schedule, ScheduleParams, ShapeMap};

fn main() -> memosched::Result<()> {
    let map = ShapeMap::default();
    let horizon = 200;
    let raw = [0.3, 0.4, 0.2, 0.5];
    let mixture = ScheduleParams::new(vec![0.4, 0.3, 0.2, 0.1], vec![raw; 4])?;

    println!("{:>5} {:>8} {:>8} {:>8} {:>8} {:>8}", "t", "f1", "f2", "f3", "f4", "R");
    for t in (0..=horizon).step_by(20) {
        let t = t as f64;
        let mut row = format!("{t:>5}");
        for index in 0..4 {
            row.push_str(&format!(" {:>8.4}", eval_basis(index, t, horizon, &raw, &map)?));
        }
        row.push_str(&format!(" {:>8.4}", eval_schedule(&mixture, t, horizon, &map)?));
        println!("{row}");
    }
    Ok(())
}
