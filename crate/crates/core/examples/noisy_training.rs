//! Trains on 40% symmetric label noise with and without co-teaching
//! selection and prints the accuracy curves.
//!
//! `cargo run --release --example noisy_training`

use memosched::data::{inject_symmetric_noise, make_gaussian_mixture};
use memosched::harness::desk_train_config;
use memosched::schedule::{CoTeachingSchedule, ConstantRate};
use memosched::trainer::{train_with, SelectionMode, TrainConfig};

fn main() -> memosched::Result<()> {
    let clean = make_gaussian_mixture(3, 20, 500, 0.8, 0)?;
    let noisy = inject_symmetric_noise(&clean, 0.4, 1)?;
    println!("train flip fraction {:.3}", noisy.flip_fraction(memosched::data::Split::Train));

    let plain = TrainConfig {
        selection: SelectionMode::None,
        ..desk_train_config()
    };
    let baseline = train_with(&noisy, &ConstantRate(1.0), &plain)?;
    let coteach = train_with(&noisy, &CoTeachingSchedule::new(0.4, 1.0, 10.0)?, &desk_train_config())?;

    println!("{:>5} {:>10} {:>10} {:>10} {:>10}", "epoch", "plain", "coteach", "train", "precision");
    for e in (0..plain.epochs).step_by(25).chain([plain.epochs - 1]) {
        println!(
            "{e:>5} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
            baseline.test_acc[e], coteach.test_acc[e], baseline.train_acc[e], coteach.label_precision[e]
        );
    }
    println!(
        "final test accuracy: plain {:.3}, co-teaching {:.3}",
        baseline.final_test_acc(),
        coteach.final_test_acc()
    );
    Ok(())
}
