//! Symmetric and pair label flipping, with the resulting flip tables.

use memosched::data::{inject_pair_noise, inject_symmetric_noise, make_gaussian_mixture, Split};

fn main() -> memosched::Result<()> {
    let clean = make_gaussian_mixture(4, 4, 2_000, 0.5, 0)?;
    for (name, noisy) in [
        ("symmetric 0.4", inject_symmetric_noise(&clean, 0.4, 1)?),
        ("pair 0.3", inject_pair_noise(&clean, 0.3, 1)?),
    ] {
        println!("{name}: flipped {:.3} of train rows", noisy.flip_fraction(Split::Train));
        println!("  clean -> noisy counts");
        for (c, row) in noisy.flip_table(Split::Train).iter().enumerate() {
            println!("  {c}: {row:?}");
        }
        println!("  validation flipped {:.3}", noisy.flip_fraction(Split::Val));
    }
    Ok(())
}
