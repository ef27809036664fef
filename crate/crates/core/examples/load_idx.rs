//! Loads an IDX image/label pair such as MNIST and prints a summary.
//!
//! `cargo run --example load_idx -- <images> <labels> [limit]`
//!
//! Without arguments a tiny pair is written to a temporary directory first.

use std::path::PathBuf;

use memosched::data::{inject_pair_noise, load_idx, write_idx, Split};

fn main() -> memosched::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (images, labels) = if args.len() >= 2 {
        (PathBuf::from(&args[0]), PathBuf::from(&args[1]))
    } else {
        let dir = std::env::temp_dir().join("memosched-idx");
        std::fs::create_dir_all(&dir)?;
        let (images, labels) = (dir.join("images.idx3"), dir.join("labels.idx1"));
        let pixels: Vec<u8> = (0..12 * 16).map(|i| (i * 7 % 256) as u8).collect();
        let y: Vec<u8> = (0..12).map(|i| i % 3).collect();
        write_idx(&images, &labels, &pixels, 4, 4, &y)?;
        (images, labels)
    };
    let limit = args.get(2).and_then(|a| a.parse().ok());

    let ds = load_idx(&images, &labels, limit)?;
    println!("{} rows, {} features, {} classes", ds.len(), ds.dim(), ds.classes());
    let mut counts = vec![0usize; ds.classes()];
    for &y in ds.labels() {
        counts[y] += 1;
    }
    println!("class counts {counts:?}");

    let noisy = inject_pair_noise(&ds, 0.3, 0)?;
    println!("pair noise 0.3: flipped fraction {:.3}", noisy.flip_fraction(Split::Train));
    Ok(())
}
