//! Datasets with injected label noise.
//!
//! A [`NoisyDataset`] carries the training-visible (possibly flipped) labels
//! alongside the original ones. The originals are only reachable through the
//! metric helpers ([`NoisyDataset::clean_mask`], [`NoisyDataset::flip_table`]),
//! never as a label vector, so a trainer cannot peek at them.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const IDX_CLASSES: usize = 10;

/// Distance of every class mean from the origin in [`make_gaussian_mixture`].
pub const MEAN_SCALE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    None,
    Symmetric,
    Pair,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseInfo {
    pub kind: NoiseKind,
    pub rate: f64,
    pub seed: u64,
}

impl Default for NoiseInfo {
    fn default() -> Self {
        NoiseInfo {
            kind: NoiseKind::None,
            rate: 0.0,
            seed: 0,
        }
    }
}

/// Fractions of rows held out for validation and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            val_fraction: 0.1,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyDataset {
    features: Vec<f64>,
    dim: usize,
    classes: usize,
    y_noisy: Vec<usize>,
    y_clean: Vec<usize>,
    splits: Vec<Split>,
    noise: NoiseInfo,
}

impl NoisyDataset {
    /// A noise-free dataset with every row in the training split.
    pub fn from_parts(features: Vec<f64>, dim: usize, labels: Vec<usize>, classes: usize) -> Result<NoisyDataset> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(invalid(format!(
                "{} feature values do not form {} rows of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        if classes < 2 {
            return Err(invalid("need at least two classes"));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(invalid(format!("label {bad} outside 0..{classes}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(invalid("features must be finite"));
        }
        let n = labels.len();
        Ok(NoisyDataset {
            features,
            dim,
            classes,
            y_noisy: labels.clone(),
            y_clean: labels,
            splits: vec![Split::Train; n],
            noise: NoiseInfo::default(),
        })
    }

    /// Reassigns splits with a seeded shuffle.
    pub fn with_splits(mut self, spec: SplitSpec) -> Result<NoisyDataset> {
        let fractions_ok = (0.0..1.0).contains(&spec.val_fraction)
            && (0.0..1.0).contains(&spec.test_fraction)
            && spec.val_fraction + spec.test_fraction < 1.0;
        if !fractions_ok {
            return Err(invalid("split fractions must be in [0, 1) and leave room for training"));
        }
        let n = self.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
        let n_val = (spec.val_fraction * n as f64).round() as usize;
        let n_test = (spec.test_fraction * n as f64).round() as usize;
        for (pos, &row) in order.iter().enumerate() {
            self.splits[row] = if pos < n_val {
                Split::Val
            } else if pos < n_val + n_test {
                Split::Test
            } else {
                Split::Train
            };
        }
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.y_noisy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_noisy.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn noise(&self) -> NoiseInfo {
        self.noise
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Training-visible labels. Validation and test rows are never flipped.
    pub fn labels(&self) -> &[usize] {
        &self.y_noisy
    }

    pub fn split_of(&self, i: usize) -> Split {
        self.splits[i]
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Whether each listed row kept its original label.
    pub fn clean_mask(&self, rows: &[usize]) -> Vec<bool> {
        rows.iter().map(|&i| self.y_noisy[i] == self.y_clean[i]).collect()
    }

    /// Fraction of rows in `split` whose label was flipped.
    pub fn flip_fraction(&self, split: Split) -> f64 {
        let rows = self.indices(split);
        if rows.is_empty() {
            return 0.0;
        }
        let flipped = self.clean_mask(&rows).iter().filter(|c| !**c).count();
        flipped as f64 / rows.len() as f64
    }

    /// Counts of (original, visible) label pairs on `split`, indexed `[original][visible]`.
    pub fn flip_table(&self, split: Split) -> Vec<Vec<usize>> {
        let mut table = vec![vec![0; self.classes]; self.classes];
        for i in self.indices(split) {
            table[self.y_clean[i]][self.y_noisy[i]] += 1;
        }
        table
    }

    /// Keeps only the first `n` rows.
    pub fn truncate(mut self, n: usize) -> NoisyDataset {
        let n = n.min(self.len());
        self.features.truncate(n * self.dim);
        self.y_noisy.truncate(n);
        self.y_clean.truncate(n);
        self.splits.truncate(n);
        self
    }

    /// CSV with feature columns, `y_noisy`, `y_clean` and `split`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for j in 0..self.dim {
            out.push_str(&format!("f{j},"));
        }
        out.push_str("y_noisy,y_clean,split\n");
        for i in 0..self.len() {
            for v in self.row(i) {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{},{},{}\n", self.y_noisy[i], self.y_clean[i], self.splits[i].name()));
        }
        out
    }

    fn flip_train_labels(&self, kind: NoiseKind, rate: f64, seed: u64, flip: impl Fn(usize, &mut ChaCha8Rng) -> usize) -> Result<NoisyDataset> {
        if !(0.0..1.0).contains(&rate) {
            return Err(invalid(format!("noise rate {rate} outside [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        for i in 0..out.len() {
            out.y_noisy[i] = out.y_clean[i];
            if out.splits[i] != Split::Train {
                continue;
            }
            if rng.random::<f64>() < rate {
                out.y_noisy[i] = flip(out.y_clean[i], &mut rng);
            }
        }
        out.noise = NoiseInfo { kind, rate, seed };
        Ok(out)
    }
}

/// Isotropic Gaussian blobs around the vertices of a scaled simplex.
///
/// With `classes <= dim` the means are `MEAN_SCALE * e_c`; otherwise they sit
/// evenly on a circle of radius `MEAN_SCALE` in the first two coordinates.
/// Neighbouring means are at least `MEAN_SCALE * sqrt(2)` apart when
/// `classes <= dim`, so a spread well below half that gives near-separable
/// classes. Splits follow [`SplitSpec::default`] reseeded with `seed`.
pub fn make_gaussian_mixture(
    classes: usize,
    dim: usize,
    n_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<NoisyDataset> {
    if classes < 2 || dim < 2 {
        return Err(invalid("need at least two classes and two dimensions"));
    }
    if n_per_class == 0 || !(spread >= 0.0) {
        return Err(invalid("need rows per class and a non-negative spread"));
    }
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            let mut m = vec![0.0; dim];
            if classes <= dim {
                m[c] = MEAN_SCALE;
            } else {
                let angle = std::f64::consts::TAU * c as f64 / classes as f64;
                m[0] = MEAN_SCALE * angle.cos();
                m[1] = MEAN_SCALE * angle.sin();
            }
            m
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = classes * n_per_class;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n_per_class {
        for (c, mean) in means.iter().enumerate() {
            for m in mean {
                let z: f64 = rng.sample(StandardNormal);
                features.push(m + spread * z);
            }
            labels.push(c);
        }
    }
    NoisyDataset::from_parts(features, dim, labels, classes)?.with_splits(SplitSpec {
        seed: seed.wrapping_add(0x5917),
        ..SplitSpec::default()
    })
}

/// Flips each training label with probability `rate` to one of the other
/// classes, chosen uniformly.
pub fn inject_symmetric_noise(dataset: &NoisyDataset, rate: f64, seed: u64) -> Result<NoisyDataset> {
    let classes = dataset.classes;
    dataset.flip_train_labels(NoiseKind::Symmetric, rate, seed, |y, rng| {
        let r = rng.random_range(0..classes - 1);
        if r >= y {
            r + 1
        } else {
            r
        }
    })
}

/// Flips each training label with probability `rate` to the next class, cyclically.
pub fn inject_pair_noise(dataset: &NoisyDataset, rate: f64, seed: u64) -> Result<NoisyDataset> {
    let classes = dataset.classes;
    dataset.flip_train_labels(NoiseKind::Pair, rate, seed, |y, _| (y + 1) % classes)
}

/// Fraction of `selected` batch positions that carry their original label.
pub fn label_precision(selected: &[usize], batch_clean_mask: &[bool]) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::UndefinedMetric("label precision of an empty selection".into()));
    }
    let mut clean = 0usize;
    for &i in selected {
        match batch_clean_mask.get(i) {
            Some(true) => clean += 1,
            Some(false) => {}
            None => return Err(invalid(format!("selected index {i} outside the batch"))),
        }
    }
    Ok(clean as f64 / selected.len() as f64)
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_error(path, offset, "file ends inside the header"))
}

fn format_error(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: message.into(),
    }
}

/// Loads an IDX image/label file pair (e.g. MNIST), keeping at most `limit` rows.
///
/// Pixels are scaled to [0, 1]. All rows start in the training split.
pub fn load_idx(images_path: &Path, labels_path: &Path, limit: Option<usize>) -> Result<NoisyDataset> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;

    let magic = read_be_u32(&images, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_error(images_path, 0, format!("bad image magic {magic:#010x}")));
    }
    let n_images = read_be_u32(&images, 4, images_path)? as usize;
    let rows = read_be_u32(&images, 8, images_path)? as usize;
    let cols = read_be_u32(&images, 12, images_path)? as usize;

    let magic = read_be_u32(&labels, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format_error(labels_path, 0, format!("bad label magic {magic:#010x}")));
    }
    let n_labels = read_be_u32(&labels, 4, labels_path)? as usize;
    if n_labels != n_images {
        return Err(format_error(
            labels_path,
            4,
            format!("{n_labels} labels for {n_images} images"),
        ));
    }

    let n = limit.map_or(n_images, |l| l.min(n_images));
    let dim = rows * cols;
    let pixel_end = 16 + n * dim;
    if images.len() < pixel_end {
        return Err(format_error(
            images_path,
            images.len(),
            format!("truncated pixel data, expected {pixel_end} bytes"),
        ));
    }
    if labels.len() < 8 + n {
        return Err(format_error(
            labels_path,
            labels.len(),
            format!("truncated label data, expected {} bytes", 8 + n),
        ));
    }
    let features = images[16..pixel_end].iter().map(|&p| f64::from(p) / 255.0).collect();
    let mut ys = Vec::with_capacity(n);
    for (i, &y) in labels[8..8 + n].iter().enumerate() {
        if usize::from(y) >= IDX_CLASSES {
            return Err(format_error(labels_path, 8 + i, format!("label {y} outside 0..{IDX_CLASSES}")));
        }
        ys.push(usize::from(y));
    }
    NoisyDataset::from_parts(features, dim, ys, IDX_CLASSES)
}

/// Writes an IDX image/label pair; the inverse of [`load_idx`] up to pixel quantization.
pub fn write_idx(images_path: &Path, labels_path: &Path, pixels: &[u8], rows: u32, cols: u32, labels: &[u8]) -> Result<()> {
    let n = labels.len() as u32;
    if pixels.len() != (n * rows * cols) as usize {
        return Err(invalid("pixel buffer does not match the label count and image size"));
    }
    let mut img = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n, rows, cols] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + labels.len());
    for v in [IDX_LABELS_MAGIC, n] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    fs::write(images_path, img)?;
    fs::write(labels_path, lab)?;
    Ok(())
}
