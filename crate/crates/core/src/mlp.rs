//! A small fully connected classifier with ReLU hidden layers and a softmax
//! cross-entropy head, with hand-written backpropagation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    /// `out x in`
    weight: DMatrix<f64>,
    bias: DVector<f64>,
}

/// Multilayer perceptron. `sizes = [input, hidden..., classes]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<Dense>,
}

/// Gradients laid out like the model's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<(DMatrix<f64>, DVector<f64>)>,
}

impl Gradients {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b.iter()).all(|v| v.is_finite()))
    }
}

impl Mlp {
    /// He-initialized weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Mlp> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid(format!("bad layer sizes {sizes:?}")));
        }
        if sizes[sizes.len() - 1] < 2 {
            return Err(invalid("need at least two output classes"));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = (2.0 / fan_in as f64).sqrt();
                Dense {
                    weight: DMatrix::from_fn(fan_out, fan_in, |_, _| std * rng.sample::<f64, _>(StandardNormal)),
                    bias: DVector::zeros(fan_out),
                }
            })
            .collect();
        Ok(Mlp {
            sizes: sizes.to_vec(),
            layers,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn classes(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(invalid("parameter vector has the wrong length"));
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().unwrap_or_default());
            l.bias.iter_mut().for_each(|b| *b = it.next().unwrap_or_default());
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.flat_params().iter().all(|v| v.is_finite())
    }

    fn check_batch(&self, x: &DMatrix<f64>, labels: &[usize]) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(invalid(format!(
                "batch has {} features, model expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        if x.nrows() != labels.len() {
            return Err(invalid("one label per row required"));
        }
        if let Some(y) = labels.iter().find(|&&y| y >= self.classes()) {
            return Err(invalid(format!("label {y} outside 0..{}", self.classes())));
        }
        Ok(())
    }

    /// Layer outputs (`n x width`): ReLU activations for hidden layers,
    /// logits last.
    fn forward_all(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut outs: Vec<DMatrix<f64>> = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let input = outs.last().unwrap_or(x);
            let mut z = matmul(input, false, &l.weight, true);
            let n = z.nrows();
            if n > 0 {
                for (col, b) in z.as_mut_slice().chunks_exact_mut(n).zip(l.bias.iter()) {
                    col.iter_mut().for_each(|v| *v += b);
                }
            }
            if i + 1 < self.layers.len() {
                z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            outs.push(z);
        }
        outs
    }

    /// Runs the network once and keeps every layer output for a later
    /// [`Mlp::backward_rows`].
    pub fn forward_cached(&self, x: &DMatrix<f64>) -> Result<Forward> {
        if x.ncols() != self.input_dim() {
            return Err(invalid("feature dimension mismatch"));
        }
        Ok(Forward { outs: self.forward_all(x) })
    }

    /// Logits, `n x classes`.
    pub fn logits(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(invalid("feature dimension mismatch"));
        }
        Ok(self.forward_all(x).pop().expect("at least one layer"))
    }

    /// Softmax probabilities, `n x classes`.
    pub fn probabilities(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut p = self.logits(x)?;
        for mut row in p.row_iter_mut() {
            let top = row.max();
            row.iter_mut().for_each(|v| *v = (*v - top).exp());
            let s = row.sum();
            row /= s;
        }
        Ok(p)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok(logits.row_iter().map(|r| r.transpose().argmax().0).collect())
    }

    /// Per-sample cross-entropy and its mean.
    pub fn forward_loss(&self, x: &DMatrix<f64>, labels: &[usize]) -> Result<(Vec<f64>, f64)> {
        self.check_batch(x, labels)?;
        let logits = self.forward_all(x).pop().expect("at least one layer");
        let losses = cross_entropy(&logits, labels);
        let mean = if losses.is_empty() {
            0.0
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        };
        Ok((losses, mean))
    }

    /// Mean cross-entropy and accuracy from a single forward pass.
    pub fn loss_and_accuracy(&self, x: &DMatrix<f64>, labels: &[usize]) -> Result<(f64, f64)> {
        self.check_batch(x, labels)?;
        if labels.is_empty() {
            return Err(invalid("empty batch"));
        }
        let logits = self.forward_all(x).pop().expect("at least one layer");
        let n = labels.len() as f64;
        let loss = cross_entropy(&logits, labels).iter().sum::<f64>() / n;
        let hits = logits
            .row_iter()
            .zip(labels)
            .filter(|(r, &y)| r.transpose().argmax().0 == y)
            .count();
        Ok((loss, hits as f64 / n))
    }

    /// Exact gradient of the mean cross-entropy over the batch.
    pub fn backward(&self, x: &DMatrix<f64>, labels: &[usize]) -> Result<(Gradients, f64)> {
        self.check_batch(x, labels)?;
        if labels.is_empty() {
            return Err(invalid("empty batch"));
        }
        let outs = self.forward_all(x);
        Ok(self.backprop(x, &outs, labels))
    }

    /// Gradient of the mean cross-entropy over the listed rows of a batch
    /// whose forward pass is already cached. Equals `backward` on those rows.
    pub fn backward_rows(&self, x: &DMatrix<f64>, cache: &Forward, labels: &[usize], rows: &[usize]) -> Result<(Gradients, f64)> {
        self.check_batch(x, labels)?;
        if rows.is_empty() {
            return Err(invalid("empty batch"));
        }
        if cache.outs.len() != self.layers.len() || cache.outs[0].nrows() != x.nrows() {
            return Err(invalid("cached forward pass does not match the batch"));
        }
        if let Some(&r) = rows.iter().find(|&&r| r >= x.nrows()) {
            return Err(invalid(format!("row {r} outside the batch")));
        }
        if rows.len() == x.nrows() && rows.iter().enumerate().all(|(i, &r)| i == r) {
            return Ok(self.backprop(x, &cache.outs, labels));
        }
        let xs = x.select_rows(rows);
        let outs: Vec<DMatrix<f64>> = cache.outs.iter().map(|p| p.select_rows(rows)).collect();
        let ys: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
        Ok(self.backprop(&xs, &outs, &ys))
    }

    fn backprop(&self, x: &DMatrix<f64>, outs: &[DMatrix<f64>], labels: &[usize]) -> (Gradients, f64) {
        let logits = outs.last().expect("at least one layer");
        let n = labels.len() as f64;
        let losses = cross_entropy(logits, labels);
        let mean = losses.iter().sum::<f64>() / n;

        // d loss / d logits = (softmax - onehot) / n
        let mut delta = softmax_rows(logits);
        for (r, &y) in labels.iter().enumerate() {
            delta[(r, y)] -= 1.0;
        }
        delta /= n;

        let mut grads = Vec::with_capacity(self.layers.len());
        for li in (0..self.layers.len()).rev() {
            let input = if li == 0 { x } else { &outs[li - 1] };
            let gw = matmul(&delta, true, input, false);
            let rows = delta.nrows();
            let gb = DVector::from_iterator(
                delta.ncols(),
                delta.as_slice().chunks_exact(rows.max(1)).map(|c| c.iter().sum::<f64>()),
            );
            grads.push((gw, gb));
            if li > 0 {
                let mut back = matmul(&delta, false, &self.layers[li].weight, false);
                for (g, a) in back.as_mut_slice().iter_mut().zip(outs[li - 1].as_slice()) {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                }
                delta = back;
            }
        }
        grads.reverse();
        (Gradients { layers: grads }, mean)
    }
}

/// `op(a) * op(b)`, where `op` transposes when the flag is set. Transposes
/// only swap strides.
fn matmul(a: &DMatrix<f64>, ta: bool, b: &DMatrix<f64>, tb: bool) -> DMatrix<f64> {
    let (m, k) = if ta { (a.ncols(), a.nrows()) } else { a.shape() };
    let (kb, n) = if tb { (b.ncols(), b.nrows()) } else { b.shape() };
    assert_eq!(k, kb, "inner dimensions differ");
    let mut c = DMatrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    let (rsa, csa) = if ta { (a.nrows() as isize, 1) } else { (1, a.nrows() as isize) };
    let (rsb, csb) = if tb { (b.nrows() as isize, 1) } else { (1, b.nrows() as isize) };
    // SAFETY: the pointers cover column-major buffers of the stated shapes and
    // strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            1,
            m as isize,
        );
    }
    c
}

/// Cached layer outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    outs: Vec<DMatrix<f64>>,
}

impl Forward {
    pub fn logits(&self) -> &DMatrix<f64> {
        self.outs.last().expect("at least one layer")
    }

    /// Per-sample cross-entropy against `labels`.
    pub fn losses(&self, labels: &[usize]) -> Result<Vec<f64>> {
        if labels.len() != self.logits().nrows() {
            return Err(invalid("one label per row required"));
        }
        Ok(cross_entropy(self.logits(), labels))
    }
}

fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, c) = logits.shape();
    let mut out = logits.clone();
    let mut top = vec![f64::NEG_INFINITY; n];
    for j in 0..c {
        for (t, v) in top.iter_mut().zip(logits.column(j).iter()) {
            *t = t.max(*v);
        }
    }
    let mut total = vec![0.0; n];
    for mut col in out.column_iter_mut() {
        for ((v, t), s) in col.iter_mut().zip(&top).zip(total.iter_mut()) {
            *v = (*v - t).exp();
            *s += *v;
        }
    }
    for mut col in out.column_iter_mut() {
        for (v, s) in col.iter_mut().zip(&total) {
            *v /= s;
        }
    }
    out
}

fn cross_entropy(logits: &DMatrix<f64>, labels: &[usize]) -> Vec<f64> {
    let (n, c) = logits.shape();
    let mut top = vec![f64::NEG_INFINITY; n];
    for j in 0..c {
        for (t, v) in top.iter_mut().zip(logits.column(j).iter()) {
            *t = t.max(*v);
        }
    }
    let mut total = vec![0.0; n];
    for j in 0..c {
        for ((s, v), t) in total.iter_mut().zip(logits.column(j).iter()).zip(&top) {
            *s += (v - t).exp();
        }
    }
    labels
        .iter()
        .enumerate()
        .map(|(r, &y)| top[r] + total[r].ln() - logits[(r, y)])
        .collect()
}

/// SGD with heavy-ball momentum: `v = m v + g; w -= lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Option<Gradients>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Sgd {
        Sgd {
            learning_rate,
            momentum,
            velocity: None,
        }
    }

    pub fn step(&mut self, model: &mut Mlp, grads: &Gradients) {
        let velocity = match self.velocity.take() {
            None => grads.clone(),
            Some(mut v) => {
                for ((vw, vb), (gw, gb)) in v.layers.iter_mut().zip(&grads.layers) {
                    *vw *= self.momentum;
                    *vw += gw;
                    *vb *= self.momentum;
                    *vb += gb;
                }
                v
            }
        };
        for (layer, (vw, vb)) in model.layers.iter_mut().zip(&velocity.layers) {
            layer.weight -= vw * self.learning_rate;
            layer.bias -= vb * self.learning_rate;
        }
        self.velocity = Some(velocity);
    }
}

/// Rows of `x` (given as row slices) stacked into an `n x d` matrix.
pub fn stack_rows<'a>(rows: impl ExactSizeIterator<Item = &'a [f64]>, dim: usize) -> DMatrix<f64> {
    let rows: Vec<&[f64]> = rows.collect();
    DMatrix::from_fn(rows.len(), dim, |r, c| rows[r][c])
}
