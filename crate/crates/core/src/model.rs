//! Fixed-reservoir classifier with trainable input and output projections.
//!
//! ```text
//! a     = (x - offset) W_in^T
//! pre   = a + ReLU(a) W^T
//! h     = ReLU(pre)
//! probs = softmax(h W_out^T)
//! ```
//!
//! W is never touched by training. `offset` is a fixed scalar subtracted from
//! every input feature (0 by default); it is not a parameter.

use std::fmt::Debug;

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::Float;
use rand::Rng;
use thiserror::Error;

use crate::circuit::WeightMatrix;
use crate::data::{sequential_batches, shuffled_batches, Dataset};
use crate::seeds;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input has {found} features, model expects {expected}")]
    InputDim { expected: usize, found: usize },
    #[error("label {label} is out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("batch has {inputs} rows but {labels} labels")]
    BatchShape { inputs: usize, labels: usize },
}

/// Floating point types the model runs in (f32 for training, f64 for
/// gradient checks).
pub trait Real: Float + LinalgScalar + ScalarOperand + Debug + Send + Sync + 'static {}
impl<T: Float + LinalgScalar + ScalarOperand + Debug + Send + Sync + 'static> Real for T {}

fn cast<F: Real>(x: f64) -> F {
    F::from(x).expect("value representable")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<F: Real> {
    /// n_hidden x input_dim
    pub w_in: Array2<F>,
    /// n_hidden x n_hidden, fixed
    pub w: Array2<F>,
    /// n_classes x n_hidden
    pub w_out: Array2<F>,
    pub input_offset: F,
}

impl<F: Real> Model<F> {
    pub fn input_dim(&self) -> usize {
        self.w_in.ncols()
    }

    pub fn n_hidden(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.w_out.nrows()
    }

    pub fn with_input_offset(mut self, offset: f64) -> Self {
        self.input_offset = cast(offset);
        self
    }
}

/// Glorot-style uniform bound.
pub fn init_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// W_in and W_out drawn uniform(-a, a) per matrix, W_in first.
pub fn init_model<F: Real>(input_dim: usize, circuit: &WeightMatrix, n_classes: usize, seed: u64) -> Model<F> {
    let n = circuit.n;
    let mut rng = seeds::rng(seed);
    let mut uniform = |rows: usize, cols: usize| {
        let a = init_bound(cols, rows);
        Array2::from_shape_simple_fn((rows, cols), || cast::<F>(rng.random_range(-a..a)))
    };
    let w_in = uniform(n, input_dim);
    let w_out = uniform(n_classes, n);
    let w = Array2::from_shape_vec((n, n), circuit.values.iter().map(|&v| cast(v)).collect())
        .expect("circuit is square");
    Model {
        w_in,
        w,
        w_out,
        input_offset: F::zero(),
    }
}

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward<F: Real> {
    pub x: Array2<F>,
    pub a: Array2<F>,
    pub pre: Array2<F>,
    pub h: Array2<F>,
    pub probs: Array2<F>,
}

fn relu<F: Real>(m: &Array2<F>) -> Array2<F> {
    m.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

/// Row softmax with max subtraction; also returns log-probabilities.
fn softmax_rows<F: Real>(logits: &Array2<F>) -> (Array2<F>, Array2<F>) {
    let mut probs = logits.clone();
    let mut logp = logits.clone();
    for (mut p, mut lp) in probs.rows_mut().into_iter().zip(logp.rows_mut()) {
        let max = p.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        p.mapv_inplace(|v| (v - max).exp());
        let sum = p.sum();
        let log_sum = sum.ln();
        lp.mapv_inplace(|v| v - max - log_sum);
        p.mapv_inplace(|v| v / sum);
    }
    (probs, logp)
}

pub fn forward<F: Real>(model: &Model<F>, x: ArrayView2<F>) -> Result<Forward<F>, ModelError> {
    Ok(forward_logp(model, x)?.0)
}

fn forward_logp<F: Real>(model: &Model<F>, x: ArrayView2<F>) -> Result<(Forward<F>, Array2<F>), ModelError> {
    if x.ncols() != model.input_dim() {
        return Err(ModelError::InputDim {
            expected: model.input_dim(),
            found: x.ncols(),
        });
    }
    let x = if model.input_offset == F::zero() {
        x.to_owned()
    } else {
        x.mapv(|v| v - model.input_offset)
    };
    let a = x.dot(&model.w_in.t());
    let pre = &a + &relu(&a).dot(&model.w.t());
    let h = relu(&pre);
    let logits = h.dot(&model.w_out.t());
    let (probs, logp) = softmax_rows(&logits);
    Ok((Forward { x, a, pre, h, probs }, logp))
}

#[derive(Debug, Clone)]
pub struct Grads<F: Real> {
    pub loss: F,
    pub d_w_in: Array2<F>,
    pub d_w_out: Array2<F>,
    pub forward: Forward<F>,
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<(), ModelError> {
    if labels.len() != rows {
        return Err(ModelError::BatchShape {
            inputs: rows,
            labels: labels.len(),
        });
    }
    match labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(ModelError::Label { label, classes }),
        None => Ok(()),
    }
}

fn mean_nll<F: Real>(logp: &Array2<F>, labels: &[usize]) -> F {
    let total = labels
        .iter()
        .enumerate()
        .fold(F::zero(), |acc, (b, &y)| acc - logp[[b, y]]);
    total / cast(labels.len().max(1) as f64)
}

/// Mean cross-entropy and its gradients with respect to W_in and W_out.
pub fn loss_and_grads<F: Real>(model: &Model<F>, x: ArrayView2<F>, labels: &[usize]) -> Result<Grads<F>, ModelError> {
    check_labels(labels, x.nrows(), model.n_classes())?;
    let (fwd, logp) = forward_logp(model, x)?;
    let loss = mean_nll(&logp, labels);

    let inv_b: F = cast(1.0 / labels.len().max(1) as f64);
    let mut dlogits = fwd.probs.clone();
    for (b, &y) in labels.iter().enumerate() {
        dlogits[[b, y]] = dlogits[[b, y]] - F::one();
    }
    dlogits.mapv_inplace(|v| v * inv_b);

    let d_w_out = dlogits.t().dot(&fwd.h);
    let mut dpre = dlogits.dot(&model.w_out);
    Zip::from(&mut dpre).and(&fwd.pre).for_each(|d, &p| {
        if p <= F::zero() {
            *d = F::zero();
        }
    });
    let mut through_w = dpre.dot(&model.w);
    Zip::from(&mut through_w).and(&fwd.a).for_each(|d, &a| {
        if a <= F::zero() {
            *d = F::zero();
        }
    });
    let da = dpre + through_w;
    let d_w_in = da.t().dot(&fwd.x);

    Ok(Grads {
        loss,
        d_w_in,
        d_w_out,
        forward: fwd,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<F: Real> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m_in: Array2<F>,
    v_in: Array2<F>,
    m_out: Array2<F>,
    v_out: Array2<F>,
}

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_BATCH: usize = 64;

impl<F: Real> Adam<F> {
    pub fn new(model: &Model<F>, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m_in: Array2::zeros(model.w_in.raw_dim()),
            v_in: Array2::zeros(model.w_in.raw_dim()),
            m_out: Array2::zeros(model.w_out.raw_dim()),
            v_out: Array2::zeros(model.w_out.raw_dim()),
        }
    }

    /// One bias-corrected Adam update of W_in and W_out.
    pub fn step(&mut self, model: &mut Model<F>, d_w_in: &Array2<F>, d_w_out: &Array2<F>) {
        assert_eq!(d_w_in.raw_dim(), model.w_in.raw_dim(), "W_in gradient shape");
        assert_eq!(d_w_out.raw_dim(), model.w_out.raw_dim(), "W_out gradient shape");
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (cast::<F>(self.beta1), cast::<F>(self.beta2), cast::<F>(self.lr), cast::<F>(self.eps));
        let (c1, c2) = (cast::<F>(c1), cast::<F>(c2));
        let update = |theta: &mut Array2<F>, m: &mut Array2<F>, v: &mut Array2<F>, g: &Array2<F>| {
            Zip::from(theta).and(m).and(v).and(g).for_each(|th, m, v, &g| {
                *m = b1 * *m + (F::one() - b1) * g;
                *v = b2 * *v + (F::one() - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *th = *th - lr * m_hat / (v_hat.sqrt() + eps);
            });
        };
        update(&mut model.w_in, &mut self.m_in, &mut self.v_in, d_w_in);
        update(&mut model.w_out, &mut self.m_out, &mut self.v_out, d_w_out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub loss: f64,
    pub accuracy: f64,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<F: Real>(row: impl IntoIterator<Item = F>) -> usize {
    let mut best = 0;
    let mut best_v = F::neg_infinity();
    for (i, v) in row.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

fn correct<F: Real>(probs: &Array2<F>, labels: &[usize]) -> usize {
    probs
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &y)| argmax(row.iter().copied()) == y)
        .count()
}

fn check_dataset(model: &Model<f32>, ds: &Dataset) -> Result<(), ModelError> {
    if ds.input_dim != model.input_dim() {
        return Err(ModelError::InputDim {
            expected: model.input_dim(),
            found: ds.input_dim,
        });
    }
    Ok(())
}

/// One shuffled pass including the final short batch. Loss and accuracy are
/// averaged over samples, measured on each batch before its update.
pub fn train_epoch(
    model: &mut Model<f32>,
    opt: &mut Adam<f32>,
    ds: &Dataset,
    batch_size: usize,
    shuffle_seed: u64,
    epoch: u64,
) -> Result<EpochMetrics, ModelError> {
    check_dataset(model, ds)?;
    let mut loss_sum = 0.0f64;
    let mut hits = 0usize;
    for batch in shuffled_batches(ds, batch_size, shuffle_seed, epoch) {
        let g = loss_and_grads(model, batch.inputs.view(), &batch.labels)?;
        loss_sum += f64::from(g.loss) * batch.labels.len() as f64;
        hits += correct(&g.forward.probs, &batch.labels);
        opt.step(model, &g.d_w_in, &g.d_w_out);
    }
    let n = ds.len().max(1) as f64;
    Ok(EpochMetrics {
        loss: loss_sum / n,
        accuracy: hits as f64 / n,
    })
}

pub const EVAL_BATCH: usize = 1000;

/// Mean cross-entropy and argmax accuracy over the whole dataset.
pub fn evaluate(model: &Model<f32>, ds: &Dataset) -> Result<EpochMetrics, ModelError> {
    check_dataset(model, ds)?;
    let mut loss_sum = 0.0f64;
    let mut hits = 0usize;
    for batch in sequential_batches(ds, EVAL_BATCH) {
        check_labels(&batch.labels, batch.inputs.nrows(), model.n_classes())?;
        let (fwd, logp) = forward_logp(model, batch.inputs.view())?;
        loss_sum += f64::from(mean_nll(&logp, &batch.labels)) * batch.labels.len() as f64;
        hits += correct(&fwd.probs, &batch.labels);
    }
    let n = ds.len().max(1) as f64;
    Ok(EpochMetrics {
        loss: loss_sum / n,
        accuracy: hits as f64 / n,
    })
}

/// Class predictions for a batch.
pub fn predict<F: Real>(model: &Model<F>, x: ArrayView2<F>) -> Result<Array1<usize>, ModelError> {
    let fwd = forward(model, x)?;
    Ok(fwd.probs.axis_iter(Axis(0)).map(|r| argmax(r.iter().copied())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetName, Split};
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(lo..hi))
    }

    fn stochastic(rng: &mut impl Rng, n: usize) -> Array2<f64> {
        let mut w = random_matrix(rng, n, n, 0.0, 1.0);
        for i in 0..n {
            w[[i, i]] = 0.0;
        }
        for mut row in w.rows_mut() {
            let s = row.sum();
            if s > 0.0 {
                row.mapv_inplace(|v| v / s);
            }
        }
        w
    }

    fn tiny(rng: &mut impl Rng, d: usize, n: usize, c: usize) -> Model<f64> {
        Model {
            w_in: random_matrix(rng, n, d, -1.0, 1.0),
            w: stochastic(rng, n),
            w_out: random_matrix(rng, c, n, -1.0, 1.0),
            input_offset: 0.0,
        }
    }

    fn circuit(n: usize) -> WeightMatrix {
        let mut w = WeightMatrix::zeros(n);
        for i in 0..n {
            w.values[i * n + (i + 1) % n] = 1.0;
        }
        w
    }

    #[test]
    fn init_shapes_bounds_determinism() {
        let m: Model<f32> = init_model(784, &circuit(85), 10, 3);
        assert_eq!(m.w_in.dim(), (85, 784));
        assert_eq!(m.w_out.dim(), (10, 85));
        assert_eq!(m.w.dim(), (85, 85));
        let a_in = init_bound(784, 85) as f32;
        let a_out = init_bound(85, 10) as f32;
        assert!(m.w_in.iter().all(|v| v.abs() <= a_in));
        assert!(m.w_out.iter().all(|v| v.abs() <= a_out));
        assert_eq!(m, init_model(784, &circuit(85), 10, 3));
        assert_ne!(m, init_model(784, &circuit(85), 10, 4));
    }

    #[test]
    fn zero_input_gives_uniform_probs() {
        let m: Model<f64> = init_model(6, &circuit(4), 3, 1);
        let f = forward(&m, Array2::zeros((2, 6)).view()).unwrap();
        assert!(f.a.iter().all(|&v| v == 0.0));
        assert!(f.h.iter().all(|&v| v == 0.0));
        assert!(f.probs.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m: Model<f64> = init_model(6, &circuit(4), 3, 1);
        assert!(matches!(
            forward(&m, Array2::zeros((2, 5)).view()),
            Err(ModelError::InputDim { expected: 6, found: 5 })
        ));
        assert!(matches!(
            loss_and_grads(&m, Array2::zeros((1, 6)).view(), &[3]),
            Err(ModelError::Label { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn two_neuron_hand_instance() {
        let m = Model {
            w_in: array![[1.0, -1.0], [0.5, 2.0]],
            w: array![[0.0, 1.0], [1.0, 0.0]],
            w_out: array![[1.0, 0.0], [-1.0, 2.0]],
            input_offset: 0.0,
        };
        let (x0, x1) = (0.3, 0.1);
        let a0 = x0 - x1;
        let a1 = 0.5 * x0 + 2.0 * x1;
        let h0 = (a0 + a1.max(0.0)).max(0.0);
        let h1 = (a1 + a0.max(0.0)).max(0.0);
        let (z0, z1) = (h0, -h0 + 2.0 * h1);
        let p0 = 1.0 / (1.0 + (z1 - z0).exp());
        let f = forward(&m, array![[x0, x1]].view()).unwrap();
        assert!((f.probs[[0, 0]] - p0).abs() < 1e-12);
        assert!((f.probs[[0, 1]] - (1.0 - p0)).abs() < 1e-12);
        let g = loss_and_grads(&m, array![[x0, x1]].view(), &[1]).unwrap();
        assert!((g.loss + (1.0 - p0).ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_probs_loss_is_ln_classes() {
        let m: Model<f64> = init_model(4, &circuit(3), 10, 1);
        let g = loss_and_grads(&m, Array2::zeros((1, 4)).view(), &[7]).unwrap();
        assert!((g.loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_model_has_vanishing_loss() {
        let m = Model {
            w_in: array![[50.0]],
            w: array![[0.0]],
            w_out: array![[1.0], [-1.0]],
            input_offset: 0.0,
        };
        let g = loss_and_grads(&m, array![[1.0]].view(), &[0]).unwrap();
        assert!(g.loss < 1e-30);
        assert!(g.d_w_in.iter().chain(g.d_w_out.iter()).all(|v| v.abs() < 1e-30));
    }

    /// Central differences of the mean cross-entropy.
    fn finite_difference(
        model: &Model<f64>,
        x: &Array2<f64>,
        y: &[usize],
        which: fn(&mut Model<f64>) -> &mut Array2<f64>,
    ) -> Array2<f64> {
        let delta = 1e-5;
        let mut m = model.clone();
        let shape = which(&mut m).raw_dim();
        let mut out = Array2::zeros(shape);
        for idx in ndarray::indices(out.raw_dim()) {
            let orig = which(&mut m)[idx];
            which(&mut m)[idx] = orig + delta;
            let up = loss_and_grads(&m, x.view(), y).unwrap().loss;
            which(&mut m)[idx] = orig - delta;
            let down = loss_and_grads(&m, x.view(), y).unwrap().loss;
            which(&mut m)[idx] = orig;
            out[idx] = (up - down) / (2.0 * delta);
        }
        out
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeds::rng(11);
        for _ in 0..20 {
            let (d, n, c) = (rng.random_range(1..=6), rng.random_range(1..=4), rng.random_range(2..=3));
            let b = rng.random_range(1..=5);
            let m = tiny(&mut rng, d, n, c);
            let x = random_matrix(&mut rng, b, d, 0.0, 1.0);
            let y: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
            let g = loss_and_grads(&m, x.view(), &y).unwrap();
            let fd_in = finite_difference(&m, &x, &y, |m| &mut m.w_in);
            let fd_out = finite_difference(&m, &x, &y, |m| &mut m.w_out);
            for (a, b) in g.d_w_in.iter().zip(&fd_in).chain(g.d_w_out.iter().zip(&fd_out)) {
                assert!(rel_err(*a, *b) <= 1e-4, "{a} vs {b}");
            }
        }
    }

    /// One-layer network softmax(ReLU(x V^T) U^T) written out with loops.
    fn one_layer_oracle(v: &Array2<f64>, u: &Array2<f64>, x: &Array2<f64>, y: &[usize]) -> (f64, Array2<f64>, Array2<f64>) {
        let (b, d) = x.dim();
        let (n, c) = (v.nrows(), u.nrows());
        let mut loss = 0.0;
        let mut dv = Array2::zeros((n, d));
        let mut du = Array2::zeros((c, n));
        for s in 0..b {
            let a: Vec<f64> = (0..n).map(|i| (0..d).map(|k| v[[i, k]] * x[[s, k]]).sum()).collect();
            let h: Vec<f64> = a.iter().map(|&z| z.max(0.0)).collect();
            let z: Vec<f64> = (0..c).map(|j| (0..n).map(|i| u[[j, i]] * h[i]).sum()).collect();
            let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|&t| (t - mx).exp()).collect();
            let tot: f64 = e.iter().sum();
            let p: Vec<f64> = e.iter().map(|&t| t / tot).collect();
            loss -= p[y[s]].ln() / b as f64;
            for j in 0..c {
                let dz = (p[j] - if j == y[s] { 1.0 } else { 0.0 }) / b as f64;
                for i in 0..n {
                    du[[j, i]] += dz * h[i];
                    if a[i] > 0.0 {
                        for k in 0..d {
                            dv[[i, k]] += dz * u[[j, i]] * x[[s, k]];
                        }
                    }
                }
            }
        }
        (loss, dv, du)
    }

    #[test]
    fn zero_recurrence_matches_one_layer_oracle() {
        let mut rng = seeds::rng(12);
        for _ in 0..10 {
            let mut m = tiny(&mut rng, 5, 4, 3);
            m.w.fill(0.0);
            let x = random_matrix(&mut rng, 6, 5, 0.0, 1.0);
            let y: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
            let g = loss_and_grads(&m, x.view(), &y).unwrap();
            let (loss, dv, du) = one_layer_oracle(&m.w_in, &m.w_out, &x, &y);
            assert!((g.loss - loss).abs() < 1e-12);
            for (a, b) in g.d_w_in.iter().zip(&dv).chain(g.d_w_out.iter().zip(&du)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn offset_shifts_inputs() {
        let mut rng = seeds::rng(13);
        let m = tiny(&mut rng, 3, 2, 2).with_input_offset(0.5);
        let x = random_matrix(&mut rng, 4, 3, 0.0, 1.0);
        let plain = Model { input_offset: 0.0, ..m.clone() };
        let a = forward(&m, x.view()).unwrap().probs;
        let b = forward(&plain, x.mapv(|v| v - 0.5).view()).unwrap().probs;
        assert_eq!(a, b);
        // gradient check with the offset in place
        let y = [0, 1, 1, 0];
        let g = loss_and_grads(&m, x.view(), &y).unwrap();
        let fd = finite_difference(&m, &x, &y, |m| &mut m.w_in);
        for (a, b) in g.d_w_in.iter().zip(&fd) {
            assert!(rel_err(*a, *b) <= 1e-4);
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut m: Model<f64> = init_model(3, &circuit(2), 2, 1);
        let before = m.clone();
        let mut opt = Adam::new(&m, 1e-3);
        let (zi, zo) = (Array2::zeros(m.w_in.raw_dim()), Array2::zeros(m.w_out.raw_dim()));
        opt.step(&mut m, &zi, &zo);
        assert_eq!(m, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        for g in [0.37, -2.5, 1e-3] {
            let mut m = Model {
                w_in: array![[1.0]],
                w: array![[0.0]],
                w_out: array![[0.0]],
                input_offset: 0.0,
            };
            let mut opt = Adam::new(&m, 1e-3);
            opt.step(&mut m, &array![[g]], &array![[0.0]]);
            // m_hat = g, v_hat = g^2 after bias correction
            let expected = 1e-3 * g / (g.abs() + 1e-8);
            assert!(((1.0 - m.w_in[[0, 0]]) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let mut rng = seeds::rng(3);
        let m0 = tiny(&mut rng, 3, 2, 2);
        let x = random_matrix(&mut rng, 4, 3, 0.0, 1.0);
        let run = || {
            let mut m = m0.clone();
            let mut opt = Adam::new(&m, 1e-3);
            for _ in 0..5 {
                let g = loss_and_grads(&m, x.view(), &[0, 1, 1, 0]).unwrap();
                opt.step(&mut m, &g.d_w_in, &g.d_w_out);
            }
            (m, opt)
        };
        assert_eq!(run(), run());
    }

    fn toy_dataset(n: usize, dim: usize, seed: u64) -> Dataset {
        let mut rng = seeds::rng(seed);
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let inputs = labels
            .iter()
            .flat_map(|&l| (0..dim).map(move |k| if k % 10 == usize::from(l) { 0.9 } else { 0.1 }))
            .collect();
        Dataset {
            name: DatasetName::Mnist,
            split: Split::Train,
            input_dim: dim,
            inputs,
            labels,
        }
    }

    #[test]
    fn single_sample_is_memorized() {
        let ds = toy_dataset(1, 20, 1);
        let mut m: Model<f32> = init_model(20, &circuit(6), 10, 2);
        let mut opt = Adam::new(&m, 1e-2);
        let mut last = f64::INFINITY;
        for epoch in 0..200 {
            let metrics = train_epoch(&mut m, &mut opt, &ds, 64, 0, epoch).unwrap();
            assert!(metrics.loss <= last + 1e-6, "epoch {epoch}: {} > {last}", metrics.loss);
            last = metrics.loss;
        }
        assert!(last < 0.05, "{last}");
    }

    #[test]
    fn training_leaves_w_untouched_and_learns() {
        let ds = toy_dataset(500, 30, 4);
        let mut m: Model<f32> = init_model(30, &circuit(12), 10, 5);
        let w0 = m.w.clone();
        let mut opt = Adam::new(&m, 1e-2);
        let before = evaluate(&m, &ds).unwrap();
        for epoch in 0..5 {
            train_epoch(&mut m, &mut opt, &ds, 64, 9, epoch).unwrap();
        }
        let after = evaluate(&m, &ds).unwrap();
        assert_eq!(m.w, w0);
        assert!(after.accuracy > 0.9 && after.loss < before.loss, "{before:?} -> {after:?}");
    }

    #[test]
    fn training_is_reproducible() {
        let ds = toy_dataset(300, 30, 4);
        let run = || {
            let mut m: Model<f32> = init_model(30, &circuit(8), 10, 5);
            let mut opt = Adam::new(&m, 1e-3);
            let metrics: Vec<EpochMetrics> = (0..3).map(|e| train_epoch(&mut m, &mut opt, &ds, 64, 1, e).unwrap()).collect();
            (m, metrics)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn evaluate_matches_recount() {
        let ds = toy_dataset(2345, 30, 8);
        let m: Model<f32> = init_model(30, &circuit(8), 10, 5);
        let acc = evaluate(&m, &ds).unwrap().accuracy;
        let mut hits = 0;
        for i in 0..ds.len() {
            let x = Array2::from_shape_vec((1, 30), ds.input(i).to_vec()).unwrap();
            if predict(&m, x.view()).unwrap()[0] == usize::from(ds.labels[i]) {
                hits += 1;
            }
        }
        assert_eq!(acc, hits as f64 / ds.len() as f64);
    }

    #[test]
    fn perfect_predictor_scores_one() {
        // one-hot inputs routed straight through
        let n = 10;
        let mut eye = Array2::<f32>::zeros((n, n));
        for i in 0..n {
            eye[[i, i]] = 10.0;
        }
        let m = Model { w_in: eye.clone(), w: Array2::zeros((n, n)), w_out: eye, input_offset: 0.0 };
        let ds = Dataset {
            name: DatasetName::Mnist,
            split: Split::Test,
            input_dim: n,
            inputs: (0..50).flat_map(|s| (0..n).map(move |k| if k == s % n { 1.0 } else { 0.0 })).collect(),
            labels: (0..50).map(|s| (s % n) as u8).collect(),
        };
        assert_eq!(evaluate(&m, &ds).unwrap().accuracy, 1.0);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax([0.2f64, 0.5, 0.5, 0.1]), 1);
        assert_eq!(argmax([0.25f64; 4]), 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn softmax_rows_are_distributions(seed in any::<u64>(), b in 1usize..8) {
            let mut rng = seeds::rng(seed);
            let m = tiny(&mut rng, 5, 4, 3);
            let x = random_matrix(&mut rng, b, 5, 0.0, 1.0);
            let f = forward(&m, x.view()).unwrap();
            for row in f.probs.rows() {
                prop_assert!((row.sum() - 1.0).abs() <= 1e-6);
                prop_assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
            }
            let mf: Model<f32> = init_model(5, &circuit(4), 3, seed);
            let xf = x.mapv(|v| v as f32);
            for row in forward(&mf, xf.view()).unwrap().probs.rows() {
                prop_assert!((row.sum() - 1.0).abs() <= 1e-6);
            }
        }

        #[test]
        fn loss_ignores_sample_order(seed in any::<u64>()) {
            let mut rng = seeds::rng(seed);
            let m = tiny(&mut rng, 4, 3, 3);
            let x = random_matrix(&mut rng, 6, 4, 0.0, 1.0);
            let y: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
            let order = [3, 0, 5, 1, 4, 2];
            let xs = x.select(Axis(0), &order);
            let ys: Vec<usize> = order.iter().map(|&i| y[i]).collect();
            let a = loss_and_grads(&m, x.view(), &y).unwrap();
            let b = loss_and_grads(&m, xs.view(), &ys).unwrap();
            prop_assert!((a.loss - b.loss).abs() < 1e-12);
            for (p, q) in a.d_w_in.iter().zip(&b.d_w_in) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn w_is_frozen(seed in any::<u64>(), steps in 1usize..20) {
            let mut rng = seeds::rng(seed);
            let mut m = tiny(&mut rng, 4, 3, 2);
            let w0 = m.w.clone();
            let x = random_matrix(&mut rng, 5, 4, 0.0, 1.0);
            let mut opt = Adam::new(&m, 1e-2);
            for _ in 0..steps {
                let g = loss_and_grads(&m, x.view(), &[0, 1, 0, 1, 1]).unwrap();
                opt.step(&mut m, &g.d_w_in, &g.d_w_out);
            }
            prop_assert_eq!(m.w.as_slice().unwrap(), w0.as_slice().unwrap());
        }
    }
}
