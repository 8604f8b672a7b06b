//! Primitive differentiable layers with explicit forward caches.
//!
//! Forward passes borrow the layer immutably and return the activation
//! together with a cache value; backward passes consume the cache, accumulate
//! parameter gradients, and return the input gradient. Sequence data is one
//! sample at a time as `(positions, features)` matrices — batching is a loop
//! over samples, which keeps shapes exact and avoids padding bookkeeping.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::scalar::Real;
use crate::rngstream::stream_rng;

/// A named tensor with its gradient accumulator. `decay` marks whether the
/// optimizer applies weight decay (off for biases and normalization terms).
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: Array2<T>,
    pub grad: Array2<T>,
    pub decay: bool,
}

impl<T: Real> Param<T> {
    pub fn new(name: &str, value: Array2<T>, decay: bool) -> Param<T> {
        let grad = Array2::zeros(value.raw_dim());
        Param {
            name: name.to_owned(),
            value,
            grad,
            decay,
        }
    }

    /// Xavier-uniform init seeded by the parameter name, so a given
    /// architecture and seed always produce the same weights regardless of
    /// construction order.
    pub fn xavier(name: &str, rows: usize, cols: usize, seed: u64, decay: bool) -> Param<T> {
        let mut rng = stream_rng(seed, &[b"init", name.as_bytes()]);
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let value =
            Array2::from_shape_fn((rows, cols), |_| T::from_f64(rng.gen_range(-bound..bound)));
        Param::new(name, value, decay)
    }

    pub fn zeros(name: &str, rows: usize, cols: usize, decay: bool) -> Param<T> {
        Param::new(name, Array2::zeros((rows, cols)), decay)
    }

    pub fn ones(name: &str, rows: usize, cols: usize, decay: bool) -> Param<T> {
        Param::new(name, Array2::ones((rows, cols)), decay)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Affine map `y = x W + b` with `W: (in, out)`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub w: Param<T>,
    pub b: Param<T>,
}

pub struct LinearCache<T> {
    x: Array2<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(prefix: &str, in_dim: usize, out_dim: usize, seed: u64) -> Linear<T> {
        Linear {
            w: Param::xavier(&format!("{prefix}.w"), in_dim, out_dim, seed, true),
            b: Param::zeros(&format!("{prefix}.b"), 1, out_dim, false),
        }
    }

    pub fn forward(&self, x: &Array2<T>) -> (Array2<T>, LinearCache<T>) {
        let y = x.dot(&self.w.value) + &self.b.value;
        (y, LinearCache { x: x.clone() })
    }

    pub fn backward(&mut self, cache: &LinearCache<T>, dy: &Array2<T>) -> Array2<T> {
        self.w.grad += &cache.x.t().dot(dy);
        self.b.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.w.value.t())
    }

    pub fn visit(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.w);
        f(&mut self.b);
    }
}

/// Per-row layer normalization over the feature axis.
#[derive(Debug, Clone)]
pub struct LayerNorm<T> {
    pub gain: Param<T>,
    pub bias: Param<T>,
    eps: f64,
}

pub struct LayerNormCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(prefix: &str, dim: usize) -> LayerNorm<T> {
        LayerNorm {
            gain: Param::ones(&format!("{prefix}.g"), 1, dim, false),
            bias: Param::zeros(&format!("{prefix}.b"), 1, dim, false),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Array2<T>) -> (Array2<T>, LayerNormCache<T>) {
        let n = T::from_f64(x.ncols() as f64);
        let mean = x.sum_axis(Axis(1)) / n;
        let mut xhat = x.clone();
        for (mut row, &mu) in xhat.rows_mut().into_iter().zip(mean.iter()) {
            row.mapv_inplace(|v| v - mu);
        }
        let var = xhat.mapv(|v| v * v).sum_axis(Axis(1)) / n;
        let inv_std = var.mapv(|v| T::one() / (v + T::from_f64(self.eps)).sqrt());
        for (mut row, &s) in xhat.rows_mut().into_iter().zip(inv_std.iter()) {
            row.mapv_inplace(|v| v * s);
        }
        let y = &xhat * &self.gain.value + &self.bias.value;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache<T>, dy: &Array2<T>) -> Array2<T> {
        let n = T::from_f64(dy.ncols() as f64);
        self.gain.grad += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.bias.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        // dxhat = dy * gain; dx = inv_std * (dxhat - mean(dxhat)
        //         - xhat * mean(dxhat * xhat)), means over the feature axis.
        let dxhat = dy * &self.gain.value;
        let m1 = dxhat.sum_axis(Axis(1)) / n;
        let m2 = (&dxhat * &cache.xhat).sum_axis(Axis(1)) / n;
        let mut dx = dxhat;
        for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
            let (a, b, s) = (m1[i], m2[i], cache.inv_std[i]);
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - a - cache.xhat[[i, j]] * b) * s;
            }
        }
        dx
    }

    pub fn visit(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gain);
        f(&mut self.bias);
    }
}

/// Lookup table `(vocab, dim)`; rows are gathered by id.
#[derive(Debug, Clone)]
pub struct Embedding<T> {
    pub table: Param<T>,
}

pub struct EmbeddingCache {
    ids: Vec<usize>,
}

impl<T: Real> Embedding<T> {
    pub fn new(prefix: &str, n: usize, dim: usize, seed: u64) -> Embedding<T> {
        // Smaller init than Xavier: with tied output projections the
        // embedding scale sets the initial logit spread.
        let name = format!("{prefix}.table");
        let mut rng = stream_rng(seed, &[b"init", name.as_bytes()]);
        let value = Array2::from_shape_fn((n, dim), |_| T::from_f64(rng.gen_range(-0.05..0.05)));
        Embedding {
            table: Param::new(&name, value, true),
        }
    }

    pub fn forward(&self, ids: &[usize]) -> (Array2<T>, EmbeddingCache) {
        let dim = self.table.value.ncols();
        let mut y = Array2::zeros((ids.len(), dim));
        for (row, &id) in ids.iter().enumerate() {
            y.row_mut(row).assign(&self.table.value.row(id));
        }
        (y, EmbeddingCache { ids: ids.to_vec() })
    }

    pub fn backward(&mut self, cache: &EmbeddingCache, dy: &Array2<T>) {
        for (row, &id) in cache.ids.iter().enumerate() {
            let mut g = self.table.grad.row_mut(id);
            g += &dy.row(row);
        }
    }

    pub fn visit(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.table);
    }
}

/// GELU with the tanh approximation — smooth, so finite-difference gradient
/// checks stay clean.
pub fn gelu_forward<T: Real>(x: &Array2<T>) -> (Array2<T>, Array2<T>) {
    let y = x.mapv(|v| {
        let vf = v.to_f64();
        let u = 0.7978845608028654 * (vf + 0.044715 * vf * vf * vf);
        T::from_f64(0.5 * vf * (1.0 + u.tanh()))
    });
    (y, x.clone())
}

pub fn gelu_backward<T: Real>(x: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.iter_mut().zip(x.iter()) {
        let vf = v.to_f64();
        let c = 0.7978845608028654;
        let u = c * (vf + 0.044715 * vf * vf * vf);
        let t = u.tanh();
        let du = c * (1.0 + 3.0 * 0.044715 * vf * vf);
        let grad = 0.5 * (1.0 + t) + 0.5 * vf * (1.0 - t * t) * du;
        *d = *d * T::from_f64(grad);
    }
    dx
}

pub fn relu_forward<T: Real>(x: &Array2<T>) -> (Array2<T>, Array2<T>) {
    let y = x.mapv(|v| if v > T::zero() { v } else { T::zero() });
    (y, x.clone())
}

pub fn relu_backward<T: Real>(x: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.iter_mut().zip(x.iter()) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

/// Row-wise stable softmax. Rows whose entries are all `-inf` come back as
/// all zeros instead of NaN — the all-keys-masked attention case.
pub fn softmax_rows<T: Real>(z: &Array2<T>) -> Array2<T> {
    let mut s = z.clone();
    for mut row in s.rows_mut() {
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        if max == T::neg_infinity() {
            row.fill(T::zero());
            continue;
        }
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    s
}

/// Gradient through a row-wise softmax with output `s`.
pub fn softmax_rows_backward<T: Real>(s: &Array2<T>, dy: &Array2<T>) -> Array2<T> {
    let mut dz = dy.clone();
    for (mut dz_row, (s_row, dy_row)) in dz
        .rows_mut()
        .into_iter()
        .zip(s.rows().into_iter().zip(dy.rows()))
    {
        let dot: T = s_row
            .iter()
            .zip(dy_row.iter())
            .map(|(&a, &b)| a * b)
            .sum();
        for (d, &sv) in dz_row.iter_mut().zip(s_row.iter()) {
            *d = sv * (*d - dot);
        }
    }
    dz
}
