//! Multi-head scaled dot-product attention for single sequences.

use ndarray::{s, Array2};

use super::layers::{softmax_rows, softmax_rows_backward, Linear, LinearCache, Param};
use super::scalar::Real;

#[derive(Debug, Clone)]
pub struct MultiHeadAttention<T> {
    pub wq: Linear<T>,
    pub wk: Linear<T>,
    pub wv: Linear<T>,
    pub wo: Linear<T>,
    n_heads: usize,
}

pub struct AttnCache<T> {
    lq: LinearCache<T>,
    lk: LinearCache<T>,
    lv: LinearCache<T>,
    lo: LinearCache<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    /// Post-softmax weights, one `(Tq, Tk)` matrix per head.
    attn: Vec<Array2<T>>,
}

impl<T: Real> MultiHeadAttention<T> {
    pub fn new(prefix: &str, dim: usize, n_heads: usize, seed: u64) -> MultiHeadAttention<T> {
        assert!(dim % n_heads == 0, "dim {dim} not divisible by {n_heads} heads");
        MultiHeadAttention {
            wq: Linear::new(&format!("{prefix}.q"), dim, dim, seed),
            wk: Linear::new(&format!("{prefix}.k"), dim, dim, seed),
            wv: Linear::new(&format!("{prefix}.v"), dim, dim, seed),
            wo: Linear::new(&format!("{prefix}.o"), dim, dim, seed),
            n_heads,
        }
    }

    /// Attends `x_q` over `x_kv`. `causal` restricts query `i` to keys
    /// `<= i`; `key_mask[j] == false` hides key `j` entirely. Query rows left
    /// with no visible key produce zero output rows (so a residual wrapper
    /// passes its input through unchanged).
    pub fn forward(
        &self,
        x_q: &Array2<T>,
        x_kv: &Array2<T>,
        causal: bool,
        key_mask: Option<&[bool]>,
    ) -> (Array2<T>, AttnCache<T>) {
        let dim = self.wq.w.value.ncols();
        let dh = dim / self.n_heads;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let (q, lq) = self.wq.forward(x_q);
        let (k, lk) = self.wk.forward(x_kv);
        let (v, lv) = self.wv.forward(x_kv);
        let (tq, tk) = (q.nrows(), k.nrows());

        let mut concat = Array2::zeros((tq, dim));
        let mut attn = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = q.slice(s![.., cols.clone()]);
            let kh = k.slice(s![.., cols.clone()]);
            let vh = v.slice(s![.., cols.clone()]);
            let mut scores = qh.dot(&kh.t()) * scale;
            for i in 0..tq {
                for j in 0..tk {
                    let hidden = (causal && j > i)
                        || key_mask.map_or(false, |m| !m[j]);
                    if hidden {
                        scores[[i, j]] = T::neg_infinity();
                    }
                }
            }
            let a = softmax_rows(&scores);
            let ctx = a.dot(&vh);
            concat.slice_mut(s![.., cols]).assign(&ctx);
            attn.push(a);
        }
        let (out, lo) = self.wo.forward(&concat);
        (
            out,
            AttnCache {
                lq,
                lk,
                lv,
                lo,
                q,
                k,
                v,
                attn,
            },
        )
    }

    /// Returns `(d_x_q, d_x_kv)`. For self-attention the caller adds them.
    pub fn backward(&mut self, cache: &AttnCache<T>, dy: &Array2<T>) -> (Array2<T>, Array2<T>) {
        let dim = self.wq.w.value.ncols();
        let dh = dim / self.n_heads;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let d_concat = self.wo.backward(&cache.lo, dy);

        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for h in 0..self.n_heads {
            let cols = h * dh..(h + 1) * dh;
            let a = &cache.attn[h];
            let d_ctx = d_concat.slice(s![.., cols.clone()]);
            let vh = cache.v.slice(s![.., cols.clone()]);
            let da = d_ctx.dot(&vh.t());
            dv.slice_mut(s![.., cols.clone()])
                .assign(&a.t().dot(&d_ctx));
            // Masked entries have a == 0, so they contribute no gradient.
            let dscores = softmax_rows_backward(a, &da);
            let qh = cache.q.slice(s![.., cols.clone()]);
            let kh = cache.k.slice(s![.., cols.clone()]);
            dq.slice_mut(s![.., cols.clone()])
                .assign(&(dscores.dot(&kh) * scale));
            dk.slice_mut(s![.., cols])
                .assign(&(dscores.t().dot(&qh) * scale));
        }
        let d_xq = self.wq.backward(&cache.lq, &dq);
        let d_xkv = self.wk.backward(&cache.lk, &dk) + self.wv.backward(&cache.lv, &dv);
        (d_xq, d_xkv)
    }

    pub fn visit(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.wq.visit(f);
        self.wk.visit(f);
        self.wv.visit(f);
        self.wo.visit(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_input(rows: usize, dim: usize, phase: f64) -> Array2<f64> {
        Array2::from_shape_fn((rows, dim), |(i, j)| ((i * dim + j) as f64 * 0.7 + phase).sin())
    }

    #[test]
    fn output_shape_matches_query_length() {
        let attn = MultiHeadAttention::<f64>::new("a", 8, 2, 1);
        let xq = sample_input(5, 8, 0.0);
        let xkv = sample_input(9, 8, 1.0);
        let (y, cache) = attn.forward(&xq, &xkv, false, None);
        assert_eq!(y.dim(), (5, 8));
        assert_eq!(cache.attn.len(), 2);
        assert_eq!(cache.attn[0].dim(), (5, 9));
    }

    #[test]
    fn attention_rows_sum_to_one_over_visible_keys() {
        let attn = MultiHeadAttention::<f64>::new("a", 8, 2, 2);
        let x = sample_input(6, 8, 0.3);
        let mask = vec![true, true, false, true, false, true];
        let (_, cache) = attn.forward(&x, &x, true, Some(&mask));
        for a in &cache.attn {
            for (i, row) in a.rows().into_iter().enumerate() {
                assert!((row.sum() - 1.0).abs() < 1e-6, "row {i} sums {}", row.sum());
                for (j, &w) in row.iter().enumerate() {
                    if j > i || !mask[j] {
                        assert_eq!(w, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn all_keys_masked_yields_zero_rows() {
        let attn = MultiHeadAttention::<f64>::new("a", 8, 2, 3);
        let x = sample_input(4, 8, 0.1);
        let mask = vec![false; 4];
        let (y, _) = attn.forward(&x, &x, false, Some(&mask));
        // Only the output bias survives.
        for row in y.rows() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, attn.wo.b.value[[0, j]]);
            }
        }
    }

    #[test]
    fn causal_first_row_ignores_the_future() {
        let attn = MultiHeadAttention::<f64>::new("a", 8, 2, 4);
        let xa = sample_input(5, 8, 0.0);
        let mut xb = xa.clone();
        for j in 0..8 {
            xb[[4, j]] += 3.0; // change the last position only
        }
        let (ya, _) = attn.forward(&xa, &xa, true, None);
        let (yb, _) = attn.forward(&xb, &xb, true, None);
        for i in 0..4 {
            for j in 0..8 {
                assert!((ya[[i, j]] - yb[[i, j]]).abs() < 1e-12);
            }
        }
        assert!((ya.row(4).to_owned() - yb.row(4)).iter().any(|v| v.abs() > 1e-6));
    }

    #[test]
    fn masked_keys_receive_no_gradient() {
        let mut attn = MultiHeadAttention::<f64>::new("a", 8, 2, 5);
        let xq = sample_input(3, 8, 0.0);
        let xkv = sample_input(4, 8, 1.0);
        let mask = vec![true, false, true, false];
        let (y, cache) = attn.forward(&xq, &xkv, false, Some(&mask));
        let (_, d_xkv) = attn.backward(&cache, &Array2::ones(y.raw_dim()));
        for (j, &visible) in mask.iter().enumerate() {
            let g = d_xkv.row(j).iter().map(|v| v.abs()).sum::<f64>();
            if visible {
                assert!(g > 1e-9, "visible key {j} got no gradient");
            } else {
                assert_eq!(g, 0.0, "masked key {j} leaked gradient");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let attn = MultiHeadAttention::<f64>::new("a", 6, 2, 6);
        let xq = sample_input(3, 6, 0.2);
        let xkv = sample_input(4, 6, 0.9);
        let w = Array2::from_shape_fn((3, 6), |(i, j)| ((i + 2 * j) as f64).cos());
        let (_, cache) = attn.forward(&xq, &xkv, false, None);
        let (d_xq, d_xkv) = attn.clone().backward(&cache, &w);
        let eps = 1e-6;
        let loss = |xq: &Array2<f64>, xkv: &Array2<f64>| (attn.forward(xq, xkv, false, None).0 * &w).sum();
        for i in 0..3 {
            for j in 0..6 {
                let mut p = xq.clone();
                p[[i, j]] += eps;
                let mut m = xq.clone();
                m[[i, j]] -= eps;
                let num = (loss(&p, &xkv) - loss(&m, &xkv)) / (2.0 * eps);
                let ana = d_xq[[i, j]];
                assert!(
                    (num - ana).abs() / (num.abs() + ana.abs()).max(1e-8) < 1e-5,
                    "dq ({i},{j}): {num} vs {ana}"
                );
            }
        }
        for i in 0..4 {
            for j in 0..6 {
                let mut p = xkv.clone();
                p[[i, j]] += eps;
                let mut m = xkv.clone();
                m[[i, j]] -= eps;
                let num = (loss(&xq, &p) - loss(&xq, &m)) / (2.0 * eps);
                let ana = d_xkv[[i, j]];
                assert!(
                    (num - ana).abs() / (num.abs() + ana.abs()).max(1e-8) < 1e-5,
                    "dkv ({i},{j}): {num} vs {ana}"
                );
            }
        }
    }
}
