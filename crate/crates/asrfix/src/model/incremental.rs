//! Cached decoding. The full teacher-forced pass recomputes every prefix
//! row and re-projects both memories at every step, which is wasted work
//! during search: memory key/value projections never change within an
//! utterance, and causal self-attention only ever appends one row. This
//! scorer projects each memory once per layer up front and memoizes the
//! per-position self-attention rows across prefixes, so scoring a one-token
//! extension costs a single decoder row.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use ndarray::{s, Array2};

use super::beam::StepScorer;
use super::layers::{gelu_forward, softmax_rows, Linear};
use super::scalar::Real;
use super::vocab::BOS_ID;
use super::{AcousticEncoding, CorrectionModel, TextEncoding};

/// One memory's key/value projections for a single decoder layer.
struct MemKv<T> {
    k: Array2<T>,
    v: Array2<T>,
    mask: Vec<bool>,
}

/// What one decoded position contributes to later steps: its projected
/// self-attention key/value row per layer, and the next-token distribution
/// computed when the position was first processed.
struct Node<T> {
    parent: Option<Rc<Node<T>>>,
    /// `(k_row, v_row)` per decoder layer, each `1 × d_model`.
    rows: Vec<(Array2<T>, Array2<T>)>,
    logprobs: Vec<f64>,
}

/// Step scorer over fixed encoded memories with incremental state reuse.
/// Produces the same distributions as re-running the teacher-forced decoder
/// on every prefix, up to floating-point round-off.
pub struct CachedDecoder<'a, T> {
    model: &'a CorrectionModel<T>,
    /// Per decoder layer; empty when the corresponding memory is absent.
    text: Vec<MemKv<T>>,
    ac: Vec<MemKv<T>>,
    nodes: RefCell<HashMap<Vec<u32>, Rc<Node<T>>>>,
}

impl<'a, T: Real> CachedDecoder<'a, T> {
    pub fn new(
        model: &'a CorrectionModel<T>,
        text: Option<&TextEncoding<T>>,
        ac: Option<&AcousticEncoding<T>>,
    ) -> CachedDecoder<'a, T> {
        let project = |h: &Array2<T>, mask: &[bool], pick: &dyn Fn(&super::DecoderLayer<T>) -> (&Linear<T>, &Linear<T>)| {
            model
                .dec_layers
                .iter()
                .map(|layer| {
                    let (wk, wv) = pick(layer);
                    MemKv {
                        k: wk.forward(h).0,
                        v: wv.forward(h).0,
                        mask: mask.to_vec(),
                    }
                })
                .collect()
        };
        CachedDecoder {
            model,
            text: text.map_or_else(Vec::new, |t| {
                project(&t.h, &t.mask, &|l| (&l.text_cross.wk, &l.text_cross.wv))
            }),
            ac: ac.map_or_else(Vec::new, |a| {
                project(&a.h, &a.mask, &|l| (&l.ac_cross.wk, &l.ac_cross.wv))
            }),
            nodes: RefCell::new(HashMap::new()),
        }
    }

    /// Processes one id at position `pos` on top of `parent`, returning the
    /// new node. Mirrors `decode_logits` restricted to its final row.
    fn extend(&self, parent: Option<Rc<Node<T>>>, id: usize, pos: usize) -> Rc<Node<T>> {
        let model = self.model;
        let n_heads = model.config.n_heads;
        let d = model.config.d_model;

        // Ancestor chain, oldest first.
        let mut chain: Vec<Rc<Node<T>>> = Vec::new();
        let mut cur = parent.clone();
        while let Some(n) = cur {
            cur = n.parent.clone();
            chain.push(n);
        }
        chain.reverse();

        let (e, _) = model.dec_embed.forward(&[id]);
        let (p, _) = model.dec_pos.forward(&[pos]);
        let mut x = e + p;
        let mut rows = Vec::with_capacity(model.dec_layers.len());
        for (l, layer) in model.dec_layers.iter().enumerate() {
            let (n_s, _) = layer.ln_self.forward(&x);
            let (q, _) = layer.self_attn.wq.forward(&n_s);
            let (k_new, _) = layer.self_attn.wk.forward(&n_s);
            let (v_new, _) = layer.self_attn.wv.forward(&n_s);
            let t = chain.len() + 1;
            let mut kk = Array2::zeros((t, d));
            let mut vv = Array2::zeros((t, d));
            for (i, anc) in chain.iter().enumerate() {
                kk.row_mut(i).assign(&anc.rows[l].0.row(0));
                vv.row_mut(i).assign(&anc.rows[l].1.row(0));
            }
            kk.row_mut(t - 1).assign(&k_new.row(0));
            vv.row_mut(t - 1).assign(&v_new.row(0));
            // All gathered keys are at or before this position, so the
            // causal restriction is satisfied by construction.
            let a_s = attend_row(&q, &kk, &vv, None, n_heads, &layer.self_attn.wo);
            let h_s = &x + &a_s;

            let a_t = match self.text.get(l) {
                Some(m) => {
                    let (n_t, _) = layer.ln_text.forward(&h_s);
                    let (qc, _) = layer.text_cross.wq.forward(&n_t);
                    let o = attend_row(&qc, &m.k, &m.v, Some(&m.mask), n_heads, &layer.text_cross.wo);
                    &h_s + &o
                }
                None => h_s.clone(),
            };
            let a_a = match self.ac.get(l) {
                Some(m) => {
                    let (n_a, _) = layer.ln_ac.forward(&a_t);
                    let (qc, _) = layer.ac_cross.wq.forward(&n_a);
                    let o = attend_row(&qc, &m.k, &m.v, Some(&m.mask), n_heads, &layer.ac_cross.wo);
                    &a_t + &o
                }
                None => a_t.clone(),
            };

            let (n_f, _) = layer.ln_ff.forward(&a_a);
            let (f1, _) = layer.ff1.forward(&n_f);
            let (g, _) = gelu_forward(&f1);
            let (f2, _) = layer.ff2.forward(&g);
            x = &a_a + &f2;
            rows.push((k_new, v_new));
        }

        let (h, _) = model.dec_ln.forward(&x);
        let logits = match &model.out_proj {
            Some(proj) => proj.forward(&h).0,
            None => h.dot(&model.dec_embed.table.value.t()),
        };
        let last = logits.row(0);
        let max = last.iter().cloned().fold(T::neg_infinity(), T::max);
        let lse = max + last.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let logprobs = last.iter().map(|&v| (v - lse).to_f64()).collect();

        Rc::new(Node {
            parent,
            rows,
            logprobs,
        })
    }

    /// Node whose processed ids are BOS followed by `prefix`, creating any
    /// missing suffix of the chain.
    fn node_for(&self, prefix: &[u32]) -> Rc<Node<T>> {
        let mut start = None;
        for i in (0..=prefix.len()).rev() {
            if let Some(n) = self.nodes.borrow().get(&prefix[..i]) {
                start = Some((i, Rc::clone(n)));
                break;
            }
        }
        let (mut done, mut node) = match start {
            Some((i, n)) => (i, Some(n)),
            None => (0, None),
        };
        if node.is_none() {
            let root = self.extend(None, BOS_ID as usize, 0);
            self.nodes.borrow_mut().insert(Vec::new(), Rc::clone(&root));
            node = Some(root);
        }
        let mut node = node.unwrap();
        while done < prefix.len() {
            node = self.extend(Some(node), prefix[done] as usize, done + 1);
            done += 1;
            self.nodes
                .borrow_mut()
                .insert(prefix[..done].to_vec(), Rc::clone(&node));
        }
        node
    }
}

impl<T: Real> StepScorer for CachedDecoder<'_, T> {
    fn step_logprobs(&self, prefix: &[u32]) -> Vec<f64> {
        self.node_for(prefix).logprobs.clone()
    }
}

/// Single-query multi-head attention over prepared keys/values, matching
/// `MultiHeadAttention::forward` for a one-row query.
fn attend_row<T: Real>(
    q: &Array2<T>,
    k: &Array2<T>,
    v: &Array2<T>,
    key_mask: Option<&[bool]>,
    n_heads: usize,
    wo: &Linear<T>,
) -> Array2<T> {
    let dim = q.ncols();
    let dh = dim / n_heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let tk = k.nrows();
    let mut concat = Array2::zeros((1, dim));
    for h in 0..n_heads {
        let cols = h * dh..(h + 1) * dh;
        let qh = q.slice(s![.., cols.clone()]);
        let kh = k.slice(s![.., cols.clone()]);
        let vh = v.slice(s![.., cols.clone()]);
        let mut scores = qh.dot(&kh.t()) * scale;
        if let Some(m) = key_mask {
            for j in 0..tk {
                if !m[j] {
                    scores[[0, j]] = T::neg_infinity();
                }
            }
        }
        let a = softmax_rows(&scores);
        let ctx = a.dot(&vh);
        concat.slice_mut(s![.., cols]).assign(&ctx);
    }
    wo.forward(&concat).0
}
