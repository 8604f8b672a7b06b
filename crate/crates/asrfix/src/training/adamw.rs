//! AdamW with decoupled weight decay.
//!
//! Moment estimates live in the model's scalar type and can be exported to /
//! restored from checkpoint blobs, so an interrupted run resumes with
//! bit-identical optimizer state. Parameters outside the caller's trainable
//! set are skipped entirely — no moment update and no decay — which keeps
//! frozen sub-networks bitwise untouched.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::model::scalar::Real;
use crate::model::CorrectionModel;

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Update count; drives bias correction.
    pub t: u64,
    m: BTreeMap<String, Array2<T>>,
    v: BTreeMap<String, Array2<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(lr: f64, weight_decay: f64) -> AdamW<T> {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Applies one update over the accumulated gradients of every parameter
    /// accepted by `trainable`. Decay is decoupled (applied to the value
    /// directly, not through the gradient) and only touches parameters whose
    /// `decay` flag is set — biases and normalization terms are exempt.
    pub fn step(&mut self, model: &mut CorrectionModel<T>, trainable: &dyn Fn(&str) -> bool) {
        self.t += 1;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let bc1 = T::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = T::from_f64(1.0 - self.beta2.powi(self.t as i32));
        let lr = T::from_f64(self.lr);
        let eps = T::from_f64(self.eps);
        let decay_scale = T::from_f64(1.0 - self.lr * self.weight_decay);
        let (mm, vv) = (&mut self.m, &mut self.v);
        model.visit_params(&mut |p| {
            if !trainable(&p.name) {
                return;
            }
            let m = mm
                .entry(p.name.clone())
                .or_insert_with(|| Array2::zeros(p.value.raw_dim()));
            let v = vv
                .entry(p.name.clone())
                .or_insert_with(|| Array2::zeros(p.value.raw_dim()));
            if p.decay {
                p.value.mapv_inplace(|w| w * decay_scale);
            }
            for ((w, &g), (m_e, v_e)) in p
                .value
                .iter_mut()
                .zip(p.grad.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *m_e = b1 * *m_e + (one - b1) * g;
                *v_e = b2 * *v_e + (one - b2) * g * g;
                let m_hat = *m_e / bc1;
                let v_hat = *v_e / bc2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
    }

    /// Moment estimates as named matrices for checkpointing: `m.<param>`
    /// then `v.<param>`, each set in name order.
    pub fn export_blobs(&self) -> Vec<(String, Array2<T>)> {
        let mut out = Vec::with_capacity(self.m.len() + self.v.len());
        for (name, value) in &self.m {
            out.push((format!("m.{name}"), value.clone()));
        }
        for (name, value) in &self.v {
            out.push((format!("v.{name}"), value.clone()));
        }
        out
    }

    /// Restores moments exported by [`export_blobs`]. Unrecognized names are
    /// rejected to catch mixed-up checkpoints.
    pub fn import_blobs(&mut self, blobs: &[(String, Array2<T>)]) -> Result<(), String> {
        self.m.clear();
        self.v.clear();
        for (name, value) in blobs {
            if let Some(rest) = name.strip_prefix("m.") {
                self.m.insert(rest.to_owned(), value.clone());
            } else if let Some(rest) = name.strip_prefix("v.") {
                self.v.insert(rest.to_owned(), value.clone());
            } else {
                return Err(format!("unknown optimizer blob `{name}`"));
            }
        }
        Ok(())
    }
}
