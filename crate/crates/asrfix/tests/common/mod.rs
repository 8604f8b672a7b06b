//! Shared helpers for the integration suites: independent oracles and small
//! fixtures, written without reference to the library's own algorithms so
//! they can catch bugs in them.

use asrfix::model::CorrectionModel;
use asrfix::rngstream::stream_rng;
use rand::Rng;

/// Minimal word-level edit cost by plain recursion — no dynamic programming,
/// no shared code with the alignment under test. Exponential, so only for
/// short sequences.
pub fn brute_force_edit_cost<T: PartialEq>(hyp: &[T], reference: &[T]) -> usize {
    match (hyp.split_first(), reference.split_first()) {
        (None, None) => 0,
        (None, Some(_)) => reference.len(),
        (Some(_), None) => hyp.len(),
        (Some((h, hrest)), Some((r, rrest))) => {
            let diag = brute_force_edit_cost(hrest, rrest) + usize::from(h != r);
            let ins = brute_force_edit_cost(hrest, reference) + 1;
            let del = brute_force_edit_cost(hyp, rrest) + 1;
            diag.min(ins).min(del)
        }
    }
}

/// Moves every parameter a small random distance away from its
/// initialization. Fresh models sit on a degenerate point — conv biases are
/// exactly zero, so rectifier pre-activations over padded regions are exactly
/// zero and the loss is not differentiable right there. Derivative checks
/// must run at a generic point.
pub fn jitter_params(model: &mut CorrectionModel<f64>, seed: u64) {
    let mut rng = stream_rng(seed, &[b"jitter"]);
    model.visit_params(&mut |p| {
        for v in p.value.iter_mut() {
            *v += rng.gen_range(-0.03..0.03);
        }
    });
}
