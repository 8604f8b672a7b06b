//! Length-normalized beam search over any step scorer.

use super::vocab::EOS_ID;

/// Anything that can score the next token given a target prefix. The prefix
/// excludes the begin-of-sequence marker; implementations add their own.
pub trait StepScorer {
    /// Log-probabilities over the vocabulary for the next position.
    fn step_logprobs(&self, prefix: &[u32]) -> Vec<f64>;
}

#[derive(Debug, Clone)]
pub struct BeamHypothesis {
    pub tokens: Vec<u32>,
    /// Sum of token log-probabilities (non-increasing as tokens append).
    pub score: f64,
    pub finished: bool,
}

impl BeamHypothesis {
    /// Score divided by length (normalization exponent 1), so short and long
    /// finished hypotheses compare fairly.
    pub fn normalized_score(&self) -> f64 {
        self.score / self.tokens.len().max(1) as f64
    }
}

/// Standard beam search; ends each hypothesis at EOS, force-terminating at
/// `max_len`. Ties break deterministically toward lexicographically smaller
/// token sequences. The returned tokens exclude EOS.
pub fn beam_search(scorer: &dyn StepScorer, beam_size: usize, max_len: usize) -> Vec<u32> {
    assert!(beam_size >= 1, "beam size must be at least 1");
    let mut alive = vec![BeamHypothesis {
        tokens: Vec::new(),
        score: 0.0,
        finished: false,
    }];
    let mut done: Vec<BeamHypothesis> = Vec::new();
    for _ in 0..max_len {
        let mut candidates: Vec<BeamHypothesis> = Vec::new();
        for hyp in &alive {
            let logprobs = scorer.step_logprobs(&hyp.tokens);
            for (tok, &lp) in logprobs.iter().enumerate() {
                let mut tokens = hyp.tokens.clone();
                tokens.push(tok as u32);
                candidates.push(BeamHypothesis {
                    tokens,
                    score: hyp.score + lp,
                    finished: tok as u32 == EOS_ID,
                });
            }
        }
        sort_hypotheses(&mut candidates);
        candidates.truncate(beam_size);
        alive = Vec::new();
        for c in candidates {
            if c.finished {
                done.push(c);
            } else {
                alive.push(c);
            }
        }
        if alive.is_empty() {
            break;
        }
    }
    // Anything still alive is force-terminated with EOS at no further cost.
    for mut hyp in alive {
        hyp.tokens.push(EOS_ID);
        hyp.finished = true;
        done.push(hyp);
    }
    sort_hypotheses(&mut done);
    let mut best = done.into_iter().next().expect("at least one hypothesis");
    best.tokens.retain(|&t| t != EOS_ID);
    best.tokens
}

/// Greedy argmax decoding; identical to `beam_search` with beam size 1.
pub fn greedy_decode(scorer: &dyn StepScorer, max_len: usize) -> Vec<u32> {
    beam_search(scorer, 1, max_len)
}

fn sort_hypotheses(hyps: &mut [BeamHypothesis]) {
    hyps.sort_by(|a, b| {
        b.normalized_score()
            .partial_cmp(&a.normalized_score())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
}
