//! Text measurement substrate: normalization, tokenization, word-level edit
//! alignment, WER, and confidence scoring.
//!
//! Word-level alignment operates on whitespace tokens of normalized text and
//! backs every WER figure in the project. The correction model uses its own
//! vocabulary (see `model::vocab`), which is a separate concern.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TextError {
    #[error("reference normalizes to empty")]
    EmptyReference,
    #[error("empty token sequence")]
    EmptySequence,
}

/// Lowercase, strip punctuation, collapse whitespace.
///
/// The stripped set is "every char that is neither alphanumeric nor an
/// apostrophe"; stripped chars act as word separators. Idempotent.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars() {
        if c.is_alphanumeric() || c == '\'' {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            for lc in c.to_lowercase() {
                out.push(lc);
            }
        } else {
            pending_space = true;
        }
    }
    out
}

/// Tokenization granularity for [`TokenSequence`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenLevel {
    Word,
    /// One token per character of the normalized string, spaces included.
    Character,
}

/// A tokenized string together with the level it was tokenized at.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub text: String,
    pub level: TokenLevel,
}

impl TokenSequence {
    pub fn words(text: &str) -> Self {
        let norm = normalize(text);
        TokenSequence {
            tokens: norm.split_whitespace().map(str::to_owned).collect(),
            text: norm,
            level: TokenLevel::Word,
        }
    }

    pub fn characters(text: &str) -> Self {
        let norm = normalize(text);
        TokenSequence {
            tokens: norm.chars().map(String::from).collect(),
            text: norm,
            level: TokenLevel::Character,
        }
    }

    /// Inverse of tokenization on normalized text.
    pub fn detokenize(&self) -> String {
        match self.level {
            TokenLevel::Word => self.tokens.join(" "),
            TokenLevel::Character => self.tokens.concat(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// One step of a word-level edit script.
///
/// `hyp_index`/`ref_index` are `None` on the side the op does not consume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlignOp {
    Match { hyp_index: usize, ref_index: usize },
    Sub { hyp_index: usize, ref_index: usize },
    /// Reference word absent from the hypothesis.
    Del { ref_index: usize },
    /// Extra hypothesis word with no reference counterpart.
    Ins { hyp_index: usize },
}

/// Edit counts of an alignment: `n_sub + n_del + n_match == ref_len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditCounts {
    pub n_match: usize,
    pub n_sub: usize,
    pub n_ins: usize,
    pub n_del: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.n_sub + self.n_ins + self.n_del
    }
}

/// Minimal-cost word-level edit script between a hypothesis and a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub ops: Vec<AlignOp>,
    pub counts: EditCounts,
    pub ref_len: usize,
}

/// Minimal-cost alignment under unit costs with deterministic tie-breaking
/// (MATCH > SUB > DEL > INS at equal total cost).
pub fn align(hyp: &TokenSequence, reference: &TokenSequence) -> Alignment {
    align_tokens(&hyp.tokens, &reference.tokens)
}

fn align_tokens<T: PartialEq>(hyp: &[T], reference: &[T]) -> Alignment {
    let n = hyp.len();
    let m = reference.len();
    // dp[i][j] = min edits aligning hyp[i..] to reference[j..]
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for j in 0..=m {
        dp[n][j] = m - j;
    }
    for (i, row) in dp.iter_mut().enumerate().take(n) {
        row[m] = n - i;
    }
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            let sub_or_match = dp[i + 1][j + 1] + usize::from(hyp[i] != reference[j]);
            let del = dp[i][j + 1] + 1;
            let ins = dp[i + 1][j] + 1;
            dp[i][j] = sub_or_match.min(del).min(ins);
        }
    }

    let mut ops = Vec::with_capacity(n.max(m));
    let mut counts = EditCounts::default();
    let (mut i, mut j) = (0usize, 0usize);
    while i < n || j < m {
        let cost = dp[i][j];
        if i < n && j < m && hyp[i] == reference[j] && cost == dp[i + 1][j + 1] {
            ops.push(AlignOp::Match {
                hyp_index: i,
                ref_index: j,
            });
            counts.n_match += 1;
            i += 1;
            j += 1;
        } else if i < n && j < m && cost == dp[i + 1][j + 1] + 1 {
            ops.push(AlignOp::Sub {
                hyp_index: i,
                ref_index: j,
            });
            counts.n_sub += 1;
            i += 1;
            j += 1;
        } else if j < m && cost == dp[i][j + 1] + 1 {
            ops.push(AlignOp::Del { ref_index: j });
            counts.n_del += 1;
            j += 1;
        } else {
            ops.push(AlignOp::Ins { hyp_index: i });
            counts.n_ins += 1;
            i += 1;
        }
    }
    debug_assert_eq!(counts.n_sub + counts.n_del + counts.n_match, m);

    Alignment {
        ops,
        counts,
        ref_len: m,
    }
}

/// Word-level edit distance between two raw strings (normalized internally).
pub fn edit_distance(a: &str, b: &str) -> usize {
    align(&TokenSequence::words(a), &TokenSequence::words(b))
        .counts
        .errors()
}

/// WER of a single utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceWer {
    pub utt_id: String,
    pub wer: f64,
    pub counts: EditCounts,
    pub ref_len: usize,
}

/// Per-utterance WERs plus the corpus aggregate.
///
/// The corpus WER is total errors over total reference words, not the mean of
/// per-utterance WERs. Computed on normalized text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WerReport {
    pub corpus_wer: f64,
    pub total_errors: usize,
    pub total_ref_words: usize,
    pub counts: EditCounts,
    pub utterances: Vec<UtteranceWer>,
    /// Scoring is always on normalized text; recorded so reports say so.
    pub normalized: bool,
}

/// WER of one hypothesis/reference pair: `(n_sub + n_ins + n_del) / ref_len`.
///
/// May exceed 1.0. Errors if the reference normalizes to empty.
pub fn wer(hyp: &str, reference: &str) -> Result<WerReport, TextError> {
    corpus_wer(std::iter::once(("", hyp, reference)))
}

/// Corpus WER over `(utt_id, hyp, reference)` triples.
pub fn corpus_wer<'a>(
    triples: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>,
) -> Result<WerReport, TextError> {
    let mut utterances = Vec::new();
    let mut counts = EditCounts::default();
    let mut total_ref_words = 0usize;
    for (utt_id, hyp, reference) in triples {
        let ref_tokens = TokenSequence::words(reference);
        if ref_tokens.is_empty() {
            return Err(TextError::EmptyReference);
        }
        let alignment = align(&TokenSequence::words(hyp), &ref_tokens);
        let c = alignment.counts;
        utterances.push(UtteranceWer {
            utt_id: utt_id.to_owned(),
            wer: c.errors() as f64 / alignment.ref_len as f64,
            counts: c,
            ref_len: alignment.ref_len,
        });
        counts.n_match += c.n_match;
        counts.n_sub += c.n_sub;
        counts.n_ins += c.n_ins;
        counts.n_del += c.n_del;
        total_ref_words += alignment.ref_len;
    }
    if total_ref_words == 0 {
        return Err(TextError::EmptyReference);
    }
    Ok(WerReport {
        corpus_wer: counts.errors() as f64 / total_ref_words as f64,
        total_errors: counts.errors(),
        total_ref_words,
        counts,
        utterances,
        normalized: true,
    })
}

/// Mean per-token log probability. Monotone in every element.
pub fn sequence_confidence(token_logprobs: &[f64]) -> Result<f64, TextError> {
    if token_logprobs.is_empty() {
        return Err(TextError::EmptySequence);
    }
    Ok(token_logprobs.iter().sum::<f64>() / token_logprobs.len() as f64)
}
