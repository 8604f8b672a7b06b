//! Pseudo correction dataset: synthetic corpora, acoustic feature synthesis,
//! pair building with the WER/confidence filters, and persistence.

mod io;
mod synth;

pub use io::{
    load_features, load_pairs, read_transcript_lines, save_features, save_pairs,
    write_transcript_lines, TranscriptLine,
};
pub use synth::{domain_vocabulary, synth_corpus, synth_features, DomainSpec, FeatureConfig};

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelError, ChannelSpec};
use crate::textops;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("corpus size must be at least 1")]
    InvalidCount,
    #[error("utterance {0} has no reference text")]
    MissingReference(String),
    #[error("superior channel does not beat inferior '{inferior}' on the probe set: {superior_wer:.4} vs {inferior_wer:.4}")]
    OrderingViolation {
        inferior: String,
        superior_wer: f64,
        inferior_wer: f64,
    },
    #[error("{path}:{line}: {message}")]
    FormatError {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Corpus split membership. Assigned per dialogue so context never leaks
/// across splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// One audio-less corpus item.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub reference: Option<String>,
    /// Preceding utterances of the same dialogue, most recent last.
    pub context: Vec<String>,
    pub split: Split,
    pub dialogue: usize,
}

/// Acoustic frame step; every feature row covers this much simulated audio.
pub const FRAME_STEP_MS: u32 = 20;

/// A `T x W` matrix of acoustic feature frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Array2<f32>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.frames.ncols()
    }
}

/// Features for a corpus, keyed by utterance id.
pub type FeatureStore = BTreeMap<String, FeatureSequence>;

/// One training sample: sub-optimal hypothesis in, pseudo-optimal target out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionPair {
    pub utt_id: String,
    pub input_hyp: String,
    pub context: String,
    pub target: String,
    pub pair_wer: f64,
    pub target_confidence: f64,
    /// Key into the features file.
    pub features_ref: String,
}

/// Acceptance predicate for pseudo pairs.
///
/// `max_pair_wer` is inclusive: a pair at exactly the boundary is kept, only
/// strictly higher WERs are removed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairFilters {
    pub max_pair_wer: f64,
    pub min_confidence: f64,
}

impl Default for PairFilters {
    fn default() -> Self {
        PairFilters {
            max_pair_wer: 0.5,
            min_confidence: -1.0,
        }
    }
}

impl PairFilters {
    pub fn accepts(&self, pair_wer: f64, target_confidence: f64) -> bool {
        pair_wer <= self.max_pair_wer && target_confidence >= self.min_confidence
    }
}

/// Synthetic corpus plus its generator config.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub domain: DomainSpec,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Utterance> {
        self.utterances.iter().filter(move |u| u.split == split)
    }

    pub fn by_id(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }

    /// Word frequencies over all reference texts.
    pub fn word_frequencies(&self) -> BTreeMap<String, usize> {
        let mut freq = BTreeMap::new();
        for utt in &self.utterances {
            if let Some(text) = &utt.reference {
                for w in textops::normalize(text).split_whitespace() {
                    *freq.entry(w.to_owned()).or_insert(0) += 1;
                }
            }
        }
        freq
    }
}

/// Pseudo pairs for the train and valid splits. Test-split utterances are
/// never paired; they are evaluated from transcript files against ground
/// truth.
#[derive(Debug, Clone, Default)]
pub struct PairSet {
    pub train: Vec<CorrectionPair>,
    pub valid: Vec<CorrectionPair>,
}

impl PairSet {
    /// Corpus WER of pair inputs against pair targets over the train split.
    pub fn dataset_wer(&self) -> Option<f64> {
        let triples = self
            .train
            .iter()
            .map(|p| (p.utt_id.as_str(), p.input_hyp.as_str(), p.target.as_str()));
        textops::corpus_wer(triples).ok().map(|r| r.corpus_wer)
    }

    /// Re-checks the filter predicate over every pair; returns violations.
    pub fn filter_violations(&self, filters: &PairFilters) -> Vec<&CorrectionPair> {
        self.train
            .iter()
            .chain(self.valid.iter())
            .filter(|p| !filters.accepts(p.pair_wer, p.target_confidence))
            .collect()
    }
}

/// Builds the pseudo correction dataset from calibrated channels.
///
/// Each inferior channel contributes one pair per train/valid utterance, so
/// several degraded variants multiply the sample count. The dialogue context
/// of a pair is the superior channel's transcription of the preceding
/// utterances, since only ASR context exists at inference time.
pub fn build_pairs(
    corpus: &Corpus,
    inferiors: &[ChannelSpec],
    superior: &ChannelSpec,
    filters: &PairFilters,
) -> Result<PairSet, DatasetError> {
    // Ordering probe on the held-out valid split, against ground truth.
    let probe: Vec<&Utterance> = corpus.split(Split::Valid).collect();
    let superior_wer = measure_channel_wer(superior, &probe)?;
    for inferior in inferiors {
        let inferior_wer = measure_channel_wer(inferior, &probe)?;
        if inferior_wer <= superior_wer {
            return Err(DatasetError::OrderingViolation {
                inferior: inferior.name.clone(),
                superior_wer,
                inferior_wer,
            });
        }
    }

    // Superior transcripts for every utterance; also the context source.
    let mut superior_out = BTreeMap::new();
    for utt in &corpus.utterances {
        superior_out.insert(utt.id.clone(), superior.transcribe(utt)?);
    }

    let mut pairs = PairSet::default();
    for utt in &corpus.utterances {
        let bucket = match utt.split {
            Split::Train => &mut pairs.train,
            Split::Valid => &mut pairs.valid,
            Split::Test => continue,
        };
        let sup = &superior_out[&utt.id];
        if textops::normalize(&sup.hypothesis).is_empty() {
            continue; // unusable pseudo target
        }
        let confidence = textops::sequence_confidence(&sup.token_logprobs)
            .expect("non-empty hypothesis has logprobs");
        let context = transcribed_context(corpus, utt, &superior_out);
        for inferior in inferiors {
            let hyp = inferior.transcribe(utt)?.hypothesis;
            let pair_wer = match textops::wer(&hyp, &sup.hypothesis) {
                Ok(report) => report.corpus_wer,
                Err(_) => continue,
            };
            if !filters.accepts(pair_wer, confidence) {
                continue;
            }
            bucket.push(CorrectionPair {
                utt_id: utt.id.clone(),
                input_hyp: hyp,
                context: context.clone(),
                target: sup.hypothesis.clone(),
                pair_wer,
                target_confidence: confidence,
                features_ref: utt.id.clone(),
            });
        }
    }
    pairs.train.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
    pairs.valid.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
    Ok(pairs)
}

/// Context string for `utt`: the superior transcripts of its dialogue
/// predecessors within the configured window, oldest first.
pub fn transcribed_context(
    corpus: &Corpus,
    utt: &Utterance,
    superior_out: &BTreeMap<String, crate::channel::TranscriptionResult>,
) -> String {
    let window = corpus.domain.context_window;
    let mut ids: Vec<&str> = corpus
        .utterances
        .iter()
        .filter(|u| u.dialogue == utt.dialogue && u.id < utt.id)
        .map(|u| u.id.as_str())
        .collect();
    ids.sort_unstable();
    let skip = ids.len().saturating_sub(window);
    ids.iter()
        .skip(skip)
        .filter_map(|id| superior_out.get(*id))
        .map(|t| t.hypothesis.clone())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Corpus WER of a channel against the utterances' reference texts.
pub fn measure_channel_wer(
    spec: &ChannelSpec,
    utterances: &[&Utterance],
) -> Result<f64, DatasetError> {
    let mut hyps = Vec::with_capacity(utterances.len());
    for utt in utterances {
        hyps.push((utt.id.clone(), spec.transcribe(utt)?.hypothesis));
    }
    let triples = utterances
        .iter()
        .zip(&hyps)
        .filter_map(|(u, (id, hyp))| {
            u.reference
                .as_deref()
                .map(|r| (id.as_str(), hyp.as_str(), r))
        });
    Ok(textops::corpus_wer(triples)
        .map_err(|e| DatasetError::FormatError {
            path: "<in-memory>".into(),
            line: 0,
            message: e.to_string(),
        })?
        .corpus_wer)
}
