//! Seeded synthetic dialogue corpora and acoustic feature synthesis.
//!
//! Utterance text is drawn from a per-domain bigram chain over a pseudo-word
//! vocabulary. Words are built from consonant-vowel syllables: core words
//! (shared across domains) have two syllables, domain words have three and
//! start with a domain-distinct syllable, so domain overlap and drift are
//! controlled by construction.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Corpus, DatasetError, FeatureSequence, Split, Utterance};
use crate::rngstream::stream_rng;

const CONSONANTS: [char; 16] = [
    'b', 'd', 'f', 'g', 'h', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'w', 'z',
];
const VOWELS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];
const N_SYLLABLES: usize = CONSONANTS.len() * VOWELS.len();

fn syllable(i: usize) -> String {
    let c = CONSONANTS[(i / VOWELS.len()) % CONSONANTS.len()];
    let v = VOWELS[i % VOWELS.len()];
    format!("{c}{v}")
}

/// Everything that determines a synthetic domain's text distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    /// Two-syllable words shared verbatim across all domains.
    pub core_vocab: usize,
    /// Three-syllable words prefixed with this domain's syllable.
    pub domain_vocab: usize,
    /// Fraction of bigram-chain draws that prefer a domain word.
    pub domain_mass: f64,
    pub utts_per_dialogue: usize,
    pub words_min: usize,
    pub words_max: usize,
    /// How many preceding utterances form a sample's dialogue context.
    pub context_window: usize,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    /// Successor-list size of the bigram chain.
    pub bigram_successors: usize,
    /// Probability of following the chain instead of drawing uniformly.
    pub bigram_mass: f64,
}

impl Default for DomainSpec {
    fn default() -> Self {
        DomainSpec {
            name: "general".into(),
            core_vocab: 60,
            domain_vocab: 20,
            domain_mass: 0.3,
            utts_per_dialogue: 5,
            words_min: 4,
            words_max: 9,
            context_window: 3,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            bigram_successors: 4,
            bigram_mass: 0.7,
        }
    }
}

fn core_word(i: usize) -> String {
    format!("{}{}", syllable(i / N_SYLLABLES), syllable(i % N_SYLLABLES))
}

fn domain_word(domain: &str, i: usize) -> String {
    let tag = crate::rngstream::fnv1a(&[domain.as_bytes()]) as usize;
    format!(
        "{}{}{}",
        syllable(tag % N_SYLLABLES),
        syllable(1 + i / N_SYLLABLES),
        syllable(i % N_SYLLABLES)
    )
}

/// The full word list of a domain: core words first, then domain words.
pub fn domain_vocabulary(spec: &DomainSpec) -> Vec<String> {
    let mut vocab: Vec<String> = (0..spec.core_vocab).map(core_word).collect();
    vocab.extend((0..spec.domain_vocab).map(|i| domain_word(&spec.name, i)));
    vocab
}

/// Generates `n_utts` utterances grouped into dialogues, with ground-truth
/// references, per-utterance context windows, and dialogue-level splits.
pub fn synth_corpus(spec: &DomainSpec, n_utts: usize, seed: u64) -> Result<Corpus, DatasetError> {
    if n_utts == 0 {
        return Err(DatasetError::InvalidCount);
    }
    let vocab = domain_vocabulary(spec);
    let n_core = spec.core_vocab;

    // Bigram successor table, fixed per (seed, domain).
    let mut chain_rng = stream_rng(seed, &[b"bigram", spec.name.as_bytes()]);
    let successors: Vec<Vec<usize>> = (0..vocab.len())
        .map(|_| {
            (0..spec.bigram_successors)
                .map(|_| draw_word(&mut chain_rng, spec, n_core, vocab.len()))
                .collect()
        })
        .collect();

    let n_dialogues = n_utts.div_ceil(spec.utts_per_dialogue);
    let n_test = ((n_dialogues as f64) * spec.test_fraction).ceil() as usize;
    let n_valid = ((n_dialogues as f64) * spec.valid_fraction).ceil() as usize;
    let n_train = n_dialogues.saturating_sub(n_test + n_valid);

    let mut utterances = Vec::with_capacity(n_utts);
    let mut made = 0usize;
    for d in 0..n_dialogues {
        let split = if d < n_train {
            Split::Train
        } else if d < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
        let mut history: Vec<String> = Vec::new();
        for u in 0..spec.utts_per_dialogue {
            if made == n_utts {
                break;
            }
            let mut rng = stream_rng(seed, &[b"utt", &(d as u64).to_le_bytes(), &(u as u64).to_le_bytes()]);
            let n_words = rng.gen_range(spec.words_min..=spec.words_max);
            let mut words = Vec::with_capacity(n_words);
            let mut prev = draw_word(&mut rng, spec, n_core, vocab.len());
            words.push(vocab[prev].clone());
            for _ in 1..n_words {
                let next = if rng.gen::<f64>() < spec.bigram_mass {
                    successors[prev][rng.gen_range(0..spec.bigram_successors)]
                } else {
                    draw_word(&mut rng, spec, n_core, vocab.len())
                };
                words.push(vocab[next].clone());
                prev = next;
            }
            let text = words.join(" ");
            let start = history.len().saturating_sub(spec.context_window);
            utterances.push(Utterance {
                id: format!("d{d:04}-u{u:02}"),
                reference: Some(text.clone()),
                context: history[start..].to_vec(),
                split,
                dialogue: d,
            });
            history.push(text);
            made += 1;
        }
    }
    Ok(Corpus {
        domain: spec.clone(),
        utterances,
    })
}

fn draw_word(rng: &mut ChaCha8Rng, spec: &DomainSpec, n_core: usize, n_total: usize) -> usize {
    if spec.domain_vocab > 0 && rng.gen::<f64>() < spec.domain_mass {
        n_core + rng.gen_range(0..n_total - n_core)
    } else if n_core > 0 {
        rng.gen_range(0..n_core)
    } else {
        rng.gen_range(0..n_total)
    }
}

/// Geometry and noise level of synthesized acoustic features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Frames synthesized per reference token.
    pub frames_per_token: usize,
    /// Feature dimension per frame.
    pub width: usize,
    /// Std-dev of the Gaussian noise added to each token embedding.
    pub noise_sd: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            frames_per_token: 8,
            width: 64,
            noise_sd: 1.0,
        }
    }
}

/// Deterministic unit-scale embedding of a token, fixed per (seed, token).
pub fn token_embedding(seed: u64, token: &str, width: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, &[b"emb", token.as_bytes()]);
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..width).map(|_| normal.sample(&mut rng)).collect()
}

/// Synthesizes a `T x W` feature matrix for an utterance's reference text:
/// each token contributes `frames_per_token` noisy copies of its embedding,
/// so `T / frames_per_token` recovers the token count.
pub fn synth_features(
    utt: &Utterance,
    cfg: &FeatureConfig,
    seed: u64,
) -> Result<FeatureSequence, DatasetError> {
    let reference = utt
        .reference
        .as_deref()
        .ok_or_else(|| DatasetError::MissingReference(utt.id.clone()))?;
    let text = crate::textops::normalize(reference);
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let mut rng = stream_rng(seed, &[b"feat", utt.id.as_bytes()]);
    let noise = Normal::new(0.0, cfg.noise_sd).unwrap();
    let mut frames = Array2::<f32>::zeros((tokens.len() * cfg.frames_per_token, cfg.width));
    for (t, token) in tokens.iter().enumerate() {
        let emb = token_embedding(seed, token, cfg.width);
        for f in 0..cfg.frames_per_token {
            let row = t * cfg.frames_per_token + f;
            for (w, &e) in emb.iter().enumerate() {
                frames[[row, w]] = (e + noise.sample(&mut rng)) as f32;
            }
        }
    }
    Ok(FeatureSequence { frames })
}
