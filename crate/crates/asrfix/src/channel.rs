//! Simulated recognition channels.
//!
//! A channel turns an utterance's reference text into a noisy hypothesis via
//! seeded substitution/deletion/insertion events, optionally degraded further
//! (input dropout, time/frequency masking) to play the inferior half of a
//! channel pair. All randomness comes from keyed streams with a fixed draw
//! count per word, so two channels that share a seed and variant corrupt the
//! same positions the same way, and raising `rate_scale` only adds events on
//! top of the existing ones. That nesting makes the measured WER monotone in
//! `rate_scale`, which is what the bisection calibrator relies on.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Utterance;
use crate::rngstream::stream_rng;
use crate::textops;

/// Multiplier applied to error rates per unit of input dropout: a channel
/// with `dropout_rate` d behaves like the base channel with rates scaled by
/// `1 + DROPOUT_ERROR_GAIN * d`.
pub const DROPOUT_ERROR_GAIN: f64 = 4.0;

/// Ceiling on any effective event probability.
pub const RATE_CAP: f64 = 0.95;

/// Absolute WER tolerance the calibrator must reach.
pub const CALIBRATION_TOLERANCE: f64 = 0.01;

/// Bisection budget for calibration.
pub const CALIBRATION_MAX_ITERS: usize = 30;

/// Default `rate_scale` search interval.
pub const DEFAULT_SCALE_RANGE: (f64, f64) = (0.0, 64.0);

const MATCH_LOGPROB: (f64, f64) = (-0.05, 0.02);
const ERROR_LOGPROB: (f64, f64) = (-2.0, 0.3);

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("utterance {0} has no source text to transcribe")]
    NoSourceText(String),
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error(
        "target WER {target:.4} unreachable: scale range [{lo:.2}, {hi:.2}] spans WER [{wer_lo:.4}, {wer_hi:.4}]"
    )]
    Unreachable {
        target: f64,
        lo: f64,
        hi: f64,
        wer_lo: f64,
        wer_hi: f64,
    },
    #[error("calibration did not converge: target {target:.4}, closest achieved {closest:.4}")]
    NotConverged { target: f64, closest: f64 },
    #[error("no scoring transcript for utterance {0}")]
    MissingTranscript(String),
}

/// What a channel's transcripts are scored against when measuring WER.
///
/// The channel always transcribes from each utterance's own reference text;
/// this only selects the scoring side of the comparison.
pub enum ScoreAgainst<'a> {
    /// Each utterance's ground-truth reference.
    GroundTruth,
    /// Fixed transcripts keyed by utterance id — typically the paired
    /// channel's output, which turns the measurement into the pair gap.
    Transcripts(&'a BTreeMap<String, String>),
}

/// Time/frequency masking applied on top of the base error rates, measured
/// in feature-frame units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecAugmentSpec {
    /// Longest time mask, in frames. Words whose frame span is at least
    /// half-covered by a mask are dropped from the hypothesis.
    pub time_mask_max: usize,
    /// Longest frequency mask, in feature rows.
    pub freq_mask_max: usize,
    /// Number of independent masks of each kind.
    pub n_masks: usize,
    /// Feature rows per frame; scales frequency masks into a rate bump.
    pub feature_width: usize,
}

/// Extra corruption that turns a channel into its inferior counterpart.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Degradation {
    /// Simulated input dropout in `[0, 1)`; inflates all error rates.
    pub dropout_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub specaugment: Option<SpecAugmentSpec>,
}

impl Degradation {
    pub fn is_none(&self) -> bool {
        self.dropout_rate == 0.0 && self.specaugment.is_none()
    }
}

/// Full description of one simulated recognizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    pub seed: u64,
    /// Channels with equal seed and variant share corruption draws; their
    /// outputs differ only where their effective rates differ.
    pub variant: u32,
    pub p_sub: f64,
    pub p_del: f64,
    pub p_ins: f64,
    /// Probability that a substitution picks a word sharing the original's
    /// first syllable instead of a uniform draw.
    pub confusion_bias: f64,
    /// Calibration knob; multiplies all base error rates.
    pub rate_scale: f64,
    pub degradation: Degradation,
    /// Pool that substituted and inserted words are drawn from.
    pub vocab: Vec<String>,
    /// Frames one word is assumed to span; maps time masks to words.
    pub frames_per_token: usize,
}

/// A channel that echoes the normalized reference.
pub fn identity_channel(name: &str, seed: u64) -> ChannelSpec {
    ChannelSpec {
        name: name.into(),
        seed,
        variant: 0,
        p_sub: 0.0,
        p_del: 0.0,
        p_ins: 0.0,
        confusion_bias: 0.0,
        rate_scale: 1.0,
        degradation: Degradation::default(),
        vocab: Vec::new(),
        frames_per_token: 8,
    }
}

/// A channel's output on one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptionResult {
    pub utt_id: String,
    pub hypothesis: String,
    /// One synthetic log-probability per hypothesis token, each `<= 0`.
    pub token_logprobs: Vec<f64>,
}

impl TranscriptionResult {
    pub fn confidence(&self) -> Option<f64> {
        textops::sequence_confidence(&self.token_logprobs).ok()
    }
}

impl ChannelSpec {
    /// The spec with extra degradation under a new name; base rates, seed and
    /// variant are retained so the pair stays correlated.
    pub fn degraded(&self, name: &str, degradation: Degradation) -> ChannelSpec {
        ChannelSpec {
            name: name.into(),
            degradation,
            ..self.clone()
        }
    }

    /// Event probabilities after the scale knob and degradation gains.
    pub fn effective_rates(&self) -> (f64, f64, f64) {
        let dropout_gain = 1.0 + DROPOUT_ERROR_GAIN * self.degradation.dropout_rate;
        let freq_gain = match &self.degradation.specaugment {
            Some(sa) if sa.feature_width > 0 && sa.freq_mask_max > 0 => {
                let masked = sa.n_masks as f64 * sa.freq_mask_max as f64
                    / (2.0 * sa.feature_width as f64);
                1.0 + masked.min(1.0)
            }
            _ => 1.0,
        };
        let s = self.rate_scale * dropout_gain;
        (
            (self.p_sub * s * freq_gain).min(RATE_CAP),
            (self.p_del * s).min(RATE_CAP),
            (self.p_ins * s).min(RATE_CAP),
        )
    }

    /// Transcribes one utterance. Requires reference text.
    pub fn transcribe(&self, utt: &Utterance) -> Result<TranscriptionResult, ChannelError> {
        let reference = utt
            .reference
            .as_deref()
            .ok_or_else(|| ChannelError::NoSourceText(utt.id.clone()))?;
        let text = textops::normalize(reference);
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.is_empty() {
            return Ok(TranscriptionResult {
                utt_id: utt.id.clone(),
                hypothesis: String::new(),
                token_logprobs: Vec::new(),
            });
        }

        let (p_sub, p_del, p_ins) = self.effective_rates();
        let can_pick = !self.vocab.is_empty();

        // Base corruption stream: keyed by (seed, variant, utterance), never
        // by name or rates, so correlated channels replay the same draws.
        // Exactly two draws precede the word loop and five draws are burned
        // per word whether or not each event fires.
        let mut rng = stream_rng(
            self.seed,
            &[b"chan", &self.variant.to_le_bytes(), utt.id.as_bytes()],
        );
        // (original word index if any, emitted text, corrupted flag)
        let mut emitted: Vec<(Option<usize>, String, bool)> = Vec::new();
        let u_ev = rng.gen::<f64>();
        let u_pick = rng.gen::<f64>();
        if u_ev < p_ins && can_pick {
            emitted.push((None, self.pick_uniform(u_pick), true));
        }
        for (i, word) in words.iter().enumerate() {
            let u_del = rng.gen::<f64>();
            let u_sub = rng.gen::<f64>();
            let u_subpick = rng.gen::<f64>();
            let u_ins = rng.gen::<f64>();
            let u_inspick = rng.gen::<f64>();
            if u_del < p_del {
                // dropped
            } else if u_sub < p_sub && can_pick {
                let sub = self.substitute(word, u_subpick);
                let corrupted = sub != *word;
                emitted.push((Some(i), sub, corrupted));
            } else {
                emitted.push((Some(i), (*word).to_string(), false));
            }
            if u_ins < p_ins && can_pick {
                emitted.push((None, self.pick_uniform(u_inspick), true));
            }
        }

        // Time masks delete whole words; drawn from a separate stream so
        // enabling degradation leaves the base stream untouched.
        let masked = self.time_masked_words(utt, words.len());
        let kept: Vec<(String, bool)> = emitted
            .into_iter()
            .filter(|(orig, _, _)| orig.map_or(true, |i| !masked[i]))
            .map(|(_, w, c)| (w, c))
            .collect();

        // Synthetic confidences: matched tokens score high, corrupted low.
        let mut conf_rng = stream_rng(
            self.seed,
            &[b"conf", self.name.as_bytes(), utt.id.as_bytes()],
        );
        let match_dist = Normal::new(MATCH_LOGPROB.0, MATCH_LOGPROB.1).unwrap();
        let error_dist = Normal::new(ERROR_LOGPROB.0, ERROR_LOGPROB.1).unwrap();
        let mut hyp_words = Vec::with_capacity(kept.len());
        let mut logprobs = Vec::with_capacity(kept.len());
        for (word, corrupted) in kept {
            let dist = if corrupted { &error_dist } else { &match_dist };
            logprobs.push(dist.sample(&mut conf_rng).min(0.0));
            hyp_words.push(word);
        }
        Ok(TranscriptionResult {
            utt_id: utt.id.clone(),
            hypothesis: hyp_words.join(" "),
            token_logprobs: logprobs,
        })
    }

    fn time_masked_words(&self, utt: &Utterance, n_words: usize) -> Vec<bool> {
        let mut masked = vec![false; n_words];
        let fpt = self.frames_per_token;
        let t_frames = n_words * fpt;
        let sa = match &self.degradation.specaugment {
            Some(sa) if sa.time_mask_max > 0 && sa.n_masks > 0 && t_frames > 0 && fpt > 0 => sa,
            _ => return masked,
        };
        let mut rng = stream_rng(self.seed, &[b"degrade", utt.id.as_bytes()]);
        for _ in 0..sa.n_masks {
            let start = rng.gen_range(0..t_frames);
            let len = rng.gen_range(0..=sa.time_mask_max);
            let end = (start + len).min(t_frames);
            for (i, flag) in masked.iter_mut().enumerate() {
                let ws = i * fpt;
                let we = ws + fpt;
                let overlap = end.min(we).saturating_sub(start.max(ws));
                if overlap * 2 >= fpt {
                    *flag = true;
                }
            }
        }
        masked
    }

    fn pick_uniform(&self, u: f64) -> String {
        let v = self.vocab.len();
        let k = ((u * v as f64) as usize).min(v - 1);
        self.vocab[k].clone()
    }

    /// Substitute for `original`, decided by the single uniform draw `u`.
    /// With probability `confusion_bias` the pick comes from words sharing
    /// the original's first syllable, otherwise from the whole vocabulary
    /// minus the original.
    fn substitute(&self, original: &str, u: f64) -> String {
        let confusable: Vec<&String> = if self.confusion_bias > 0.0 && original.len() >= 2 {
            self.vocab
                .iter()
                .filter(|w| w.as_str() != original && w.len() >= 2 && w[..2] == original[..2])
                .collect()
        } else {
            Vec::new()
        };
        if !confusable.is_empty() && u < self.confusion_bias {
            let r = u / self.confusion_bias;
            let k = ((r * confusable.len() as f64) as usize).min(confusable.len() - 1);
            return confusable[k].clone();
        }
        let r = if !confusable.is_empty() && self.confusion_bias < 1.0 {
            (u - self.confusion_bias) / (1.0 - self.confusion_bias)
        } else {
            u
        };
        let v = self.vocab.len();
        match self.vocab.iter().position(|w| w == original) {
            Some(_) if v == 1 => original.to_string(),
            Some(oi) => {
                let k = ((r * (v - 1) as f64) as usize).min(v - 2);
                let k = if k >= oi { k + 1 } else { k };
                self.vocab[k].clone()
            }
            None => self.pick_uniform(r),
        }
    }
}

/// Corpus WER of a channel against the utterances' own references.
pub fn measure_wer(spec: &ChannelSpec, utterances: &[&Utterance]) -> Result<f64, ChannelError> {
    measure_wer_against(spec, utterances, &ScoreAgainst::GroundTruth)
}

/// Corpus WER of a channel's transcripts against the chosen scoring side.
pub fn measure_wer_against(
    spec: &ChannelSpec,
    utterances: &[&Utterance],
    against: &ScoreAgainst,
) -> Result<f64, ChannelError> {
    if utterances.is_empty() {
        return Err(ChannelError::EmptyCalibration);
    }
    let mut total_errors = 0usize;
    let mut total_ref = 0usize;
    for utt in utterances {
        let hyp = spec.transcribe(utt)?.hypothesis;
        let reference = match against {
            ScoreAgainst::GroundTruth => utt
                .reference
                .as_deref()
                .ok_or_else(|| ChannelError::NoSourceText(utt.id.clone()))?,
            ScoreAgainst::Transcripts(map) => map
                .get(&utt.id)
                .map(String::as_str)
                .ok_or_else(|| ChannelError::MissingTranscript(utt.id.clone()))?,
        };
        match textops::wer(&hyp, reference) {
            Ok(report) => {
                total_errors += report.counts.errors();
                total_ref += report.total_ref_words;
            }
            Err(_) => continue, // empty scoring reference after normalization
        }
    }
    if total_ref == 0 {
        return Err(ChannelError::EmptyCalibration);
    }
    Ok(total_errors as f64 / total_ref as f64)
}

/// Result of WER-gap calibration.
#[derive(Debug, Clone)]
pub struct CalibrationOutcome {
    pub spec: ChannelSpec,
    pub achieved_wer: f64,
    pub iterations: usize,
}

/// Finds a `rate_scale` in `[lo, hi]` at which the channel's corpus WER on
/// the calibration utterances matches `target_wer` within
/// [`CALIBRATION_TOLERANCE`], by bisection. To calibrate the gap between a
/// channel pair instead of absolute WER, score against the paired channel's
/// transcripts ([`ScoreAgainst::Transcripts`]) and set `lo` to that
/// channel's `rate_scale` so the search stays on the rising branch.
pub fn calibrate_gap(
    spec: &ChannelSpec,
    calibration: &[&Utterance],
    against: &ScoreAgainst,
    target_wer: f64,
    lo: f64,
    hi: f64,
) -> Result<CalibrationOutcome, ChannelError> {
    if calibration.is_empty() {
        return Err(ChannelError::EmptyCalibration);
    }
    let at = |scale: f64| -> ChannelSpec {
        ChannelSpec {
            rate_scale: scale,
            ..spec.clone()
        }
    };
    let wer_lo = measure_wer_against(&at(lo), calibration, against)?;
    if (wer_lo - target_wer).abs() <= CALIBRATION_TOLERANCE {
        return Ok(CalibrationOutcome {
            spec: at(lo),
            achieved_wer: wer_lo,
            iterations: 0,
        });
    }
    let wer_hi = measure_wer_against(&at(hi), calibration, against)?;
    if (wer_hi - target_wer).abs() <= CALIBRATION_TOLERANCE {
        return Ok(CalibrationOutcome {
            spec: at(hi),
            achieved_wer: wer_hi,
            iterations: 0,
        });
    }
    if target_wer < wer_lo || target_wer > wer_hi {
        return Err(ChannelError::Unreachable {
            target: target_wer,
            lo,
            hi,
            wer_lo,
            wer_hi,
        });
    }
    let (mut lo, mut hi) = (lo, hi);
    let mut closest = (f64::INFINITY, wer_lo);
    for it in 1..=CALIBRATION_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        let wer_mid = measure_wer_against(&at(mid), calibration, against)?;
        let err = (wer_mid - target_wer).abs();
        if err < closest.0 {
            closest = (err, wer_mid);
        }
        if err <= CALIBRATION_TOLERANCE {
            return Ok(CalibrationOutcome {
                spec: at(mid),
                achieved_wer: wer_mid,
                iterations: it,
            });
        }
        if wer_mid < target_wer {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(ChannelError::NotConverged {
        target: target_wer,
        closest: closest.1,
    })
}
