//! Experiment configuration: one serializable spec that pins down corpus
//! generation, channel calibration, pair filtering, model architecture,
//! training, and the systems under comparison.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channel::{Degradation, SpecAugmentSpec};
use crate::dataset::{DomainSpec, FeatureConfig, PairFilters};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

/// Input-feature ablations. Each one trains the same architecture with a
/// different set of enabled inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Hypothesis text, dialogue context, and acoustic features.
    Full,
    /// No dialogue context.
    NoContext,
    /// No acoustic features.
    NoAcoustic,
    /// Acoustic features only; the text encoder is disabled entirely.
    NoText,
    /// Hypothesis text alone: no context, no acoustics.
    #[serde(rename = "text_1best")]
    Text1Best,
}

impl Ablation {
    pub fn all() -> [Ablation; 5] {
        [
            Ablation::Full,
            Ablation::NoContext,
            Ablation::NoAcoustic,
            Ablation::NoText,
            Ablation::Text1Best,
        ]
    }

    pub fn tag(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoContext => "no_context",
            Ablation::NoAcoustic => "no_acoustic",
            Ablation::NoText => "no_text",
            Ablation::Text1Best => "text_1best",
        }
    }

    /// The model config for this ablation. Architecture fields are copied
    /// from `base`; the input switches are set outright, so two ablations
    /// built from the same base differ in exactly those switches.
    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut cfg = base.clone();
        let (text, context, acoustic) = match self {
            Ablation::Full => (true, true, true),
            Ablation::NoContext => (true, false, true),
            Ablation::NoAcoustic => (true, true, false),
            Ablation::NoText => (false, false, true),
            Ablation::Text1Best => (true, false, false),
        };
        cfg.use_text = text;
        cfg.use_context = context;
        cfg.use_acoustic = acoustic;
        cfg
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// The two supervision regimes compared on the target domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Supervision {
    /// Trained on target-domain pseudo pairs (inferior in, superior out).
    UnsupPseudo,
    /// Trained on source-domain recognizer output with ground-truth targets.
    SupSourceGroundtruth,
}

impl Supervision {
    pub fn tag(self) -> &'static str {
        match self {
            Supervision::UnsupPseudo => "unsup_pseudo",
            Supervision::SupSourceGroundtruth => "sup_source_groundtruth",
        }
    }
}

impl std::fmt::Display for Supervision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// One degraded recognizer variant and its calibration target: the extra
/// WER it shows when scored against the base recognizer's transcripts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferiorPlan {
    pub name: String,
    pub degradation: Degradation,
    pub gap_wer: f64,
}

/// Recognizer-pair setup before calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelPlan {
    pub p_sub: f64,
    pub p_del: f64,
    pub p_ins: f64,
    pub confusion_bias: f64,
    /// Absolute corpus-WER target for the deployed (superior) recognizer.
    pub superior_wer: f64,
    pub inferiors: Vec<InferiorPlan>,
    /// Train-split utterances used for calibration measurements.
    pub calibration_utts: usize,
    /// Upper bound of the rate-scale bisection range.
    pub scale_hi: f64,
}

impl Default for ChannelPlan {
    fn default() -> Self {
        ChannelPlan {
            p_sub: 0.12,
            p_del: 0.05,
            p_ins: 0.03,
            confusion_bias: 0.5,
            superior_wer: 0.20,
            inferiors: vec![
                InferiorPlan {
                    name: "dropout".into(),
                    degradation: Degradation {
                        dropout_rate: 0.10,
                        specaugment: None,
                    },
                    gap_wer: 0.18,
                },
                InferiorPlan {
                    name: "specaugment".into(),
                    degradation: Degradation {
                        dropout_rate: 0.0,
                        specaugment: Some(SpecAugmentSpec {
                            time_mask_max: 8,
                            freq_mask_max: 6,
                            n_masks: 1,
                            feature_width: 24,
                        }),
                    },
                    gap_wer: 0.24,
                },
            ],
            calibration_utts: 300,
            scale_hi: 8.0,
        }
    }
}

/// Full description of one experiment. Serialized verbatim into the output
/// directory as `config.echo`, so every number in a report traces back to a
/// self-contained config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    /// Domain the corrector is deployed on; pseudo pairs come from here.
    pub target_domain: DomainSpec,
    /// Second domain with partly disjoint vocabulary, used as the
    /// supervised system's training domain.
    pub source_domain: DomainSpec,
    /// Corpus size per domain.
    pub n_utts: usize,
    pub channels: ChannelPlan,
    pub features: FeatureConfig,
    pub filters: PairFilters,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Optional per-phase step budgets overriding `train.max_steps`, keyed
    /// by phase tag (`text_only`, `acoustic_homogenize`, `joint`).
    #[serde(default)]
    pub phase_steps: BTreeMap<String, usize>,
    pub ablations: Vec<Ablation>,
    pub supervision: Vec<Supervision>,
    pub seeds: Vec<u64>,
    /// Beam width for final train/test scoring (greedy is used during
    /// training-time validation).
    pub beam_size: usize,
    /// At most this many train pairs are decoded for the train-WER cell.
    pub train_eval_cap: usize,
    /// At most this many valid pairs are decoded per validation pass.
    pub valid_eval_cap: usize,
    /// At most this many example corrections are kept in reports.
    pub example_cap: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            name: "desk".into(),
            target_domain: DomainSpec {
                name: "support".into(),
                ..DomainSpec::default()
            },
            source_domain: DomainSpec {
                name: "finance".into(),
                ..DomainSpec::default()
            },
            n_utts: 1200,
            channels: ChannelPlan::default(),
            features: FeatureConfig {
                frames_per_token: 8,
                width: 24,
                noise_sd: 2.5,
            },
            filters: PairFilters {
                max_pair_wer: 0.5,
                min_confidence: -0.30,
            },
            model: ModelConfig {
                d_model: 48,
                n_heads: 4,
                ffn_mult: 2,
                n_text_layers: 2,
                n_acoustic_layers: 2,
                n_decoder_layers: 2,
                feature_width: 24,
                conv_channels: [8, 12, 16],
                max_src_len: 48,
                max_tgt_len: 14,
                tie_output: true,
                use_text: true,
                use_context: true,
                use_acoustic: true,
            },
            train: TrainConfig {
                lr: 1e-3,
                weight_decay: 1e-5,
                batch_size: 8,
                max_steps: 400,
                eval_every: 50,
                early_stop_patience: 4,
                ..TrainConfig::default()
            },
            phase_steps: BTreeMap::new(),
            ablations: Ablation::all().to_vec(),
            supervision: vec![Supervision::UnsupPseudo, Supervision::SupSourceGroundtruth],
            seeds: vec![11, 12, 13],
            beam_size: 4,
            train_eval_cap: 200,
            valid_eval_cap: 120,
            example_cap: 12,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.seeds.is_empty() {
            return Err("at least one seed is required".into());
        }
        if self.n_utts < 50 {
            return Err(format!("n_utts must be at least 50, got {}", self.n_utts));
        }
        for (label, domain) in [
            ("target", &self.target_domain),
            ("source", &self.source_domain),
        ] {
            if domain.test_fraction <= 0.0 || domain.valid_fraction <= 0.0 {
                return Err(format!(
                    "{label} domain needs positive valid and test fractions"
                ));
            }
        }
        if !(self.channels.superior_wer > 0.0 && self.channels.superior_wer < 1.0) {
            return Err("superior WER target must lie in (0, 1)".into());
        }
        if self.channels.inferiors.is_empty() {
            return Err("at least one inferior channel is required".into());
        }
        if self.channels.calibration_utts == 0 {
            return Err("calibration_utts must be at least 1".into());
        }
        if self.features.width != self.model.feature_width {
            return Err(format!(
                "feature width {} does not match the model's expected width {}",
                self.features.width, self.model.feature_width
            ));
        }
        if self.beam_size == 0 {
            return Err("beam_size must be at least 1".into());
        }
        if self.train_eval_cap == 0 || self.valid_eval_cap == 0 {
            return Err("evaluation caps must be at least 1".into());
        }
        self.model.validate().map_err(|e| e.to_string())?;
        self.train.validate().map_err(|e| e.to_string())?;
        Ok(())
    }
}
