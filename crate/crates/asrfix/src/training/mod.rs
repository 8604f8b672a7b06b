//! Staged training of the correction model.
//!
//! Training happens in up to three phases: text-only (text encoder plus
//! decoder, acoustic path bypassed), acoustic homogenization (a fresh
//! acoustic encoder learns to feed the now-frozen decoder, text
//! cross-attention bypassed), and joint fine-tuning of everything. Each
//! phase checkpoints its best validation-WER weights and the next phase
//! starts from them. All shuffling is seeded, optimizer state rides along in
//! checkpoints, and metrics logs carry no timestamps, so a rerun — or a
//! resume from mid-phase — reproduces the original byte for byte.

pub mod adamw;

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{CorrectionPair, FeatureSequence, FeatureStore};
use crate::model::checkpoint::{self, CheckpointError};
use crate::model::scalar::Real;
use crate::model::vocab::{Vocab, EOS_ID};
use crate::model::{CorrectionModel, ForwardCache, ModelConfig, ModelError, ModelInput, SourceGates};
use crate::rngstream::stream_rng;
use crate::textops::{self, TextError};
use adamw::AdamW;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("phase order violation: cannot run {attempted}: {reason}")]
    PhaseOrder { attempted: Phase, reason: String },
    #[error("training requires non-empty train and valid pair sets")]
    EmptyDataset,
    #[error("missing acoustic features for utterance `{0}`")]
    MissingFeatures(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("training io error: {0}")]
    Io(#[from] std::io::Error),
}

/// The staged-training phases, in their mandatory order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    TextOnly,
    AcousticHomogenize,
    Joint,
}

impl Phase {
    pub fn tag(self) -> &'static str {
        match self {
            Phase::TextOnly => "text_only",
            Phase::AcousticHomogenize => "acoustic_homogenize",
            Phase::Joint => "joint",
        }
    }

    /// Which decoder memories are routed during this phase.
    pub fn gates(self) -> SourceGates {
        match self {
            Phase::TextOnly => SourceGates::text_only(),
            Phase::AcousticHomogenize => SourceGates::acoustic_only(),
            Phase::Joint => SourceGates::all(),
        }
    }

    /// Whether a parameter (by name) is trainable in this phase. Everything
    /// else must come out of the phase bitwise unchanged.
    pub fn trains(self, name: &str) -> bool {
        match self {
            Phase::TextOnly => {
                name.starts_with("text.")
                    || (name.starts_with("dec.") && !name.contains(".across."))
            }
            Phase::AcousticHomogenize => name.starts_with("ac."),
            Phase::Joint => true,
        }
    }

    /// Phases that must have completed before this one may start, given the
    /// model's enabled inputs.
    fn prerequisites(self, cfg: &ModelConfig) -> Result<Vec<Phase>, TrainError> {
        match self {
            Phase::TextOnly => {
                if !cfg.use_text {
                    return Err(TrainError::PhaseOrder {
                        attempted: self,
                        reason: "text input is disabled in the model config".into(),
                    });
                }
                Ok(Vec::new())
            }
            Phase::AcousticHomogenize => {
                if !cfg.use_acoustic || !cfg.use_text {
                    return Err(TrainError::PhaseOrder {
                        attempted: self,
                        reason: "requires both text and acoustic inputs enabled".into(),
                    });
                }
                Ok(vec![Phase::TextOnly])
            }
            Phase::Joint => {
                let mut req = Vec::new();
                if cfg.use_text {
                    req.push(Phase::TextOnly);
                }
                if cfg.use_text && cfg.use_acoustic {
                    req.push(Phase::AcousticHomogenize);
                }
                Ok(req)
            }
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// The phase sequence implied by a model's enabled inputs.
pub fn schedule_for(cfg: &ModelConfig) -> Vec<Phase> {
    match (cfg.use_text, cfg.use_acoustic) {
        (true, true) => vec![Phase::TextOnly, Phase::AcousticHomogenize, Phase::Joint],
        (true, false) => vec![Phase::TextOnly],
        (false, _) => vec![Phase::Joint],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Step budget for one phase.
    pub max_steps: usize,
    /// Validation cadence in steps; the final step always evaluates.
    pub eval_every: usize,
    /// Consecutive evaluations without a validation-WER improvement before
    /// the phase stops early.
    pub early_stop_patience: usize,
    /// Probability that a joint-phase training example is presented with its
    /// text memory gated off, leaving only audio. Forces the decoder to
    /// ground predictions acoustically instead of leaning on the text prior.
    /// Ignored outside the joint phase and for models without both inputs.
    #[serde(default)]
    pub text_dropout: f64,
    pub seed: u64,
    pub phase: Phase,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-5,
            weight_decay: 1e-5,
            batch_size: 16,
            max_steps: 1000,
            eval_every: 100,
            early_stop_patience: 5,
            text_dropout: 0.0,
            seed: 17,
            phase: Phase::TextOnly,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "lr must be > 0, got {}",
                self.lr
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(TrainError::InvalidConfig("weight_decay must be >= 0".into()));
        }
        if !(self.text_dropout >= 0.0 && self.text_dropout < 1.0) {
            return Err(TrainError::InvalidConfig(format!(
                "text_dropout must be in [0, 1), got {}",
                self.text_dropout
            )));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_steps", self.max_steps),
            ("eval_every", self.eval_every),
            ("early_stop_patience", self.early_stop_patience),
        ] {
            if v == 0 {
                return Err(TrainError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// Outcome of one phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseReport {
    pub phase: Phase,
    pub steps: usize,
    pub final_train_loss: f64,
    /// Best validation WER reached in the phase; the returned model carries
    /// the weights that achieved it.
    pub valid_wer: f64,
    /// Digest over the parameters this phase does not train, before and
    /// after. Equal values prove the frozen set stayed bitwise unchanged.
    pub frozen_digest_before: String,
    pub frozen_digest_after: String,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub phase: String,
    pub loss: f64,
    pub valid_wer: Option<f64>,
    pub lr: f64,
}

/// Training-set view: pseudo pairs plus the acoustic features they point at.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a [CorrectionPair],
    pub valid: &'a [CorrectionPair],
    pub features: &'a FeatureStore,
}

/// Serializable loop position; everything needed to resume mid-phase apart
/// from the weights and optimizer moments, which ride in the same
/// checkpoint as blobs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainState {
    pub completed: Vec<Phase>,
    pub phase: Option<Phase>,
    pub step_in_phase: usize,
    pub global_step: usize,
    pub epoch: usize,
    pub cursor: usize,
    pub best_valid_wer: Option<f64>,
    pub stale_evals: usize,
    pub opt_t: u64,
}

/// Sum (not mean) of token cross-entropies for one sample, plus the matching
/// logits gradient. Row `i` of the logits scores `labels[i]`.
pub fn ce_sum_and_grad<T: Real>(logits: &Array2<T>, labels: &[u32]) -> (f64, Array2<T>) {
    assert_eq!(logits.nrows(), labels.len(), "one logit row per label");
    let mut d = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row
            .iter()
            .map(|&v| Real::to_f64(v))
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + row
                .iter()
                .map(|&v| (Real::to_f64(v) - max).exp())
                .sum::<f64>()
                .ln();
        loss += lse - logits[[i, label as usize]].to_f64();
        for j in 0..logits.ncols() {
            let soft = (logits[[i, j]].to_f64() - lse).exp();
            let target = if j == label as usize { 1.0 } else { 0.0 };
            d[[i, j]] = T::from_f64(soft - target);
        }
    }
    (loss, d)
}

/// Decoder-side tokens for a target utterance: the teacher-forcing prefix
/// (no BOS — the decoder adds it) and the shifted labels ending in EOS. The
/// target is clipped so prefix and labels stay within `max_tgt_len`.
pub fn target_tokens(vocab: &Vocab, target: &str, max_tgt_len: usize) -> (Vec<u32>, Vec<u32>) {
    let mut ids = vocab.encode(target);
    ids.truncate(max_tgt_len.saturating_sub(1).max(1));
    let mut labels = ids.clone();
    labels.push(EOS_ID);
    (ids, labels)
}

/// Greedy (or beam) corpus WER of the model's corrections against the pair
/// targets.
pub fn decode_wer<T: Real>(
    model: &CorrectionModel<T>,
    pairs: &[CorrectionPair],
    features: &FeatureStore,
    gates: SourceGates,
    beam_size: usize,
) -> Result<f64, TrainError> {
    let mut decoded: Vec<(String, String, String)> = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let feats = features_for(&model.config, features, pair)?;
        let input = ModelInput {
            hyp: &pair.input_hyp,
            context: &pair.context,
            features: feats,
        };
        let hyp = model.correct(&input, gates, beam_size, model.config.max_tgt_len)?;
        decoded.push((pair.utt_id.clone(), hyp, pair.target.clone()));
    }
    let report = textops::corpus_wer(
        decoded
            .iter()
            .map(|(id, hyp, target)| (id.as_str(), hyp.as_str(), target.as_str())),
    )?;
    Ok(report.corpus_wer)
}

fn features_for<'a>(
    cfg: &ModelConfig,
    store: &'a FeatureStore,
    pair: &CorrectionPair,
) -> Result<Option<&'a FeatureSequence>, TrainError> {
    if !cfg.use_acoustic {
        return Ok(None);
    }
    store
        .get(&pair.features_ref)
        .map(Some)
        .ok_or_else(|| TrainError::MissingFeatures(pair.features_ref.clone()))
}

/// Owns the model, optimizer, and loop state for a full training run.
pub struct Trainer<T> {
    pub model: CorrectionModel<T>,
    pub opt: AdamW<T>,
    pub state: TrainState,
    /// Every metrics record emitted so far, mirroring the metrics.log file.
    pub history: Vec<MetricsRecord>,
    run_dir: Option<PathBuf>,
    metrics_file: Option<BufWriter<File>>,
    best_params: Option<Vec<Array2<T>>>,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: CorrectionModel<T>) -> Trainer<T> {
        Trainer {
            model,
            opt: AdamW::new(1e-5, 1e-5),
            state: TrainState::default(),
            history: Vec::new(),
            run_dir: None,
            metrics_file: None,
            best_params: None,
        }
    }

    /// A trainer that writes `metrics.log` and `checkpoints/` under `dir`.
    pub fn with_run_dir(model: CorrectionModel<T>, dir: &Path) -> Result<Trainer<T>, TrainError> {
        let mut trainer = Trainer::new(model);
        trainer.attach_run_dir(dir)?;
        Ok(trainer)
    }

    fn attach_run_dir(&mut self, dir: &Path) -> Result<(), TrainError> {
        fs::create_dir_all(dir.join("checkpoints"))?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("metrics.log"))?;
        self.run_dir = Some(dir.to_path_buf());
        self.metrics_file = Some(BufWriter::new(file));
        Ok(())
    }

    /// Rebuilds a trainer from a mid-phase checkpoint. The best-so-far
    /// weights are recovered from the sibling `<phase>-best.ckpt` if one
    /// exists. Pass the same configs afterwards that the original run used.
    pub fn resume(last_ckpt: &Path, run_dir: Option<&Path>) -> Result<Trainer<T>, TrainError> {
        let loaded = checkpoint::load::<T>(last_ckpt)?;
        let state: TrainState = serde_json::from_value(loaded.train_state.clone())
            .map_err(|e| TrainError::InvalidConfig(format!("bad train state in checkpoint: {e}")))?;
        let mut trainer = Trainer::new(loaded.model);
        trainer.opt.t = state.opt_t;
        trainer
            .opt
            .import_blobs(&loaded.extra)
            .map_err(TrainError::InvalidConfig)?;
        if let (Some(phase), Some(parent)) = (state.phase, last_ckpt.parent()) {
            let best_path = parent.join(format!("{}-best.ckpt", phase.tag()));
            if best_path.exists() {
                let best = checkpoint::load::<T>(&best_path)?;
                let mut params = Vec::new();
                let mut m = best.model;
                m.visit_params(&mut |p| params.push(p.value.clone()));
                trainer.best_params = Some(params);
            }
        }
        trainer.state = state;
        if let Some(dir) = run_dir {
            trainer.attach_run_dir(dir)?;
        }
        Ok(trainer)
    }

    fn emit(&mut self, record: MetricsRecord) -> Result<(), TrainError> {
        if let Some(file) = &mut self.metrics_file {
            serde_json::to_writer(&mut *file, &record)
                .map_err(|e| TrainError::InvalidConfig(format!("metrics serialization: {e}")))?;
            file.write_all(b"\n")?;
            file.flush()?;
        }
        self.history.push(record);
        Ok(())
    }

    fn stash_best(&mut self) {
        let mut params = Vec::new();
        self.model.visit_params(&mut |p| params.push(p.value.clone()));
        self.best_params = Some(params);
    }

    fn restore_best(&mut self) {
        if let Some(best) = &self.best_params {
            let mut i = 0;
            self.model.visit_params(&mut |p| {
                p.value.assign(&best[i]);
                i += 1;
            });
        }
    }

    fn save_checkpoint(&mut self, name: &str) -> Result<(), TrainError> {
        let Some(dir) = self.run_dir.clone() else {
            return Ok(());
        };
        self.state.opt_t = self.opt.t;
        let state_json = serde_json::to_value(&self.state)
            .map_err(|e| TrainError::InvalidConfig(format!("state serialization: {e}")))?;
        let blobs = self.opt.export_blobs();
        checkpoint::save(
            &dir.join("checkpoints").join(name),
            &mut self.model,
            &state_json,
            &blobs,
        )?;
        Ok(())
    }

    /// Digest over the parameters a phase leaves frozen.
    fn frozen_digest(&mut self, phase: Phase) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        self.model.visit_params(&mut |p| {
            if !phase.trains(&p.name) {
                hasher.update(p.name.as_bytes());
                for &v in p.value.iter() {
                    hasher.update((v.to_f64() as f32).to_le_bytes());
                }
            }
        });
        format!("{:x}", hasher.finalize())
    }

    /// One gradient step over a batch of train-pair indices; returns the
    /// token-weighted mean cross-entropy.
    fn train_step(
        &mut self,
        data: &TrainData,
        batch: &[usize],
        gates: SourceGates,
        cfg: &TrainConfig,
    ) -> Result<f64, TrainError> {
        let phase = cfg.phase;
        let drop_p = if phase == Phase::Joint
            && self.model.config.use_text
            && self.model.config.use_acoustic
        {
            cfg.text_dropout
        } else {
            0.0
        };
        let mut pending: Vec<(ForwardCache<T>, Array2<T>)> = Vec::with_capacity(batch.len());
        let mut loss_sum = 0.0;
        let mut token_count = 0usize;
        for &idx in batch {
            let pair = &data.train[idx];
            let feats = features_for(&self.model.config, data.features, pair)?;
            let input = ModelInput {
                hyp: &pair.input_hyp,
                context: &pair.context,
                features: feats,
            };
            let ex_gates = if drop_p > 0.0 {
                let mut rng = stream_rng(
                    cfg.seed,
                    &[
                        b"srcdrop",
                        &(self.state.global_step as u64).to_le_bytes(),
                        &(idx as u64).to_le_bytes(),
                    ],
                );
                if rng.gen::<f64>() < drop_p {
                    SourceGates::acoustic_only()
                } else {
                    gates
                }
            } else {
                gates
            };
            let (prefix, labels) =
                target_tokens(&self.model.vocab, &pair.target, self.model.config.max_tgt_len);
            let (logits, cache) = self.model.forward(&input, &prefix, ex_gates)?;
            let (loss, d_logits) = ce_sum_and_grad(&logits, &labels);
            loss_sum += loss;
            token_count += labels.len();
            pending.push((cache, d_logits));
        }
        let scale = T::from_f64(1.0 / token_count as f64);
        self.model.zero_grads();
        for (cache, mut d_logits) in pending {
            d_logits.mapv_inplace(|v| v * scale);
            self.model.backward(&cache, &d_logits);
        }
        self.opt.step(&mut self.model, &|name| phase.trains(name));
        Ok(loss_sum / token_count as f64)
    }

    /// Mean token cross-entropy over given train pairs without touching the
    /// model — the evaluation view of the training objective.
    pub fn batch_loss(
        &self,
        data: &TrainData,
        indices: &[usize],
        gates: SourceGates,
    ) -> Result<f64, TrainError> {
        let mut loss_sum = 0.0;
        let mut token_count = 0usize;
        for &idx in indices {
            let pair = &data.train[idx];
            let feats = features_for(&self.model.config, data.features, pair)?;
            let input = ModelInput {
                hyp: &pair.input_hyp,
                context: &pair.context,
                features: feats,
            };
            let (prefix, labels) =
                target_tokens(&self.model.vocab, &pair.target, self.model.config.max_tgt_len);
            let (logits, _) = self.model.forward(&input, &prefix, gates)?;
            let (loss, _) = ce_sum_and_grad(&logits, &labels);
            loss_sum += loss;
            token_count += labels.len();
        }
        Ok(loss_sum / token_count as f64)
    }

    /// Runs (or resumes) one phase to completion. On return the model holds
    /// the phase's best validation-WER weights.
    pub fn run_phase(
        &mut self,
        data: &TrainData,
        cfg: &TrainConfig,
    ) -> Result<PhaseReport, TrainError> {
        cfg.validate()?;
        if data.train.is_empty() || data.valid.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let phase = cfg.phase;
        if self.state.phase != Some(phase) {
            if self.state.phase.is_some() {
                return Err(TrainError::PhaseOrder {
                    attempted: phase,
                    reason: format!(
                        "phase {} is still in progress",
                        self.state.phase.unwrap()
                    ),
                });
            }
            if self.state.completed.contains(&phase) {
                return Err(TrainError::PhaseOrder {
                    attempted: phase,
                    reason: "phase already completed".into(),
                });
            }
            for req in phase.prerequisites(&self.model.config)? {
                if !self.state.completed.contains(&req) {
                    return Err(TrainError::PhaseOrder {
                        attempted: phase,
                        reason: format!("requires completed {req} phase"),
                    });
                }
            }
            self.state.phase = Some(phase);
            self.state.step_in_phase = 0;
            self.state.epoch = 0;
            self.state.cursor = 0;
            self.state.best_valid_wer = None;
            self.state.stale_evals = 0;
            self.best_params = None;
            self.opt = AdamW::new(cfg.lr, cfg.weight_decay);
        } else {
            // Mid-phase resume: counters and moments came from the
            // checkpoint; only the step-size knobs follow the config.
            self.opt.lr = cfg.lr;
            self.opt.weight_decay = cfg.weight_decay;
        }

        let digest_before = self.frozen_digest(phase);
        let gates = phase.gates();
        let n = data.train.len();
        let mut order: Vec<usize> = Vec::new();
        let mut order_epoch = usize::MAX;
        let mut last_loss = f64::NAN;

        while self.state.step_in_phase < cfg.max_steps {
            if self.state.cursor >= n {
                self.state.cursor = 0;
                self.state.epoch += 1;
            }
            if order_epoch != self.state.epoch {
                order = (0..n).collect();
                let mut rng = stream_rng(
                    cfg.seed,
                    &[
                        b"order",
                        phase.tag().as_bytes(),
                        &self.state.epoch.to_le_bytes(),
                    ],
                );
                order.shuffle(&mut rng);
                order_epoch = self.state.epoch;
            }
            let end = (self.state.cursor + cfg.batch_size).min(n);
            let batch: Vec<usize> = order[self.state.cursor..end].to_vec();
            self.state.cursor = end;

            last_loss = self.train_step(data, &batch, gates, cfg)?;
            self.state.step_in_phase += 1;
            self.state.global_step += 1;

            let evaluate = self.state.step_in_phase % cfg.eval_every == 0
                || self.state.step_in_phase == cfg.max_steps;
            let mut valid_wer = None;
            if evaluate {
                let wer = decode_wer(&self.model, data.valid, data.features, gates, 1)?;
                valid_wer = Some(wer);
                let improved = self
                    .state
                    .best_valid_wer
                    .map_or(true, |best| wer < best);
                if improved {
                    self.state.best_valid_wer = Some(wer);
                    self.state.stale_evals = 0;
                    self.stash_best();
                    self.save_checkpoint(&format!("{}-best.ckpt", phase.tag()))?;
                } else {
                    self.state.stale_evals += 1;
                }
                self.save_checkpoint(&format!("{}-last.ckpt", phase.tag()))?;
            }
            self.emit(MetricsRecord {
                step: self.state.global_step,
                phase: phase.tag().to_owned(),
                loss: last_loss,
                valid_wer,
                lr: cfg.lr,
            })?;
            if self.state.stale_evals >= cfg.early_stop_patience {
                break;
            }
        }

        self.restore_best();
        let digest_after = self.frozen_digest(phase);
        let report = PhaseReport {
            phase,
            steps: self.state.step_in_phase,
            final_train_loss: last_loss,
            valid_wer: self.state.best_valid_wer.unwrap_or(f64::NAN),
            frozen_digest_before: digest_before,
            frozen_digest_after: digest_after,
        };
        self.state.completed.push(phase);
        self.state.phase = None;
        self.best_params = None;
        Ok(report)
    }

    /// Runs the full schedule implied by the model's enabled inputs, using
    /// `base` for every phase (the phase field is overridden). The model
    /// ends at the final phase's best weights, also saved as
    /// `checkpoints/final.ckpt` when a run directory is attached.
    pub fn train_full(
        &mut self,
        data: &TrainData,
        base: &TrainConfig,
    ) -> Result<Vec<PhaseReport>, TrainError> {
        self.train_full_with(data, base, |_| None)
    }

    /// Like [`train_full`](Self::train_full), but `steps_for` may give a
    /// phase its own step budget in place of `base.max_steps`. The phases
    /// have different jobs — warming up a text corrector, homogenizing a
    /// fresh acoustic encoder, fusing both — and rarely want equal budgets.
    pub fn train_full_with(
        &mut self,
        data: &TrainData,
        base: &TrainConfig,
        steps_for: impl Fn(Phase) -> Option<usize>,
    ) -> Result<Vec<PhaseReport>, TrainError> {
        let mut reports = Vec::new();
        for phase in schedule_for(&self.model.config) {
            let mut cfg = base.clone();
            cfg.phase = phase;
            if let Some(steps) = steps_for(phase) {
                cfg.max_steps = steps;
            }
            reports.push(self.run_phase(data, &cfg)?);
        }
        self.save_checkpoint("final.ckpt")?;
        Ok(reports)
    }
}
