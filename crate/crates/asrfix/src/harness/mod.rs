//! Experiment runner: builds calibrated synthetic datasets, trains one
//! corrector per (system, seed), evaluates against the uncorrected
//! recognizer baseline, and writes self-contained result directories.

pub mod config;
pub mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channel::{calibrate_gap, ChannelError, ChannelSpec, Degradation, ScoreAgainst};
use crate::dataset::{
    build_pairs, save_features, save_pairs, synth_corpus, synth_features, transcribed_context,
    Corpus, CorrectionPair, DatasetError, FeatureStore, PairSet, Split, TranscriptLine, Utterance,
};
use crate::model::vocab::Vocab;
use crate::model::{CorrectionModel, ModelConfig, ModelError, ModelInput, SourceGates};
use crate::textops::{self, TextError, TokenLevel};
use crate::training::{PhaseReport, TrainData, TrainError, Trainer};
use config::{ExperimentSpec, Supervision};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("missing acoustic features for utterance `{0}`")]
    MissingFeatures(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error("harness io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// One test-split sample ready for correction: the deployed recognizer's
/// hypothesis and context, plus the ground-truth reference for scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestItem {
    pub utt_id: String,
    pub input_hyp: String,
    pub context: String,
    pub reference: String,
}

/// Everything one seed of an experiment consumes on the pseudo-pair side.
pub struct DataBundle {
    pub seed: u64,
    pub corpus: Corpus,
    pub superior: ChannelSpec,
    pub inferiors: Vec<ChannelSpec>,
    pub pairs: PairSet,
    pub features: FeatureStore,
    pub test: Vec<TestItem>,
    /// Corpus WER of the uncorrected superior hypotheses on the test split.
    pub baseline_test_wer: f64,
    /// Digest of the canonical test-file bytes; every system evaluated on
    /// this bundle records it, proving the eval sets were identical.
    pub test_checksum: String,
}

/// Source-domain data for the supervised system: recognizer hypotheses in,
/// ground-truth transcripts out.
pub struct SupervisedBundle {
    pub corpus: Corpus,
    pub superior: ChannelSpec,
    pub pairs: PairSet,
    pub features: FeatureStore,
}

/// One (system, seed) cell of a result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub system: String,
    pub seed: u64,
    /// Corrected-output WER on train pairs, scored against the training
    /// targets (pseudo labels for unsupervised systems).
    pub train_wer: f64,
    /// Corrected-output WER on the held-out test split, scored against
    /// ground truth.
    pub test_wer: f64,
    /// Run directory, relative to the experiment directory.
    pub run_dir: String,
}

/// Median over seeds for one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianRow {
    pub system: String,
    pub train_wer: f64,
    pub test_wer: f64,
}

/// Uncorrected-recognizer WER for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineCell {
    pub seed: u64,
    pub test_wer: f64,
}

/// A correction where the supervised system emitted words that never occur
/// in the target domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRow {
    pub utt_id: String,
    pub input: String,
    pub supervised: String,
    pub unsupervised: String,
    pub reference: String,
    /// Supervised-output words with zero target-domain frequency.
    pub flagged: Vec<String>,
}

/// Full outcome of an experiment, serialized as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub experiment: String,
    /// Row order follows the spec's system list, then seed order.
    pub rows: Vec<ResultRow>,
    pub medians: Vec<MedianRow>,
    pub baseline: Vec<BaselineCell>,
    pub baseline_median: f64,
    /// Per-seed digest of the test file every system was scored on.
    pub test_checksums: BTreeMap<u64, String>,
    pub examples: Vec<ExampleRow>,
}

impl ResultTable {
    fn assemble(
        experiment: &str,
        system_order: &[String],
        rows: Vec<ResultRow>,
        baseline: Vec<BaselineCell>,
        test_checksums: BTreeMap<u64, String>,
        examples: Vec<ExampleRow>,
    ) -> ResultTable {
        let medians = system_order
            .iter()
            .map(|system| {
                let train: Vec<f64> = rows
                    .iter()
                    .filter(|r| &r.system == system)
                    .map(|r| r.train_wer)
                    .collect();
                let test: Vec<f64> = rows
                    .iter()
                    .filter(|r| &r.system == system)
                    .map(|r| r.test_wer)
                    .collect();
                MedianRow {
                    system: system.clone(),
                    train_wer: median(train),
                    test_wer: median(test),
                }
            })
            .collect();
        let baseline_median = median(baseline.iter().map(|b| b.test_wer).collect());
        ResultTable {
            experiment: experiment.to_owned(),
            rows,
            medians,
            baseline,
            baseline_median,
            test_checksums,
            examples,
        }
    }

    /// All rows of one system, in seed order.
    pub fn system_rows(&self, system: &str) -> Vec<&ResultRow> {
        self.rows.iter().filter(|r| r.system == system).collect()
    }
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(|a, b| a.partial_cmp(b).expect("WER values are finite"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// How one channel's calibration went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEntry {
    pub name: String,
    pub target_wer: f64,
    pub achieved_wer: f64,
    pub rate_scale: f64,
    pub iterations: usize,
}

/// The calibrated recognizer pair plus per-channel calibration details.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub superior: ChannelSpec,
    pub inferiors: Vec<ChannelSpec>,
    pub entries: Vec<CalibrationEntry>,
}

/// Calibrates the deployed recognizer to the spec's absolute WER target on
/// a slice of the train split, then each degraded variant to its pair-gap
/// target against the deployed recognizer's transcripts.
pub fn calibrate_channels(
    spec: &ExperimentSpec,
    corpus: &Corpus,
    seed: u64,
) -> Result<CalibrationReport, HarnessError> {
    let plan = &spec.channels;
    let base = ChannelSpec {
        name: "superior".into(),
        seed,
        variant: 0,
        p_sub: plan.p_sub,
        p_del: plan.p_del,
        p_ins: plan.p_ins,
        confusion_bias: plan.confusion_bias,
        rate_scale: 1.0,
        degradation: Degradation::default(),
        vocab: crate::dataset::domain_vocabulary(&corpus.domain),
        frames_per_token: spec.features.frames_per_token,
    };
    let calib: Vec<&Utterance> = corpus
        .split(Split::Train)
        .take(plan.calibration_utts)
        .collect();
    let outcome = calibrate_gap(
        &base,
        &calib,
        &ScoreAgainst::GroundTruth,
        plan.superior_wer,
        0.0,
        plan.scale_hi,
    )?;
    let superior = outcome.spec;
    let mut entries = vec![CalibrationEntry {
        name: superior.name.clone(),
        target_wer: plan.superior_wer,
        achieved_wer: outcome.achieved_wer,
        rate_scale: superior.rate_scale,
        iterations: outcome.iterations,
    }];

    let mut superior_text = BTreeMap::new();
    for utt in &calib {
        superior_text.insert(utt.id.clone(), superior.transcribe(utt)?.hypothesis);
    }
    let mut inferiors = Vec::new();
    for inferior_plan in &plan.inferiors {
        let degraded = superior.degraded(&inferior_plan.name, inferior_plan.degradation.clone());
        let outcome = calibrate_gap(
            &degraded,
            &calib,
            &ScoreAgainst::Transcripts(&superior_text),
            inferior_plan.gap_wer,
            superior.rate_scale,
            plan.scale_hi,
        )?;
        entries.push(CalibrationEntry {
            name: outcome.spec.name.clone(),
            target_wer: inferior_plan.gap_wer,
            achieved_wer: outcome.achieved_wer,
            rate_scale: outcome.spec.rate_scale,
            iterations: outcome.iterations,
        });
        inferiors.push(outcome.spec);
    }
    Ok(CalibrationReport {
        superior,
        inferiors,
        entries,
    })
}

/// Builds one seed's pseudo-pair dataset: calibrated recognizer pair,
/// filtered correction pairs, acoustic features, and the test set.
pub fn build_data(
    spec: &ExperimentSpec,
    domain: &crate::dataset::DomainSpec,
    seed: u64,
) -> Result<DataBundle, HarnessError> {
    let corpus = synth_corpus(domain, spec.n_utts, seed)?;
    let calibration = calibrate_channels(spec, &corpus, seed)?;
    let superior = calibration.superior;
    let inferiors = calibration.inferiors;

    let mut superior_out = BTreeMap::new();
    for utt in &corpus.utterances {
        superior_out.insert(utt.id.clone(), superior.transcribe(utt)?);
    }
    let superior_text: BTreeMap<String, String> = superior_out
        .iter()
        .map(|(id, t)| (id.clone(), t.hypothesis.clone()))
        .collect();

    let pairs = build_pairs(&corpus, &inferiors, &superior, &spec.filters)?;

    let mut features: FeatureStore = BTreeMap::new();
    for utt in &corpus.utterances {
        features.insert(utt.id.clone(), synth_features(utt, &spec.features, seed)?);
    }

    let mut test = Vec::new();
    for utt in corpus.split(Split::Test) {
        let reference = utt.reference.clone().expect("synthetic corpus has references");
        test.push(TestItem {
            utt_id: utt.id.clone(),
            input_hyp: superior_text[&utt.id].clone(),
            context: transcribed_context(&corpus, utt, &superior_out),
            reference,
        });
    }
    let baseline_test_wer = textops::corpus_wer(
        test.iter()
            .map(|t| (t.utt_id.as_str(), t.input_hyp.as_str(), t.reference.as_str())),
    )?
    .corpus_wer;
    let test_checksum = sha256_hex(&test_file_bytes(&test)?);

    Ok(DataBundle {
        seed,
        corpus,
        superior,
        inferiors,
        pairs,
        features,
        test,
        baseline_test_wer,
        test_checksum,
    })
}

/// Builds one seed's supervised dataset on the source domain: the deployed
/// recognizer's hypotheses paired with ground-truth transcripts. Gold
/// targets carry certainty, so confidence is fixed at zero log-probability;
/// only the pair-WER outlier cut applies.
pub fn build_supervised_data(
    spec: &ExperimentSpec,
    seed: u64,
) -> Result<SupervisedBundle, HarnessError> {
    let corpus = synth_corpus(&spec.source_domain, spec.n_utts, seed)?;
    let superior = calibrate_channels(spec, &corpus, seed)?.superior;
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
        let reference = match utt.reference.as_deref() {
            Some(r) => textops::normalize(r),
            None => continue,
        };
        if reference.is_empty() {
            continue;
        }
        let hyp = superior_out[&utt.id].hypothesis.clone();
        let pair_wer = match textops::wer(&hyp, &reference) {
            Ok(r) => r.corpus_wer,
            Err(_) => continue,
        };
        if pair_wer > spec.filters.max_pair_wer {
            continue;
        }
        bucket.push(CorrectionPair {
            utt_id: utt.id.clone(),
            input_hyp: hyp,
            context: transcribed_context(&corpus, utt, &superior_out),
            target: reference,
            pair_wer,
            target_confidence: 0.0,
            features_ref: utt.id.clone(),
        });
    }
    pairs.train.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
    pairs.valid.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));

    let mut features: FeatureStore = BTreeMap::new();
    for utt in &corpus.utterances {
        features.insert(utt.id.clone(), synth_features(utt, &spec.features, seed)?);
    }
    Ok(SupervisedBundle {
        corpus,
        superior,
        pairs,
        features,
    })
}

fn test_file_bytes(test: &[TestItem]) -> Result<Vec<u8>, HarnessError> {
    let mut bytes = Vec::new();
    for item in test {
        serde_json::to_writer(&mut bytes, item)?;
        bytes.push(b'\n');
    }
    Ok(bytes)
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

fn write_json_pretty<S: Serialize>(path: &Path, value: &S) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Persists one seed's dataset under `dir`.
pub fn persist_data(dir: &Path, bundle: &DataBundle) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    #[derive(Serialize)]
    struct Channels<'a> {
        superior: &'a ChannelSpec,
        inferiors: &'a [ChannelSpec],
    }
    write_json_pretty(
        &dir.join("channels.json"),
        &Channels {
            superior: &bundle.superior,
            inferiors: &bundle.inferiors,
        },
    )?;
    save_pairs(&dir.join("pairs-train.jsonl"), &bundle.pairs.train)?;
    save_pairs(&dir.join("pairs-valid.jsonl"), &bundle.pairs.valid)?;
    save_features(&dir.join("features.bin"), &bundle.features)?;
    fs::write(dir.join("test.jsonl"), test_file_bytes(&bundle.test)?)?;
    Ok(())
}

fn persist_supervised(dir: &Path, bundle: &SupervisedBundle) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    write_json_pretty(&dir.join("channel.json"), &bundle.superior)?;
    save_pairs(&dir.join("pairs-train.jsonl"), &bundle.pairs.train)?;
    save_pairs(&dir.join("pairs-valid.jsonl"), &bundle.pairs.valid)?;
    save_features(&dir.join("features.bin"), &bundle.features)?;
    Ok(())
}

/// Word-level vocabulary over everything the model will read or write
/// during training.
pub fn pairs_vocab(pairs: &PairSet) -> Vocab {
    let texts = pairs
        .train
        .iter()
        .chain(pairs.valid.iter())
        .flat_map(|p| [p.input_hyp.as_str(), p.context.as_str(), p.target.as_str()]);
    Vocab::build(texts, TokenLevel::Word)
}

fn features_for<'a>(
    model: &CorrectionModel<f32>,
    store: &'a FeatureStore,
    key: &str,
) -> Result<Option<&'a crate::dataset::FeatureSequence>, HarnessError> {
    if !model.config.use_acoustic {
        return Ok(None);
    }
    store
        .get(key)
        .map(Some)
        .ok_or_else(|| HarnessError::MissingFeatures(key.to_owned()))
}

/// Decodes corrections for train pairs and scores them against the pair
/// targets.
pub fn corrected_train_wer(
    model: &CorrectionModel<f32>,
    pairs: &[CorrectionPair],
    features: &FeatureStore,
    beam_size: usize,
) -> Result<f64, HarnessError> {
    let mut triples = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let feats = features_for(model, features, &pair.features_ref)?;
        let corrected = model.correct(
            &ModelInput {
                hyp: &pair.input_hyp,
                context: &pair.context,
                features: feats,
            },
            SourceGates::all(),
            beam_size,
            model.config.max_tgt_len,
        )?;
        triples.push((pair.utt_id.clone(), corrected, pair.target.clone()));
    }
    Ok(textops::corpus_wer(
        triples
            .iter()
            .map(|(id, hyp, target)| (id.as_str(), hyp.as_str(), target.as_str())),
    )?
    .corpus_wer)
}

/// Decodes corrections for the test set; returns the per-utterance outputs
/// and their corpus WER against ground truth.
pub fn corrected_test_outputs(
    model: &CorrectionModel<f32>,
    test: &[TestItem],
    features: &FeatureStore,
    beam_size: usize,
) -> Result<(Vec<TranscriptLine>, f64), HarnessError> {
    let mut outputs = Vec::with_capacity(test.len());
    for item in test {
        let feats = features_for(model, features, &item.utt_id)?;
        let corrected = model.correct(
            &ModelInput {
                hyp: &item.input_hyp,
                context: &item.context,
                features: feats,
            },
            SourceGates::all(),
            beam_size,
            model.config.max_tgt_len,
        )?;
        outputs.push(TranscriptLine {
            utt_id: item.utt_id.clone(),
            hypothesis: corrected,
            token_logprobs: None,
            context: None,
        });
    }
    let wer = textops::corpus_wer(outputs.iter().zip(test).map(|(o, t)| {
        (
            o.utt_id.as_str(),
            o.hypothesis.as_str(),
            t.reference.as_str(),
        )
    }))?
    .corpus_wer;
    Ok((outputs, wer))
}

/// Inputs to one training run plus the evaluation set it is scored on.
pub struct RunInputs<'a> {
    pub system: String,
    pub seed: u64,
    pub model_cfg: ModelConfig,
    pub pairs: &'a PairSet,
    pub train_features: &'a FeatureStore,
    pub test: &'a [TestItem],
    pub test_features: &'a FeatureStore,
    pub test_checksum: &'a str,
    pub baseline_test_wer: f64,
}

/// Everything a finished run leaves behind in memory.
pub struct RunOutcome {
    pub row: ResultRow,
    pub corrected: Vec<TranscriptLine>,
    pub phases: Vec<PhaseReport>,
}

#[derive(Serialize)]
struct RunConfigEcho<'a> {
    system: &'a str,
    seed: u64,
    model: &'a ModelConfig,
    train: &'a crate::training::TrainConfig,
}

#[derive(Serialize, Deserialize)]
struct RunResultFile {
    system: String,
    seed: u64,
    train_wer: f64,
    test_wer: f64,
    baseline_test_wer: f64,
    test_checksum: String,
    phases: Vec<PhaseReport>,
}

/// Trains one corrector and evaluates it; everything lands in `run_dir`.
pub fn execute_run(
    spec: &ExperimentSpec,
    inputs: &RunInputs,
    exp_dir: &Path,
    rel_run_dir: &str,
) -> Result<RunOutcome, HarnessError> {
    let run_dir: PathBuf = exp_dir.join(rel_run_dir);
    fs::create_dir_all(&run_dir)?;
    let mut train_cfg = spec.train.clone();
    train_cfg.seed = inputs.seed;
    write_json_pretty(
        &run_dir.join("config.echo"),
        &RunConfigEcho {
            system: &inputs.system,
            seed: inputs.seed,
            model: &inputs.model_cfg,
            train: &train_cfg,
        },
    )?;

    let vocab = pairs_vocab(inputs.pairs);
    let model = CorrectionModel::new(inputs.model_cfg.clone(), vocab, inputs.seed)?;
    let mut trainer = Trainer::with_run_dir(model, &run_dir)?;
    let valid_cap = spec.valid_eval_cap.min(inputs.pairs.valid.len());
    let data = TrainData {
        train: &inputs.pairs.train,
        valid: &inputs.pairs.valid[..valid_cap],
        features: inputs.train_features,
    };
    let phases = trainer.train_full_with(&data, &train_cfg, |phase| {
        spec.phase_steps.get(phase.tag()).copied()
    })?;

    let train_cap = spec.train_eval_cap.min(inputs.pairs.train.len());
    let train_wer = corrected_train_wer(
        &trainer.model,
        &inputs.pairs.train[..train_cap],
        inputs.train_features,
        spec.beam_size,
    )?;
    let (corrected, test_wer) = corrected_test_outputs(
        &trainer.model,
        inputs.test,
        inputs.test_features,
        spec.beam_size,
    )?;

    let mut bytes = Vec::new();
    for line in &corrected {
        serde_json::to_writer(&mut bytes, line)?;
        bytes.push(b'\n');
    }
    fs::write(run_dir.join("test-corrected.jsonl"), bytes)?;
    write_json_pretty(
        &run_dir.join("result.json"),
        &RunResultFile {
            system: inputs.system.clone(),
            seed: inputs.seed,
            train_wer,
            test_wer,
            baseline_test_wer: inputs.baseline_test_wer,
            test_checksum: inputs.test_checksum.to_owned(),
            phases: phases.clone(),
        },
    )?;

    Ok(RunOutcome {
        row: ResultRow {
            system: inputs.system.clone(),
            seed: inputs.seed,
            train_wer,
            test_wer,
            run_dir: rel_run_dir.to_owned(),
        },
        corrected,
        phases,
    })
}

/// Trains and evaluates every (ablation, seed) combination on the target
/// domain, writing data, run directories, and reports under `out`.
pub fn run_ablation(spec: &ExperimentSpec, out: &Path) -> Result<ResultTable, HarnessError> {
    spec.validate().map_err(HarnessError::InvalidSpec)?;
    if spec.ablations.is_empty() {
        return Err(HarnessError::InvalidSpec(
            "at least one ablation is required".into(),
        ));
    }
    fs::create_dir_all(out)?;
    write_json_pretty(&out.join("config.echo"), spec)?;

    let mut rows = Vec::new();
    let mut baseline = Vec::new();
    let mut checksums = BTreeMap::new();
    for &seed in &spec.seeds {
        let bundle = build_data(spec, &spec.target_domain, seed)?;
        persist_data(&out.join("data").join(format!("seed-{seed}")), &bundle)?;
        baseline.push(BaselineCell {
            seed,
            test_wer: bundle.baseline_test_wer,
        });
        checksums.insert(seed, bundle.test_checksum.clone());
        for &ablation in &spec.ablations {
            let rel = format!("runs/{}-seed-{}", ablation.tag(), seed);
            let outcome = execute_run(
                spec,
                &RunInputs {
                    system: ablation.tag().to_owned(),
                    seed,
                    model_cfg: ablation.apply(&spec.model),
                    pairs: &bundle.pairs,
                    train_features: &bundle.features,
                    test: &bundle.test,
                    test_features: &bundle.features,
                    test_checksum: &bundle.test_checksum,
                    baseline_test_wer: bundle.baseline_test_wer,
                },
                out,
                &rel,
            )?;
            rows.push(outcome.row);
        }
    }

    let system_order: Vec<String> = spec.ablations.iter().map(|a| a.tag().to_owned()).collect();
    let table = ResultTable::assemble(
        &spec.name,
        &system_order,
        rows,
        baseline,
        checksums,
        Vec::new(),
    );
    report::write_reports(out, &table)?;
    Ok(table)
}

/// Trains the unsupervised (target pseudo pairs) and supervised (source
/// ground truth) correctors and scores both on the identical target test
/// set.
pub fn run_supervision_compare(
    spec: &ExperimentSpec,
    out: &Path,
) -> Result<ResultTable, HarnessError> {
    spec.validate().map_err(HarnessError::InvalidSpec)?;
    if spec.supervision.is_empty() {
        return Err(HarnessError::InvalidSpec(
            "at least one supervision system is required".into(),
        ));
    }
    fs::create_dir_all(out)?;
    write_json_pretty(&out.join("config.echo"), spec)?;

    let full_model = config::Ablation::Full.apply(&spec.model);
    let mut rows = Vec::new();
    let mut baseline = Vec::new();
    let mut checksums = BTreeMap::new();
    let mut examples = Vec::new();
    for &seed in &spec.seeds {
        let target = build_data(spec, &spec.target_domain, seed)?;
        persist_data(
            &out.join("data").join(format!("seed-{seed}")).join("target"),
            &target,
        )?;
        baseline.push(BaselineCell {
            seed,
            test_wer: target.baseline_test_wer,
        });
        checksums.insert(seed, target.test_checksum.clone());

        let mut outputs: BTreeMap<Supervision, Vec<TranscriptLine>> = BTreeMap::new();
        for &system in &spec.supervision {
            let rel = format!("runs/{}-seed-{}", system.tag(), seed);
            let outcome = match system {
                Supervision::UnsupPseudo => execute_run(
                    spec,
                    &RunInputs {
                        system: system.tag().to_owned(),
                        seed,
                        model_cfg: full_model.clone(),
                        pairs: &target.pairs,
                        train_features: &target.features,
                        test: &target.test,
                        test_features: &target.features,
                        test_checksum: &target.test_checksum,
                        baseline_test_wer: target.baseline_test_wer,
                    },
                    out,
                    &rel,
                )?,
                Supervision::SupSourceGroundtruth => {
                    let source = build_supervised_data(spec, seed)?;
                    persist_supervised(
                        &out.join("data").join(format!("seed-{seed}")).join("source"),
                        &source,
                    )?;
                    execute_run(
                        spec,
                        &RunInputs {
                            system: system.tag().to_owned(),
                            seed,
                            model_cfg: full_model.clone(),
                            pairs: &source.pairs,
                            train_features: &source.features,
                            test: &target.test,
                            test_features: &target.features,
                            test_checksum: &target.test_checksum,
                            baseline_test_wer: target.baseline_test_wer,
                        },
                        out,
                        &rel,
                    )?
                }
            };
            outputs.insert(system, outcome.corrected);
            rows.push(outcome.row);
        }

        if examples.len() < spec.example_cap {
            collect_examples(spec, &target, &outputs, &mut examples);
        }
    }

    let system_order: Vec<String> = spec.supervision.iter().map(|s| s.tag().to_owned()).collect();
    let table = ResultTable::assemble(
        &spec.name,
        &system_order,
        rows,
        baseline,
        checksums,
        examples,
    );
    report::write_reports(out, &table)?;
    Ok(table)
}

/// Pulls example corrections where the supervised system produced words
/// that never occur in the target domain.
fn collect_examples(
    spec: &ExperimentSpec,
    target: &DataBundle,
    outputs: &BTreeMap<Supervision, Vec<TranscriptLine>>,
    examples: &mut Vec<ExampleRow>,
) {
    let (Some(sup), Some(unsup)) = (
        outputs.get(&Supervision::SupSourceGroundtruth),
        outputs.get(&Supervision::UnsupPseudo),
    ) else {
        return;
    };
    let target_freqs = target.corpus.word_frequencies();
    for ((item, sup_line), unsup_line) in target.test.iter().zip(sup).zip(unsup) {
        if examples.len() >= spec.example_cap {
            break;
        }
        let flagged: Vec<String> = sup_line
            .hypothesis
            .split_whitespace()
            .filter(|w| !target_freqs.contains_key(*w))
            .map(str::to_owned)
            .collect();
        if flagged.is_empty() {
            continue;
        }
        examples.push(ExampleRow {
            utt_id: item.utt_id.clone(),
            input: item.input_hyp.clone(),
            supervised: sup_line.hypothesis.clone(),
            unsupervised: unsup_line.hypothesis.clone(),
            reference: item.reference.clone(),
            flagged,
        });
    }
}
