//! Command-line entry point: dataset generation, channel calibration,
//! training, correction, scoring, and the ablation / supervision
//! experiments, all driven by one JSON experiment config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use asrfix::dataset::{
    load_features, load_pairs, read_transcript_lines, synth_corpus, write_transcript_lines,
    PairSet, TranscriptLine,
};
use asrfix::harness::config::ExperimentSpec;
use asrfix::harness::{
    self, build_data, calibrate_channels, persist_data, run_ablation, run_supervision_compare,
};
use asrfix::model::checkpoint;
use asrfix::model::{ModelInput, SourceGates};
use asrfix::textops;
use asrfix::training::{TrainData, Trainer};

#[derive(Parser)]
#[command(
    name = "asrfix",
    version,
    about = "Unsupervised ASR error correction on synthetic recognizer pairs"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Options shared by every experiment-config-driven subcommand.
#[derive(Args)]
struct SpecArgs {
    /// Experiment config file (JSON). Defaults to the built-in desk setup.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl SpecArgs {
    fn load(&self) -> Result<ExperimentSpec, CliError> {
        let mut spec = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::new(format!("cannot read {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::new(format!("bad config {}: {e}", path.display())))?
            }
            None => ExperimentSpec::default(),
        };
        if let Some(seed) = self.seed {
            spec.seeds = vec![seed];
            spec.train.seed = seed;
        }
        spec.validate().map_err(CliError::new)?;
        Ok(spec)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Builds one seed's calibrated dataset: channels, correction pairs,
    /// acoustic features, and the held-out test file.
    GenData {
        #[command(flatten)]
        spec: SpecArgs,
        /// Output data directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Calibrates the recognizer pair and reports the achieved WERs.
    Calibrate {
        #[command(flatten)]
        spec: SpecArgs,
        /// Output directory for calibration.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains the corrector on a generated dataset.
    Train {
        #[command(flatten)]
        spec: SpecArgs,
        /// Data directory produced by gen-data; generated in-memory when
        /// omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run directory for metrics, checkpoints, and the config echo.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the per-phase step budget.
        #[arg(long)]
        steps: Option<usize>,
        /// Overrides the learning rate.
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Corrects a hypothesis file with a trained model.
    Correct {
        /// Checkpoint produced by train.
        #[arg(long)]
        model: PathBuf,
        /// Hypothesis file (JSON lines with utt_id, hypothesis, optional
        /// context).
        #[arg(long)]
        hyp: PathBuf,
        /// Feature container for models that read acoustics.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Output file for corrected transcriptions.
        #[arg(long)]
        out: PathBuf,
        /// Beam width.
        #[arg(long, default_value_t = 4)]
        beam: usize,
        /// Greedy decoding (same as --beam 1).
        #[arg(long)]
        greedy: bool,
    },
    /// Scores a hypothesis file against a reference file.
    Evaluate {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Where to write the full scoring report (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trains and scores every (ablation, seed) combination.
    Ablate {
        #[command(flatten)]
        spec: SpecArgs,
        /// Experiment output directory.
        #[arg(long)]
        out: PathBuf,
        /// Compare unsupervised vs supervised training instead of input
        /// ablations.
        #[arg(long)]
        supervision: bool,
    },
    /// Re-renders report.md and plots from an experiment's report.json.
    Report {
        /// Experiment directory containing report.json.
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Debug)]
struct CliError(String);

impl CliError {
    fn new(message: impl ToString) -> CliError {
        CliError(message.to_string())
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> CliError {
        CliError(e.to_string())
    }
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError(message)) => {
            // Single machine-parsable line on stderr.
            let line = serde_json::to_string(&ErrorLine { error: &message })
                .unwrap_or_else(|_| format!("{{\"error\":\"{message}\"}}"));
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}

fn println_json<S: Serialize>(value: &S) -> Result<(), CliError> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn write_json_file<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::GenData { spec, out } => gen_data(&spec.load()?, &out),
        Cmd::Calibrate { spec, out } => calibrate(&spec.load()?, &out),
        Cmd::Train {
            spec,
            data,
            out,
            steps,
            lr,
        } => {
            let mut spec = spec.load()?;
            if let Some(steps) = steps {
                spec.train.max_steps = steps;
            }
            if let Some(lr) = lr {
                spec.train.lr = lr;
            }
            spec.validate().map_err(CliError::new)?;
            train(&spec, data.as_deref(), &out)
        }
        Cmd::Correct {
            model,
            hyp,
            features,
            out,
            beam,
            greedy,
        } => correct(&model, &hyp, features.as_deref(), &out, if greedy { 1 } else { beam }),
        Cmd::Evaluate {
            hyp,
            reference,
            out,
        } => evaluate(&hyp, &reference, out.as_deref()),
        Cmd::Ablate {
            spec,
            out,
            supervision,
        } => {
            let spec = spec.load()?;
            let table = if supervision {
                run_supervision_compare(&spec, &out)?
            } else {
                run_ablation(&spec, &out)?
            };
            println_json(&table)
        }
        Cmd::Report { dir } => report(&dir),
    }
}

#[derive(Serialize)]
struct GenDataSummary {
    seed: u64,
    pairs_train: usize,
    pairs_valid: usize,
    test_utterances: usize,
    baseline_test_wer: f64,
    test_checksum: String,
    out: String,
}

fn gen_data(spec: &ExperimentSpec, out: &Path) -> Result<(), CliError> {
    let seed = spec.seeds[0];
    let bundle = build_data(spec, &spec.target_domain, seed)?;
    persist_data(out, &bundle)?;
    write_json_file(&out.join("config.echo"), spec)?;
    println_json(&GenDataSummary {
        seed,
        pairs_train: bundle.pairs.train.len(),
        pairs_valid: bundle.pairs.valid.len(),
        test_utterances: bundle.test.len(),
        baseline_test_wer: bundle.baseline_test_wer,
        test_checksum: bundle.test_checksum,
        out: out.display().to_string(),
    })
}

fn calibrate(spec: &ExperimentSpec, out: &Path) -> Result<(), CliError> {
    let seed = spec.seeds[0];
    let corpus = synth_corpus(&spec.target_domain, spec.n_utts, seed)?;
    let calibration = calibrate_channels(spec, &corpus, seed)?;
    fs::create_dir_all(out)?;
    write_json_file(&out.join("config.echo"), spec)?;
    write_json_file(&out.join("calibration.json"), &calibration)?;
    println_json(&calibration.entries)
}

#[derive(Serialize)]
struct TrainSummary {
    seed: u64,
    phases: Vec<asrfix::training::PhaseReport>,
    final_checkpoint: String,
}

fn train(spec: &ExperimentSpec, data: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let seed = spec.seeds[0];
    let (pairs, features) = match data {
        Some(dir) => {
            let pairs = PairSet {
                train: load_pairs(&dir.join("pairs-train.jsonl"))?,
                valid: load_pairs(&dir.join("pairs-valid.jsonl"))?,
            };
            (pairs, load_features(&dir.join("features.bin"))?)
        }
        None => {
            let bundle = build_data(spec, &spec.target_domain, seed)?;
            (bundle.pairs, bundle.features)
        }
    };

    fs::create_dir_all(out)?;
    let mut train_cfg = spec.train.clone();
    train_cfg.seed = seed;
    #[derive(Serialize)]
    struct Echo<'a> {
        seed: u64,
        model: &'a asrfix::model::ModelConfig,
        train: &'a asrfix::training::TrainConfig,
    }
    write_json_file(
        &out.join("config.echo"),
        &Echo {
            seed,
            model: &spec.model,
            train: &train_cfg,
        },
    )?;

    let vocab = harness::pairs_vocab(&pairs);
    let model = asrfix::model::CorrectionModel::<f32>::new(spec.model.clone(), vocab, seed)?;
    let mut trainer = Trainer::with_run_dir(model, out)?;
    let valid_cap = spec.valid_eval_cap.min(pairs.valid.len());
    let phases = trainer.train_full(
        &TrainData {
            train: &pairs.train,
            valid: &pairs.valid[..valid_cap],
            features: &features,
        },
        &train_cfg,
    )?;
    println_json(&TrainSummary {
        seed,
        phases,
        final_checkpoint: out.join("checkpoints/final.ckpt").display().to_string(),
    })
}

#[derive(Serialize)]
struct CorrectSummary {
    utterances: usize,
    beam: usize,
    out: String,
}

fn correct(
    model_path: &Path,
    hyp: &Path,
    features: Option<&Path>,
    out: &Path,
    beam: usize,
) -> Result<(), CliError> {
    if beam == 0 {
        return Err(CliError::new("beam width must be at least 1"));
    }
    let loaded = checkpoint::load::<f32>(model_path)?;
    let model = loaded.model;
    let store = match features {
        Some(path) => load_features(path)?,
        None => BTreeMap::new(),
    };
    let lines = read_transcript_lines(hyp)?;
    let mut corrected = Vec::with_capacity(lines.len());
    for line in &lines {
        let feats = if model.config.use_acoustic {
            store.get(&line.utt_id)
        } else {
            None
        };
        if model.config.use_acoustic && feats.is_none() && features.is_some() {
            return Err(CliError::new(format!(
                "no features for utterance `{}` in the container",
                line.utt_id
            )));
        }
        let output = model.correct(
            &ModelInput {
                hyp: &line.hypothesis,
                context: line.context.as_deref().unwrap_or(""),
                features: feats,
            },
            SourceGates::all(),
            beam,
            model.config.max_tgt_len,
        )?;
        corrected.push(TranscriptLine {
            utt_id: line.utt_id.clone(),
            hypothesis: output,
            token_logprobs: None,
            context: None,
        });
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_transcript_lines(out, &corrected)?;
    println_json(&CorrectSummary {
        utterances: corrected.len(),
        beam,
        out: out.display().to_string(),
    })
}

fn evaluate(hyp: &Path, reference: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let hyps = read_transcript_lines(hyp)?;
    let refs: BTreeMap<String, String> = read_transcript_lines(reference)?
        .into_iter()
        .map(|l| (l.utt_id, l.hypothesis))
        .collect();
    let mut triples = Vec::with_capacity(hyps.len());
    for line in &hyps {
        let r = refs.get(&line.utt_id).ok_or_else(|| {
            CliError::new(format!(
                "utterance `{}` missing from the reference file",
                line.utt_id
            ))
        })?;
        triples.push((line.utt_id.as_str(), line.hypothesis.as_str(), r.as_str()));
    }
    let report = textops::corpus_wer(triples)?;
    if let Some(path) = out {
        write_json_file(path, &report)?;
    }
    #[derive(Serialize)]
    struct Summary {
        corpus_wer: f64,
        total_errors: usize,
        total_ref_words: usize,
        utterances: usize,
    }
    println_json(&Summary {
        corpus_wer: report.corpus_wer,
        total_errors: report.total_errors,
        total_ref_words: report.total_ref_words,
        utterances: report.utterances.len(),
    })
}

fn report(dir: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(dir.join("report.json"))
        .map_err(|e| CliError::new(format!("cannot read report.json in {}: {e}", dir.display())))?;
    let table: harness::ResultTable = serde_json::from_str(&text)?;
    harness::report::write_reports(dir, &table)?;
    println_json(&serde_json::json!({
        "report_md": dir.join("report.md").display().to_string(),
        "plot": dir.join("plots/test-wer.svg").display().to_string(),
    }))
}
