//! Smoke tests for the command-line interface: each subcommand runs against
//! a miniature experiment and the outputs are checked for shape, not quality.

use std::path::Path;
use std::process::{Command, Output};

use asrfix::harness::config::{Ablation, ChannelPlan, ExperimentSpec, InferiorPlan};
use asrfix::channel::Degradation;
use asrfix::dataset::{DomainSpec, FeatureConfig};
use asrfix::model::ModelConfig;
use asrfix::training::TrainConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_asrfix"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn asrfix");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// A deliberately tiny experiment so CLI round-trips finish in seconds.
fn tiny_spec() -> ExperimentSpec {
    ExperimentSpec {
        name: "cli-smoke".into(),
        target_domain: DomainSpec { name: "support".into(), ..DomainSpec::default() },
        source_domain: DomainSpec { name: "finance".into(), ..DomainSpec::default() },
        n_utts: 150,
        channels: ChannelPlan {
            calibration_utts: 60,
            inferiors: vec![InferiorPlan {
                name: "dropout".into(),
                degradation: Degradation { dropout_rate: 0.10, specaugment: None },
                gap_wer: 0.20,
            }],
            ..ChannelPlan::default()
        },
        features: FeatureConfig { frames_per_token: 4, width: 8, noise_sd: 1.0 },
        model: ModelConfig {
            d_model: 16,
            n_heads: 2,
            ffn_mult: 2,
            n_text_layers: 1,
            n_acoustic_layers: 1,
            n_decoder_layers: 1,
            feature_width: 8,
            conv_channels: [4, 4, 4],
            max_src_len: 32,
            max_tgt_len: 12,
            tie_output: true,
            use_text: true,
            use_context: true,
            use_acoustic: true,
        },
        train: TrainConfig {
            lr: 1e-3,
            batch_size: 4,
            max_steps: 4,
            eval_every: 2,
            early_stop_patience: 10,
            ..TrainConfig::default()
        },
        ablations: vec![Ablation::Full],
        seeds: vec![7],
        beam_size: 2,
        train_eval_cap: 10,
        valid_eval_cap: 10,
        example_cap: 4,
        ..ExperimentSpec::default()
    }
}

fn write_spec(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("spec.json");
    std::fs::write(&path, serde_json::to_string_pretty(&tiny_spec()).unwrap()).unwrap();
    path
}

#[test]
fn evaluate_reports_zero_wer_for_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let hyp = dir.path().join("hyp.jsonl");
    let lines = concat!(
        "{\"utt_id\":\"u1\",\"hypothesis\":\"baba kodi rime\"}\n",
        "{\"utt_id\":\"u2\",\"hypothesis\":\"gato zumi\"}\n",
    );
    std::fs::write(&hyp, lines).unwrap();
    let out = run_ok(bin().arg("evaluate").arg("--hyp").arg(&hyp).arg("--ref").arg(&hyp));
    let summary: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("summary line is JSON");
    assert_eq!(summary["corpus_wer"], 0.0, "identical files must score zero: {summary}");
}

#[test]
fn evaluate_fails_cleanly_on_missing_file() {
    let out = bin()
        .arg("evaluate")
        .arg("--hyp")
        .arg("/nonexistent/h.jsonl")
        .arg("--ref")
        .arg("/nonexistent/r.jsonl")
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    assert!(err["error"].is_string(), "stderr: {err}");
}

#[test]
fn calibrate_writes_channel_report_within_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());
    run_ok(bin().arg("calibrate").arg("--config").arg(&spec).arg("--out").arg(dir.path()));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("calibration.json")).unwrap())
            .unwrap();
    let entries = report["entries"].as_array().unwrap();
    assert!(!entries.is_empty());
    for e in entries {
        let target = e["target_wer"].as_f64().unwrap();
        let achieved = e["achieved_wer"].as_f64().unwrap();
        assert!(
            (target - achieved).abs() <= 0.0101,
            "calibration entry off target: {e}"
        );
    }
}

#[test]
fn gen_data_train_and_correct_round_trip_with_beam_matching_greedy() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path());

    let data_dir = dir.path().join("data");
    let out = run_ok(
        bin().arg("gen-data").arg("--config").arg(&spec).arg("--out").arg(&data_dir),
    );
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["pairs_train"].as_u64().unwrap() > 0, "{summary}");
    assert!(data_dir.join("pairs-train.jsonl").exists());
    assert!(data_dir.join("features.bin").exists());

    let run_dir = dir.path().join("run");
    run_ok(
        bin()
            .arg("train")
            .arg("--config")
            .arg(&spec)
            .arg("--data")
            .arg(&data_dir)
            .arg("--out")
            .arg(&run_dir),
    );
    let ckpt = run_dir.join("checkpoints").join("final.ckpt");
    assert!(ckpt.exists(), "training must leave a final checkpoint");
    assert!(run_dir.join("metrics.log").exists());

    let hyp = dir.path().join("to-correct.jsonl");
    std::fs::write(
        &hyp,
        concat!(
            "{\"utt_id\":\"x1\",\"hypothesis\":\"baba kodi\",\"context\":\"\"}\n",
            "{\"utt_id\":\"x2\",\"hypothesis\":\"gato zumi pelo\"}\n",
        ),
    )
    .unwrap();
    let beam_out = dir.path().join("beam.jsonl");
    let greedy_out = dir.path().join("greedy.jsonl");
    run_ok(
        bin()
            .arg("correct")
            .arg("--model")
            .arg(&ckpt)
            .arg("--hyp")
            .arg(&hyp)
            .arg("--out")
            .arg(&beam_out)
            .arg("--beam")
            .arg("1"),
    );
    run_ok(
        bin()
            .arg("correct")
            .arg("--model")
            .arg(&ckpt)
            .arg("--hyp")
            .arg(&hyp)
            .arg("--out")
            .arg(&greedy_out)
            .arg("--greedy"),
    );
    let beam_bytes = std::fs::read(&beam_out).unwrap();
    let greedy_bytes = std::fs::read(&greedy_out).unwrap();
    assert_eq!(beam_bytes, greedy_bytes, "beam width 1 must equal greedy decoding");
    assert_eq!(beam_bytes.iter().filter(|&&b| b == b'\n').count(), 2);
}
