//! Black-box checks of the binary: argument surface, exit codes, stdout
//! JSON outcomes, and a full prepare/train/eval chain.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_factcheck"))
}

fn fixture_dir() -> PathBuf {
    let path: PathBuf = [
        env!("CARGO_MANIFEST_DIR"),
        "..",
        "factcheck",
        "tests",
        "fixtures",
        "tiny",
    ]
    .iter()
    .collect();
    path.canonicalize().unwrap()
}

fn write_config(dir: &Path, out_dir: &Path) -> PathBuf {
    let fixtures = fixture_dir();
    let doc = json!({
        "dataset": {
            "name": "pubhealth",
            "format": {"kind": "tabular"},
            "train_path": fixtures.join("train.tsv").to_str().unwrap(),
            "validation_path": fixtures.join("validation.tsv").to_str().unwrap(),
            "test_path": fixtures.join("test.tsv").to_str().unwrap(),
            "mapping": {
                "claim": "claim",
                "label": "label",
                "id": "id",
                "evidence": "evidence",
                "gold_summary": "summary"
            },
            "labels": {
                "name": "verdicts",
                "labels": ["true", "false", "mixture", "unproven"]
            }
        },
        "evidence": {"k": 2},
        "model": {
            "backbone": {
                "d_model": 8,
                "encoder_layers": 1,
                "decoder_layers": 1,
                "attention_heads": 2,
                "max_source_len": 32,
                "max_target_len": 10,
                "classifier_hidden_dim": 8,
                "classifier_final_activation": "none"
            }
        },
        "objective": {"loss_mode": "static"},
        "train": {
            "max_steps": 2,
            "learning_rate": 0.005,
            "dropout": 0.0,
            "batch_size": 4,
            "max_summary_len": 8
        },
        "output": {"dir": out_dir.to_str().unwrap()}
    });
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&doc).unwrap()).unwrap();
    path
}

fn stdout_json(output: &Output) -> Value {
    serde_json::from_slice(&output.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&output.stdout)
        )
    })
}

#[test]
fn help_lists_every_subcommand() {
    let output = bin().arg("--help").output().unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    for name in [
        "prepare",
        "select-evidence",
        "train",
        "eval",
        "sweep",
        "report",
    ] {
        assert!(text.contains(name), "help lacks {name}:\n{text}");
    }
}

#[test]
fn version_flag_succeeds() {
    let output = bin().arg("--version").output().unwrap();
    assert!(output.status.success());
    assert!(String::from_utf8(output.stdout)
        .unwrap()
        .contains("factcheck"));
}

#[test]
fn missing_arguments_exit_with_usage_errors() {
    let output = bin().output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let output = bin().arg("no-such-command").output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let output = bin().arg("prepare").output().unwrap();
    assert_eq!(output.status.code(), Some(2), "--config is required");
}

#[test]
fn missing_config_file_exits_two_with_a_message() {
    let output = bin()
        .args(["prepare", "--config", "/no/such/file.json"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.starts_with("error:"), "{stderr}");
}

#[test]
fn full_chain_prepare_train_eval_report() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("out");
    let config = write_config(dir.path(), &out_dir);

    let output = bin()
        .args(["prepare", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let outcome = stdout_json(&output);
    assert_eq!(outcome["splits"].as_array().unwrap().len(), 3);

    let output = bin()
        .args(["select-evidence", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );

    let output = bin()
        .args(["train", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let outcome = stdout_json(&output);
    assert_eq!(outcome["state"]["step"], 2);
    assert!(out_dir.join("checkpoint").join("params.bin").exists());

    let output = bin()
        .args(["eval", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let outcome = stdout_json(&output);
    assert_eq!(outcome["report"]["num_records"], 4);
    assert!(out_dir.join("eval").join("report.json").exists());

    let output = bin()
        .args(["report", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn out_and_seed_flags_override_the_config() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), &dir.path().join("ignored"));
    let other = dir.path().join("elsewhere");
    let output = bin()
        .args([
            "prepare",
            "--config",
            config.to_str().unwrap(),
            "--out",
            other.to_str().unwrap(),
            "--seed",
            "99",
        ])
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(other.join("prepared").join("train.jsonl").exists());
    assert!(!dir.path().join("ignored").exists());
}

#[test]
fn eval_before_training_exits_two() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("out");
    let config = write_config(dir.path(), &out_dir);
    let output = bin()
        .args(["prepare", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let output = bin()
        .args(["eval", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8(output.stderr)
        .unwrap()
        .contains("checkpoint"));
}

#[test]
fn degenerate_data_exits_four() {
    let dir = TempDir::new().unwrap();
    let raw = dir.path().join("raw.tsv");
    std::fs::write(
        &raw,
        "id\tclaim\tlabel\tevidence\tsummary\n\
         a\tlone claim\ttrue\tsome evidence text\t\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let config_path = write_config(dir.path(), &out_dir);
    let mut doc: Value = serde_json::from_slice(&std::fs::read(&config_path).unwrap()).unwrap();
    doc["dataset"]["train_path"] = json!(raw.to_str().unwrap());
    doc["dataset"]["labels"]["labels"] = json!(["true", "false"]);
    let dataset = doc["dataset"].as_object_mut().unwrap();
    dataset.remove("validation_path");
    dataset.remove("test_path");
    std::fs::write(&config_path, serde_json::to_vec(&doc).unwrap()).unwrap();

    // Without the flag the record survives; with it nothing is left.
    let output = bin()
        .args(["prepare", "--config", config_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let output = bin()
        .args([
            "prepare",
            "--config",
            config_path.to_str().unwrap(),
            "--small-variant",
        ])
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
}
