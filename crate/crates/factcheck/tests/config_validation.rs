//! Run-config parsing: defaults, strict field checking, the
//! backbone/checkpoint exclusivity rule, dot-path overrides, and the
//! fusion into the trainer's view.

use std::collections::BTreeMap;

use factcheck::backbone::GenerationStrategy;
use factcheck::config::{DataFormat, RunConfig, SelectionMethod};
use factcheck::objective::LossMode;
use factcheck::trainer::DEFAULT_INPUT_TEMPLATE;
use serde_json::{json, Value};
use tempfile::TempDir;

fn base_doc() -> Value {
    json!({
        "dataset": {
            "name": "pubhealth",
            "format": {"kind": "tabular"},
            "mapping": {
                "claim": "claim",
                "label": "label",
                "evidence": "main_text",
                "gold_summary": "explanation"
            },
            "labels": {
                "name": "verdicts",
                "labels": ["true", "false", "mixture", "unproven"]
            }
        },
        "model": {
            "backbone": {
                "d_model": 8,
                "encoder_layers": 1,
                "decoder_layers": 1,
                "attention_heads": 2,
                "max_source_len": 32,
                "max_target_len": 16,
                "classifier_hidden_dim": 8
            }
        },
        "objective": {"loss_mode": "static"},
        "train": {"max_steps": 10}
    })
}

fn parse(doc: Value) -> Result<RunConfig, factcheck::Error> {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("run.json");
    std::fs::write(&path, serde_json::to_vec(&doc).unwrap()).unwrap();
    RunConfig::load(&path)
}

#[test]
fn minimal_document_fills_every_default() {
    let config = parse(base_doc()).unwrap();
    assert_eq!(config.evidence.k, 5);
    assert_eq!(config.evidence.method, SelectionMethod::Ranked);
    assert_eq!(config.evidence.template, DEFAULT_INPUT_TEMPLATE);
    assert!(config.evidence.extra_abbreviations.is_empty());
    assert_eq!(config.train.learning_rate, 1e-4);
    assert_eq!(config.train.dropout, 0.1);
    assert_eq!(config.train.batch_size, 4);
    assert_eq!(config.train.seed, 0);
    assert_eq!(config.train.max_summary_len, 48);
    assert_eq!(config.train.generation, GenerationStrategy::Greedy);
    assert_eq!(config.objective.static_weights.w_s, 0.5);
    assert_eq!(config.objective.static_weights.w_c, 0.5);
    assert_eq!(config.output.dir, std::path::PathBuf::from("out"));
    assert!(!config.output.decimal_comma);
    assert!(!config.output.rouge_stemming);
    assert!(config.sweep.is_none());
    let space = config.label_space().unwrap();
    assert_eq!(space.len(), 4);
    assert!(space.nei_id().is_none());
}

#[test]
fn unknown_fields_fail_loudly_at_every_level() {
    let mut doc = base_doc();
    doc["trian"] = json!({});
    let err = parse(doc).err().unwrap();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("trian"), "{err}");

    let mut doc = base_doc();
    doc["train"]["learing_rate"] = json!(0.1);
    let err = parse(doc).err().unwrap();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("learing_rate"), "{err}");

    let mut doc = base_doc();
    doc["dataset"]["labls"] = json!({});
    assert_eq!(parse(doc).err().unwrap().exit_code(), 2);

    let mut doc = base_doc();
    doc["model"]["backbone"]["dmodel"] = json!(4);
    assert_eq!(parse(doc).err().unwrap().exit_code(), 2);
}

#[test]
fn model_block_needs_exactly_one_of_backbone_and_checkpoint() {
    let dir = TempDir::new().unwrap();
    let ckpt = dir.path().join("checkpoint");
    std::fs::create_dir(&ckpt).unwrap();

    let mut doc = base_doc();
    doc["model"]["checkpoint"] = json!(ckpt.to_str().unwrap());
    let err = parse(doc).err().unwrap();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("both"), "{err}");

    let mut doc = base_doc();
    doc["model"] = json!({});
    let err = parse(doc).err().unwrap();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("neither"), "{err}");

    // Checkpoint alone is fine when the directory exists.
    let mut doc = base_doc();
    doc["model"] = json!({"checkpoint": ckpt.to_str().unwrap()});
    assert!(parse(doc).is_ok());
}

#[test]
fn referenced_paths_must_exist() {
    let mut doc = base_doc();
    doc["dataset"]["train_path"] = json!("/definitely/not/here.tsv");
    let err = parse(doc).err().unwrap();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("train_path"), "{err}");

    let mut doc = base_doc();
    doc["model"] = json!({"checkpoint": "/definitely/not/here"});
    let err = parse(doc).err().unwrap();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("checkpoint"), "{err}");
}

#[test]
fn tabular_delimiter_must_be_a_single_byte() {
    let mut doc = base_doc();
    doc["dataset"]["format"] = json!({"kind": "tabular", "delimiter": "||"});
    let err = parse(doc).err().unwrap();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("one byte"), "{err}");

    let config = parse(base_doc()).unwrap();
    assert_eq!(config.dataset.format.delimiter_byte().unwrap(), b'\t');
    let jsonl = DataFormat::Jsonl;
    assert_eq!(jsonl.delimiter_byte().err().unwrap().exit_code(), 2);
}

#[test]
fn objective_weights_are_checked_against_the_label_space() {
    let mut doc = base_doc();
    doc["objective"]["class_weights"] = json!([1.0, 1.0, 1.75]);
    let err = parse(doc).err().unwrap();
    assert_eq!(err.exit_code(), 2);
    assert!(
        err.to_string().contains("3 class weights for 4 labels"),
        "{err}"
    );

    let mut doc = base_doc();
    doc["objective"]["class_weights"] = json!([1.0, 1.0, 1.75, -2.0]);
    assert_eq!(parse(doc).err().unwrap().exit_code(), 2);

    let mut doc = base_doc();
    doc["objective"]["static_weights"] = json!({"w_s": -0.5, "w_c": 1.5});
    assert_eq!(parse(doc).err().unwrap().exit_code(), 2);

    let mut doc = base_doc();
    doc["objective"]["class_weights"] = json!([1.0, 1.0, 1.75, 7.0]);
    let config = parse(doc).unwrap();
    let train = config.assemble_train_config();
    assert_eq!(
        train.class_weights.unwrap().as_slice(),
        &[1.0, 1.0, 1.75, 7.0]
    );
}

#[test]
fn zero_sized_knobs_are_rejected() {
    let mut doc = base_doc();
    doc["evidence"] = json!({"k": 0});
    assert_eq!(parse(doc).err().unwrap().exit_code(), 2);

    let mut doc = base_doc();
    doc["train"]["max_summary_len"] = json!(0);
    assert_eq!(parse(doc).err().unwrap().exit_code(), 2);

    let mut doc = base_doc();
    doc["sweep"] = json!({"grid": {"axes": {"train.seed": [1, 2]}}, "workers": 0});
    assert_eq!(parse(doc).err().unwrap().exit_code(), 2);
}

#[test]
fn train_horizon_must_be_epochs_or_max_steps_not_both() {
    let mut doc = base_doc();
    doc["train"]["epochs"] = json!(2);
    assert_eq!(parse(doc).err().unwrap().exit_code(), 2);

    let mut doc = base_doc();
    doc["train"] = json!({});
    assert_eq!(parse(doc).err().unwrap().exit_code(), 2);

    let mut doc = base_doc();
    doc["train"] = json!({"epochs": 2});
    assert!(parse(doc).is_ok());
}

#[test]
fn sweep_block_defaults_are_sensible() {
    let mut doc = base_doc();
    doc["sweep"] = json!({"grid": {"axes": {"train.learning_rate": [0.001, 0.01]}}});
    let config = parse(doc).unwrap();
    let sweep = config.sweep.unwrap();
    assert_eq!(sweep.workers, 1);
    assert_eq!(sweep.metric.as_str(), "f1_macro");
    assert_eq!(sweep.grid.axes.len(), 1);
}

#[test]
fn overrides_descend_dot_paths_and_revalidate() {
    let config = parse(base_doc()).unwrap();
    let overrides = BTreeMap::from([
        ("train.learning_rate".to_string(), json!(0.05)),
        ("objective.static_weights.w_c".to_string(), json!(0.7)),
        ("evidence.k".to_string(), json!(2)),
    ]);
    let patched = config.with_overrides(&overrides).unwrap();
    assert_eq!(patched.train.learning_rate, 0.05);
    assert_eq!(patched.objective.static_weights.w_c, 0.7);
    assert_eq!(patched.evidence.k, 2);
    // The original is untouched.
    assert_eq!(config.train.learning_rate, 1e-4);

    // An unknown leaf is caught by strict deserialization.
    let bad = BTreeMap::from([("train.does_not_exist".to_string(), json!(1))]);
    assert_eq!(config.with_overrides(&bad).err().unwrap().exit_code(), 2);

    // Descending through a scalar cannot work.
    let bad = BTreeMap::from([("train.learning_rate.deep".to_string(), json!(1))]);
    let err = config.with_overrides(&bad).err().unwrap();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("non-object"), "{err}");

    // Empty path segments are malformed.
    let bad = BTreeMap::from([("train..seed".to_string(), json!(1))]);
    assert_eq!(config.with_overrides(&bad).err().unwrap().exit_code(), 2);

    // A value that breaks a downstream rule fails revalidation.
    let bad = BTreeMap::from([("train.batch_size".to_string(), json!(0))]);
    assert_eq!(config.with_overrides(&bad).err().unwrap().exit_code(), 2);
    let bad = BTreeMap::from([("train.epochs".to_string(), json!(3))]);
    assert_eq!(config.with_overrides(&bad).err().unwrap().exit_code(), 2);
}

#[test]
fn assembled_train_config_mirrors_the_document() {
    let mut doc = base_doc();
    doc["objective"] = json!({
        "loss_mode": "uncertainty",
        "uncertainty_init": {"s_c": 0.1, "s_s": -0.2}
    });
    doc["train"] = json!({
        "learning_rate": 0.003,
        "dropout": 0.25,
        "batch_size": 8,
        "max_steps": 40,
        "seed": 99,
        "eval_every": 10,
        "patience": 3,
        "grad_clip": 1.0
    });
    doc["evidence"] = json!({"template": "claim: {claim} || {evidence}"});
    let config = parse(doc).unwrap();
    let train = config.assemble_train_config();
    assert_eq!(train.learning_rate, 0.003);
    assert_eq!(train.dropout, Some(0.25));
    assert_eq!(train.batch_size, 8);
    assert_eq!(train.epochs, None);
    assert_eq!(train.max_steps, Some(40));
    assert_eq!(train.seed, 99);
    assert_eq!(train.loss_mode, LossMode::Uncertainty);
    let init = train.uncertainty_init.unwrap();
    assert_eq!((init.s_c, init.s_s), (0.1, -0.2));
    assert_eq!(train.eval_every, Some(10));
    assert_eq!(train.patience, Some(3));
    assert_eq!(train.grad_clip, Some(1.0));
    assert_eq!(train.input_template, "claim: {claim} || {evidence}");
    assert_eq!(train.start_step, 0);
}

#[test]
fn config_round_trips_through_json() {
    let mut doc = base_doc();
    doc["sweep"] = json!({"grid": {"axes": {"train.seed": [1, 2, 3]}}});
    let config = parse(doc).unwrap();
    let serialized = serde_json::to_value(&config).unwrap();
    let back: RunConfig = serde_json::from_value(serialized.clone()).unwrap();
    assert_eq!(serde_json::to_value(&back).unwrap(), serialized);
}

#[test]
fn missing_config_file_is_an_io_error() {
    let err = RunConfig::load(std::path::Path::new("/no/such/config.json"))
        .err()
        .unwrap();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn malformed_json_names_the_file() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{not json").unwrap();
    let err = RunConfig::load(&path).err().unwrap();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("broken.json"), "{err}");
}
