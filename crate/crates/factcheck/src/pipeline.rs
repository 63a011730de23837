//! Subcommand implementations, CLI-independent so tests drive the same
//! code paths as the binary. Every command is a pure function of its
//! config and input files; reruns produce byte-identical artifacts.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::backbone::tokenizer::Tokenizer;
use crate::config::{DataFormat, RunConfig, SelectionMethod};
use crate::corpus::{
    filter_nonnull_summaries, load_jsonl, load_tabular, read_canonical, validate_split,
    write_canonical, write_canonical_with_scores, DatasetSplit, LoadedSplit, SplitName,
};
use crate::error::{Error, Result};
use crate::evidence::{
    lead_k_summary, rank_sentences, BagOfWordsProvider, GuardList, SentenceList,
};
use crate::metrics::rouge::TextNorm;
use crate::report::{
    render_confusion_csv, render_eval_csv, render_eval_text, render_json, render_sweep_csv,
    render_sweep_text, ReportStyle,
};
use crate::sweep::{best_by, expand_grid, read_ledger, run_sweep, TrialMetrics, TrialResult};
use crate::trainer::{
    build_model_input, checkpoint_dir, checkpoint_exists, evaluate, load_checkpoint,
    save_checkpoint, train, EvalReport, ModelBundle, ModelPredictor, TrainState,
};

/// Environment variable overriding the sweep worker count.
pub const WORKERS_ENV: &str = "FACTCHECK_WORKERS";

const SPLITS: [SplitName; 3] = [SplitName::Train, SplitName::Validation, SplitName::Test];

pub fn prepared_path(out_dir: &Path, split: SplitName) -> PathBuf {
    out_dir
        .join("prepared")
        .join(format!("{}.jsonl", split.as_str()))
}

pub fn selected_path(out_dir: &Path, split: SplitName) -> PathBuf {
    out_dir
        .join("evidence")
        .join(format!("{}.jsonl", split.as_str()))
}

fn split_source(config: &RunConfig, split: SplitName) -> Option<&PathBuf> {
    match split {
        SplitName::Train => config.dataset.train_path.as_ref(),
        SplitName::Validation => config.dataset.validation_path.as_ref(),
        SplitName::Test => config.dataset.test_path.as_ref(),
    }
}

fn load_raw_split(config: &RunConfig, split: SplitName) -> Result<Option<LoadedSplit>> {
    let Some(path) = split_source(config, split) else {
        return Ok(None);
    };
    let space = config.label_space()?;
    let loaded = match &config.dataset.format {
        DataFormat::Tabular { .. } => load_tabular(
            path,
            &config.dataset.mapping,
            &space,
            config.dataset.name,
            split,
            config.dataset.format.delimiter_byte()?,
        )?,
        DataFormat::Jsonl => load_jsonl(
            path,
            &config.dataset.mapping,
            &space,
            config.dataset.name,
            split,
        )?,
    };
    Ok(Some(loaded))
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// One prepared split in the outcome summary.
#[derive(Debug, Clone, Serialize)]
pub struct SplitSummary {
    pub split: String,
    pub path: PathBuf,
    pub records: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PrepareOutcome {
    pub splits: Vec<SplitSummary>,
}

/// Load every configured raw split, normalize it, and write the canonical
/// record files plus a drop report per split.
pub fn cmd_prepare(config: &RunConfig) -> Result<PrepareOutcome> {
    let out_dir = &config.output.dir;
    let mut splits = Vec::new();
    for split in SPLITS {
        let Some(loaded) = load_raw_split(config, split)? else {
            continue;
        };
        let mut dataset_split = loaded.split;
        if config.dataset.small_variant {
            dataset_split = filter_nonnull_summaries(&dataset_split);
            if dataset_split.records.is_empty() {
                return Err(Error::degenerate(format!(
                    "{} split has no records with gold summaries",
                    split.as_str()
                )));
            }
        }
        let validation = validate_split(&dataset_split);
        if !validation.violations.is_empty() {
            return Err(Error::runtime(format!(
                "{} split failed validation after load: {:?}",
                split.as_str(),
                validation.violations[0]
            )));
        }
        let path = prepared_path(out_dir, split);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_canonical(&dataset_split, &path)?;
        let drops_path = path.with_extension("drops.json");
        write_text(&drops_path, &render_json(&loaded.drop_report)?)?;
        splits.push(SplitSummary {
            split: split.as_str().to_string(),
            path,
            records: dataset_split.records.len(),
            dropped: loaded.drop_report.dropped.len(),
        });
    }
    if splits.is_empty() {
        return Err(Error::schema("no dataset paths configured"));
    }
    Ok(PrepareOutcome { splits })
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectOutcome {
    pub splits: Vec<SplitSummary>,
}

/// Per-record evidence for ranking: segments that already look sentence-
/// shaped (multi-segment) pass through; single blobs get sentence-split.
fn record_sentences(record_id: &str, evidence: &[String], guards: &GuardList) -> SentenceList {
    if evidence.len() > 1 {
        SentenceList {
            sentences: evidence.to_vec(),
            source_record_id: record_id.to_string(),
        }
    } else {
        SentenceList::from_text(
            record_id,
            evidence.first().map_or("", String::as_str),
            guards,
        )
    }
}

/// Rank each prepared record's evidence sentences against its claim and
/// keep the top k, writing records whose evidence is the selection (in
/// document order) plus a sidecar of (sentence index, score) pairs.
pub fn cmd_select_evidence(config: &RunConfig) -> Result<SelectOutcome> {
    let out_dir = &config.output.dir;
    let space = config.label_space()?;
    let guards = GuardList::with_extras(&config.evidence.extra_abbreviations);
    let k = config.evidence.k;
    let mut splits = Vec::new();
    for split in SPLITS {
        let source = prepared_path(out_dir, split);
        if !source.exists() {
            continue;
        }
        let mut dataset_split = read_canonical(&source, &space, split)?;
        let mut scores: Vec<Vec<(usize, f64)>> = Vec::with_capacity(dataset_split.records.len());
        for record in &mut dataset_split.records {
            if record.evidence.is_empty() {
                scores.push(Vec::new());
                continue;
            }
            let sentences = record_sentences(&record.id, &record.evidence, &guards);
            if sentences.is_empty() {
                scores.push(Vec::new());
                record.evidence = Vec::new();
                continue;
            }
            match config.evidence.method {
                SelectionMethod::Ranked => {
                    let mut corpus: Vec<&str> = vec![record.claim.as_str()];
                    corpus.extend(sentences.sentences.iter().map(String::as_str));
                    let provider = BagOfWordsProvider::fit(&corpus);
                    let ranking = rank_sentences(&record.claim, &sentences, &provider)?;
                    let kept: Vec<(usize, f64)> = ranking.entries.iter().take(k).copied().collect();
                    let mut order: Vec<usize> = kept.iter().map(|(i, _)| *i).collect();
                    order.sort_unstable();
                    record.evidence = order
                        .iter()
                        .map(|&i| sentences.sentences[i].clone())
                        .collect();
                    scores.push(kept);
                }
                SelectionMethod::Lead => {
                    let text = sentences.sentences.join(" ");
                    let summary = lead_k_summary(&text, k);
                    let count = k.min(sentences.len());
                    record.evidence = sentences.sentences[..count].to_vec();
                    debug_assert_eq!(record.evidence.join(" "), summary);
                    scores.push((0..count).map(|i| (i, 0.0)).collect());
                }
            }
        }
        let dest = selected_path(out_dir, split);
        if let Some(parent) = dest.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_canonical_with_scores(&dataset_split, Some(&scores), &dest)?;
        splits.push(SplitSummary {
            split: split.as_str().to_string(),
            path: dest,
            records: dataset_split.records.len(),
            dropped: 0,
        });
    }
    if splits.is_empty() {
        return Err(Error::schema(
            "no prepared splits found; run the prepare step first",
        ));
    }
    Ok(SelectOutcome { splits })
}

/// The canonical file a downstream stage should read for `split`:
/// evidence-selected when present, otherwise prepared.
pub fn input_split(config: &RunConfig, split: SplitName) -> Result<DatasetSplit> {
    let out_dir = &config.output.dir;
    let space = config.label_space()?;
    let selected = selected_path(out_dir, split);
    if selected.exists() {
        return read_canonical(&selected, &space, split);
    }
    let prepared = prepared_path(out_dir, split);
    if prepared.exists() {
        return read_canonical(&prepared, &space, split);
    }
    Err(Error::schema(format!(
        "no canonical {} split under {}; run the prepare step first",
        split.as_str(),
        out_dir.display()
    )))
}

fn try_input_split(config: &RunConfig, split: SplitName) -> Option<DatasetSplit> {
    input_split(config, split).ok()
}

/// Fit a tokenizer over everything the model will read or write for this
/// run: assembled encoder inputs plus gold summaries.
fn fit_tokenizer(config: &RunConfig, split: &DatasetSplit) -> Tokenizer {
    let template = &config.evidence.template;
    let mut texts: Vec<String> = Vec::with_capacity(split.records.len() * 2);
    for record in &split.records {
        texts.push(build_model_input(template, &record.claim, &record.evidence));
        if let Some(summary) = &record.gold_summary {
            texts.push(summary.clone());
        }
    }
    Tokenizer::fit(&texts)
}

fn build_bundle_for_training(
    config: &RunConfig,
    train_split: &DatasetSplit,
) -> Result<(ModelBundle, usize)> {
    let out_ckpt = checkpoint_dir(&config.output.dir);
    if let Some(path) = &config.model.checkpoint {
        let loaded = load_checkpoint(path)?;
        return Ok((loaded.bundle, loaded.step));
    }
    if checkpoint_exists(&out_ckpt) {
        let loaded = load_checkpoint(&out_ckpt)?;
        return Ok((loaded.bundle, loaded.step));
    }
    let spec = config
        .model
        .backbone
        .as_ref()
        .expect("validated: backbone xor checkpoint");
    let space = config.label_space()?;
    let tokenizer = fit_tokenizer(config, train_split);
    let backbone = spec.build(tokenizer.vocab_size(), space.len(), config.train.dropout)?;
    let bundle = ModelBundle::new_tiny(backbone, tokenizer, config.train.seed)?;
    Ok((bundle, 0))
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
}

/// Train per the config and leave a checkpoint plus step history under
/// the output directory. With `resume`, continue the existing checkpoint's
/// step counter; otherwise start fresh even if a checkpoint exists.
pub fn cmd_train(config: &RunConfig, resume: bool) -> Result<TrainOutcome> {
    let out_dir = &config.output.dir;
    let train_split = input_split(config, SplitName::Train)?;
    if train_split.label_space.len() != config.label_space()?.len() {
        return Err(Error::schema("label space drifted between stages"));
    }

    let (mut bundle, start_step) = if resume || config.model.checkpoint.is_some() {
        build_bundle_for_training(config, &train_split)?
    } else {
        let spec =
            config.model.backbone.as_ref().ok_or_else(|| {
                Error::schema("training from scratch needs a model.backbone block")
            })?;
        let space = config.label_space()?;
        let tokenizer = fit_tokenizer(config, &train_split);
        let backbone = spec.build(tokenizer.vocab_size(), space.len(), config.train.dropout)?;
        (
            ModelBundle::new_tiny(backbone, tokenizer, config.train.seed)?,
            0,
        )
    };
    if bundle.config.num_classes != config.label_space()?.len() {
        return Err(Error::schema(format!(
            "checkpoint has {} classes but the label space has {}",
            bundle.config.num_classes,
            config.label_space()?.len()
        )));
    }

    let mut train_config = config.assemble_train_config();
    train_config.start_step = start_step;

    let history_path = out_dir.join("history.jsonl");
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.as_path(), e))?;
    let mut history_file = std::fs::OpenOptions::new()
        .create(true)
        .append(resume)
        .truncate(!resume)
        .write(true)
        .open(&history_path)
        .map_err(|e| Error::io(&history_path, e))?;

    let validation = if train_config.eval_every.is_some() {
        try_input_split(config, SplitName::Validation)
    } else {
        None
    };
    let template = config.evidence.template.clone();
    let strategy = config.train.generation;
    let max_summary_len = config.train.max_summary_len;
    let rouge_stemming = config.output.rouge_stemming;
    let seed = config.train.seed;
    let mut hook_fn;
    let hook: Option<crate::trainer::EvalHook> = match &validation {
        Some(val) => {
            hook_fn = move |_step: usize, bundle: &ModelBundle| -> Result<f64> {
                let predictor = ModelPredictor {
                    bundle,
                    template: template.clone(),
                    strategy,
                    max_summary_len,
                };
                let report = evaluate(
                    val,
                    &predictor,
                    TextNorm {
                        stem: rouge_stemming,
                    },
                    seed,
                )?;
                Ok(report.classification.f1_macro)
            };
            Some(&mut hook_fn)
        }
        None => None,
    };

    let state = train(
        &mut bundle,
        &train_split,
        &train_config,
        Some(&mut history_file),
        hook,
        Some(out_dir),
    )?;
    history_file
        .flush()
        .map_err(|e| Error::io(&history_path, e))?;

    let ckpt = checkpoint_dir(out_dir);
    save_checkpoint(&bundle, state.step, state.best_metric, &ckpt)?;
    Ok(TrainOutcome {
        state,
        checkpoint: ckpt,
        history: history_path,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub files: Vec<PathBuf>,
}

fn eval_split(config: &RunConfig) -> Result<DatasetSplit> {
    for split in [SplitName::Test, SplitName::Validation] {
        if let Some(s) = try_input_split(config, split) {
            return Ok(s);
        }
    }
    Err(Error::schema(
        "no test or validation split available to evaluate",
    ))
}

/// Evaluate a checkpoint on the test (or validation) split and render the
/// report as JSON, CSV, and aligned text plus the confusion matrix and
/// per-record predictions.
pub fn cmd_eval(config: &RunConfig) -> Result<EvalOutcome> {
    let out_dir = &config.output.dir;
    let ckpt_path = match &config.model.checkpoint {
        Some(p) => p.clone(),
        None => {
            let p = checkpoint_dir(out_dir);
            if !checkpoint_exists(&p) {
                return Err(Error::schema(format!(
                    "no checkpoint at {}; train first or set model.checkpoint",
                    p.display()
                )));
            }
            p
        }
    };
    let loaded = load_checkpoint(&ckpt_path)?;
    let space = config.label_space()?;
    if loaded.bundle.config.num_classes != space.len() {
        return Err(Error::schema(format!(
            "checkpoint has {} classes but the label space has {}",
            loaded.bundle.config.num_classes,
            space.len()
        )));
    }

    let split = eval_split(config)?;
    let predictor = ModelPredictor {
        bundle: &loaded.bundle,
        template: config.evidence.template.clone(),
        strategy: config.train.generation,
        max_summary_len: config.train.max_summary_len,
    };
    let report = evaluate(
        &split,
        &predictor,
        TextNorm {
            stem: config.output.rouge_stemming,
        },
        config.train.seed,
    )?;

    let style = ReportStyle {
        decimal_comma: config.output.decimal_comma,
    };
    let eval_dir = out_dir.join("eval");
    let mut files = Vec::new();
    let json_path = eval_dir.join("report.json");
    write_text(&json_path, &render_json(&report)?)?;
    files.push(json_path);
    let csv_path = eval_dir.join("metrics.csv");
    write_text(&csv_path, &render_eval_csv(&report, style))?;
    files.push(csv_path);
    let text_path = eval_dir.join("report.txt");
    write_text(&text_path, &render_eval_text(&report, style))?;
    files.push(text_path);
    let confusion_path = eval_dir.join("confusion.csv");
    write_text(
        &confusion_path,
        &render_confusion_csv(&report.confusion, style),
    )?;
    files.push(confusion_path);
    let preds_path = eval_dir.join("predictions.jsonl");
    let mut body = String::new();
    for row in &report.predictions {
        body.push_str(
            &serde_json::to_string(row)
                .map_err(|e| Error::runtime(format!("serialize prediction row: {e}")))?,
        );
        body.push('\n');
    }
    write_text(&preds_path, &body)?;
    files.push(preds_path);

    Ok(EvalOutcome { report, files })
}

/// Train and evaluate one configuration fully in memory, returning the
/// headline metrics on the percent scale.
pub fn train_eval_once(
    config: &RunConfig,
    train_split: &DatasetSplit,
    eval_split: &DatasetSplit,
) -> Result<TrialMetrics> {
    let spec = config
        .model
        .backbone
        .as_ref()
        .ok_or_else(|| Error::schema("sweep trials need a model.backbone block"))?;
    let space = config.label_space()?;
    let tokenizer = fit_tokenizer(config, train_split);
    let backbone = spec.build(tokenizer.vocab_size(), space.len(), config.train.dropout)?;
    let mut bundle = ModelBundle::new_tiny(backbone, tokenizer, config.train.seed)?;
    let train_config = config.assemble_train_config();
    train(&mut bundle, train_split, &train_config, None, None, None)?;
    let predictor = ModelPredictor {
        bundle: &bundle,
        template: config.evidence.template.clone(),
        strategy: config.train.generation,
        max_summary_len: config.train.max_summary_len,
    };
    let report = evaluate(
        eval_split,
        &predictor,
        TextNorm {
            stem: config.output.rouge_stemming,
        },
        config.train.seed,
    )?;
    Ok(TrialMetrics {
        rouge1: report.rouge1.f_measure * 100.0,
        rouge2: report.rouge2.f_measure * 100.0,
        rouge_l: report.rouge_l.f_measure * 100.0,
        f1_macro: report.classification.f1_macro,
        f1_weighted: report.classification.f1_weighted,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepOutcome {
    pub trials: usize,
    pub completed: usize,
    pub failed: usize,
    pub best: TrialResult,
    pub ledger: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Expand the grid, run every trial not already in the ledger, and render
/// the results table. Sweeps always resume: completed trial ids are
/// skipped, so rerunning a finished sweep appends nothing.
pub fn cmd_sweep(config: &RunConfig) -> Result<SweepOutcome> {
    let block = config
        .sweep
        .as_ref()
        .ok_or_else(|| Error::schema("sweep subcommand needs a sweep block in the config"))?;
    let trials = expand_grid(&block.grid)?;
    let workers = match std::env::var(WORKERS_ENV) {
        Ok(v) => v.parse::<usize>().map_err(|_| {
            Error::schema(format!(
                "{WORKERS_ENV} must be a positive integer, got {v:?}"
            ))
        })?,
        Err(_) => block.workers,
    };
    if workers == 0 {
        return Err(Error::schema(format!("{WORKERS_ENV} must be at least 1")));
    }

    let train_split = input_split(config, SplitName::Train)?;
    let val_split = try_input_split(config, SplitName::Validation)
        .ok_or_else(|| Error::schema("sweep needs a validation split"))?;

    let out_dir = &config.output.dir;
    let sweep_dir = out_dir.join("sweep");
    let ledger = sweep_dir.join("ledger.jsonl");
    let base = config.clone();
    let runner = move |trial: &crate::sweep::TrialConfig, seed: u64| -> Result<TrialMetrics> {
        let mut trial_config = base.with_overrides(&trial.overrides)?;
        trial_config.train.seed = seed;
        train_eval_once(&trial_config, &train_split, &val_split)
    };
    let results = run_sweep(&trials, config.train.seed, &runner, workers, &ledger)?;

    let style = ReportStyle {
        decimal_comma: config.output.decimal_comma,
    };
    let mut files = Vec::new();
    let csv_path = sweep_dir.join("results.csv");
    write_text(&csv_path, &render_sweep_csv(&results, style))?;
    files.push(csv_path);
    let text_path = sweep_dir.join("results.txt");
    write_text(
        &text_path,
        &render_sweep_text(&results, config.train.seed, style),
    )?;
    files.push(text_path);
    let best = best_by(&results, block.metric, block.direction)?.clone();
    let best_path = sweep_dir.join("best.json");
    write_text(
        &best_path,
        &render_json(&serde_json::json!({
            "metric": block.metric.as_str(),
            "direction": block.direction,
            "trial": best,
        }))?,
    )?;
    files.push(best_path);

    let completed = results.iter().filter(|r| r.completed()).count();
    Ok(SweepOutcome {
        trials: results.len(),
        completed,
        failed: results.len() - completed,
        best,
        ledger,
        files,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportOutcome {
    pub files: Vec<PathBuf>,
}

/// Re-render every report artifact found under the output directory from
/// its stored JSON form.
pub fn cmd_report(config: &RunConfig) -> Result<ReportOutcome> {
    let out_dir = &config.output.dir;
    let style = ReportStyle {
        decimal_comma: config.output.decimal_comma,
    };
    let mut files = Vec::new();

    let eval_json = out_dir.join("eval").join("report.json");
    if eval_json.exists() {
        let body = std::fs::read(&eval_json).map_err(|e| Error::io(&eval_json, e))?;
        let report: EvalReport = serde_json::from_slice(&body)
            .map_err(|e| Error::schema(format!("{}: {e}", eval_json.display())))?;
        let text_path = out_dir.join("eval").join("report.txt");
        write_text(&text_path, &render_eval_text(&report, style))?;
        files.push(text_path);
        let csv_path = out_dir.join("eval").join("metrics.csv");
        write_text(&csv_path, &render_eval_csv(&report, style))?;
        files.push(csv_path);
        let confusion_path = out_dir.join("eval").join("confusion.csv");
        write_text(
            &confusion_path,
            &render_confusion_csv(&report.confusion, style),
        )?;
        files.push(confusion_path);
    }

    let ledger = out_dir.join("sweep").join("ledger.jsonl");
    if ledger.exists() {
        let results = read_ledger(&ledger)?;
        let csv_path = out_dir.join("sweep").join("results.csv");
        write_text(&csv_path, &render_sweep_csv(&results, style))?;
        files.push(csv_path);
        let text_path = out_dir.join("sweep").join("results.txt");
        write_text(
            &text_path,
            &render_sweep_text(&results, config.train.seed, style),
        )?;
        files.push(text_path);
    }

    if files.is_empty() {
        return Err(Error::schema(format!(
            "nothing to report under {}; run eval or sweep first",
            out_dir.display()
        )));
    }
    Ok(ReportOutcome { files })
}
