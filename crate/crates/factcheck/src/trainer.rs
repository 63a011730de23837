//! Joint training: corpus batches through the shared-encoder model, both
//! task losses combined per the configured strategy, one Adam update per
//! step, with streamed history and checkpointing.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tapegrad::{Adam, NllNorm, ParamStore, Tape};

use crate::backbone::tiny::TinyTransformer;
use crate::backbone::tokenizer::{Tokenizer, PAD_ID};
use crate::backbone::{
    forward_multitask, generate, BackboneConfig, ClassifierHead, EncodedBatch, GenerationStrategy,
    Mode, ModelBackend,
};
use crate::corpus::{ClaimRecord, DatasetSplit, LabelId};
use crate::error::{Error, Result};
use crate::metrics::classification::{
    binary_accuracy_excluding, classification_report, ClassificationReport, ConfusionMatrix,
};
use crate::metrics::rouge::{mean_scores, rouge_l, rouge_n, RougeScore, TextNorm};
use crate::objective::{
    class_weighted_ce_on_tape, combine_static_on_tape, combine_uncertainty_on_tape,
    token_ce_on_tape, ClassWeights, LossMode, StaticWeights, UncertaintyState,
};

/// Template placeholder expansion for the encoder input text.
pub const DEFAULT_INPUT_TEMPLATE: &str = "summarize: claim: {claim} evidence: {evidence}";

/// Build the model input from a record's claim and evidence segments.
pub fn build_model_input(template: &str, claim: &str, evidence: &[String]) -> String {
    template
        .replace("{claim}", claim)
        .replace("{evidence}", &evidence.join(" "))
}

/// Everything the optimizer updates: loop dimensions, loss strategy, and
/// schedule inputs. `dropout`, when set, overrides the backbone config's
/// value at model assembly time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    #[serde(default)]
    pub dropout: Option<f64>,
    pub batch_size: usize,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub static_weights: StaticWeights,
    #[serde(default)]
    pub class_weights: Option<ClassWeights>,
    #[serde(default)]
    pub uncertainty_init: Option<UncertaintyState>,
    #[serde(default)]
    pub eval_every: Option<usize>,
    /// Stop after this many evaluations without improvement.
    #[serde(default)]
    pub patience: Option<usize>,
    /// Global-norm gradient clip; off when absent.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default = "default_template")]
    pub input_template: String,
    /// First step number minus one; nonzero when resuming.
    #[serde(default)]
    pub start_step: usize,
}

fn default_template() -> String {
    DEFAULT_INPUT_TEMPLATE.to_string()
}

impl TrainConfig {
    /// Learning rate 0 is allowed deliberately: a zero-rate run is the
    /// cheapest way to assert that stepping alone never perturbs
    /// parameters.
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::schema(
                "learning_rate must be finite and nonnegative",
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::schema("batch_size must be at least 1"));
        }
        match (self.epochs, self.max_steps) {
            (None, None) => {
                return Err(Error::schema("one of epochs or max_steps is required"));
            }
            (Some(_), Some(_)) => {
                return Err(Error::schema("epochs and max_steps are mutually exclusive"));
            }
            (Some(0), _) | (_, Some(0)) => {
                return Err(Error::schema("training length must be positive"));
            }
            _ => {}
        }
        if let Some(d) = self.dropout {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::schema("dropout must lie in [0, 1)"));
            }
        }
        if self.eval_every == Some(0) {
            return Err(Error::schema("eval_every must be positive when set"));
        }
        if let Some(clip) = self.grad_clip {
            if !clip.is_finite() || clip <= 0.0 {
                return Err(Error::schema("grad_clip must be positive and finite"));
            }
        }
        Ok(())
    }
}

/// Linear decay from `lr0` at step 0 to zero at `total_steps`, never
/// negative.
pub fn lr_schedule(step: usize, total_steps: usize, lr0: f64) -> f64 {
    assert!(total_steps > 0, "schedule needs a positive horizon");
    let frac = 1.0 - step as f64 / total_steps as f64;
    lr0 * frac.max(0.0)
}

/// One line of the streamed training history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepEvent {
    pub step: usize,
    pub lr: f64,
    pub loss_summ: f64,
    pub loss_cl: f64,
    pub loss_total: f64,
    pub s_c: Option<f64>,
    pub s_s: Option<f64>,
}

/// Where training ended up.
#[derive(Debug, Clone, Serialize)]
pub struct TrainState {
    pub step: usize,
    pub lr: f64,
    pub last_event: Option<StepEvent>,
    pub best_metric: Option<f64>,
    pub stopped_early: bool,
}

/// The model as one unit: architecture, tokenizer, head, and the flat
/// parameter store the optimizer walks.
pub struct ModelBundle {
    pub config: BackboneConfig,
    pub backend: Box<dyn ModelBackend>,
    pub head: ClassifierHead,
    pub tokenizer: Tokenizer,
    pub params: ParamStore,
}

impl ModelBundle {
    /// Fresh tiny-transformer bundle with seeded initialization. Parameter
    /// registration order is fixed: backbone first, then head.
    pub fn new_tiny(config: BackboneConfig, tokenizer: Tokenizer, seed: u64) -> Result<Self> {
        if config.vocab_size != tokenizer.vocab_size() {
            return Err(Error::schema(format!(
                "config vocab_size {} disagrees with tokenizer vocabulary {}",
                config.vocab_size,
                tokenizer.vocab_size()
            )));
        }
        let backend = TinyTransformer::new(config.clone())?;
        let head = ClassifierHead::from_config(&config);
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        backend.init_params(&mut params, &mut rng);
        head.init_params(&mut params, &mut rng);
        Ok(Self {
            config,
            backend: Box::new(backend),
            head,
            tokenizer,
            params,
        })
    }

    /// Present uncertainty parameters as a state, when they exist.
    pub fn uncertainty_state(&self) -> Option<UncertaintyState> {
        let read = |name: &str| {
            self.params
                .get(name)
                .map(|v| *v.iter().next().expect("scalar parameter"))
        };
        match (read("loss.s_c"), read("loss.s_s")) {
            (Some(s_c), Some(s_s)) => Some(UncertaintyState { s_c, s_s }),
            _ => None,
        }
    }

    /// Argmax class per record, eval mode. Ties break toward the lower
    /// class index.
    pub fn classify_batch(&self, batch: &EncodedBatch) -> Result<Vec<LabelId>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let hidden = self.backend.encode(
            &mut tape,
            &bound,
            &batch.src_ids,
            &batch.src_mask,
            Mode::Eval,
            &mut rng,
        );
        let pooled = crate::backbone::pool(&mut tape, hidden, &batch.src_mask)?;
        let scores = self
            .head
            .classify(&mut tape, &bound, pooled, Mode::Eval, &mut rng)?;
        let values = tape.value(scores);
        let (b, c) = (values.shape()[0], values.shape()[1]);
        Ok((0..b)
            .map(|i| {
                let mut best = 0;
                for j in 1..c {
                    if values[[i, j]] > values[[i, best]] {
                        best = j;
                    }
                }
                LabelId(best)
            })
            .collect())
    }

    /// Generate and detokenize summaries for a batch.
    pub fn generate_batch(
        &self,
        batch: &EncodedBatch,
        strategy: GenerationStrategy,
        max_len: usize,
    ) -> Result<Vec<String>> {
        // The decoder prefix holds the begin token plus every emitted
        // token, so emission is capped one short of the position table.
        let cap = max_len.min(self.config.max_target_len.saturating_sub(1));
        let ids = generate(
            self.backend.as_ref(),
            &self.params,
            &batch.src_ids,
            &batch.src_mask,
            cap,
            strategy,
        )?;
        Ok(ids.iter().map(|row| self.tokenizer.decode(row)).collect())
    }

    /// Fraction of non-pad target positions whose argmax logit equals the
    /// gold token, teacher forced, eval mode.
    pub fn teacher_forced_token_accuracy(&self, batch: &EncodedBatch) -> Result<f64> {
        let (Some(tgt_out), Some(_)) = (&batch.tgt_out_ids, &batch.tgt_in_ids) else {
            return Err(Error::schema("batch carries no targets"));
        };
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = forward_multitask(
            &mut tape,
            self.backend.as_ref(),
            &bound,
            &self.head,
            batch,
            Mode::Eval,
            &mut rng,
        )?;
        let logits = out.summary_logits.expect("targets imply logits");
        let values = tape.value(logits);
        let (b, t, v) = (values.shape()[0], values.shape()[1], values.shape()[2]);
        let mut total = 0u64;
        let mut hit = 0u64;
        for i in 0..b {
            for j in 0..t {
                let gold = tgt_out[[i, j]];
                if gold == PAD_ID {
                    continue;
                }
                let mut best = 0;
                for k in 1..v {
                    if values[[i, j, k]] > values[[i, j, best]] {
                        best = k;
                    }
                }
                total += 1;
                if best == gold {
                    hit += 1;
                }
            }
        }
        if total == 0 {
            return Err(Error::degenerate("batch has no unpadded target positions"));
        }
        Ok(hit as f64 / total as f64)
    }
}

/// Periodic validation callback: receives the current step and model,
/// returns the metric to monitor (higher is better).
pub type EvalHook<'a> = &'a mut dyn FnMut(usize, &ModelBundle) -> Result<f64>;

fn batch_from_records(
    bundle: &ModelBundle,
    records: &[&ClaimRecord],
    template: &str,
    with_targets: bool,
) -> Result<EncodedBatch> {
    let sources: Vec<String> = records
        .iter()
        .map(|r| build_model_input(template, &r.claim, &r.evidence))
        .collect();
    let targets: Option<Vec<String>> = if with_targets {
        Some(
            records
                .iter()
                .map(|r| r.gold_summary.clone().unwrap_or_default())
                .collect(),
        )
    } else {
        None
    };
    let golds: Vec<LabelId> = records.iter().map(|r| r.label).collect();
    EncodedBatch::build(
        &bundle.tokenizer,
        &sources,
        targets.as_deref(),
        golds,
        bundle.config.max_source_len,
        bundle.config.max_target_len,
    )
}

/// Run the joint training loop over `split`, mutating `bundle.params`.
///
/// Every step computes both task losses on the same batch from one encode,
/// combines them per the loss mode, and applies one bias-corrected Adam
/// update. History events stream to `history` as JSON lines. A non-finite
/// loss aborts with a runtime error after writing a diagnostic snapshot
/// next to the history if `snapshot_dir` is given.
pub fn train(
    bundle: &mut ModelBundle,
    split: &DatasetSplit,
    config: &TrainConfig,
    mut history: Option<&mut dyn Write>,
    mut eval_hook: Option<EvalHook>,
    snapshot_dir: Option<&Path>,
) -> Result<TrainState> {
    config.validate()?;
    if split.records.is_empty() {
        return Err(Error::degenerate("training split is empty"));
    }
    let missing_summaries = split
        .records
        .iter()
        .filter(|r| {
            !r.gold_summary
                .as_deref()
                .is_some_and(|s| !s.trim().is_empty())
        })
        .count();
    if missing_summaries > 0 {
        return Err(Error::degenerate(format!(
            "{missing_summaries} training records lack gold summaries; filter them out first"
        )));
    }
    let num_classes = bundle.config.num_classes;
    if split.label_space.len() != num_classes {
        return Err(Error::schema(format!(
            "model has {num_classes} classes but label space {:?} has {}",
            split.label_space.name(),
            split.label_space.len()
        )));
    }
    let class_weights = match &config.class_weights {
        Some(w) => {
            if w.len() != num_classes {
                return Err(Error::schema(format!(
                    "{} class weights for {num_classes} classes",
                    w.len()
                )));
            }
            w.clone()
        }
        None => ClassWeights::uniform(num_classes),
    };

    if config.loss_mode == LossMode::Uncertainty {
        let init = config.uncertainty_init.unwrap_or_default();
        if !bundle.params.contains("loss.s_c") {
            bundle.params.insert(
                "loss.s_c",
                ndarray::ArrayD::from_elem(ndarray::IxDyn(&[]), init.s_c),
            );
        }
        if !bundle.params.contains("loss.s_s") {
            bundle.params.insert(
                "loss.s_s",
                ndarray::ArrayD::from_elem(ndarray::IxDyn(&[]), init.s_s),
            );
        }
    }

    let n = split.records.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = match (config.epochs, config.max_steps) {
        (Some(epochs), None) => epochs * steps_per_epoch,
        (None, Some(steps)) => steps,
        _ => unreachable!("validated"),
    };
    if config.start_step >= total_steps {
        return Err(Error::schema(format!(
            "start_step {} leaves no steps below the horizon {total_steps}",
            config.start_step
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::with_defaults();
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = 0usize;
    let mut state = TrainState {
        step: config.start_step,
        lr: lr_schedule(config.start_step, total_steps, config.learning_rate),
        last_event: None,
        best_metric: None,
        stopped_early: false,
    };
    let mut evals_since_best = 0usize;

    for step in (config.start_step + 1)..=total_steps {
        if cursor == 0 {
            order.shuffle(&mut rng);
        }
        let upper = (cursor + config.batch_size).min(n);
        let chosen: Vec<&ClaimRecord> = order[cursor..upper]
            .iter()
            .map(|&i| &split.records[i])
            .collect();
        cursor = if upper == n { 0 } else { upper };

        let batch = batch_from_records(bundle, &chosen, &config.input_template, true)?;
        let mut tape = Tape::new();
        let bound = bundle.params.bind(&mut tape);
        let out = forward_multitask(
            &mut tape,
            bundle.backend.as_ref(),
            &bound,
            &bundle.head,
            &batch,
            Mode::Train,
            &mut rng,
        )?;
        let logits = out.summary_logits.expect("training batch has targets");
        let logits_shape = tape.value(logits).shape().to_vec();
        let (b, t, v) = (logits_shape[0], logits_shape[1], logits_shape[2]);
        let flat_logits = tape.reshape(logits, &[b * t, v]);
        let tgt_out = batch
            .tgt_out_ids
            .as_ref()
            .expect("training batch has targets");
        let flat_targets: Vec<usize> = tgt_out.iter().copied().collect();

        let loss_summ = token_ce_on_tape(&mut tape, flat_logits, &flat_targets, PAD_ID)?;
        let loss_cl = class_weighted_ce_on_tape(
            &mut tape,
            out.class_scores,
            &batch.golds,
            &class_weights,
            NllNorm::WeightSum,
        )?;
        let total = match config.loss_mode {
            LossMode::Static => {
                combine_static_on_tape(&mut tape, &config.static_weights, loss_summ, loss_cl)
            }
            LossMode::Uncertainty => combine_uncertainty_on_tape(
                &mut tape,
                loss_summ,
                loss_cl,
                bound.var("loss.s_c"),
                bound.var("loss.s_s"),
            ),
        };

        let summ_value = tape.scalar(loss_summ);
        let cl_value = tape.scalar(loss_cl);
        let total_value = tape.scalar(total);
        let (s_c, s_s) = match config.loss_mode {
            LossMode::Uncertainty => (
                Some(tape.scalar(bound.var("loss.s_c"))),
                Some(tape.scalar(bound.var("loss.s_s"))),
            ),
            LossMode::Static => (None, None),
        };
        if !total_value.is_finite() || !summ_value.is_finite() || !cl_value.is_finite() {
            let diagnostic = serde_json::json!({
                "step": step,
                "loss_summ": summ_value,
                "loss_cl": cl_value,
                "loss_total": total_value,
                "record_ids": chosen.iter().map(|r| r.id.clone()).collect::<Vec<_>>(),
            });
            if let Some(dir) = snapshot_dir {
                let _ = std::fs::create_dir_all(dir);
                let _ = std::fs::write(
                    dir.join("nan_diagnostic.json"),
                    serde_json::to_vec_pretty(&diagnostic).unwrap_or_default(),
                );
            }
            return Err(Error::runtime(format!(
                "non-finite loss at step {step}: summary {summ_value}, classification {cl_value}"
            )));
        }

        let grads = tape.backward(total);
        let mut grad_map = bound.gradients(&tape, &grads);
        if let Some(clip) = config.grad_clip {
            let norm: f64 = grad_map
                .values()
                .map(|g| g.iter().map(|x| x * x).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            if norm > clip {
                let scale = clip / norm;
                for g in grad_map.values_mut() {
                    g.mapv_inplace(|x| x * scale);
                }
            }
        }

        let lr = lr_schedule(step - 1, total_steps, config.learning_rate);
        adam.step(&mut bundle.params, &grad_map, lr);

        let event = StepEvent {
            step,
            lr,
            loss_summ: summ_value,
            loss_cl: cl_value,
            loss_total: total_value,
            s_c,
            s_s,
        };
        if let Some(w) = history.as_deref_mut() {
            let line = serde_json::to_string(&event)
                .map_err(|e| Error::runtime(format!("serialize history event: {e}")))?;
            writeln!(w, "{line}").map_err(|e| Error::io("<history>", e))?;
        }
        state.step = step;
        state.lr = lr;
        state.last_event = Some(event);

        if let (Some(every), Some(hook)) = (config.eval_every, eval_hook.as_mut()) {
            if step % every == 0 {
                let metric = hook(step, bundle)?;
                let improved = state.best_metric.is_none_or(|b| metric > b);
                if improved {
                    state.best_metric = Some(metric);
                    evals_since_best = 0;
                } else {
                    evals_since_best += 1;
                    if let Some(patience) = config.patience {
                        if evals_since_best >= patience {
                            state.stopped_early = true;
                            break;
                        }
                    }
                }
            }
        }
    }

    Ok(state)
}

/// A model-shaped source of per-record predictions, so evaluation works
/// identically for real models and test stubs.
pub trait Predictor {
    fn predict(&self, record: &ClaimRecord) -> Result<Prediction>;
}

pub struct Prediction {
    pub label: LabelId,
    pub summary: String,
}

/// The real predictor: argmax classification plus decoded generation.
pub struct ModelPredictor<'a> {
    pub bundle: &'a ModelBundle,
    pub template: String,
    pub strategy: GenerationStrategy,
    pub max_summary_len: usize,
}

impl Predictor for ModelPredictor<'_> {
    fn predict(&self, record: &ClaimRecord) -> Result<Prediction> {
        let batch = batch_from_records(self.bundle, &[record], &self.template, false)?;
        let label = self.bundle.classify_batch(&batch)?[0];
        let summary = self
            .bundle
            .generate_batch(&batch, self.strategy, self.max_summary_len)?
            .remove(0);
        Ok(Prediction { label, summary })
    }
}

/// One evaluated record in the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub gold_label: String,
    pub predicted_label: String,
    pub summary: String,
}

/// Everything `evaluate` measures on one split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub split: String,
    pub num_records: usize,
    /// Records scored by the summary metrics (those with gold summaries).
    pub rouge_records: usize,
    /// Records excluded from the summary metrics for lacking a gold
    /// summary.
    pub rouge_skipped: usize,
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
    pub classification: ClassificationReport,
    pub confusion: ConfusionMatrix,
    pub binary_accuracy_excluding_nei: Option<f64>,
    pub predictions: Vec<PredictionRow>,
}

/// Score a predictor over a split: generation quality against gold
/// summaries plus the full classification report. Deterministic for a
/// deterministic predictor.
pub fn evaluate(
    split: &DatasetSplit,
    predictor: &dyn Predictor,
    norm: TextNorm,
    seed: u64,
) -> Result<EvalReport> {
    if split.records.is_empty() {
        return Err(Error::degenerate("evaluation split is empty"));
    }
    let mut preds = Vec::with_capacity(split.records.len());
    let mut golds = Vec::with_capacity(split.records.len());
    let mut rows = Vec::with_capacity(split.records.len());
    let mut r1 = Vec::new();
    let mut r2 = Vec::new();
    let mut rl = Vec::new();
    let mut skipped = 0usize;

    for record in &split.records {
        let prediction = predictor.predict(record)?;
        match record
            .gold_summary
            .as_deref()
            .filter(|s| !s.trim().is_empty())
        {
            Some(gold) => {
                r1.push(rouge_n(&prediction.summary, gold, 1, norm));
                r2.push(rouge_n(&prediction.summary, gold, 2, norm));
                rl.push(rouge_l(&prediction.summary, gold, norm));
            }
            None => skipped += 1,
        }
        rows.push(PredictionRow {
            id: record.id.clone(),
            gold_label: split.label_space.label(record.label).to_string(),
            predicted_label: split.label_space.label(prediction.label).to_string(),
            summary: prediction.summary,
        });
        preds.push(prediction.label);
        golds.push(record.label);
    }

    let confusion = ConfusionMatrix::from_pairs(&preds, &golds, &split.label_space)?;
    let classification = classification_report(&confusion)?;
    let binary = match split.label_space.nei_id() {
        Some(nei) => Some(binary_accuracy_excluding(&preds, &golds, nei)?),
        None => None,
    };

    Ok(EvalReport {
        seed,
        split: split.split_name.as_str().to_string(),
        num_records: split.records.len(),
        rouge_records: r1.len(),
        rouge_skipped: skipped,
        rouge1: mean_scores(&r1),
        rouge2: mean_scores(&r2),
        rouge_l: mean_scores(&rl),
        classification,
        confusion,
        binary_accuracy_excluding_nei: binary,
        predictions: rows,
    })
}

const PARAMS_MAGIC: &[u8; 8] = b"FCPB0001";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    version: u32,
    backbone: BackboneConfig,
    step: usize,
    best_metric: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ParamIndexEntry {
    name: String,
    shape: Vec<usize>,
}

/// A checkpoint loaded back into memory.
pub struct LoadedCheckpoint {
    pub bundle: ModelBundle,
    pub step: usize,
    pub best_metric: Option<f64>,
}

/// Write config, tokenizer, and parameters under `dir`. Parameters go to a
/// versioned binary blob (name index plus little-endian f64 data) that
/// round-trips bitwise.
pub fn save_checkpoint(
    bundle: &ModelBundle,
    step: usize,
    best_metric: Option<f64>,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = CheckpointMeta {
        version: CHECKPOINT_VERSION,
        backbone: bundle.config.clone(),
        step,
        best_metric,
    };
    let meta_path = dir.join("config.json");
    let body = serde_json::to_vec_pretty(&meta)
        .map_err(|e| Error::runtime(format!("serialize checkpoint config: {e}")))?;
    std::fs::write(&meta_path, body).map_err(|e| Error::io(&meta_path, e))?;

    let tok_path = dir.join("tokenizer.json");
    let body = serde_json::to_vec_pretty(&bundle.tokenizer)
        .map_err(|e| Error::runtime(format!("serialize tokenizer: {e}")))?;
    std::fs::write(&tok_path, body).map_err(|e| Error::io(&tok_path, e))?;

    let index: Vec<ParamIndexEntry> = bundle
        .params
        .iter()
        .map(|(name, value)| ParamIndexEntry {
            name: name.to_string(),
            shape: value.shape().to_vec(),
        })
        .collect();
    let index_json = serde_json::to_vec(&index)
        .map_err(|e| Error::runtime(format!("serialize parameter index: {e}")))?;
    let mut blob = Vec::new();
    blob.extend_from_slice(PARAMS_MAGIC);
    blob.extend_from_slice(&(index_json.len() as u64).to_le_bytes());
    blob.extend_from_slice(&index_json);
    for (_, value) in bundle.params.iter() {
        for x in value.iter() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }
    let params_path = dir.join("params.bin");
    std::fs::write(&params_path, blob).map_err(|e| Error::io(&params_path, e))
}

/// Read a checkpoint directory back. Version or shape disagreements are
/// schema errors; the caller decides whether the architecture matches its
/// run config.
pub fn load_checkpoint(dir: &Path) -> Result<LoadedCheckpoint> {
    let meta_path = dir.join("config.json");
    let body = std::fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CheckpointMeta = serde_json::from_slice(&body)
        .map_err(|e| Error::schema(format!("{}: {e}", meta_path.display())))?;
    if meta.version != CHECKPOINT_VERSION {
        return Err(Error::schema(format!(
            "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
            meta.version
        )));
    }
    meta.backbone.validate()?;

    let tok_path = dir.join("tokenizer.json");
    let body = std::fs::read(&tok_path).map_err(|e| Error::io(&tok_path, e))?;
    let tokenizer: Tokenizer = serde_json::from_slice(&body)
        .map_err(|e| Error::schema(format!("{}: {e}", tok_path.display())))?;
    let tokenizer = crate::backbone::tokenizer::rebuild_lookup(tokenizer)?;
    if tokenizer.vocab_size() != meta.backbone.vocab_size {
        return Err(Error::schema(format!(
            "tokenizer vocabulary {} disagrees with config vocab_size {}",
            tokenizer.vocab_size(),
            meta.backbone.vocab_size
        )));
    }

    let params_path = dir.join("params.bin");
    let blob = std::fs::read(&params_path).map_err(|e| Error::io(&params_path, e))?;
    if blob.len() < PARAMS_MAGIC.len() + 8 || &blob[..PARAMS_MAGIC.len()] != PARAMS_MAGIC {
        return Err(Error::schema("parameter blob has a bad magic header"));
    }
    let mut offset = PARAMS_MAGIC.len();
    let index_len = u64::from_le_bytes(blob[offset..offset + 8].try_into().unwrap()) as usize;
    offset += 8;
    if blob.len() < offset + index_len {
        return Err(Error::schema("parameter blob truncated in index"));
    }
    let index: Vec<ParamIndexEntry> = serde_json::from_slice(&blob[offset..offset + index_len])
        .map_err(|e| Error::schema(format!("parameter index: {e}")))?;
    offset += index_len;

    let mut params = ParamStore::new();
    for entry in &index {
        let len: usize = entry.shape.iter().product();
        let bytes = len * 8;
        if blob.len() < offset + bytes {
            return Err(Error::schema(format!(
                "parameter blob truncated in tensor {:?}",
                entry.name
            )));
        }
        let mut data = Vec::with_capacity(len);
        for i in 0..len {
            let start = offset + i * 8;
            data.push(f64::from_le_bytes(
                blob[start..start + 8].try_into().unwrap(),
            ));
        }
        offset += bytes;
        let array = ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&entry.shape), data)
            .map_err(|e| Error::schema(format!("tensor {:?}: {e}", entry.name)))?;
        params.insert(entry.name.clone(), array);
    }
    if offset != blob.len() {
        return Err(Error::schema("parameter blob has trailing bytes"));
    }

    let backend = TinyTransformer::new(meta.backbone.clone())?;
    let head = ClassifierHead::from_config(&meta.backbone);
    Ok(LoadedCheckpoint {
        bundle: ModelBundle {
            config: meta.backbone,
            backend: Box::new(backend),
            head,
            tokenizer,
            params,
        },
        step: meta.step,
        best_metric: meta.best_metric,
    })
}

/// Stable per-trial seed: first eight bytes of sha256 over the base seed
/// and the trial id.
pub fn derive_seed(base_seed: u64, trial_id: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(base_seed.to_le_bytes());
    hasher.update(trial_id.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Use a checkpoint directory only when it exists; used for resume.
pub fn checkpoint_exists(dir: &Path) -> bool {
    dir.join("config.json").exists() && dir.join("params.bin").exists()
}

/// Convenience for orchestration code: a checkpoint directory as PathBuf.
pub fn checkpoint_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("checkpoint")
}
