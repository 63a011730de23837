//! The run configuration: one JSON document that drives every
//! subcommand. Unknown fields are rejected so grid overrides and typos
//! fail loudly instead of silently doing nothing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, GenerationStrategy};
use crate::corpus::{ColumnMapping, Dataset, LabelSpace};
use crate::error::{Error, Result};
use crate::objective::FinalActivation;
use crate::objective::{ClassWeights, LossMode, StaticWeights, UncertaintyState};
use crate::sweep::{Direction, GridSpec, MetricKey};
use crate::trainer::{TrainConfig, DEFAULT_INPUT_TEMPLATE};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub evidence: EvidenceConfig,
    pub model: ModelConfig,
    pub objective: ObjectiveConfig,
    pub train: TrainBlock,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub sweep: Option<SweepBlock>,
}

/// How raw source files become records.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: Dataset,
    pub format: DataFormat,
    #[serde(default)]
    pub train_path: Option<PathBuf>,
    #[serde(default)]
    pub validation_path: Option<PathBuf>,
    #[serde(default)]
    pub test_path: Option<PathBuf>,
    pub mapping: ColumnMapping,
    pub labels: LabelSpaceConfig,
    /// Drop records without gold summaries during preparation.
    #[serde(default)]
    pub small_variant: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataFormat {
    Tabular {
        #[serde(default = "default_delimiter")]
        delimiter: String,
    },
    Jsonl,
}

fn default_delimiter() -> String {
    "\t".to_string()
}

impl DataFormat {
    pub fn delimiter_byte(&self) -> Result<u8> {
        match self {
            DataFormat::Tabular { delimiter } => {
                let bytes = delimiter.as_bytes();
                if bytes.len() != 1 {
                    return Err(Error::schema(format!(
                        "delimiter must be one byte, got {delimiter:?}"
                    )));
                }
                Ok(bytes[0])
            }
            DataFormat::Jsonl => Err(Error::schema("jsonl format has no delimiter")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSpaceConfig {
    pub name: String,
    pub labels: Vec<String>,
    #[serde(default)]
    pub nei_label: Option<String>,
}

impl LabelSpaceConfig {
    pub fn build(&self) -> Result<LabelSpace> {
        LabelSpace::new(
            self.name.clone(),
            self.labels.clone(),
            self.nei_label.clone(),
        )
    }
}

/// Evidence selection and model-input assembly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceConfig {
    /// Sentences kept per record.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub method: SelectionMethod,
    /// Extra abbreviations protected from sentence breaks.
    #[serde(default)]
    pub extra_abbreviations: Vec<String>,
    /// Encoder input layout; `{claim}` and `{evidence}` expand.
    #[serde(default = "default_template")]
    pub template: String,
}

fn default_k() -> usize {
    5
}

fn default_template() -> String {
    DEFAULT_INPUT_TEMPLATE.to_string()
}

impl Default for EvidenceConfig {
    fn default() -> Self {
        Self {
            k: default_k(),
            method: SelectionMethod::default(),
            extra_abbreviations: Vec::new(),
            template: default_template(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMethod {
    /// Claim-similarity ranking over bag-of-words embeddings.
    #[default]
    Ranked,
    /// First-k baseline.
    Lead,
}

/// Exactly one of `backbone` (train fresh) or `checkpoint` (load).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub backbone: Option<BackboneSpec>,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

/// Architecture sizes the config file fixes; vocabulary size comes from
/// the fitted tokenizer and class count from the label space.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub d_model: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub attention_heads: usize,
    pub max_source_len: usize,
    pub max_target_len: usize,
    pub classifier_hidden_dim: usize,
    #[serde(default)]
    pub classifier_final_activation: FinalActivation,
}

impl BackboneSpec {
    pub fn build(
        &self,
        vocab_size: usize,
        num_classes: usize,
        dropout: f64,
    ) -> Result<BackboneConfig> {
        let config = BackboneConfig {
            vocab_size,
            d_model: self.d_model,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            attention_heads: self.attention_heads,
            max_source_len: self.max_source_len,
            max_target_len: self.max_target_len,
            classifier_hidden_dim: self.classifier_hidden_dim,
            num_classes,
            dropout,
            classifier_final_activation: self.classifier_final_activation,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Loss strategy and its weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub loss_mode: LossMode,
    #[serde(default = "default_static_weights")]
    pub static_weights: StaticWeights,
    /// Per-class loss weights in label order; uniform when absent.
    #[serde(default)]
    pub class_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub uncertainty_init: Option<UncertaintyState>,
}

fn default_static_weights() -> StaticWeights {
    StaticWeights { w_s: 0.5, w_c: 0.5 }
}

/// Loop dimensions and decoding settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBlock {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub eval_every: Option<usize>,
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Longest generated summary, in tokens.
    #[serde(default = "default_summary_len")]
    pub max_summary_len: usize,
    #[serde(default)]
    pub generation: GenerationStrategy,
}

fn default_lr() -> f64 {
    1e-4
}

fn default_dropout() -> f64 {
    0.1
}

fn default_batch() -> usize {
    4
}

fn default_summary_len() -> usize {
    48
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    /// Render metric decimals with a comma instead of a point.
    #[serde(default)]
    pub decimal_comma: bool,
    /// Apply light suffix stemming before overlap scoring.
    #[serde(default)]
    pub rouge_stemming: bool,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            decimal_comma: false,
            rouge_stemming: false,
        }
    }
}

/// Grid search settings; required by the sweep subcommand only.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub grid: GridSpec,
    #[serde(default = "default_metric")]
    pub metric: MetricKey,
    #[serde(default = "default_direction")]
    pub direction: Direction,
    /// Worker threads; the FACTCHECK_WORKERS environment variable
    /// overrides this.
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_metric() -> MetricKey {
    MetricKey::F1Macro
}

fn default_direction() -> Direction {
    Direction::Max
}

fn default_workers() -> usize {
    1
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig = serde_json::from_slice(&body)
            .map_err(|e| Error::schema(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Structural checks plus existence of every referenced input path.
    pub fn validate(&self) -> Result<()> {
        match (&self.model.backbone, &self.model.checkpoint) {
            (Some(_), Some(_)) => {
                return Err(Error::schema(
                    "model block must set exactly one of backbone or checkpoint, got both",
                ));
            }
            (None, None) => {
                return Err(Error::schema(
                    "model block must set exactly one of backbone or checkpoint, got neither",
                ));
            }
            _ => {}
        }
        self.dataset.labels.build()?;
        if let DataFormat::Tabular { .. } = &self.dataset.format {
            self.dataset.format.delimiter_byte()?;
        }
        StaticWeights::new(
            self.objective.static_weights.w_s,
            self.objective.static_weights.w_c,
        )?;
        if let Some(weights) = &self.objective.class_weights {
            let space = self.dataset.labels.build()?;
            if weights.len() != space.len() {
                return Err(Error::schema(format!(
                    "{} class weights for {} labels",
                    weights.len(),
                    space.len()
                )));
            }
            ClassWeights::new(weights.clone())?;
        }
        if self.evidence.k == 0 {
            return Err(Error::schema("evidence.k must be at least 1"));
        }
        if self.train.max_summary_len == 0 {
            return Err(Error::schema("max_summary_len must be at least 1"));
        }
        for (label, path) in [
            ("train_path", &self.dataset.train_path),
            ("validation_path", &self.dataset.validation_path),
            ("test_path", &self.dataset.test_path),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(Error::schema(format!(
                        "dataset.{label} {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        if let Some(ckpt) = &self.model.checkpoint {
            if !ckpt.exists() {
                return Err(Error::schema(format!(
                    "model.checkpoint {} does not exist",
                    ckpt.display()
                )));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.workers == 0 {
                return Err(Error::schema("sweep.workers must be at least 1"));
            }
        }
        self.assemble_train_config().validate()
    }

    pub fn label_space(&self) -> Result<LabelSpace> {
        self.dataset.labels.build()
    }

    /// Fuse the objective and train blocks into the trainer's view.
    pub fn assemble_train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            dropout: Some(self.train.dropout),
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            max_steps: self.train.max_steps,
            seed: self.train.seed,
            loss_mode: self.objective.loss_mode,
            static_weights: self.objective.static_weights,
            class_weights: self
                .objective
                .class_weights
                .clone()
                .map(|w| ClassWeights::new(w).expect("validated")),
            uncertainty_init: self.objective.uncertainty_init,
            eval_every: self.train.eval_every,
            patience: self.train.patience,
            grad_clip: self.train.grad_clip,
            input_template: self.evidence.template.clone(),
            start_step: 0,
        }
    }

    /// Apply one dot-path override (for grid trials) onto the JSON form
    /// and re-validate, so bad paths and bad values both fail as schema
    /// errors.
    pub fn with_overrides(
        &self,
        overrides: &std::collections::BTreeMap<String, serde_json::Value>,
    ) -> Result<RunConfig> {
        let mut doc = serde_json::to_value(self)
            .map_err(|e| Error::runtime(format!("serialize run config: {e}")))?;
        for (path, value) in overrides {
            apply_override(&mut doc, path, value)?;
        }
        let config: RunConfig = serde_json::from_value(doc)
            .map_err(|e| Error::schema(format!("override produced invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }
}

fn apply_override(
    doc: &mut serde_json::Value,
    path: &str,
    value: &serde_json::Value,
) -> Result<()> {
    let mut cursor = doc;
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::schema(format!("bad override path {path:?}")));
    }
    for (i, segment) in segments.iter().enumerate() {
        let map = cursor.as_object_mut().ok_or_else(|| {
            Error::schema(format!("override path {path:?} descends into a non-object"))
        })?;
        if i + 1 == segments.len() {
            map.insert((*segment).to_string(), value.clone());
            return Ok(());
        }
        cursor = map
            .entry((*segment).to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("loop returns on the last segment")
}
