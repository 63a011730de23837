//! The multi-task model: a shared encoder feeding both a summary decoder
//! and a two-layer classification head, behind a backend contract so the
//! tiny from-scratch transformer and any future pretrained checkpoint are
//! interchangeable.

pub mod tiny;
pub mod tokenizer;

use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tapegrad::{BoundParams, ParamStore, Tape, Var};

use crate::corpus::LabelId;
use crate::error::{Error, Result};
use crate::objective::FinalActivation;
use tokenizer::{Tokenizer, BOS_ID, EOS_ID, PAD_ID};

/// Architecture hyperparameters for one model instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub attention_heads: usize,
    pub max_source_len: usize,
    pub max_target_len: usize,
    /// Hidden width of the classification head's first linear layer.
    pub classifier_hidden_dim: usize,
    pub num_classes: usize,
    pub dropout: f64,
    #[serde(default)]
    pub classifier_final_activation: FinalActivation,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("attention_heads", self.attention_heads),
            ("max_source_len", self.max_source_len),
            ("max_target_len", self.max_target_len),
            ("classifier_hidden_dim", self.classifier_hidden_dim),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::schema(format!("{name} must be positive")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::schema("num_classes must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::schema("dropout must lie in [0, 1)"));
        }
        if !self.d_model.is_multiple_of(self.attention_heads) {
            return Err(Error::schema(format!(
                "d_model {} not divisible by attention_heads {}",
                self.d_model, self.attention_heads
            )));
        }
        Ok(())
    }
}

/// Forward-pass mode. Dropout fires only in `Train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One tokenized batch ready for the model. Targets are present during
/// training and absent for pure classification or generation.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    /// Source token ids, `[B, S]`, padded with the pad id.
    pub src_ids: Array2<usize>,
    /// 1.0 on real source positions, 0.0 on padding. Same shape as ids.
    pub src_mask: Array2<f64>,
    /// Decoder input ids (begin-token shifted), `[B, T]`.
    pub tgt_in_ids: Option<Array2<usize>>,
    /// Gold decoder outputs ending in the end token, `[B, T]`.
    pub tgt_out_ids: Option<Array2<usize>>,
    /// 1.0 on real target positions including the end token.
    pub tgt_mask: Option<Array2<f64>>,
    /// Gold class per record.
    pub golds: Vec<LabelId>,
}

impl EncodedBatch {
    /// Tokenize, truncate, and pad a batch. Sources are truncated to
    /// `max_source_len`, targets to `max_target_len` minus one so the end
    /// token always fits.
    pub fn build(
        tokenizer: &Tokenizer,
        sources: &[String],
        targets: Option<&[String]>,
        golds: Vec<LabelId>,
        max_source_len: usize,
        max_target_len: usize,
    ) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::degenerate("empty batch"));
        }
        if golds.len() != sources.len() {
            return Err(Error::schema(format!(
                "{} gold labels for {} sources",
                golds.len(),
                sources.len()
            )));
        }
        if let Some(targets) = targets {
            if targets.len() != sources.len() {
                return Err(Error::schema(format!(
                    "{} targets for {} sources",
                    targets.len(),
                    sources.len()
                )));
            }
        }

        let b = sources.len();
        let mut src_token_rows: Vec<Vec<usize>> = Vec::with_capacity(b);
        for source in sources {
            let mut ids = tokenizer.encode(source);
            ids.truncate(max_source_len);
            if ids.is_empty() {
                return Err(Error::degenerate("source text tokenized to nothing"));
            }
            src_token_rows.push(ids);
        }
        let s = src_token_rows.iter().map(Vec::len).max().unwrap();
        let mut src_ids = Array2::from_elem((b, s), PAD_ID);
        let mut src_mask = Array2::zeros((b, s));
        for (i, row) in src_token_rows.iter().enumerate() {
            for (j, &id) in row.iter().enumerate() {
                src_ids[[i, j]] = id;
                src_mask[[i, j]] = 1.0;
            }
        }

        let (tgt_in_ids, tgt_out_ids, tgt_mask) = match targets {
            None => (None, None, None),
            Some(targets) => {
                let mut rows: Vec<Vec<usize>> = Vec::with_capacity(b);
                for target in targets {
                    let mut ids = tokenizer.encode(target);
                    ids.truncate(max_target_len.saturating_sub(1));
                    rows.push(ids);
                }
                let t = rows.iter().map(|r| r.len() + 1).max().unwrap();
                let mut tin = Array2::from_elem((b, t), PAD_ID);
                let mut tout = Array2::from_elem((b, t), PAD_ID);
                let mut tmask = Array2::zeros((b, t));
                for (i, row) in rows.iter().enumerate() {
                    tin[[i, 0]] = BOS_ID;
                    for (j, &id) in row.iter().enumerate() {
                        tin[[i, j + 1]] = id;
                        tout[[i, j]] = id;
                        tmask[[i, j]] = 1.0;
                    }
                    tout[[i, row.len()]] = EOS_ID;
                    tmask[[i, row.len()]] = 1.0;
                }
                (Some(tin), Some(tout), Some(tmask))
            }
        };

        Ok(Self {
            src_ids,
            src_mask,
            tgt_in_ids,
            tgt_out_ids,
            tgt_mask,
            golds,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.src_ids.nrows()
    }
}

/// The behavior a model backend must supply. Parameters live in a caller-
/// owned [`ParamStore`] so the optimizer sees one flat parameter set; the
/// backend registers its parameters under the `backbone.` prefix and reads
/// them back through [`BoundParams`] during the forward pass.
pub trait ModelBackend {
    fn d_model(&self) -> usize;
    fn vocab_size(&self) -> usize;

    /// Register freshly initialized parameters into `store`.
    fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng);

    /// Run the encoder: `[B, S]` ids to `[B, S, d_model]` hidden states.
    fn encode(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        src_ids: &Array2<usize>,
        src_mask: &Array2<f64>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Var;

    /// Teacher-forced decoder logits `[B, T, vocab]` over encoder memory.
    #[allow(clippy::too_many_arguments)]
    fn decode_logits(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        memory: Var,
        src_mask: &Array2<f64>,
        tgt_in_ids: &Array2<usize>,
        tgt_mask: &Array2<f64>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Var;
}

/// Mean-pool hidden states over unmasked positions: `[B, S, d]` to `[B, d]`.
pub fn pool(tape: &mut Tape, hidden: Var, mask: &Array2<f64>) -> Result<Var> {
    for (row, lane) in mask.rows().into_iter().enumerate() {
        if lane.sum() == 0.0 {
            return Err(Error::degenerate(format!(
                "batch row {row} is fully masked, nothing to pool"
            )));
        }
    }
    Ok(tape.masked_mean_pool(hidden, mask))
}

/// The two-layer classification head: linear(d_model, m), relu, dropout,
/// linear(m, num_classes), then the configured final activation.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub d_model: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub final_activation: FinalActivation,
}

impl ClassifierHead {
    pub fn from_config(config: &BackboneConfig) -> Self {
        Self {
            d_model: config.d_model,
            hidden_dim: config.classifier_hidden_dim,
            num_classes: config.num_classes,
            dropout: config.dropout,
            final_activation: config.classifier_final_activation,
        }
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        store.insert(
            "head.w1",
            xavier_uniform(rng, self.d_model, self.hidden_dim),
        );
        store.insert("head.b1", ArrayD::zeros(IxDyn(&[self.hidden_dim])));
        store.insert(
            "head.w2",
            xavier_uniform(rng, self.hidden_dim, self.num_classes),
        );
        store.insert("head.b2", ArrayD::zeros(IxDyn(&[self.num_classes])));
    }

    /// Class scores `[B, num_classes]` from pooled vectors `[B, d_model]`.
    pub fn classify(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        pooled: Var,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let shape = tape.value(pooled).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.d_model {
            return Err(Error::schema(format!(
                "pooled input must be [batch, {}], got {shape:?}",
                self.d_model
            )));
        }
        let h = tape.matmul(pooled, params.var("head.w1"));
        let h = tape.add_bias(h, params.var("head.b1"));
        let h = tape.relu(h);
        let h = apply_dropout(tape, h, self.dropout, mode, rng);
        let scores = tape.matmul(h, params.var("head.w2"));
        let scores = tape.add_bias(scores, params.var("head.b2"));
        Ok(match self.final_activation {
            FinalActivation::Sigmoid => tape.sigmoid(scores),
            FinalActivation::None => scores,
        })
    }
}

/// Inverted dropout: keep with probability 1 - rate and rescale, so eval
/// needs no correction. No-op in eval mode or at rate 0.
pub fn apply_dropout(tape: &mut Tape, x: Var, rate: f64, mode: Mode, rng: &mut ChaCha8Rng) -> Var {
    if mode == Mode::Eval || rate == 0.0 {
        return x;
    }
    let shape = tape.value(x).raw_dim();
    let keep = 1.0 - rate;
    let mask = ArrayD::from_shape_simple_fn(shape, || {
        if rng.gen::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    });
    tape.mul_const(x, &mask)
}

/// Glorot-style uniform init for a `[rows, cols]` matrix.
pub fn xavier_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> ArrayD<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    ArrayD::from_shape_simple_fn(IxDyn(&[rows, cols]), || rng.gen_range(-bound..bound))
}

/// Both task outputs of one forward pass.
pub struct MultiTaskOutput {
    /// `[B, T, vocab]`, present when the batch carries targets.
    pub summary_logits: Option<Var>,
    /// `[B, num_classes]`.
    pub class_scores: Var,
    /// `[B, d_model]` pooled encoder states.
    pub pooled: Var,
}

/// One joint forward pass: a single encode whose hidden states feed both
/// the decoder (when targets are present) and the pooled classification
/// path. The single `encode` call is the shared-encoder property.
pub fn forward_multitask(
    tape: &mut Tape,
    backend: &dyn ModelBackend,
    params: &BoundParams,
    head: &ClassifierHead,
    batch: &EncodedBatch,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<MultiTaskOutput> {
    let hidden = backend.encode(tape, params, &batch.src_ids, &batch.src_mask, mode, rng);

    let summary_logits = match (&batch.tgt_in_ids, &batch.tgt_mask) {
        (Some(tgt_in), Some(tgt_mask)) => Some(backend.decode_logits(
            tape,
            params,
            hidden,
            &batch.src_mask,
            tgt_in,
            tgt_mask,
            mode,
            rng,
        )),
        _ => None,
    };

    let pooled = pool(tape, hidden, &batch.src_mask)?;
    let class_scores = head.classify(tape, params, pooled, mode, rng)?;

    Ok(MultiTaskOutput {
        summary_logits,
        class_scores,
        pooled,
    })
}

/// How [`generate`] picks tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum GenerationStrategy {
    #[default]
    Greedy,
    Beam {
        width: usize,
    },
}

/// Decode token ids for every record in the batch, encoding once and
/// expanding target prefixes until the end token or `max_len`. Ties in
/// token choice break toward the lower id, so generation is deterministic.
pub fn generate(
    backend: &dyn ModelBackend,
    store: &ParamStore,
    src_ids: &Array2<usize>,
    src_mask: &Array2<f64>,
    max_len: usize,
    strategy: GenerationStrategy,
) -> Result<Vec<Vec<usize>>> {
    if max_len == 0 {
        return Ok(vec![Vec::new(); src_ids.nrows()]);
    }
    match strategy {
        GenerationStrategy::Greedy => greedy_decode(backend, store, src_ids, src_mask, max_len),
        GenerationStrategy::Beam { width } => {
            if width == 0 {
                return Err(Error::schema("beam width must be at least 1"));
            }
            beam_decode(backend, store, src_ids, src_mask, max_len, width)
        }
    }
}

/// Log-softmax of the final position of `[1, T, vocab]` logits.
fn last_position_log_probs(tape: &Tape, logits: Var) -> Vec<f64> {
    let value = tape.value(logits);
    let shape = value.shape();
    let (t, v) = (shape[1], shape[2]);
    let row: Vec<f64> = (0..v).map(|j| value[[0, t - 1, j]]).collect();
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|x| x - log_sum).collect()
}

fn single_row(ids: &Array2<usize>, row: usize) -> Array2<usize> {
    let cols = ids.ncols();
    Array2::from_shape_fn((1, cols), |(_, j)| ids[[row, j]])
}

fn single_row_f(mask: &Array2<f64>, row: usize) -> Array2<f64> {
    let cols = mask.ncols();
    Array2::from_shape_fn((1, cols), |(_, j)| mask[[row, j]])
}

fn greedy_decode(
    backend: &dyn ModelBackend,
    store: &ParamStore,
    src_ids: &Array2<usize>,
    src_mask: &Array2<f64>,
    max_len: usize,
) -> Result<Vec<Vec<usize>>> {
    // Generation never trains, so the dropout stream is never consulted.
    let mut rng: ChaCha8Rng = rand::SeedableRng::seed_from_u64(0);
    let mut outputs = Vec::with_capacity(src_ids.nrows());
    for row in 0..src_ids.nrows() {
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let ids = single_row(src_ids, row);
        let mask = single_row_f(src_mask, row);
        let memory = backend.encode(&mut tape, &params, &ids, &mask, Mode::Eval, &mut rng);

        let mut emitted: Vec<usize> = Vec::new();
        while emitted.len() < max_len {
            let mut prefix = vec![BOS_ID];
            prefix.extend(&emitted);
            let t = prefix.len();
            let tgt_in = Array2::from_shape_vec((1, t), prefix).unwrap();
            let tgt_mask = Array2::from_elem((1, t), 1.0);
            let logits = backend.decode_logits(
                &mut tape,
                &params,
                memory,
                &mask,
                &tgt_in,
                &tgt_mask,
                Mode::Eval,
                &mut rng,
            );
            let log_probs = last_position_log_probs(&tape, logits);
            let next = argmax_tie_low(&log_probs);
            if next == EOS_ID {
                break;
            }
            emitted.push(next);
        }
        outputs.push(emitted);
    }
    Ok(outputs)
}

fn argmax_tie_low(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone)]
struct Beam {
    tokens: Vec<usize>,
    log_prob: f64,
    finished: bool,
}

fn beam_decode(
    backend: &dyn ModelBackend,
    store: &ParamStore,
    src_ids: &Array2<usize>,
    src_mask: &Array2<f64>,
    max_len: usize,
    width: usize,
) -> Result<Vec<Vec<usize>>> {
    let mut rng: ChaCha8Rng = rand::SeedableRng::seed_from_u64(0);
    let mut outputs = Vec::with_capacity(src_ids.nrows());
    for row in 0..src_ids.nrows() {
        let mut tape = Tape::new();
        let params = store.bind(&mut tape);
        let ids = single_row(src_ids, row);
        let mask = single_row_f(src_mask, row);
        let memory = backend.encode(&mut tape, &params, &ids, &mask, Mode::Eval, &mut rng);

        let mut beams = vec![Beam {
            tokens: Vec::new(),
            log_prob: 0.0,
            finished: false,
        }];
        for _ in 0..max_len {
            if beams.iter().all(|b| b.finished) {
                break;
            }
            let mut candidates: Vec<Beam> = Vec::new();
            for beam in &beams {
                if beam.finished {
                    candidates.push(beam.clone());
                    continue;
                }
                let mut prefix = vec![BOS_ID];
                prefix.extend(&beam.tokens);
                let t = prefix.len();
                let tgt_in = Array2::from_shape_vec((1, t), prefix).unwrap();
                let tgt_mask = Array2::from_elem((1, t), 1.0);
                let logits = backend.decode_logits(
                    &mut tape,
                    &params,
                    memory,
                    &mask,
                    &tgt_in,
                    &tgt_mask,
                    Mode::Eval,
                    &mut rng,
                );
                let log_probs = last_position_log_probs(&tape, logits);
                // Only the top `width` extensions of a beam can matter.
                let mut order: Vec<usize> = (0..log_probs.len()).collect();
                order.sort_by(|&a, &b| {
                    log_probs[b]
                        .partial_cmp(&log_probs[a])
                        .expect("log probs are finite")
                        .then(a.cmp(&b))
                });
                for &token in order.iter().take(width) {
                    let mut tokens = beam.tokens.clone();
                    let finished = token == EOS_ID;
                    if !finished {
                        tokens.push(token);
                    }
                    candidates.push(Beam {
                        tokens,
                        log_prob: beam.log_prob + log_probs[token],
                        finished,
                    });
                }
            }
            candidates.sort_by(|a, b| {
                b.log_prob
                    .partial_cmp(&a.log_prob)
                    .expect("log probs are finite")
                    .then(a.tokens.cmp(&b.tokens))
            });
            candidates.truncate(width);
            beams = candidates;
        }
        outputs.push(
            beams
                .into_iter()
                .next()
                .map(|b| b.tokens)
                .unwrap_or_default(),
        );
    }
    Ok(outputs)
}
