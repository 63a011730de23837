//! Loss functions: token-level summary cross-entropy, class-weighted
//! classification cross-entropy, and the two combination strategies (fixed
//! weights and learned per-task uncertainty).
//!
//! Every loss exists in two forms: a tape form used during training and a
//! plain scalar form for evaluation and oracle tests. The scalar forms run
//! the same code on a throwaway tape, so there is exactly one numeric path.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use tapegrad::{NllNorm, Tape, Var};

use crate::corpus::LabelId;
use crate::error::{Error, Result};

/// Fixed task weights for the static combination
/// `total = w_s * loss_summ + w_c * loss_cl`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticWeights {
    pub w_s: f64,
    pub w_c: f64,
}

impl StaticWeights {
    pub fn new(w_s: f64, w_c: f64) -> Result<Self> {
        if w_s < 0.0 || w_c < 0.0 || !(w_s + w_c).is_finite() {
            return Err(Error::schema("task weights must be nonnegative and finite"));
        }
        if w_s + w_c == 0.0 {
            return Err(Error::schema("at least one task weight must be positive"));
        }
        Ok(Self { w_s, w_c })
    }
}

/// Learned log standard deviations for uncertainty weighting, one per task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyState {
    /// log sigma for the classification task.
    pub s_c: f64,
    /// log sigma for the summarization task.
    pub s_s: f64,
}

impl Default for UncertaintyState {
    fn default() -> Self {
        Self { s_c: 0.0, s_s: 0.0 }
    }
}

/// Per-class coefficients for the classification loss, aligned to label
/// space order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::schema("class weight list is empty"));
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::schema(
                "class weights must be nonnegative and finite",
            ));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(Error::schema("at least one class weight must be positive"));
        }
        Ok(Self(weights))
    }

    pub fn uniform(num_classes: usize) -> Self {
        Self(vec![1.0; num_classes])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, label: LabelId) -> f64 {
        self.0[label.0]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// What the classification head applies after its second linear layer.
/// `Sigmoid` matches the architecture as described; `None` is the standard
/// raw-logit alternative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalActivation {
    #[default]
    Sigmoid,
    None,
}

/// Which loss combination strategy training uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Static,
    Uncertainty,
}

/// Mean negative log-likelihood of gold tokens over non-pad positions.
///
/// `logits` is `[N, vocab]` with one row per target position; `targets` are
/// the gold token ids. Pad positions carry zero weight.
pub fn token_ce_on_tape(
    tape: &mut Tape,
    logits: Var,
    targets: &[usize],
    pad_id: usize,
) -> Result<Var> {
    let weights: Vec<f64> = targets
        .iter()
        .map(|&t| if t == pad_id { 0.0 } else { 1.0 })
        .collect();
    if weights.iter().sum::<f64>() == 0.0 {
        return Err(Error::degenerate("every target position is padding"));
    }
    Ok(tape.weighted_nll(logits, targets, &weights, NllNorm::WeightSum))
}

/// Scalar form of [`token_ce_on_tape`].
pub fn token_ce(logits: &Array2<f64>, targets: &[usize], pad_id: usize) -> Result<f64> {
    let mut tape = Tape::new();
    let l = tape.leaf(logits.clone().into_dyn());
    let loss = token_ce_on_tape(&mut tape, l, targets, pad_id)?;
    Ok(tape.scalar(loss))
}

fn check_scores_for_activation(scores: &Array2<f64>, activation: FinalActivation) -> Result<()> {
    match activation {
        FinalActivation::Sigmoid => {
            if scores.iter().any(|&s| !(0.0..=1.0).contains(&s)) {
                Err(Error::runtime(
                    "scores declared sigmoid-activated but lie outside [0, 1]",
                ))
            } else {
                Ok(())
            }
        }
        FinalActivation::None => Ok(()),
    }
}

/// Class-weighted cross-entropy over a batch of score rows.
///
/// Each example contributes `-w[gold] * log softmax(scores)[gold]`; the sum
/// is divided by the sum of gold-class weights under `NllNorm::WeightSum`
/// (the training convention) or left as the raw weighted sum under
/// `NllNorm::Sum`. Scores are consumed as softmax inputs whatever the
/// declared activation; under `Sigmoid` they are additionally checked to
/// lie in [0, 1].
pub fn class_weighted_ce_on_tape(
    tape: &mut Tape,
    scores: Var,
    golds: &[LabelId],
    weights: &ClassWeights,
    norm: NllNorm,
) -> Result<Var> {
    let shape = tape.value(scores).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::schema(format!(
            "class scores must be [batch, classes], got shape {shape:?}"
        )));
    }
    let num_classes = shape[1];
    if weights.len() != num_classes {
        return Err(Error::schema(format!(
            "{} class weights for {num_classes} classes",
            weights.len()
        )));
    }
    if golds.len() != shape[0] {
        return Err(Error::schema(format!(
            "{} gold labels for batch of {}",
            golds.len(),
            shape[0]
        )));
    }
    let mut targets = Vec::with_capacity(golds.len());
    let mut row_weights = Vec::with_capacity(golds.len());
    for gold in golds {
        if gold.0 >= num_classes {
            return Err(Error::schema(format!(
                "gold label index {} out of range for {num_classes} classes",
                gold.0
            )));
        }
        targets.push(gold.0);
        row_weights.push(weights.get(*gold));
    }
    if norm == NllNorm::WeightSum && row_weights.iter().sum::<f64>() == 0.0 {
        return Err(Error::degenerate(
            "all gold labels in the batch carry zero class weight",
        ));
    }
    Ok(tape.weighted_nll(scores, &targets, &row_weights, norm))
}

/// Scalar form of [`class_weighted_ce_on_tape`].
pub fn class_weighted_ce(
    scores: &Array2<f64>,
    golds: &[LabelId],
    weights: &ClassWeights,
    activation: FinalActivation,
    norm: NllNorm,
) -> Result<f64> {
    check_scores_for_activation(scores, activation)?;
    let mut tape = Tape::new();
    let s = tape.leaf(scores.clone().into_dyn());
    let loss = class_weighted_ce_on_tape(&mut tape, s, golds, weights, norm)?;
    Ok(tape.scalar(loss))
}

/// Static combination: exactly `w_s * loss_summ + w_c * loss_cl`.
pub fn combine_static(weights: &StaticWeights, loss_summ: f64, loss_cl: f64) -> f64 {
    weights.w_s * loss_summ + weights.w_c * loss_cl
}

/// Tape form of [`combine_static`]. Loss inputs must be rank-0 scalars.
pub fn combine_static_on_tape(
    tape: &mut Tape,
    weights: &StaticWeights,
    loss_summ: Var,
    loss_cl: Var,
) -> Var {
    let ws = tape.mul_scalar(loss_summ, weights.w_s);
    let wc = tape.mul_scalar(loss_cl, weights.w_c);
    tape.add(ws, wc)
}

/// Uncertainty combination with learned log sigmas:
/// `exp(-2 s_c)/2 * loss_cl + s_c + exp(-2 s_s)/2 * loss_summ + s_s`.
///
/// The effective task weight `exp(-2 s)/2` is always positive, and for a
/// fixed loss L the expression is minimized in sigma at `sigma^2 = L`.
pub fn combine_uncertainty(loss_summ: f64, loss_cl: f64, state: &UncertaintyState) -> f64 {
    0.5 * (-2.0 * state.s_c).exp() * loss_cl
        + state.s_c
        + 0.5 * (-2.0 * state.s_s).exp() * loss_summ
        + state.s_s
}

/// Tape form of [`combine_uncertainty`]; `s_c` and `s_s` are rank-0
/// trainable leaves so the combiner's gradients reach them.
pub fn combine_uncertainty_on_tape(
    tape: &mut Tape,
    loss_summ: Var,
    loss_cl: Var,
    s_c: Var,
    s_s: Var,
) -> Var {
    let task = |tape: &mut Tape, loss: Var, s: Var| {
        let neg2s = tape.mul_scalar(s, -2.0);
        let exp = tape.exp(neg2s);
        let half = tape.mul_scalar(exp, 0.5);
        let weighted = tape.mul(half, loss);
        tape.add(weighted, s)
    };
    let cl_term = task(tape, loss_cl, s_c);
    let summ_term = task(tape, loss_summ, s_s);
    tape.add(cl_term, summ_term)
}
