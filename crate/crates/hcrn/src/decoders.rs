//! Task-specific answer heads and losses: open-ended classification,
//! count regression with rounding, and multi-choice ranking with a pairwise
//! hinge loss.

use rand::Rng;

use crate::params::{ModelError, ModelParams, TapeBinder};
use crate::tensor::{MacScope, Tape, TensorId};

/// What a question's answer looks like.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnswerSpace {
    /// Classification over a fixed label set.
    OpenEnded { labels: usize },
    /// Integer count within an inclusive range.
    Count { lo: i64, hi: i64 },
    /// Ranking over per-sample candidate token sequences.
    MultiChoice,
}

/// Shared trunk of the open-ended and count heads:
/// `y = ELU(W_o [pooled, W_q q + b_q] + b_o)`, `y' = ELU(W_y y + b_y)`.
fn head_trunk(
    tape: &mut Tape,
    binder: &mut TapeBinder,
    pooled: TensorId,
    question: TensorId,
) -> Result<TensorId, ModelError> {
    let w_q = binder.bind(tape, "dec.w_q")?;
    let b_q = binder.bind(tape, "dec.b_q")?;
    let q_proj = tape.linear(question, w_q, Some(b_q))?;
    let joint = tape.concat(&[pooled, q_proj], 0)?;
    let w_o = binder.bind(tape, "dec.w_o")?;
    let b_o = binder.bind(tape, "dec.b_o")?;
    let y_pre = tape.linear(joint, w_o, Some(b_o))?;
    let y = tape.elu(y_pre);
    let w_y = binder.bind(tape, "dec.w_y")?;
    let b_y = binder.bind(tape, "dec.b_y")?;
    let y2_pre = tape.linear(y, w_y, Some(b_y))?;
    Ok(tape.elu(y2_pre))
}

/// Label probabilities for open-ended questions; sums to 1.
pub fn openended_probs(
    tape: &mut Tape,
    binder: &mut TapeBinder,
    pooled: TensorId,
    question: TensorId,
) -> Result<TensorId, ModelError> {
    tape.set_scope(MacScope::Decoder);
    let trunk = head_trunk(tape, binder, pooled, question)?;
    let w_p = binder.bind(tape, "dec.w_p")?;
    let b_p = binder.bind(tape, "dec.b_p")?;
    let logits = tape.linear(trunk, w_p, Some(b_p))?;
    Ok(tape.softmax(logits, 0)?)
}

/// Unrounded count regression value (shape `[1]` on the tape).
pub fn count_raw(
    tape: &mut Tape,
    binder: &mut TapeBinder,
    pooled: TensorId,
    question: TensorId,
) -> Result<TensorId, ModelError> {
    tape.set_scope(MacScope::Decoder);
    let trunk = head_trunk(tape, binder, pooled, question)?;
    let w_r = binder.bind(tape, "dec.w_r")?;
    let b_r = binder.bind(tape, "dec.b_r")?;
    let raw = tape.linear(trunk, w_r, Some(b_r))?;
    Ok(tape.reshape(raw, vec![1])?)
}

/// Inference-time count: round half away from zero, clamp to the range.
pub fn round_count(raw: f64, lo: i64, hi: i64) -> i64 {
    (raw.round() as i64).clamp(lo, hi)
}

/// Score one answer candidate from the question-conditioned and
/// candidate-conditioned passes:
/// `s = W_s ELU(W_y [pooled_q, pooled_a, W_q q + b, W_a a + b] + b_y) + b_s`.
pub fn multichoice_score(
    tape: &mut Tape,
    binder: &mut TapeBinder,
    pooled_q: TensorId,
    pooled_a: TensorId,
    question: TensorId,
    candidate: TensorId,
) -> Result<TensorId, ModelError> {
    tape.set_scope(MacScope::Decoder);
    let w_q = binder.bind(tape, "dec.w_q")?;
    let b_q = binder.bind(tape, "dec.b_q")?;
    let q_proj = tape.linear(question, w_q, Some(b_q))?;
    let w_a = binder.bind(tape, "dec.w_a")?;
    let b_a = binder.bind(tape, "dec.b_a")?;
    let a_proj = tape.linear(candidate, w_a, Some(b_a))?;
    let joint = tape.concat(&[pooled_q, pooled_a, q_proj, a_proj], 0)?;
    let w_y = binder.bind(tape, "dec.w_y")?;
    let b_y = binder.bind(tape, "dec.b_y")?;
    let y_pre = tape.linear(joint, w_y, Some(b_y))?;
    let y = tape.elu(y_pre);
    let w_s = binder.bind(tape, "dec.w_s")?;
    let b_s = binder.bind(tape, "dec.b_s")?;
    let s = tape.linear(y, w_s, Some(b_s))?;
    Ok(tape.reshape(s, vec![1])?)
}

/// Argmax over candidate scores; first index wins ties.
pub fn rank_candidates(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// `-log p[target]`.
pub fn cross_entropy_loss(
    tape: &mut Tape,
    probs: TensorId,
    target: usize,
) -> Result<TensorId, ModelError> {
    let p = tape.pick(probs, target)?;
    let logp = tape.ln(p);
    Ok(tape.affine(logp, -1.0, 0.0))
}

/// `(raw - target)^2` on the unrounded regression value.
pub fn mse_loss(tape: &mut Tape, raw: TensorId, target: f64) -> Result<TensorId, ModelError> {
    let diff = tape.affine(raw, 1.0, -target);
    Ok(tape.hadamard(diff, diff)?)
}

/// Pairwise hinge summed over incorrect candidates:
/// `sum_n max(0, 1 + s_n - s_p)`.
pub fn hinge_loss(
    tape: &mut Tape,
    scores: &[TensorId],
    correct: usize,
) -> Result<TensorId, ModelError> {
    if scores.len() < 2 {
        return Err(ModelError::BadInput(
            "hinge loss needs at least two candidates".into(),
        ));
    }
    if correct >= scores.len() {
        return Err(ModelError::BadInput(format!(
            "correct index {correct} out of range for {} candidates",
            scores.len()
        )));
    }
    let one_minus_sp = tape.affine(scores[correct], -1.0, 1.0);
    let mut terms = Vec::with_capacity(scores.len() - 1);
    for (j, &s) in scores.iter().enumerate() {
        if j == correct {
            continue;
        }
        let margin = tape.add(s, one_minus_sp)?;
        terms.push(tape.relu(margin));
    }
    Ok(tape.sum_list(&terms)?)
}

/// Decoder head parameters for the given answer space.
pub fn init_decoder<R: Rng>(params: &mut ModelParams, d: usize, space: &AnswerSpace, rng: &mut R) {
    params.init_linear("dec.w_q", d, d, rng);
    params.init_zeros("dec.b_q", vec![d]);
    match space {
        AnswerSpace::OpenEnded { labels } => {
            params.init_linear("dec.w_o", 2 * d, d, rng);
            params.init_zeros("dec.b_o", vec![d]);
            params.init_linear("dec.w_y", d, d, rng);
            params.init_zeros("dec.b_y", vec![d]);
            params.init_linear("dec.w_p", d, *labels, rng);
            params.init_zeros("dec.b_p", vec![*labels]);
        }
        AnswerSpace::Count { .. } => {
            params.init_linear("dec.w_o", 2 * d, d, rng);
            params.init_zeros("dec.b_o", vec![d]);
            params.init_linear("dec.w_y", d, d, rng);
            params.init_zeros("dec.b_y", vec![d]);
            params.init_linear("dec.w_r", d, 1, rng);
            params.init_zeros("dec.b_r", vec![1]);
        }
        AnswerSpace::MultiChoice => {
            params.init_linear("dec.w_a", d, d, rng);
            params.init_zeros("dec.b_a", vec![d]);
            params.init_linear("dec.w_y", 4 * d, d, rng);
            params.init_zeros("dec.b_y", vec![d]);
            params.init_linear("dec.w_s", d, 1, rng);
            params.init_zeros("dec.b_s", vec![1]);
        }
    }
}
