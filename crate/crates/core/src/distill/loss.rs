//! Distillation objectives built from tape primitives. Teacher rows are
//! computed on their own tape and enter the student graph as constants.

use super::batch::{DistillBatch, Turn};
use super::config::DistillConfig;
use super::kl::{reverse_kl_token, top_k_indices};
use crate::autodiff::{Gradients, Nonlinearity, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::lm::{Model, ParamVars};

/// Large negative offset that removes a vocabulary entry from a
/// log-softmax while keeping every value finite.
const MASKED: f64 = -1e30;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    /// Student-side top-k reverse KL.
    Reverse { top_k: usize, renormalize: bool },
    /// Full-vocabulary forward KL.
    Forward,
}

/// Loss value, parameter gradients and token statistics for one batch.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: Gradients,
    pub tokens: usize,
    /// Exact reverse KL per generated token, averaged over the batch.
    pub mean_token_kl: f64,
}

/// Per-token loss weight for every turn of every item: `1/(B·|y|)` over the
/// whole item by default, or `1/(B·turns·|y_turn|)` with `per_turn_mean`.
fn turn_weights(batch: &DistillBatch, per_turn_mean: bool) -> Vec<Vec<f64>> {
    let b = batch.items.len() as f64;
    batch
        .items
        .iter()
        .map(|item| {
            let total = item.response_tokens() as f64;
            let turns = item.turns.len() as f64;
            item.turns
                .iter()
                .map(|t| if per_turn_mean { 1.0 / (b * turns * t.response.len() as f64) } else { 1.0 / (b * total) })
                .collect()
        })
        .collect()
}

fn check_pair(student: &Model, teacher: &Model) -> Result<()> {
    if student.vocab() != teacher.vocab() {
        return Err(Error::VocabularyMismatch);
    }
    Ok(())
}

/// Weighted sum of per-token divergences for one turn, as a scalar on `tape`.
/// `teacher_rows` are the teacher's log-probabilities for the same response.
/// Returns the scalar and the exact per-token reverse KLs of the turn.
pub fn turn_loss_on_tape(
    tape: &mut Tape,
    p: &ParamVars,
    student: &Model,
    turn: &Turn,
    teacher_rows: &Tensor,
    objective: Objective,
    weight: f64,
) -> Result<(Var, Vec<f64>)> {
    let s = student.score_on_tape(tape, p, &turn.student_prefix, &turn.response)?;
    let rows = turn.response.len();
    let v = student.config().vocab_size;
    if teacher_rows.shape() != [rows, v] {
        return Err(Error::Shape {
            op: "distill",
            detail: format!("teacher rows {:?} vs student [{rows}×{v}]", teacher_rows.shape()),
        });
    }
    let s_val = tape.value(s).clone();
    let mut exact = Vec::with_capacity(rows);
    for r in 0..rows {
        exact.push(reverse_kl_token(s_val.row(r), teacher_rows.row(r), v, false)?);
    }
    let t = tape.constant(teacher_rows.clone());
    let out = match objective {
        Objective::Reverse { top_k, renormalize } => {
            if top_k == 0 || top_k > v {
                return Err(Error::TopKTooLarge { k: top_k, vocab: v });
            }
            let mut w = vec![0.0; rows * v];
            let mut offset = vec![MASKED; rows * v];
            for r in 0..rows {
                for idx in top_k_indices(s_val.row(r), top_k) {
                    w[r * v + idx] = weight;
                    offset[r * v + idx] = 0.0;
                }
            }
            let log_p = if renormalize && top_k < v {
                let off = tape.constant(Tensor::matrix(rows, v, offset)?);
                let shifted = tape.add(s, off)?;
                tape.log_softmax_rows(shifted)?
            } else {
                s
            };
            let prob = tape.nonlinearity(log_p, Nonlinearity::Exp)?;
            let diff = tape.sub(log_p, t)?;
            let terms = tape.mul(prob, diff)?;
            let w = tape.constant(Tensor::matrix(rows, v, w)?);
            let weighted = tape.mul(terms, w)?;
            tape.sum(weighted)?
        }
        Objective::Forward => {
            let pw: Vec<f64> = teacher_rows.data().iter().map(|tv| tv.exp() * weight).collect();
            let diff = tape.sub(t, s)?;
            let pw = tape.constant(Tensor::matrix(rows, v, pw)?);
            let weighted = tape.mul(diff, pw)?;
            tape.sum(weighted)?
        }
    };
    Ok((out, exact))
}

fn teacher_rows(teacher: &Model, turn: &Turn) -> Result<Tensor> {
    teacher.score_response(&turn.teacher_prefix, &turn.response)
}

/// Whole batch on a single tape; returns the scalar loss.
pub fn loss_on_tape(
    tape: &mut Tape,
    p: &ParamVars,
    student: &Model,
    teacher: &Model,
    batch: &DistillBatch,
    objective: Objective,
    per_turn_mean: bool,
) -> Result<Var> {
    batch.validate()?;
    check_pair(student, teacher)?;
    let weights = turn_weights(batch, per_turn_mean);
    let mut total: Option<Var> = None;
    for (item, ws) in batch.items.iter().zip(&weights) {
        for (turn, &w) in item.turns.iter().zip(ws) {
            let rows = teacher_rows(teacher, turn)?;
            let (l, _) = turn_loss_on_tape(tape, p, student, turn, &rows, objective, w)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, l)?,
                None => l,
            });
        }
    }
    Ok(total.expect("validated batch has a turn"))
}

/// The on-policy objective: mean over items of the per-token top-k reverse
/// KL, on one tape.
pub fn opcd_loss_on_tape(
    tape: &mut Tape,
    p: &ParamVars,
    student: &Model,
    teacher: &Model,
    batch: &DistillBatch,
    config: &DistillConfig,
) -> Result<Var> {
    let objective = Objective::Reverse { top_k: config.top_k, renormalize: config.renormalize_top_k };
    loss_on_tape(tape, p, student, teacher, batch, objective, config.per_turn_mean)
}

/// Loss and gradients, one tape per turn so memory stays bounded by the
/// longest turn. Gradients equal those of [`loss_on_tape`].
///
/// A non-finite loss or gradient is reported as an error so the caller can
/// skip the update.
pub fn loss_and_grad(
    student: &Model,
    teacher: &Model,
    batch: &DistillBatch,
    objective: Objective,
    per_turn_mean: bool,
) -> Result<LossOutput> {
    batch.validate()?;
    check_pair(student, teacher)?;
    let weights = turn_weights(batch, per_turn_mean);
    let mut grads = Gradients::default();
    let mut loss = 0.0;
    let mut kl_sum = 0.0;
    let mut tokens = 0;
    for (item, ws) in batch.items.iter().zip(&weights) {
        for (turn, &w) in item.turns.iter().zip(ws) {
            let rows = teacher_rows(teacher, turn)?;
            let mut tape = Tape::new();
            let p = student.register(&mut tape);
            let (l, exact) = turn_loss_on_tape(&mut tape, &p, student, turn, &rows, objective, w)?;
            let value = tape.value(l).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss(value));
            }
            loss += value;
            kl_sum += exact.iter().sum::<f64>();
            tokens += exact.len();
            grads.accumulate(tape.backward(l)?);
        }
    }
    Ok(LossOutput { loss, grads, tokens, mean_token_kl: kl_sum / tokens as f64 })
}

/// [`loss_and_grad`] with the on-policy reverse-KL objective.
pub fn opcd_loss(student: &Model, teacher: &Model, batch: &DistillBatch, config: &DistillConfig) -> Result<LossOutput> {
    let objective = Objective::Reverse { top_k: config.top_k, renormalize: config.renormalize_top_k };
    loss_and_grad(student, teacher, batch, objective, config.per_turn_mean)
}

/// [`loss_and_grad`] with the full-vocabulary forward-KL objective.
pub fn forward_kl_loss(student: &Model, teacher: &Model, batch: &DistillBatch, per_turn_mean: bool) -> Result<LossOutput> {
    loss_and_grad(student, teacher, batch, Objective::Forward, per_turn_mean)
}
