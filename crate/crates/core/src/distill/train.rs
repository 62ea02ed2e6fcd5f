use serde::{Deserialize, Serialize};

use super::batch::{DistillBatch, RolloutTask, View};
use super::config::{DistillConfig, TeacherMode};
use super::loss::{loss_and_grad, LossOutput, Objective};
use super::optim::Optimizer;
use crate::error::{Error, Result};
use crate::lm::Model;
use crate::seeds;

/// Outcome of one training step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Zero-based index of this step.
    pub step: usize,
    /// Objective value; `None` when the step was skipped.
    pub loss: Option<f64>,
    pub mean_token_kl: Option<f64>,
    pub grad_norm: Option<f64>,
    pub rollout_len_mean: f64,
    pub rollout_len_min: usize,
    pub rollout_len_max: usize,
    /// Why the update was skipped, if it was.
    pub skipped: Option<String>,
}

/// Student, teacher and optimizer state of a distillation run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub student: Model,
    /// Fixed teacher in frozen mode, the current snapshot in periodic mode,
    /// `None` in self-shared mode.
    pub teacher: Option<Model>,
    pub optimizer: Optimizer,
    pub mode: TeacherMode,
    /// Steps attempted so far.
    pub step: usize,
    /// Incremented on every parameter update.
    pub version: u64,
}

impl TrainState {
    pub fn new(student: Model, teacher: Option<Model>, config: &DistillConfig) -> Result<Self> {
        config.validate(student.config().vocab_size)?;
        match (config.teacher_mode, &teacher) {
            (TeacherMode::Frozen, None) => {
                return Err(Error::Config("frozen teacher mode needs a teacher model".into()));
            }
            (TeacherMode::SelfShared, Some(_)) => {
                return Err(Error::Config("self-shared mode scores with the student; no teacher expected".into()));
            }
            (TeacherMode::Periodic { .. }, Some(_)) => {
                return Err(Error::Config("periodic mode snapshots the student; no teacher expected".into()));
            }
            _ => {}
        }
        if let Some(t) = &teacher {
            if t.vocab() != student.vocab() {
                return Err(Error::VocabularyMismatch);
            }
        }
        let optimizer = Optimizer::new(config.optimizer, config.learning_rate, config.clip_norm, student.params());
        Ok(Self { student, teacher, optimizer, mode: config.teacher_mode, step: 0, version: 0 })
    }

    /// Refreshes the periodic snapshot when the step count is a multiple of
    /// the cadence (including step 0).
    fn refresh_snapshot(&mut self) {
        if let TeacherMode::Periodic { update_every } = self.mode {
            if self.teacher.is_none() || self.step.is_multiple_of(update_every) {
                self.teacher = Some(self.student.clone());
            }
        }
    }

    /// The model whose rows the student is matched against this step.
    pub fn teacher_view(&self) -> Result<&Model> {
        teacher_view(self.mode, &self.student, self.teacher.as_ref())
    }
}

/// Resolves the scoring model for `mode`. Teacher scoring always runs on a
/// separate tape, so the self-shared student receives no gradient through
/// it.
pub fn teacher_view<'a>(mode: TeacherMode, student: &'a Model, teacher: Option<&'a Model>) -> Result<&'a Model> {
    match (mode, teacher) {
        (TeacherMode::SelfShared, None) => Ok(student),
        (TeacherMode::SelfShared, Some(_)) => {
            Err(Error::Config("self-shared mode scores with the student; no teacher expected".into()))
        }
        (_, Some(t)) => Ok(t),
        (_, None) => Err(Error::Config("teacher model required".into())),
    }
}

/// Generates `batch_size` items with `policy` under `view`. Item `i` of step
/// `step` uses its own seed stream, so a step is replayable from `seed`.
pub fn collect_rollouts(
    policy: &Model,
    task: &dyn RolloutTask,
    view: View,
    config: &DistillConfig,
    seed: u64,
    step: usize,
    policy_version: u64,
) -> Result<DistillBatch> {
    let step_seed = seeds::derive(seed, "rollout", step as u64);
    let items = (0..config.batch_size)
        .map(|i| {
            task.rollout(
                policy,
                view,
                config.rollout_temperature,
                config.max_response_tokens,
                seeds::derive(step_seed, "item", i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DistillBatch { items, policy_version })
}

fn apply(state: &mut TrainState, batch: &DistillBatch, objective: Objective, config: &DistillConfig) -> Result<StepReport> {
    let (mean, min, max) = batch.length_stats();
    let mut report = StepReport {
        step: state.step,
        loss: None,
        mean_token_kl: None,
        grad_norm: None,
        rollout_len_mean: mean,
        rollout_len_min: min,
        rollout_len_max: max,
        skipped: None,
    };
    let outcome = {
        let teacher = state.teacher_view()?;
        loss_and_grad(&state.student, teacher, batch, objective, config.per_turn_mean)
    };
    state.step += 1;
    let LossOutput { loss, grads, mean_token_kl, .. } = match outcome {
        Ok(o) => o,
        Err(e @ (Error::NonFiniteLoss(_) | Error::NonFiniteGradient { .. })) => {
            report.skipped = Some(e.to_string());
            return Ok(report);
        }
        Err(e) => return Err(e),
    };
    report.loss = Some(loss);
    report.mean_token_kl = Some(mean_token_kl);
    let mut params = state.student.params().clone();
    match state.optimizer.step(&mut params, &grads) {
        Ok(norm) => report.grad_norm = Some(norm),
        Err(e) => {
            report.skipped = Some(e.to_string());
            return Ok(report);
        }
    }
    if !params.is_finite() {
        report.skipped = Some("update produced non-finite parameters".into());
        return Ok(report);
    }
    state.student.set_params(params);
    state.version += 1;
    Ok(report)
}

/// Gradient step on a batch of student rollouts. Rejects a batch sampled
/// from any other parameter version.
pub fn opcd_update(state: &mut TrainState, batch: &DistillBatch, config: &DistillConfig) -> Result<StepReport> {
    if batch.policy_version != state.version {
        return Err(Error::StaleBatch { batch: batch.policy_version, current: state.version });
    }
    let objective = Objective::Reverse { top_k: config.top_k, renormalize: config.renormalize_top_k };
    apply(state, batch, objective, config)
}

/// One on-policy step: the student samples responses without the context,
/// the teacher scores them with it, and the student takes one gradient step
/// on the per-token reverse KL.
pub fn opcd_train_step(
    state: &mut TrainState,
    task: &dyn RolloutTask,
    config: &DistillConfig,
    seed: u64,
) -> Result<StepReport> {
    state.refresh_snapshot();
    let batch = collect_rollouts(&state.student, task, View::Student, config, seed, state.step, state.version)?;
    opcd_update(state, &batch, config)
}

/// One off-policy baseline step: the teacher samples with the context, and
/// the student minimizes forward KL on those tokens without it.
pub fn offpolicy_context_distill_step(
    state: &mut TrainState,
    task: &dyn RolloutTask,
    config: &DistillConfig,
    seed: u64,
) -> Result<StepReport> {
    let teacher = match (state.mode, &state.teacher) {
        (TeacherMode::Frozen, Some(t)) => t,
        _ => return Err(Error::Config("off-policy distillation needs a frozen teacher".into())),
    };
    let batch = collect_rollouts(teacher, task, View::Teacher, config, seed, state.step, state.version)?;
    apply(state, &batch, Objective::Forward, config)
}
