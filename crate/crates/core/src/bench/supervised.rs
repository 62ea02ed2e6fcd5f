//! Teacher-forced training on target distributions, used to pretrain the
//! desk-scale teachers.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Tensor};
use crate::distill::{Optimizer, OptimizerKind};
use crate::error::{Error, Result};
use crate::lm::{Model, TokenId};
use crate::seeds;

/// One training sequence. Row `t` of `targets` is the distribution for
/// position `t` of `response`; `response` supplies the teacher-forced
/// tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub prefix: Vec<TokenId>,
    pub response: Vec<TokenId>,
    pub targets: Vec<Vec<(TokenId, f64)>>,
}

impl Example {
    /// Every position a one-hot target on its own token.
    pub fn exact(prefix: Vec<TokenId>, response: Vec<TokenId>) -> Self {
        let targets = response.iter().map(|&t| vec![(t, 1.0)]).collect();
        Self { prefix, response, targets }
    }
}

/// Something that generates pretraining examples and scores a model.
pub trait PretrainTask {
    fn example(&self, seed: u64) -> Example;

    /// Accuracy with the task's context.
    fn accuracy_with_context(&self, model: &Model, n: usize, seed: u64) -> Result<f64>;

    /// Accuracy without any context, or `None` when the task has no context
    /// gap to establish.
    fn accuracy_without_context(&self, model: &Model, n: usize, seed: u64) -> Result<Option<f64>>;

    /// Accuracy of a uniform guess, for the near-chance condition.
    fn chance(&self) -> f64;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub max_steps: usize,
    /// Keep training at least this long even once the threshold holds.
    pub min_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub eval_every: usize,
    pub eval_n: usize,
    /// Required accuracy with context.
    pub threshold: f64,
    /// Allowed margin over chance without context.
    pub chance_margin: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            max_steps: 6000,
            min_steps: 0,
            batch_size: 16,
            learning_rate: 3e-3,
            eval_every: 250,
            eval_n: 300,
            threshold: 0.97,
            chance_margin: 0.10,
        }
    }
}

/// Mean cross-entropy of `examples` and its gradient.
pub fn supervised_loss_and_grad(model: &Model, examples: &[Example]) -> Result<(f64, Gradients)> {
    if examples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let v = model.config().vocab_size;
    let weight = 1.0 / examples.len() as f64;
    let mut total = 0.0;
    let mut grads = Gradients::default();
    for ex in examples {
        if ex.targets.len() != ex.response.len() {
            return Err(Error::InvalidArgument("one target row per response token".into()));
        }
        let mut tape = Tape::new();
        let p = model.register(&mut tape);
        let rows = model.score_on_tape(&mut tape, &p, &ex.prefix, &ex.response)?;
        let mut q = Tensor::zeros(&[ex.response.len(), v]);
        for (r, dist) in ex.targets.iter().enumerate() {
            for &(tok, w) in dist {
                if tok as usize >= v {
                    return Err(Error::TokenOutOfRange { id: tok, size: v });
                }
                q.row_mut(r)[tok as usize] -= w * weight;
            }
        }
        let q = tape.constant(q);
        let prod = tape.mul(rows, q)?;
        let loss = tape.sum(prod)?;
        total += tape.value(loss).item();
        grads.accumulate(tape.backward(loss)?);
    }
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss(total));
    }
    Ok((total, grads))
}

/// One row of a pretraining curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub with_context: f64,
    pub without_context: Option<f64>,
}

fn batch(task: &dyn PretrainTask, cfg: &PretrainConfig, seed: u64, step: usize) -> Vec<Example> {
    let s = seeds::derive(seed, "pretrain-batch", step as u64);
    (0..cfg.batch_size).map(|i| task.example(seeds::derive(s, "example", i as u64))).collect()
}

/// `steps` Adam steps from `model`, no evaluation.
pub fn train_steps(model: &mut Model, task: &dyn PretrainTask, cfg: &PretrainConfig, steps: usize, seed: u64) -> Result<()> {
    let mut opt = Optimizer::new(OptimizerKind::adam(), cfg.learning_rate, Some(1.0), model.params());
    for step in 0..steps {
        let (_, grads) = supervised_loss_and_grad(model, &batch(task, cfg, seed, step))?;
        let mut params = model.params().clone();
        opt.step(&mut params, &grads)?;
        model.set_params(params);
    }
    Ok(())
}

fn reached(task: &dyn PretrainTask, cfg: &PretrainConfig, p: &CurvePoint) -> bool {
    p.with_context >= cfg.threshold && p.without_context.is_none_or(|w| w <= task.chance() + cfg.chance_margin)
}

/// Trains until the threshold holds at an evaluation point, checking every
/// `eval_every` steps. Errors with the whole curve when `max_steps` runs out.
pub fn pretrain(model: &mut Model, task: &dyn PretrainTask, cfg: &PretrainConfig, seed: u64) -> Result<Vec<CurvePoint>> {
    let mut opt = Optimizer::new(OptimizerKind::adam(), cfg.learning_rate, Some(1.0), model.params());
    let mut curve = Vec::new();
    let eval_seed = seeds::derive(seed, "pretrain-eval", 0);
    let every = cfg.eval_every.max(1);
    for step in 0..=cfg.max_steps {
        if step.is_multiple_of(every) || step == cfg.max_steps {
            let point = CurvePoint {
                step,
                with_context: task.accuracy_with_context(model, cfg.eval_n, eval_seed)?,
                without_context: task.accuracy_without_context(model, cfg.eval_n, eval_seed)?,
            };
            curve.push(point);
            if step > 0 && step >= cfg.min_steps && reached(task, cfg, &point) {
                return Ok(curve);
            }
        }
        if step == cfg.max_steps {
            break;
        }
        let (_, grads) = supervised_loss_and_grad(model, &batch(task, cfg, seed, step))?;
        let mut params = model.params().clone();
        opt.step(&mut params, &grads)?;
        model.set_params(params);
    }
    Err(Error::ThresholdUnreachable {
        steps: cfg.max_steps,
        curve: curve.iter().map(|p| (p.step, p.with_context, p.without_context.unwrap_or(f64::NAN))).collect(),
    })
}
