use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where teacher rows come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherMode {
    /// A separate fixed teacher model.
    #[default]
    Frozen,
    /// A copy of the student, refreshed every `update_every` steps.
    Periodic { update_every: usize },
    /// The live student weights, scored with the context and no gradient.
    SelfShared,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub top_k: usize,
    pub renormalize_top_k: bool,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub max_response_tokens: usize,
    pub teacher_mode: TeacherMode,
    pub rollout_temperature: f64,
    pub optimizer: OptimizerKind,
    /// Global-norm gradient clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Average tokens within each turn, then over turns, instead of one mean
    /// over every generated token of a multi-turn item.
    pub per_turn_mean: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            top_k: 256,
            renormalize_top_k: false,
            batch_size: 128,
            learning_rate: 1e-2,
            steps: 50,
            max_response_tokens: 16,
            teacher_mode: TeacherMode::Frozen,
            rollout_temperature: 1.0,
            optimizer: OptimizerKind::Sgd,
            clip_norm: Some(1.0),
            per_turn_mean: false,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.top_k == 0 || self.top_k > vocab_size {
            return Err(Error::TopKTooLarge { k: self.top_k, vocab: vocab_size });
        }
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning-rate {} must be finite and non-negative", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch-size must be positive".into());
        }
        if self.max_response_tokens == 0 {
            return bad("max-response-tokens must be positive".into());
        }
        if !(self.rollout_temperature >= 0.0 && self.rollout_temperature.is_finite()) {
            return bad(format!("rollout-temperature {}", self.rollout_temperature));
        }
        if let TeacherMode::Periodic { update_every: 0 } = self.teacher_mode {
            return bad("update-every must be ≥ 1".into());
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("clip-norm {c}"));
            }
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return bad("adam betas must lie in [0, 1) and eps be positive".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = DistillConfig::default();
        assert_eq!(c.batch_size, 128);
        assert_eq!(c.steps, 50);
        assert_eq!(c.top_k, 256);
        assert_eq!(c.teacher_mode, TeacherMode::Frozen);
        assert!(c.validate(512).is_ok());
        assert!(matches!(c.validate(100), Err(Error::TopKTooLarge { .. })));
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = DistillConfig { top_k: 4, ..Default::default() };
        c.teacher_mode = TeacherMode::Periodic { update_every: 0 };
        assert!(c.validate(8).is_err());
        c.teacher_mode = TeacherMode::SelfShared;
        c.learning_rate = -1.0;
        assert!(c.validate(8).is_err());
        c.learning_rate = 0.0;
        assert!(c.validate(8).is_ok());
    }
}
