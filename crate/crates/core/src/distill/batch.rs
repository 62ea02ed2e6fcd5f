use crate::error::{Error, Result};
use crate::lm::{join_prefix, Model, TokenId};

/// One generated span and the two prefixes it is scored under.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Turn {
    /// Context-free conditioning: `[BOS] x` (plus any turn-local text).
    pub student_prefix: Vec<TokenId>,
    /// The same conditioning with the context in front: `[BOS] c [SEP] x`.
    pub teacher_prefix: Vec<TokenId>,
    pub response: Vec<TokenId>,
}

/// A single-turn `(c, x, y)` tuple or a multi-turn episode. Environment text
/// lives only in the prefixes; loss positions are the responses.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistillItem {
    pub turns: Vec<Turn>,
}

impl DistillItem {
    pub fn single(context: &[TokenId], input: &[TokenId], response: Vec<TokenId>) -> Self {
        Self {
            turns: vec![Turn {
                student_prefix: join_prefix(&[], input),
                teacher_prefix: join_prefix(context, input),
                response,
            }],
        }
    }

    pub fn response_tokens(&self) -> usize {
        self.turns.iter().map(|t| t.response.len()).sum()
    }
}

/// Items plus the student version that generated them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistillBatch {
    pub items: Vec<DistillItem>,
    /// Student parameter version at sampling time; on-policy updates reject
    /// a batch whose version is not the current one.
    pub policy_version: u64,
}

impl DistillBatch {
    pub fn validate(&self) -> Result<()> {
        if self.items.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for item in &self.items {
            if item.turns.is_empty() || item.turns.iter().any(|t| t.response.is_empty()) {
                return Err(Error::EmptyResponse);
            }
        }
        Ok(())
    }

    /// Mean, min and max response tokens per item.
    pub fn length_stats(&self) -> (f64, usize, usize) {
        let lens: Vec<usize> = self.items.iter().map(DistillItem::response_tokens).collect();
        let min = lens.iter().copied().min().unwrap_or(0);
        let max = lens.iter().copied().max().unwrap_or(0);
        let mean = if lens.is_empty() { 0.0 } else { lens.iter().sum::<usize>() as f64 / lens.len() as f64 };
        (mean, min, max)
    }
}

/// Which prefix the acting model conditions on while generating.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    /// No context: on-policy student rollouts.
    Student,
    /// With context: teacher-generated data for the off-policy baseline.
    Teacher,
}

/// A source of distillation items. Implementations draw a problem from
/// `seed`, let `policy` generate under `view`, and return both prefixes for
/// every generated span.
pub trait RolloutTask {
    fn rollout(&self, policy: &Model, view: View, temperature: f64, max_tokens: usize, seed: u64)
        -> Result<DistillItem>;
}

/// Single-turn task over a fixed list of `(context, input)` problems, drawn
/// uniformly. Responses stop at end-of-response.
#[derive(Clone, Debug)]
pub struct PromptSet {
    pub problems: Vec<(Vec<TokenId>, Vec<TokenId>)>,
}

impl RolloutTask for PromptSet {
    fn rollout(&self, policy: &Model, view: View, temperature: f64, max_tokens: usize, seed: u64) -> Result<DistillItem> {
        use rand::Rng;
        if self.problems.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut rng = crate::seeds::rng(seed, "problem", 0);
        let (c, x) = &self.problems[rng.gen_range(0..self.problems.len())];
        let prefix = match view {
            View::Student => join_prefix(&[], x),
            View::Teacher => join_prefix(c, x),
        };
        let y = policy.sample(&prefix, max_tokens, temperature, crate::lm::EOS, crate::seeds::derive(seed, "sample", 0))?;
        Ok(DistillItem::single(c, x, y))
    }
}
