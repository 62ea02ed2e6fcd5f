use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::Vocabulary;
use crate::seeds;

use super::extract::Extractor;
use super::items::{ExperienceContext, ExperienceItem, Origin};

/// One context snapshot: the state of run `repeat` after accumulation step
/// `step` (1-based), which processed problem `problem`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub repeat: usize,
    pub step: usize,
    pub problem: usize,
    pub context: ExperienceContext,
}

/// A problem the extractor failed on; the run went on without it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionFailure {
    pub repeat: usize,
    pub step: usize,
    pub problem: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pool {
    pub entries: Vec<PoolEntry>,
    pub failures: Vec<ExtractionFailure>,
}

impl Pool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contexts(&self) -> Vec<&ExperienceContext> {
        self.entries.iter().map(|e| &e.context).collect()
    }

    /// One JSON record per snapshot.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads what [`save`](Self::save) wrote. Failures are not persisted.
    pub fn load(path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                entries.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { entries, failures: Vec::new() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub repeats: usize,
    pub per_run: usize,
    pub budget: usize,
}

/// `repeats` independent accumulation runs of `per_run` problems each,
/// snapshotting after every step. Problems are drawn without replacement
/// when there are enough of them.
///
/// Run `r` uses only seeds derived from `(seed, r)`, so runs do not depend
/// on each other.
pub fn build_pool<P>(
    extractor: &dyn Extractor<P>,
    problems: &[P],
    cfg: PoolConfig,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<Pool> {
    if cfg.per_run == 0 {
        return Err(Error::InvalidArgument("per-run count must be at least 1".into()));
    }
    if problems.is_empty() {
        return Err(Error::InvalidArgument("no problems to build a pool from".into()));
    }
    let mut pool = Pool::default();
    for repeat in 0..cfg.repeats {
        let mut rng = seeds::rng(seed, "pool-draw", repeat as u64);
        let drawn: Vec<usize> = if cfg.per_run <= problems.len() {
            index::sample(&mut rng, problems.len(), cfg.per_run).into_vec()
        } else {
            (0..cfg.per_run).map(|_| rng.gen_range(0..problems.len())).collect()
        };
        let run_seed = seeds::derive(seed, "pool-run", repeat as u64);
        let mut context = ExperienceContext::empty(cfg.budget);
        for (i, &problem) in drawn.iter().enumerate() {
            let step = i + 1;
            let origin = Origin { problem, step };
            let extracted = extractor
                .extract(&problems[problem], &context, seeds::derive(run_seed, "extract", step as u64))
                .and_then(|texts| {
                    texts.into_iter().map(|t| ExperienceItem::new(t, Some(origin))).collect::<Result<Vec<_>>>()
                })
                .and_then(|items| context.accumulate(&items, vocab));
            match extracted {
                Ok(next) => context = next,
                Err(e) => pool.failures.push(ExtractionFailure { repeat, step, problem, message: e.to_string() }),
            }
            pool.entries.push(PoolEntry { repeat, step, problem, context: context.clone() });
        }
    }
    Ok(pool)
}

/// Uniform draw of a pool index.
pub fn select_test_time(pool_len: usize, seed: u64) -> Result<usize> {
    if pool_len == 0 {
        return Err(Error::Experience("cannot select from an empty pool".into()));
    }
    Ok(seeds::rng(seed, "select", 0).gen_range(0..pool_len))
}

/// Accuracy of every context over the validation set, and the index of the
/// best one. Ties go to the lowest index.
pub fn select_filtered<V>(
    contexts: &[&ExperienceContext],
    validation: &[V],
    mut correct: impl FnMut(&ExperienceContext, &V) -> Result<bool>,
) -> Result<(usize, Vec<f64>)> {
    if contexts.is_empty() {
        return Err(Error::Experience("cannot select from an empty pool".into()));
    }
    if validation.is_empty() {
        return Err(Error::Experience("filtered selection needs a non-empty validation set".into()));
    }
    let mut scores = Vec::with_capacity(contexts.len());
    for c in contexts {
        let mut hits = 0usize;
        for v in validation {
            hits += usize::from(correct(c, v)?);
        }
        scores.push(hits as f64 / validation.len() as f64);
    }
    Ok((argmax_first(&scores), scores))
}

/// Index of the largest score, the lowest one among equals.
pub fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax_first(&[0.5, 0.8, 0.8, 0.1]), 1);
        assert_eq!(argmax_first(&[0.8, 0.6]), 0);
    }

    #[test]
    fn empty_validation_is_an_error() {
        let c = ExperienceContext::empty(10);
        let r = select_filtered::<u8>(&[&c], &[], |_, _| Ok(true));
        assert!(r.is_err());
    }
}
