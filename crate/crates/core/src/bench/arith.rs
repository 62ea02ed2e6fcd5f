//! Keyed single-digit addition as a distillation task, plus the held-out
//! subtraction task used to measure forgetting.

use rand::seq::{IteratorRandom, SliceRandom};
use rand::Rng;

use crate::distill::{DistillItem, RolloutTask, View};
use crate::error::{Error, Result};
use crate::lm::{argmax, join_prefix, Model, TokenId, Vocabulary, EOS, ITEM_PREFIX};
use crate::seeds;
use crate::worlds::{keyed_arith_generate, ood_generate, DigitKey, KeyedArithmeticInstance, OodInstance};

use super::supervised::{Example, PretrainTask};

fn token(vocab: &Vocabulary, symbol: &str) -> Result<TokenId> {
    vocab.id(symbol).ok_or_else(|| Error::InvalidArgument(format!("symbol {symbol:?} missing from the vocabulary")))
}

fn digits(vocab: &Vocabulary) -> Vec<TokenId> {
    (0..10).filter_map(|d| vocab.id(&d.to_string())).collect()
}

/// `- EXPERIENCE ITEM: s→σ(s)` lines for the given sums.
pub fn key_items(key: &DigitKey, sums: &[u8]) -> String {
    sums.iter().map(|&s| format!("{ITEM_PREFIX} {s}→{}", key.apply(s))).collect::<Vec<_>>().join("\n")
}

/// Tokens in a full response: the sum digit, the keyed digit, end of
/// sequence.
pub const RESPONSE_LEN: usize = 3;

/// The last token before the end of sequence, which is the answer.
pub fn final_answer(response: &[TokenId]) -> Option<TokenId> {
    let end = response.iter().position(|&t| t == EOS).unwrap_or(response.len());
    response[..end].last().copied()
}

/// Share of `n` fresh problems whose greedy answer is right.
/// `context` is prepended as given; an empty context means none.
pub fn arith_accuracy(model: &Model, key: &DigitKey, context: &[TokenId], n: usize, seed: u64) -> Result<f64> {
    let vocab = model.vocab();
    let mut hits = 0;
    for i in 0..n.max(1) {
        let inst = keyed_arith_generate(seeds::derive(seed, "eval-problem", i as u64), key);
        let prefix = join_prefix(context, &vocab.encode(&inst.question_text));
        let out = model.sample(&prefix, RESPONSE_LEN, 0.0, EOS, 0)?;
        hits += usize::from(final_answer(&out) == Some(token(vocab, &inst.answer_token)?));
    }
    Ok(hits as f64 / n.max(1) as f64)
}

/// Held-out task accuracy, without context.
pub fn ood_accuracy(model: &Model, n: usize, seed: u64) -> Result<f64> {
    let vocab = model.vocab();
    let mut hits = 0;
    for i in 0..n.max(1) {
        let inst = ood_generate(seeds::derive(seed, "eval-ood", i as u64));
        let prefix = join_prefix(&[], &vocab.encode(&inst.question_text));
        hits += usize::from(argmax(&model.next_logits(&prefix)?) == token(vocab, &inst.answer_token)?);
    }
    Ok(hits as f64 / n.max(1) as f64)
}

/// Distillation problems under one fixed key; the teacher sees `context`.
#[derive(Clone, Debug)]
pub struct ArithTask {
    pub key: DigitKey,
    pub context: Vec<TokenId>,
}

impl ArithTask {
    pub fn with_key_context(key: DigitKey, vocab: &Vocabulary) -> Self {
        let context = vocab.encode(&key.render());
        Self { key, context }
    }

    pub fn instance(&self, seed: u64) -> KeyedArithmeticInstance {
        keyed_arith_generate(seeds::derive(seed, "problem", 0), &self.key)
    }
}

impl RolloutTask for ArithTask {
    fn rollout(&self, policy: &Model, view: View, temperature: f64, max_tokens: usize, seed: u64) -> Result<DistillItem> {
        let inst = self.instance(seed);
        let x = policy.vocab().encode(&inst.question_text);
        let prefix = match view {
            View::Student => join_prefix(&[], &x),
            View::Teacher => join_prefix(&self.context, &x),
        };
        let y = policy.sample(&prefix, max_tokens, temperature, EOS, seeds::derive(seed, "sample", 0))?;
        Ok(DistillItem::single(&self.context, &x, y))
    }
}

/// Mixture of examples that teaches reading a key from the context.
///
/// Answers are worked: the sum digit first, then its keyed digit.
///
/// - full key: `KEY: …` then a question, answered through the key;
/// - partial key as items: answered through the key when the sum is
///   covered, otherwise a uniform digit after the sum;
/// - no context: a uniform digit after the sum, so the bare model stays near
///   chance;
/// - subtraction: the held-out task, one letter, no context.
#[derive(Clone, Debug)]
pub struct ArithPretrain {
    vocab: std::sync::Arc<Vocabulary>,
    pub p_full_key: f64,
    pub p_items: f64,
    pub p_none: f64,
}

impl ArithPretrain {
    pub fn new(vocab: std::sync::Arc<Vocabulary>) -> Self {
        Self { vocab, p_full_key: 0.55, p_items: 0.15, p_none: 0.15 }
    }

    /// `[sum, answer, EOS]` with the answer row either exact or uniform.
    fn worked(&self, prefix: Vec<TokenId>, sum: TokenId, answer: Option<TokenId>, forced: TokenId) -> Example {
        match answer {
            Some(a) => Example::exact(prefix, vec![sum, a, EOS]),
            None => {
                let d = digits(&self.vocab);
                let w = 1.0 / d.len() as f64;
                Example {
                    prefix,
                    response: vec![sum, forced, EOS],
                    targets: vec![vec![(sum, 1.0)], d.iter().map(|&t| (t, w)).collect(), vec![(EOS, 1.0)]],
                }
            }
        }
    }
}

impl PretrainTask for ArithPretrain {
    fn example(&self, seed: u64) -> Example {
        let v = &self.vocab;
        let mut rng = seeds::rng(seed, "pretrain-example", 0);
        let key = DigitKey::random(rng.gen());
        let inst = KeyedArithmeticInstance::new(rng.gen_range(0..10), rng.gen_range(0..10), key.clone());
        let x = v.encode(&inst.question_text);
        let s = (inst.a + inst.b) % 10;
        let sum = v.id(&s.to_string()).unwrap_or(EOS);
        let answer = v.id(&inst.answer_token).unwrap_or(EOS);
        let forced = *digits(v).choose(&mut rng).unwrap_or(&EOS);
        let u: f64 = rng.gen();
        if u < self.p_full_key {
            let c = v.encode(&key.render());
            self.worked(join_prefix(&c, &x), sum, Some(answer), forced)
        } else if u < self.p_full_key + self.p_items {
            let count = rng.gen_range(1..=10);
            let mut sums: Vec<u8> = (0..10u8).choose_multiple(&mut rng, count);
            sums.shuffle(&mut rng);
            let c = v.encode(&key_items(&key, &sums));
            let covered = sums.contains(&s).then_some(answer);
            self.worked(join_prefix(&c, &x), sum, covered, forced)
        } else if u < self.p_full_key + self.p_items + self.p_none {
            self.worked(join_prefix(&[], &x), sum, None, forced)
        } else {
            let ood = OodInstance::new(inst.a, inst.b);
            let prefix = join_prefix(&[], &v.encode(&ood.question_text));
            Example::exact(prefix, vec![v.id(&ood.answer_token).unwrap_or(EOS), EOS])
        }
    }

    /// Fresh random keys, so this measures key reading rather than one key.
    fn accuracy_with_context(&self, model: &Model, n: usize, seed: u64) -> Result<f64> {
        let mut hits = 0.0;
        for i in 0..n.max(1) {
            let key = DigitKey::random(seeds::derive(seed, "eval-key", i as u64));
            let c = model.vocab().encode(&key.render());
            hits += arith_accuracy(model, &key, &c, 1, seeds::derive(seed, "eval-item", i as u64))?;
        }
        Ok(hits / n.max(1) as f64)
    }

    fn accuracy_without_context(&self, model: &Model, n: usize, seed: u64) -> Result<Option<f64>> {
        let mut hits = 0.0;
        for i in 0..n.max(1) {
            let key = DigitKey::random(seeds::derive(seed, "eval-key", i as u64));
            hits += arith_accuracy(model, &key, &[], 1, seeds::derive(seed, "eval-item", i as u64))?;
        }
        Ok(Some(hits / n.max(1) as f64))
    }

    fn chance(&self) -> f64 {
        0.1
    }
}
