use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, Vocabulary};
use crate::autodiff::{self, Nonlinearity, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::seeds;

/// Shape of a decoder-only transformer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub max_seq: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    /// 2 layers, width 64, 4 heads, 512 positions.
    pub fn desk_default(vocab_size: usize) -> Self {
        Self { layers: 2, embed_dim: 64, heads: 4, max_seq: 512, vocab_size }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embed-dim {} not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.layers == 0 || self.max_seq == 0 || self.vocab_size == 0 {
            return Err(Error::Config("layers, max-seq and vocab-size must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    /// Parameter names and shapes in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.embed_dim;
        let mut out = vec![
            ("tok_emb".to_string(), vec![self.vocab_size, d]),
            ("pos_emb".to_string(), vec![self.max_seq, d]),
        ];
        for l in 0..self.layers {
            let p = |s: &str| format!("blocks.{l}.{s}");
            out.extend([
                (p("ln1.gain"), vec![d]),
                (p("ln1.bias"), vec![d]),
                (p("attn.wq"), vec![d, d]),
                (p("attn.wk"), vec![d, d]),
                (p("attn.wv"), vec![d, d]),
                (p("attn.wo"), vec![d, d]),
                (p("ln2.gain"), vec![d]),
                (p("ln2.bias"), vec![d]),
                (p("mlp.w1"), vec![d, 4 * d]),
                (p("mlp.b1"), vec![4 * d]),
                (p("mlp.w2"), vec![4 * d, d]),
                (p("mlp.b2"), vec![d]),
            ]);
        }
        out.extend([
            ("ln_f.gain".to_string(), vec![d]),
            ("ln_f.bias".to_string(), vec![d]),
            ("head".to_string(), vec![d, self.vocab_size]),
        ]);
        out
    }
}

const PER_LAYER: usize = 12;

/// Named weight tensors in [`ModelConfig::layout`] order.
///
/// Tensors sit behind `Arc` so rollout workers and tapes can share them
/// without copying; the optimizer is the only writer.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor>>,
}

impl Parameters {
    pub fn from_named(config: &ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let layout = config.layout();
        if named.len() != layout.len() {
            return Err(Error::Checkpoint(format!("expected {} tensors, got {}", layout.len(), named.len())));
        }
        for ((name, shape), (n, t)) in layout.iter().zip(&named) {
            if name != n || shape.as_slice() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {n} {:?} does not match layout {name} {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Checkpoint(format!("tensor {n} has non-finite values")));
            }
        }
        let (names, tensors) = named.into_iter().map(|(n, t)| (n, Arc::new(t))).unzip();
        Ok(Self { names, tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.names[slot]
    }

    pub fn tensor(&self, slot: usize) -> &Tensor {
        &self.tensors[slot]
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slot(name).map(|s| self.tensor(s))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter().map(|t| &**t))
    }

    /// Copy-on-write access for the optimizer.
    pub fn tensor_mut(&mut self, slot: usize) -> &mut Tensor {
        Arc::make_mut(&mut self.tensors[slot])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.is_finite())
    }

    pub(crate) fn shared(&self, slot: usize) -> Arc<Tensor> {
        Arc::clone(&self.tensors[slot])
    }
}

/// Parameter leaves registered on one tape.
pub struct ParamVars(Vec<Var>);

impl ParamVars {
    pub fn var(&self, slot: usize) -> Var {
        self.0[slot]
    }
}

/// Decoder-only transformer: learned token and absolute position
/// embeddings, pre-norm blocks, causal multi-head attention, GELU MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    vocab: Arc<Vocabulary>,
    params: Parameters,
}

impl Model {
    /// Random initialization from the `init` seed stream.
    pub fn init(config: ModelConfig, vocab: Arc<Vocabulary>, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "vocab-size {} does not match vocabulary of {}",
                config.vocab_size,
                vocab.len()
            )));
        }
        let mut rng = seeds::rng(seed, "init", 0);
        let d = config.embed_dim as f64;
        let resid_scale = 1.0 / (2.0 * config.layers as f64).sqrt();
        let mut named = Vec::new();
        for (name, shape) in config.layout() {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with(".gain") {
                vec![1.0; n]
            } else if name.ends_with(".bias") || name.ends_with(".b1") || name.ends_with(".b2") {
                vec![0.0; n]
            } else {
                let fan_in = shape[0] as f64;
                let std = if name.ends_with("_emb") {
                    0.3
                } else if name.ends_with("wo") || name.ends_with("w2") {
                    resid_scale / fan_in.sqrt()
                } else if name == "head" {
                    1.0 / d.sqrt()
                } else {
                    1.0 / fan_in.sqrt()
                };
                let normal = Normal::new(0.0, std).expect("positive std");
                (0..n).map(|_| normal.sample(&mut rng)).collect()
            };
            named.push((name, Tensor::new(shape, data)?));
        }
        let params = Parameters::from_named(&config, named)?;
        Ok(Self { config, vocab, params })
    }

    pub fn from_parts(config: ModelConfig, vocab: Arc<Vocabulary>, params: Parameters) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(Error::VocabularyMismatch);
        }
        let layout = config.layout();
        let matches = layout.len() == params.len()
            && layout.iter().zip(params.iter()).all(|((n, s), (pn, t))| n == pn && s.as_slice() == t.shape());
        if !matches {
            return Err(Error::Checkpoint("parameters do not match the model layout".into()));
        }
        Ok(Self { config, vocab, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Parameters) {
        self.params = params;
    }

    /// Registers every parameter as a leaf on `tape`.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        ParamVars((0..self.params.len()).map(|s| tape.param(s, self.params.shared(s))).collect())
    }

    fn check_seq(&self, seq: &[TokenId]) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::InvalidArgument("empty token sequence".into()));
        }
        if seq.len() > self.config.max_seq {
            return Err(Error::SequenceTooLong { len: seq.len(), max: self.config.max_seq });
        }
        self.vocab.check(seq)
    }

    /// Final-norm hidden states `[T × d]` for `seq`.
    pub fn hidden_on_tape(&self, tape: &mut Tape, p: &ParamVars, seq: &[TokenId]) -> Result<Var> {
        self.check_seq(seq)?;
        let cfg = &self.config;
        let ids: Vec<usize> = seq.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..seq.len()).collect();
        let tok = tape.gather_rows(p.var(0), &ids)?;
        let pos = tape.gather_rows(p.var(1), &positions)?;
        let mut x = tape.add(tok, pos)?;
        let hd = cfg.head_dim();
        let inv_sqrt = 1.0 / (hd as f64).sqrt();
        for l in 0..cfg.layers {
            let base = 2 + l * PER_LAYER;
            let w = |i: usize| p.var(base + i);
            let h = tape.layer_normalize_rows(x)?;
            let h = tape.mul_row(h, w(0))?;
            let h = tape.add_row(h, w(1))?;
            let q = tape.matmul(h, w(2))?;
            let k = tape.matmul(h, w(3))?;
            let v = tape.matmul(h, w(4))?;
            let mut heads = Vec::with_capacity(cfg.heads);
            for head in 0..cfg.heads {
                let qh = tape.slice_cols(q, head * hd, hd)?;
                let kh = tape.slice_cols(k, head * hd, hd)?;
                let vh = tape.slice_cols(v, head * hd, hd)?;
                let scores = tape.matmul_t(qh, kh)?;
                let scores = tape.scale(scores, inv_sqrt)?;
                let attn = tape.causal_softmax_rows(scores)?;
                heads.push(tape.matmul(attn, vh)?);
            }
            let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
            let o = tape.matmul(cat, w(5))?;
            x = tape.add(x, o)?;
            let h2 = tape.layer_normalize_rows(x)?;
            let h2 = tape.mul_row(h2, w(6))?;
            let h2 = tape.add_row(h2, w(7))?;
            let m = tape.matmul(h2, w(8))?;
            let m = tape.add_row(m, w(9))?;
            let m = tape.nonlinearity(m, Nonlinearity::Gelu)?;
            let m = tape.matmul(m, w(10))?;
            let m = tape.add_row(m, w(11))?;
            x = tape.add(x, m)?;
        }
        let f = 2 + cfg.layers * PER_LAYER;
        let h = tape.layer_normalize_rows(x)?;
        let h = tape.mul_row(h, p.var(f))?;
        tape.add_row(h, p.var(f + 1))
    }

    /// Projects hidden rows to vocabulary logits.
    pub fn head_on_tape(&self, tape: &mut Tape, p: &ParamVars, hidden: Var) -> Result<Var> {
        let f = 2 + self.config.layers * PER_LAYER;
        tape.matmul(hidden, p.var(f + 2))
    }

    pub fn logits_on_tape(&self, tape: &mut Tape, p: &ParamVars, seq: &[TokenId]) -> Result<Var> {
        let h = self.hidden_on_tape(tape, p, seq)?;
        self.head_on_tape(tape, p, h)
    }

    /// Next-token logits `[T × V]`; row `t` conditions on `seq[..=t]`.
    pub fn forward_logits(&self, seq: &[TokenId]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.register(&mut tape);
        let out = self.logits_on_tape(&mut tape, &p, seq)?;
        Ok(tape.value(out).clone())
    }

    /// Log-probability rows `[|response| × V]` on `tape`; row `t` is the
    /// distribution of `response[t]` given `prefix ‖ response[..t]`.
    pub fn score_on_tape(
        &self,
        tape: &mut Tape,
        p: &ParamVars,
        prefix: &[TokenId],
        response: &[TokenId],
    ) -> Result<Var> {
        if response.is_empty() {
            return Err(Error::EmptyResponse);
        }
        if prefix.is_empty() {
            return Err(Error::InvalidArgument("empty prefix".into()));
        }
        let total = prefix.len() + response.len();
        if total > self.config.max_seq {
            return Err(Error::SequenceTooLong { len: total, max: self.config.max_seq });
        }
        self.vocab.check(response)?;
        let mut seq = Vec::with_capacity(total - 1);
        seq.extend_from_slice(prefix);
        seq.extend_from_slice(&response[..response.len() - 1]);
        let h = self.hidden_on_tape(tape, p, &seq)?;
        let rows = tape.slice_rows(h, prefix.len() - 1, response.len())?;
        let logits = self.head_on_tape(tape, p, rows)?;
        tape.log_softmax_rows(logits)
    }

    /// Gradient-free [`Model::score_on_tape`].
    pub fn score_response(&self, prefix: &[TokenId], response: &[TokenId]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.register(&mut tape);
        let out = self.score_on_tape(&mut tape, &p, prefix, response)?;
        Ok(tape.value(out).clone())
    }

    /// Logits for the token after `seq`.
    pub fn next_logits(&self, seq: &[TokenId]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.register(&mut tape);
        let h = self.hidden_on_tape(&mut tape, &p, seq)?;
        let last = tape.slice_rows(h, seq.len() - 1, 1)?;
        let logits = self.head_on_tape(&mut tape, &p, last)?;
        Ok(tape.value(logits).data().to_vec())
    }

    /// Autoregressive sampling. Returns only new tokens, including `stop` if
    /// it was produced. Generation also ends when the sequence reaches
    /// max-seq. Temperature 0 is argmax with lowest-id tie-break.
    pub fn sample(
        &self,
        prefix: &[TokenId],
        max_new: usize,
        temperature: f64,
        stop: TokenId,
        seed: u64,
    ) -> Result<Vec<TokenId>> {
        if temperature < 0.0 || !temperature.is_finite() {
            return Err(Error::InvalidArgument(format!("temperature {temperature}")));
        }
        self.check_seq(prefix)?;
        let mut rng = seeds::rng_from(seed);
        let mut seq = prefix.to_vec();
        let mut out = Vec::new();
        while out.len() < max_new && seq.len() < self.config.max_seq {
            let logits = self.next_logits(&seq)?;
            let tok = pick_token(&logits, temperature, &mut rng);
            seq.push(tok);
            out.push(tok);
            if tok == stop {
                break;
            }
        }
        Ok(out)
    }
}

/// Draws one token from `logits` at `temperature` (0 = argmax).
pub fn pick_token(logits: &[f64], temperature: f64, rng: &mut impl Rng) -> TokenId {
    if temperature == 0.0 {
        return argmax(logits);
    }
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    let probs = autodiff::softmax(&scaled);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i as TokenId;
        }
    }
    // rounding left u above the final cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0) as TokenId
}

/// Index of the maximum, lowest index on ties.
pub fn argmax(row: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as TokenId
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::vocab::{BOS, EOS};

    fn tiny() -> Model {
        let vocab = Arc::new(Vocabulary::synthetic(24).unwrap());
        let cfg = ModelConfig { layers: 2, embed_dim: 16, heads: 2, max_seq: 16, vocab_size: 24 };
        Model::init(cfg, vocab, 11).unwrap()
    }

    #[test]
    fn zero_head_gives_uniform_rows() {
        let mut m = tiny();
        let slot = m.params().slot("head").unwrap();
        m.params_mut().tensor_mut(slot).data_mut().fill(0.0);
        let logits = m.forward_logits(&[BOS, 7, 9, 12]).unwrap();
        for r in 0..logits.rows() {
            let p = autodiff::softmax(logits.row(r));
            for v in p {
                assert!((v - 1.0 / 24.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn causal_rows_ignore_future_tokens() {
        let m = tiny();
        let a = m.forward_logits(&[BOS, 5, 6, 7, 8]).unwrap();
        let b = m.forward_logits(&[BOS, 5, 6, 20, 21]).unwrap();
        for r in 0..3 {
            assert_eq!(a.row(r), b.row(r));
        }
        assert_ne!(a.row(3), b.row(3));
    }

    #[test]
    fn overlong_sequence_rejected() {
        let m = tiny();
        let seq = vec![BOS; 17];
        assert!(matches!(m.forward_logits(&seq), Err(Error::SequenceTooLong { .. })));
    }

    #[test]
    fn score_rows_are_normalized() {
        let m = tiny();
        let rows = m.score_response(&[BOS, 5, 6], &[7, 8, EOS]).unwrap();
        assert_eq!(rows.shape(), &[3, 24]);
        for r in 0..3 {
            let s: f64 = rows.row(r).iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
        assert!(matches!(m.score_response(&[BOS], &[]), Err(Error::EmptyResponse)));
    }

    #[test]
    fn single_token_score_matches_last_logits_row() {
        let m = tiny();
        let prefix = [BOS, 9, 4];
        let rows = m.score_response(&prefix, &[10]).unwrap();
        let logits = m.forward_logits(&prefix).unwrap();
        let expected = autodiff::log_softmax(logits.row(2));
        for (a, b) in rows.row(0).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_is_deterministic_and_stops() {
        let m = tiny();
        let a = m.sample(&[BOS, 5], 6, 0.0, EOS, 1).unwrap();
        let b = m.sample(&[BOS, 5], 6, 0.0, EOS, 99).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_empty() && a.len() <= 6);

        let first = argmax(&m.next_logits(&[BOS, 5]).unwrap());
        let out = m.sample(&[BOS, 5], 6, 0.0, first, 1).unwrap();
        assert_eq!(out, vec![first]);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
    }
}
