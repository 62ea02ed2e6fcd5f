//! Small decoder-only language model over a shared vocabulary.

mod checkpoint;
mod model;
mod vocab;

pub use checkpoint::{load_model, save_model, Checkpoint};
pub use model::{argmax, pick_token, Model, ModelConfig, ParamVars, Parameters};
pub use vocab::{
    TokenId, Vocabulary, ACTIONS, BOS, EOS, ITEM_PREFIX, MAX_VOCAB, PAD, RESERVED, SEP, TAGGED_ROUNDS, UNK_SYMBOL,
};

/// Ordered token ids.
pub type TokenSequence = Vec<TokenId>;

/// `[BOS] input` when `context` is empty, else `[BOS] context [SEP] input`.
///
/// The student conditions on `join_prefix(&[], x)`, the teacher on
/// `join_prefix(c, x)`; response tokens line up position for position.
pub fn join_prefix(context: &[TokenId], input: &[TokenId]) -> TokenSequence {
    let mut out = Vec::with_capacity(context.len() + input.len() + 2);
    out.push(BOS);
    if !context.is_empty() {
        out.extend_from_slice(context);
        out.push(SEP);
    }
    out.extend_from_slice(input);
    out
}
