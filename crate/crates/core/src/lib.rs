//! On-policy context distillation at desk scale.
//!
//! A student language model samples responses without a context and is
//! trained to match, token by token under reverse KL, a teacher that sees the
//! context. The crate carries everything needed to run that loop end to end:
//!
//! - [`autodiff`]: `f64` tensors and a reverse-mode tape
//! - [`lm`]: a small decoder-only transformer with sampling and scoring
//! - [`distill`]: reverse/forward KL objectives, teacher modes, train steps
//! - [`worlds`]: Frozen Lake, Sokoban and keyed arithmetic tasks
//! - [`experience`]: experience items, prompt templates, context pools
//! - [`bench`]: presets, pretraining, evaluation and the experiment runner

pub mod autodiff;
pub mod bench;
pub mod distill;
pub mod error;
pub mod experience;
pub mod lm;
pub mod seeds;
pub mod worlds;

pub use error::{Error, Result};
