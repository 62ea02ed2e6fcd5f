//! Verifiable tasks: two grid games, a multi-turn episode driver and keyed
//! single-digit arithmetic.

mod arith;
mod episode;
mod frozen_lake;
mod grid;
mod sokoban;

pub use arith::{keyed_arith_generate, ood_generate, DigitKey, KeyedArithmeticInstance, OodInstance};
pub use episode::{parse_action, run_episode, Agent, Episode, EpisodeTurn, Outcome, World, DEFAULT_ROUND_LIMIT, NO_ACTION_MESSAGE};
pub use frozen_lake::{FrozenLakeConfig, FrozenLakeState, LakeCell};
pub use grid::{Action, Pos, Status};
pub use sokoban::{RuleVisibility, SokobanCell, SokobanConfig, SokobanState};
