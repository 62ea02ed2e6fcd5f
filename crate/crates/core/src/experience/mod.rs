//! Experience items: prompt wrappers, parsing, budgeted accumulation,
//! extraction, pools of context snapshots and context selection.

mod extract;
mod items;
mod pool;
mod templates;

pub use extract::{game_items, game_raw_trace, math_items, math_raw_trace, Extractor, MAX_GAME_ITEMS};
pub use items::{parse_experience_items, ExperienceContext, ExperienceItem, Origin};
pub use pool::{
    argmax_first, build_pool, select_filtered, select_test_time, ExtractionFailure, Pool, PoolConfig, PoolEntry,
};
pub use templates::{format_extraction_prompt, format_solve_prompt, Flavor};
