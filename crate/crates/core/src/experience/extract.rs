//! Deterministic stand-ins for the generative extraction step.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::lm::{ITEM_PREFIX, TAGGED_ROUNDS};
use crate::worlds::{Episode, Outcome, SokobanCell, World};

use super::items::ExperienceContext;

/// Most items the game extractor emits for one episode.
pub const MAX_GAME_ITEMS: usize = 2;

/// Turns a problem into new item texts, given the context accumulated so far.
pub trait Extractor<P: ?Sized> {
    fn extract(&self, problem: &P, context: &ExperienceContext, seed: u64) -> Result<Vec<String>>;
}

impl<P: ?Sized, F> Extractor<P> for F
where
    F: Fn(&P, &ExperienceContext, u64) -> Result<Vec<String>>,
{
    fn extract(&self, problem: &P, context: &ExperienceContext, seed: u64) -> Result<Vec<String>> {
        self(problem, context, seed)
    }
}

/// `(a, b)` from a question of the form `a + b =`.
fn parse_sum_question(question: &str) -> Option<(u8, u8)> {
    let words: Vec<&str> = question.split_whitespace().collect();
    match words.as_slice() {
        [a, "+", b, "="] => Some((a.parse().ok()?, b.parse().ok()?)),
        _ => None,
    }
}

/// From `(question, answer)` traces of keyed addition, the `sum → digit`
/// pair seen most often, as one item. Traces that do not parse are ignored;
/// ties go to the smallest sum, then the smallest digit.
pub fn math_items(traces: &[(String, String)]) -> Vec<String> {
    let mut counts: BTreeMap<(u8, u8), usize> = BTreeMap::new();
    for (q, a) in traces {
        let Some((x, y)) = parse_sum_question(q) else { continue };
        let Ok(d) = a.trim().parse::<u8>() else { continue };
        if x > 9 || y > 9 || d > 9 {
            continue;
        }
        *counts.entry(((x + y) % 10, d)).or_default() += 1;
    }
    let best = counts.iter().fold(None, |best: Option<(&(u8, u8), usize)>, (k, &n)| match best {
        Some((_, m)) if m >= n => best,
        _ => Some((k, n)),
    });
    best.map(|((s, d), _)| vec![format!("{ITEM_PREFIX} {s}→{d}")]).unwrap_or_default()
}

/// Why an episode was lost, in the words the item vocabulary uses.
fn loss_class(state: &World) -> &'static str {
    match state {
        World::FrozenLake(_) => "hole",
        World::Sokoban(s) => {
            if s.cell(s.player()) == SokobanCell::Hole || s.cell(s.box_pos()) == SokobanCell::Hole {
                "hole"
            } else {
                "deadlock"
            }
        }
    }
}

/// Items from one episode, at most [`MAX_GAME_ITEMS`]:
///
/// - a won episode gives `win 1:right 2:right …`, its moves tagged with the
///   round they were played in;
/// - a lost episode gives `avoid k:move! hole` (or `deadlock`) for the move
///   that lost;
/// - the first move that bumped into something without changing the state
///   gives `avoid k:move! wall`.
///
/// Texts already in `previous` are skipped, as are rounds past the tagged
/// range of the vocabulary.
pub fn game_items(episode: &Episode, previous: &ExperienceContext) -> Vec<String> {
    let tagged = |round: usize| round <= TAGGED_ROUNDS;
    let mut out = Vec::new();
    match episode.outcome {
        Outcome::Won if episode.turns.len() <= TAGGED_ROUNDS => {
            let moves: Vec<String> = episode
                .turns
                .iter()
                .enumerate()
                .filter_map(|(i, t)| t.action.map(|a| format!("{}:{}", i + 1, a.name())))
                .collect();
            out.push(format!("{ITEM_PREFIX} win {}", moves.join(" ")));
        }
        Outcome::Lost => {
            let round = episode.turns.len();
            if let (true, Some(a)) = (tagged(round), episode.turns.last().and_then(|t| t.action)) {
                let class = loss_class(episode.final_state());
                out.push(format!("{ITEM_PREFIX} avoid {round}:{}! {class}", a.name()));
            }
        }
        _ => {}
    }
    let mut before = &episode.initial;
    for (i, t) in episode.turns.iter().enumerate() {
        if let Some(a) = t.action {
            if t.state_after == *before && tagged(i + 1) {
                out.push(format!("{ITEM_PREFIX} avoid {}:{}! wall", i + 1, a.name()));
                break;
            }
        }
        before = &t.state_after;
    }
    out.retain(|s| !previous.contains_text(s));
    out.truncate(MAX_GAME_ITEMS);
    out
}

/// The episode itself as one item: every parsed move and the outcome.
pub fn game_raw_trace(episode: &Episode) -> Vec<String> {
    if episode.turns.is_empty() {
        return Vec::new();
    }
    let moves: Vec<String> = episode
        .turns
        .iter()
        .enumerate()
        .filter(|(i, _)| *i < TAGGED_ROUNDS)
        .filter_map(|(i, t)| t.action.map(|a| format!("{}:{}", i + 1, a.name())))
        .collect();
    let outcome = match episode.outcome {
        Outcome::Won => "won",
        Outcome::Lost => "lost",
        Outcome::Truncated => "running",
    };
    vec![format!("{ITEM_PREFIX} {} {outcome}", moves.join(" "))]
}

/// Each trace as one item, question and answer verbatim.
pub fn math_raw_trace(traces: &[(String, String)]) -> Vec<String> {
    traces.iter().map(|(q, a)| format!("{ITEM_PREFIX} {} {}", q.trim(), a.trim())).collect()
}
