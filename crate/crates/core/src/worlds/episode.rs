use serde::{Deserialize, Serialize};

use super::frozen_lake::FrozenLakeState;
use super::grid::{Action, Status};
use super::sokoban::SokobanState;
use crate::error::Result;
use crate::seeds;

pub const DEFAULT_ROUND_LIMIT: usize = 5;

/// Environment text that replaces the board after an unparseable turn.
pub const NO_ACTION_MESSAGE: &str = "error: no action recognized";

/// Either game, behind one interface.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum World {
    FrozenLake(FrozenLakeState),
    Sokoban(SokobanState),
}

impl World {
    pub fn render(&self) -> String {
        match self {
            World::FrozenLake(s) => s.render(),
            World::Sokoban(s) => s.render(),
        }
    }

    pub fn status(&self) -> Status {
        match self {
            World::FrozenLake(s) => s.status(),
            World::Sokoban(s) => s.status(),
        }
    }

    pub fn step(&self, action: Action) -> Result<Self> {
        Ok(match self {
            World::FrozenLake(s) => World::FrozenLake(s.step(action)?),
            World::Sokoban(s) => World::Sokoban(s.step(action)?),
        })
    }

    /// Shortest winning plan from the current state.
    pub fn solve(&self) -> Option<Vec<Action>> {
        match self {
            World::FrozenLake(s) => s.shortest_solution(),
            World::Sokoban(s) => s.solve(),
        }
    }
}

/// Anything that answers an observation with text.
pub trait Agent {
    /// `round` is 1-based. `seed` is this turn's sampling seed.
    fn act(&mut self, observation: &str, round: usize, max_tokens: usize, seed: u64) -> Result<String>;
}

/// First case-insensitive occurrence of `up`, `down`, `left` or `right`.
pub fn parse_action(text: &str) -> Option<Action> {
    let lower = text.to_ascii_lowercase();
    Action::ALL
        .into_iter()
        .filter_map(|a| lower.find(a.name()).map(|i| (i, a)))
        .min_by_key(|&(i, _)| i)
        .map(|(_, a)| a)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Won,
    Lost,
    Truncated,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeTurn {
    pub environment_text: String,
    pub model_text: String,
    pub action: Option<Action>,
    pub state_after: World,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub initial: World,
    pub turns: Vec<EpisodeTurn>,
    pub outcome: Outcome,
}

impl Episode {
    pub fn final_state(&self) -> &World {
        self.turns.last().map_or(&self.initial, |t| &t.state_after)
    }

    pub fn actions(&self) -> Vec<Option<Action>> {
        self.turns.iter().map(|t| t.action).collect()
    }
}

/// Render, ask the agent, parse, step; until a terminal state or
/// `round_limit` rounds. A turn without a recognizable action leaves the
/// state unchanged and the next observation is [`NO_ACTION_MESSAGE`]
/// followed by the board.
pub fn run_episode(
    agent: &mut dyn Agent,
    env: World,
    round_limit: usize,
    max_tokens_per_turn: usize,
    seed: u64,
) -> Result<Episode> {
    let mut state = env.clone();
    let mut turns = Vec::new();
    let mut observation = state.render();
    for round in 1..=round_limit.max(1) {
        if state.status().is_terminal() {
            break;
        }
        let text = agent.act(&observation, round, max_tokens_per_turn, seeds::derive(seed, "turn", round as u64))?;
        let action = parse_action(&text);
        let next_observation = match action {
            Some(a) => {
                state = state.step(a)?;
                state.render()
            }
            None => format!("{NO_ACTION_MESSAGE}\n{}", state.render()),
        };
        turns.push(EpisodeTurn {
            environment_text: std::mem::replace(&mut observation, next_observation),
            model_text: text,
            action,
            state_after: state.clone(),
        });
    }
    let outcome = match state.status() {
        Status::Won => Outcome::Won,
        Status::Lost => Outcome::Lost,
        Status::Running => Outcome::Truncated,
    };
    Ok(Episode { initial: env, turns, outcome })
}
