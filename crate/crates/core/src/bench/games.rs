//! The grid games as distillation tasks: a scripted context-following
//! policy, a language-model agent, multi-turn rollouts and the teacher's
//! pretraining mixture.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distill::{DistillItem, RolloutTask, Turn, View};
use crate::error::{Error, Result};
use crate::experience::{game_items, ExperienceContext, ExperienceItem, Extractor};
use crate::lm::{join_prefix, Model, TokenId, Vocabulary, EOS, ITEM_PREFIX, TAGGED_ROUNDS};
use crate::seeds;
use crate::worlds::{
    run_episode, Action, Agent, Episode, FrozenLakeConfig, FrozenLakeState, Outcome, SokobanConfig, SokobanState,
    World, DEFAULT_ROUND_LIMIT,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Game {
    FrozenLake,
    Sokoban,
}

impl Game {
    /// A fresh board from `seed` with default settings.
    pub fn reset(self, seed: u64) -> Result<World> {
        Ok(match self {
            Game::FrozenLake => World::FrozenLake(FrozenLakeState::reset_with(&FrozenLakeConfig::default(), seed)?),
            Game::Sokoban => World::Sokoban(SokobanState::reset_with(&SokobanConfig::default(), seed)?),
        })
    }

    /// The other game, used as the held-out task.
    pub fn other(self) -> Self {
        match self {
            Game::FrozenLake => Game::Sokoban,
            Game::Sokoban => Game::FrozenLake,
        }
    }
}

/// What the model sees on round `round`: the round marker, then the
/// environment text. Only the current board is shown, never the history.
pub fn game_prompt(round: usize, observation: &str) -> String {
    format!("round {round}\n{observation}")
}

/// Action distribution of the scripted policy on `round`, in
/// [`Action::ALL`] order.
///
/// Moves tagged with this round in `win` items are followed in proportion
/// to how often they appear. Without any, every move not listed in a `wall`
/// item for this round is equally likely (all four when all are listed).
/// Hole items are ignored: holes move from board to board while the walls
/// around the fixed start do not.
pub fn context_policy(items: &[ExperienceItem], round: usize) -> [f64; 4] {
    let mut wins = [0.0; 4];
    let mut walled = [false; 4];
    for item in items {
        let body = item.text()[ITEM_PREFIX.len()..].trim();
        let mut words = body.split_whitespace();
        match words.next() {
            Some("win") => {
                for w in words {
                    if let Some(a) = tagged_move(w, round, false) {
                        wins[a.index()] += 1.0;
                    }
                }
            }
            Some("avoid") => {
                let action = words.next().and_then(|w| tagged_move(w, round, true));
                if let (Some(a), Some("wall")) = (action, words.next()) {
                    walled[a.index()] = true;
                }
            }
            _ => {}
        }
    }
    let total: f64 = wins.iter().sum();
    if total > 0.0 {
        return wins.map(|w| w / total);
    }
    let allowed = walled.iter().filter(|&&a| !a).count();
    if allowed == 0 {
        return [0.25; 4];
    }
    walled.map(|a| if a { 0.0 } else { 1.0 / allowed as f64 })
}

/// `k:move` (or `k:move!` when `bang`) for round `round`.
fn tagged_move(word: &str, round: usize, bang: bool) -> Option<Action> {
    let (k, rest) = word.split_once(':')?;
    if k.parse::<usize>().ok()? != round {
        return None;
    }
    let name = if bang { rest.strip_suffix('!')? } else { rest };
    Action::from_name(name)
}

/// The scripted policy as an [`Agent`].
pub struct PolicyAgent {
    pub items: Vec<ExperienceItem>,
}

impl Agent for PolicyAgent {
    fn act(&mut self, _observation: &str, round: usize, _max_tokens: usize, seed: u64) -> Result<String> {
        let probs = context_policy(&self.items, round);
        let u: f64 = seeds::rng_from(seed).gen();
        let mut acc = 0.0;
        for (a, p) in Action::ALL.iter().zip(probs) {
            acc += p;
            if u < acc {
                return Ok(a.name().to_owned());
            }
        }
        Ok(Action::ALL[3].name().to_owned())
    }
}

/// One recorded model turn: the full prompt tokens and the sampled ones.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AgentTurn {
    pub input: Vec<TokenId>,
    pub response: Vec<TokenId>,
}

/// A language model playing with an optional context in front of every
/// prompt.
pub struct LmAgent<'a> {
    pub model: &'a Model,
    pub context: Vec<TokenId>,
    pub temperature: f64,
    pub log: Vec<AgentTurn>,
}

impl<'a> LmAgent<'a> {
    pub fn new(model: &'a Model, context: Vec<TokenId>, temperature: f64) -> Self {
        Self { model, context, temperature, log: Vec::new() }
    }
}

impl Agent for LmAgent<'_> {
    fn act(&mut self, observation: &str, round: usize, max_tokens: usize, seed: u64) -> Result<String> {
        let input = self.model.vocab().encode(&game_prompt(round, observation));
        let prefix = join_prefix(&self.context, &input);
        let room = self.model.config().max_seq.saturating_sub(prefix.len());
        let response = self.model.sample(&prefix, max_tokens.min(room), self.temperature, EOS, seed)?;
        let text: Vec<TokenId> = response.iter().copied().filter(|&t| t != EOS).collect();
        let text = self.model.vocab().decode(&text);
        self.log.push(AgentTurn { input, response });
        Ok(text)
    }
}

/// Context tokens cut to what leaves `reserve` positions for the prompt and
/// response.
pub fn fit_context(context: &ExperienceContext, model: &Model, reserve: usize) -> Vec<TokenId> {
    let room = model.config().max_seq.saturating_sub(reserve);
    context.truncated(room, model.vocab()).tokens(model.vocab())
}

/// Positions kept free for a game prompt and its answer.
pub fn prompt_reserve(game: Game) -> usize {
    match game {
        Game::FrozenLake => 32,
        Game::Sokoban => 64,
    }
}

/// Win rate of `model` over `n` fresh boards, playing with `context`.
pub fn game_win_rate(
    model: &Model,
    game: Game,
    context: &[TokenId],
    n: usize,
    temperature: f64,
    max_tokens: usize,
    seed: u64,
) -> Result<f64> {
    let mut wins = 0;
    for i in 0..n.max(1) {
        let env = game.reset(seeds::derive(seed, "eval-board", i as u64))?;
        let mut agent = LmAgent::new(model, context.to_vec(), temperature);
        let ep = run_episode(&mut agent, env, DEFAULT_ROUND_LIMIT, max_tokens, seeds::derive(seed, "eval-episode", i as u64))?;
        wins += usize::from(ep.outcome == Outcome::Won);
    }
    Ok(wins as f64 / n.max(1) as f64)
}

/// Multi-turn distillation: one episode per item, one turn per round.
#[derive(Clone, Debug)]
pub struct GameTask {
    pub game: Game,
    pub context: Vec<TokenId>,
    pub round_limit: usize,
}

impl RolloutTask for GameTask {
    fn rollout(&self, policy: &Model, view: View, temperature: f64, max_tokens: usize, seed: u64) -> Result<DistillItem> {
        let env = self.game.reset(seeds::derive(seed, "board", 0))?;
        let context = match view {
            View::Student => Vec::new(),
            View::Teacher => self.context.clone(),
        };
        let mut agent = LmAgent::new(policy, context, temperature);
        run_episode(&mut agent, env, self.round_limit, max_tokens, seeds::derive(seed, "episode", 0))?;
        let turns: Vec<Turn> = agent
            .log
            .into_iter()
            .filter(|t| !t.response.is_empty())
            .map(|t| Turn {
                student_prefix: join_prefix(&[], &t.input),
                teacher_prefix: join_prefix(&self.context, &t.input),
                response: t.response,
            })
            .collect();
        if turns.is_empty() {
            return Err(Error::EmptyResponse);
        }
        Ok(DistillItem { turns })
    }
}

/// The teacher plays a board with the accumulated context, then the
/// default extractor summarizes the episode.
pub struct GameExtractor<'a> {
    pub model: &'a Model,
    pub game: Game,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl Extractor<u64> for GameExtractor<'_> {
    fn extract(&self, board_seed: &u64, context: &ExperienceContext, seed: u64) -> Result<Vec<String>> {
        let env = self.game.reset(*board_seed)?;
        let c = fit_context(context, self.model, prompt_reserve(self.game));
        let mut agent = LmAgent::new(self.model, c, self.temperature);
        let ep = run_episode(&mut agent, env, DEFAULT_ROUND_LIMIT, self.max_tokens, seed)?;
        Ok(game_items(&ep, context))
    }
}

/// Same, with the scripted policy in place of a model.
pub struct ScriptedExtractor {
    pub game: Game,
}

impl ScriptedExtractor {
    pub fn play(&self, board_seed: u64, items: &[ExperienceItem], seed: u64) -> Result<Episode> {
        let env = self.game.reset(board_seed)?;
        let mut agent = PolicyAgent { items: items.to_vec() };
        run_episode(&mut agent, env, DEFAULT_ROUND_LIMIT, 4, seed)
    }
}

impl Extractor<u64> for ScriptedExtractor {
    fn extract(&self, board_seed: &u64, context: &ExperienceContext, seed: u64) -> Result<Vec<String>> {
        let ep = self.play(*board_seed, context.items(), seed)?;
        Ok(game_items(&ep, context))
    }
}

/// Item block shaped like the extractor's output but drawn at random.
fn synthetic_items(rng: &mut impl Rng) -> Vec<String> {
    let n = rng.gen_range(1..=8);
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.4) {
                let len = rng.gen_range(1..=DEFAULT_ROUND_LIMIT);
                let moves: Vec<String> = (1..=len)
                    .map(|k| format!("{k}:{}", Action::ALL.choose(rng).map_or("up", |a| a.name())))
                    .collect();
                format!("{ITEM_PREFIX} win {}", moves.join(" "))
            } else {
                let k = rng.gen_range(1..=DEFAULT_ROUND_LIMIT.min(TAGGED_ROUNDS));
                let a = Action::ALL.choose(rng).map_or("up", |a| a.name());
                let class = ["hole", "wall", "deadlock"].choose(rng).copied().unwrap_or("hole");
                format!("{ITEM_PREFIX} avoid {k}:{a}! {class}")
            }
        })
        .collect()
}

/// Pretraining mixture for a game teacher: imitate [`context_policy`]
/// under contexts that the scripted policy itself accumulated, under
/// random item blocks, and under no context at all.
pub struct GamePretrain {
    vocab: Arc<Vocabulary>,
    pub game: Game,
    bank: Vec<ExperienceContext>,
    pub max_context_tokens: usize,
}

impl GamePretrain {
    /// Builds the context bank from `runs` scripted accumulation runs of
    /// `per_run` boards each.
    pub fn new(vocab: Arc<Vocabulary>, game: Game, runs: usize, per_run: usize, max_context_tokens: usize, seed: u64) -> Result<Self> {
        let boards: Vec<u64> = (0..(runs * per_run).max(1) as u64).map(|i| seeds::derive(seed, "bank-board", i)).collect();
        let cfg = crate::experience::PoolConfig { repeats: runs, per_run, budget: max_context_tokens };
        let pool = crate::experience::build_pool(&ScriptedExtractor { game }, &boards, cfg, &vocab, seed)?;
        let bank = pool.entries.into_iter().map(|e| e.context).collect();
        Ok(Self { vocab, game, bank, max_context_tokens })
    }

    fn random_context(&self, rng: &mut impl Rng) -> ExperienceContext {
        let u: f64 = rng.gen();
        let empty = ExperienceContext::empty(self.max_context_tokens);
        if u < 0.15 {
            empty
        } else if u < 0.4 || self.bank.is_empty() {
            let items: Vec<ExperienceItem> =
                synthetic_items(rng).into_iter().filter_map(|t| ExperienceItem::new(t, None).ok()).collect();
            empty.accumulate(&items, &self.vocab).unwrap_or(empty)
        } else {
            self.bank[rng.gen_range(0..self.bank.len())].clone()
        }
    }

    /// A board some random moves into an episode, and the round it is on.
    fn random_observation(&self, rng: &mut impl Rng) -> Result<(usize, String)> {
        let mut world = self.game.reset(rng.gen())?;
        let round = rng.gen_range(1..=DEFAULT_ROUND_LIMIT);
        for _ in 1..round {
            let next = world.step(*Action::ALL.choose(rng).unwrap_or(&Action::Down))?;
            if next.status().is_terminal() {
                break;
            }
            world = next;
        }
        let text = if rng.gen_bool(0.1) {
            format!("{}\n{}", crate::worlds::NO_ACTION_MESSAGE, world.render())
        } else {
            world.render()
        };
        Ok((round, text))
    }

    fn sample_case(&self, seed: u64) -> Result<(ExperienceContext, usize, String)> {
        let mut rng = seeds::rng(seed, "game-example", 0);
        let context = self.random_context(&mut rng);
        let (round, obs) = self.random_observation(&mut rng)?;
        Ok((context, round, obs))
    }

    fn action_tokens(&self) -> Vec<TokenId> {
        Action::ALL.iter().map(|a| self.vocab.id(a.name()).unwrap_or(EOS)).collect()
    }

    /// 1 − total variation between the model's next-token distribution and
    /// the scripted one, averaged over `n` cases.
    pub fn agreement(&self, model: &Model, n: usize, seed: u64, with_context: bool) -> Result<f64> {
        let actions = self.action_tokens();
        let mut total = 0.0;
        for i in 0..n.max(1) {
            let (mut context, round, obs) = self.sample_case(seeds::derive(seed, "agreement", i as u64))?;
            if !with_context {
                context = ExperienceContext::empty(self.max_context_tokens);
            }
            let target = context_policy(context.items(), round);
            let c = context.tokens(&self.vocab);
            let prefix = join_prefix(&c, &self.vocab.encode(&game_prompt(round, &obs)));
            let p = crate::autodiff::softmax(&model.next_logits(&prefix)?);
            let on_actions: f64 = actions.iter().zip(target).map(|(&t, q)| (p[t as usize] - q).abs()).sum();
            let off_actions: f64 = 1.0 - actions.iter().map(|&t| p[t as usize]).sum::<f64>();
            total += 1.0 - 0.5 * (on_actions + off_actions);
        }
        Ok(total / n.max(1) as f64)
    }
}

impl super::supervised::PretrainTask for GamePretrain {
    fn example(&self, seed: u64) -> super::supervised::Example {
        let (context, round, obs) = self
            .sample_case(seed)
            .unwrap_or_else(|_| (ExperienceContext::empty(self.max_context_tokens), 1, String::new()));
        let target = context_policy(context.items(), round);
        let actions = self.action_tokens();
        let mut rng = seeds::rng(seed, "game-forced", 0);
        let forced = *actions.choose(&mut rng).unwrap_or(&EOS);
        let c = context.tokens(&self.vocab);
        super::supervised::Example {
            prefix: join_prefix(&c, &self.vocab.encode(&game_prompt(round, &obs))),
            response: vec![forced, EOS],
            targets: vec![actions.iter().copied().zip(target).filter(|(_, q)| *q > 0.0).collect(), vec![(EOS, 1.0)]],
        }
    }

    fn accuracy_with_context(&self, model: &Model, n: usize, seed: u64) -> Result<f64> {
        self.agreement(model, n, seed, true)
    }

    fn accuracy_without_context(&self, _model: &Model, _n: usize, _seed: u64) -> Result<Option<f64>> {
        Ok(None)
    }

    fn chance(&self) -> f64 {
        0.25
    }
}
