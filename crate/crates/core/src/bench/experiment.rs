//! Experiment configuration and the end-to-end runner: teacher, context,
//! distillation with periodic evaluation, checkpoints and a summary.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::distill::{
    offpolicy_context_distill_step, opcd_train_step, DistillConfig, DistillItem, OptimizerKind, RolloutTask,
    TeacherMode, TrainState, View,
};
use crate::error::{Error, Result};
use crate::experience::{
    build_pool, game_raw_trace, math_items, math_raw_trace, select_filtered, select_test_time, ExperienceContext,
    Extractor, Flavor, Pool, PoolConfig,
};
use crate::lm::{join_prefix, Checkpoint, Model, ModelConfig, TokenId, Vocabulary, EOS};
use crate::seeds;
use crate::worlds::{keyed_arith_generate, run_episode, DigitKey, KeyedArithmeticInstance, Outcome, DEFAULT_ROUND_LIMIT};

use super::arith::{arith_accuracy, final_answer, ood_accuracy, ArithPretrain, ArithTask, RESPONSE_LEN};
use super::games::{fit_context, game_win_rate, prompt_reserve, Game, GameExtractor, GamePretrain, GameTask, LmAgent};
use super::metrics::{append_record, read_metrics, summarize, truncate_metrics, MetricRecord, MetricsSummary};
use super::supervised::{pretrain, CurvePoint, PretrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    KeyedArith,
    FrozenLake,
    Sokoban,
}

impl TaskKind {
    pub fn game(self) -> Option<Game> {
        match self {
            TaskKind::KeyedArith => None,
            TaskKind::FrozenLake => Some(Game::FrozenLake),
            TaskKind::Sokoban => Some(Game::Sokoban),
        }
    }

    pub fn flavor(self) -> Flavor {
        match self {
            TaskKind::KeyedArith => Flavor::Math,
            _ => Flavor::Game,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    /// Student rollouts, reverse KL against the teacher.
    #[default]
    Opcd,
    /// Teacher rollouts with the context, forward KL.
    OffPolicy,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ContextSource {
    #[default]
    ExperiencePool,
    /// `context_text`, or the task's own key for keyed arithmetic.
    FixedContext,
    /// Accumulated raw traces instead of extracted items.
    RawTrace,
    None,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// One pool entry drawn uniformly.
    #[default]
    TestTime,
    /// The entry with the best teacher accuracy on a validation split.
    Filtered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolSettings {
    pub repeats: usize,
    pub per_run: usize,
    /// Token budget per context; the flavor default when absent.
    pub budget: Option<usize>,
    /// Problems the pool draws from.
    pub problems: usize,
    pub selection: Selection,
    /// Validation problems for filtered selection; the flavor default when
    /// absent.
    pub validation_size: Option<usize>,
}

impl Default for PoolSettings {
    fn default() -> Self {
        Self { repeats: 10, per_run: 30, budget: None, problems: 200, selection: Selection::TestTime, validation_size: None }
    }
}

/// Shape of the teacher (and of a student copied from it); the vocabulary is
/// always the standard one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub layers: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub max_seq: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self { layers: 2, embed_dim: 32, heads: 4, max_seq: 64 }
    }
}

impl ModelSettings {
    pub fn config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig { layers: self.layers, embed_dim: self.embed_dim, heads: self.heads, max_seq: self.max_seq, vocab_size }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub mode: RunMode,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Pretrained teacher; pretrained inside the run when absent.
    pub teacher_checkpoint: Option<PathBuf>,
    /// Starting student; a copy of the teacher when absent.
    pub student_checkpoint: Option<PathBuf>,
    pub context_source: ContextSource,
    pub context_text: Option<String>,
    pub pool: PoolSettings,
    pub eval_every: usize,
    /// Evaluation sizes; task defaults when absent.
    pub eval_n: Option<usize>,
    pub ood_eval_n: Option<usize>,
    pub checkpoint_interval: usize,
    /// Most recent periodic checkpoints kept on disk (`best.ckpt` aside).
    pub keep_checkpoints: usize,
    /// Off by default so identical configs give byte-identical metrics.
    pub record_wall_time: bool,
    /// Stop once this many steps have run, as if interrupted.
    pub stop_after: Option<usize>,
    /// Continue from the latest checkpoint in `output_dir`.
    pub resume: bool,
    pub model: ModelSettings,
    pub pretrain: PretrainConfig,
    pub distill: DistillConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(TaskKind::KeyedArith)
    }
}

impl ExperimentConfig {
    /// Desk-scale defaults for `task`.
    pub fn preset(task: TaskKind) -> Self {
        let vocab_size = Vocabulary::standard().len();
        let (model, pretrain, distill) = match task {
            TaskKind::KeyedArith => (
                ModelSettings::default(),
                PretrainConfig { min_steps: 4000, ..Default::default() },
                DistillConfig {
                    top_k: vocab_size,
                    batch_size: 16,
                    learning_rate: 1e-3,
                    steps: 2000,
                    max_response_tokens: RESPONSE_LEN,
                    optimizer: OptimizerKind::adam(),
                    ..Default::default()
                },
            ),
            TaskKind::FrozenLake | TaskKind::Sokoban => (
                ModelSettings { max_seq: if task == TaskKind::Sokoban { 320 } else { 256 }, ..Default::default() },
                PretrainConfig { max_steps: 8000, threshold: 0.85, eval_n: 200, ..Default::default() },
                DistillConfig {
                    top_k: vocab_size,
                    batch_size: 8,
                    learning_rate: 1e-3,
                    steps: 200,
                    max_response_tokens: 4,
                    optimizer: OptimizerKind::adam(),
                    ..Default::default()
                },
            ),
        };
        Self {
            task,
            mode: RunMode::Opcd,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            teacher_checkpoint: None,
            student_checkpoint: None,
            context_source: if task == TaskKind::KeyedArith { ContextSource::FixedContext } else { ContextSource::ExperiencePool },
            context_text: None,
            pool: PoolSettings::default(),
            eval_every: 100,
            eval_n: None,
            ood_eval_n: None,
            checkpoint_interval: 2,
            keep_checkpoints: 3,
            record_wall_time: false,
            stop_after: None,
            resume: false,
            model,
            pretrain,
            distill,
        }
    }

    /// Parses TOML over the preset of the file's `task` (keyed arithmetic
    /// when absent), then applies `key=value` overrides with dotted keys.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            set_dotted(&mut table, key.trim(), parse_toml_value(raw.trim()))?;
        }
        let task: TaskKind = match table.get("task") {
            Some(v) => v.clone().try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?,
            None => TaskKind::KeyedArith,
        };
        let mut base = toml::Table::try_from(Self::preset(task)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, table);
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let v = Vocabulary::standard().len();
        self.model.config(v).validate()?;
        self.distill.validate(v)?;
        if self.checkpoint_interval == 0 || self.eval_every == 0 {
            return Err(Error::Config("checkpoint-interval and eval-every must be positive".into()));
        }
        for p in [&self.teacher_checkpoint, &self.student_checkpoint].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        if self.mode == RunMode::OffPolicy && self.distill.teacher_mode != TeacherMode::Frozen {
            return Err(Error::Config("off-policy runs need the frozen teacher mode".into()));
        }
        Ok(())
    }

    pub fn eval_n(&self) -> usize {
        self.eval_n.unwrap_or(self.task.flavor().default_validation_size())
    }

    pub fn ood_eval_n(&self) -> usize {
        self.ood_eval_n.unwrap_or(self.eval_n())
    }

    fn validation_size(&self) -> usize {
        self.pool.validation_size.unwrap_or(self.task.flavor().default_validation_size())
    }
}

/// A bare word that is not valid TOML is taken as a string.
fn parse_toml_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("empty key in {key:?}")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| Error::Config(format!("{p} in {key:?} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Pretrains a teacher for `task` from a fresh initialization.
pub fn pretrain_teacher(
    task: TaskKind,
    model: &ModelSettings,
    cfg: &PretrainConfig,
    seed: u64,
) -> Result<(Model, Vec<CurvePoint>)> {
    let vocab = Arc::new(Vocabulary::standard());
    let mut m = Model::init(model.config(vocab.len()), vocab.clone(), seeds::derive(seed, "init", 0))?;
    let curve = match task.game() {
        None => pretrain(&mut m, &ArithPretrain::new(vocab), cfg, seeds::derive(seed, "pretrain", 0))?,
        Some(game) => {
            let room = model.max_seq.saturating_sub(prompt_reserve(game));
            let data = GamePretrain::new(vocab, game, 20, 30, room, seeds::derive(seed, "bank", 0))?;
            pretrain(&mut m, &data, cfg, seeds::derive(seed, "pretrain", 0))?
        }
    };
    Ok((m, curve))
}

/// The distillation context and how it was chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextChoice {
    pub source: ContextSource,
    pub text: String,
    pub tokens: usize,
    pub pool_size: Option<usize>,
    pub selected: Option<usize>,
    pub scores: Option<Vec<f64>>,
    pub extraction_failures: usize,
}

/// The key every keyed-arithmetic run with `seed` uses.
pub fn run_key(seed: u64) -> DigitKey {
    DigitKey::random(seeds::derive(seed, "key", 0))
}

/// Positions kept free for a keyed-arithmetic question and answer.
const ARITH_RESERVE: usize = 16;

fn arith_problems(seed: u64, stream: &str, n: usize, key: &DigitKey) -> Vec<KeyedArithmeticInstance> {
    (0..n as u64).map(|i| keyed_arith_generate(seeds::derive(seed, stream, i), key)).collect()
}

fn arith_pool(cfg: &ExperimentConfig, key: &DigitKey, raw: bool, vocab: &Vocabulary) -> Result<Pool> {
    let problems = arith_problems(cfg.seed, "pool-problem", cfg.pool.problems.max(1), key);
    let extract = |p: &KeyedArithmeticInstance, context: &ExperienceContext, _seed: u64| -> Result<Vec<String>> {
        let traces = [(p.question_text.clone(), p.answer_token.clone())];
        let items = if raw { math_raw_trace(&traces) } else { math_items(&traces) };
        Ok(items.into_iter().filter(|t| !context.contains_text(t)).collect())
    };
    let pc = PoolConfig {
        repeats: cfg.pool.repeats,
        per_run: cfg.pool.per_run,
        budget: cfg.pool.budget.unwrap_or(Flavor::Math.default_budget()),
    };
    build_pool(&extract, &problems, pc, vocab, seeds::derive(cfg.seed, "pool", 0))
}

struct RawTraceExtractor<'a> {
    model: &'a Model,
    game: Game,
    temperature: f64,
    max_tokens: usize,
}

impl Extractor<u64> for RawTraceExtractor<'_> {
    fn extract(&self, board: &u64, context: &ExperienceContext, seed: u64) -> Result<Vec<String>> {
        let c = fit_context(context, self.model, prompt_reserve(self.game));
        let mut agent = LmAgent::new(self.model, c, self.temperature);
        let ep = run_episode(&mut agent, self.game.reset(*board)?, DEFAULT_ROUND_LIMIT, self.max_tokens, seed)?;
        Ok(game_raw_trace(&ep))
    }
}

fn game_pool(cfg: &ExperimentConfig, game: Game, teacher: &Model, raw: bool) -> Result<Pool> {
    let boards: Vec<u64> = (0..cfg.pool.problems.max(1) as u64).map(|i| seeds::derive(cfg.seed, "pool-board", i)).collect();
    let pc = PoolConfig {
        repeats: cfg.pool.repeats,
        per_run: cfg.pool.per_run,
        budget: cfg.pool.budget.unwrap_or(Flavor::Game.default_budget()),
    };
    let (t, n) = (cfg.distill.rollout_temperature, cfg.distill.max_response_tokens);
    let seed = seeds::derive(cfg.seed, "pool", 0);
    if raw {
        let ex = RawTraceExtractor { model: teacher, game, temperature: t, max_tokens: n };
        build_pool(&ex, &boards, pc, teacher.vocab(), seed)
    } else {
        let ex = GameExtractor { model: teacher, game, temperature: t, max_tokens: n };
        build_pool(&ex, &boards, pc, teacher.vocab(), seed)
    }
}

/// The accumulation pool for a pool-based context source.
pub fn build_task_pool(cfg: &ExperimentConfig, teacher: &Model) -> Result<Pool> {
    let raw = match cfg.context_source {
        ContextSource::ExperiencePool => false,
        ContextSource::RawTrace => true,
        other => return Err(Error::Config(format!("context source {other:?} does not use a pool"))),
    };
    match cfg.task.game() {
        None => arith_pool(cfg, &run_key(cfg.seed), raw, teacher.vocab()),
        Some(game) => game_pool(cfg, game, teacher, raw),
    }
}

/// Picks one pool entry by the configured selection mode. Contexts are cut
/// to what fits in front of a prompt first.
pub fn select_from_pool(cfg: &ExperimentConfig, teacher: &Model, pool: &Pool) -> Result<ContextChoice> {
    let vocab = teacher.vocab().clone();
    let key = run_key(cfg.seed);
    let reserve = cfg.task.game().map_or(ARITH_RESERVE, prompt_reserve);
    let room = teacher.config().max_seq.saturating_sub(reserve);
    let fitted: Vec<ExperienceContext> = pool.entries.iter().map(|e| e.context.truncated(room, &vocab)).collect();
    let (selected, scores) = match cfg.pool.selection {
        Selection::TestTime => (select_test_time(fitted.len(), seeds::derive(cfg.seed, "select", 0))?, None),
        Selection::Filtered => {
            let refs: Vec<&ExperienceContext> = fitted.iter().collect();
            let n = cfg.validation_size();
            let (i, s) = match cfg.task.game() {
                None => {
                    let val = arith_problems(cfg.seed, "validation-problem", n, &key);
                    select_filtered(&refs, &val, |c, p| {
                        let prefix = join_prefix(&c.tokens(&vocab), &vocab.encode(&p.question_text));
                        let out = teacher.sample(&prefix, RESPONSE_LEN, 0.0, EOS, 0)?;
                        Ok(final_answer(&out) == vocab.id(&p.answer_token))
                    })?
                }
                Some(game) => {
                    let boards: Vec<u64> = (0..n as u64).map(|i| seeds::derive(cfg.seed, "validation-board", i)).collect();
                    select_filtered(&refs, &boards, |c, &b| {
                        let mut agent = LmAgent::new(teacher, c.tokens(&vocab), cfg.distill.rollout_temperature);
                        let ep = run_episode(&mut agent, game.reset(b)?, DEFAULT_ROUND_LIMIT, cfg.distill.max_response_tokens, b)?;
                        Ok(ep.outcome == Outcome::Won)
                    })?
                }
            };
            (i, Some(s))
        }
    };
    let chosen = &fitted[selected];
    Ok(ContextChoice {
        source: cfg.context_source,
        text: chosen.render(),
        tokens: chosen.token_count(),
        pool_size: Some(pool.len()),
        selected: Some(selected),
        scores,
        extraction_failures: pool.failures.len(),
    })
}

/// The distillation context for `cfg`: fixed text, nothing, or a pool entry.
pub fn choose_context(cfg: &ExperimentConfig, teacher: &Model) -> Result<ContextChoice> {
    let fixed = |text: String| -> Result<ContextChoice> {
        let tokens = teacher.vocab().count(&text);
        let reserve = cfg.task.game().map_or(ARITH_RESERVE, prompt_reserve);
        if tokens + reserve > teacher.config().max_seq {
            return Err(Error::Config(format!(
                "context of {tokens} tokens leaves no room for a prompt (max_seq {}, reserve {reserve})",
                teacher.config().max_seq
            )));
        }
        Ok(ContextChoice { source: cfg.context_source, text, tokens, pool_size: None, selected: None, scores: None, extraction_failures: 0 })
    };
    match (cfg.context_source, cfg.task.game()) {
        (ContextSource::None, _) => fixed(String::new()),
        (ContextSource::FixedContext, None) => fixed(cfg.context_text.clone().unwrap_or_else(|| run_key(cfg.seed).render())),
        (ContextSource::FixedContext, Some(_)) => {
            let text = cfg.context_text.clone().ok_or_else(|| Error::Config("fixed-context on a game needs context_text".into()))?;
            fixed(text)
        }
        _ => select_from_pool(cfg, teacher, &build_task_pool(cfg, teacher)?),
    }
}

/// The task a run distills on, with its context already tokenized.
pub enum PreparedTask {
    Arith(ArithTask),
    Game(GameTask),
}

impl PreparedTask {
    pub fn new(task: TaskKind, seed: u64, context: Vec<TokenId>) -> Self {
        match task.game() {
            None => PreparedTask::Arith(ArithTask { key: run_key(seed), context }),
            Some(game) => PreparedTask::Game(GameTask { game, context, round_limit: DEFAULT_ROUND_LIMIT }),
        }
    }

    pub fn context(&self) -> &[TokenId] {
        match self {
            PreparedTask::Arith(t) => &t.context,
            PreparedTask::Game(t) => &t.context,
        }
    }

    /// In-distribution accuracy; `with_context` puts the task context in
    /// front of every prompt.
    pub fn evaluate(&self, model: &Model, n: usize, with_context: bool, cfg: &DistillConfig, seed: u64) -> Result<f64> {
        let context: &[TokenId] = if with_context { self.context() } else { &[] };
        match self {
            PreparedTask::Arith(t) => arith_accuracy(model, &t.key, context, n, seed),
            PreparedTask::Game(t) => {
                game_win_rate(model, t.game, context, n, cfg.rollout_temperature, cfg.max_response_tokens, seed)
            }
        }
    }

    /// Held-out task without context: subtraction for arithmetic, the other
    /// game for games.
    pub fn evaluate_ood(&self, model: &Model, n: usize, cfg: &DistillConfig, seed: u64) -> Result<f64> {
        match self {
            PreparedTask::Arith(_) => ood_accuracy(model, n, seed),
            PreparedTask::Game(t) => {
                game_win_rate(model, t.game.other(), &[], n, cfg.rollout_temperature, cfg.max_response_tokens, seed)
            }
        }
    }
}

impl RolloutTask for PreparedTask {
    fn rollout(&self, policy: &Model, view: View, temperature: f64, max_tokens: usize, seed: u64) -> Result<DistillItem> {
        match self {
            PreparedTask::Arith(t) => t.rollout(policy, view, temperature, max_tokens, seed),
            PreparedTask::Game(t) => t.rollout(policy, view, temperature, max_tokens, seed),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    /// Interrupted by `stop_after`; resumable.
    Stopped,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub task: TaskKind,
    pub mode: RunMode,
    pub teacher_mode: TeacherMode,
    pub seed: u64,
    pub steps_completed: usize,
    pub teacher_with_context: Option<f64>,
    pub teacher_without_context: Option<f64>,
    pub context_tokens: Option<usize>,
    /// Skipped steps, or a final in-distribution accuracy more than 0.10
    /// below the baseline.
    pub diverged: bool,
    pub metrics: MetricsSummary,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const TEACHER_CHECKPOINT: &str = "teacher.ckpt";

pub fn checkpoint_name(step: usize) -> String {
    format!("ckpt-{step:06}.ckpt")
}

/// Periodic checkpoints in `dir`, oldest first.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(step) = name.strip_prefix("ckpt-").and_then(|s| s.strip_suffix(".ckpt")).and_then(|s| s.parse().ok()) {
            out.push((step, path));
        }
    }
    out.sort();
    Ok(out)
}

fn save_state(state: &TrainState, path: &Path) -> Result<()> {
    let mut ckpt = Checkpoint::from_model(&state.student);
    ckpt.tensors.extend(state.optimizer.state_tensors());
    if let (TeacherMode::Periodic { .. }, Some(t)) = (state.mode, &state.teacher) {
        ckpt.push_params("teacher", t.params());
    }
    ckpt.meta = serde_json::json!({ "step": state.step, "version": state.version });
    ckpt.save(path)
}

fn load_state(state: &mut TrainState, path: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(path)?;
    state.student = ckpt.model()?;
    state.optimizer.load_state(|n| ckpt.tensor(n))?;
    if let TeacherMode::Periodic { .. } = state.mode {
        let params = ckpt.params("teacher")?;
        state.teacher = Some(Model::from_parts(ckpt.config.clone(), state.student.vocab().clone(), params)?);
    }
    let field = |k: &str| ckpt.meta.get(k).and_then(|v| v.as_u64()).ok_or_else(|| Error::Checkpoint(format!("meta.{k} missing")));
    state.step = field("step")? as usize;
    state.version = field("version")?;
    Ok(())
}

struct Stage(&'static str);

fn at<T>(stage: &'static str, r: Result<T>) -> std::result::Result<T, (Stage, Error)> {
    r.map_err(|e| (Stage(stage), e))
}

/// Runs the configured pipeline in `cfg.output_dir`. Stage failures are
/// written to the summary (partial metrics and checkpoints stay) and the
/// summary is returned either way; only an unwritable output directory is
/// an error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let mut summary = RunSummary {
        status: RunStatus::Completed,
        failed_stage: None,
        error: None,
        task: cfg.task,
        mode: cfg.mode,
        teacher_mode: cfg.distill.teacher_mode,
        seed: cfg.seed,
        steps_completed: 0,
        teacher_with_context: None,
        teacher_without_context: None,
        context_tokens: None,
        diverged: false,
        metrics: MetricsSummary::default(),
    };
    if let Err((Stage(stage), e)) = run_stages(cfg, &mut summary) {
        summary.status = RunStatus::Failed;
        summary.failed_stage = Some(stage.to_string());
        summary.error = Some(e.to_string());
    }
    let metrics_path = dir.join(METRICS_FILE);
    if metrics_path.exists() {
        summary.metrics = summarize(&read_metrics(&metrics_path)?);
    }
    summary.diverged = summary.metrics.skipped_steps > 0
        || matches!((summary.metrics.baseline_in_distribution, summary.metrics.final_in_distribution), (Some(b), Some(f)) if f < b - 0.10);
    fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

fn load_or_pretrain_teacher(cfg: &ExperimentConfig) -> Result<Model> {
    let local = cfg.output_dir.join(TEACHER_CHECKPOINT);
    if let Some(p) = &cfg.teacher_checkpoint {
        return crate::lm::load_model(p);
    }
    if cfg.resume && local.exists() {
        return crate::lm::load_model(&local);
    }
    let (m, curve) = pretrain_teacher(cfg.task, &cfg.model, &cfg.pretrain, cfg.seed)?;
    fs::write(cfg.output_dir.join("pretrain_curve.json"), serde_json::to_string_pretty(&curve)?)?;
    crate::lm::save_model(&m, &local)?;
    Ok(m)
}

fn run_stages(cfg: &ExperimentConfig, summary: &mut RunSummary) -> std::result::Result<(), (Stage, Error)> {
    let dir = &cfg.output_dir;
    let started = Instant::now();
    let teacher = at("teacher", load_or_pretrain_teacher(cfg))?;
    let choice = at("context", choose_context(cfg, &teacher))?;
    at("context", fs::write(dir.join("context.json"), serde_json::to_string_pretty(&choice).unwrap_or_default()).map_err(Error::from))?;
    summary.context_tokens = Some(choice.tokens);
    let vocab = teacher.vocab().clone();
    let task = PreparedTask::new(cfg.task, cfg.seed, vocab.encode(&choice.text));

    let student = match &cfg.student_checkpoint {
        Some(p) => at("student", crate::lm::load_model(p))?,
        None => teacher.clone(),
    };
    let eval_seed = seeds::derive(cfg.seed, "eval", 0);
    let (n, ood_n) = (cfg.eval_n(), cfg.ood_eval_n());
    summary.teacher_with_context = Some(at("evaluate", task.evaluate(&teacher, n, true, &cfg.distill, eval_seed))?);
    summary.teacher_without_context = Some(at("evaluate", task.evaluate(&teacher, n, false, &cfg.distill, eval_seed))?);

    let frozen = match cfg.distill.teacher_mode {
        TeacherMode::Frozen => Some(teacher),
        _ => None,
    };
    let mut state = at("distill", TrainState::new(student, frozen, &cfg.distill))?;
    let metrics = dir.join(METRICS_FILE);
    let latest = if cfg.resume { at("resume", list_checkpoints(dir))?.pop() } else { None };
    match latest {
        Some((step, path)) => {
            at("resume", load_state(&mut state, &path))?;
            at("resume", truncate_metrics(&metrics, step))?;
        }
        None => {
            at("evaluate", fs::write(&metrics, "").map_err(Error::from))?;
            let record = MetricRecord {
                step: 0,
                eval_accuracy_in_distribution: Some(at("evaluate", task.evaluate(&state.student, n, false, &cfg.distill, eval_seed))?),
                eval_accuracy_ood: Some(at("evaluate", task.evaluate_ood(&state.student, ood_n, &cfg.distill, eval_seed))?),
                wall_time: cfg.record_wall_time.then(|| started.elapsed().as_secs_f64()),
                ..Default::default()
            };
            at("evaluate", append_record(&metrics, &record))?;
        }
    }
    let mut best = at("resume", read_metrics(&metrics))?
        .iter()
        .filter(|r| r.step > 0)
        .filter_map(|r| r.eval_accuracy_in_distribution)
        .fold(f64::NEG_INFINITY, f64::max);
    let data_seed = seeds::derive(cfg.seed, "distill", 0);
    while state.step < cfg.distill.steps {
        if cfg.stop_after.is_some_and(|s| state.step >= s) {
            summary.status = RunStatus::Stopped;
            break;
        }
        let report = at(
            "distill",
            match cfg.mode {
                RunMode::Opcd => opcd_train_step(&mut state, &task, &cfg.distill, data_seed),
                RunMode::OffPolicy => offpolicy_context_distill_step(&mut state, &task, &cfg.distill, data_seed),
            },
        )?;
        let step = state.step;
        let mut record = MetricRecord {
            step,
            loss: report.loss,
            mean_token_kl: report.mean_token_kl,
            rollout_len_mean: Some(report.rollout_len_mean),
            rollout_len_min: Some(report.rollout_len_min),
            rollout_len_max: Some(report.rollout_len_max),
            ..Default::default()
        };
        record.extra.insert("grad_norm".into(), report.grad_norm.into());
        record.extra.insert("skipped".into(), report.skipped.clone().into());
        if step.is_multiple_of(cfg.eval_every) || step == cfg.distill.steps {
            let acc = at("evaluate", task.evaluate(&state.student, n, false, &cfg.distill, eval_seed))?;
            record.eval_accuracy_in_distribution = Some(acc);
            record.eval_accuracy_ood = Some(at("evaluate", task.evaluate_ood(&state.student, ood_n, &cfg.distill, eval_seed))?);
            if acc > best {
                best = acc;
                at("checkpoint", crate::lm::save_model(&state.student, &dir.join(BEST_CHECKPOINT)))?;
            }
        }
        record.wall_time = cfg.record_wall_time.then(|| started.elapsed().as_secs_f64());
        at("distill", append_record(&metrics, &record))?;
        if step.is_multiple_of(cfg.checkpoint_interval) || step == cfg.distill.steps {
            at("checkpoint", save_state(&state, &dir.join(checkpoint_name(step))))?;
            let all = at("checkpoint", list_checkpoints(dir))?;
            for (_, old) in all.iter().take(all.len().saturating_sub(cfg.keep_checkpoints.max(1))) {
                at("checkpoint", fs::remove_file(old).map_err(Error::from))?;
            }
        }
    }
    summary.steps_completed = state.step;
    Ok(())
}

/// Loads the student of a run checkpoint (periodic or best).
pub fn load_student(path: &Path) -> Result<Model> {
    Checkpoint::load(path)?.model()
}

/// Accuracy under a pool context for every snapshot step of accumulation
/// run `repeat`, by teacher win rate or exact match.
pub fn accumulation_curve(
    cfg: &ExperimentConfig,
    teacher: &Model,
    pool: &Pool,
    repeat: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    let reserve = cfg.task.game().map_or(ARITH_RESERVE, prompt_reserve);
    let room = teacher.config().max_seq.saturating_sub(reserve);
    let mut out = Vec::new();
    let empty = ExperienceContext::empty(0);
    let mut contexts = vec![(0, &empty)];
    contexts.extend(pool.entries.iter().filter(|e| e.repeat == repeat).map(|e| (e.step, &e.context)));
    for (step, c) in contexts {
        let tokens = c.truncated(room, teacher.vocab()).tokens(teacher.vocab());
        let task = PreparedTask::new(cfg.task, cfg.seed, tokens);
        out.push((step, task.evaluate(teacher, n, true, &cfg.distill, seed)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_and_overrides() {
        let cfg = ExperimentConfig::preset(TaskKind::FrozenLake);
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text, &[]).unwrap(), cfg);
        let o = ExperimentConfig::from_toml(
            "task = \"keyed-arith\"\n[distill]\nsteps = 7\n",
            &["seed=9".into(), "distill.batch_size=3".into(), "output_dir=/tmp/x".into()],
        )
        .unwrap();
        assert_eq!((o.seed, o.distill.steps, o.distill.batch_size), (9, 7, 3));
        assert_eq!(o.output_dir, PathBuf::from("/tmp/x"));
        assert_eq!(o.distill.max_response_tokens, RESPONSE_LEN);
        assert!(ExperimentConfig::from_toml("bogus = 1", &[]).is_err());
        assert!(ExperimentConfig::from_toml("", &["checkpoint_interval=0".into()]).is_err());
    }

    #[test]
    fn checkpoint_names_sort_by_step() {
        assert_eq!(checkpoint_name(12), "ckpt-000012.ckpt");
        let dir = tempfile::tempdir().unwrap();
        for s in [10, 2, 4] {
            fs::write(dir.path().join(checkpoint_name(s)), b"").unwrap();
        }
        fs::write(dir.path().join("best.ckpt"), b"").unwrap();
        let steps: Vec<usize> = list_checkpoints(dir.path()).unwrap().into_iter().map(|(s, _)| s).collect();
        assert_eq!(steps, vec![2, 4, 10]);
    }
}
