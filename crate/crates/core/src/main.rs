use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use opcd::bench::{
    build_task_pool, choose_context, pretrain_teacher, read_metrics, run_experiment, select_from_pool, summarize,
    ContextSource, ExperimentConfig, Game, PolicyAgent, PreparedTask, RunMode, TaskKind, METRICS_FILE, SUMMARY_FILE,
};
use opcd::experience::{parse_experience_items, Pool};
use opcd::lm::{load_model, save_model};
use opcd::worlds::{parse_action, Agent, Status};
use opcd::{seeds, Error, Result};

#[derive(Parser)]
#[command(name = "opcd", version, about = "On-policy context distillation at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file, the common overrides, and `--set key=value` for the rest.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML config; the task preset when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    task: Option<TaskKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    teacher: Option<PathBuf>,
    #[arg(long)]
    student: Option<PathBuf>,
    #[arg(long, value_enum)]
    context_source: Option<ContextSource>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    resume: bool,
    /// Any config field by dotted path, e.g. `distill.learning_rate=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self, mode: Option<RunMode>) -> Result<ExperimentConfig> {
        let mut o = Vec::new();
        let quote = |p: &PathBuf| format!("{:?}", p.display().to_string());
        if let Some(t) = self.task {
            o.push(format!("task={}", serde_json::to_string(&t)?));
        }
        if let Some(m) = mode {
            o.push(format!("mode={}", serde_json::to_string(&m)?));
        }
        if let Some(s) = self.seed {
            o.push(format!("seed={s}"));
        }
        if let Some(p) = &self.output_dir {
            o.push(format!("output_dir={}", quote(p)));
        }
        if let Some(p) = &self.teacher {
            o.push(format!("teacher_checkpoint={}", quote(p)));
        }
        if let Some(p) = &self.student {
            o.push(format!("student_checkpoint={}", quote(p)));
        }
        if let Some(c) = self.context_source {
            o.push(format!("context_source={}", serde_json::to_string(&c)?));
        }
        if let Some(s) = self.steps {
            o.push(format!("distill.steps={s}"));
        }
        if self.resume {
            o.push("resume=true".into());
        }
        o.extend(self.set.iter().cloned());
        let text = match &self.config {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        ExperimentConfig::from_toml(&text, &o)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain a teacher until the context gap is established.
    PretrainTeacher {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Where to write the teacher checkpoint.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the accumulation pool and write it as JSON lines.
    BuildPool {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pick a context from a saved pool (or the configured source).
    SelectContext {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// On-policy distillation run.
    TrainOpcd {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Off-policy forward-KL baseline run.
    TrainOffpolicy {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Accuracy of a checkpoint, with and without the task context, and on
    /// the held-out task.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Step a board by hand or with the scripted policy.
    EnvPlay {
        #[arg(long, value_enum, default_value = "frozen-lake")]
        game: Game,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated moves; the scripted policy plays when omitted.
        #[arg(long)]
        actions: Option<String>,
        /// Experience items (one per line) for the scripted policy.
        #[arg(long)]
        items: Option<PathBuf>,
    },
    /// Validate a run's metrics file and print its summary.
    Report {
        run: PathBuf,
    },
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn teacher_of(cfg: &ExperimentConfig) -> Result<opcd::lm::Model> {
    let p = cfg.teacher_checkpoint.as_ref().ok_or_else(|| Error::Config("--teacher is required".into()))?;
    load_model(p)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PretrainTeacher { cfg, out } => {
            let c = cfg.load(None)?;
            let (model, curve) = pretrain_teacher(c.task, &c.model, &c.pretrain, c.seed)?;
            save_model(&model, &out)?;
            print_json(&curve)
        }
        Command::BuildPool { cfg, out } => {
            let c = cfg.load(None)?;
            let pool = build_task_pool(&c, &teacher_of(&c)?)?;
            pool.save(&out)?;
            eprintln!("{} snapshots, {} extraction failures", pool.len(), pool.failures.len());
            Ok(())
        }
        Command::SelectContext { cfg, pool } => {
            let c = cfg.load(None)?;
            let teacher = teacher_of(&c)?;
            let choice = match pool {
                Some(p) => select_from_pool(&c, &teacher, &Pool::load(&p)?)?,
                None => choose_context(&c, &teacher)?,
            };
            print_json(&choice)
        }
        Command::TrainOpcd { cfg } => print_json(&run_experiment(&cfg.load(Some(RunMode::Opcd))?)?),
        Command::TrainOffpolicy { cfg } => print_json(&run_experiment(&cfg.load(Some(RunMode::OffPolicy))?)?),
        Command::Eval { cfg, checkpoint, n } => {
            let c = cfg.load(None)?;
            let model = load_model(&checkpoint)?;
            let teacher = c.teacher_checkpoint.as_ref().map(|p| load_model(p)).transpose()?;
            let choice = choose_context(&c, teacher.as_ref().unwrap_or(&model))?;
            let task = PreparedTask::new(c.task, c.seed, model.vocab().encode(&choice.text));
            let n = n.unwrap_or(c.eval_n());
            let seed = seeds::derive(c.seed, "eval", 0);
            print_json(&serde_json::json!({
                "with_context": task.evaluate(&model, n, true, &c.distill, seed)?,
                "without_context": task.evaluate(&model, n, false, &c.distill, seed)?,
                "ood": task.evaluate_ood(&model, n, &c.distill, seed)?,
            }))
        }
        Command::EnvPlay { game, seed, actions, items } => {
            let mut world = game.reset(seed)?;
            let moves: Option<Vec<String>> = actions.map(|a| a.split(',').map(|s| s.trim().to_string()).collect());
            let items = match items {
                Some(p) => parse_experience_items(&std::fs::read_to_string(p)?),
                None => Vec::new(),
            };
            let mut agent = PolicyAgent { items };
            println!("{}", world.render());
            for round in 1..=moves.as_ref().map_or(opcd::worlds::DEFAULT_ROUND_LIMIT, Vec::len) {
                if world.status() != Status::Running {
                    break;
                }
                let text = match &moves {
                    Some(m) => m[round - 1].clone(),
                    None => agent.act(&world.render(), round, 4, seeds::derive(seed, "play", round as u64))?,
                };
                let Some(action) = parse_action(&text) else {
                    println!("\nround {round}: {text:?} is not a move");
                    continue;
                };
                world = world.step(action)?;
                println!("\nround {round}: {}\n{}", action.name(), world.render());
            }
            Ok(())
        }
        Command::Report { run } => {
            let records = read_metrics(&run.join(METRICS_FILE))?;
            let summary_path = run.join(SUMMARY_FILE);
            let stored: Option<serde_json::Value> = match summary_path.exists() {
                true => Some(serde_json::from_str(&std::fs::read_to_string(summary_path)?)?),
                false => None,
            };
            print_json(&serde_json::json!({ "metrics": summarize(&records), "summary": stored }))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
