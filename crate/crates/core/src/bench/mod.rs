//! Experiment harness: presets, teacher pretraining, evaluation and runs.

mod arith;
mod experiment;
mod games;
mod metrics;
mod supervised;

pub use arith::{arith_accuracy, final_answer, key_items, ood_accuracy, ArithPretrain, ArithTask, RESPONSE_LEN};
pub use experiment::{
    accumulation_curve, build_task_pool, checkpoint_name, choose_context, list_checkpoints, load_student, pretrain_teacher,
    run_experiment, run_key, select_from_pool, ContextChoice, ContextSource, ExperimentConfig, ModelSettings, PoolSettings, PreparedTask,
    RunMode, RunStatus, RunSummary, Selection, TaskKind, BEST_CHECKPOINT, METRICS_FILE, SUMMARY_FILE,
    TEACHER_CHECKPOINT,
};
pub use games::{
    context_policy, fit_context, game_prompt, game_win_rate, prompt_reserve, AgentTurn, Game, GameExtractor,
    GamePretrain, GameTask, LmAgent, PolicyAgent, ScriptedExtractor,
};
pub use metrics::{
    append_record, parse_metrics, read_metrics, summarize, truncate_metrics, BestPoint, MetricRecord, MetricsSummary,
    SchemaError, REQUIRED_FIELDS,
};
pub use supervised::{
    pretrain, supervised_loss_and_grad, train_steps, CurvePoint, Example, PretrainConfig, PretrainTask,
};
