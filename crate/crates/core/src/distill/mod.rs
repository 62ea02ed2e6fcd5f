//! On-policy context distillation: student rollouts without the context,
//! scored token by token against a teacher that sees it.

mod batch;
mod config;
mod kl;
mod loss;
mod optim;
mod train;

pub use batch::{DistillBatch, DistillItem, PromptSet, RolloutTask, Turn, View};
pub use config::{DistillConfig, OptimizerKind, TeacherMode};
pub use kl::{forward_kl_token, reverse_kl_token, top_k_indices};
pub use loss::{
    forward_kl_loss, loss_and_grad, loss_on_tape, opcd_loss, opcd_loss_on_tape, turn_loss_on_tape, LossOutput,
    Objective,
};
pub use optim::Optimizer;
pub use train::{
    collect_rollouts, offpolicy_context_distill_step, opcd_train_step, opcd_update, teacher_view, StepReport,
    TrainState,
};
