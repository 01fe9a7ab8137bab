//! The five meta-learning strategies behind a common adapt / meta-step
//! interface, plus evaluation, the outer-loop optimizer and checkpoints.
//!
//! Per-task work inside a meta-batch may run on worker threads; each worker
//! builds its own graph and the per-task gradients are reduced in task-id
//! order, so results do not depend on scheduling.

mod batch;
mod checkpoint;
mod evaluate;
mod lstm_opt;
mod maml;
mod metalstm;
mod metasgd;
mod optim;
mod strategy;
mod taml;
mod task;

pub use batch::{StepStats, TaskContribution};
pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_FORMAT};
pub use evaluate::{ci_half_width, evaluate, evaluate_with, EvalProtocol, EvalResult, Z_95, Z_999};
pub use lstm_opt::{
    learned_adapt, lstm_opt_step, phi_layout, preprocess, LstmOptState, LstmRecurrent, LstmWeights, DEFAULT_HIDDEN,
    DEFAULT_PREPROCESS_P, FORGET_BIAS_INIT, INPUT_BIAS_INIT, INPUT_FEATURES,
};
pub use maml::{inner_adapt, maml_meta_step, maml_task_gradient, MamlState};
pub use metalstm::{lstm_task_gradient, metalstm_meta_step, metalstmpp_meta_gradient, metalstmpp_meta_step};
pub use metasgd::{metasgd_adapt, metasgd_meta_step, metasgd_task_gradient, MetaSgdState};
pub use optim::{MetaOptimizer, OptimizerKind};
pub use strategy::{adapt_with, AdaptRule, MetaModel, Strategy};
pub use taml::{taml_loss_weights, taml_meta_step, taml_objective, theil_index, TamlConfig};
pub use task::{AdaptTask, EpisodeTask, QuadraticTask};
