//! Model-agnostic meta-learning: a shared initialisation θ* fine-tuned per
//! task by plain gradient steps, meta-trained through those steps.

use serde::{Deserialize, Serialize};

use super::batch::{collect_contributions, plain_sum, StepStats, TaskContribution};
use super::optim::MetaOptimizer;
use super::task::AdaptTask;
use crate::diffcore::{grad, DiffNode};
use crate::error::{Error, Result};
use crate::learner::ParamVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MamlState {
    pub theta_star: ParamVector,
    pub inner_lr: f64,
    pub inner_steps: usize,
    /// Outer descent rule; its learning rate is β.
    pub outer: MetaOptimizer,
    pub first_order: bool,
}

impl MamlState {
    pub fn new(theta_star: ParamVector, inner_lr: f64, inner_steps: usize, outer: MetaOptimizer) -> Self {
        MamlState { theta_star, inner_lr, inner_steps, outer, first_order: false }
    }

    pub fn outer_lr(&self) -> f64 {
        self.outer.lr
    }

    pub fn validate(&self) -> Result<()> {
        if self.inner_steps == 0 {
            return Err(Error::Invalid("MAML needs at least one inner step".into()));
        }
        if !(self.inner_lr > 0.0) || self.outer.lr < 0.0 {
            return Err(Error::Invalid("learning rates must be positive".into()));
        }
        Ok(())
    }
}

/// Gradient-descent trajectory `θ_{t+1} = θ_t - α ∇L^tr(θ_t)`, starting point
/// included. With `create_graph` every iterate stays differentiable with
/// respect to `theta0`; otherwise the step gradients are constants.
pub fn inner_adapt<T: AdaptTask + ?Sized>(
    theta0: &DiffNode,
    task: &T,
    alpha: f64,
    steps: usize,
    create_graph: bool,
) -> Result<Vec<DiffNode>> {
    let mut trajectory = Vec::with_capacity(steps + 1);
    trajectory.push(theta0.clone());
    for step in 0..steps {
        let theta = trajectory.last().expect("non-empty").clone();
        // Without create_graph the step gradient is a constant, so it is taken
        // on a detached copy instead of walking the trajectory graph.
        let probe = if create_graph && theta.requires_grad() { theta.clone() } else { theta.detach_variable() };
        let loss = task.support_loss(&probe).map_err(|e| non_finite_at(e, step))?;
        if !loss.item().is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let g = grad(&loss, std::slice::from_ref(&probe), create_graph)?.get(&probe).expect("wrt entry").clone();
        trajectory.push(theta.sub(&g.scale(alpha)?)?);
    }
    Ok(trajectory)
}

fn non_finite_at(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::NonFiniteLoss { step },
        other => other,
    }
}

/// Query loss after adaptation and its gradient with respect to θ*.
pub fn maml_task_gradient<T: AdaptTask + ?Sized>(
    theta_star: &ParamVector,
    task: &T,
    alpha: f64,
    steps: usize,
    first_order: bool,
) -> Result<TaskContribution> {
    let theta = theta_star.to_variable();
    let trajectory = inner_adapt(&theta, task, alpha, steps, !first_order)?;
    let adapted = trajectory.last().expect("non-empty");
    let loss = task.query_loss(adapted)?;
    if !loss.item().is_finite() {
        return Err(Error::NonFiniteLoss { step: steps });
    }
    let g = grad(&loss, std::slice::from_ref(&theta), false)?;
    Ok(TaskContribution { task_id: task.task_id(), query_loss: loss.item(), grad: g.value_or_zero(&theta).into_data() })
}

/// Contributions of every task in `batch`, sorted by task id.
pub(crate) fn maml_contributions<T: AdaptTask>(state: &MamlState, batch: &[T]) -> Result<Vec<TaskContribution>> {
    state.validate()?;
    collect_contributions(batch, |task| {
        maml_task_gradient(&state.theta_star, task, state.inner_lr, state.inner_steps, state.first_order)
    })
}

/// One outer update on the summed query losses of `batch`.
pub fn maml_meta_step<T: AdaptTask>(state: &MamlState, batch: &[T]) -> Result<(MamlState, StepStats)> {
    let contribs = maml_contributions(state, batch)?;
    let meta_grad = plain_sum(&contribs);
    let mut next = state.clone();
    next.outer.update(next.theta_star.data_mut(), &meta_grad)?;
    let task_losses: Vec<f64> = contribs.iter().map(|c| c.query_loss).collect();
    Ok((next, StepStats { meta_loss: task_losses.iter().sum(), task_losses }))
}
