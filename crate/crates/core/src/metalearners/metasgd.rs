//! MetaSGD: θ* together with a learning rate per parameter, adapted by a
//! single elementwise-scaled gradient step.

use serde::{Deserialize, Serialize};

use super::batch::{collect_contributions, plain_sum, StepStats, TaskContribution};
use super::optim::MetaOptimizer;
use super::task::AdaptTask;
use crate::diffcore::{grad, DiffNode};
use crate::error::{Error, Result};
use crate::learner::ParamVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaSgdState {
    pub theta_star: ParamVector,
    pub alpha: ParamVector,
    /// Updates the concatenation `[θ*, α]`; its learning rate is β.
    pub outer: MetaOptimizer,
}

impl MetaSgdState {
    /// `alpha` starts at `init_lr` for every coordinate.
    pub fn new(theta_star: ParamVector, init_lr: f64, outer: MetaOptimizer) -> Self {
        let alpha = theta_star.with_data(vec![init_lr; theta_star.len()]);
        MetaSgdState { theta_star, alpha, outer }
    }

    pub fn outer_lr(&self) -> f64 {
        self.outer.lr
    }
}

/// `θ* - α ⊙ ∇L^tr(θ*)`: the only adaptation MetaSGD performs.
pub fn metasgd_adapt<T: AdaptTask + ?Sized>(
    theta: &DiffNode,
    alpha: &DiffNode,
    task: &T,
    create_graph: bool,
) -> Result<DiffNode> {
    let loss = task.support_loss(theta)?;
    if !loss.item().is_finite() {
        return Err(Error::NonFiniteLoss { step: 0 });
    }
    let g = grad(&loss, std::slice::from_ref(theta), create_graph)?.get(theta).expect("wrt entry").clone();
    theta.sub(&alpha.mul(&g)?)
}

/// Query loss and its gradient with respect to `[θ*, α]`.
pub fn metasgd_task_gradient<T: AdaptTask + ?Sized>(state: &MetaSgdState, task: &T) -> Result<TaskContribution> {
    if state.alpha.layout() != state.theta_star.layout() {
        return Err(Error::Invalid("MetaSGD α must share θ*'s layout".into()));
    }
    let theta = state.theta_star.to_variable();
    let alpha = state.alpha.to_variable();
    let adapted = metasgd_adapt(&theta, &alpha, task, true)?;
    let loss = task.query_loss(&adapted)?;
    if !loss.item().is_finite() {
        return Err(Error::NonFiniteLoss { step: 1 });
    }
    let g = grad(&loss, &[theta.clone(), alpha.clone()], false)?;
    let mut flat = g.value_or_zero(&theta).into_data();
    flat.extend(g.value_or_zero(&alpha).into_data());
    Ok(TaskContribution { task_id: task.task_id(), query_loss: loss.item(), grad: flat })
}

/// One outer update of θ* and α on the summed query losses.
pub fn metasgd_meta_step<T: AdaptTask>(state: &MetaSgdState, batch: &[T]) -> Result<(MetaSgdState, StepStats)> {
    let contribs = collect_contributions(batch, |task| metasgd_task_gradient(state, task))?;
    let meta_grad = plain_sum(&contribs);
    let mut joint: Vec<f64> = state.theta_star.data().to_vec();
    joint.extend_from_slice(state.alpha.data());
    let mut next = state.clone();
    next.outer.update(&mut joint, &meta_grad)?;
    let p = state.theta_star.len();
    next.theta_star.data_mut().copy_from_slice(&joint[..p]);
    next.alpha.data_mut().copy_from_slice(&joint[p..]);
    let task_losses: Vec<f64> = contribs.iter().map(|c| c.query_loss).collect();
    Ok((next, StepStats { meta_loss: task_losses.iter().sum(), task_losses }))
}
