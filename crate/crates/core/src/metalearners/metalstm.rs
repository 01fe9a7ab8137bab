//! Meta-training of the LSTM optimizer: sequentially one task per update
//! (MetaLSTM) or on the mean query loss of a batch (MetaLSTM++).

use super::batch::{collect_contributions, StepStats, TaskContribution};
use super::lstm_opt::{learned_adapt, LstmOptState, LstmWeights};
use super::task::AdaptTask;
use crate::diffcore::grad;
use crate::error::{Error, Result};

/// Query loss after `inner_steps` learned updates, and its gradient with
/// respect to `[φ, init_cell]`.
pub fn lstm_task_gradient<T: AdaptTask + ?Sized>(opt: &LstmOptState, task: &T, inner_steps: usize) -> Result<TaskContribution> {
    if inner_steps == 0 {
        return Err(Error::Invalid("the learned optimizer needs at least one inner step".into()));
    }
    let phi = opt.phi.to_variable();
    let cell0 = opt.init_cell.to_variable();
    let w = LstmWeights::from_flat(&phi, opt.hidden)?;
    let (trajectory, _) = learned_adapt(&w, &cell0, task, inner_steps, opt.preprocess_p, opt.second_order)?;
    let loss = task.query_loss(trajectory.last().expect("non-empty"))?;
    if !loss.item().is_finite() {
        return Err(Error::NonFiniteLoss { step: inner_steps });
    }
    let g = grad(&loss, &[phi.clone(), cell0.clone()], false)?;
    let mut flat = g.value_or_zero(&phi).into_data();
    flat.extend(g.value_or_zero(&cell0).into_data());
    Ok(TaskContribution { task_id: task.task_id(), query_loss: loss.item(), grad: flat })
}

fn apply_update(opt: &LstmOptState, meta_grad: &[f64]) -> Result<LstmOptState> {
    let mut joint: Vec<f64> = opt.phi.data().to_vec();
    joint.extend_from_slice(opt.init_cell.data());
    let mut next = opt.clone();
    next.outer.update(&mut joint, meta_grad)?;
    let split = opt.phi.len();
    next.phi.data_mut().copy_from_slice(&joint[..split]);
    next.init_cell.data_mut().copy_from_slice(&joint[split..]);
    Ok(next)
}

/// Sequential variant: φ is updated from a single task's query loss.
pub fn metalstm_meta_step<T: AdaptTask + ?Sized>(opt: &LstmOptState, task: &T, inner_steps: usize) -> Result<(LstmOptState, StepStats)> {
    let c = lstm_task_gradient(opt, task, inner_steps)?;
    let next = apply_update(opt, &c.grad)?;
    Ok((next, StepStats { meta_loss: c.query_loss, task_losses: vec![c.query_loss] }))
}

fn mean_gradient(contribs: &[TaskContribution]) -> Vec<f64> {
    let scale = 1.0 / contribs.len() as f64;
    let mut acc = contribs[0].grad.clone();
    for c in &contribs[1..] {
        for (a, g) in acc.iter_mut().zip(&c.grad) {
            *a += g;
        }
    }
    acc.into_iter().map(|a| a * scale).collect()
}

/// Mean-loss meta-gradient over `batch` without applying it.
pub fn metalstmpp_meta_gradient<T: AdaptTask>(opt: &LstmOptState, batch: &[T], inner_steps: usize) -> Result<Vec<f64>> {
    let contribs = collect_contributions(batch, |task| lstm_task_gradient(opt, task, inner_steps))?;
    Ok(mean_gradient(&contribs))
}

/// Batched variant: one φ update on the mean query loss of `batch`, every task
/// adapted independently from the same φ.
pub fn metalstmpp_meta_step<T: AdaptTask>(opt: &LstmOptState, batch: &[T], inner_steps: usize) -> Result<(LstmOptState, StepStats)> {
    let contribs = collect_contributions(batch, |task| lstm_task_gradient(opt, task, inner_steps))?;
    let next = apply_update(opt, &mean_gradient(&contribs))?;
    let task_losses: Vec<f64> = contribs.iter().map(|c| c.query_loss).collect();
    let meta_loss = task_losses.iter().sum::<f64>() / task_losses.len() as f64;
    Ok((next, StepStats { meta_loss, task_losses }))
}
