use rayon::prelude::*;

use super::task::AdaptTask;
use crate::error::{Error, Result};

/// One task's share of a meta-gradient.
#[derive(Debug, Clone)]
pub struct TaskContribution {
    pub task_id: u64,
    pub query_loss: f64,
    pub grad: Vec<f64>,
}

/// Summary of one meta-update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepStats {
    /// The objective that was differentiated.
    pub meta_loss: f64,
    /// Query loss of every task, in reduction order.
    pub task_losses: Vec<f64>,
}

/// Runs `f` for every task (possibly in parallel) and returns the results
/// sorted by task id, so later reductions do not depend on scheduling or on
/// the order of `batch`.
pub(crate) fn collect_contributions<T, F>(batch: &[T], f: F) -> Result<Vec<TaskContribution>>
where
    T: AdaptTask,
    F: Fn(&T) -> Result<TaskContribution> + Sync + Send,
{
    if batch.is_empty() {
        return Err(Error::Invalid("meta-batch must not be empty".into()));
    }
    let mut out: Vec<TaskContribution> = batch.par_iter().map(&f).collect::<Result<_>>()?;
    out.sort_by_key(|c| c.task_id);
    Ok(out)
}

/// `sum_i weights[i] * grad_i`, accumulated left to right.
pub(crate) fn weighted_sum(contribs: &[TaskContribution], weights: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; contribs[0].grad.len()];
    for (c, &w) in contribs.iter().zip(weights) {
        for (a, g) in acc.iter_mut().zip(&c.grad) {
            *a += w * g;
        }
    }
    acc
}

pub(crate) fn plain_sum(contribs: &[TaskContribution]) -> Vec<f64> {
    weighted_sum(contribs, &vec![1.0; contribs.len()])
}
