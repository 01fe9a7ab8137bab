use crate::diffcore::{DiffNode, Tensor};
use crate::error::Result;
use crate::learner::{accuracy, forward, xent_loss, MlpSpec};
use crate::tasks::Episode;

/// A task a meta-learner can adapt to: a support loss to descend and a query
/// loss to score the adapted parameters.
///
/// Parameters are always a flat rank-1 node.
pub trait AdaptTask: Sync {
    fn support_loss(&self, params: &DiffNode) -> Result<DiffNode>;
    fn query_loss(&self, params: &DiffNode) -> Result<DiffNode>;
    /// Query accuracy, when the task is a classification problem.
    fn query_accuracy(&self, _params: &Tensor) -> Result<Option<f64>> {
        Ok(None)
    }
    /// Identifier that fixes the reduction order inside a meta-batch.
    fn task_id(&self) -> u64;
}

/// An episode scored by the feed-forward base learner.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeTask<'a> {
    pub spec: &'a MlpSpec,
    pub episode: &'a Episode,
}

impl<'a> EpisodeTask<'a> {
    pub fn new(spec: &'a MlpSpec, episode: &'a Episode) -> Self {
        EpisodeTask { spec, episode }
    }

    pub fn batch(spec: &'a MlpSpec, episodes: &'a [Episode]) -> Vec<EpisodeTask<'a>> {
        episodes.iter().map(|e| EpisodeTask::new(spec, e)).collect()
    }
}

impl AdaptTask for EpisodeTask<'_> {
    fn support_loss(&self, params: &DiffNode) -> Result<DiffNode> {
        let x = DiffNode::constant(self.episode.support_x.clone());
        xent_loss(&forward(self.spec, params, &x)?, &self.episode.support_y)
    }

    fn query_loss(&self, params: &DiffNode) -> Result<DiffNode> {
        let x = DiffNode::constant(self.episode.query_x.clone());
        xent_loss(&forward(self.spec, params, &x)?, &self.episode.query_y)
    }

    fn query_accuracy(&self, params: &Tensor) -> Result<Option<f64>> {
        let x = DiffNode::constant(self.episode.query_x.clone());
        let logits = forward(self.spec, &DiffNode::constant(params.clone()), &x)?;
        accuracy(logits.value(), &self.episode.query_y).map(Some)
    }

    fn task_id(&self) -> u64 {
        self.episode.task_id
    }
}

/// Separable quadratic task: support loss `sum (θ - a)^2`, query loss
/// `sum (θ - b)^2`. Useful wherever a closed form is wanted.
#[derive(Debug, Clone)]
pub struct QuadraticTask {
    pub support_target: Vec<f64>,
    pub query_target: Vec<f64>,
    pub id: u64,
}

impl QuadraticTask {
    fn loss(params: &DiffNode, target: &[f64]) -> Result<DiffNode> {
        let d = params.sub(&DiffNode::constant(Tensor::vector(target.to_vec())))?;
        d.mul(&d)?.sum()
    }
}

impl AdaptTask for QuadraticTask {
    fn support_loss(&self, params: &DiffNode) -> Result<DiffNode> {
        QuadraticTask::loss(params, &self.support_target)
    }

    fn query_loss(&self, params: &DiffNode) -> Result<DiffNode> {
        QuadraticTask::loss(params, &self.query_target)
    }

    fn task_id(&self) -> u64 {
        self.id
    }
}
