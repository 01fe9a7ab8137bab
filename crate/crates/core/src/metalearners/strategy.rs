use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::batch::StepStats;
use super::lstm_opt::{learned_adapt, LstmOptState};
use super::maml::{inner_adapt, maml_meta_step, MamlState};
use super::metalstm::{metalstm_meta_step, metalstmpp_meta_step};
use super::metasgd::{metasgd_adapt, metasgd_meta_step, MetaSgdState};
use super::optim::MetaOptimizer;
use super::taml::{taml_meta_step, TamlConfig};
use super::task::AdaptTask;
use crate::diffcore::{grad, DiffNode, Tensor};
use crate::error::{Error, Result};
use crate::learner::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Maml,
    #[serde(rename = "metasgd")]
    MetaSgd,
    Taml,
    #[serde(rename = "metalstm")]
    MetaLstm,
    #[serde(rename = "metalstmpp")]
    MetaLstmPlusPlus,
}

impl Strategy {
    pub const ALL: [Strategy; 5] =
        [Strategy::Maml, Strategy::MetaSgd, Strategy::Taml, Strategy::MetaLstm, Strategy::MetaLstmPlusPlus];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Maml => "maml",
            Strategy::MetaSgd => "metasgd",
            Strategy::Taml => "taml",
            Strategy::MetaLstm => "metalstm",
            Strategy::MetaLstmPlusPlus => "metalstmpp",
        }
    }

    /// Strategies that learn an initialisation only.
    pub fn is_initialization(self) -> bool {
        matches!(self, Strategy::Maml | Strategy::MetaSgd | Strategy::Taml)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

/// How task-specific parameters are produced from a starting point.
#[derive(Debug, Clone, PartialEq)]
pub enum AdaptRule {
    Sgd { lr: f64 },
    Adam { lr: f64 },
    /// One elementwise-scaled step; zero steps leaves the start unchanged.
    MetaSgd { alpha: ParamVector },
    Learned(Box<LstmOptState>),
}

/// Adapted parameters after `steps` updates of `rule` from `init`.
pub fn adapt_with<T: AdaptTask + ?Sized>(init: &ParamVector, rule: &AdaptRule, task: &T, steps: usize) -> Result<Tensor> {
    match rule {
        AdaptRule::Sgd { lr } => {
            let traj = inner_adapt(&DiffNode::constant(init.to_tensor()), task, *lr, steps, false)?;
            Ok(traj.last().expect("non-empty").value().clone())
        }
        AdaptRule::Adam { lr } => {
            let mut params = init.data().to_vec();
            let mut opt = MetaOptimizer::adam(*lr);
            for step in 0..steps {
                let probe = DiffNode::variable(Tensor::vector(params.clone()));
                let loss = task.support_loss(&probe)?;
                if !loss.item().is_finite() {
                    return Err(Error::NonFiniteLoss { step });
                }
                let g = grad(&loss, std::slice::from_ref(&probe), false)?;
                opt.update(&mut params, g.value_or_zero(&probe).data())?;
            }
            Ok(Tensor::vector(params))
        }
        AdaptRule::MetaSgd { alpha } => {
            if steps == 0 {
                return Ok(init.to_tensor());
            }
            let theta = init.to_variable();
            let adapted = metasgd_adapt(&theta, &DiffNode::constant(alpha.to_tensor()), task, false)?;
            Ok(adapted.value().clone())
        }
        AdaptRule::Learned(opt) => {
            let w = opt.constant_weights()?;
            let cell = DiffNode::constant(init.to_tensor());
            let (traj, _) = learned_adapt(&w, &cell, task, steps, opt.preprocess_p, false)?;
            Ok(traj.last().expect("non-empty").value().clone())
        }
    }
}

/// Meta-learned state of any of the five strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", content = "state", rename_all = "lowercase")]
pub enum MetaModel {
    Maml(MamlState),
    #[serde(rename = "metasgd")]
    MetaSgd(MetaSgdState),
    Taml(TamlConfig),
    #[serde(rename = "metalstm")]
    MetaLstm(LstmOptState),
    #[serde(rename = "metalstmpp")]
    MetaLstmPlusPlus(LstmOptState),
}

impl MetaModel {
    pub fn strategy(&self) -> Strategy {
        match self {
            MetaModel::Maml(_) => Strategy::Maml,
            MetaModel::MetaSgd(_) => Strategy::MetaSgd,
            MetaModel::Taml(_) => Strategy::Taml,
            MetaModel::MetaLstm(_) => Strategy::MetaLstm,
            MetaModel::MetaLstmPlusPlus(_) => Strategy::MetaLstmPlusPlus,
        }
    }

    /// Learned starting parameters of the base model.
    pub fn init_params(&self) -> &ParamVector {
        match self {
            MetaModel::Maml(s) => &s.theta_star,
            MetaModel::MetaSgd(s) => &s.theta_star,
            MetaModel::Taml(c) => &c.base.theta_star,
            MetaModel::MetaLstm(o) | MetaModel::MetaLstmPlusPlus(o) => &o.init_cell,
        }
    }

    /// The strategy's own adaptation procedure.
    pub fn adapt_rule(&self) -> AdaptRule {
        match self {
            MetaModel::Maml(s) => AdaptRule::Sgd { lr: s.inner_lr },
            MetaModel::Taml(c) => AdaptRule::Sgd { lr: c.base.inner_lr },
            MetaModel::MetaSgd(s) => AdaptRule::MetaSgd { alpha: s.alpha.clone() },
            MetaModel::MetaLstm(o) | MetaModel::MetaLstmPlusPlus(o) => AdaptRule::Learned(Box::new(o.clone())),
        }
    }

    pub fn adapt<T: AdaptTask + ?Sized>(&self, task: &T, steps: usize) -> Result<Tensor> {
        adapt_with(self.init_params(), &self.adapt_rule(), task, steps)
    }

    /// All trainable meta-parameters, flattened.
    pub fn trainable(&self) -> Vec<f64> {
        match self {
            MetaModel::Maml(s) => s.theta_star.data().to_vec(),
            MetaModel::Taml(c) => c.base.theta_star.data().to_vec(),
            MetaModel::MetaSgd(s) => [s.theta_star.data(), s.alpha.data()].concat(),
            MetaModel::MetaLstm(o) | MetaModel::MetaLstmPlusPlus(o) => [o.phi.data(), o.init_cell.data()].concat(),
        }
    }

    /// One meta-iteration over `batch`.
    ///
    /// MetaLSTM walks the batch sequentially with one update per task; every
    /// other strategy makes a single update from the whole batch.
    pub fn meta_step<T: AdaptTask>(&self, batch: &[T], inner_steps: usize) -> Result<(MetaModel, StepStats)> {
        Ok(match self {
            MetaModel::Maml(s) => {
                let (n, st) = maml_meta_step(s, batch)?;
                (MetaModel::Maml(n), st)
            }
            MetaModel::MetaSgd(s) => {
                let (n, st) = metasgd_meta_step(s, batch)?;
                (MetaModel::MetaSgd(n), st)
            }
            MetaModel::Taml(c) => {
                let (n, st) = taml_meta_step(c, batch)?;
                (MetaModel::Taml(n), st)
            }
            MetaModel::MetaLstmPlusPlus(o) => {
                let (n, st) = metalstmpp_meta_step(o, batch, inner_steps)?;
                (MetaModel::MetaLstmPlusPlus(n), st)
            }
            MetaModel::MetaLstm(o) => {
                if batch.is_empty() {
                    return Err(Error::Invalid("meta-batch must not be empty".into()));
                }
                let mut order: Vec<&T> = batch.iter().collect();
                order.sort_by_key(|t| t.task_id());
                let mut cur = o.clone();
                let mut losses = Vec::with_capacity(batch.len());
                for task in order {
                    let (n, st) = metalstm_meta_step(&cur, task, inner_steps)?;
                    cur = n;
                    losses.extend(st.task_losses);
                }
                let meta_loss = losses.iter().sum::<f64>() / losses.len() as f64;
                (MetaModel::MetaLstm(cur), StepStats { meta_loss, task_losses: losses })
            }
        })
    }
}
