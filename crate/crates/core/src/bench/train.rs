use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::learner::{init_params, MlpSpec};
use crate::metalearners::{
    evaluate, Checkpoint, EpisodeTask, EvalProtocol, EvalResult, LstmOptState, MamlState, MetaModel, MetaOptimizer,
    MetaSgdState, RngState, Strategy, TamlConfig,
};
use crate::tasks::{
    derive_seed, load_image_pool, make_synthetic_pool, sample_episode, split_classes, ClassPool, Episode, MetaSplit,
    SplitPart, SplitSpec,
};

// Independent seed streams derived from the run seed.
const STREAM_INIT: u64 = 1;
const STREAM_LSTM: u64 = 2;
const STREAM_TRAIN: u64 = 3;
const STREAM_VAL: u64 = 4;
const STREAM_TEST: u64 = 5;

/// A loaded dataset with its class split.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub pool: ClassPool,
    pub split: MetaSplit,
}

impl Workspace {
    pub fn load(config: &RunConfig) -> Result<Self> {
        let pool = if config.is_synthetic() {
            make_synthetic_pool(&config.synthetic, config.pool_seed)?
        } else {
            load_image_pool(&config.data)?
        };
        let spec = config.split.clone().unwrap_or_else(|| SplitSpec::default_for(pool.len()));
        let split = split_classes(pool.len(), &spec, config.pool_seed)?;
        Ok(Workspace { pool, split })
    }

    pub fn learner_spec(&self, config: &RunConfig) -> MlpSpec {
        config.learner_spec(self.pool.dim())
    }

    /// Evaluation protocol on `part` using the config's episode shape.
    pub fn protocol<'a>(
        &'a self,
        spec: &'a MlpSpec,
        config: &RunConfig,
        part: SplitPart,
        num_tasks: usize,
        seed: u64,
    ) -> EvalProtocol<'a> {
        EvalProtocol {
            spec,
            pool: &self.pool,
            split: &self.split,
            part,
            num_tasks,
            n: config.ways,
            k: config.shots,
            q: config.query,
            seed,
        }
    }

    /// The meta-test protocol used for final numbers under `config`.
    pub fn test_protocol<'a>(&'a self, spec: &'a MlpSpec, config: &RunConfig) -> EvalProtocol<'a> {
        self.protocol(spec, config, SplitPart::Test, config.eval_tasks, derive_seed(config.seed, STREAM_TEST))
    }
}

/// Fresh, untrained model for `config`.
pub fn init_model(config: &RunConfig, spec: &MlpSpec) -> MetaModel {
    let theta = init_params(spec, derive_seed(config.seed, STREAM_INIT));
    let outer = MetaOptimizer::new(config.meta_optimizer, config.outer_lr);
    let maml = || {
        let mut s = MamlState::new(theta.clone(), config.inner_lr, config.inner_steps, outer.clone());
        s.first_order = config.first_order;
        s
    };
    match config.strategy {
        Strategy::Maml => MetaModel::Maml(maml()),
        Strategy::Taml => MetaModel::Taml(TamlConfig { lambda: config.lambda(), base: maml() }),
        Strategy::MetaSgd => MetaModel::MetaSgd(MetaSgdState::new(theta, config.inner_lr, outer)),
        Strategy::MetaLstm | Strategy::MetaLstmPlusPlus => {
            let o = LstmOptState::new(config.lstm_hidden, theta, derive_seed(config.seed, STREAM_LSTM), outer);
            if config.strategy == Strategy::MetaLstm {
                MetaModel::MetaLstm(o)
            } else {
                MetaModel::MetaLstmPlusPlus(o)
            }
        }
    }
}

/// `<strategy>_<N>w<K>s.ckpt`
pub fn checkpoint_name(config: &RunConfig) -> String {
    format!("{}_{}w{}s.ckpt", config.strategy, config.ways, config.shots)
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. } | Error::NonFiniteLoss { .. } | Error::Domain { .. })
}

/// Meta-training episodes for iteration `iter`.
pub fn training_batch(ws: &Workspace, config: &RunConfig, iter: usize) -> Result<Vec<Episode>> {
    let stream = derive_seed(config.seed, STREAM_TRAIN);
    (0..config.meta_batch_size)
        .map(|b| {
            let seed = derive_seed(stream, (iter * config.meta_batch_size + b) as u64);
            sample_episode(&ws.pool, &ws.split, SplitPart::Train, config.ways, config.shots, config.query, seed)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    EarlyStopped { iteration: usize },
    Failed { iteration: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub val_accuracy: f64,
}

/// Outcome of one training run; contains no timing so it serializes
/// identically across repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub config_hash: String,
    pub status: RunStatus,
    pub curve: Vec<CurvePoint>,
    /// Iteration of the restored model; 0 when no evaluation improved on it.
    pub best_iteration: usize,
    pub best_val_accuracy: Option<f64>,
    pub iterations_run: usize,
    /// Meta-test result of the restored model.
    pub test: EvalResult,
    /// Checkpoint file name inside the checkpoint directory.
    pub checkpoint: Option<String>,
}

impl RunRecord {
    pub fn failed(&self) -> bool {
        matches!(self.status, RunStatus::Failed { .. })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub record: RunRecord,
    pub model: MetaModel,
    pub wall_seconds: f64,
}

/// Meta-trains under `config`, validating every `eval_interval` iterations
/// and stopping once no improvement has been seen for `patience` iterations.
/// The best validated model is restored, evaluated on meta-test and, when
/// `checkpoint_dir` is given, saved there.
///
/// A non-finite loss or gradient ends the run with [`RunStatus::Failed`];
/// only configuration and I/O problems are returned as errors.
pub fn train(config: &RunConfig, ws: &Workspace, checkpoint_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let started = Instant::now();
    let spec = ws.learner_spec(config);
    let mut model = init_model(config, &spec);
    let mut best = model.clone();
    let mut best_iteration = 0;
    let mut best_val: Option<f64> = None;
    let mut curve = Vec::new();
    let mut status = RunStatus::Completed;
    let val_seed = derive_seed(config.seed, STREAM_VAL);
    let mut iterations_run = 0;

    for iter in 0..config.max_iters {
        let episodes = training_batch(ws, config, iter)?;
        let tasks: Vec<EpisodeTask<'_>> = episodes.iter().map(|e| EpisodeTask::new(&spec, e)).collect();
        match model.meta_step(&tasks, config.inner_steps) {
            Ok((next, stats)) if stats.meta_loss.is_finite() && next.trainable().iter().all(|v| v.is_finite()) => {
                model = next;
            }
            Ok((_, stats)) => {
                status = RunStatus::Failed {
                    iteration: iter,
                    reason: format!("non-finite meta-loss or parameters (loss {})", stats.meta_loss),
                };
                break;
            }
            Err(e) if is_divergence(&e) => {
                status = RunStatus::Failed { iteration: iter, reason: e.to_string() };
                break;
            }
            Err(e) => return Err(e),
        }
        iterations_run = iter + 1;
        if iterations_run % config.eval_interval == 0 {
            let protocol = ws.protocol(&spec, config, SplitPart::Val, config.val_tasks, val_seed);
            let acc = match evaluate(&model, &protocol, config.adapt_steps()) {
                Ok(r) => r.mean,
                Err(e) if is_divergence(&e) => {
                    status = RunStatus::Failed { iteration: iter, reason: e.to_string() };
                    break;
                }
                Err(e) => return Err(e),
            };
            curve.push(CurvePoint { iteration: iterations_run, val_accuracy: acc });
            if best_val.is_none_or(|b| acc > b) {
                best_val = Some(acc);
                best_iteration = iterations_run;
                best = model.clone();
            } else if iterations_run - best_iteration >= config.patience {
                status = RunStatus::EarlyStopped { iteration: iterations_run };
                break;
            }
        }
    }
    if best_val.is_none() && !matches!(status, RunStatus::Failed { .. }) {
        // No validation point was reached: keep the last model.
        best = model;
        best_iteration = iterations_run;
    }

    let test = match evaluate(&best, &ws.test_protocol(&spec, config), config.adapt_steps()) {
        Ok(r) => r,
        Err(e) if is_divergence(&e) => {
            if !matches!(status, RunStatus::Failed { .. }) {
                status = RunStatus::Failed { iteration: iterations_run, reason: e.to_string() };
            }
            EvalResult::from_accuracies(Vec::new())
        }
        Err(e) => return Err(e),
    };

    let config_hash = config.hash();
    let checkpoint = match checkpoint_dir {
        Some(dir) => {
            let name = checkpoint_name(config);
            let rng = RngState { seed: config.seed, iteration: best_iteration as u64 };
            Checkpoint::new(best.clone(), config_hash.clone(), rng).save(&dir.join(&name))?;
            Some(name)
        }
        None => None,
    };

    let record = RunRecord {
        config: config.clone(),
        config_hash,
        status,
        curve,
        best_iteration,
        best_val_accuracy: best_val,
        iterations_run,
        test,
        checkpoint,
    };
    Ok(TrainOutcome { record, model: best, wall_seconds: started.elapsed().as_secs_f64() })
}
