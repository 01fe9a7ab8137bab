use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::report::ResultTable;
use super::train::{train, RunRecord, TrainOutcome, Workspace};
use crate::error::{Error, Result};
use crate::metalearners::{evaluate_with, AdaptRule, MetaModel, Strategy};
use crate::tasks::derive_seed;

/// Random-search ranges. Learning rates and λ are sampled log-uniformly,
/// adaptation steps log-uniformly over integers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub num_configs: usize,
    pub steps: (usize, usize),
    pub meta_lr: (f64, f64),
    pub base_lr: (f64, f64),
    pub lambda: (f64, f64),
    pub batch_sizes: Vec<usize>,
    /// Iteration budget per sampled configuration.
    pub budget_iters: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            num_configs: 30,
            steps: (4, 64),
            meta_lr: (1e-4, 1.0),
            base_lr: (1e-4, 1e-2),
            lambda: (1e-2, 1.0),
            batch_sizes: vec![4, 8, 16, 32],
            budget_iters: 5000,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let ok_range = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi.is_finite();
        if self.num_configs == 0 {
            return Err(Error::Config("grid search needs at least one configuration".into()));
        }
        if self.steps.0 == 0 || self.steps.0 > self.steps.1 {
            return Err(Error::Config(format!("bad step range {:?}", self.steps)));
        }
        for (name, r) in [("meta_lr", self.meta_lr), ("base_lr", self.base_lr), ("lambda", self.lambda)] {
            if !ok_range(r) {
                return Err(Error::Config(format!("bad {name} range {r:?}")));
            }
        }
        if self.batch_sizes.is_empty() || self.batch_sizes.contains(&0) {
            return Err(Error::Config("batch sizes must be non-empty and positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCandidate {
    pub inner_steps: usize,
    pub outer_lr: f64,
    pub inner_lr: f64,
    pub lambda: Option<f64>,
    pub meta_batch_size: usize,
}

impl GridCandidate {
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        RunConfig {
            inner_steps: self.inner_steps,
            outer_lr: self.outer_lr,
            inner_lr: self.inner_lr,
            lambda: self.lambda,
            meta_batch_size: self.meta_batch_size,
            ..base.clone()
        }
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.random_range(lo.ln()..=hi.ln()).exp().clamp(lo, hi)
}

/// Candidate `i` is drawn from its own stream `derive_seed(seed, i)`.
pub fn sample_candidates(spec: &GridSpec, strategy: Strategy, seed: u64) -> Vec<GridCandidate> {
    (0..spec.num_configs as u64)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i));
            let (s_lo, s_hi) = spec.steps;
            let steps = log_uniform(&mut rng, (s_lo as f64, s_hi as f64)).round() as usize;
            GridCandidate {
                inner_steps: steps.clamp(s_lo, s_hi),
                outer_lr: log_uniform(&mut rng, spec.meta_lr),
                inner_lr: log_uniform(&mut rng, spec.base_lr),
                lambda: (strategy == Strategy::Taml).then(|| log_uniform(&mut rng, spec.lambda)),
                meta_batch_size: spec.batch_sizes[rng.random_range(0..spec.batch_sizes.len())],
            }
        })
        .collect()
}

/// Index of the non-failed run with the highest validation accuracy;
/// ties go to the lowest index.
pub fn select_best(records: &[RunRecord]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in records.iter().enumerate() {
        if r.failed() {
            continue;
        }
        let Some(acc) = r.best_val_accuracy else { continue };
        if best.is_none_or(|(_, b)| acc > b) {
            best = Some((i, acc));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub candidates: Vec<GridCandidate>,
    pub runs: Vec<RunRecord>,
    pub best_index: usize,
    pub best_config: RunConfig,
}

/// Random search around `base`; each candidate trains for
/// `spec.budget_iters` iterations and is scored on meta-validation.
pub fn grid_search(base: &RunConfig, ws: &Workspace, spec: &GridSpec, seed: u64) -> Result<GridResult> {
    spec.validate()?;
    base.validate()?;
    let candidates = sample_candidates(spec, base.strategy, seed);
    let runs: Vec<RunRecord> = candidates
        .par_iter()
        .map(|c| {
            let cfg = RunConfig { max_iters: spec.budget_iters, ..c.apply(base) };
            train(&cfg, ws, None).map(|o| o.record)
        })
        .collect::<Result<_>>()?;
    let best_index =
        select_best(&runs).ok_or_else(|| Error::RunFailed("every grid-search configuration diverged".into()))?;
    let best_config = RunConfig { max_iters: base.max_iters, ..candidates[best_index].apply(base) };
    Ok(GridResult { candidates, runs, best_index, best_config })
}

/// Trains every strategy at every way count and reports meta-test accuracy
/// with 99.9% intervals.
pub fn stress_test(
    base: &RunConfig,
    ws: &Workspace,
    strategies: &[Strategy],
    ways: &[usize],
) -> Result<(ResultTable, Vec<RunRecord>)> {
    let mut table = ResultTable::new("stress_test", "ways", 0.999);
    let mut runs = Vec::new();
    for &n in ways {
        for &s in strategies {
            let cfg = RunConfig { ways: n, ..base.for_strategy(s) };
            let out = train(&cfg, ws, None)?;
            if out.record.failed() {
                table.push_failed(s.as_str(), cfg.setting_label(), n as f64);
            } else {
                table.push(s.as_str(), cfg.setting_label(), n as f64, out.record.test.mean, out.record.test.ci999);
            }
            runs.push(out.record);
        }
    }
    Ok((table, runs))
}

/// Trains at each shot count in `shots` and evaluates every trained model at
/// every shot count, so matched and mismatched settings share test episodes.
pub fn transfer_experiment(
    base: &RunConfig,
    ws: &Workspace,
    strategies: &[Strategy],
    shots: &[usize],
) -> Result<(ResultTable, Vec<RunRecord>)> {
    let mut table = ResultTable::new("transfer", "test shots", 0.95);
    let mut runs = Vec::new();
    for &s in strategies {
        for &train_k in shots {
            let cfg = RunConfig { shots: train_k, ..base.for_strategy(s) };
            let out = train(&cfg, ws, None)?;
            for &test_k in shots {
                let strategy_label = format!("{s} (train K={train_k})");
                if out.record.failed() {
                    table.push_failed(strategy_label, transfer_label(train_k, test_k), test_k as f64);
                } else {
                    let test_cfg = RunConfig { shots: test_k, ..cfg.clone() };
                    let r = evaluate_under(&out, ws, &test_cfg)?;
                    table.push(strategy_label, transfer_label(train_k, test_k), test_k as f64, r.mean, r.ci95);
                }
            }
            runs.push(out.record);
        }
    }
    Ok((table, runs))
}

pub fn transfer_label(train_k: usize, test_k: usize) -> String {
    format!("train K={train_k} test K={test_k}")
}

fn evaluate_under(out: &TrainOutcome, ws: &Workspace, cfg: &RunConfig) -> Result<crate::metalearners::EvalResult> {
    let spec = ws.learner_spec(cfg);
    let model = &out.model;
    evaluate_with(model.init_params(), &model.adapt_rule(), &ws.test_protocol(&spec, cfg), cfg.adapt_steps())
}

/// Meta-test accuracy of trained models as a function of adaptation steps.
/// MetaSGD is only defined for one step and gets a single row at 1.
pub fn adaptation_sweep(models: &[MetaModel], ws: &Workspace, config: &RunConfig, steps: &[usize]) -> Result<ResultTable> {
    let spec = ws.learner_spec(config);
    let protocol = ws.test_protocol(&spec, config);
    let mut table = ResultTable::new("adaptation_sweep", "adaptation steps", 0.95);
    for m in models {
        let list: Vec<usize> = if m.strategy() == Strategy::MetaSgd { vec![1] } else { steps.to_vec() };
        for s in list {
            let r = evaluate_with(m.init_params(), &m.adapt_rule(), &protocol, s)?;
            table.push(m.strategy().as_str(), format!("steps={s}"), s as f64, r.mean, r.ci95);
        }
    }
    Ok(table)
}

/// Crosses learned initialisations with update rules: Adam at `adam_lr`
/// and each learned LSTM optimizer among `models`.
pub fn init_ablation(
    models: &[MetaModel],
    ws: &Workspace,
    config: &RunConfig,
    steps: usize,
    adam_lr: f64,
) -> Result<ResultTable> {
    let spec = ws.learner_spec(config);
    let protocol = ws.test_protocol(&spec, config);
    let mut rules = vec![("adam".to_string(), AdaptRule::Adam { lr: adam_lr })];
    for m in models {
        if !m.strategy().is_initialization() {
            rules.push((format!("{}-optimizer", m.strategy()), m.adapt_rule()));
        }
    }
    let mut table = ResultTable::new("init_ablation", "update rule", 0.95);
    for m in models.iter().filter(|m| matches!(m.strategy(), Strategy::Maml) || !m.strategy().is_initialization()) {
        for (x, (name, rule)) in rules.iter().enumerate() {
            let r = evaluate_with(m.init_params(), rule, &protocol, steps)?;
            table.push(format!("{}-init", m.strategy()), name.clone(), x as f64, r.mean, r.ci95);
        }
    }
    Ok(table)
}
