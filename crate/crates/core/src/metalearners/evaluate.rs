use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::strategy::{adapt_with, AdaptRule, MetaModel};
use super::task::{AdaptTask, EpisodeTask};
use crate::error::{Error, Result};
use crate::learner::{MlpSpec, ParamVector};
use crate::tasks::{derive_seed, sample_episode, ClassPool, MetaSplit, SplitPart};

pub const Z_95: f64 = 1.96;
pub const Z_999: f64 = 3.2905;

/// `z · s / √n` with `s` the sample (n − 1) standard deviation; zero for n < 2.
pub fn ci_half_width(values: &[f64], z: f64) -> f64 {
    let n = values.len();
    if n < 2 || values.iter().all(|&v| v == values[0]) {
        return 0.0;
    }
    let mut sum = 0.0;
    for &v in values {
        sum += v;
    }
    let mean = sum / n as f64;
    let mut ss = 0.0;
    for &v in values {
        ss += (v - mean) * (v - mean);
    }
    z * (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean: f64,
    pub ci95: f64,
    pub ci999: f64,
    pub accuracies: Vec<f64>,
}

impl EvalResult {
    pub fn from_accuracies(accuracies: Vec<f64>) -> Self {
        let mut sum = 0.0;
        for &a in &accuracies {
            sum += a;
        }
        let mean = if accuracies.is_empty() { 0.0 } else { sum / accuracies.len() as f64 };
        EvalResult { mean, ci95: ci_half_width(&accuracies, Z_95), ci999: ci_half_width(&accuracies, Z_999), accuracies }
    }
}

/// Where evaluation episodes come from.
#[derive(Debug, Clone, Copy)]
pub struct EvalProtocol<'a> {
    pub spec: &'a MlpSpec,
    pub pool: &'a ClassPool,
    pub split: &'a MetaSplit,
    pub part: SplitPart,
    pub num_tasks: usize,
    pub n: usize,
    pub k: usize,
    pub q: usize,
    pub seed: u64,
}

/// Query accuracy over `num_tasks` episodes after adapting with `rule` from
/// `init`. Episode `i` is drawn with seed `derive_seed(seed, i)`.
pub fn evaluate_with(init: &ParamVector, rule: &AdaptRule, protocol: &EvalProtocol<'_>, adapt_steps: usize) -> Result<EvalResult> {
    if protocol.num_tasks == 0 {
        return Err(Error::Invalid("evaluation needs at least one task".into()));
    }
    if protocol.spec.num_classes != protocol.n {
        return Err(Error::Config(format!(
            "learner has {} outputs but episodes are {}-way",
            protocol.spec.num_classes, protocol.n
        )));
    }
    let accuracies: Vec<f64> = (0..protocol.num_tasks as u64)
        .into_par_iter()
        .map(|i| {
            let ep = sample_episode(
                protocol.pool,
                protocol.split,
                protocol.part,
                protocol.n,
                protocol.k,
                protocol.q,
                derive_seed(protocol.seed, i),
            )?;
            let task = EpisodeTask::new(protocol.spec, &ep);
            let adapted = adapt_with(init, rule, &task, adapt_steps)?;
            Ok(task.query_accuracy(&adapted)?.expect("episode tasks report accuracy"))
        })
        .collect::<Result<_>>()?;
    Ok(EvalResult::from_accuracies(accuracies))
}

/// [`evaluate_with`] using the model's own initialisation and update rule.
pub fn evaluate(model: &MetaModel, protocol: &EvalProtocol<'_>, adapt_steps: usize) -> Result<EvalResult> {
    evaluate_with(model.init_params(), &model.adapt_rule(), protocol, adapt_steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_values_have_zero_width() {
        assert_eq!(ci_half_width(&[0.7; 50], Z_95), 0.0);
        assert_eq!(ci_half_width(&[0.3], Z_95), 0.0);
    }

    #[test]
    fn balanced_binary_outcomes() {
        let v: Vec<f64> = (0..300).map(|i| (i % 2) as f64).collect();
        let r = EvalResult::from_accuracies(v);
        assert_eq!(r.mean, 0.5);
        let s = (0.25f64 * 300.0 / 299.0).sqrt();
        assert!((r.ci95 - 1.96 * s / 300f64.sqrt()).abs() < 1e-12);
        assert!((r.ci95 - 0.0566).abs() < 1e-3);
        assert!(r.ci999 > r.ci95);
    }
}
