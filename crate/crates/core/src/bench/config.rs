use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::learner::{Activation, MlpSpec};
use crate::metalearners::{OptimizerKind, Strategy, DEFAULT_HIDDEN};
use crate::tasks::{SplitSpec, SyntheticPoolSpec};

/// Default λ for TAML when a config does not set one.
pub const DEFAULT_LAMBDA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub strategy: Strategy,
    /// `"synthetic"` or the root of an image-class directory tree.
    pub data: String,
    pub synthetic: SyntheticPoolSpec,
    /// Seeds the synthetic pool and the class split, so runs with different
    /// `seed`s share one dataset.
    pub pool_seed: u64,
    pub split: Option<SplitSpec>,
    pub ways: usize,
    pub shots: usize,
    pub query: usize,
    pub meta_batch_size: usize,
    pub inner_steps: usize,
    pub inner_lr: f64,
    pub outer_lr: f64,
    /// TAML inequality weight; only valid for `taml`.
    pub lambda: Option<f64>,
    pub max_iters: usize,
    pub patience: usize,
    pub eval_interval: usize,
    /// Meta-validation tasks per evaluation during training.
    pub val_tasks: usize,
    /// Meta-test tasks for the final evaluation.
    pub eval_tasks: usize,
    /// Adaptation steps at meta-test time; defaults to `inner_steps`.
    pub test_steps: Option<usize>,
    pub seed: u64,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub lstm_hidden: usize,
    pub first_order: bool,
    pub meta_optimizer: OptimizerKind,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            strategy: Strategy::Maml,
            data: "synthetic".into(),
            synthetic: SyntheticPoolSpec::default(),
            pool_seed: 2021,
            split: None,
            ways: 5,
            shots: 1,
            query: 15,
            meta_batch_size: 4,
            inner_steps: 5,
            inner_lr: 0.03,
            outer_lr: 3e-3,
            lambda: None,
            max_iters: 2000,
            patience: 2500,
            eval_interval: 100,
            val_tasks: 100,
            eval_tasks: 300,
            test_steps: None,
            seed: 0,
            hidden_dims: vec![32],
            activation: Activation::Relu,
            lstm_hidden: DEFAULT_HIDDEN,
            first_order: false,
            meta_optimizer: OptimizerKind::Adam,
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Copy retargeted at `strategy`, with λ set or cleared accordingly.
    pub fn for_strategy(&self, strategy: Strategy) -> Self {
        let mut c = self.clone();
        c.strategy = strategy;
        c.lambda = match strategy {
            Strategy::Taml => Some(self.lambda.unwrap_or(DEFAULT_LAMBDA)),
            _ => None,
        };
        c
    }

    pub fn is_synthetic(&self) -> bool {
        self.data == "synthetic"
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or(DEFAULT_LAMBDA)
    }

    /// Adaptation steps used when evaluating.
    pub fn adapt_steps(&self) -> usize {
        let steps = self.test_steps.unwrap_or(self.inner_steps);
        if self.strategy == Strategy::MetaSgd {
            steps.min(1)
        } else {
            steps
        }
    }

    pub fn learner_spec(&self, input_dim: usize) -> MlpSpec {
        MlpSpec::new(input_dim, self.hidden_dims.clone(), self.ways, self.activation)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ways", self.ways),
            ("shots", self.shots),
            ("query", self.query),
            ("meta_batch_size", self.meta_batch_size),
            ("inner_steps", self.inner_steps),
            ("eval_interval", self.eval_interval),
            ("val_tasks", self.val_tasks),
            ("eval_tasks", self.eval_tasks),
            ("lstm_hidden", self.lstm_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.ways < 2 {
            return Err(Error::Config("ways must be at least 2".into()));
        }
        if !(self.inner_lr > 0.0 && self.inner_lr.is_finite()) {
            return Err(Error::Config(format!("inner_lr must be positive, got {}", self.inner_lr)));
        }
        if !(self.outer_lr >= 0.0 && self.outer_lr.is_finite()) {
            return Err(Error::Config(format!("outer_lr must be non-negative, got {}", self.outer_lr)));
        }
        match (self.strategy, self.lambda) {
            (Strategy::Taml, Some(l)) if !(l >= 0.0 && l.is_finite()) => {
                return Err(Error::Config(format!("lambda must be non-negative, got {l}")));
            }
            (s, Some(_)) if s != Strategy::Taml => {
                return Err(Error::Config(format!("lambda is only valid for taml, not {s}")));
            }
            _ => {}
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if self.data.is_empty() {
            return Err(Error::Config("data must be \"synthetic\" or a directory".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Short label such as `5-way 1-shot`.
    pub fn setting_label(&self) -> String {
        format!("{}-way {}-shot", self.ways, self.shots)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn lambda_only_for_taml() {
        let mut c = RunConfig { lambda: Some(0.5), ..RunConfig::default() };
        assert!(c.validate().is_err());
        c.strategy = Strategy::Taml;
        c.validate().unwrap();
        assert_eq!(c.for_strategy(Strategy::Maml).lambda, None);
        assert_eq!(RunConfig::default().for_strategy(Strategy::Taml).lambda, Some(DEFAULT_LAMBDA));
    }

    #[test]
    fn zero_fields_rejected() {
        for c in [
            RunConfig { ways: 1, ..RunConfig::default() },
            RunConfig { inner_steps: 0, ..RunConfig::default() },
            RunConfig { inner_lr: 0.0, ..RunConfig::default() },
            RunConfig { eval_tasks: 0, ..RunConfig::default() },
        ] {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn json_roundtrip_and_hash() {
        let c = RunConfig { strategy: Strategy::MetaLstmPlusPlus, seed: 9, ..RunConfig::default() };
        let text = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(RunConfig::default().hash(), c.hash());
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"strategy": "metasgd", "ways": 3}"#).unwrap();
        assert_eq!(c.strategy, Strategy::MetaSgd);
        assert_eq!(c.ways, 3);
        assert_eq!(c.adapt_steps(), 1);
        assert!(serde_json::from_str::<RunConfig>(r#"{"wayz": 3}"#).is_err());
    }
}
