//! Task-agnostic meta-learning with the Theil inequality penalty over the
//! query losses of a meta-batch.

use serde::{Deserialize, Serialize};

use super::batch::{weighted_sum, StepStats};
use super::maml::{maml_contributions, MamlState};
use super::task::AdaptTask;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TamlConfig {
    pub lambda: f64,
    pub base: MamlState,
}

/// `(1/B) Σ (L_i / L̄) ln(L_i / L̄)`; zero iff all losses are equal.
pub fn theil_index(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::Invalid("Theil index of an empty batch".into()));
    }
    if let Some(bad) = losses.iter().find(|&&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::Domain { op: "theil_index", detail: format!("losses must be positive, got {bad}") });
    }
    let b = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / b;
    let mut acc = 0.0;
    for &l in losses {
        let r = l / mean;
        acc += r * r.ln();
    }
    Ok(acc / b)
}

/// `∂/∂L_i [Σ_j L_j + λ·B·Theil(L)] = 1 + λ (ln(L_i/L̄) - Theil(L)) / L̄`.
pub fn taml_loss_weights(losses: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if lambda == 0.0 {
        return Ok(vec![1.0; losses.len()]);
    }
    let theil = theil_index(losses)?;
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    Ok(losses.iter().map(|&l| 1.0 + lambda * ((l / mean).ln() - theil) / mean).collect())
}

/// Meta-objective `Σ L_i + λ·B·Theil(L)`.
pub fn taml_objective(losses: &[f64], lambda: f64) -> Result<f64> {
    let sum: f64 = losses.iter().sum();
    if lambda == 0.0 {
        return Ok(sum);
    }
    Ok(sum + lambda * losses.len() as f64 * theil_index(losses)?)
}

/// One outer update on the inequality-penalised objective.
pub fn taml_meta_step<T: AdaptTask>(cfg: &TamlConfig, batch: &[T]) -> Result<(TamlConfig, StepStats)> {
    if !(cfg.lambda >= 0.0) {
        return Err(Error::Invalid(format!("λ must be non-negative, got {}", cfg.lambda)));
    }
    let contribs = maml_contributions(&cfg.base, batch)?;
    let task_losses: Vec<f64> = contribs.iter().map(|c| c.query_loss).collect();
    let weights = taml_loss_weights(&task_losses, cfg.lambda)?;
    let meta_grad = weighted_sum(&contribs, &weights);
    let mut next = cfg.clone();
    next.base.outer.update(next.base.theta_star.data_mut(), &meta_grad)?;
    let meta_loss = taml_objective(&task_losses, cfg.lambda)?;
    Ok((next, StepStats { meta_loss, task_losses }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_losses_have_zero_index() {
        assert_eq!(theil_index(&[1.0, 1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert!(theil_index(&[0.37; 7]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn one_and_three() {
        let expected = 0.5 * (0.5 * 0.5f64.ln() + 1.5 * 1.5f64.ln());
        assert!((theil_index(&[1.0, 3.0]).unwrap() - expected).abs() < 1e-15);
        assert!((theil_index(&[1.0, 3.0]).unwrap() - 0.13081).abs() < 1e-5);
    }

    #[test]
    fn rejects_non_positive() {
        assert!(theil_index(&[1.0, 0.0]).is_err());
        assert!(theil_index(&[-1.0]).is_err());
        assert!(theil_index(&[]).is_err());
    }

    #[test]
    fn weights_are_one_at_equality() {
        let w = taml_loss_weights(&[2.0, 2.0, 2.0], 0.5).unwrap();
        assert!(w.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert!((taml_objective(&[2.0, 2.0, 2.0], 0.5).unwrap() - 6.0).abs() < 1e-12);
    }
}
