//! Multitask objective with per-round deep supervision.

use serde::{Deserialize, Serialize};
use semstereo_autograd::{lit, Float, Graph, Tensor, Var};

use crate::error::{precondition, Error, Result};
use crate::mfm::NUM_ROUNDS;
use crate::model::RoundOutput;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_disp: f64,
    pub lambda_sem: f64,
    pub round_weights: Vec<f64>,
    pub ignore_class: u8,
    pub smooth_l1_beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda_disp: 1.0, lambda_sem: 1.0, round_weights: vec![0.5, 0.7, 1.0], ignore_class: 255, smooth_l1_beta: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.round_weights.len() != NUM_ROUNDS {
            return Err(Error::Config(format!(
                "round_weights needs {NUM_ROUNDS} entries, got {}",
                self.round_weights.len()
            )));
        }
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !self.round_weights.iter().all(|&w| nonneg(w)) || !self.round_weights.iter().any(|&w| w > 0.0) {
            return Err(Error::Config("round weights must be non-negative with at least one positive".into()));
        }
        if !nonneg(self.lambda_disp) || !nonneg(self.lambda_sem) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.smooth_l1_beta.is_finite() && self.smooth_l1_beta > 0.0) {
            return Err(Error::Config("smooth_l1_beta must be positive".into()));
        }
        Ok(())
    }
}

/// Ground truth for a batch, flattened in `[N, H, W]` order.
#[derive(Clone, Copy, Debug)]
pub struct Targets<'a> {
    pub disparity: &'a [f32],
    pub classes: &'a [u8],
    pub valid: &'a [bool],
}

/// Scalar loss handles. `total == disparity + semantic`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossParts {
    pub total: Var,
    /// Weighted sum of per-round smooth-L1 terms.
    pub disparity: Var,
    /// Weighted sum of per-round cross-entropy terms.
    pub semantic: Var,
}

pub fn multitask_loss<T: Float>(
    g: &Graph<'_, T>,
    preds: &[RoundOutput],
    targets: Targets<'_>,
    cfg: &LossConfig,
) -> Result<LossParts> {
    cfg.validate()?;
    precondition(preds.len() == NUM_ROUNDS, || format!("expected {NUM_ROUNDS} round outputs, got {}", preds.len()))?;
    let n = targets.disparity.len();
    precondition(targets.classes.len() == n && targets.valid.len() == n, || {
        "ground-truth rasters differ in length".to_string()
    })?;
    let has_disp = targets.valid.iter().any(|&v| v);
    let has_sem = targets.classes.iter().any(|&c| c != cfg.ignore_class);
    if !has_disp && !has_sem {
        return Err(Error::NoSupervision);
    }
    let gt: Vec<T> = targets.disparity.iter().map(|&v| if v.is_finite() { lit(v as f64) } else { T::zero() }).collect();
    let zero = || g.constant(Tensor::scalar(T::zero()));
    let mut disp_total = zero();
    let mut sem_total = zero();
    for (p, &w) in preds.iter().zip(&cfg.round_weights) {
        if w == 0.0 {
            continue;
        }
        if cfg.lambda_disp != 0.0 {
            let l = g.smooth_l1_masked(p.disparity, &gt, targets.valid, lit(cfg.smooth_l1_beta))?;
            disp_total = g.add(disp_total, g.scale(l, lit(w * cfg.lambda_disp)))?;
        }
        if cfg.lambda_sem != 0.0 {
            let l = g.cross_entropy_masked(p.logits, targets.classes, cfg.ignore_class)?;
            sem_total = g.add(sem_total, g.scale(l, lit(w * cfg.lambda_sem)))?;
        }
    }
    let total = g.add(disp_total, sem_total)?;
    Ok(LossParts { total, disparity: disp_total, semantic: sem_total })
}
