//! Two-branch training loss with a soft-Dice surrogate per branch.
//!
//! The per-branch loss is `1 - 2 sum(p g) / (sum(p) + sum(g) + eps)` with
//! `p = sigmoid(logit)`. Any differentiable per-branch loss exercises the
//! same gradient-sharing path, so a simple one is used.

use crate::error::{NnError, Result};
use crate::samf::sigmoid;
use crate::tensor::Tensor3;

pub const DICE_EPS: f64 = 1e-6;

/// Weight of the lightweight branch in the total loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchLossWeights {
    alpha: f64,
}

impl BranchLossWeights {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(NnError::invalid(format!("alpha must be a non-negative number, got {alpha}")));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl Default for BranchLossWeights {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

fn check_pair(logits: &Tensor3, gt: &Tensor3) -> Result<()> {
    if logits.channels() != 1 {
        return Err(NnError::invalid(format!(
            "expected single-channel logits, got {} channels",
            logits.channels()
        )));
    }
    if logits.shape() != gt.shape() {
        return Err(NnError::invalid(format!(
            "logits {:?} vs ground truth {:?}",
            logits.shape(),
            gt.shape()
        )));
    }
    if gt.data().iter().any(|&g| g != 0.0 && g != 1.0) {
        return Err(NnError::invalid("ground truth must be a 0/1 mask"));
    }
    Ok(())
}

/// Soft-Dice loss of sigmoid probabilities and its gradient w.r.t. the logits.
pub fn soft_dice(logits: &Tensor3, gt: &Tensor3) -> Result<(f64, Tensor3)> {
    check_pair(logits, gt)?;
    let p = logits.map(sigmoid);
    let inter: f64 = p.dot(gt)?;
    let denom = p.sum() + gt.sum() + DICE_EPS;
    let loss = 1.0 - 2.0 * inter / denom;
    // dL/dp_i = -2 (g_i * denom - inter) / denom^2, then through the sigmoid.
    let grad = p.zip_with(gt, |pi, gi| {
        -2.0 * (gi * denom - inter) / (denom * denom) * pi * (1.0 - pi)
    })?;
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoIsdLoss {
    pub total: f64,
    pub main: f64,
    pub light: f64,
    pub grad_main: Tensor3,
    /// Already scaled by alpha.
    pub grad_light: Tensor3,
}

/// `L = L_main + alpha * L_light` and its gradients w.r.t. both branch outputs.
pub fn co_isd_loss(y_main: &Tensor3, y_light: &Tensor3, y_gt: &Tensor3, w: BranchLossWeights) -> Result<CoIsdLoss> {
    if y_main.shape() != y_light.shape() {
        return Err(NnError::invalid("branch outputs differ in shape"));
    }
    let (main, grad_main) = soft_dice(y_main, y_gt)?;
    let (light, g) = soft_dice(y_light, y_gt)?;
    let a = w.alpha();
    Ok(CoIsdLoss {
        total: main + a * light,
        main,
        light,
        grad_main,
        grad_light: g.map(|v| a * v),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Tensor3, Tensor3, Tensor3) {
        let gt = Tensor3::from_fn(1, 4, 4, |_, y, x| f64::from(u8::from(y == 1 && x < 3)));
        let a = Tensor3::from_fn(1, 4, 4, |_, y, x| (y as f64 - 1.5) * 0.7 + x as f64 * 0.2);
        let b = Tensor3::from_fn(1, 4, 4, |_, y, x| ((y * 4 + x) % 5) as f64 - 2.0);
        (a, b, gt)
    }

    #[test]
    fn zero_alpha_drops_the_light_branch() {
        let (a, b, gt) = toy();
        let l = co_isd_loss(&a, &b, &gt, BranchLossWeights::new(0.0).unwrap()).unwrap();
        assert_eq!(l.total, l.main);
        assert!(l.grad_light.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_branches_get_identical_gradients() {
        let (a, _, gt) = toy();
        let l = co_isd_loss(&a, &a, &gt, BranchLossWeights::default()).unwrap();
        assert_eq!(l.grad_main, l.grad_light);
        assert_eq!(l.total, 2.0 * l.main);
    }

    #[test]
    fn perfect_prediction_is_near_zero() {
        let gt = Tensor3::from_fn(1, 3, 3, |_, y, _| f64::from(u8::from(y == 0)));
        let logits = gt.map(|g| if g > 0.0 { 40.0 } else { -40.0 });
        assert!(soft_dice(&logits, &gt).unwrap().0 < 1e-6);
    }

    #[test]
    fn shape_and_value_checks() {
        let (a, _, gt) = toy();
        assert!(soft_dice(&Tensor3::zeros(2, 4, 4), &Tensor3::zeros(2, 4, 4)).is_err());
        assert!(soft_dice(&a, &Tensor3::zeros(1, 3, 4)).is_err());
        assert!(soft_dice(&a, &gt.map(|v| v * 0.5)).is_err());
        assert!(BranchLossWeights::new(-0.5).is_err());
    }
}
