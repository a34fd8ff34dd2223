use biplanar_tensor::{ops, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Linear;
use crate::occupancy::{one_hot_inference, OccupancyVector, NUM_CLASSES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the pseudo-label term; the labeled term gets `1 - w_u`.
    pub w_u: f64,
    /// Weight of the feature-distillation term.
    pub w_k: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { w_u: 0.5, w_k: 0.1 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.w_u) || !(self.w_k >= 0.0 && self.w_k.is_finite()) {
            return Err(Error::Config(format!("need w_u in [0, 1] and w_k >= 0, got {} and {}", self.w_u, self.w_k)));
        }
        Ok(())
    }
}

/// `[N, 5]` constant tensor from probability vectors.
pub fn targets_tensor(targets: &[OccupancyVector]) -> Result<Tensor> {
    Ok(Tensor::new(targets.iter().flat_map(|t| t.0).collect(), &[targets.len(), NUM_CLASSES])?)
}

/// Mean cross-entropy of logits `[N, 5]` against one-hot targets.
pub fn loss_labeled(logits: &Tensor, targets: &[OccupancyVector]) -> Result<Tensor> {
    if logits.shape() != [targets.len(), NUM_CLASSES] {
        return Err(Error::Training(format!(
            "logits {:?} do not match {} targets",
            logits.shape(),
            targets.len()
        )));
    }
    Ok(ops::softmax_cross_entropy(logits, &targets_tensor(targets)?)?)
}

#[derive(Clone, Debug)]
pub struct UnlabeledLoss {
    pub total: Tensor,
    pub pseudo: Tensor,
    pub kd: Tensor,
}

/// Pseudo-label cross-entropy against the teacher's one-hot prediction plus
/// L1 distillation of `gamma(F_xray)` onto the teacher features.
pub fn loss_unlabeled(
    student_logits: &Tensor,
    student_features: &Tensor,
    teacher_probs: &[OccupancyVector],
    teacher_features: &Tensor,
    gamma: &Linear,
    cfg: &LossConfig,
) -> Result<UnlabeledLoss> {
    let n = teacher_probs.len();
    if student_logits.shape() != [n, NUM_CLASSES]
        || student_features.shape() != [n, gamma.fan_in()]
        || teacher_features.shape() != [n, gamma.fan_out()]
    {
        return Err(Error::Training(format!(
            "unlabeled loss shapes disagree: logits {:?}, student features {:?}, teacher features {:?}, {n} teacher outputs",
            student_logits.shape(),
            student_features.shape(),
            teacher_features.shape()
        )));
    }
    let pseudo_targets: Vec<OccupancyVector> = teacher_probs.iter().map(one_hot_inference).collect();
    let pseudo = ops::softmax_cross_entropy(student_logits, &targets_tensor(&pseudo_targets)?)?;
    let projected = gamma.forward(student_features)?;
    let kd = ops::l1_loss(&projected, &teacher_features.detach())?;
    let total = ops::add(&ops::scale(&pseudo, cfg.w_u), &ops::scale(&kd, cfg.w_k))?;
    Ok(UnlabeledLoss { total, pseudo, kd })
}

/// `(1 - w_u) * labeled + unlabeled_total`.
pub fn loss_joint(labeled: &Tensor, unlabeled_total: &Tensor, cfg: &LossConfig) -> Result<Tensor> {
    Ok(ops::add(&ops::scale(labeled, 1.0 - cfg.w_u), unlabeled_total)?)
}
