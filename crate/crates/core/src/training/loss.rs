use std::str::FromStr;

use crate::autodiff::{Tape, Tensor, Var};
use crate::geometry::LieVector;
use crate::model::ModelError;

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Per-entry error norms weighted by the length of the bones downstream.
    Weighted,
    /// Plain sum of squared errors.
    L2,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Weighted => "weighted",
            LossKind::L2 => "l2",
        }
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "weighted" => Ok(LossKind::Weighted),
            "l2" => Ok(LossKind::L2),
            other => Err(format!("unknown loss `{other}` (expected weighted or l2)")),
        }
    }
}

/// Entry weights `Θ(z) = Σ_{j=z..K} (K + 1 - j)·ℓ_j` (1-based), where `ℓ_j` is the
/// length of the bone entry `j` orients.
pub fn loss_weights(lengths: &[f64]) -> Vec<f64> {
    let k = lengths.len();
    let mut out = vec![0.0; k];
    let mut acc = 0.0;
    for z in (0..k).rev() {
        acc += (k - z) as f64 * lengths[z];
        out[z] = acc;
    }
    out
}

fn check_frames(target: &[LieVector], pred: &[LieVector]) -> Result<usize, TrainError> {
    if target.len() != pred.len() || target.is_empty() {
        return Err(TrainError::Dimension(format!(
            "{} target frames vs {} predicted frames",
            target.len(),
            pred.len()
        )));
    }
    let k = target[0].len();
    if target.iter().chain(pred).any(|f| f.len() != k) {
        return Err(TrainError::Dimension("frames differ in entry count".into()));
    }
    Ok(k)
}

/// Mean over frames of `Σ_z Θ(z)·‖ω_z - ω̂_z‖`.
pub fn weighted_loss(target: &[LieVector], pred: &[LieVector], lengths: &[f64]) -> Result<f64, TrainError> {
    let k = check_frames(target, pred)?;
    if lengths.len() != k {
        return Err(TrainError::Dimension(format!("{} lengths for {k} entries", lengths.len())));
    }
    let theta = loss_weights(lengths);
    let total: f64 = target
        .iter()
        .zip(pred)
        .map(|(t, p)| {
            t.entries().iter().zip(p.entries()).zip(&theta).map(|((a, b), w)| w * (a - b).norm()).sum::<f64>()
        })
        .sum();
    Ok(total / target.len() as f64)
}

/// Mean over frames of `Σ_z ‖ω_z - ω̂_z‖²`.
pub fn l2_loss(target: &[LieVector], pred: &[LieVector]) -> Result<f64, TrainError> {
    check_frames(target, pred)?;
    let total: f64 = target
        .iter()
        .zip(pred)
        .map(|(t, p)| t.entries().iter().zip(p.entries()).map(|(a, b)| (a - b).norm_squared()).sum::<f64>())
        .sum();
    Ok(total / target.len() as f64)
}

/// Loss over a batched rollout: `preds[n]` and `targets[n]` are `batch x 3K`.
/// Averaged over steps and samples.
pub(crate) fn loss_var(
    tape: &mut Tape,
    kind: LossKind,
    preds: &[Var],
    targets: &[Var],
    lengths: &[f64],
) -> Result<Var, ModelError> {
    let k = lengths.len();
    let batch = tape.value(preds[0]).rows();
    let weights = match kind {
        LossKind::Weighted => Some(tape.leaf(Tensor::matrix(k, 1, loss_weights(lengths))?)),
        LossKind::L2 => None,
    };
    let mut per_step = Vec::with_capacity(preds.len());
    for (&p, &t) in preds.iter().zip(targets) {
        let diff = tape.sub(p, t)?;
        let term = match weights {
            Some(w) => {
                let rows = tape.reshape(diff, &[batch * k, 3])?;
                let norms = tape.row_l2norm(rows);
                let grid = tape.reshape(norms, &[batch, k])?;
                let weighted = tape.matmul(grid, w)?;
                tape.sum(weighted)
            }
            None => {
                let sq = tape.square(diff);
                tape.sum(sq)
            }
        };
        per_step.push(term);
    }
    let total = tape.add_all(&per_step)?;
    Ok(tape.scale(total, 1.0 / (batch * preds.len()) as f64))
}
