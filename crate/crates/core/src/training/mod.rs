//! Losses, optimizer, checkpoints and the training loop.

mod adam;
mod checkpoint;
mod loss;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{Tape, Tensor, Var};
use crate::decoder::{frame_batch, rollout_vars, Model};
use crate::geometry::LieVector;
use crate::model::{ModelConfig, ModelError, ModelParams};
use crate::skeleton::{window_offsets, MotionSequence, SampleWindow, SkeletonError};

pub use adam::{adam_step, clip_global_norm, Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{l2_loss, loss_weights, weighted_loss, LossKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("loss became {loss} at iteration {iteration}")]
    Diverged { iteration: u64, loss: f64 },
    #[error("no training sequence holds {needed} frames")]
    NoWindows { needed: usize },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: u64,
    pub adam: AdamConfig,
    /// Frames per window given to the model: all but the last feed the encoder,
    /// the last seeds the decoder.
    pub observed: usize,
    pub horizon: usize,
    pub long_horizon: usize,
    pub long_term: bool,
    pub loss: LossKind,
    pub seed: u64,
    pub init_std: f64,
    pub clip_norm: f64,
    pub teacher_forcing: bool,
    pub checkpoint_every: u64,
}

impl TrainConfig {
    /// Frames predicted per training window.
    pub fn active_horizon(&self) -> usize {
        if self.long_term {
            self.long_horizon
        } else {
            self.horizon
        }
    }
}

/// Scalar loss of `windows` under `params`, recorded on `tape`.
///
/// `lengths` are the per-entry bone lengths used by the weighted loss.
pub fn window_loss(
    tape: &mut Tape,
    params: &ModelParams<Var>,
    config: &ModelConfig,
    windows: &[SampleWindow],
    kind: LossKind,
    lengths: &[f64],
    teacher_forcing: bool,
) -> Result<Var, ModelError> {
    let k = config.entry_count();
    if lengths.len() != k {
        return Err(ModelError::Dimension(format!("{} bone lengths for {k} entries", lengths.len())));
    }
    let horizon = windows.first().map_or(0, |w| w.target.len());
    if horizon == 0 || windows.iter().any(|w| w.target.len() != horizon) {
        return Err(ModelError::Dimension("windows need equal, non-empty targets".into()));
    }
    let observed: Vec<&[LieVector]> = windows.iter().map(|w| w.observed.as_slice()).collect();
    let targets: Vec<&[LieVector]> = windows.iter().map(|w| w.target.as_slice()).collect();
    let teacher = teacher_forcing.then_some(targets.as_slice());
    let preds = rollout_vars(tape, params, config, &observed, horizon, teacher)?;
    let target_vars = (0..horizon)
        .map(|n| {
            let frames: Vec<&LieVector> = targets.iter().map(|t| &t[n]).collect();
            Ok(tape.leaf(frame_batch(&frames, k)?))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    loss::loss_var(tape, kind, &preds, &target_vars, lengths)
}

/// Loss and per-parameter gradients (canonical order) for one batch.
pub fn loss_and_gradients(
    params: &ModelParams<Tensor>,
    config: &ModelConfig,
    windows: &[SampleWindow],
    kind: LossKind,
    lengths: &[f64],
    teacher_forcing: bool,
) -> Result<(f64, Vec<Tensor>), ModelError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = window_loss(&mut tape, &bound, config, windows, kind, lengths, teacher_forcing)?;
    let grads = tape.backward(loss)?;
    let value = tape.value(loss).data()[0];
    Ok((value, bound.vars().into_iter().map(|v| grads.get(v)).collect()))
}

/// Stateful optimizer loop over windows drawn from a set of sequences.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub adam: Adam,
    pub iteration: u64,
    lengths: Vec<f64>,
    data: Vec<Vec<LieVector>>,
    rng: ChaCha8Rng,
}

impl Trainer {
    /// Initializes parameters from `config.seed`. `lengths` are the per-entry bone
    /// lengths, `data` rotation-vector sequences.
    pub fn new(
        model_config: ModelConfig,
        config: TrainConfig,
        lengths: Vec<f64>,
        data: &[MotionSequence],
    ) -> Result<Self, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ModelParams::init(&model_config, config.init_std, &mut rng)?;
        let model = Model::new(model_config, params)?;
        let k = model.config.entry_count();
        if lengths.len() != k {
            return Err(TrainError::Dimension(format!("{} bone lengths for {k} entries", lengths.len())));
        }
        let needed = config.observed + config.active_horizon();
        let mut seqs = Vec::new();
        for seq in data {
            let frames = seq.lie_frames()?;
            if let Some(f) = frames.iter().find(|f| f.len() != k) {
                return Err(TrainError::Dimension(format!(
                    "training frame has {} entries, model expects {k}",
                    f.len()
                )));
            }
            if frames.len() >= needed {
                seqs.push(frames.to_vec());
            }
        }
        if seqs.is_empty() {
            return Err(TrainError::NoWindows { needed });
        }
        let leaves: Vec<&Tensor> = model.params.named().into_iter().map(|(_, t)| t).collect();
        let adam = Adam::new(config.adam, &leaves);
        Ok(Self { model, config, adam, iteration: 0, lengths, data: seqs, rng })
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    /// Draws `count` windows: a sequence uniformly, then a start offset uniformly.
    pub fn sample_windows(&mut self, count: usize) -> Vec<SampleWindow> {
        let (t, h) = (self.config.observed, self.config.active_horizon());
        (0..count)
            .map(|_| {
                let s = self.rng.random_range(0..self.data.len());
                let seq = &self.data[s];
                let start = window_offsets(seq.len(), t, h, 1, &mut self.rng).expect("sequence length checked")[0];
                SampleWindow {
                    start,
                    observed: seq[start..start + t].to_vec(),
                    target: seq[start + t..start + t + h].to_vec(),
                }
            })
            .collect()
    }

    /// Loss of the current parameters on `windows`, without updating anything.
    pub fn evaluate(&self, windows: &[SampleWindow]) -> Result<f64, TrainError> {
        let mut tape = Tape::new();
        let bound = self.model.params.bind(&mut tape);
        let loss = window_loss(&mut tape, &bound, &self.model.config, windows, self.config.loss, &self.lengths, false)?;
        Ok(tape.value(loss).data()[0])
    }

    /// One optimizer step on a fresh batch; returns the batch loss before the update.
    pub fn step(&mut self) -> Result<f64, TrainError> {
        let windows = self.sample_windows(self.config.batch_size);
        let (loss, mut grads) = loss_and_gradients(
            &self.model.params,
            &self.model.config,
            &windows,
            self.config.loss,
            &self.lengths,
            self.config.teacher_forcing,
        )?;
        self.iteration += 1;
        if !loss.is_finite() {
            return Err(TrainError::Diverged { iteration: self.iteration, loss });
        }
        clip_global_norm(&mut grads, self.config.clip_norm);
        let mut leaves: Vec<Tensor> = self.model.params.named().into_iter().map(|(_, t)| t.clone()).collect();
        self.adam.update(&mut leaves, &grads);
        self.model.params = self.model.params.with_leaves(&leaves)?;
        if !self.model.params.all_finite() {
            return Err(TrainError::Diverged { iteration: self.iteration, loss: f64::NAN });
        }
        Ok(loss)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            train: self.config.clone(),
            iteration: self.iteration,
            adam: Some(self.adam.clone()),
        }
    }
}

/// Runs `config.iterations` steps. `on_step` sees the trainer after each step
/// together with that step's batch loss.
pub fn train(
    model_config: ModelConfig,
    config: TrainConfig,
    lengths: Vec<f64>,
    data: &[MotionSequence],
    mut on_step: impl FnMut(&Trainer, f64) -> Result<(), TrainError>,
) -> Result<(Checkpoint, Vec<f64>), TrainError> {
    let mut trainer = Trainer::new(model_config, config, lengths, data)?;
    let mut losses = Vec::with_capacity(trainer.config.iterations as usize);
    for _ in 0..trainer.config.iterations {
        let loss = trainer.step()?;
        losses.push(loss);
        on_step(&trainer, loss)?;
    }
    Ok((trainer.checkpoint(), losses))
}
