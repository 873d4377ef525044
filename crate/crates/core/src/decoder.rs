//! Chain-structured stack decoder and autoregressive rollout.
//!
//! An overall LSTM reads the previous pose. A spine LSTM reads the overall
//! hidden state, and one arm and one leg LSTM read both. Each chain has its own
//! projection from the hidden state of its role to a residual that is added to
//! the previous pose, so a decoder with zero projections repeats its seed.

use crate::autodiff::{Tape, Tensor, Var};
use crate::encoder::{encode_vars, pose_matrix, EncoderState, Grid, StateVars};
use crate::geometry::LieVector;
use crate::model::{DecoderParams, LstmParams, ModelConfig, ModelError, ModelParams, Projection};
use crate::skeleton::ChainRole;

/// Hidden and memory of one LSTM.
type Cell = (Var, Var);

#[derive(Debug, Clone)]
pub(crate) enum DecoderVars {
    Structured { overall: Cell, spine: Cell, arm: Option<Cell>, leg: Option<Cell> },
    Plain { layers: Vec<Cell> },
}

/// Decoder states from the last encoder layer: the overall layer starts from
/// the frame-mean of the cells, the spine from the hidden states summed with
/// the global temporal state and divided by the observed length; limbs start at zero.
pub(crate) fn init_decoder_vars(
    tape: &mut Tape,
    enc: &StateVars,
    grid: &Grid,
    config: &ModelConfig,
) -> Result<DecoderVars, ModelError> {
    let width = config.decoder_hidden();
    let groups = grid.temporal_groups();
    let h_sum = tape.segment_sum(enc.h, groups.clone())?;
    let c_sum = tape.segment_sum(enc.c, groups)?;
    let frames = grid.frames as f64;

    let h_mean = tape.scale(h_sum, 1.0 / frames);
    let h0 = tape.reshape(h_mean, &[grid.batch, width])?;
    let c_mean = tape.scale(c_sum, 1.0 / frames);
    let c0 = tape.reshape(c_mean, &[grid.batch, width])?;
    let with_global = tape.add(h_sum, enc.g_t)?;
    let h1_rows = tape.scale(with_global, 1.0 / (frames + 1.0));
    let h1 = tape.reshape(h1_rows, &[grid.batch, width])?;

    if config.decoder.replace_lstm {
        return Ok(DecoderVars::Plain { layers: vec![(h0, c0), (h1, c0)] });
    }
    let limb = config.limb_hidden();
    let zero_cell = |tape: &mut Tape| {
        let z = tape.leaf(Tensor::zeros(&[grid.batch, limb]));
        (z, z)
    };
    let arm = config.has_role(ChainRole::Arm).then(|| zero_cell(tape));
    let leg = config.has_role(ChainRole::Leg).then(|| zero_cell(tape));
    Ok(DecoderVars::Structured { overall: (h0, c0), spine: (h1, c0), arm, leg })
}

fn lstm(tape: &mut Tape, x: Var, (h, c): Cell, p: &LstmParams<Var>) -> Result<Cell, ModelError> {
    let width = tape.value(h).cols();
    let a = tape.matmul(x, p.input)?;
    let b = tape.matmul(h, p.recurrent)?;
    let ab = tape.add(a, b)?;
    let z = tape.add(ab, p.bias)?;
    let forget_block = tape.slice_cols(z, 0, 2 * width)?;
    let if_gates = tape.sigmoid(forget_block);
    let input = tape.slice_cols(if_gates, 0, width)?;
    let forget = tape.slice_cols(if_gates, width, 2 * width)?;
    let cand_pre = tape.slice_cols(z, 2 * width, 3 * width)?;
    let candidate = tape.tanh(cand_pre);
    let out_pre = tape.slice_cols(z, 3 * width, 4 * width)?;
    let out = tape.sigmoid(out_pre);

    let kept = tape.mul(forget, c)?;
    let written = tape.mul(input, candidate)?;
    let c_new = tape.add(kept, written)?;
    let squashed = tape.tanh(c_new);
    let h_new = tape.mul(out, squashed)?;
    Ok((h_new, c_new))
}

fn project(tape: &mut Tape, h: Var, p: &Projection<Var>) -> Result<Var, ModelError> {
    let lin = tape.matmul(h, p.weight)?;
    Ok(tape.add(lin, p.bias)?)
}

/// One decoding step: `w_prev` is `batch x 3K`; returns the next states and pose.
pub(crate) fn decode_step_vars(
    tape: &mut Tape,
    state: &DecoderVars,
    w_prev: Var,
    params: &DecoderParams<Var>,
    config: &ModelConfig,
) -> Result<(DecoderVars, Var), ModelError> {
    let (next, delta) = match (state, params) {
        (
            DecoderVars::Structured { overall, spine, arm, leg },
            DecoderParams::Structured { overall: p_overall, spine: p_spine, arm: p_arm, leg: p_leg, projections },
        ) => {
            let overall = lstm(tape, w_prev, *overall, p_overall)?;
            let spine = lstm(tape, overall.0, *spine, p_spine)?;
            let limb_input = tape.concat_cols(&[overall.0, spine.0])?;
            let limb = |tape: &mut Tape, s: &Option<Cell>, p: &Option<LstmParams<Var>>| match (s, p) {
                (Some(s), Some(p)) => lstm(tape, limb_input, *s, p).map(Some),
                (None, None) => Ok(None),
                _ => Err(ModelError::Config("decoder state and parameters disagree on limb layers".into())),
            };
            let arm = limb(tape, arm, p_arm)?;
            let leg = limb(tape, leg, p_leg)?;

            let mut deltas = Vec::with_capacity(projections.len());
            for (&(role, k), proj) in config.layout.chains().iter().zip(projections) {
                if k == 0 {
                    continue;
                }
                let source = match role {
                    ChainRole::Spine => Some(spine.0),
                    ChainRole::Arm => arm.map(|c| c.0),
                    ChainRole::Leg => leg.map(|c| c.0),
                }
                .ok_or_else(|| ModelError::Config(format!("no {role} layer for a {role} chain")))?;
                deltas.push(project(tape, source, proj)?);
            }
            let delta = tape.concat_cols(&deltas)?;
            (DecoderVars::Structured { overall, spine, arm, leg }, delta)
        }
        (DecoderVars::Plain { layers }, DecoderParams::Plain { layers: p_layers, projection }) => {
            let mut next = Vec::with_capacity(layers.len());
            let mut x = w_prev;
            for (cell, p) in layers.iter().zip(p_layers) {
                let c = lstm(tape, x, *cell, p)?;
                x = c.0;
                next.push(c);
            }
            let delta = project(tape, x, projection)?;
            (DecoderVars::Plain { layers: next }, delta)
        }
        _ => return Err(ModelError::Config("decoder state does not match decoder parameters".into())),
    };

    let shape = tape.value(w_prev).shape().to_vec();
    let batch = tape.value(w_prev).rows();
    let sum = tape.add(w_prev, delta)?;
    let rows = tape.reshape(sum, &[batch * config.entry_count(), 3])?;
    let wrapped = tape.wrap_rotation_rows(rows)?;
    let w_next = tape.reshape(wrapped, &shape)?;
    Ok((next, w_next))
}

/// Stacks one frame per sample into a `batch x 3K` matrix.
pub(crate) fn frame_batch(frames: &[&LieVector], entries: usize) -> Result<Tensor, ModelError> {
    Ok(pose_matrix(frames, entries)?.reshaped(&[frames.len(), 3 * entries])?)
}

/// Encodes a batch of observed clips and rolls the decoder out `horizon` steps.
///
/// Each clip's last frame seeds the decoder; the others feed the encoder. With
/// `teacher`, step `n > 0` reads ground-truth frame `n - 1` instead of the
/// previous prediction.
pub(crate) fn rollout_vars(
    tape: &mut Tape,
    params: &ModelParams<Var>,
    config: &ModelConfig,
    observed: &[&[LieVector]],
    horizon: usize,
    teacher: Option<&[&[LieVector]]>,
) -> Result<Vec<Var>, ModelError> {
    let k = config.entry_count();
    let t = observed.first().map_or(0, |o| o.len());
    if t < 2 {
        return Err(ModelError::Dimension(format!("need at least 2 observed frames, got {t}")));
    }
    if observed.iter().any(|o| o.len() != t) {
        return Err(ModelError::Dimension("observed clips differ in length".into()));
    }
    let frames = t - 1;
    let grid = Grid::new(observed.len(), frames, &config.layout);
    let enc_frames: Vec<&LieVector> = observed.iter().flat_map(|o| &o[..frames]).collect();
    let pose = tape.leaf(pose_matrix(&enc_frames, k)?);
    let enc = encode_vars(tape, pose, &params.encoder, &grid, &config.encoder, None)?;
    let mut state = init_decoder_vars(tape, &enc, &grid, config)?;

    let seeds: Vec<&LieVector> = observed.iter().map(|o| &o[frames]).collect();
    let mut w = tape.leaf(frame_batch(&seeds, k)?);
    let mut out = Vec::with_capacity(horizon);
    for n in 0..horizon {
        let (next, w_next) = decode_step_vars(tape, &state, w, &params.decoder, config)?;
        state = next;
        out.push(w_next);
        w = match teacher {
            Some(targets) if n + 1 < horizon => {
                let frames: Vec<&LieVector> = targets.iter().map(|t| &t[n]).collect();
                tape.leaf(frame_batch(&frames, k)?)
            }
            _ => w_next,
        };
    }
    Ok(out)
}

fn unstack(t: &Tensor, entries: usize) -> Vec<LieVector> {
    (0..t.rows())
        .map(|r| LieVector::from_flat(t.row_slice(r)).expect("row width is 3K"))
        .inspect(|v| debug_assert_eq!(v.len(), entries))
        .collect()
}

/// Decoder LSTM states of a single sample, named by stage.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    /// `(stage, hidden, memory)`; stages are `overall`, `spine`, `arm`, `leg`
    /// for the structured decoder and `lstm.0`, `lstm.1` for the plain one.
    pub stages: Vec<(String, Tensor, Tensor)>,
}

impl DecoderState {
    pub fn stage(&self, name: &str) -> Option<(&Tensor, &Tensor)> {
        self.stages.iter().find(|(n, _, _)| n == name).map(|(_, h, c)| (h, c))
    }

    fn from_vars(tape: &Tape, v: &DecoderVars) -> Self {
        let grab = |name: &str, (h, c): Cell| (name.to_string(), tape.value(h).clone(), tape.value(c).clone());
        let stages = match v {
            DecoderVars::Structured { overall, spine, arm, leg } => {
                let mut s = vec![grab("overall", *overall), grab("spine", *spine)];
                s.extend(arm.map(|c| grab("arm", c)));
                s.extend(leg.map(|c| grab("leg", c)));
                s
            }
            DecoderVars::Plain { layers } => {
                layers.iter().enumerate().map(|(i, c)| grab(&format!("lstm.{i}"), *c)).collect()
            }
        };
        Self { stages }
    }

    fn bind(&self, tape: &mut Tape, config: &ModelConfig) -> Result<DecoderVars, ModelError> {
        let mut cell = |name: &str| -> Option<Cell> {
            let (h, c) = self.stage(name)?;
            Some((tape.leaf(h.clone()), tape.leaf(c.clone())))
        };
        let missing = |name: &str| ModelError::Dimension(format!("decoder state lacks stage `{name}`"));
        if config.decoder.replace_lstm {
            let layers = (0..2)
                .map(|i| cell(&format!("lstm.{i}")).ok_or_else(|| missing(&format!("lstm.{i}"))))
                .collect::<Result<_, _>>()?;
            return Ok(DecoderVars::Plain { layers });
        }
        Ok(DecoderVars::Structured {
            overall: cell("overall").ok_or_else(|| missing("overall"))?,
            spine: cell("spine").ok_or_else(|| missing("spine"))?,
            arm: cell("arm"),
            leg: cell("leg"),
        })
    }
}

/// A configured model: encoder, decoder and their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams<Tensor>,
}

impl Model {
    pub fn new(config: ModelConfig, params: ModelParams<Tensor>) -> Result<Self, ModelError> {
        config.validate()?;
        let named: Vec<(String, Tensor)> = params.named().into_iter().map(|(n, t)| (n, t.clone())).collect();
        let checked = ModelParams::from_named(&config, &named)?;
        if checked.names() != params.names() {
            return Err(ModelError::Config("parameters do not match the configured decoder".into()));
        }
        Ok(Self { config, params })
    }

    pub fn encoder(&self) -> crate::encoder::Encoder<'_> {
        crate::encoder::Encoder {
            params: &self.params.encoder,
            config: &self.config.encoder,
            layout: &self.config.layout,
        }
    }

    /// Runs the encoder over all but the last observed frame.
    pub fn encode(&self, observed: &[LieVector]) -> Result<EncoderState, ModelError> {
        if observed.len() < 2 {
            return Err(ModelError::Dimension("need at least 2 observed frames".into()));
        }
        self.encoder().encode(&observed[..observed.len() - 1])
    }

    /// Decoder states derived from a final encoder state.
    pub fn init_decoder(&self, enc: &EncoderState) -> Result<DecoderState, ModelError> {
        if enc.entries() != self.config.entry_count() || enc.hidden() != self.config.encoder.hidden {
            return Err(ModelError::Dimension("encoder state does not match the model".into()));
        }
        let mut tape = Tape::new();
        let sv = StateVars {
            h: tape.leaf(enc.h.clone()),
            c: tape.leaf(enc.c.clone()),
            g_t: tape.leaf(enc.g_t.clone()),
            c_gt: tape.leaf(enc.c_gt.clone()),
            g_s: tape.leaf(enc.g_s.clone()),
            c_gs: tape.leaf(enc.c_gs.clone()),
        };
        let grid = Grid::new(1, enc.frames(), &self.config.layout);
        let v = init_decoder_vars(&mut tape, &sv, &grid, &self.config)?;
        Ok(DecoderState::from_vars(&tape, &v))
    }

    /// One decoding step from `w_prev`.
    pub fn decode_step(
        &self,
        state: &DecoderState,
        w_prev: &LieVector,
    ) -> Result<(DecoderState, LieVector), ModelError> {
        let k = self.config.entry_count();
        let mut tape = Tape::new();
        let p = self.params.decoder.map("decoder", &mut |_, t| tape.leaf(t.clone()));
        let sv = state.bind(&mut tape, &self.config)?;
        let w = tape.leaf(frame_batch(&[w_prev], k)?);
        let (next, w_next) = decode_step_vars(&mut tape, &sv, w, &p, &self.config)?;
        let pose = unstack(tape.value(w_next), k).remove(0);
        Ok((DecoderState::from_vars(&tape, &next), pose))
    }

    /// Predicts `horizon` frames following `observed` (at least 2 frames).
    pub fn predict(&self, observed: &[LieVector], horizon: usize) -> Result<Vec<LieVector>, ModelError> {
        if horizon == 0 {
            return Err(ModelError::Dimension("horizon must be at least 1".into()));
        }
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let preds = rollout_vars(&mut tape, &p, &self.config, &[observed], horizon, None)?;
        let k = self.config.entry_count();
        Ok(preds.iter().map(|&v| unstack(tape.value(v), k).remove(0)).collect())
    }
}
