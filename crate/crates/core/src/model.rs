//! Model configuration and named parameter containers.
//!
//! Parameter structs are generic over their leaf type: `Tensor` for stored
//! values, `Var` once bound to a tape, `Vec<usize>` for shapes. Every container
//! exposes `map`, which visits leaves in a fixed order under stable dotted names.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::skeleton::{ChainLayout, ChainRole};

/// Number of gated channels per encoder cell: input, left, forget (same cell),
/// right, spatial, global spatial, global temporal, output, candidate.
pub const CELL_GATES: usize = 9;

/// Column blocks of the stacked encoder gate matrices.
pub mod gate {
    pub const INPUT: usize = 0;
    pub const LEFT: usize = 1;
    pub const SAME: usize = 2;
    pub const RIGHT: usize = 3;
    pub const SPATIAL: usize = 4;
    pub const GLOBAL_SPATIAL: usize = 5;
    pub const GLOBAL_TEMPORAL: usize = 6;
    pub const OUTPUT: usize = 7;
    pub const CANDIDATE: usize = 8;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("parameter `{name}` has shape {got:?}, expected {expected:?}")]
    ParameterShape { name: String, expected: Vec<usize>, got: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub layers: usize,
    pub disable_global_temporal: bool,
    pub disable_global_spatial: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { hidden: 20, layers: 10, disable_global_temporal: false, disable_global_spatial: false }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecoderConfig {
    /// Hidden width of the arm and leg LSTMs; defaults to the overall width.
    pub limb_hidden: Option<usize>,
    /// Swap the chain-structured stack for a plain two-layer LSTM.
    pub replace_lstm: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub layout: ChainLayout,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    pub fn new(layout: ChainLayout) -> Self {
        Self { layout, encoder: EncoderConfig::default(), decoder: DecoderConfig::default() }
    }

    pub fn entry_count(&self) -> usize {
        self.layout.entry_count()
    }

    /// Width of the overall and spine decoder layers: one encoder hidden vector per entry.
    pub fn decoder_hidden(&self) -> usize {
        self.entry_count() * self.encoder.hidden
    }

    pub fn limb_hidden(&self) -> usize {
        self.decoder.limb_hidden.unwrap_or_else(|| self.decoder_hidden())
    }

    pub fn has_role(&self, role: ChainRole) -> bool {
        self.layout.chains().iter().any(|(r, k)| *r == role && *k > 0)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.encoder.hidden == 0 {
            return Err(ModelError::Config("encoder hidden size must be positive".into()));
        }
        if self.encoder.layers == 0 {
            return Err(ModelError::Config("encoder needs at least one layer".into()));
        }
        if self.entry_count() == 0 {
            return Err(ModelError::Config("layout has no rotation entries".into()));
        }
        if self.decoder.limb_hidden == Some(0) {
            return Err(ModelError::Config("limb hidden size must be positive".into()));
        }
        Ok(())
    }
}

type Visitor<'f, 'a, T, U> = dyn FnMut(&str, &'a T) -> U + 'f;

/// Stacked gate parameters of an encoder cell; each matrix has `CELL_GATES * hidden` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams<T> {
    /// Pose input, `3 x 9H`.
    pub pose: T,
    /// Concatenated left/same/right hidden states, `3H x 9H`.
    pub temporal: T,
    /// Hidden state of the previous entry in the chain, `H x 9H`.
    pub spatial: T,
    /// Global spatial state of the cell's frame, `H x 9H`.
    pub global_spatial: T,
    /// Global temporal state of the cell's entry, `H x 9H`.
    pub global_temporal: T,
    pub bias: T,
}

impl<T> CellParams<T> {
    pub fn map<'a, U>(&'a self, prefix: &str, f: &mut Visitor<'_, 'a, T, U>) -> CellParams<U> {
        CellParams {
            pose: f(&format!("{prefix}.pose"), &self.pose),
            temporal: f(&format!("{prefix}.temporal"), &self.temporal),
            spatial: f(&format!("{prefix}.spatial"), &self.spatial),
            global_spatial: f(&format!("{prefix}.global_spatial"), &self.global_spatial),
            global_temporal: f(&format!("{prefix}.global_temporal"), &self.global_temporal),
            bias: f(&format!("{prefix}.bias"), &self.bias),
        }
    }
}

/// One sigmoid gate of a global state update, reading a hidden vector and the previous global state.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalGate<T> {
    pub hidden: T,
    pub state: T,
    pub bias: T,
}

impl<T> GlobalGate<T> {
    pub fn map<'a, U>(&'a self, prefix: &str, f: &mut Visitor<'_, 'a, T, U>) -> GlobalGate<U> {
        GlobalGate {
            hidden: f(&format!("{prefix}.hidden"), &self.hidden),
            state: f(&format!("{prefix}.state"), &self.state),
            bias: f(&format!("{prefix}.bias"), &self.bias),
        }
    }
}

/// Parameters of a global (temporal or spatial) state update.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalParams<T> {
    /// Per-cell forget gate applied to each member cell.
    pub cell: GlobalGate<T>,
    /// Forget gate on the previous global cell.
    pub keep: GlobalGate<T>,
    pub output: GlobalGate<T>,
}

impl<T> GlobalParams<T> {
    pub fn map<'a, U>(&'a self, prefix: &str, f: &mut Visitor<'_, 'a, T, U>) -> GlobalParams<U> {
        GlobalParams {
            cell: self.cell.map(&format!("{prefix}.cell"), f),
            keep: self.keep.map(&format!("{prefix}.keep"), f),
            output: self.output.map(&format!("{prefix}.output"), f),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub embed_weight: T,
    pub embed_bias: T,
    pub cell: CellParams<T>,
    pub temporal: GlobalParams<T>,
    pub spatial: GlobalParams<T>,
}

impl<T> EncoderParams<T> {
    pub fn map<'a, U>(&'a self, prefix: &str, f: &mut Visitor<'_, 'a, T, U>) -> EncoderParams<U> {
        EncoderParams {
            embed_weight: f(&format!("{prefix}.embed.weight"), &self.embed_weight),
            embed_bias: f(&format!("{prefix}.embed.bias"), &self.embed_bias),
            cell: self.cell.map(&format!("{prefix}.cell"), f),
            temporal: self.temporal.map(&format!("{prefix}.global_temporal"), f),
            spatial: self.spatial.map(&format!("{prefix}.global_spatial"), f),
        }
    }
}

/// Standard LSTM; gate column blocks are input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T> {
    pub input: T,
    pub recurrent: T,
    pub bias: T,
}

impl<T> LstmParams<T> {
    pub fn map<'a, U>(&'a self, prefix: &str, f: &mut Visitor<'_, 'a, T, U>) -> LstmParams<U> {
        LstmParams {
            input: f(&format!("{prefix}.input"), &self.input),
            recurrent: f(&format!("{prefix}.recurrent"), &self.recurrent),
            bias: f(&format!("{prefix}.bias"), &self.bias),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection<T> {
    pub weight: T,
    pub bias: T,
}

impl<T> Projection<T> {
    pub fn map<'a, U>(&'a self, prefix: &str, f: &mut Visitor<'_, 'a, T, U>) -> Projection<U> {
        Projection {
            weight: f(&format!("{prefix}.weight"), &self.weight),
            bias: f(&format!("{prefix}.bias"), &self.bias),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecoderParams<T> {
    /// Overall LSTM, then spine, then arms and legs; one projection per chain.
    Structured {
        overall: LstmParams<T>,
        spine: LstmParams<T>,
        arm: Option<LstmParams<T>>,
        leg: Option<LstmParams<T>>,
        projections: Vec<Projection<T>>,
    },
    /// Two stacked LSTMs over the whole pose and one projection.
    Plain { layers: Vec<LstmParams<T>>, projection: Projection<T> },
}

impl<T> DecoderParams<T> {
    pub fn map<'a, U>(&'a self, prefix: &str, f: &mut Visitor<'_, 'a, T, U>) -> DecoderParams<U> {
        match self {
            DecoderParams::Structured { overall, spine, arm, leg, projections } => DecoderParams::Structured {
                overall: overall.map(&format!("{prefix}.overall"), f),
                spine: spine.map(&format!("{prefix}.spine"), f),
                arm: arm.as_ref().map(|p| p.map(&format!("{prefix}.arm"), f)),
                leg: leg.as_ref().map(|p| p.map(&format!("{prefix}.leg"), f)),
                projections: projections
                    .iter()
                    .enumerate()
                    .map(|(c, p)| p.map(&format!("{prefix}.projection.{c}"), f))
                    .collect(),
            },
            DecoderParams::Plain { layers, projection } => DecoderParams::Plain {
                layers: layers.iter().enumerate().map(|(i, p)| p.map(&format!("{prefix}.lstm.{i}"), f)).collect(),
                projection: projection.map(&format!("{prefix}.projection"), f),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub encoder: EncoderParams<T>,
    pub decoder: DecoderParams<T>,
}

impl<T> ModelParams<T> {
    pub fn map<'a, U>(&'a self, f: &mut Visitor<'_, 'a, T, U>) -> ModelParams<U> {
        ModelParams { encoder: self.encoder.map("encoder", f), decoder: self.decoder.map("decoder", f) }
    }

    /// Leaves in canonical order with their names.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.map(&mut |name, t| out.push((name.to_string(), t)));
        out
    }

    /// Same structure with leaves taken from `leaves` in canonical order.
    pub fn with_leaves<U: Clone>(&self, leaves: &[U]) -> Result<ModelParams<U>, ModelError> {
        let mut count = 0;
        self.map(&mut |_, _| count += 1);
        if count != leaves.len() {
            return Err(ModelError::Dimension(format!("{} leaves for {count} parameters", leaves.len())));
        }
        let mut it = leaves.iter();
        Ok(self.map(&mut |_, _| it.next().expect("count checked").clone()))
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.map(&mut |name, _| out.push(name.to_string()));
        out
    }
}

fn lstm_shape(input: usize, hidden: usize) -> LstmParams<Vec<usize>> {
    LstmParams { input: vec![input, 4 * hidden], recurrent: vec![hidden, 4 * hidden], bias: vec![1, 4 * hidden] }
}

fn global_shape(h: usize) -> GlobalParams<Vec<usize>> {
    let gate = || GlobalGate { hidden: vec![h, h], state: vec![h, h], bias: vec![1, h] };
    GlobalParams { cell: gate(), keep: gate(), output: gate() }
}

impl ModelParams<Vec<usize>> {
    /// Shape of every parameter for `config`.
    pub fn shapes(config: &ModelConfig) -> Self {
        let h = config.encoder.hidden;
        let g = CELL_GATES * h;
        let encoder = EncoderParams {
            embed_weight: vec![3, h],
            embed_bias: vec![1, h],
            cell: CellParams {
                pose: vec![3, g],
                temporal: vec![3 * h, g],
                spatial: vec![h, g],
                global_spatial: vec![h, g],
                global_temporal: vec![h, g],
                bias: vec![1, g],
            },
            temporal: global_shape(h),
            spatial: global_shape(h),
        };
        let k = config.entry_count();
        let dh = config.decoder_hidden();
        let decoder = if config.decoder.replace_lstm {
            DecoderParams::Plain {
                layers: vec![lstm_shape(3 * k, dh), lstm_shape(dh, dh)],
                projection: Projection { weight: vec![dh, 3 * k], bias: vec![1, 3 * k] },
            }
        } else {
            let lh = config.limb_hidden();
            let limb = |role| config.has_role(role).then(|| lstm_shape(2 * dh, lh));
            DecoderParams::Structured {
                overall: lstm_shape(3 * k, dh),
                spine: lstm_shape(dh, dh),
                arm: limb(ChainRole::Arm),
                leg: limb(ChainRole::Leg),
                projections: config
                    .layout
                    .chains()
                    .iter()
                    .map(|&(role, kc)| {
                        let from = if role == ChainRole::Spine { dh } else { lh };
                        Projection { weight: vec![from, 3 * kc], bias: vec![1, 3 * kc] }
                    })
                    .collect(),
            }
        };
        ModelParams { encoder, decoder }
    }
}

impl ModelParams<Tensor> {
    /// Gaussian weights with standard deviation `std`, zero biases.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, std: f64, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let normal = Normal::new(0.0, std).map_err(|e| ModelError::Config(format!("initialization std {std}: {e}")))?;
        Ok(ModelParams::shapes(config).map(&mut |name, shape| {
            if name.ends_with("bias") {
                Tensor::zeros(shape)
            } else {
                let n = shape.iter().product();
                let data = (0..n).map(|_| normal.sample(rng)).collect();
                Tensor::new(shape.clone(), data).expect("sample count matches shape")
            }
        }))
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        ModelParams::shapes(config).map(&mut |_, shape| Tensor::zeros(shape))
    }

    /// Assembles parameters from named tensors, checking names and shapes against `config`.
    pub fn from_named(config: &ModelConfig, tensors: &[(String, Tensor)]) -> Result<Self, ModelError> {
        let mut err = None;
        let params =
            ModelParams::shapes(config).map(&mut |name, shape| match tensors.iter().find(|(n, _)| n == name) {
                Some((_, t)) if t.shape() == shape.as_slice() => t.clone(),
                Some((_, t)) => {
                    err.get_or_insert(ModelError::ParameterShape {
                        name: name.to_string(),
                        expected: shape.clone(),
                        got: t.shape().to_vec(),
                    });
                    Tensor::zeros(shape)
                }
                None => {
                    err.get_or_insert(ModelError::MissingParameter(name.to_string()));
                    Tensor::zeros(shape)
                }
            });
        match err {
            Some(e) => Err(e),
            None => Ok(params),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> ModelParams<Var> {
        self.map(&mut |_, t| tape.leaf(t.clone()))
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.all_finite())
    }
}

impl ModelParams<Var> {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.map(&mut |_, v| out.push(*v));
        out
    }
}
