//! Run configuration: every encoder, decoder and training setting under a flat
//! key namespace, read from `key = value` files and overridable per key.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::model::{DecoderConfig, EncoderConfig, ModelConfig};
use crate::skeleton::ChainLayout;
use crate::training::{AdamConfig, LossKind, TrainConfig};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
}

/// Every key with its default and a one-line description, in serialization order.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("hidden", "20", "encoder hidden size"),
    ("layers", "10", "encoder recurrent layers"),
    ("disable_global_temporal", "false", "drop the global temporal state"),
    ("disable_global_spatial", "false", "drop the global spatial state"),
    ("limb_hidden", "auto", "arm/leg decoder width (auto = entries x hidden)"),
    ("replace_lstm", "false", "use a plain 2-layer LSTM decoder"),
    ("batch_size", "32", "windows per iteration"),
    ("iterations", "1000", "optimizer steps"),
    ("learning_rate", "0.001", "Adam step size"),
    ("beta1", "0.9", "Adam first-moment decay"),
    ("beta2", "0.999", "Adam second-moment decay"),
    ("epsilon", "0.00000001", "Adam denominator floor"),
    ("observed", "50", "observed frames per window (encoder input plus decoder seed)"),
    ("horizon", "10", "predicted frames per window"),
    ("long_horizon", "100", "predicted frames when long_term is set"),
    ("long_term", "false", "train on long_horizon instead of horizon"),
    ("loss", "weighted", "weighted | l2"),
    ("seed", "0", "random seed for initialization and sampling"),
    ("init_std", "0.1", "standard deviation of initial weights"),
    ("clip_norm", "5", "global gradient-norm cap"),
    ("teacher_forcing", "false", "feed ground truth to the decoder while training"),
    ("checkpoint_every", "0", "write a checkpoint every N iterations (0 = only at the end)"),
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub train: TrainConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn positive<T: PartialOrd + Default>(key: &str, value: &str, v: T) -> Result<T, ConfigError> {
    if v > T::default() {
        Ok(v)
    } else {
        Err(ConfigError::BadValue { key: key.to_string(), value: value.to_string(), reason: "must be positive".into() })
    }
}

impl RunConfig {
    pub fn model_config(&self, layout: ChainLayout) -> ModelConfig {
        ModelConfig { layout, encoder: self.encoder.clone(), decoder: self.decoder.clone() }
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let t = &mut self.train;
        match key.trim() {
            "hidden" => self.encoder.hidden = positive(key, v, parse(key, v)?)?,
            "layers" => self.encoder.layers = positive(key, v, parse(key, v)?)?,
            "disable_global_temporal" => self.encoder.disable_global_temporal = parse(key, v)?,
            "disable_global_spatial" => self.encoder.disable_global_spatial = parse(key, v)?,
            "limb_hidden" => {
                self.decoder.limb_hidden = match v {
                    "auto" => None,
                    _ => Some(positive(key, v, parse(key, v)?)?),
                }
            }
            "replace_lstm" => self.decoder.replace_lstm = parse(key, v)?,
            "batch_size" => t.batch_size = positive(key, v, parse(key, v)?)?,
            "iterations" => t.iterations = parse(key, v)?,
            "learning_rate" => t.adam.learning_rate = positive(key, v, parse(key, v)?)?,
            "beta1" => t.adam.beta1 = unit_interval(key, v)?,
            "beta2" => t.adam.beta2 = unit_interval(key, v)?,
            "epsilon" => t.adam.epsilon = positive(key, v, parse(key, v)?)?,
            "observed" => {
                t.observed = parse(key, v)?;
                if t.observed < 2 {
                    return Err(ConfigError::BadValue {
                        key: key.into(),
                        value: v.into(),
                        reason: "need at least 2 observed frames".into(),
                    });
                }
            }
            "horizon" => t.horizon = positive(key, v, parse(key, v)?)?,
            "long_horizon" => t.long_horizon = positive(key, v, parse(key, v)?)?,
            "long_term" => t.long_term = parse(key, v)?,
            "loss" => t.loss = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "init_std" => t.init_std = positive(key, v, parse(key, v)?)?,
            "clip_norm" => t.clip_norm = positive(key, v, parse(key, v)?)?,
            "teacher_forcing" => t.teacher_forcing = parse(key, v)?,
            "checkpoint_every" => t.checkpoint_every = parse(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Current value of `key` in the same textual form `set` accepts.
    pub fn get(&self, key: &str) -> Result<String, ConfigError> {
        let t = &self.train;
        Ok(match key {
            "hidden" => self.encoder.hidden.to_string(),
            "layers" => self.encoder.layers.to_string(),
            "disable_global_temporal" => self.encoder.disable_global_temporal.to_string(),
            "disable_global_spatial" => self.encoder.disable_global_spatial.to_string(),
            "limb_hidden" => self.decoder.limb_hidden.map_or("auto".into(), |h| h.to_string()),
            "replace_lstm" => self.decoder.replace_lstm.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "iterations" => t.iterations.to_string(),
            "learning_rate" => t.adam.learning_rate.to_string(),
            "beta1" => t.adam.beta1.to_string(),
            "beta2" => t.adam.beta2.to_string(),
            "epsilon" => t.adam.epsilon.to_string(),
            "observed" => t.observed.to_string(),
            "horizon" => t.horizon.to_string(),
            "long_horizon" => t.long_horizon.to_string(),
            "long_term" => t.long_term.to_string(),
            "loss" => t.loss.as_str().to_string(),
            "seed" => t.seed.to_string(),
            "init_std" => t.init_std.to_string(),
            "clip_norm" => t.clip_norm.to_string(),
            "teacher_forcing" => t.teacher_forcing.to_string(),
            "checkpoint_every" => t.checkpoint_every.to_string(),
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        })
    }

    /// Applies every `key = value` line of `text` (blank lines and `#` comments ignored).
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: idx + 1, text: line.to_string() })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// All keys in `KEYS` order; parsing the result reproduces `self`.
    pub fn to_text(&self) -> String {
        KEYS.iter().map(|(k, _, _)| format!("{k} = {}\n", self.get(k).expect("listed key"))).collect()
    }
}

fn unit_interval(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = parse(key, value)?;
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: "must lie in [0, 1)".into(),
        })
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            iterations: 1000,
            adam: AdamConfig::default(),
            observed: 50,
            horizon: 10,
            long_horizon: 100,
            long_term: false,
            loss: LossKind::Weighted,
            seed: 0,
            init_std: 0.1,
            clip_norm: 5.0,
            teacher_forcing: false,
            checkpoint_every: 0,
        }
    }
}
