//! Binary checkpoint: a text header with the layout and run configuration,
//! followed by named little-endian f64 tensors.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::config::RunConfig;
use crate::decoder::Model;
use crate::model::ModelParams;
use crate::skeleton::ChainLayout;

use super::{Adam, TrainConfig, TrainError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STHRNCK1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train: TrainConfig,
    pub iteration: u64,
    /// Optimizer moments; absent for inference-only checkpoints.
    pub adam: Option<Adam>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| TrainError::Format("unexpected end of file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize, TrainError> {
        usize::try_from(self.u64()?).map_err(|_| TrainError::Format("length overflow".into()))
    }

    fn string(&mut self, n: usize) -> Result<String, TrainError> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| TrainError::Format("invalid utf-8".into()))
    }
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.extend((t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend((d as u64).to_le_bytes());
    }
    for &x in t.data() {
        out.extend(x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let run = RunConfig {
            encoder: self.model.config.encoder.clone(),
            decoder: self.model.config.decoder.clone(),
            train: self.train.clone(),
        };
        let header = format!("layout = {}\n{}", self.model.config.layout, run.to_text());
        let mut out = Vec::new();
        out.extend(CHECKPOINT_MAGIC);
        out.extend(CHECKPOINT_VERSION.to_le_bytes());
        out.extend((header.len() as u64).to_le_bytes());
        out.extend(header.as_bytes());
        out.extend(self.iteration.to_le_bytes());
        out.extend(self.adam.as_ref().map_or(0, |a| a.step).to_le_bytes());
        let named = self.model.params.named();
        let moments = if self.adam.is_some() { 2 } else { 0 };
        out.extend(((named.len() * (1 + moments)) as u32).to_le_bytes());
        for (name, t) in &named {
            put_tensor(&mut out, name, t);
        }
        if let Some(adam) = &self.adam {
            for ((name, _), m) in named.iter().zip(&adam.m) {
                put_tensor(&mut out, &format!("adam.m.{name}"), m);
            }
            for ((name, _), v) in named.iter().zip(&adam.v) {
                put_tensor(&mut out, &format!("adam.v.{name}"), v);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(TrainError::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(TrainError::Format(format!("unsupported version {version}")));
        }
        let n = r.len()?;
        let header = r.string(n)?;
        let (first, rest) = header.split_once('\n').unwrap_or((&header, ""));
        let layout: ChainLayout = first
            .strip_prefix("layout = ")
            .ok_or_else(|| TrainError::Format("header lacks a layout line".into()))?
            .parse()
            .map_err(TrainError::Format)?;
        let run = RunConfig::parse(rest).map_err(|e| TrainError::Format(e.to_string()))?;
        let iteration = r.u64()?;
        let adam_step = r.u64()?;
        let count = r.u32()? as usize;
        let mut params = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = r.string(n)?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>, _>>()?;
            let size = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|s| s.checked_mul(8).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| TrainError::Format(format!("tensor `{name}` is too large")))?;
            let data: Vec<f64> =
                r.take(size * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let t = Tensor::new(shape, data).map_err(|e| TrainError::Format(e.to_string()))?;
            if let Some(base) = name.strip_prefix("adam.m.") {
                m.push((base.to_string(), t));
            } else if let Some(base) = name.strip_prefix("adam.v.") {
                v.push((base.to_string(), t));
            } else {
                params.push((name, t));
            }
        }
        if r.pos != bytes.len() {
            return Err(TrainError::Format("trailing bytes".into()));
        }
        let config = run.model_config(layout);
        let model = Model::new(config.clone(), ModelParams::from_named(&config, &params)?)?;
        let adam = if m.is_empty() && v.is_empty() {
            None
        } else {
            let m = ModelParams::from_named(&config, &m)?;
            let v = ModelParams::from_named(&config, &v)?;
            Some(Adam {
                config: run.train.adam,
                step: adam_step,
                m: m.named().into_iter().map(|(_, t)| t.clone()).collect(),
                v: v.named().into_iter().map(|(_, t)| t.clone()).collect(),
            })
        };
        Ok(Self { model, train: run.train, iteration, adam })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| TrainError::Io { path: path.display().to_string(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let bytes = std::fs::read(path)
            .map_err(|e| TrainError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_bytes(&bytes)
    }
}
