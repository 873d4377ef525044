//! Kinematic topologies, motion sequences and their file formats, window
//! sampling, and a synthetic motion generator.

mod motion;
mod synth;
mod topology;

use thiserror::Error;

use crate::geometry::GeometryError;

pub use motion::{
    normalize_lengths, resample_fps, sample_windows, sample_windows_with, window_offsets, MotionData, MotionFormat,
    MotionSequence, SampleWindow,
};
pub use synth::{synth_motion, SynthKind};
pub use topology::{Chain, ChainLayout, ChainRole, SkeletonTopology};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SkeletonError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid topology: {0}")]
    Validation(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("no frames to process")]
    EmptyInput,
    #[error("cannot resample {fps} fps to {target} fps")]
    UnsupportedRate { fps: f64, target: f64 },
    #[error("sequence has {len} frames, {needed} needed")]
    SequenceTooShort { len: usize, needed: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("expected {expected} frames, sequence holds {found} frames")]
    WrongFrameKind { expected: &'static str, found: &'static str },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
