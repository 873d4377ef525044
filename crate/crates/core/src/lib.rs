//! Spatio-temporal hierarchical recurrent network for skeletal motion prediction.
//!
//! Poses are encoded as relative bone rotations in so(3) ([`geometry`]), organised
//! along kinematic chains ([`skeleton`]). A recurrent encoder over the
//! frame × bone grid ([`encoder`]) summarises an observed clip, and a stacked
//! chain-structured decoder ([`decoder`]) rolls out future frames. Everything is
//! differentiated by a small reverse-mode tape ([`autodiff`]).

pub mod autodiff;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod evaluation;
pub mod geometry;
pub mod model;
pub mod plot;
pub mod skeleton;
pub mod training;
