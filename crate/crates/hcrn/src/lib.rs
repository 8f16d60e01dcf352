//! Hierarchical conditional relation networks (HCRN) for video question
//! answering at desk scale.
//!
//! The crate is self-contained: a minimal reverse-mode tensor engine
//! ([`tensor`]), reproducible subset sampling ([`sampler`]), the conditional
//! relation network unit ([`crn`]), input encoders ([`encoders`]), the
//! hierarchical model assembly ([`model`]), answer decoders and losses
//! ([`decoders`]), a synthetic video-QA task generator ([`synth`]), a
//! training/evaluation loop ([`trainer`]) and a cost-model benchmark
//! ([`bench`]).
//!
//! Everything runs in double precision on the CPU and is deterministic
//! under a fixed seed.

pub mod bench;
pub mod config;
pub mod crn;
pub mod decoders;
pub mod encoders;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod sampler;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use params::ModelParams;
pub use tensor::{Tape, Tensor, TensorError, TensorId};
