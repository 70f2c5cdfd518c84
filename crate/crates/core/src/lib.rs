//! Token-level visual dependence toolkit.
//!
//! Measures how strongly each generated token relies on the conditioning
//! signal by comparing its probability under a clean and a diffusion-noised
//! condition, classifies tokens into image-positive / image-invariant /
//! image-negative groups, and uses those measurements to re-weight the
//! per-token training loss, rank training samples for filtering, and analyse
//! object hallucinations.
//!
//! A synthetic scene-captioning corpus ([`synth`]) and a small recurrent
//! captioner with hand-written gradients ([`model`]) make the whole loop
//! runnable on a CPU in minutes.

pub mod dependence;
pub mod error;
pub mod exec;
pub mod filter;
pub mod halleval;
pub mod model;
pub mod noise;
pub mod pipeline;
pub mod reweight;
pub mod seed;
pub mod synth;
pub mod trace;

pub use dependence::{
    classify, profile_trace, sample_dependence, visual_dependence, DependenceProfile, TokenClass,
};
pub use error::{Error, Result};
pub use exec::Execution;
pub use noise::NoiseSchedule;
pub use reweight::{LossMode, ReweightConfig, WeightVector};
pub use trace::{TokenTrace, TraceFile, TraceHeader};
