//! Dual-stream blur-robust object detector built on the `dreb-tensor`
//! engine: attention-gated fusion (MAGFF) and frequency-domain amplitude
//! modulation (LFAMM) blocks, the detection + restoration network with its
//! two-phase schedule, target encoding and losses, motion-blur synthesis,
//! and detection metrics.

pub mod blocks;
pub mod blur;
pub mod decode;
mod error;
pub mod flops;
pub mod lfamm;
pub mod losses;
pub mod magff;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod targets;

pub use error::{CoreError, Result};
pub use model::{
    build_model, BrabOutputs, BrabShallow, DetOutputs, Model, ModelConfig, Phase, Variant,
};
