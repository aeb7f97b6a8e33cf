//! Encoder, gated skip connections, one or two decoders and output fusion.

mod config;
mod describe;
mod forward;
mod params;

pub use config::{ArchitectureConfig, Attention, Downsample, DropoutSchedule};
pub use describe::{describe, LayerInfo, ModelDescription};
pub use forward::{bind_params, forward, predict, AttentionMap, Bound, ForwardArtifacts, ForwardOptions};
pub use params::{build_model, count_parameters, param_specs, Init, ModelParams, ParamSpec};
pub use crate::attention::Gating;
