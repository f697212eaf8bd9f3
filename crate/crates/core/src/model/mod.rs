//! The mesh-recovery network and its configuration.

pub mod config;
pub mod net;
pub mod params;
pub mod posenc;

pub use config::{count_parameters, MaskMode, ModelConfig, ParamCounts, PositionalEncoding, Variant};
pub use net::{
    read_checkpoint, AttentionCapture, Model, ModelOutput, OutputVars, PassVars, ReduceStream,
};
pub use params::ParamStore;
