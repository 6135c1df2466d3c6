//! Network definition, parameter storage and checkpoints.

pub mod checkpoint;
pub mod config;
mod network;
pub mod padding;
pub mod params;

pub use config::ModelConfig;
pub use network::{
    parameter_shapes, CdmParams, Conv, DecoderParams, EncoderParams, ForwardVars, Fusion, Layout, Model, StateStackVars,
};
pub use padding::{crop, pad_to_stride, CropRecord};
pub use params::{ParamId, ParamStore};
