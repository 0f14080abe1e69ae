//! Tokenset transformer: parameters, forward pass, spectral-ball projection
//! and checkpoints.

pub mod checkpoint;
mod forward;
mod params;
mod spectral;

pub use forward::{forward, one_layer_aggregate, record_forward, record_mlp, ForwardOutput, LayerVars, ParamVars, Recorded};
pub use params::{LayerParams, MlpParams, ModelConfig, TensorRole, TransformerParams};
pub use spectral::{
    max_spectral_norm, project_matrix, project_spectral_ball, spectral_norm, DEFAULT_MAX_ITERS, DEFAULT_TOL,
};

#[cfg(test)]
mod tests;
