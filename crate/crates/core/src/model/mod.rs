//! The pan-sharpening network: feature branches, Gumbel mask predictor,
//! high/low frequency expert banks and the gated experts mixture.

mod config;
pub mod layers;
mod moe;
mod network;
mod params;

pub use config::NetworkConfig;
pub use moe::{ExpertBank, Gate, GateWeights, MoeOutput, GATE_SUM_TOL};
pub use network::{
    gumbel_mask, split_frequency, FameNet, FameOutput, FeatureBranch, Fusion, MaskOutput,
    MaskPredictor,
};
pub use params::{Bound, Initializer, ParamId, ParamStore, INIT_SCHEME};
