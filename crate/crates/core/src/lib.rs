//! Latent class models for binary responses: spectral estimation from
//! three-view moments, EM and classification EM refinement, information
//! criteria for the number of classes, simulators and evaluation metrics.

pub mod em;
pub mod error;
pub mod evaluation;
pub mod moments;
pub mod selection;
pub mod simulate;
pub mod spectral;
pub mod tensor;
pub mod types;

pub use error::{LcmError, Result};
pub use types::{
    FitResult, ItemParams, LatentAssignment, MixingWeights, ModelKind, ResponseMatrix,
};
