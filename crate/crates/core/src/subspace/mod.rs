//! Low-dimensional tuning subspaces over soft prompts: the prompt
//! autoencoder, the subspace abstraction used by coordinate tuning, and the
//! multi-task training loop that finds a shared subspace from a bank of
//! tuned prompts.

pub mod autoencoder;
pub mod msf;
pub mod space;

pub use autoencoder::{autoencoder_param_counts, AutoencoderParams, BoundAutoencoder};
pub use msf::{
    bank_centroid, mean_reconstruction_error, msf_train, MsfConfig, MsfEvalPoint, MsfOutcome,
    MsfSelection, MsfTaskEntry,
};
pub use space::{BackProjection, Subspace, SUBSPACE_KIND};
