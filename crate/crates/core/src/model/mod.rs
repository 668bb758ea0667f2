//! A small character-level encoder–decoder transformer.

pub mod decode;
pub mod forward;
pub mod params;
pub mod pretrain;
pub mod store;
pub mod vocab;

pub use decode::{greedy_decode, Decoded};
pub use forward::{BoundModel, RMS_EPS};
pub use params::{ModelConfig, ModelParams};
pub use pretrain::{pretrain_copy, PretrainConfig, PretrainReport};
pub use store::{model_checkpoint, model_from_checkpoint, MODEL_KIND};
pub use vocab::{Vocab, BOS_ID, EOS_ID, NUM_SPECIALS};
