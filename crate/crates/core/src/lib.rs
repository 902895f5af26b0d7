//! Multi-CLS transformer encoders at desk scale.
//!
//! A small encoder carries `K` extra CLS tokens whose hidden states are pushed
//! apart by per-token linear layers inserted between transformer blocks. It is
//! pretrained with a multi-CLS quick-thoughts objective that uses the sequence
//! after the positive as a hard negative, fine-tuned through a mean-centred
//! aggregation of the CLS states, and inspected with calibration and
//! diversity tools.

pub mod analysis;
pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod error;
pub mod finetune;
pub mod numkernel;
pub mod pretrain;
pub mod rng;
pub mod synth;
pub mod textpipe;

pub use error::{Error, Result};
pub use numkernel::{Graph, Tensor, Var};
