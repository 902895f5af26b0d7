//! Pre-norm transformer encoder with `K` extra CLS tokens.
//!
//! After each configured layer, the residual stream at the position of `[Ck]`
//! is replaced by `L_{l,k}(h)`, a per-token affine map. The final hidden state
//! at `[Ck]` is projected by a bias-free per-token head `W_{O,k}`, and the
//! concatenation of all `K` CLS states feeds the sentence-order projection.

mod config;
mod forward;
mod params;

pub use config::{LossWeights, ModelConfig};
pub use forward::{encode, forward, forward_no_insert, per_cls_linear, EncoderOutput};
pub use params::{init_encoder_params, BoundParams, ParamSet};
