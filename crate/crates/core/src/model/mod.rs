//! The InjectTST network.
//!
//! A forward pass patches each channel, projects patches to tokens
//! (`patch·W + U`, plus the channel identifier row `V[i]`), encodes every
//! channel independently with one shared encoder, and optionally injects a
//! cross-channel summary back into each channel through the SCA block:
//! channel tokens are the queries, global tokens the keys and values.
//! The global summary comes from one of two mixers:
//!
//! - **CaT**: every whole channel becomes one token (`Xᵀ W_mix + V`).
//! - **PaT**: patches at the same position across channels are concatenated
//!   (channel-major) into one token (`grouped · W_mix + U`).

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{MixMode, ModelConfig};
pub use forward::{bind, predict, reconstruct, Bound, Forward, ForwardTrace};
pub use params::{is_forecast_head, ModelParams};
