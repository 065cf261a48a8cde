//! InjectTST: a channel-independent patch Transformer for multivariate
//! time-series forecasting that selectively injects cross-channel
//! ("global") information back into each channel through cross-attention.
//!
//! The crate is layered bottom-up:
//!
//! - [`numerics`]: dense arrays and a reverse-mode tape, plus finite-difference
//!   gradient checking.
//! - [`data`]: CSV ingestion, chronological splits, standardization, sliding
//!   windows, patching and patch masking.
//! - [`model`]: patch embedding with channel identifiers, the
//!   channel-independent encoder, the CaT/PaT global mixers, the
//!   self-contextual attention (SCA) injection block and both heads.
//! - [`training`]: losses, Adam, the three-stage schedule and evaluation.
//! - [`harness`]: run configuration, ablation matrix, history sweep,
//!   persistence baseline and the `injecttst` command line.
//!
//! The guide under `book/` walks through each layer with runnable listings.

pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
