//! Losses, the Adam optimizer, the three training stages and evaluation.
//!
//! Training runs in three stages over the same parameter set:
//!
//! 1. **pretrain**: half the patches of each channel are zero-filled and the
//!    network reconstructs them; the loss only sees masked patches.
//! 2. **head**: the reconstruction head is swapped for the forecast head,
//!    which is trained alone while everything else stays frozen.
//! 3. **finetune**: every parameter is trained on the forecast loss.
//!
//! Each stage keeps the parameters from its best validation epoch.

mod adam;
mod eval;
mod loss;
mod stage;

pub use adam::{adam_step, OptimState};
pub use eval::{evaluate, evaluate_with, persistence_forecast, EvalReport};
pub use loss::{forecast_loss, masked_mse};
pub use stage::{run_stage, EpochRecord, Profile, Stage, StageData, StageOutcome, StageSchedule};
