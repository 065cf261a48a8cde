//! Series ingestion and the window/patch pipeline feeding the model.

mod patch;
mod split;
mod table;
mod window;

pub use patch::{mask_count, mask_history, mask_patches, patch_count, patchify, PatchSet};
pub use split::{split, standardize, SplitMode, SplitSpec, Scaler, Splits};
pub use table::{load_csv, write_csv, SeriesTable};
pub use window::{make_windows, WindowBatch, WindowOrder, WindowSet};
