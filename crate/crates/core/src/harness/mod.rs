//! Run configuration, the ablation matrix, the history sweep, the
//! persistence baseline and the `injecttst` command line.

mod cli;
mod config;
mod results;
mod runner;
mod synthetic;

pub use cli::cli_main;
pub use config::{ArchConfig, DataConfig, DataSource, RunConfig, Variant, WindowConfig, MAX_SEED};
pub use results::{append_records, format_table, read_records, ResultRecord};
pub use runner::{
    baseline_persistence, evaluate_checkpoint, finetune_from, load_table, prepare, run_ablation, run_pipeline,
    run_name, sweep_history, train_stages, worker_threads, Prepared, RunOutcome, THREADS_ENV,
};
pub use synthetic::{lead_lag, sine_mixture};
