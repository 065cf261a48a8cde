use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::training::{Profile, Stage};

use super::config::{RunConfig, Variant, MAX_SEED};
use super::results::{append_records, format_table, ResultRecord};
use super::runner::{
    evaluate_checkpoint, finetune_from, load_table, prepare, run_ablation, run_name, run_pipeline,
    sweep_history, train_stages,
};

#[derive(Parser, Debug)]
#[command(name = "injecttst", version, about = "Train, evaluate and ablate InjectTST forecasters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(..=MAX_SEED))]
    seed: Option<u64>,
    #[arg(long, value_enum, value_name = "TAG")]
    variant: Option<Variant>,
    /// Forecast horizon T.
    #[arg(long = "pred-len", value_name = "N")]
    pred_len: Option<usize>,
    /// Run directories and `results.ndjson` go here.
    #[arg(long, value_name = "DIR", default_value = "runs")]
    out: PathBuf,
    /// Epoch budget: `paper` is 20/10/100, `desk` 5/3/10.
    #[arg(long, value_enum)]
    profile: Option<Profile>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Masked-patch pretraining only.
    Pretrain(Common),
    /// Head then full finetuning; runs pretraining first unless given a checkpoint.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Start from these parameters (usually `stage-pretrain-best.ckpt`).
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Test-split metrics of saved parameters.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Every listed variant at every listed horizon.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = Variant::ABLATION)]
        variants: Vec<Variant>,
        /// Horizons; defaults to the configured one.
        #[arg(long = "pred-lens", value_delimiter = ',')]
        pred_lens: Vec<usize>,
    },
    /// One full run per history length.
    SweepHistory {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [48, 96, 192, 336, 512, 720])]
        lengths: Vec<usize>,
    },
    /// Last-value persistence forecaster.
    Baseline(Common),
}

/// Configuration errors are usage errors (exit 2); everything after the
/// configuration is loaded is a runtime failure (exit 1).
enum Failure {
    Usage(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn resolve(common: &Common) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(Failure::Usage)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(v) = common.variant {
        cfg.variant = v;
    }
    if let Some(t) = common.pred_len {
        cfg.window.horizon = t;
    }
    if let Some(p) = common.profile {
        cfg = cfg.with_profile(p);
    }
    cfg.validate().map_err(Failure::Usage)?;
    Ok(cfg)
}

fn emit(out: &Path, records: &[ResultRecord]) -> Result<()> {
    append_records(out.join("results.ndjson"), records)?;
    print!("{}", format_table(records));
    Ok(())
}

fn require_trained(cfg: &RunConfig) -> Result<()> {
    if cfg.variant.is_baseline() {
        return Err(Error::Config("the persistence baseline has no parameters to train".into()));
    }
    Ok(())
}

fn execute(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Pretrain(common) => {
            let cfg = resolve(&common)?;
            require_trained(&cfg).map_err(Failure::Usage)?;
            let prep = prepare(&cfg, &load_table(&cfg)?)?;
            let model = cfg.model_config(prep.channels());
            let run_dir = common.out.join(run_name(&cfg));
            let init = crate::model::ModelParams::init(&model, cfg.seed)?;
            let (_, log, ckpt) = train_stages(&cfg, &prep, init, &[Stage::Pretrain], Some(&run_dir))?;
            let best = log.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
            println!("pretrain: {} epochs, best validation masked MSE {best:.6}", log.len());
            if let Some(p) = ckpt {
                println!("checkpoint: {}", p.display());
            }
        }
        Command::Finetune { common, checkpoint } => {
            let cfg = resolve(&common)?;
            require_trained(&cfg).map_err(Failure::Usage)?;
            let outcome = match checkpoint {
                None => run_pipeline(&cfg, Some(&common.out))?,
                Some(path) => finetune_from(&cfg, &path, Some(&common.out))?,
            };
            emit(&common.out, &[outcome.record])?;
        }
        Command::Evaluate { common, checkpoint } => {
            let cfg = resolve(&common)?;
            let outcome = evaluate_checkpoint(&cfg, &checkpoint)?;
            emit(&common.out, &[outcome.record])?;
        }
        Command::Ablate { common, variants, pred_lens } => {
            let cfg = resolve(&common)?;
            let records = run_ablation(&cfg, &variants, &pred_lens, Some(&common.out)).map_err(|e| match e {
                Error::Config(_) => Failure::Usage(e),
                e => Failure::Runtime(e),
            })?;
            emit(&common.out, &records)?;
        }
        Command::SweepHistory { common, lengths } => {
            let cfg = resolve(&common)?;
            let records = sweep_history(&cfg, &lengths, Some(&common.out)).map_err(|e| match e {
                Error::Config(_) => Failure::Usage(e),
                e => Failure::Runtime(e),
            })?;
            emit(&common.out, &records)?;
        }
        Command::Baseline(common) => {
            let mut cfg = resolve(&common)?;
            cfg.variant = Variant::BaselinePersistence;
            let outcome = run_pipeline(&cfg, None)?;
            emit(&common.out, &[outcome.record])?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 2 for usage or configuration errors,
/// 1 for failures while running.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}
