use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{mask_patches, patchify, WindowBatch, WindowOrder, WindowSet};
use crate::error::{Error, Result};
use crate::model::{bind, is_forecast_head, save_checkpoint, Forward, ModelConfig, ModelParams};
use crate::numerics::Graph;

use super::adam::{adam_step, OptimState};
use super::loss::{forecast_loss, masked_mse};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Head,
    Finetune,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Pretrain, Stage::Head, Stage::Finetune];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Head => "head",
            Stage::Finetune => "finetune",
        }
    }

    /// Whether this stage updates the named parameter.
    pub fn trains(self, name: &str) -> bool {
        match self {
            Stage::Head => is_forecast_head(name),
            Stage::Pretrain | Stage::Finetune => true,
        }
    }

    /// `<run>/stage-<name>-best.ckpt`
    pub fn checkpoint_path(self, run_dir: &Path) -> PathBuf {
        run_dir.join(format!("stage-{}-best.ckpt", self.name()))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Named epoch budgets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 20 / 10 / 100 epochs.
    Paper,
    /// 5 / 3 / 10 epochs.
    #[default]
    Desk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSchedule {
    pub pretrain_epochs: usize,
    pub head_epochs: usize,
    pub finetune_epochs: usize,
    pub lr_pretrain: f64,
    pub lr_head: f64,
    pub lr_finetune: f64,
    pub batch_size: usize,
    pub mask_ratio: f64,
    /// Run seed; supplied by the run configuration rather than stored in it.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for StageSchedule {
    fn default() -> Self {
        Self::for_profile(Profile::Desk)
    }
}

impl StageSchedule {
    pub fn for_profile(profile: Profile) -> Self {
        let (pretrain_epochs, head_epochs, finetune_epochs) = match profile {
            Profile::Paper => (20, 10, 100),
            Profile::Desk => (5, 3, 10),
        };
        StageSchedule {
            pretrain_epochs,
            head_epochs,
            finetune_epochs,
            lr_pretrain: 1e-4,
            lr_head: 1e-3,
            lr_finetune: 1e-4,
            batch_size: 32,
            mask_ratio: 0.5,
            seed: 0,
        }
    }

    pub fn apply_profile(&mut self, profile: Profile) {
        let p = Self::for_profile(profile);
        self.pretrain_epochs = p.pretrain_epochs;
        self.head_epochs = p.head_epochs;
        self.finetune_epochs = p.finetune_epochs;
    }

    pub fn epochs(&self, stage: Stage) -> usize {
        match stage {
            Stage::Pretrain => self.pretrain_epochs,
            Stage::Head => self.head_epochs,
            Stage::Finetune => self.finetune_epochs,
        }
    }

    pub fn lr(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Pretrain => self.lr_pretrain,
            Stage::Head => self.lr_head,
            Stage::Finetune => self.lr_finetune,
        }
    }
}

/// Training and validation windows for one run.
#[derive(Clone, Debug)]
pub struct StageData {
    pub train: WindowSet,
    pub val: WindowSet,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct StageOutcome {
    /// Parameters from the best validation epoch (the input parameters
    /// when the stage ran zero epochs).
    pub params: ModelParams<f32>,
    pub log: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
}

/// splitmix64 over the base seed and a tuple of discriminators.
pub(crate) fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(p);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

fn stage_tag(stage: Stage) -> u64 {
    stage as u64 + 1
}

const VALIDATION: u64 = 0xfa11;

/// Loss of one batch for `stage`, recorded on `graph`. `mask` is the
/// pretraining `(ratio, seed)`.
fn batch_loss(
    graph: &mut Graph<f32>,
    stage: Stage,
    cfg: &ModelConfig,
    params: &ModelParams<f32>,
    batch: &WindowBatch,
    mask: (f64, u64),
    dropout: Option<ChaCha8Rng>,
) -> Result<crate::numerics::Var> {
    let bound = bind(graph, params, |n| stage.trains(n));
    let mut fwd = Forward::new(graph, &bound, cfg);
    if let Some(rng) = dropout {
        fwd = fwd.training(rng);
    }
    match stage {
        Stage::Pretrain => {
            let history = batch.normalized_history();
            let ps = patchify(&history, cfg.patch_len, cfg.stride)?;
            let masked = mask_patches(&ps, mask.0, mask.1)?;
            let (recon, _) = fwd.pretrain(&masked, &history)?;
            masked_mse(graph, recon, &masked)
        }
        Stage::Head | Stage::Finetune => {
            let (pred, _) = fwd.forecast(batch)?;
            forecast_loss(graph, pred, &batch.target_by_channel())
        }
    }
}

fn validation_loss(
    stage: Stage,
    cfg: &ModelConfig,
    params: &ModelParams<f32>,
    val: &WindowSet,
    sched: &StageSchedule,
) -> Result<f64> {
    let (mut total, mut n) = (0.0, 0usize);
    for (i, batch) in val.batches(WindowOrder::Sequential).enumerate() {
        let mut g = Graph::new();
        let mask_seed = derive_seed(sched.seed, &[VALIDATION, i as u64]);
        let loss = batch_loss(&mut g, stage, cfg, params, &batch, (sched.mask_ratio, mask_seed), None)?;
        total += g.value(loss).item() as f64 * batch.batch_size() as f64;
        n += batch.batch_size();
    }
    Ok(total / n as f64)
}

fn check_finite(stage: Stage, epoch: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            stage: stage.name().to_string(),
            epoch,
            loss,
        })
    }
}

/// Trains one stage and returns the best-validation parameters.
///
/// With a `run_dir`, each new best is written to
/// `<run_dir>/stage-<name>-best.ckpt` and every epoch is appended to
/// `<run_dir>/train_log.ndjson`.
pub fn run_stage(
    stage: Stage,
    cfg: &ModelConfig,
    params: ModelParams<f32>,
    data: &StageData,
    sched: &StageSchedule,
    run_dir: Option<&Path>,
) -> Result<StageOutcome> {
    cfg.validate()?;
    params.check(cfg)?;
    let epochs = sched.epochs(stage);
    let mut outcome = StageOutcome {
        params: params.clone(),
        log: Vec::new(),
        best_epoch: None,
        best_val_loss: f64::INFINITY,
    };
    if epochs == 0 {
        return Ok(outcome);
    }
    let mut log_file = match run_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join("train_log.ndjson");
            let f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            Some((path, f))
        }
        None => None,
    };

    let mut current = params;
    let mut opt = OptimState::new(sched.lr(stage));
    let tag = stage_tag(stage);
    for epoch in 1..=epochs {
        let started = Instant::now();
        let order = WindowOrder::Shuffled(derive_seed(sched.seed, &[tag, epoch as u64]));
        let (mut total, mut n) = (0.0f64, 0usize);
        for (step, batch) in data.train.batches(order).enumerate() {
            let step_seed = derive_seed(sched.seed, &[tag, epoch as u64, step as u64]);
            let mut g = Graph::new();
            let dropout = (cfg.dropout > 0.0).then(|| ChaCha8Rng::seed_from_u64(step_seed ^ 1));
            let loss = batch_loss(&mut g, stage, cfg, &current, &batch, (sched.mask_ratio, step_seed), dropout)?;
            let value = g.value(loss).item() as f64;
            check_finite(stage, epoch, value)?;
            let grads = g.backward(loss)?.into_named();
            adam_step(&mut current, &grads, &mut opt)?;
            total += value * batch.batch_size() as f64;
            n += batch.batch_size();
        }
        let train_loss = total / n as f64;
        let val_loss = validation_loss(stage, cfg, &current, &data.val, sched)?;
        check_finite(stage, epoch, val_loss)?;
        let record = EpochRecord {
            stage,
            epoch,
            train_loss,
            val_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "{stage} epoch {epoch}/{epochs}: train {train_loss:.6} val {val_loss:.6} ({:.1}s)",
            record.seconds
        );
        if let Some((path, f)) = log_file.as_mut() {
            let line = serde_json::to_string(&record).expect("serializable record") + "\n";
            f.write_all(line.as_bytes()).map_err(|e| Error::io(&*path, e))?;
        }
        outcome.log.push(record);
        if val_loss < outcome.best_val_loss {
            outcome.best_val_loss = val_loss;
            outcome.best_epoch = Some(epoch);
            outcome.params = current.clone();
            if let Some(dir) = run_dir {
                save_checkpoint(&current, stage.checkpoint_path(dir))?;
            }
        }
    }
    Ok(outcome)
}
