use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use crate::data::{load_csv, make_windows, split, Scaler, SeriesTable, WindowSet};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, ModelParams};
use crate::training::{
    evaluate, evaluate_with, persistence_forecast, run_stage, EpochRecord, EvalReport, Stage,
    StageData,
};

use super::config::{DataSource, RunConfig, Variant};
use super::results::ResultRecord;
use super::synthetic::{lead_lag, sine_mixture};

/// Environment variable capping the number of ablation workers.
pub const THREADS_ENV: &str = "INJECTTST_THREADS";

/// Windowed splits for one (lookback, horizon) pair.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub scaler: Scaler,
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
}

impl Prepared {
    pub fn channels(&self) -> usize {
        self.train.channels()
    }

    fn metric_scaler(&self, cfg: &RunConfig) -> Option<&Scaler> {
        cfg.data.destandardize_metrics.then_some(&self.scaler)
    }
}

/// Result of one configuration: its record plus the pieces behind it.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub record: ResultRecord,
    pub report: EvalReport,
    /// `None` for the persistence baseline.
    pub params: Option<ModelParams<f32>>,
    pub log: Vec<EpochRecord>,
    pub run_dir: Option<PathBuf>,
}

pub fn load_table(cfg: &RunConfig) -> Result<SeriesTable> {
    let d = &cfg.data;
    match d.source {
        DataSource::Csv => {
            let path = d
                .path
                .as_ref()
                .ok_or_else(|| Error::Config("data.source = \"csv\" needs data.path".into()))?;
            load_csv(path)
        }
        DataSource::Sine => sine_mixture(d.rows, d.channels, d.noise, cfg.seed),
        DataSource::LeadLag => lead_lag(d.rows, d.channels, d.lag, d.noise, cfg.seed),
    }
}

/// Splits `table`, fits the scaler on the training rows and windows all
/// three parts. Validation and test windows borrow their first `L` history
/// rows from the preceding part so every target row belongs to its split.
pub fn prepare(cfg: &RunConfig, table: &SeriesTable) -> Result<Prepared> {
    let (l, t, b) = (cfg.window.lookback, cfg.window.horizon, cfg.train.batch_size);
    let parts = split(table, cfg.data.split)?;
    let scaler = if cfg.data.standardize {
        Scaler::fit(&parts.train)
    } else {
        Scaler::identity(table.channels())
    };
    let full = scaler.transform(table);
    let train = full.slice_rows(0, parts.spec.train_end);
    let val = parts.spec.val_with_lookback(&full, l);
    let test = parts.spec.test_with_lookback(&full, l);
    let windows = |part: &SeriesTable, name: &str| {
        make_windows(part, l, t, b).map_err(|e| Error::Sizing(format!("{name} split: {e}")))
    };
    Ok(Prepared {
        train: windows(&train, "train")?,
        val: windows(&val, "validation")?,
        test: windows(&test, "test")?,
        scaler,
    })
}

/// `<variant>-L<lookback>-T<horizon>-s<seed>`
pub fn run_name(cfg: &RunConfig) -> String {
    format!("{}-L{}-T{}-s{}", cfg.variant, cfg.window.lookback, cfg.window.horizon, cfg.seed)
}

/// Repeats each window's last value; see [`persistence_forecast`].
pub fn baseline_persistence(test: &WindowSet, scaler: Option<&Scaler>) -> Result<EvalReport> {
    evaluate_with(test, scaler, |b| Ok(persistence_forecast(b)))
}

fn record(cfg: &RunConfig, report: &EvalReport, epochs: usize, seconds: f64, ckpt: Option<&Path>) -> ResultRecord {
    ResultRecord {
        digest: cfg.digest(),
        variant: cfg.variant,
        horizon: cfg.window.horizon,
        lookback: cfg.window.lookback,
        seed: cfg.seed,
        mse: Some(report.mse),
        mae: Some(report.mae),
        epochs,
        wall_seconds: seconds,
        checkpoint: ckpt.map(|p| p.display().to_string()),
        error: None,
    }
}

fn failed(cfg: &RunConfig, err: &Error) -> ResultRecord {
    ResultRecord {
        digest: cfg.digest(),
        variant: cfg.variant,
        horizon: cfg.window.horizon,
        lookback: cfg.window.lookback,
        seed: cfg.seed,
        mse: None,
        mae: None,
        epochs: 0,
        wall_seconds: 0.0,
        checkpoint: None,
        error: Some(err.to_string()),
    }
}

/// Runs `stages` in order from `init`, chaining each stage's best
/// parameters into the next. Returns the final parameters, the combined
/// log and the checkpoint of the last stage that trained.
pub fn train_stages(
    cfg: &RunConfig,
    prep: &Prepared,
    init: ModelParams<f32>,
    stages: &[Stage],
    run_dir: Option<&Path>,
) -> Result<(ModelParams<f32>, Vec<EpochRecord>, Option<PathBuf>)> {
    let model = cfg.model_config(prep.channels());
    let sched = cfg.schedule();
    let data = StageData {
        train: prep.train.clone(),
        val: prep.val.clone(),
    };
    let mut params = init;
    let mut log = Vec::new();
    let mut ckpt = None;
    for &stage in stages {
        let out = run_stage(stage, &model, params, &data, &sched, run_dir)?;
        if !out.log.is_empty() {
            ckpt = run_dir.map(|d| stage.checkpoint_path(d));
        }
        log.extend(out.log);
        params = out.params;
    }
    Ok((params, log, ckpt))
}

fn run_prepared(cfg: &RunConfig, prep: &Prepared, out: Option<&Path>) -> Result<RunOutcome> {
    let started = Instant::now();
    if cfg.variant.is_baseline() {
        let report = baseline_persistence(&prep.test, prep.metric_scaler(cfg))?;
        return Ok(RunOutcome {
            record: record(cfg, &report, 0, started.elapsed().as_secs_f64(), None),
            report,
            params: None,
            log: Vec::new(),
            run_dir: None,
        });
    }
    let model = cfg.model_config(prep.channels());
    let run_dir = out.map(|o| o.join(run_name(cfg)));
    let init = ModelParams::init(&model, cfg.seed)?;
    let (params, log, ckpt) = train_stages(cfg, prep, init, &Stage::ALL, run_dir.as_deref())?;
    let report = evaluate(&params, &model, &prep.test, prep.metric_scaler(cfg))?;
    Ok(RunOutcome {
        record: record(cfg, &report, log.len(), started.elapsed().as_secs_f64(), ckpt.as_deref()),
        report,
        params: Some(params),
        log,
        run_dir,
    })
}

/// Full pretrain → head → finetune → evaluate run. With `out`, stage
/// checkpoints and the training log go under `out/<run name>/`.
pub fn run_pipeline(cfg: &RunConfig, out: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let table = load_table(cfg)?;
    run_prepared(cfg, &prepare(cfg, &table)?, out)
}

/// Head and full finetuning starting from saved (typically pretrained)
/// parameters, then evaluation.
pub fn finetune_from(cfg: &RunConfig, init: &Path, out: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let prep = prepare(cfg, &load_table(cfg)?)?;
    let model = cfg.model_config(prep.channels());
    let params = load_checkpoint(init)?;
    params.check(&model)?;
    let run_dir = out.map(|o| o.join(run_name(cfg)));
    let (params, log, ckpt) = train_stages(cfg, &prep, params, &[Stage::Head, Stage::Finetune], run_dir.as_deref())?;
    let report = evaluate(&params, &model, &prep.test, prep.metric_scaler(cfg))?;
    Ok(RunOutcome {
        record: record(cfg, &report, log.len(), started.elapsed().as_secs_f64(), ckpt.as_deref()),
        report,
        params: Some(params),
        log,
        run_dir,
    })
}

/// Evaluates saved parameters on the test split of `cfg`'s data.
pub fn evaluate_checkpoint(cfg: &RunConfig, checkpoint: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let prep = prepare(cfg, &load_table(cfg)?)?;
    let model = cfg.model_config(prep.channels());
    let params = load_checkpoint(checkpoint)?;
    params.check(&model)?;
    let report = evaluate(&params, &model, &prep.test, prep.metric_scaler(cfg))?;
    Ok(RunOutcome {
        record: record(cfg, &report, 0, started.elapsed().as_secs_f64(), Some(checkpoint)),
        report,
        params: Some(params),
        log: Vec::new(),
        run_dir: None,
    })
}

/// Worker count: available cores, capped by `INJECTTST_THREADS`.
pub fn worker_threads() -> usize {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(cap) if cap > 0 => cap.min(cores),
        _ => cores,
    }
}

/// Runs `cells` on up to `threads` workers and returns records in cell
/// order. Failures become error records.
fn run_cells(cells: Vec<(RunConfig, Result<Prepared>)>, out: Option<&Path>, threads: usize) -> Vec<ResultRecord> {
    let slots: Vec<Mutex<Option<ResultRecord>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some((cfg, prep)) = cells.get(i) else { break };
        let rec = match prep {
            Ok(p) => run_prepared(cfg, p, out).map(|o| o.record).unwrap_or_else(|e| failed(cfg, &e)),
            Err(e) => failed(cfg, e),
        };
        if let Some(e) = &rec.error {
            log::warn!("{} failed: {e}", run_name(cfg));
        }
        *slots[i].lock().expect("result slot") = Some(rec);
    };
    let threads = threads.clamp(1, cells.len().max(1));
    if threads == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(work);
            }
        });
    }
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("result slot").expect("every cell ran"))
        .collect()
}

/// Every variant at every horizon, all under `base`'s seed and schedule.
/// The data is loaded once; one failing cell does not stop the others.
pub fn run_ablation(
    base: &RunConfig,
    variants: &[Variant],
    horizons: &[usize],
    out: Option<&Path>,
) -> Result<Vec<ResultRecord>> {
    if variants.is_empty() {
        return Err(Error::Config("ablation needs at least one variant".into()));
    }
    for (i, v) in variants.iter().enumerate() {
        if variants[..i].contains(v) {
            return Err(Error::Config(format!("variant {v} listed twice")));
        }
    }
    let horizons = if horizons.is_empty() { vec![base.window.horizon] } else { horizons.to_vec() };
    for (i, h) in horizons.iter().enumerate() {
        if *h == 0 || horizons[..i].contains(h) {
            return Err(Error::Config(format!("invalid or repeated horizon {h}")));
        }
    }
    base.validate()?;
    let table = load_table(base)?;
    let mut cells = Vec::new();
    for &h in &horizons {
        let mut at_h = base.clone();
        at_h.window.horizon = h;
        let prep = prepare(&at_h, &table);
        for &v in variants {
            let cfg = RunConfig { variant: v, ..at_h.clone() };
            let prep = match &prep {
                Ok(p) => Ok(p.clone()),
                Err(e) => Err(Error::Sizing(e.to_string())),
            };
            cells.push((cfg, prep));
        }
    }
    Ok(run_cells(cells, out, worker_threads()))
}

/// One full pipeline per history length; the patch count follows `L`.
pub fn sweep_history(base: &RunConfig, lengths: &[usize], out: Option<&Path>) -> Result<Vec<ResultRecord>> {
    if lengths.is_empty() {
        return Err(Error::Config("history sweep needs at least one length".into()));
    }
    let pl = base.window.patch_len;
    if let Some(bad) = lengths.iter().find(|&&l| l < pl) {
        return Err(Error::Config(format!("history length {bad} is shorter than the patch length {pl}")));
    }
    base.validate()?;
    let table = load_table(base)?;
    let cells = lengths
        .iter()
        .map(|&l| {
            let mut cfg = base.clone();
            cfg.window.lookback = l;
            let prep = prepare(&cfg, &table);
            (cfg, prep)
        })
        .collect();
    Ok(run_cells(cells, out, worker_threads()))
}
