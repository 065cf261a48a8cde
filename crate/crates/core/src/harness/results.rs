use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::Variant;

/// One evaluated (variant, horizon, lookback, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub digest: String,
    pub variant: Variant,
    pub horizon: usize,
    pub lookback: usize,
    pub seed: u64,
    /// Absent when the run failed.
    pub mse: Option<f64>,
    pub mae: Option<f64>,
    pub epochs: usize,
    pub wall_seconds: f64,
    pub checkpoint: Option<String>,
    pub error: Option<String>,
}

impl ResultRecord {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    /// Metric fields only; wall time and paths differ between runs.
    pub fn same_metrics(&self, other: &ResultRecord) -> bool {
        (self.digest.as_str(), self.variant, self.horizon, self.lookback, self.seed, self.mse, self.mae, self.epochs)
            == (other.digest.as_str(), other.variant, other.horizon, other.lookback, other.seed, other.mse, other.mae, other.epochs)
    }
}

/// Appends one JSON line per record. Each line goes out in a single write on
/// an append-mode handle, so concurrent writers never interleave records.
pub fn append_records(path: impl AsRef<Path>, records: &[ResultRecord]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).expect("serializable record") + "\n";
        f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ResultRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                row: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// Fixed-width table, one row per record.
pub fn format_table(records: &[ResultRecord]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<22} {:>5} {:>5} {:>6} {:>10} {:>10} {:>6} {:>9}",
        "variant", "L", "T", "seed", "mse", "mae", "epochs", "seconds"
    );
    for r in records {
        let metric = |m: Option<f64>| m.map_or("failed".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(
            out,
            "{:<22} {:>5} {:>5} {:>6} {:>10} {:>10} {:>6} {:>9.1}",
            r.variant.tag(),
            r.lookback,
            r.horizon,
            r.seed,
            metric(r.mse),
            metric(r.mae),
            r.epochs,
            r.wall_seconds
        );
        if let Some(e) = &r.error {
            let _ = writeln!(out, "    error: {e}");
        }
    }
    out
}
