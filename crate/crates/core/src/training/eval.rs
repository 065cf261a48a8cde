use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Scaler, WindowBatch, WindowOrder, WindowSet};
use crate::error::{Error, Result};
use crate::model::{predict, ModelConfig, ModelParams};
use crate::numerics::Array;

/// Forecast accuracy over an ordered window stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mse: f64,
    pub mae: f64,
    /// Indexed by forecast step.
    pub horizon_mse: Vec<f64>,
    pub horizon_mae: Vec<f64>,
    /// Indexed by channel.
    pub channel_mse: Vec<f64>,
    pub channel_mae: Vec<f64>,
    pub windows: usize,
    pub seconds: f64,
}

impl EvalReport {
    /// Same metrics, ignoring wall-clock time.
    pub fn same_metrics(&self, other: &EvalReport) -> bool {
        EvalReport {
            seconds: 0.0,
            ..self.clone()
        } == EvalReport {
            seconds: 0.0,
            ..other.clone()
        }
    }
}

/// Evaluates any forecaster producing `B × M × T` predictions. With a
/// `scaler`, predictions and targets are mapped back to original units
/// first; otherwise metrics are in the (standardized) space of the data.
pub fn evaluate_with(
    test: &WindowSet,
    scaler: Option<&Scaler>,
    mut forecast: impl FnMut(&WindowBatch) -> Result<Array<f32>>,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Sizing("evaluation needs at least one window".into()));
    }
    let started = Instant::now();
    let (t_len, m) = (test.horizon(), test.channels());
    let mut sq_h = vec![0.0f64; t_len];
    let mut abs_h = vec![0.0f64; t_len];
    let mut sq_c = vec![0.0f64; m];
    let mut abs_c = vec![0.0f64; m];
    let mut windows = 0usize;
    for batch in test.batches(WindowOrder::Sequential) {
        let pred = forecast(&batch)?;
        let b = batch.batch_size();
        if pred.shape() != [b, m, t_len] {
            return Err(Error::Dimension {
                op: "evaluate",
                lhs: pred.shape().to_vec(),
                rhs: vec![b, m, t_len],
            });
        }
        for w in 0..b {
            for c in 0..m {
                for t in 0..t_len {
                    let mut p = pred.at(&[w, c, t]);
                    let mut y = batch.target.at(&[w, t, c]);
                    if let Some(s) = scaler {
                        p = s.inverse_value(p, c);
                        y = s.inverse_value(y, c);
                    }
                    let e = p as f64 - y as f64;
                    sq_h[t] += e * e;
                    abs_h[t] += e.abs();
                    sq_c[c] += e * e;
                    abs_c[c] += e.abs();
                }
            }
        }
        windows += b;
    }
    let n = (windows * m * t_len) as f64;
    let per = |v: Vec<f64>, d: usize| v.into_iter().map(|x| x / d as f64).collect::<Vec<_>>();
    Ok(EvalReport {
        mse: sq_h.iter().sum::<f64>() / n,
        mae: abs_h.iter().sum::<f64>() / n,
        horizon_mse: per(sq_h, windows * m),
        horizon_mae: per(abs_h, windows * m),
        channel_mse: per(sq_c, windows * t_len),
        channel_mae: per(abs_c, windows * t_len),
        windows,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Evaluates the network on `test` in window order.
pub fn evaluate(
    params: &ModelParams<f32>,
    cfg: &ModelConfig,
    test: &WindowSet,
    scaler: Option<&Scaler>,
) -> Result<EvalReport> {
    evaluate_with(test, scaler, |batch| predict(params, cfg, batch))
}

/// Repeats each window's last value across the horizon: `B × M × T`.
pub fn persistence_forecast(batch: &WindowBatch) -> Array<f32> {
    let (b, m, t) = (batch.batch_size(), batch.channels(), batch.horizon());
    let lv = batch.last_values.data();
    Array::from_fn(&[b, m, t], |i| lv[i / t])
}
