use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::Array;

use super::SeriesTable;

/// A batch of `(history, target)` window pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    /// `B × L × M`
    pub history: Array<f32>,
    /// `B × T × M`
    pub target: Array<f32>,
    /// `B × M`, the final history row of each window.
    pub last_values: Array<f32>,
    /// First source row of each window.
    pub starts: Vec<usize>,
}

impl WindowBatch {
    pub fn batch_size(&self) -> usize {
        self.history.shape()[0]
    }

    pub fn lookback(&self) -> usize {
        self.history.shape()[1]
    }

    pub fn horizon(&self) -> usize {
        self.target.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.history.shape()[2]
    }

    /// History with each window's last value subtracted per channel.
    pub fn normalized_history(&self) -> Array<f32> {
        let (l, m) = (self.lookback(), self.channels());
        let lv = self.last_values.data();
        let mut out = self.history.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let b = i / (l * m);
            *v -= lv[b * m + i % m];
        }
        out
    }

    /// Target transposed to `B × M × T`, the layout predictions use.
    pub fn target_by_channel(&self) -> Array<f32> {
        crate::numerics::ops::permute(&self.target, &[0, 2, 1]).expect("rank 3")
    }
}

/// Visit order for a [`WindowSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowOrder {
    Sequential,
    Shuffled(u64),
}

/// All stride-1 windows of a table.
#[derive(Clone, Debug)]
pub struct WindowSet {
    table: SeriesTable,
    lookback: usize,
    horizon: usize,
    batch_size: usize,
}

/// Slides a `lookback + horizon` window over `table` with stride 1.
pub fn make_windows(
    table: &SeriesTable,
    lookback: usize,
    horizon: usize,
    batch_size: usize,
) -> Result<WindowSet> {
    if lookback == 0 || horizon == 0 || batch_size == 0 {
        return Err(Error::Sizing("lookback, horizon and batch size must be positive".into()));
    }
    if table.rows() < lookback + horizon {
        return Err(Error::Sizing(format!(
            "windowing needs at least L + T = {} rows, got {}",
            lookback + horizon,
            table.rows()
        )));
    }
    Ok(WindowSet {
        table: table.clone(),
        lookback,
        horizon,
        batch_size,
    })
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.table.rows() - self.lookback - self.horizon + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.table.channels()
    }

    pub fn lookback(&self) -> usize {
        self.lookback
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn table(&self) -> &SeriesTable {
        &self.table
    }

    pub fn starts(&self, order: WindowOrder) -> Vec<usize> {
        let mut starts: Vec<usize> = (0..self.len()).collect();
        if let WindowOrder::Shuffled(seed) = order {
            starts.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        starts
    }

    pub fn num_batches(&self) -> usize {
        self.len().div_ceil(self.batch_size)
    }

    pub fn batches(&self, order: WindowOrder) -> impl Iterator<Item = WindowBatch> + '_ {
        let starts = self.starts(order);
        (0..self.num_batches()).map(move |b| {
            let chunk = &starts[b * self.batch_size..((b + 1) * self.batch_size).min(starts.len())];
            self.gather(chunk)
        })
    }

    /// Builds one batch from explicit window start rows.
    pub fn gather(&self, starts: &[usize]) -> WindowBatch {
        let (l, t, m) = (self.lookback, self.horizon, self.table.channels());
        let b = starts.len();
        let vals = self.table.values();
        let mut history = Vec::with_capacity(b * l * m);
        let mut target = Vec::with_capacity(b * t * m);
        let mut last = Vec::with_capacity(b * m);
        for &s in starts {
            history.extend_from_slice(&vals[s * m..(s + l) * m]);
            target.extend_from_slice(&vals[(s + l) * m..(s + l + t) * m]);
            last.extend_from_slice(&vals[(s + l - 1) * m..(s + l) * m]);
        }
        WindowBatch {
            history: Array::from_parts(vec![b, l, m], history),
            target: Array::from_parts(vec![b, t, m], target),
            last_values: Array::from_parts(vec![b, m], last),
            starts: starts.to_vec(),
        }
    }
}
