use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::SeriesTable;

/// How rows are divided into train/validation/test.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// 70/10/20 chronological.
    #[default]
    Ratio,
    /// The 12/4/4-month layout of the ETT benchmarks, as 60/20/20 of rows.
    Ett,
}

/// Row boundaries: train is `0..train_end`, validation `train_end..val_end`,
/// test `val_end..total`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_end: usize,
    pub val_end: usize,
    pub total: usize,
}

impl SplitSpec {
    pub const MIN_ROWS: usize = 5;

    pub fn new(rows: usize, mode: SplitMode) -> Result<Self> {
        if rows < Self::MIN_ROWS {
            return Err(Error::Sizing(format!(
                "splitting needs at least {} rows, got {rows}",
                Self::MIN_ROWS
            )));
        }
        let (train, val) = match mode {
            SplitMode::Ratio => (7, 8),
            SplitMode::Ett => (6, 8),
        };
        Ok(SplitSpec {
            train_end: rows * train / 10,
            val_end: rows * val / 10,
            total: rows,
        })
    }

    /// Validation rows preceded by up to `lookback` rows of training history,
    /// so the first validation target can follow a full input window.
    pub fn val_with_lookback(&self, table: &SeriesTable, lookback: usize) -> SeriesTable {
        table.slice_rows(self.train_end.saturating_sub(lookback), self.val_end)
    }

    pub fn test_with_lookback(&self, table: &SeriesTable, lookback: usize) -> SeriesTable {
        table.slice_rows(self.val_end.saturating_sub(lookback), self.total)
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub spec: SplitSpec,
    pub train: SeriesTable,
    pub val: SeriesTable,
    pub test: SeriesTable,
}

/// Disjoint chronological partition of `table`.
pub fn split(table: &SeriesTable, mode: SplitMode) -> Result<Splits> {
    let spec = SplitSpec::new(table.rows(), mode)?;
    Ok(Splits {
        spec,
        train: table.slice_rows(0, spec.train_end),
        val: table.slice_rows(spec.train_end, spec.val_end),
        test: table.slice_rows(spec.val_end, spec.total),
    })
}

/// Per-channel affine standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub const STD_FLOOR: f64 = 1e-8;

    /// Population statistics of each channel of `table`.
    pub fn fit(table: &SeriesTable) -> Self {
        let n = table.rows() as f64;
        let m = table.channels();
        let mut mean = vec![0.0; m];
        for r in 0..table.rows() {
            for (c, v) in table.row(r).iter().enumerate() {
                mean[c] += *v as f64;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n);
        let mut var = vec![0.0; m];
        for r in 0..table.rows() {
            for (c, v) in table.row(r).iter().enumerate() {
                var[c] += (*v as f64 - mean[c]).powi(2);
            }
        }
        let std = var
            .into_iter()
            .map(|v| (v / n).sqrt().max(Self::STD_FLOOR))
            .collect();
        Scaler { mean, std }
    }

    pub fn identity(channels: usize) -> Self {
        Scaler {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn transform(&self, table: &SeriesTable) -> SeriesTable {
        let mut out = table.clone();
        let m = table.channels();
        for (i, v) in out.values_mut().iter_mut().enumerate() {
            let c = i % m;
            *v = ((*v as f64 - self.mean[c]) / self.std[c]) as f32;
        }
        out
    }

    pub fn inverse(&self, table: &SeriesTable) -> SeriesTable {
        let mut out = table.clone();
        let m = table.channels();
        for (i, v) in out.values_mut().iter_mut().enumerate() {
            *v = self.inverse_value(*v, i % m);
        }
        out
    }

    pub fn inverse_value(&self, v: f32, channel: usize) -> f32 {
        (v as f64 * self.std[channel] + self.mean[channel]) as f32
    }
}

/// Standardizes all three splits with statistics fitted on `train` alone.
pub fn standardize(
    train: &SeriesTable,
    val: &SeriesTable,
    test: &SeriesTable,
) -> (Scaler, [SeriesTable; 3]) {
    let scaler = Scaler::fit(train);
    let out = [
        scaler.transform(train),
        scaler.transform(val),
        scaler.transform(test),
    ];
    (scaler, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn ramp(rows: usize, channels: usize) -> SeriesTable {
        SeriesTable::from_rows(rows, channels, (0..rows * channels).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn boundaries() {
        let t = ramp(100, 2);
        let s = split(&t, SplitMode::Ratio).unwrap();
        assert_eq!((s.spec.train_end, s.spec.val_end), (70, 80));
        let s = split(&t, SplitMode::Ett).unwrap();
        assert_eq!((s.spec.train_end, s.spec.val_end), (60, 80));
        assert!(matches!(split(&ramp(4, 1), SplitMode::Ratio), Err(Error::Sizing(_))));
    }

    #[test]
    fn partition_concatenates_back() {
        for rows in [5usize, 17, 100, 333] {
            for mode in [SplitMode::Ratio, SplitMode::Ett] {
                let t = ramp(rows, 3);
                let s = split(&t, mode).unwrap();
                let joined: Vec<f32> = [&s.train, &s.val, &s.test]
                    .iter()
                    .flat_map(|p| p.values().to_vec())
                    .collect();
                assert_eq!(joined, t.values());
            }
        }
    }

    #[test]
    fn lookback_reaches_into_previous_split() {
        let t = ramp(100, 1);
        let spec = SplitSpec::new(100, SplitMode::Ratio).unwrap();
        let v = spec.val_with_lookback(&t, 8);
        assert_eq!(v.rows(), 18);
        assert_eq!(v.get(0, 0), 62.0);
        assert_eq!(spec.test_with_lookback(&t, 8).get(0, 0), 72.0);
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let t = SeriesTable::from_rows(4, 1, vec![3.5; 4]).unwrap();
        let (_, [tr, ..]) = standardize(&t, &t, &t);
        assert!(tr.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn train_statistics_become_standard() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(5.0, 2.0).unwrap();
        let vals: Vec<f32> = (0..2000).map(|_| normal.sample(&mut rng)).collect();
        let t = SeriesTable::from_rows(2000, 1, vals).unwrap();
        let (_, [tr, ..]) = standardize(&t, &t, &t);
        let col: Vec<f64> = tr.column(0).iter().map(|&v| v as f64).collect();
        let mean = col.iter().sum::<f64>() / 2000.0;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2000.0).sqrt();
        assert!(mean.abs() < 1e-6, "{mean}");
        assert!((std - 1.0).abs() < 1e-6, "{std}");
    }

    #[test]
    fn validation_uses_train_statistics() {
        let train = SeriesTable::from_rows(4, 1, vec![0.0, 2.0, 0.0, 2.0]).unwrap();
        let val = SeriesTable::from_rows(2, 1, vec![11.0, 11.0]).unwrap();
        let (scaler, [_, v, _]) = standardize(&train, &val, &val);
        assert_eq!((scaler.mean[0], scaler.std[0]), (1.0, 1.0));
        // Its own statistics would give zeros.
        assert_eq!(v.values(), &[10.0, 10.0]);
    }

    #[test]
    fn inverse_recovers_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let normal = Normal::new(-40.0, 13.0).unwrap();
        let vals: Vec<f32> = (0..300).map(|_| normal.sample(&mut rng)).collect();
        let t = SeriesTable::from_rows(100, 3, vals).unwrap();
        let scaler = Scaler::fit(&t);
        let back = scaler.inverse(&scaler.transform(&t));
        for (a, b) in back.values().iter().zip(t.values()) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
    }
}
