use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::SeriesTable;
use crate::error::{Error, Result};

/// Each channel sums three sines with random periods, phases and amplitudes,
/// plus Gaussian noise of standard deviation `noise`.
pub fn sine_mixture(rows: usize, channels: usize, noise: f64, seed: u64) -> Result<SeriesTable> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = normal(noise)?;
    let comps: Vec<[(f64, f64, f64); 3]> = (0..channels)
        .map(|_| {
            [(); 3].map(|_| {
                let period = rng.gen_range(8.0..120.0);
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                let amp = rng.gen_range(0.3..1.5);
                (std::f64::consts::TAU / period, phase, amp)
            })
        })
        .collect();
    let mut values = Vec::with_capacity(rows * channels);
    for t in 0..rows {
        for comp in &comps {
            let clean: f64 = comp.iter().map(|(w, p, a)| a * (w * t as f64 + p).sin()).sum();
            values.push((clean + eps.sample(&mut rng)) as f32);
        }
    }
    SeriesTable::from_rows(rows, channels, values)
}

/// Channel 0 is a Gaussian random walk `A`; channel 1 is `A` delayed by
/// `lag` steps plus noise, so `B(t + lag) = A(t) + ε`. Any further channels
/// are independent random walks.
pub fn lead_lag(rows: usize, channels: usize, lag: usize, noise: f64, seed: u64) -> Result<SeriesTable> {
    if channels < 2 {
        return Err(Error::Config("lead-lag data needs at least two channels".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = Normal::new(0.0, 1.0).expect("unit normal");
    let eps = normal(noise)?;
    let walk = |n: usize, rng: &mut ChaCha8Rng| {
        let mut x = 0.0f64;
        (0..n)
            .map(|_| {
                x += step.sample(rng);
                x
            })
            .collect::<Vec<_>>()
    };
    let leader = walk(rows + lag, &mut rng);
    let others: Vec<Vec<f64>> = (2..channels).map(|_| walk(rows, &mut rng)).collect();
    let mut values = Vec::with_capacity(rows * channels);
    for t in 0..rows {
        values.push(leader[t + lag] as f32);
        values.push((leader[t] + eps.sample(&mut rng)) as f32);
        for o in &others {
            values.push(o[t] as f32);
        }
    }
    SeriesTable::from_rows(rows, channels, values)
}

fn normal(std: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, std).map_err(|_| Error::Config(format!("noise must be a finite non-negative number, got {std}")))
}
