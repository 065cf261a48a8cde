//! Shared fixtures and naive-loop oracles. Oracles index raw `f64` buffers
//! directly and never call into the graph code they check.
#![allow(dead_code)]

pub mod oracle;

use injecttst::data::{make_windows, SeriesTable, WindowBatch, WindowOrder};
use injecttst::model::{MixMode, ModelConfig};
use injecttst::numerics::Array;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// M=3, L=24, PL=S=8, D=8, 2 heads, one layer per encoder.
pub fn tiny_config(mix_mode: MixMode, sca_residual: bool) -> ModelConfig {
    ModelConfig {
        lookback: 24,
        horizon: 4,
        channels: 3,
        patch_len: 8,
        stride: 8,
        d_model: 8,
        heads: 2,
        ci_layers: 1,
        mix_layers: 1,
        ffn_mult: 2,
        mix_mode,
        sca_residual,
        ..ModelConfig::default()
    }
}

pub fn random_array(shape: &[usize], rng: &mut ChaCha8Rng) -> Array<f32> {
    Array::from_fn(shape, |_| rng.gen_range(-1.0f32..1.0))
}

pub fn random_table(rows: usize, channels: usize, seed: u64) -> SeriesTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals = (0..rows * channels).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
    SeriesTable::from_rows(rows, channels, vals).unwrap()
}

/// One batch of `batch` random windows shaped for `cfg`.
pub fn random_batch(cfg: &ModelConfig, batch: usize, seed: u64) -> WindowBatch {
    let table = random_table(cfg.lookback + cfg.horizon + batch + 3, cfg.channels, seed);
    let w = make_windows(&table, cfg.lookback, cfg.horizon, batch).unwrap();
    let batch = w.batches(WindowOrder::Shuffled(seed)).next().unwrap();
    batch
}
