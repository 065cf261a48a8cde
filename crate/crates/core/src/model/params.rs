use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{Array, Scalar};

use super::{MixMode, ModelConfig};

/// Every learnable tensor, keyed by a stable name.
///
/// All tensors exist regardless of ablation switches, so a checkpoint from
/// one variant loads into any other variant of the same dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = f32> {
    tensors: BTreeMap<String, Array<T>>,
}

enum Init {
    /// `U(−1/√fan_in, 1/√fan_in)`
    Uniform(usize),
    Normal(f64),
    Const(f64),
}

fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, m, pl, pn, t) = (
        cfg.d_model,
        cfg.channels,
        cfg.patch_len,
        cfg.num_patches(),
        cfg.horizon,
    );
    let f = cfg.ffn_hidden();
    let mut out = vec![
        ("embed.w".to_string(), vec![pl, d], Init::Uniform(pl)),
        ("embed.u".to_string(), vec![pn, d], Init::Normal(0.02)),
        ("embed.v".to_string(), vec![m, d], Init::Normal(0.02)),
        ("mix.w".to_string(), vec![cfg.mix_input(), d], Init::Uniform(cfg.mix_input())),
        ("head.pretrain.w".to_string(), vec![d, pl], Init::Uniform(d)),
        ("head.pretrain.b".to_string(), vec![pl], Init::Uniform(d)),
        ("head.forecast.w".to_string(), vec![pn * d, t], Init::Uniform(pn * d)),
        ("head.forecast.b".to_string(), vec![t], Init::Uniform(pn * d)),
    ];
    if !cfg.share_cid && cfg.mix_mode == MixMode::Cat {
        out.push(("mix.v".to_string(), vec![m, d], Init::Normal(0.02)));
    }
    let attention = |out: &mut Vec<(String, Vec<usize>, Init)>, p: &str| {
        for proj in ["q", "k", "v", "o"] {
            out.push((format!("{p}.w{proj}"), vec![d, d], Init::Uniform(d)));
            out.push((format!("{p}.b{proj}"), vec![d], Init::Uniform(d)));
        }
    };
    let block = |out: &mut Vec<(String, Vec<usize>, Init)>, p: &str| {
        attention(out, &format!("{p}.attn"));
        for norm in ["norm1", "norm2"] {
            out.push((format!("{p}.{norm}.gain"), vec![d], Init::Const(1.0)));
            out.push((format!("{p}.{norm}.bias"), vec![d], Init::Const(0.0)));
        }
        out.push((format!("{p}.ffn.w1"), vec![d, f], Init::Uniform(d)));
        out.push((format!("{p}.ffn.b1"), vec![f], Init::Uniform(d)));
        out.push((format!("{p}.ffn.w2"), vec![f, d], Init::Uniform(f)));
        out.push((format!("{p}.ffn.b2"), vec![d], Init::Uniform(f)));
    };
    for i in 0..cfg.ci_layers {
        block(&mut out, &format!("ci.{i}"));
    }
    for i in 0..cfg.mix_layers {
        block(&mut out, &format!("mix.{i}"));
    }
    block(&mut out, "sca");
    out
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded initialization.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = layout(cfg)
            .into_iter()
            .map(|(name, shape, init)| {
                let value = match init {
                    Init::Uniform(fan_in) => {
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        Array::from_fn(&shape, |_| T::of(rng.gen_range(-bound..bound)))
                    }
                    Init::Normal(std) => {
                        let normal = Normal::new(0.0, std).expect("positive std");
                        Array::from_fn(&shape, |_| T::of(normal.sample(&mut rng)))
                    }
                    Init::Const(c) => Array::full(&shape, T::of(c)),
                };
                (name, value)
            })
            .collect();
        Ok(ModelParams { tensors })
    }

    /// Every tensor zero-filled, layer-norm gains included.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let tensors = layout(cfg)
            .into_iter()
            .map(|(name, shape, _)| (name, Array::zeros(&shape)))
            .collect();
        Ok(ModelParams { tensors })
    }

    pub fn from_tensors(tensors: BTreeMap<String, Array<T>>) -> Self {
        ModelParams { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Array<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array<T>> {
        self.tensors.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array<T>) {
        self.tensors.insert(name.into(), value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(Array::numel).sum()
    }

    pub fn tensors(&self) -> &BTreeMap<String, Array<T>> {
        &self.tensors
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Array::is_finite)
    }

    /// Checks names and shapes against what `cfg` expects.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = layout(cfg);
        for (name, shape, _) in &expected {
            match self.tensors.get(name) {
                None => return Err(Error::Checkpoint(format!("missing tensor `{name}`"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::Checkpoint(format!(
                        "tensor `{name}` has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                _ => {}
            }
        }
        if let Some(extra) = self.tensors.keys().find(|k| !expected.iter().any(|(n, ..)| n == *k)) {
            return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
        }
        Ok(())
    }
}

/// Parameters the head-finetuning stage updates.
pub fn is_forecast_head(name: &str) -> bool {
    name.starts_with("head.forecast.")
}
