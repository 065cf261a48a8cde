use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::SplitMode;
use crate::error::{Error, Result};
use crate::model::{MixMode, ModelConfig};
use crate::training::{Profile, StageSchedule};

/// Largest seed a configuration file can hold.
pub const MAX_SEED: u64 = i64::MAX as u64;

/// Named model variant; each tag fixes the mixer and the three ablation
/// switches, whatever else the configuration says.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Pat,
    Cat,
    PatRc,
    CatRc,
    NoCid,
    NoGi,
    BaselinePersistence,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Pat,
        Variant::Cat,
        Variant::PatRc,
        Variant::CatRc,
        Variant::NoCid,
        Variant::NoGi,
        Variant::BaselinePersistence,
    ];

    /// The trained variants of the ablation tables.
    pub const ABLATION: [Variant; 6] = [
        Variant::Pat,
        Variant::Cat,
        Variant::PatRc,
        Variant::CatRc,
        Variant::NoCid,
        Variant::NoGi,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Pat => "pat",
            Variant::Cat => "cat",
            Variant::PatRc => "pat-rc",
            Variant::CatRc => "cat-rc",
            Variant::NoCid => "no-cid",
            Variant::NoGi => "no-gi",
            Variant::BaselinePersistence => "baseline-persistence",
        }
    }

    pub fn is_baseline(self) -> bool {
        self == Variant::BaselinePersistence
    }

    /// `(mix_mode, sca_residual, use_channel_identifier, use_global_injection)`
    pub fn flags(self) -> (MixMode, bool, bool, bool) {
        match self {
            Variant::Pat | Variant::BaselinePersistence => (MixMode::Pat, false, true, true),
            Variant::Cat => (MixMode::Cat, false, true, true),
            Variant::PatRc => (MixMode::Pat, true, true, true),
            Variant::CatRc => (MixMode::Cat, true, true, true),
            Variant::NoCid => (MixMode::Pat, false, false, true),
            Variant::NoGi => (MixMode::Pat, false, true, false),
        }
    }

    pub fn apply(self, cfg: &mut ModelConfig) {
        let (mix, rc, cid, gi) = self.flags();
        cfg.mix_mode = mix;
        cfg.sca_residual = rc;
        cfg.use_channel_identifier = cid;
        cfg.use_global_injection = gi;
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    /// `data.path` names a CSV file.
    Csv,
    #[default]
    Sine,
    /// Channel 1 repeats channel 0 `data.lag` steps later, plus noise.
    LeadLag,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Relative paths resolve against the configuration file's directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Synthetic sources only.
    pub rows: usize,
    pub channels: usize,
    pub lag: usize,
    pub noise: f64,
    pub split: SplitMode,
    pub standardize: bool,
    /// Report metrics in original units instead of standardized ones.
    pub destandardize_metrics: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Sine,
            path: None,
            rows: 2000,
            channels: 3,
            lag: 12,
            noise: 0.1,
            split: SplitMode::Ratio,
            standardize: true,
            destandardize_metrics: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub patch_len: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            lookback: 512,
            horizon: 96,
            patch_len: 12,
            stride: 12,
        }
    }
}

/// Architecture sizes; the switches come from the variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ci_layers: usize,
    pub mix_layers: usize,
    pub ffn_mult: usize,
    pub dropout: f64,
    pub share_cid: bool,
    pub norm_first: bool,
    pub norm_eps: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        ArchConfig {
            d_model: m.d_model,
            heads: m.heads,
            ci_layers: m.ci_layers,
            mix_layers: m.mix_layers,
            ffn_mult: m.ffn_mult,
            dropout: m.dropout,
            share_cid: m.share_cid,
            norm_first: m.norm_first,
            norm_eps: m.norm_eps,
        }
    }
}

/// Everything one run depends on.
///
/// Files may use `[section]` tables or dotted keys; [`RunConfig::to_canonical`]
/// always writes sorted dotted keys, which is also what the digest hashes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub variant: Variant,
    pub data: DataConfig,
    pub window: WindowConfig,
    pub model: ArchConfig,
    pub train: StageSchedule,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    /// Reads a configuration file. Relative data paths are resolved against
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let (Some(p), Some(dir)) = (cfg.data.path.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Sorted `dotted.key = value` lines.
    pub fn to_canonical(&self) -> String {
        let value = toml::Value::try_from(self).expect("run configuration serializes");
        let mut flat = BTreeMap::new();
        flatten("", &value, &mut flat);
        flat.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hex SHA-256 of the canonical text.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_canonical().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn with_profile(mut self, profile: Profile) -> Self {
        self.train.apply_profile(profile);
        self
    }

    /// The schedule with the run seed filled in.
    pub fn schedule(&self) -> StageSchedule {
        StageSchedule {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Model configuration for `channels` input series under this variant.
    pub fn model_config(&self, channels: usize) -> ModelConfig {
        let mut m = ModelConfig {
            lookback: self.window.lookback,
            horizon: self.window.horizon,
            channels,
            patch_len: self.window.patch_len,
            stride: self.window.stride,
            d_model: self.model.d_model,
            heads: self.model.heads,
            ci_layers: self.model.ci_layers,
            mix_layers: self.model.mix_layers,
            ffn_mult: self.model.ffn_mult,
            dropout: self.model.dropout,
            share_cid: self.model.share_cid,
            norm_first: self.model.norm_first,
            norm_eps: self.model.norm_eps,
            ..ModelConfig::default()
        };
        self.variant.apply(&mut m);
        m
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > MAX_SEED {
            return Err(Error::Config(format!("seed must be at most {MAX_SEED} (TOML integers are signed 64-bit)")));
        }
        if self.data.source == DataSource::Csv && self.data.path.is_none() {
            return Err(Error::Config("data.source = \"csv\" needs data.path".into()));
        }
        if self.data.source == DataSource::LeadLag && self.data.lag == 0 {
            return Err(Error::Config("data.lag must be positive".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if !(self.train.mask_ratio > 0.0 && self.train.mask_ratio < 1.0) {
            return Err(Error::Config("train.mask_ratio must lie in (0, 1)".into()));
        }
        self.model_config(self.data.channels.max(1)).validate()
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut BTreeMap<String, String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf.to_string());
        }
    }
}
