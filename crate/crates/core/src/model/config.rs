use serde::{Deserialize, Serialize};

use crate::data::patch_count;
use crate::error::{Error, Result};

/// Which cross-channel mixer produces the global tokens.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixMode {
    /// Channel as a token: `M` global tokens.
    Cat,
    /// Patch as a token: `PN` global tokens.
    #[default]
    Pat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// History length `L`.
    pub lookback: usize,
    /// Forecast horizon `T`.
    pub horizon: usize,
    /// Channel count `M`.
    pub channels: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ci_layers: usize,
    pub mix_layers: usize,
    pub ffn_mult: usize,
    pub dropout: f64,
    pub mix_mode: MixMode,
    pub sca_residual: bool,
    pub use_channel_identifier: bool,
    pub use_global_injection: bool,
    /// CaT reuses the backbone's channel identifier instead of its own.
    pub share_cid: bool,
    /// Normalize before each sublayer instead of after it.
    pub norm_first: bool,
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            lookback: 512,
            horizon: 96,
            channels: 7,
            patch_len: 12,
            stride: 12,
            d_model: 64,
            heads: 4,
            ci_layers: 2,
            mix_layers: 1,
            ffn_mult: 2,
            dropout: 0.0,
            mix_mode: MixMode::Pat,
            sca_residual: false,
            use_channel_identifier: true,
            use_global_injection: true,
            share_cid: true,
            norm_first: false,
            norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn num_patches(&self) -> usize {
        patch_count(self.lookback, self.patch_len, self.stride).expect("validated config")
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn ffn_hidden(&self) -> usize {
        self.d_model * self.ffn_mult
    }

    /// Input width of the mixer projection.
    pub fn mix_input(&self) -> usize {
        match self.mix_mode {
            MixMode::Cat => self.lookback,
            MixMode::Pat => self.channels * self.patch_len,
        }
    }

    /// Number of global tokens handed to the SCA block.
    pub fn global_tokens(&self) -> usize {
        match self.mix_mode {
            MixMode::Cat => self.channels,
            MixMode::Pat => self.num_patches(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("channels", self.channels),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("ffn_mult", self.ffn_mult),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        patch_count(self.lookback, self.patch_len, self.stride)?;
        Ok(())
    }
}
