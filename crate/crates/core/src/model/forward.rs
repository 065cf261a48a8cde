use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use crate::data::{mask_history, patchify, PatchSet, WindowBatch};
use crate::error::{Error, Result};
use crate::numerics::{Array, Graph, Scalar, Var};

use super::{MixMode, ModelConfig, ModelParams};

/// Parameter name → graph node.
pub type Bound = BTreeMap<String, Var>;

/// Records `params` on `graph`. Tensors for which `trainable` is false become
/// constants and receive no gradient.
pub fn bind<T: Scalar>(
    graph: &mut Graph<T>,
    params: &ModelParams<T>,
    trainable: impl Fn(&str) -> bool,
) -> Bound {
    params
        .iter()
        .map(|(name, value)| {
            let var = if trainable(name) {
                graph.param(name.clone(), value.clone())
            } else {
                graph.constant(value.clone())
            };
            (name.clone(), var)
        })
        .collect()
}

/// Intermediate streams of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `B × M × PN × D`, after positional encoding and channel identifier.
    pub tokens: Var,
    /// `B × M × PN × D`
    pub z_ci: Var,
    /// `B × M × D` (CaT) or `B × PN × D` (PaT); absent without injection.
    pub z_glb: Option<Var>,
    /// `B × M × PN × D`
    pub z_out: Var,
    /// Softmax weights of every attention block, `(N·heads) × queries × keys`.
    pub attention: Vec<(String, Var)>,
}

/// One forward pass of the network over a graph.
pub struct Forward<'a, T: Scalar> {
    pub graph: &'a mut Graph<T>,
    params: &'a Bound,
    cfg: &'a ModelConfig,
    dropout_rng: Option<ChaCha8Rng>,
    attention: Vec<(String, Var)>,
}

impl<'a, T: Scalar> Forward<'a, T> {
    pub fn new(graph: &'a mut Graph<T>, params: &'a Bound, cfg: &'a ModelConfig) -> Self {
        Forward {
            graph,
            params,
            cfg,
            dropout_rng: None,
            attention: Vec::new(),
        }
    }

    /// Enables dropout (when the configured rate is non-zero).
    pub fn training(mut self, rng: ChaCha8Rng) -> Self {
        self.dropout_rng = Some(rng);
        self
    }

    fn p(&self, name: &str) -> Result<Var> {
        self.params
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("parameter `{name}` is not bound")))
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        match self.dropout_rng.as_mut() {
            Some(rng) if self.cfg.dropout > 0.0 => self.graph.dropout(x, self.cfg.dropout, rng),
            _ => Ok(x),
        }
    }

    fn expect_shape(&self, op: &'static str, x: Var, want: &[usize]) -> Result<()> {
        if self.graph.shape(x) != want {
            return Err(Error::Dimension {
                op,
                lhs: self.graph.shape(x).to_vec(),
                rhs: want.to_vec(),
            });
        }
        Ok(())
    }

    /// `patch·W + U (+ V[i])`: `B × M × PN × PL` → `B × M × PN × D`.
    pub fn embed_patches(&mut self, patches: Var) -> Result<Var> {
        let c = self.cfg;
        let b = self.graph.shape(patches)[0];
        let (m, pn, d) = (c.channels, c.num_patches(), c.d_model);
        self.expect_shape("embed_patches", patches, &[b, m, pn, c.patch_len])?;
        let (w, u) = (self.p("embed.w")?, self.p("embed.u")?);
        let g = &mut *self.graph;
        let x = g.linear(patches, w, None)?;
        let x = g.reshape(x, &[b * m, pn, d])?;
        let x = g.add_suffix(x, u)?;
        let mut x = g.reshape(x, &[b, m, pn, d])?;
        if c.use_channel_identifier {
            let v = self.p("embed.v")?;
            let g = &mut *self.graph;
            let v = g.reshape(v, &[1, m, 1, d])?;
            let v = g.broadcast_to(v, &[b, m, pn, d])?;
            x = g.add(x, v)?;
        }
        Ok(x)
    }

    /// Shared encoder applied to each channel's token sequence separately.
    pub fn ci_encode(&mut self, tokens: Var) -> Result<Var> {
        let shape = self.graph.shape(tokens).to_vec();
        let (b, m, pn, d) = (shape[0], shape[1], shape[2], shape[3]);
        let mut x = self.graph.reshape(tokens, &[b * m, pn, d])?;
        for i in 0..self.cfg.ci_layers {
            x = self.encoder_layer(&format!("ci.{i}"), x)?;
        }
        self.graph.reshape(x, &shape)
    }

    /// CaT: each channel of the `B × L × M` history becomes one token.
    pub fn global_mix_cat(&mut self, history: Var) -> Result<Var> {
        let c = self.cfg;
        let b = self.graph.shape(history)[0];
        let (l, m, d) = (c.lookback, c.channels, c.d_model);
        self.expect_shape("global_mix_cat", history, &[b, l, m])?;
        let w = self.p("mix.w")?;
        let g = &mut *self.graph;
        let xt = g.permute(history, &[0, 2, 1])?;
        let mut x = g.linear(xt, w, None)?;
        if c.use_channel_identifier {
            let v = self.p(if c.share_cid { "embed.v" } else { "mix.v" })?;
            x = self.graph.add_suffix(x, v)?;
        }
        debug_assert_eq!(self.graph.shape(x), &[b, m, d]);
        self.mix_encode(x)
    }

    /// PaT: same-position patches of all channels, concatenated channel-major,
    /// become one token per position.
    pub fn global_mix_pat(&mut self, patches: Var) -> Result<Var> {
        let c = self.cfg;
        let b = self.graph.shape(patches)[0];
        let (m, pn, pl) = (c.channels, c.num_patches(), c.patch_len);
        self.expect_shape("global_mix_pat", patches, &[b, m, pn, pl])?;
        let (w, u) = (self.p("mix.w")?, self.p("embed.u")?);
        let g = &mut *self.graph;
        let grouped = g.permute(patches, &[0, 2, 1, 3])?;
        let grouped = g.reshape(grouped, &[b, pn, m * pl])?;
        let x = g.linear(grouped, w, None)?;
        let x = g.add_suffix(x, u)?;
        self.mix_encode(x)
    }

    fn mix_encode(&mut self, mut x: Var) -> Result<Var> {
        for i in 0..self.cfg.mix_layers {
            x = self.encoder_layer(&format!("mix.{i}"), x)?;
        }
        Ok(x)
    }

    /// Cross-attention from each channel's tokens (queries) to the global
    /// tokens (keys, values), then a feed-forward sublayer.
    pub fn sca_inject(&mut self, z_ci: Var, z_glb: Var) -> Result<Var> {
        let c = self.cfg;
        if !c.use_global_injection {
            return Ok(z_ci);
        }
        let shape = self.graph.shape(z_ci).to_vec();
        let (b, m, pn, d) = (shape[0], shape[1], shape[2], shape[3]);
        self.expect_shape("sca_inject", z_glb, &[b, c.global_tokens(), d]).map_err(|_| {
            Error::Config(format!(
                "global tokens {:?} do not match mix mode {:?} (expected {:?})",
                self.graph.shape(z_glb),
                c.mix_mode,
                [b, c.global_tokens(), d]
            ))
        })?;
        let q = self.graph.reshape(z_ci, &[b * m, pn, d])?;
        let out = if c.norm_first {
            let qn = self.norm("sca.norm1", q)?;
            let a = self.attention("sca.attn", qn, z_glb, m)?;
            let h = if c.sca_residual { self.graph.add(q, a)? } else { a };
            let hn = self.norm("sca.norm2", h)?;
            let f = self.ffn("sca.ffn", hn)?;
            self.graph.add(h, f)?
        } else {
            let a = self.attention("sca.attn", q, z_glb, m)?;
            let h = if c.sca_residual { self.graph.add(q, a)? } else { a };
            let h = self.norm("sca.norm1", h)?;
            let f = self.ffn("sca.ffn", h)?;
            let h = self.graph.add(h, f)?;
            self.norm("sca.norm2", h)?
        };
        self.graph.reshape(out, &shape)
    }

    /// Flattens each channel's `PN × D` and projects to `T` values.
    pub fn forecast_head(&mut self, z_out: Var) -> Result<Var> {
        let shape = self.graph.shape(z_out).to_vec();
        let (b, m) = (shape[0], shape[1]);
        let (w, bias) = (self.p("head.forecast.w")?, self.p("head.forecast.b")?);
        let g = &mut *self.graph;
        let flat = g.reshape(z_out, &[b, m, shape[2] * shape[3]])?;
        g.linear(flat, w, Some(bias))
    }

    /// Maps every token back to `PL` patch values.
    pub fn pretrain_head(&mut self, z_out: Var) -> Result<Var> {
        let (w, bias) = (self.p("head.pretrain.w")?, self.p("head.pretrain.b")?);
        self.graph.linear(z_out, w, Some(bias))
    }

    /// Embedding, channel-independent encoding and (when enabled) injection.
    /// `history` is the `B × L × M` series the CaT mixer reads.
    pub fn trunk(&mut self, patches: Var, history: Var) -> Result<ForwardTrace> {
        let tokens = self.embed_patches(patches)?;
        let z_ci = self.ci_encode(tokens)?;
        let (z_glb, z_out) = if self.cfg.use_global_injection {
            let z_glb = match self.cfg.mix_mode {
                MixMode::Cat => self.global_mix_cat(history)?,
                MixMode::Pat => self.global_mix_pat(patches)?,
            };
            (Some(z_glb), self.sca_inject(z_ci, z_glb)?)
        } else {
            (None, z_ci)
        };
        Ok(ForwardTrace {
            tokens,
            z_ci,
            z_glb,
            z_out,
            attention: std::mem::take(&mut self.attention),
        })
    }

    /// Forecast for a window batch in the original (un-normalized) scale:
    /// `B × M × T`. Last values are subtracted before the network and added
    /// back to its output.
    pub fn forecast(&mut self, batch: &WindowBatch) -> Result<(Var, ForwardTrace)> {
        let c = self.cfg;
        let (b, m, t) = (batch.batch_size(), c.channels, c.horizon);
        if batch.lookback() != c.lookback || batch.channels() != m {
            return Err(Error::Dimension {
                op: "forward_forecast",
                lhs: batch.history.shape().to_vec(),
                rhs: vec![b, c.lookback, m],
            });
        }
        let normalized = batch.normalized_history();
        let ps = patchify(&normalized, c.patch_len, c.stride)?;
        let patches = self.graph.constant(ps.patches.cast());
        let history = self.graph.constant(normalized.cast());
        let trace = self.trunk(patches, history)?;
        let delta = self.forecast_head(trace.z_out)?;
        let lv = batch.last_values.reshape(&[b, m, 1])?.cast::<T>();
        let g = &mut *self.graph;
        let lv = g.constant(lv);
        let lv = g.broadcast_to(lv, &[b, m, t])?;
        let prediction = g.add(delta, lv)?;
        Ok((prediction, trace))
    }

    /// Reconstruction `B × M × PN × PL` of a masked patch set built from
    /// last-value-normalized `history` (`B × L × M`). The CaT mixer reads the
    /// history with masked rows zeroed.
    pub fn pretrain(&mut self, masked: &PatchSet, history: &Array<f32>) -> Result<(Var, ForwardTrace)> {
        let patches = self.graph.constant(masked.patches.cast());
        let hidden = mask_history(history, masked);
        let history = self.graph.constant(hidden.cast());
        let trace = self.trunk(patches, history)?;
        let recon = self.pretrain_head(trace.z_out)?;
        Ok((recon, trace))
    }

    fn norm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let gain = self.p(&format!("{prefix}.gain"))?;
        let bias = self.p(&format!("{prefix}.bias"))?;
        self.graph.layer_norm(x, gain, bias, self.cfg.norm_eps)
    }

    fn ffn(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let w1 = self.p(&format!("{prefix}.w1"))?;
        let b1 = self.p(&format!("{prefix}.b1"))?;
        let w2 = self.p(&format!("{prefix}.w2"))?;
        let b2 = self.p(&format!("{prefix}.b2"))?;
        let h = self.graph.linear(x, w1, Some(b1))?;
        let h = self.graph.gelu(h);
        let h = self.dropout(h)?;
        let y = self.graph.linear(h, w2, Some(b2))?;
        self.dropout(y)
    }

    fn encoder_layer(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let (attn, n1, n2, ffn) = (
            format!("{prefix}.attn"),
            format!("{prefix}.norm1"),
            format!("{prefix}.norm2"),
            format!("{prefix}.ffn"),
        );
        if self.cfg.norm_first {
            let xn = self.norm(&n1, x)?;
            let a = self.attention(&attn, xn, xn, 1)?;
            let x = self.graph.add(x, a)?;
            let xn = self.norm(&n2, x)?;
            let f = self.ffn(&ffn, xn)?;
            self.graph.add(x, f)
        } else {
            let a = self.attention(&attn, x, x, 1)?;
            let x = self.graph.add(x, a)?;
            let x = self.norm(&n1, x)?;
            let f = self.ffn(&ffn, x)?;
            let x = self.graph.add(x, f)?;
            self.norm(&n2, x)
        }
    }

    /// Multi-head attention. `queries` is `N × Sq × D`; `context` is
    /// `(N / repeat) × Sk × D` and is shared by `repeat` consecutive query
    /// sequences.
    fn attention(&mut self, prefix: &str, queries: Var, context: Var, repeat: usize) -> Result<Var> {
        let (h, dh, d) = (self.cfg.heads, self.cfg.head_dim(), self.cfg.d_model);
        let (n, sq) = (self.graph.shape(queries)[0], self.graph.shape(queries)[1]);
        let (nk, sk) = (self.graph.shape(context)[0], self.graph.shape(context)[1]);
        if nk * repeat != n {
            return Err(Error::Dimension {
                op: "attention",
                lhs: self.graph.shape(queries).to_vec(),
                rhs: self.graph.shape(context).to_vec(),
            });
        }
        let w = |s: &Self, k: &str| s.p(&format!("{prefix}.{k}"));
        let (wq, bq, wk, bk) = (w(self, "wq")?, w(self, "bq")?, w(self, "wk")?, w(self, "bk")?);
        let (wv, bv, wo, bo) = (w(self, "wv")?, w(self, "bv")?, w(self, "wo")?, w(self, "bo")?);

        let g = &mut *self.graph;
        let split_heads = |g: &mut Graph<T>, x: Var, rows: usize, len: usize| -> Result<Var> {
            let x = g.reshape(x, &[rows, len, h, dh])?;
            g.permute(x, &[0, 2, 1, 3])
        };
        let q = g.linear(queries, wq, Some(bq))?;
        let q = split_heads(g, q, n, sq)?;
        let q = g.reshape(q, &[n * h, sq, dh])?;
        let mut kv = Vec::with_capacity(2);
        for (wt, bt) in [(wk, bk), (wv, bv)] {
            let x = g.linear(context, wt, Some(bt))?;
            let x = split_heads(g, x, nk, sk)?;
            let x = if repeat > 1 {
                let x = g.reshape(x, &[nk, 1, h * sk * dh])?;
                g.broadcast_to(x, &[nk, repeat, h * sk * dh])?
            } else {
                x
            };
            kv.push(g.reshape(x, &[n * h, sk, dh])?);
        }
        let scores = g.batch_matmul(q, kv[0], true)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let weights = g.softmax(scores);
        let mixed = g.batch_matmul(weights, kv[1], false)?;
        let mixed = g.reshape(mixed, &[n, h, sq, dh])?;
        let mixed = g.permute(mixed, &[0, 2, 1, 3])?;
        let mixed = g.reshape(mixed, &[n, sq, d])?;
        let out = g.linear(mixed, wo, Some(bo))?;
        self.attention.push((prefix.to_string(), weights));
        self.dropout(out)
    }
}

/// Evaluation-mode forecast (`B × M × T`) for a window batch.
pub fn predict<T: Scalar>(params: &ModelParams<T>, cfg: &ModelConfig, batch: &WindowBatch) -> Result<Array<T>> {
    let mut g = Graph::new();
    let bound = bind(&mut g, params, |_| false);
    let (pred, _) = Forward::new(&mut g, &bound, cfg).forecast(batch)?;
    Ok(g.value(pred).clone())
}

/// Evaluation-mode reconstruction of a masked patch set.
pub fn reconstruct<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    masked: &PatchSet,
    history: &Array<f32>,
) -> Result<Array<T>> {
    let mut g = Graph::new();
    let bound = bind(&mut g, params, |_| false);
    let (recon, _) = Forward::new(&mut g, &bound, cfg).pretrain(masked, history)?;
    Ok(g.value(recon).clone())
}
