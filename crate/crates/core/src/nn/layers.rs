use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::config::Config;
use crate::rng::Rng;
use crate::{Error, Result};

/// Shape of a small pre-norm transformer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0
            || self.n_heads == 0
            || !self.d_model.is_multiple_of(self.n_heads)
            || self.d_ff == 0
        {
            return Err(Error::Config(format!("invalid model shape {self:?}")));
        }
        Ok(())
    }

    /// Read `d_model`, `layers`, `heads`, `d_ff` from a config section.
    pub fn from_config(cfg: &Config, section: &str) -> Result<Self> {
        let d = Self::default();
        let out = Self {
            d_model: cfg.get_or(section, "d_model", d.d_model)?,
            n_layers: cfg.get_or(section, "layers", d.n_layers)?,
            n_heads: cfg.get_or(section, "heads", d.n_heads)?,
            d_ff: cfg.get_or(section, "d_ff", d.d_ff)?,
        };
        out.validate()?;
        Ok(out)
    }

    pub(crate) fn to_meta(self) -> String {
        format!(
            "{} {} {} {}",
            self.d_model, self.n_layers, self.n_heads, self.d_ff
        )
    }

    pub(crate) fn from_meta(s: &str) -> Result<Self> {
        let v: Vec<usize> = s
            .split_whitespace()
            .map(|w| {
                w.parse()
                    .map_err(|_| Error::Parse(format!("model shape {s}")))
            })
            .collect::<Result<_>>()?;
        let [d_model, n_layers, n_heads, d_ff] = v[..] else {
            return Err(Error::Parse(format!("model shape {s}")));
        };
        let out = Self {
            d_model,
            n_layers,
            n_heads,
            d_ff,
        };
        out.validate()?;
        Ok(out)
    }
}

#[derive(Debug, Clone)]
struct LayerIds {
    norm1: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    norm2: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Transformer layers plus the final norm and vocabulary readout.
#[derive(Debug, Clone)]
pub(crate) struct Trunk {
    cfg: ModelConfig,
    causal: bool,
    layers: Vec<LayerIds>,
    norm_f: ParamId,
    pub(crate) w_out: ParamId,
    pub(crate) b_out: ParamId,
}

impl Trunk {
    pub(crate) fn init(
        store: &mut ParamStore,
        cfg: ModelConfig,
        vocab: usize,
        causal: bool,
        rng: &mut Rng,
    ) -> Self {
        let d = cfg.d_model;
        let layers = (0..cfg.n_layers)
            .map(|l| LayerIds {
                norm1: store.add_filled(format!("layer{l}.norm1"), 1, d, 1.0),
                wq: store.add_uniform(format!("layer{l}.wq"), d, d, d, rng),
                wk: store.add_uniform(format!("layer{l}.wk"), d, d, d, rng),
                wv: store.add_uniform(format!("layer{l}.wv"), d, d, d, rng),
                wo: store.add_uniform(format!("layer{l}.wo"), d, d, d, rng),
                norm2: store.add_filled(format!("layer{l}.norm2"), 1, d, 1.0),
                w1: store.add_uniform(format!("layer{l}.w1"), d, cfg.d_ff, d, rng),
                b1: store.add_filled(format!("layer{l}.b1"), 1, cfg.d_ff, 0.0),
                w2: store.add_uniform(format!("layer{l}.w2"), cfg.d_ff, d, cfg.d_ff, rng),
                b2: store.add_filled(format!("layer{l}.b2"), 1, d, 0.0),
            })
            .collect();
        Self {
            cfg,
            causal,
            layers,
            norm_f: store.add_filled("final.norm", 1, d, 1.0),
            w_out: store.add_uniform("readout.w", d, vocab, d, rng),
            b_out: store.add_filled("readout.b", 1, vocab, 0.0),
        }
    }

    /// Map an `n x d_model` input to `n x vocab` logits.
    pub(crate) fn forward(&self, t: &mut Tape<'_>, mut h: Var) -> Result<Var> {
        let heads = self.cfg.n_heads;
        let dh = self.cfg.d_model / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        for l in &self.layers {
            let g = t.param(l.norm1);
            let x = t.rms_norm(h, g)?;
            let (wq, wk, wv, wo) = (t.param(l.wq), t.param(l.wk), t.param(l.wv), t.param(l.wo));
            let q = t.matmul(x, wq)?;
            let k = t.matmul(x, wk)?;
            let v = t.matmul(x, wv)?;
            let mut outs = Vec::with_capacity(heads);
            for hd in 0..heads {
                let qh = t.slice_cols(q, hd * dh, dh)?;
                let kh = t.slice_cols(k, hd * dh, dh)?;
                let vh = t.slice_cols(v, hd * dh, dh)?;
                let s = t.matmul_t(qh, kh)?;
                let s = t.scale(s, scale);
                let p = t.softmax(s, self.causal);
                outs.push(t.matmul(p, vh)?);
            }
            let o = if heads == 1 {
                outs[0]
            } else {
                t.concat_cols(outs)?
            };
            let o = t.matmul(o, wo)?;
            h = t.add(h, o)?;

            let g = t.param(l.norm2);
            let x = t.rms_norm(h, g)?;
            let (w1, b1, w2, b2) = (t.param(l.w1), t.param(l.b1), t.param(l.w2), t.param(l.b2));
            let f = t.matmul(x, w1)?;
            let f = t.add_row(f, b1)?;
            let f = t.silu(f);
            let f = t.matmul(f, w2)?;
            let f = t.add_row(f, b2)?;
            h = t.add(h, f)?;
        }
        let g = t.param(self.norm_f);
        let x = t.rms_norm(h, g)?;
        let (w, b) = (t.param(self.w_out), t.param(self.b_out));
        let logits = t.matmul(x, w)?;
        t.add_row(logits, b)
    }
}
