use super::layers::{ModelConfig, Trunk};
use super::params::{Checkpoint, ParamId, ParamStore};
use super::tape::{masked_softmax, Tape, Target, Var};
use super::tensor::Mat;
use super::{vocab_from_meta, vocab_meta};
use crate::diffusion::Vocabulary;
use crate::rng::SeedStream;
use crate::{Dist, Error, Result, TokenId};

/// Bidirectional transformer producing per-position token marginals.
#[derive(Debug, Clone)]
pub struct TinyDenoiser {
    vocab: Vocabulary,
    len: usize,
    cfg: ModelConfig,
    store: ParamStore,
    tok: ParamId,
    pos: ParamId,
    trunk: Trunk,
}

impl TinyDenoiser {
    pub fn new(vocab: Vocabulary, len: usize, cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if len == 0 {
            return Err(Error::Config("denoiser length must be positive".into()));
        }
        let mut rng = SeedStream::new(seed).child("denoiser-init").rng(0);
        let mut store = ParamStore::new();
        let tok = store.add_uniform("tok_emb", vocab.size(), cfg.d_model, 1, &mut rng);
        let pos = store.add_uniform("pos_emb", len, cfg.d_model, 1, &mut rng);
        let trunk = Trunk::init(&mut store, cfg, vocab.size(), false, &mut rng);
        Ok(Self {
            vocab,
            len,
            cfg,
            store,
            tok,
            pos,
            trunk,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn config(&self) -> ModelConfig {
        self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Tokens the readout may place mass on: content and EOS.
    pub fn allowed(&self) -> Vec<bool> {
        (0..self.vocab.size())
            .map(|t| self.vocab.is_emittable(t))
            .collect()
    }

    fn check_input(&self, xt: &[TokenId]) -> Result<()> {
        if xt.len() != self.len {
            return Err(Error::Shape(format!(
                "denoiser expects length {}, got {}",
                self.len,
                xt.len()
            )));
        }
        xt.iter().try_for_each(|&t| self.vocab.check_token(t))
    }

    pub(crate) fn logits(&self, t: &mut Tape<'_>, xt: &[TokenId]) -> Result<Var> {
        self.check_input(xt)?;
        let tok = t.param(self.tok);
        let pos = t.param(self.pos);
        let e = t.gather_rows(tok, xt.to_vec())?;
        let h = t.add(e, pos)?;
        self.trunk.forward(t, h)
    }

    /// Per-position marginals; unmasked positions are point masses on the observed token.
    pub fn predict(&self, xt: &[TokenId]) -> Result<Vec<Dist>> {
        let mut t = Tape::new(&self.store);
        let logits = self.logits(&mut t, xt)?;
        let lv = t.value(logits);
        let allowed = self.allowed();
        Ok(xt
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                if self.vocab.is_mask(x) {
                    masked_softmax(lv.row(i), &allowed)
                } else {
                    self.vocab.point_mass(x)
                }
            })
            .collect())
    }

    /// `weight · Σ_masked −log p(x0 | xt) / len` on a fresh tape.
    pub fn token_loss<'p>(
        &'p self,
        t: &mut Tape<'p>,
        x0: &[TokenId],
        xt: &[TokenId],
        weight: f64,
    ) -> Result<Var> {
        if x0.len() != xt.len() {
            return Err(Error::Shape("x0 and xt lengths differ".into()));
        }
        let logits = self.logits(t, xt)?;
        let w = weight / self.len as f64;
        let targets = xt
            .iter()
            .zip(x0)
            .enumerate()
            .filter(|(_, (&m, _))| self.vocab.is_mask(m))
            .map(|(row, (_, &token))| Target {
                row,
                token,
                weight: w,
            })
            .collect();
        t.cross_entropy(logits, &self.allowed(), targets)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: vec![
                ("kind".into(), "denoiser".into()),
                ("vocab".into(), vocab_meta(&self.vocab)),
                ("len".into(), self.len.to_string()),
                ("model".into(), self.cfg.to_meta()),
            ],
            params: self.store.clone(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta("kind")? != "denoiser" {
            return Err(Error::Parse(format!(
                "checkpoint kind {} is not a denoiser",
                ck.meta("kind")?
            )));
        }
        let vocab = vocab_from_meta(ck.meta("vocab")?)?;
        let cfg = ModelConfig::from_meta(ck.meta("model")?)?;
        let mut out = Self::new(vocab, ck.meta_parse("len")?, cfg, 0)?;
        out.store.load_from(&ck.params)?;
        Ok(out)
    }

    /// Embedding table, exposed for inspection.
    pub fn token_embedding(&self) -> &Mat {
        self.store.get(self.tok)
    }
}
