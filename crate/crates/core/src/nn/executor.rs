use super::layers::{ModelConfig, Trunk};
use super::params::{Checkpoint, ParamId, ParamStore};
use super::tape::{masked_softmax, Tape, Target, Var};
use super::tensor::Mat;
use super::{vocab_from_meta, vocab_meta};
use crate::decode::sampling::{argmax, Sampling};
use crate::diffusion::Vocabulary;
use crate::rng::{Rng, SeedStream};
use crate::{Dist, Error, Result, TokenId};

/// How denoiser marginals are turned into executor prompt rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    /// Probability-weighted average of embedding rows.
    Soft,
    /// Embedding of the argmax token only.
    Top1,
}

impl std::str::FromStr for Conditioning {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(Self::Soft),
            "top1" | "top-1" => Ok(Self::Top1),
            _ => Err(Error::Config(format!("unknown conditioning {s}"))),
        }
    }
}

impl std::fmt::Display for Conditioning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Soft => "soft",
            Self::Top1 => "top1",
        })
    }
}

fn check_dists(pi: &[Dist], size: usize) -> Result<()> {
    for (j, d) in pi.iter().enumerate() {
        if d.len() != size {
            return Err(Error::Shape(format!(
                "marginal {j} has {} entries, expected {size}",
                d.len()
            )));
        }
        let s: f64 = d.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::contract(format!("marginal {j} sums to {s}")));
        }
    }
    Ok(())
}

/// Rows of weights over the vocabulary whose product with `E` gives the
/// framed prompt `[bot, e_1 .. e_B, eot]`.
pub(crate) fn prompt_weights(
    pi: &[Dist],
    vocab: &Vocabulary,
    cond: Conditioning,
) -> Result<Vec<Dist>> {
    check_dists(pi, vocab.size())?;
    let mut rows = Vec::with_capacity(pi.len() + 2);
    rows.push(vocab.point_mass(vocab.bot()));
    for d in pi {
        let top = argmax(d);
        rows.push(if cond == Conditioning::Top1 || top == vocab.eos() {
            vocab.point_mass(top)
        } else {
            d.clone()
        });
    }
    rows.push(vocab.point_mass(vocab.eot()));
    Ok(rows)
}

/// `e_j = Σ_v π_j[v] · E[v]`
pub fn soft_embed(pi: &[Dist], e: &Mat) -> Result<Mat> {
    check_dists(pi, e.rows())?;
    Mat::from_rows(pi).and_then(|w| w.matmul(e))
}

/// Soft rows framed by the boundary embeddings. A position whose marginal
/// has EOS as its argmax gets the hard EOS row instead of the mixture.
pub fn build_block_prompt(pi: &[Dist], e: &Mat, vocab: &Vocabulary) -> Result<Mat> {
    shape_check(e, vocab)?;
    Mat::from_rows(&prompt_weights(pi, vocab, Conditioning::Soft)?)?.matmul(e)
}

/// As [`build_block_prompt`] with every row replaced by its argmax token's embedding.
pub fn hard_condition_prompt(pi: &[Dist], e: &Mat, vocab: &Vocabulary) -> Result<Mat> {
    shape_check(e, vocab)?;
    Mat::from_rows(&prompt_weights(pi, vocab, Conditioning::Top1)?)?.matmul(e)
}

fn shape_check(e: &Mat, vocab: &Vocabulary) -> Result<()> {
    if e.rows() != vocab.size() {
        return Err(Error::Shape(format!(
            "embedding has {} rows for a vocabulary of {}",
            e.rows(),
            vocab.size()
        )));
    }
    Ok(())
}

/// Causal transformer that decodes one block conditioned on a framed prompt.
///
/// Input rows are `[bot, e_1 .. e_B, eot, y_1 .. y_{B-1}]` with a learned
/// position embedding indexed within the block prompt; `y_j` is predicted
/// from row `B + j`.
#[derive(Debug, Clone)]
pub struct TinyARExecutor {
    vocab: Vocabulary,
    max_block: usize,
    cfg: ModelConfig,
    store: ParamStore,
    emb: ParamId,
    pos: ParamId,
    trunk: Trunk,
}

impl TinyARExecutor {
    pub fn new(vocab: Vocabulary, max_block: usize, cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if max_block == 0 {
            return Err(Error::Config("executor block size must be positive".into()));
        }
        let mut rng = SeedStream::new(seed).child("executor-init").rng(0);
        let mut store = ParamStore::new();
        let emb = store.add_uniform("tok_emb", vocab.size(), cfg.d_model, 1, &mut rng);
        let pos = store.add_uniform("pos_emb", 2 * max_block + 1, cfg.d_model, 1, &mut rng);
        let trunk = Trunk::init(&mut store, cfg, vocab.size(), true, &mut rng);
        Ok(Self {
            vocab,
            max_block,
            cfg,
            store,
            emb,
            pos,
            trunk,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn max_block(&self) -> usize {
        self.max_block
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

    pub fn embedding(&self) -> &Mat {
        self.store.get(self.emb)
    }

    /// Set the readout to zero so every allowed token is equally likely.
    pub fn zero_readout(&mut self) {
        for id in [self.trunk.w_out, self.trunk.b_out] {
            self.store.get_mut(id).data_mut().fill(0.0);
        }
    }

    /// Tokens a block may contain: content and EOS.
    pub fn allowed(&self) -> Vec<bool> {
        (0..self.vocab.size())
            .map(|t| self.vocab.is_emittable(t))
            .collect()
    }

    fn logits(
        &self,
        t: &mut Tape<'_>,
        pi: &[Dist],
        cond: Conditioning,
        inputs: &[TokenId],
    ) -> Result<Var> {
        if pi.is_empty() || pi.len() > self.max_block {
            return Err(Error::Shape(format!(
                "block of {} for an executor of {}",
                pi.len(),
                self.max_block
            )));
        }
        let mut rows = prompt_weights(pi, &self.vocab, cond)?;
        for &y in inputs {
            self.vocab.check_token(y)?;
            rows.push(self.vocab.point_mass(y));
        }
        let n = rows.len();
        let w = t.constant(Mat::from_rows(&rows)?);
        let e = t.param(self.emb);
        let x = t.matmul(w, e)?;
        let pos_table = t.param(self.pos);
        let pos = t.gather_rows(pos_table, (0..n).collect())?;
        let h = t.add(x, pos)?;
        self.trunk.forward(t, h)
    }

    /// Teacher-forced `weight · Σ_j −log p(y_j | prompt, y_<j)` for one block.
    pub fn block_nll<'p>(
        &'p self,
        t: &mut Tape<'p>,
        pi: &[Dist],
        target: &[TokenId],
        cond: Conditioning,
        weight: f64,
    ) -> Result<Var> {
        let b = pi.len();
        if target.len() != b {
            return Err(Error::Shape(format!(
                "target of {} for a block of {b}",
                target.len()
            )));
        }
        let logits = self.logits(t, pi, cond, &target[..b - 1])?;
        let targets = target
            .iter()
            .enumerate()
            .map(|(j, &token)| Target {
                row: b + 1 + j,
                token,
                weight,
            })
            .collect();
        t.cross_entropy(logits, &self.allowed(), targets)
    }

    /// Per-step predictive distributions along a fixed block.
    pub fn teacher_forced_dists(
        &self,
        pi: &[Dist],
        target: &[TokenId],
        cond: Conditioning,
    ) -> Result<Vec<Dist>> {
        let b = pi.len();
        if target.len() != b {
            return Err(Error::Shape(format!(
                "target of {} for a block of {b}",
                target.len()
            )));
        }
        let mut t = Tape::new(&self.store);
        let logits = self.logits(&mut t, pi, cond, &target[..b - 1])?;
        let lv = t.value(logits);
        let allowed = self.allowed();
        Ok((0..b)
            .map(|j| masked_softmax(lv.row(b + 1 + j), &allowed))
            .collect())
    }

    /// Decode the rest of a block after a committed `prefix`, returning the new
    /// tokens and the distribution each was drawn from.
    pub fn decode(
        &self,
        pi: &[Dist],
        prefix: &[TokenId],
        cond: Conditioning,
        sampling: &Sampling,
        rng: &mut Rng,
    ) -> Result<(Vec<TokenId>, Vec<Dist>)> {
        let b = pi.len();
        if prefix.len() >= b {
            return Err(Error::contract("prefix fills the whole block"));
        }
        let allowed = self.allowed();
        let mut seq = prefix.to_vec();
        let mut dists = Vec::with_capacity(b - prefix.len());
        while seq.len() < b {
            let mut t = Tape::new(&self.store);
            let logits = self.logits(&mut t, pi, cond, &seq)?;
            let d = masked_softmax(t.value(logits).row(b + 1 + seq.len()), &allowed);
            seq.push(sampling.sample(&d, rng));
            dists.push(d);
        }
        Ok((seq.split_off(prefix.len()), dists))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: vec![
                ("kind".into(), "executor".into()),
                ("vocab".into(), vocab_meta(&self.vocab)),
                ("max_block".into(), self.max_block.to_string()),
                ("model".into(), self.cfg.to_meta()),
            ],
            params: self.store.clone(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta("kind")? != "executor" {
            return Err(Error::Parse(format!(
                "checkpoint kind {} is not an executor",
                ck.meta("kind")?
            )));
        }
        let vocab = vocab_from_meta(ck.meta("vocab")?)?;
        let cfg = ModelConfig::from_meta(ck.meta("model")?)?;
        let mut out = Self::new(vocab, ck.meta_parse("max_block")?, cfg, 0)?;
        out.store.load_from(&ck.params)?;
        Ok(out)
    }
}
