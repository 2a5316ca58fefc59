use std::ops::Range;

use crate::decode::sampling::Sampling;
use crate::diffusion::Vocabulary;
use crate::nn::{Conditioning, TinyARExecutor, TinyDenoiser};
use crate::oracle::TabularJoint;
use crate::rng::Rng;
use crate::{Dist, Error, Result, TokenId};

/// Produces a per-position distribution for a partially masked sequence.
pub trait MarginalPredictor: Sync {
    fn vocab(&self) -> &Vocabulary;

    /// One distribution per position; unmasked positions are point masses on
    /// the observed token and no distribution places mass on MASK.
    fn predict(&self, xt: &[TokenId]) -> Result<Vec<Dist>>;
}

/// Everything a block executor sees when asked to finish one block.
#[derive(Debug, Clone)]
pub struct BlockRequest<'a> {
    pub xt: &'a [TokenId],
    pub range: Range<usize>,
    /// Predictor marginals for every position of the block.
    pub marginals: &'a [Dist],
    /// Tokens already committed at the start of the block.
    pub prefix: &'a [TokenId],
    pub sampling: Sampling,
    pub conditioning: Conditioning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockOutput {
    /// One token per position after the prefix.
    pub tokens: Vec<TokenId>,
    /// The distribution each token was drawn from.
    pub dists: Vec<Dist>,
}

/// Jointly decodes the masked remainder of one block.
pub trait BlockExecutor: Sync {
    fn decode_block(&self, req: &BlockRequest<'_>, rng: &mut Rng) -> Result<BlockOutput>;
}

/// Exact conditional marginals of a tabular joint.
#[derive(Debug, Clone, Copy)]
pub struct OraclePredictor<'q> {
    pub q: &'q TabularJoint,
}

impl MarginalPredictor for OraclePredictor<'_> {
    fn vocab(&self) -> &Vocabulary {
        self.q.vocab()
    }

    fn predict(&self, xt: &[TokenId]) -> Result<Vec<Dist>> {
        let v = self.q.vocab();
        (0..xt.len())
            .map(|i| {
                if v.is_mask(xt[i]) {
                    self.q.conditional_marginal(xt, i)
                } else {
                    Ok(v.point_mass(xt[i]))
                }
            })
            .collect()
    }
}

/// Exact block chain rule of a tabular joint; the ideal executor.
#[derive(Debug, Clone, Copy)]
pub struct OracleExecutor<'q> {
    pub q: &'q TabularJoint,
}

impl BlockExecutor for OracleExecutor<'_> {
    fn decode_block(&self, req: &BlockRequest<'_>, rng: &mut Rng) -> Result<BlockOutput> {
        let v = self.q.vocab();
        let mut evidence = req.xt.to_vec();
        evidence[req.range.clone()].fill(v.mask());
        let mut decoded = req.prefix.to_vec();
        let mut dists = Vec::new();
        while decoded.len() < req.range.len() {
            let d = self
                .q
                .block_conditional(&evidence, req.range.clone(), &decoded)?;
            decoded.push(req.sampling.sample(&d, rng));
            dists.push(d);
        }
        Ok(BlockOutput {
            tokens: decoded.split_off(req.prefix.len()),
            dists,
        })
    }
}

/// Fixed per-position marginals that ignore the evidence at masked positions.
#[derive(Debug, Clone)]
pub struct IndependentPredictor {
    pub vocab: Vocabulary,
    pub marginals: Vec<Dist>,
}

impl IndependentPredictor {
    pub fn uniform_content(vocab: Vocabulary, len: usize) -> Self {
        let n = vocab.num_content() as f64;
        let d: Dist = (0..vocab.size())
            .map(|t| if vocab.is_content(t) { 1.0 / n } else { 0.0 })
            .collect();
        Self {
            vocab,
            marginals: vec![d; len],
        }
    }
}

impl MarginalPredictor for IndependentPredictor {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn predict(&self, xt: &[TokenId]) -> Result<Vec<Dist>> {
        if xt.len() != self.marginals.len() {
            return Err(Error::Shape(format!(
                "{} marginals for length {}",
                self.marginals.len(),
                xt.len()
            )));
        }
        Ok(xt
            .iter()
            .zip(&self.marginals)
            .map(|(&x, d)| {
                if self.vocab.is_mask(x) {
                    d.clone()
                } else {
                    self.vocab.point_mass(x)
                }
            })
            .collect())
    }
}

/// Samples every remaining block position independently from its marginal.
#[derive(Debug, Clone, Copy, Default)]
pub struct MarginalSamplingExecutor;

impl BlockExecutor for MarginalSamplingExecutor {
    fn decode_block(&self, req: &BlockRequest<'_>, rng: &mut Rng) -> Result<BlockOutput> {
        let dists: Vec<Dist> = req.marginals[req.prefix.len()..].to_vec();
        let tokens = dists.iter().map(|d| req.sampling.sample(d, rng)).collect();
        Ok(BlockOutput { tokens, dists })
    }
}

impl MarginalPredictor for TinyDenoiser {
    fn vocab(&self) -> &Vocabulary {
        TinyDenoiser::vocab(self)
    }

    fn predict(&self, xt: &[TokenId]) -> Result<Vec<Dist>> {
        TinyDenoiser::predict(self, xt)
    }
}

impl BlockExecutor for TinyARExecutor {
    fn decode_block(&self, req: &BlockRequest<'_>, rng: &mut Rng) -> Result<BlockOutput> {
        let (tokens, dists) = self.decode(
            req.marginals,
            req.prefix,
            req.conditioning,
            &req.sampling,
            rng,
        )?;
        Ok(BlockOutput { tokens, dists })
    }
}
