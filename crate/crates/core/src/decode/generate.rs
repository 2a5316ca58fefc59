use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::models::{BlockExecutor, BlockOutput, BlockRequest, MarginalPredictor};
use super::scheduler::{block_entropy, select_dynamic, select_static, Mode, SchedulerConfig};
use crate::diffusion::{BlockPartition, Vocabulary};
use crate::oracle::entropy;
use crate::rng::{Rng, SeedStream};
use crate::{par, Dist, Error, Result, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockStatus {
    Untouched,
    /// The first `k` positions are unmasked, the rest are not.
    Partial(usize),
    Done,
}

/// A partially decoded sequence and its block bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationState {
    seq: Vec<TokenId>,
    part: BlockPartition,
    vocab: Vocabulary,
    pinned: usize,
}

impl GenerationState {
    /// `prompt` occupies the first positions and is never changed.
    pub fn new(
        prompt: &[TokenId],
        len: usize,
        block_size: usize,
        vocab: Vocabulary,
    ) -> Result<Self> {
        let part = BlockPartition::new(len, block_size)?;
        if prompt.len() > len {
            return Err(Error::contract(format!(
                "prompt of {} exceeds length {len}",
                prompt.len()
            )));
        }
        if let Some(&t) = prompt.iter().find(|&&t| !vocab.is_emittable(t)) {
            return Err(Error::contract(format!(
                "prompt token {t} is not emittable"
            )));
        }
        let mut seq = prompt.to_vec();
        seq.resize(len, vocab.mask());
        Ok(Self {
            seq,
            part,
            vocab,
            pinned: prompt.len(),
        })
    }

    pub fn seq(&self) -> &[TokenId] {
        &self.seq
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.part
    }

    pub fn pinned(&self) -> usize {
        self.pinned
    }

    pub fn masked_count(&self) -> usize {
        self.seq.iter().filter(|&&t| self.vocab.is_mask(t)).count()
    }

    /// Number of unmasked positions at the start of block `b`.
    pub fn committed(&self, b: usize) -> usize {
        self.seq[self.part.range(b)]
            .iter()
            .take_while(|&&t| !self.vocab.is_mask(t))
            .count()
    }

    pub fn status(&self, b: usize) -> BlockStatus {
        match self.committed(b) {
            0 => BlockStatus::Untouched,
            k if k == self.part.block_size() => BlockStatus::Done,
            k => BlockStatus::Partial(k),
        }
    }

    /// Leftmost block containing a masked position.
    pub fn frontier(&self) -> Option<usize> {
        (0..self.part.num_blocks()).find(|&b| self.status(b) != BlockStatus::Done)
    }

    /// Write `tokens` into block `b` directly after its committed prefix.
    pub fn commit(&mut self, b: usize, tokens: &[TokenId]) -> Result<()> {
        let r = self.part.range(b);
        let at = r.start + self.committed(b);
        if at + tokens.len() > r.end {
            return Err(Error::contract(format!(
                "{} tokens overflow block {b}",
                tokens.len()
            )));
        }
        for (i, &t) in tokens.iter().enumerate() {
            if !self.vocab.is_emittable(t) {
                return Err(Error::contract(format!("cannot commit token {t}")));
            }
            self.seq[at + i] = t;
        }
        Ok(())
    }

    /// Once an EOS has no mask before it, fill every later mask with EOS.
    /// Returns the number of positions filled.
    pub fn apply_eos_rule(&mut self) -> usize {
        let first_mask = self
            .seq
            .iter()
            .position(|&t| self.vocab.is_mask(t))
            .unwrap_or(self.seq.len());
        let Some(p) = self.seq[..first_mask]
            .iter()
            .position(|&t| t == self.vocab.eos())
        else {
            return 0;
        };
        let mut filled = 0;
        for t in &mut self.seq[p + 1..] {
            if self.vocab.is_mask(*t) {
                *t = self.vocab.eos();
                filled += 1;
            }
        }
        filled
    }
}

/// First `scope` blocks at or after the frontier that still contain a mask.
pub fn candidate_scope(state: &GenerationState, scope: usize) -> Vec<usize> {
    let Some(f) = state.frontier() else {
        return Vec::new();
    };
    (f..state.part.num_blocks())
        .filter(|&b| state.status(b) != BlockStatus::Done)
        .take(scope)
        .collect()
}

/// One committed unit of work, as written to the trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub block: usize,
    pub k: usize,
    pub fallback: bool,
    pub entropy: f64,
    /// Space-separated token ids.
    pub committed_tokens: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GenerationStats {
    /// Decoded tokens per iteration; EOS auto-fill is not counted.
    pub tokens_per_step: f64,
    pub steps: usize,
    pub executor_calls: usize,
    /// Tokens decoded by the scheduler (excludes auto-fill).
    pub decoded_tokens: usize,
    pub eos_filled: usize,
    /// Executor outputs that were not emittable and were replaced by EOS.
    pub degenerate_tokens: usize,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub tokens_per_step: f64,
    pub steps: usize,
    pub executor_calls: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub seq: Vec<TokenId>,
    pub trace: Vec<TraceRow>,
    /// Candidate blocks offered at each iteration.
    pub scopes: Vec<Vec<usize>>,
    pub stats: GenerationStats,
}

impl Generation {
    pub fn stats_record(&self) -> StatsRecord {
        StatsRecord {
            tokens_per_step: self.stats.tokens_per_step,
            steps: self.stats.steps,
            executor_calls: self.stats.executor_calls,
        }
    }

    /// Mean of the per-row entropies in the trace.
    pub fn mean_entropy(&self) -> f64 {
        if self.trace.is_empty() {
            return 0.0;
        }
        self.trace.iter().map(|r| r.entropy).sum::<f64>() / self.trace.len() as f64
    }
}

pub fn write_trace_csv(path: impl AsRef<Path>, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in trace {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn format_tokens(tokens: &[TokenId]) -> String {
    tokens
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Ask the executor for the masked remainder of block `b` and keep the first
/// `k` tokens. Non-emittable executor output is replaced by EOS.
pub fn decode_block(
    state: &GenerationState,
    b: usize,
    k: usize,
    marginals: &[Dist],
    executor: &dyn BlockExecutor,
    cfg: &SchedulerConfig,
    rng: &mut Rng,
) -> Result<(BlockOutput, usize)> {
    let range = state.part.range(b);
    let done = state.committed(b);
    let remaining = range.len() - done;
    if k == 0 || k > remaining {
        return Err(Error::contract(format!(
            "k = {k} with {remaining} masked positions in block {b}"
        )));
    }
    let req = BlockRequest {
        xt: &state.seq,
        range: range.clone(),
        marginals: &marginals[range.clone()],
        prefix: &state.seq[range.start..range.start + done],
        sampling: cfg.sampling,
        conditioning: cfg.conditioning,
    };
    let mut out = executor.decode_block(&req, rng)?;
    if out.tokens.len() != remaining || out.dists.len() != remaining {
        return Err(Error::contract(format!(
            "executor returned {} tokens for {remaining} positions",
            out.tokens.len()
        )));
    }
    let mut degenerate = 0;
    for t in &mut out.tokens {
        if !state.vocab.is_emittable(*t) {
            *t = state.vocab.eos();
            degenerate += 1;
        }
    }
    out.tokens.truncate(k);
    out.dists.truncate(k);
    Ok((out, degenerate))
}

fn masked_positions(state: &GenerationState, b: usize) -> std::ops::Range<usize> {
    let r = state.part.range(b);
    r.start + state.committed(b)..r.end
}

/// Run the denoise / select / commit loop until no mask remains.
pub fn generate(
    prompt: &[TokenId],
    len: usize,
    predictor: &dyn MarginalPredictor,
    executor: &dyn BlockExecutor,
    cfg: &SchedulerConfig,
    seed: u64,
) -> Result<Generation> {
    cfg.validate()?;
    let started = Instant::now();
    let vocab = *predictor.vocab();
    let mut state = GenerationState::new(prompt, len, cfg.block_size, vocab)?;
    let stream = SeedStream::new(seed);
    let exec_stream = stream.child("executor");
    let fallback_stream = stream.child("fallback");
    let nb = state.part.num_blocks() as u64;
    let budget = 10 * len / cfg.block_size;
    let mut gen = Generation {
        seq: Vec::new(),
        trace: Vec::new(),
        scopes: Vec::new(),
        stats: GenerationStats::default(),
    };
    gen.stats.eos_filled += state.apply_eos_rule();

    let mut iter = 0;
    while state.masked_count() > 0 {
        if iter >= budget {
            let masked = state.masked_count();
            gen.seq = state.seq.clone();
            finish(&mut gen, started);
            return Err(Error::StepBudget {
                budget,
                masked,
                partial: Box::new(gen),
            });
        }
        let candidates = candidate_scope(&state, cfg.scope);
        let marginals = predictor.predict(&state.seq)?;
        if marginals.len() != len {
            return Err(Error::Shape(format!(
                "predictor returned {} marginals for length {len}",
                marginals.len()
            )));
        }
        let before = state.masked_count();
        match cfg.mode {
            Mode::Static => {
                let scores = candidates
                    .iter()
                    .map(|&b| {
                        let r = masked_positions(&state, b);
                        block_entropy(&marginals[r.clone()], r.len())
                    })
                    .collect::<Result<Vec<_>>>()?;
                let chosen = select_static(&candidates, &scores, cfg.blocks_per_step)?;
                for b in chosen {
                    let k = masked_positions(&state, b).len();
                    let mut rng = exec_stream.rng(iter as u64 * nb + b as u64);
                    let (out, bad) =
                        decode_block(&state, b, k, &marginals, executor, cfg, &mut rng)?;
                    gen.stats.executor_calls += 1;
                    gen.stats.degenerate_tokens += bad;
                    state.commit(b, &out.tokens)?;
                    let score = scores[candidates
                        .iter()
                        .position(|&c| c == b)
                        .expect("chosen from candidates")];
                    gen.trace.push(TraceRow {
                        iter,
                        block: b,
                        k,
                        fallback: false,
                        entropy: score,
                        committed_tokens: format_tokens(&out.tokens),
                    });
                }
            }
            Mode::Dynamic => {
                let outs = par::map(&candidates, |&b| {
                    let k = masked_positions(&state, b).len();
                    let mut rng = exec_stream.rng(iter as u64 * nb + b as u64);
                    decode_block(&state, b, k, &marginals, executor, cfg, &mut rng)
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
                gen.stats.executor_calls += candidates.len();
                let exec_ents: Vec<Vec<f64>> = outs
                    .iter()
                    .map(|(o, _)| o.dists.iter().map(|d| entropy(d)).collect())
                    .collect();
                let dlm_ents: Vec<f64> = candidates
                    .iter()
                    .map(|&b| entropy(&marginals[masked_positions(&state, b).start]))
                    .collect();
                let choice = select_dynamic(&candidates, &exec_ents, &dlm_ents, cfg.tau)?;
                let tokens = if choice.fallback {
                    let pos = masked_positions(&state, choice.block).start;
                    let mut rng = fallback_stream.rng(iter as u64);
                    vec![cfg.sampling.sample(&marginals[pos], &mut rng)]
                } else {
                    let i = candidates
                        .iter()
                        .position(|&c| c == choice.block)
                        .expect("chosen from candidates");
                    gen.stats.degenerate_tokens += outs[i].1;
                    outs[i].0.tokens[..choice.k].to_vec()
                };
                state.commit(choice.block, &tokens)?;
                gen.trace.push(TraceRow {
                    iter,
                    block: choice.block,
                    k: choice.k,
                    fallback: choice.fallback,
                    entropy: choice.entropy,
                    committed_tokens: format_tokens(&tokens),
                });
            }
        }
        gen.stats.decoded_tokens += before - state.masked_count();
        gen.stats.eos_filled += state.apply_eos_rule();
        gen.scopes.push(candidates);
        iter += 1;
    }
    gen.seq = state.seq;
    finish(&mut gen, started);
    Ok(gen)
}

fn finish(gen: &mut Generation, started: Instant) {
    gen.stats.steps = gen.scopes.len();
    gen.stats.tokens_per_step = if gen.stats.steps == 0 {
        0.0
    } else {
        gen.stats.decoded_tokens as f64 / gen.stats.steps as f64
    };
    gen.stats.wall_time = started.elapsed();
}
