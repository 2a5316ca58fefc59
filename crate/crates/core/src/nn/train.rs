use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::denoiser::TinyDenoiser;
use super::executor::{Conditioning, TinyARExecutor};
use super::optim::{clip_grads, lr_at, AdamW};
use super::params::ParamStore;
use super::tape::{Grads, Tape};
use crate::config::Config;
use crate::diffusion::{
    mask_blocks, mask_level, mask_span, BlockMasking, BlockPartition, MASK_LEVEL_RANGE,
};
use crate::rng::SeedStream;
use crate::{par, Dist, Error, Result, TokenId};

/// Optimisation settings shared by both training loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup_ratio: f64,
    pub clip: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch: 8,
            lr: 2e-3,
            warmup_ratio: 0.03,
            clip: 7.0,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn from_config(cfg: &Config, section: &str) -> Result<Self> {
        let d = Self::default();
        let out = Self {
            steps: cfg.get_or(section, "steps", d.steps)?,
            batch: cfg.get_or(section, "batch", d.batch)?,
            lr: cfg.get_or(section, "lr", d.lr)?,
            warmup_ratio: cfg.get_or(section, "warmup_ratio", d.warmup_ratio)?,
            clip: cfg.get_or(section, "clip", d.clip)?,
            weight_decay: cfg.get_or(section, "weight_decay", d.weight_decay)?,
            seed: cfg.get_or(section, "seed", d.seed)?,
        };
        let bad = |x: f64| x.is_nan() || x <= 0.0;
        if out.batch == 0 || bad(out.lr) || bad(out.clip) {
            return Err(Error::Config(format!("invalid training settings {out:?}")));
        }
        Ok(out)
    }
}

/// One row of a loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub mask_level: f64,
}

pub fn write_loss_csv(path: impl AsRef<Path>, curve: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in curve {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_loss_csv(path: impl AsRef<Path>) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Mean loss over the last `window` records.
pub fn smoothed_final(curve: &[LossRecord], window: usize) -> f64 {
    let tail = &curve[curve.len().saturating_sub(window)..];
    tail.iter().map(|r| r.loss).sum::<f64>() / tail.len().max(1) as f64
}

/// How blocks are chosen for masking while training the executor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecutorMasking {
    /// Each block masked independently at a random level.
    Blocks,
    /// One contiguous span of `len` positions starting at a multiple of `len`.
    Span { len: usize },
}

impl std::str::FromStr for ExecutorMasking {
    type Err = Error;

    /// `blocks` or `span:<len>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "blocks" => Ok(Self::Blocks),
            Some(("span", n)) => n
                .parse()
                .map(|len| Self::Span { len })
                .map_err(|e| Error::Config(format!("span length {n}: {e}"))),
            _ => Err(Error::Config(format!(
                "unknown masking `{s}`, expected blocks or span:<len>"
            ))),
        }
    }
}

/// Loss weight for a masking level: the continuous-time analogue of the
/// per-step weight, `1 / p_mask`.
pub fn mask_level_weight(level: f64) -> f64 {
    1.0 / level
}

#[allow(clippy::too_many_arguments)]
fn block_loss_tape<'p>(
    t: &mut Tape<'p>,
    exec: &'p TinyARExecutor,
    pi: &[Dist],
    x0: &[TokenId],
    masking: &BlockMasking,
    part: &BlockPartition,
    cond: Conditioning,
    weight: f64,
) -> Result<Option<usize>> {
    let mut total = None;
    for b in masking.masked_blocks() {
        let r = part.range(b);
        let nll = exec.block_nll(t, &pi[r.clone()], &x0[r], cond, weight)?;
        total = Some(match total {
            None => nll,
            Some(acc) => t.add(acc, nll)?,
        });
    }
    if total.is_none() {
        return Err(Error::contract("no masked block"));
    }
    Ok(total)
}

/// Block-wise loss: denoiser marginals over each masked block soft-condition
/// the executor, which is teacher-forced on the true block; the summed NLL is
/// scaled by `weight`.
pub fn block_loss(
    den: &TinyDenoiser,
    exec: &TinyARExecutor,
    x0: &[TokenId],
    masking: &BlockMasking,
    part: &BlockPartition,
    weight: f64,
) -> Result<f64> {
    let pi = den.predict(&masking.masked)?;
    let mut t = Tape::new(exec.params());
    let root = block_loss_tape(
        &mut t,
        exec,
        &pi,
        x0,
        masking,
        part,
        Conditioning::Soft,
        weight,
    )?
    .expect("checked");
    Ok(t.value(root).get(0, 0))
}

/// [`block_loss`] together with its gradient with respect to the executor.
pub fn block_loss_grad(
    den: &TinyDenoiser,
    exec: &TinyARExecutor,
    x0: &[TokenId],
    masking: &BlockMasking,
    part: &BlockPartition,
    weight: f64,
) -> Result<(f64, Grads)> {
    let pi = den.predict(&masking.masked)?;
    let mut t = Tape::new(exec.params());
    let root = block_loss_tape(
        &mut t,
        exec,
        &pi,
        x0,
        masking,
        part,
        Conditioning::Soft,
        weight,
    )?
    .expect("checked");
    Ok((t.value(root).get(0, 0), t.backward(root)?))
}

struct StepResult {
    loss: f64,
    level: f64,
    grads: Grads,
}

/// Shared minibatch loop. Per-sample gradients are computed in parallel and
/// reduced in sample order, so the curve is identical across thread counts.
fn optimise<M, F>(
    model: &mut M,
    store_of: fn(&mut M) -> &mut ParamStore,
    data_len: usize,
    cfg: &TrainConfig,
    per_sample: F,
) -> Result<Vec<LossRecord>>
where
    M: Sync,
    F: Fn(&M, usize, u64) -> Result<StepResult> + Sync,
{
    if data_len == 0 {
        return Err(Error::contract("empty training set"));
    }
    let batches = SeedStream::new(cfg.seed).child("batch");
    let mut opt = AdamW::new(store_of(model), cfg.weight_decay);
    let mut curve = Vec::with_capacity(cfg.steps);
    let n = cfg.batch as f64;
    for step in 0..cfg.steps {
        let mut rng = batches.rng(step as u64);
        let specs: Vec<(usize, u64)> = (0..cfg.batch)
            .map(|_| (rng.random_range(0..data_len), rng.random::<u64>()))
            .collect();
        let shared: &M = model;
        let results = par::map(&specs, |&(idx, seed)| per_sample(shared, idx, seed));
        let mut grads = Grads::zeros_like(store_of(model));
        let (mut loss, mut level) = (0.0, 0.0);
        for r in results {
            let r = r?;
            loss += r.loss;
            level += r.level;
            grads.accumulate(&r.grads)?;
        }
        let (loss, level) = (loss / n, level / n);
        grads.scale(1.0 / n);
        let norm = grads.norm();
        if !loss.is_finite() || !norm.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("loss {loss}, gradient norm {norm}"),
            });
        }
        clip_grads(&mut grads, cfg.clip);
        opt.step(
            store_of(model),
            &grads,
            lr_at(step, cfg.steps, cfg.lr, cfg.warmup_ratio),
        )?;
        curve.push(LossRecord {
            step,
            loss,
            mask_level: level,
        });
    }
    Ok(curve)
}

fn check_data(data: &[Vec<TokenId>], len: usize) -> Result<()> {
    match data.iter().find(|s| s.len() != len) {
        Some(s) => Err(Error::Shape(format!(
            "training sequence of length {} for a model of {len}",
            s.len()
        ))),
        None => Ok(()),
    }
}

/// Token-level masked-diffusion pretraining: each position is masked with
/// probability `p` from a uniform level, and the masked cross-entropy is
/// weighted by `1 / p`.
pub fn pretrain_denoiser(
    den: &mut TinyDenoiser,
    data: &[Vec<TokenId>],
    cfg: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    check_data(data, den.len())?;
    let part = BlockPartition::new(den.len(), 1)?;
    optimise(
        den,
        TinyDenoiser::params_mut,
        data.len(),
        cfg,
        |den, idx, seed| {
            let x0 = &data[idx];
            let mut rng = SeedStream::new(seed).rng(0);
            let level = mask_level(rng.random::<f64>());
            let masking = mask_blocks(x0, &part, den.vocab(), level, &mut rng)?;
            let mut t = Tape::new(den.params());
            let root = den.token_loss(&mut t, x0, &masking.masked, mask_level_weight(level))?;
            Ok(StepResult {
                loss: t.value(root).get(0, 0),
                level,
                grads: t.backward(root)?,
            })
        },
    )
}

/// Train the executor against a frozen denoiser with the block-wise loss.
pub fn train_executor(
    exec: &mut TinyARExecutor,
    den: &TinyDenoiser,
    data: &[Vec<TokenId>],
    block_size: usize,
    masking: ExecutorMasking,
    cfg: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    check_data(data, den.len())?;
    if block_size > exec.max_block() {
        return Err(Error::Config(format!(
            "block size {block_size} exceeds executor capacity {}",
            exec.max_block()
        )));
    }
    let part = BlockPartition::new(den.len(), block_size)?;
    if let ExecutorMasking::Span { len } = masking {
        if len == 0 || len % block_size != 0 || !den.len().is_multiple_of(len) {
            return Err(Error::Config(format!(
                "span {len} incompatible with length {} and block {block_size}",
                den.len()
            )));
        }
    }
    optimise(
        exec,
        TinyARExecutor::params_mut,
        data.len(),
        cfg,
        |exec, idx, seed| {
            let x0 = &data[idx];
            let mut rng = SeedStream::new(seed).rng(0);
            let m = match masking {
                ExecutorMasking::Blocks => {
                    let t = rng.random_range(MASK_LEVEL_RANGE.0..MASK_LEVEL_RANGE.1);
                    mask_blocks(x0, &part, den.vocab(), mask_level(t), &mut rng)?
                }
                ExecutorMasking::Span { len } => {
                    let start = rng.random_range(0..den.len() / len) * len;
                    mask_span(x0, &part, den.vocab(), start, len)?
                }
            };
            let (loss, grads) =
                block_loss_grad(den, exec, x0, &m, &part, mask_level_weight(m.mask_level))?;
            Ok(StepResult {
                loss,
                level: m.mask_level,
                grads,
            })
        },
    )
}
