use crate::config::Config;
use crate::decode::sampling::Sampling;
use crate::nn::Conditioning;
use crate::oracle::entropy;
use crate::{Dist, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Commit whole blocks chosen by lowest denoiser entropy.
    Static,
    /// Commit the longest low-entropy prefix of one block.
    Dynamic,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Self::Static),
            "dynamic" => Ok(Self::Dynamic),
            _ => Err(Error::Config(format!("unknown mode {s}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Static => "static",
            Self::Dynamic => "dynamic",
        })
    }
}

pub const DEFAULT_SCOPE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerConfig {
    pub mode: Mode,
    pub block_size: usize,
    /// Entropy threshold in nats (dynamic mode).
    pub tau: f64,
    /// Number of masked blocks past the frontier considered each iteration.
    pub scope: usize,
    /// Whole blocks committed per iteration (static mode).
    pub blocks_per_step: usize,
    pub sampling: Sampling,
    pub conditioning: Conditioning,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Static,
            block_size: 4,
            tau: 0.2,
            scope: DEFAULT_SCOPE,
            blocks_per_step: 1,
            sampling: Sampling::default(),
            conditioning: Conditioning::Soft,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 || self.scope == 0 || self.blocks_per_step == 0 {
            return Err(Error::Config(format!(
                "block size, scope and blocks per step must be positive: {self:?}"
            )));
        }
        if self.mode == Mode::Dynamic && (self.tau.is_nan() || self.tau <= 0.0) {
            return Err(Error::Config(format!(
                "dynamic mode needs tau > 0, got {}",
                self.tau
            )));
        }
        self.sampling.validate()
    }

    /// Read the `[decode]` style keys `mode block tau scope blocks_per_step conditioning`
    /// plus sampling keys.
    pub fn from_config(cfg: &Config, section: &str) -> Result<Self> {
        let d = Self::default();
        let out = Self {
            mode: cfg.get_or(section, "mode", d.mode)?,
            block_size: cfg.get_or(section, "block", d.block_size)?,
            tau: cfg.get_or(section, "tau", d.tau)?,
            scope: cfg.get_or(section, "scope", d.scope)?,
            blocks_per_step: cfg.get_or(section, "blocks_per_step", d.blocks_per_step)?,
            sampling: Sampling::from_config(cfg, section)?,
            conditioning: cfg.get_or(section, "conditioning", d.conditioning)?,
        };
        out.validate()?;
        Ok(out)
    }
}

/// Mean entropy (nats) of the first `k` distributions.
pub fn block_entropy(dists: &[Dist], k: usize) -> Result<f64> {
    if k == 0 || k > dists.len() {
        return Err(Error::contract(format!(
            "k = {k} for {} distributions",
            dists.len()
        )));
    }
    Ok(dists[..k].iter().map(|d| entropy(d)).sum::<f64>() / k as f64)
}

/// `max{k : mean(entropies[..k]) ≤ tau}`, or 0 if no prefix qualifies.
pub fn k_star(entropies: &[f64], tau: f64) -> usize {
    let mut sum = 0.0;
    let mut best = 0;
    for (i, h) in entropies.iter().enumerate() {
        sum += h;
        if sum / (i + 1) as f64 <= tau {
            best = i + 1;
        }
    }
    best
}

/// Pick `n` candidates with the lowest score; ties go to the earlier
/// candidate. Returned in selection order.
pub fn select_static(candidates: &[usize], scores: &[f64], n: usize) -> Result<Vec<usize>> {
    if candidates.is_empty() || candidates.len() != scores.len() {
        return Err(Error::contract(format!(
            "{} candidates with {} scores",
            candidates.len(),
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .total_cmp(&scores[b])
            .then(candidates[a].cmp(&candidates[b]))
    });
    Ok(order.into_iter().take(n).map(|i| candidates[i]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicChoice {
    pub block: usize,
    /// Tokens to commit from the start of the block's masked remainder.
    pub k: usize,
    /// True when a single token is taken from the denoiser instead.
    pub fallback: bool,
    /// `h(k)` of the executor profile, or the denoiser entropy on fallback.
    pub entropy: f64,
}

/// Choose the block with the largest `k*`, breaking ties by smaller `h(k*)`
/// then lower block index. If no block reaches `k* ≥ 2`, fall back to the
/// candidate whose next masked position has the lowest denoiser entropy.
pub fn select_dynamic(
    candidates: &[usize],
    executor_entropies: &[Vec<f64>],
    denoiser_entropies: &[f64],
    tau: f64,
) -> Result<DynamicChoice> {
    if candidates.is_empty()
        || candidates.len() != executor_entropies.len()
        || candidates.len() != denoiser_entropies.len()
    {
        return Err(Error::contract(
            "candidate and entropy lists disagree or are empty",
        ));
    }
    let mut best: Option<DynamicChoice> = None;
    for (&block, ents) in candidates.iter().zip(executor_entropies) {
        let k = k_star(ents, tau);
        if k == 0 {
            continue;
        }
        let h = ents[..k].iter().sum::<f64>() / k as f64;
        let better = match best {
            None => true,
            Some(b) => {
                k > b.k || (k == b.k && (h < b.entropy || (h == b.entropy && block < b.block)))
            }
        };
        if better {
            best = Some(DynamicChoice {
                block,
                k,
                fallback: false,
                entropy: h,
            });
        }
    }
    match best {
        Some(b) if b.k >= 2 => Ok(b),
        _ => {
            let mut j = 0;
            for i in 1..candidates.len() {
                if denoiser_entropies[i] < denoiser_entropies[j] {
                    j = i;
                }
            }
            Ok(DynamicChoice {
                block: candidates[j],
                k: 1,
                fallback: true,
                entropy: denoiser_entropies[j],
            })
        }
    }
}
