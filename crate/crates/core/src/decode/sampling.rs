use rand::Rng as _;

use crate::config::Config;
use crate::rng::Rng;
use crate::{Dist, Error, Result, TokenId};

/// How a token is drawn from a categorical distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampling {
    pub temperature: f64,
    pub top_p: f64,
    pub greedy: bool,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 1.0,
            greedy: false,
        }
    }
}

impl Sampling {
    pub fn greedy() -> Self {
        Self {
            greedy: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |x: f64| x.is_nan() || x <= 0.0;
        if bad(self.temperature) || bad(self.top_p) || self.top_p > 1.0 {
            return Err(Error::Config(format!("invalid sampling {self:?}")));
        }
        Ok(())
    }

    pub fn from_config(cfg: &Config, section: &str) -> Result<Self> {
        let d = Self::default();
        let out = Self {
            temperature: cfg.get_or(section, "temperature", d.temperature)?,
            top_p: cfg.get_or(section, "top_p", d.top_p)?,
            greedy: cfg.get_or(section, "greedy", d.greedy)?,
        };
        out.validate()?;
        Ok(out)
    }

    /// The distribution actually sampled from after temperature and nucleus truncation.
    pub fn adjust(&self, dist: &[f64]) -> Dist {
        if self.greedy {
            let mut out = vec![0.0; dist.len()];
            out[argmax(dist)] = 1.0;
            return out;
        }
        let mut p: Dist = if self.temperature == 1.0 {
            dist.to_vec()
        } else {
            dist.iter()
                .map(|&x| {
                    if x > 0.0 {
                        x.powf(1.0 / self.temperature)
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
        if self.top_p < 1.0 {
            let mut order: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
            order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
            let mut keep = vec![false; p.len()];
            let mut acc = 0.0;
            for &i in &order {
                keep[i] = true;
                acc += p[i];
                if acc >= self.top_p {
                    break;
                }
            }
            for (x, k) in p.iter_mut().zip(&keep) {
                if !k {
                    *x = 0.0;
                }
            }
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|x| *x /= s);
        }
        p
    }

    pub fn sample(&self, dist: &[f64], rng: &mut Rng) -> TokenId {
        if self.greedy {
            return argmax(dist);
        }
        draw(&self.adjust(dist), rng)
    }
}

/// Highest-probability index; the lowest index wins ties.
pub fn argmax(dist: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > dist[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw; never returns a zero-mass index.
pub fn draw(dist: &[f64], rng: &mut Rng) -> TokenId {
    let u: f64 = rng.random::<f64>() * dist.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}
