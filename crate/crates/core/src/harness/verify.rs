use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diffusion::{NoiseSchedule, Vocabulary};
use crate::oracle::{
    counterexample, kl_closed_form_check, mode_exclusion_witness, nelbo_bound, nelbo_gap,
    TabularJoint,
};
use crate::rng::{Rng, SeedStream};
use crate::{par, Dist, Result, TokenId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifySettings {
    /// Random instances per randomised check.
    pub trials: usize,
    pub seed: u64,
    /// Largest content alphabet, length and step count of the exhaustive KL sweep.
    pub sweep: (usize, usize, usize),
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            trials: 50,
            seed: 0,
            sweep: (5, 4, 4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            writeln!(
                out,
                "{} {:<36} cases={:<6} max_dev={:.3e} tol={:.0e}{}",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.cases,
                c.max_deviation,
                c.tolerance,
                if c.detail.is_empty() {
                    String::new()
                } else {
                    format!("  ({})", c.detail)
                }
            )
            .unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for c in &self.checks {
            w.serialize(c)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check(name: &str, tolerance: f64, run: impl FnOnce() -> Result<(usize, f64)>) -> CheckResult {
    match run() {
        Ok((cases, dev)) => CheckResult {
            name: name.into(),
            cases,
            max_deviation: dev,
            tolerance,
            pass: dev <= tolerance,
            detail: String::new(),
        },
        Err(e) => CheckResult {
            name: name.into(),
            cases: 0,
            max_deviation: f64::INFINITY,
            tolerance,
            pass: false,
            detail: e.to_string(),
        },
    }
}

fn fold(results: Vec<Result<(usize, f64)>>) -> Result<(usize, f64)> {
    results.into_iter().try_fold((0, 0.0f64), |(n, m), r| {
        let (c, d) = r?;
        Ok((n + c, m.max(d)))
    })
}

fn random_joint(alphabet: usize, len: usize, rng: &mut Rng) -> Result<TabularJoint> {
    let density = rng.random_range(0.3..1.0);
    TabularJoint::random(
        Vocabulary::with_content(alphabet)?,
        len,
        alphabet,
        density,
        rng,
    )
}

/// Closed-form and enumerated KL on every support sequence and step.
fn kl_all_cases(q: &TabularJoint, sched: &NoiseSchedule) -> Result<(usize, f64)> {
    let mut n = 0;
    let mut dev = 0.0f64;
    for (x0, _) in q.entries() {
        for t in 1..=sched.steps() {
            let k = kl_closed_form_check(q, sched, x0, t)?;
            dev = dev.max((k.closed - k.brute).abs());
            n += 1;
        }
    }
    Ok((n, dev))
}

pub fn kl_exhaustive_sweep(seed: u64, sweep: (usize, usize, usize)) -> Result<(usize, f64)> {
    let (max_a, max_len, max_t) = sweep;
    let stream = SeedStream::new(seed).child("kl-sweep");
    let mut grid = Vec::new();
    for a in 1..=max_a {
        for len in 1..=max_len {
            for steps in 1..=max_t {
                grid.push((a, len, steps));
            }
        }
    }
    fold(par::map_indexed(grid.len(), |i| {
        let (a, len, steps) = grid[i];
        let q = random_joint(a, len, &mut stream.rng(i as u64))?;
        kl_all_cases(&q, &NoiseSchedule::linear_alpha(steps)?)
    }))
}

pub fn kl_random(seed: u64, trials: usize) -> Result<(usize, f64)> {
    let stream = SeedStream::new(seed).child("kl-random");
    fold(par::map_indexed(trials, |i| {
        let mut rng = stream.rng(i as u64);
        let a = rng.random_range(2..=5);
        let len = rng.random_range(2..=4);
        let q = random_joint(a, len, &mut rng)?;
        kl_all_cases(&q, &NoiseSchedule::linear_alpha(rng.random_range(1..=4))?)
    }))
}

/// Joint `i` of the bound checks: content alphabet 3, length 4.
fn bound_joint(seed: u64, i: usize) -> Result<TabularJoint> {
    random_joint(
        3,
        4,
        &mut SeedStream::new(seed).child("nelbo").rng(i as u64),
    )
}

pub fn nelbo_monotone(seed: u64, trials: usize) -> Result<(usize, f64)> {
    let sched = NoiseSchedule::linear_alpha(2)?;
    fold(par::map_indexed(trials, |i| {
        let q = &bound_joint(seed, i)?;
        let b: Vec<f64> = [1, 2, 4]
            .iter()
            .map(|&b| nelbo_bound(q, &sched, b))
            .collect::<Result<_>>()?;
        Ok((1, (b[1] - b[0]).max(b[2] - b[1]).max(0.0)))
    }))
}

pub fn nelbo_two_paths(seed: u64, trials: usize) -> Result<(usize, f64)> {
    let sched = NoiseSchedule::linear_alpha(2)?;
    fold(par::map_indexed(trials, |i| {
        let q = &bound_joint(seed, i)?;
        let b1 = nelbo_bound(q, &sched, 1)?;
        let mut dev = 0.0f64;
        for b in [2, 4] {
            dev = dev.max((nelbo_gap(q, &sched, b)? - (b1 - nelbo_bound(q, &sched, b)?)).abs());
        }
        Ok((2, dev))
    }))
}

pub fn aa_bb_gap() -> Result<(usize, f64)> {
    let v = Vocabulary::with_content(2)?;
    let q = TabularJoint::uniform(v, 2, vec![vec![0, 0], vec![1, 1]])?;
    let gap = nelbo_gap(&q, &NoiseSchedule::linear_alpha(1)?, 2)?;
    Ok((1, (gap - std::f64::consts::LN_2).abs()))
}

pub fn counterexample_exclusion() -> Result<(usize, f64)> {
    let q = counterexample();
    let k1 = mode_exclusion_witness(&q, 1)?.excluded;
    let k2 = mode_exclusion_witness(&q, 2)?.excluded;
    Ok((2, f64::from(u8::from(!k1) + u8::from(k2))))
}

pub fn product_never_excluded(seed: u64, trials: usize) -> Result<(usize, f64)> {
    let stream = SeedStream::new(seed).child("product");
    let mut excluded = 0;
    let mut cases = 0;
    for i in 0..trials {
        let mut rng = stream.rng(i as u64);
        let a = rng.random_range(2..=5);
        let len = rng.random_range(2..=3);
        let v = Vocabulary::with_content(a)?;
        let margs: Vec<Dist> = (0..len)
            .map(|_| {
                let mut d = vec![0.0; v.size()];
                for x in &mut d[..a] {
                    *x = rng.random::<f64>() + 1e-3;
                }
                let s: f64 = d.iter().sum();
                d.iter().map(|x| x / s).collect()
            })
            .collect();
        let q = TabularJoint::product(v, &margs)?;
        for k in 1..=a {
            excluded += usize::from(mode_exclusion_witness(&q, k)?.excluded);
            cases += 1;
        }
    }
    Ok((cases, excluded as f64))
}

/// Total variation between the block chain rule and the exact block posterior.
pub fn chain_rule_tv(
    q: &TabularJoint,
    xt: &[TokenId],
    block: std::ops::Range<usize>,
) -> Result<f64> {
    let post = q.block_posterior(xt, block.clone())?;
    let mut covered = 0.0;
    let mut diff = 0.0;
    for (b, p) in &post {
        let mut chain = 1.0;
        for j in 0..b.len() {
            chain *= q.block_conditional(xt, block.clone(), &b[..j])?[b[j]];
        }
        covered += chain;
        diff += (chain - p).abs();
    }
    Ok(0.5 * (diff + (1.0 - covered).abs()))
}

pub fn chain_rule_sufficiency(seed: u64, trials: usize) -> Result<(usize, f64)> {
    let stream = SeedStream::new(seed).child("chain");
    fold(par::map_indexed(trials, |i| {
        let mut rng = stream.rng(i as u64);
        let q = random_joint(3, 4, &mut rng)?;
        let m = q.vocab().mask();
        let x0 = q.entries()[rng.random_range(0..q.entries().len())]
            .0
            .clone();
        let b = rng.random_range(0..2);
        let block = 2 * b..2 * b + 2;
        let xt: Vec<TokenId> = x0
            .iter()
            .enumerate()
            .map(|(p, &x)| {
                if block.contains(&p) || rng.random::<bool>() {
                    m
                } else {
                    x
                }
            })
            .collect();
        Ok((1, chain_rule_tv(&q, &xt, block)?))
    }))
}

/// Run every exact-oracle check. Failures are reported, not raised.
pub fn verify_theorems(s: &VerifySettings) -> VerifyReport {
    let checks = vec![
        check("kl-closed-form-exhaustive", 1e-9, || {
            kl_exhaustive_sweep(s.seed, s.sweep)
        }),
        check("kl-closed-form-random", 1e-9, || {
            kl_random(s.seed, s.trials)
        }),
        check("nelbo-monotone-in-block-size", 1e-9, || {
            nelbo_monotone(s.seed, s.trials)
        }),
        check("nelbo-gap-equals-bound-difference", 1e-9, || {
            nelbo_two_paths(s.seed, s.trials)
        }),
        check("nelbo-gap-aa-bb-is-ln2", 1e-12, aa_bb_gap),
        check(
            "mode-exclusion-counterexample",
            0.0,
            counterexample_exclusion,
        ),
        check("mode-exclusion-product-joints", 0.0, || {
            product_never_excluded(s.seed, 100)
        }),
        check("block-chain-rule-matches-posterior", 1e-12, || {
            chain_rule_sufficiency(s.seed, s.trials)
        }),
    ];
    VerifyReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_report_passes() {
        let r = verify_theorems(&VerifySettings {
            trials: 5,
            seed: 1,
            sweep: (3, 3, 2),
        });
        assert!(r.all_pass(), "{}", r.to_text());
        assert_eq!(r.checks.len(), 8);
        assert!(r.to_text().lines().all(|l| l.starts_with("PASS")));
    }

    #[test]
    fn errors_become_failures() {
        let c = check("boom", 1.0, || Err(crate::Error::Degenerate("x".into())));
        assert!(!c.pass);
        assert!(c.detail.contains('x'));
    }
}
