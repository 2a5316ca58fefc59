//! Smallest achievable NELBO under conditional block independence, and the
//! gap between token- and block-level factorisations.
//!
//! [`nelbo_bound`] enumerates the joint `(x_0, x_{t-1}, x_t)` directly from
//! the three per-position forward states and takes entropy differences.
//! [`nelbo_gap`] instead groups evidence `x_t` by mask pattern, builds
//! `q(x_{t-1} | x_t)` from the forward posterior and sums the total
//! correlation inside each block. The two routes share no code beyond the
//! joint table, so `bound(1) - bound(B) == gap(B)` is a real cross-check.

use std::collections::BTreeMap;

use super::joint::{entropy, TabularJoint};
use crate::diffusion::{posterior_step, BlockPartition, NoiseSchedule};
use crate::{par, Error, Result, TokenId};

/// Upper limit on `support * 3^L * T` enumeration work.
pub const MAX_WORK: f64 = 5e7;

#[derive(Debug, Clone, PartialEq)]
pub struct NelboTerms {
    /// `H[x_0]`.
    pub entropy: f64,
    /// Per-step contribution, index `t - 1`.
    pub per_step: Vec<f64>,
}

impl NelboTerms {
    pub fn total(&self) -> f64 {
        self.entropy + self.per_step.iter().sum::<f64>()
    }
}

fn check_size(
    q: &TabularJoint,
    sched: &NoiseSchedule,
    block_size: usize,
) -> Result<BlockPartition> {
    let part = BlockPartition::new(q.len(), block_size)?;
    let work = q.entries().len() as f64 * 3f64.powi(q.len() as i32) * sched.steps() as f64;
    if work > MAX_WORK {
        return Err(Error::Intractable(format!(
            "{} sequences x 3^{} patterns x {} steps = {work:e} > {MAX_WORK:e}",
            q.entries().len(),
            q.len(),
            sched.steps()
        )));
    }
    let key_bits = 2.0 * q.len() as f64 * (q.vocab().size() as f64).log2();
    if key_bits >= 127.0 {
        return Err(Error::Intractable(format!(
            "|V|^(2L) with |V| = {} and L = {} overflows the key space",
            q.vocab().size(),
            q.len()
        )));
    }
    Ok(part)
}

fn encode(seq: impl Iterator<Item = TokenId>, base: u128) -> u128 {
    seq.fold(0u128, |acc, t| acc * base + t as u128)
}

fn map_entropy(m: &BTreeMap<u128, f64>) -> f64 {
    m.values().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

/// `B_B = H[x_0] + sum_t (sum_i H[b_{t-1}^i | x_t] - H[x_{t-1} | x_t])`, in nats.
pub fn nelbo_bound(q: &TabularJoint, sched: &NoiseSchedule, block_size: usize) -> Result<f64> {
    Ok(nelbo_bound_terms(q, sched, block_size)?.total())
}

pub fn nelbo_bound_terms(
    q: &TabularJoint,
    sched: &NoiseSchedule,
    block_size: usize,
) -> Result<NelboTerms> {
    let part = check_size(q, sched, block_size)?;
    let len = q.len();
    let mask = q.vocab().mask();
    let base = q.vocab().size() as u128;
    let shift = base.pow(len as u32);
    let patterns = 3usize.pow(len as u32);

    let per_step = par::map_indexed(sched.steps(), |ti| {
        let t = ti + 1;
        let (a_prev, a_cur) = (sched.alpha(t - 1), sched.alpha(t));
        // state 0: kept through t; 1: masked exactly at t; 2: masked by t-1
        let state_p = [a_cur, a_prev - a_cur, 1.0 - a_prev];
        let mut xt_mass: BTreeMap<u128, f64> = BTreeMap::new();
        let mut pair_mass: BTreeMap<u128, f64> = BTreeMap::new();
        let mut block_mass: Vec<BTreeMap<u128, f64>> = vec![BTreeMap::new(); part.num_blocks()];
        let mut states = vec![0u8; len];
        let mut xt = vec![0; len];
        let mut xprev = vec![0; len];
        for code in 0..patterns {
            let mut c = code;
            let mut pw = 1.0;
            for s in states.iter_mut() {
                *s = (c % 3) as u8;
                c /= 3;
                pw *= state_p[*s as usize];
            }
            if pw <= 0.0 {
                continue;
            }
            for (seq, p) in q.entries() {
                let w = p * pw;
                for i in 0..len {
                    xt[i] = if states[i] == 0 { seq[i] } else { mask };
                    xprev[i] = if states[i] == 2 { mask } else { seq[i] };
                }
                let kt = encode(xt.iter().copied(), base);
                *xt_mass.entry(kt).or_insert(0.0) += w;
                *pair_mass
                    .entry(encode(xprev.iter().copied(), base) * shift + kt)
                    .or_insert(0.0) += w;
                for (bi, r) in part.blocks().enumerate() {
                    let kb = encode(xprev[r].iter().copied(), base);
                    *block_mass[bi].entry(kb * shift + kt).or_insert(0.0) += w;
                }
            }
        }
        let h_t = map_entropy(&xt_mass);
        let h_full = map_entropy(&pair_mass) - h_t;
        let h_blocks: f64 = block_mass.iter().map(|m| map_entropy(m) - h_t).sum();
        h_blocks - h_full
    });
    Ok(NelboTerms {
        entropy: q.entropy(),
        per_step,
    })
}

/// `B_1 - B_B`: within-block total correlation of `x_{t-1}` given `x_t`,
/// summed over blocks and steps.
pub fn nelbo_gap(q: &TabularJoint, sched: &NoiseSchedule, block_size: usize) -> Result<f64> {
    Ok(nelbo_gap_terms(q, sched, block_size)?.iter().sum())
}

/// Per-step contributions to [`nelbo_gap`], index `t - 1`.
pub fn nelbo_gap_terms(
    q: &TabularJoint,
    sched: &NoiseSchedule,
    block_size: usize,
) -> Result<Vec<f64>> {
    let part = check_size(q, sched, block_size)?;
    let len = q.len();
    let vocab = *q.vocab();
    let mask = vocab.mask();
    let base = vocab.size() as u128;
    if len >= usize::BITS as usize {
        return Err(Error::Intractable(format!("L = {len}")));
    }

    let terms = par::map_indexed(sched.steps(), |ti| -> Result<f64> {
        let t = ti + 1;
        let a = sched.alpha(t);
        let mut gap = 0.0;
        for pattern in 0usize..(1 << len) {
            let masked = |i: usize| pattern >> i & 1 == 1;
            let n_masked = pattern.count_ones() as i32;
            let p_pattern = (1.0 - a).powi(n_masked) * a.powi(len as i32 - n_masked);
            if p_pattern <= 0.0 {
                continue;
            }
            // group x_0 by the evidence it produces under this pattern
            let mut groups: BTreeMap<u128, Vec<(&[TokenId], f64)>> = BTreeMap::new();
            for (seq, p) in q.entries() {
                let key = encode(
                    (0..len).map(|i| if masked(i) { mask } else { seq[i] }),
                    base,
                );
                groups.entry(key).or_default().push((seq, *p));
            }
            for members in groups.values() {
                let mass: f64 = members.iter().map(|m| m.1).sum();
                let p_xt = p_pattern * mass;
                for r in part.blocks() {
                    let hidden: Vec<usize> = r.clone().filter(|&i| masked(i)).collect();
                    if hidden.len() < 2 {
                        continue;
                    }
                    let mut joint: BTreeMap<Vec<TokenId>, f64> = BTreeMap::new();
                    let mut margs = vec![vec![0.0; vocab.size()]; hidden.len()];
                    for (seq, p) in members {
                        let w0 = p / mass;
                        let kernels = hidden
                            .iter()
                            .map(|&i| posterior_step(mask, seq[i], t, sched, &vocab))
                            .collect::<Result<Vec<_>>>()?;
                        for (j, k) in kernels.iter().enumerate() {
                            margs[j][seq[hidden[j]]] += w0 * k.p_token;
                            margs[j][mask] += w0 * k.p_mask;
                        }
                        for reveal in 0usize..(1 << hidden.len()) {
                            let mut w = w0;
                            let mut b = Vec::with_capacity(hidden.len());
                            for (j, k) in kernels.iter().enumerate() {
                                if reveal >> j & 1 == 1 {
                                    w *= k.p_token;
                                    b.push(seq[hidden[j]]);
                                } else {
                                    w *= k.p_mask;
                                    b.push(mask);
                                }
                            }
                            if w > 0.0 {
                                *joint.entry(b).or_insert(0.0) += w;
                            }
                        }
                    }
                    let h_joint: f64 = joint.values().map(|&p| -p * p.ln()).sum();
                    let h_margs: f64 = margs.iter().map(|m| entropy(m)).sum();
                    gap += p_xt * (h_margs - h_joint);
                }
            }
        }
        Ok(gap)
    });
    terms.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::Vocabulary;
    use crate::rng::SeedStream;
    use std::f64::consts::LN_2;

    fn vocab() -> Vocabulary {
        Vocabulary::with_content(3).unwrap()
    }

    #[test]
    fn aa_bb_gap_is_ln2() {
        let q = TabularJoint::uniform(vocab(), 2, vec![vec![0, 0], vec![1, 1]]).unwrap();
        let s = NoiseSchedule::linear_alpha(1).unwrap();
        let b1 = nelbo_bound(&q, &s, 1).unwrap();
        let b2 = nelbo_bound(&q, &s, 2).unwrap();
        assert!((b1 - 2.0 * LN_2).abs() < 1e-12);
        assert!((b2 - LN_2).abs() < 1e-12);
        assert!((nelbo_gap(&q, &s, 2).unwrap() - LN_2).abs() < 1e-12);
    }

    #[test]
    fn independent_tokens_have_no_gap() {
        let v = vocab();
        let mut m = vec![0.0; v.size()];
        m[0] = 0.3;
        m[1] = 0.7;
        let mut m2 = vec![0.0; v.size()];
        m2[1] = 0.2;
        m2[2] = 0.8;
        let q = TabularJoint::product(v, &[m.clone(), m2.clone(), m, m2]).unwrap();
        let s = NoiseSchedule::linear_alpha(3).unwrap();
        let b1 = nelbo_bound(&q, &s, 1).unwrap();
        for b in [2, 4] {
            assert!((nelbo_bound(&q, &s, b).unwrap() - b1).abs() < 1e-12);
            assert!(nelbo_gap(&q, &s, b).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn whole_sequence_block_collapses_to_entropy() {
        let mut rng = SeedStream::new(17).rng(0);
        for _ in 0..5 {
            let q = TabularJoint::random(vocab(), 3, 3, 0.5, &mut rng).unwrap();
            for steps in 1..4 {
                let s = NoiseSchedule::linear_alpha(steps).unwrap();
                let terms = nelbo_bound_terms(&q, &s, 3).unwrap();
                for term in &terms.per_step {
                    assert!(term.abs() < 1e-12);
                }
                assert!((terms.total() - q.entropy()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_joints_monotone_and_consistent() {
        let stream = SeedStream::new(5);
        for i in 0..10 {
            let mut rng = stream.rng(i);
            let q = TabularJoint::random(vocab(), 4, 3, 0.7, &mut rng).unwrap();
            let s = NoiseSchedule::linear_alpha(2).unwrap();
            let b1 = nelbo_bound(&q, &s, 1).unwrap();
            let b2 = nelbo_bound(&q, &s, 2).unwrap();
            let b4 = nelbo_bound(&q, &s, 4).unwrap();
            assert!(b1 + 1e-9 >= b2 && b2 + 1e-9 >= b4, "{b1} {b2} {b4}");
            assert!((nelbo_gap(&q, &s, 2).unwrap() - (b1 - b2)).abs() < 1e-9);
            assert!((nelbo_gap(&q, &s, 4).unwrap() - (b1 - b4)).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        let q = TabularJoint::uniform(vocab(), 3, vec![vec![0, 0, 0]]).unwrap();
        let s = NoiseSchedule::linear_alpha(2).unwrap();
        assert!(matches!(
            nelbo_bound(&q, &s, 2),
            Err(Error::Partition { .. })
        ));
        let mut rng = SeedStream::new(1).rng(0);
        let big = TabularJoint::random(vocab(), 8, 3, 1.0, &mut rng).unwrap();
        assert!(matches!(
            nelbo_bound(&big, &s, 1),
            Err(Error::Intractable(_))
        ));
    }
}
