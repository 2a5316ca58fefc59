//! Top-k truncation of marginals and the induced product support.

use super::joint::TabularJoint;
use crate::diffusion::Vocabulary;
use crate::{Dist, Error, Result, TokenId};

const SUM_TOL: f64 = 1e-12;

/// Product supports larger than this are not materialised.
pub const MAX_PRODUCT: usize = 100_000;

/// Token names for the two-position counterexample, by token id.
pub const COUNTEREXAMPLE_WORDS: [&str; 5] = ["Roger", "Houston", "You", "I", "They"];

/// Per-position categorical distributions over emittable tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalSet {
    dists: Vec<Dist>,
}

impl MarginalSet {
    pub fn new(dists: Vec<Dist>) -> Result<Self> {
        for (i, d) in dists.iter().enumerate() {
            let s: f64 = d.iter().sum();
            if (s - 1.0).abs() > SUM_TOL || d.iter().any(|&p| p < 0.0) {
                return Err(Error::contract(format!("marginal {i} sums to {s}")));
            }
        }
        Ok(Self { dists })
    }

    pub fn dists(&self) -> &[Dist] {
        &self.dists
    }

    pub fn len(&self) -> usize {
        self.dists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dists.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrechetSupport {
    /// Top-k token set per position, ordered by decreasing mass.
    pub sets: Vec<Vec<TokenId>>,
    /// Cartesian product of the sets when it has at most [`MAX_PRODUCT`] elements.
    pub product: Option<Vec<Vec<TokenId>>>,
}

impl FrechetSupport {
    pub fn contains(&self, block: &[TokenId]) -> bool {
        block.len() == self.sets.len() && block.iter().zip(&self.sets).all(|(t, s)| s.contains(t))
    }

    pub fn product_size(&self) -> usize {
        self.sets.iter().map(Vec::len).product()
    }

    /// Marginals renormalised onto the top-k sets.
    pub fn truncated_marginals(&self, pi: &MarginalSet) -> MarginalSet {
        let dists = pi
            .dists()
            .iter()
            .zip(&self.sets)
            .map(|(d, set)| {
                let mass: f64 = set.iter().map(|&t| d[t]).sum();
                let mut out = vec![0.0; d.len()];
                for &t in set {
                    out[t] = d[t] / mass;
                }
                out
            })
            .collect();
        MarginalSet { dists }
    }
}

/// Keep the `k` most probable tokens at each position; equal masses are
/// ranked by lower token index. Zero-mass tokens are never kept.
pub fn frechet_truncate(pi: &MarginalSet, k: usize) -> Result<FrechetSupport> {
    if k == 0 {
        return Err(Error::contract("k must be at least 1"));
    }
    let sets: Vec<Vec<TokenId>> = pi
        .dists()
        .iter()
        .map(|d| {
            let mut ranked: Vec<TokenId> = (0..d.len()).filter(|&t| d[t] > 0.0).collect();
            ranked.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
            ranked.truncate(k);
            ranked
        })
        .collect();
    let size = sets
        .iter()
        .try_fold(1usize, |acc, s| acc.checked_mul(s.len()));
    let product = match size {
        Some(n) if n <= MAX_PRODUCT => Some(cartesian(&sets)),
        _ => None,
    };
    Ok(FrechetSupport { sets, product })
}

fn cartesian(sets: &[Vec<TokenId>]) -> Vec<Vec<TokenId>> {
    let mut out: Vec<Vec<TokenId>> = vec![Vec::new()];
    for s in sets {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                s.iter().map(move |&t| {
                    let mut p = prefix.clone();
                    p.push(t);
                    p
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeWitness {
    /// True when the joint mode lies outside the top-k product support.
    pub excluded: bool,
    pub mode: Vec<TokenId>,
    pub support: FrechetSupport,
}

/// Check whether truncating a block joint's own marginals to top-k removes
/// its global mode from every distribution with those truncated marginals.
pub fn mode_exclusion_witness(q: &TabularJoint, k: usize) -> Result<ModeWitness> {
    let pi = MarginalSet::new(q.marginals())?;
    let support = frechet_truncate(&pi, k)?;
    let mode = q.mode().to_vec();
    Ok(ModeWitness {
        excluded: !support.contains(&mode),
        mode,
        support,
    })
}

/// The two-token block with mode `(Roger, Roger)` at 0.45 whose top-1
/// marginals select `(Houston, Roger)`.
pub fn counterexample() -> TabularJoint {
    const ROGER: TokenId = 0;
    const HOUSTON: TokenId = 1;
    const YOU: TokenId = 2;
    const I: TokenId = 3;
    const THEY: TokenId = 4;
    let vocab = Vocabulary::with_content(COUNTEREXAMPLE_WORDS.len()).expect("valid vocabulary");
    TabularJoint::new(
        vocab,
        2,
        vec![
            (vec![ROGER, ROGER], 0.45),
            (vec![HOUSTON, YOU], 0.25),
            (vec![HOUSTON, I], 0.25),
            (vec![HOUSTON, THEY], 0.05),
        ],
    )
    .expect("valid counterexample")
}
