use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;

use rand::Rng as _;

use crate::diffusion::Vocabulary;
use crate::rng::Rng;
use crate::{Dist, Error, Result, TokenId};

/// Largest number of sequences `emittable^L` a table may range over.
pub const MAX_TABLE: f64 = 1e6;

const SUM_TOL: f64 = 1e-12;

/// Shannon entropy in nats; zero entries contribute nothing.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

/// An explicit joint distribution `q(x_0)` over sequences of length `len`.
///
/// Entries are kept sorted lexicographically with strictly positive mass.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularJoint {
    vocab: Vocabulary,
    len: usize,
    entries: Vec<(Vec<TokenId>, f64)>,
}

impl TabularJoint {
    pub fn new(vocab: Vocabulary, len: usize, entries: Vec<(Vec<TokenId>, f64)>) -> Result<Self> {
        let joint = Self::build(vocab, len, entries)?;
        let total: f64 = joint.entries.iter().map(|e| e.1).sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::contract(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(joint)
    }

    /// Like [`TabularJoint::new`] but rescales the masses to sum to one.
    pub fn normalized(
        vocab: Vocabulary,
        len: usize,
        entries: Vec<(Vec<TokenId>, f64)>,
    ) -> Result<Self> {
        let mut joint = Self::build(vocab, len, entries)?;
        let total: f64 = joint.entries.iter().map(|e| e.1).sum();
        if total <= 0.0 {
            return Err(Error::contract("joint has no mass"));
        }
        for e in &mut joint.entries {
            e.1 /= total;
        }
        Ok(joint)
    }

    fn build(vocab: Vocabulary, len: usize, entries: Vec<(Vec<TokenId>, f64)>) -> Result<Self> {
        if len == 0 {
            return Err(Error::contract("sequence length must be positive"));
        }
        let emittable = (0..vocab.size()).filter(|&t| vocab.is_emittable(t)).count();
        let space = (emittable as f64).powi(len as i32);
        if space > MAX_TABLE {
            return Err(Error::Intractable(format!(
                "{emittable}^{len} = {space:e} sequences exceeds {MAX_TABLE:e}"
            )));
        }
        let mut map: BTreeMap<Vec<TokenId>, f64> = BTreeMap::new();
        for (seq, p) in entries {
            if seq.len() != len {
                return Err(Error::contract(format!(
                    "sequence {seq:?} has length != {len}"
                )));
            }
            if let Some(&t) = seq.iter().find(|&&t| !vocab.is_emittable(t)) {
                return Err(Error::contract(format!(
                    "token {t} in {seq:?} is not emittable"
                )));
            }
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::contract(format!("bad probability {p} for {seq:?}")));
            }
            if map.insert(seq.clone(), p).is_some() {
                return Err(Error::contract(format!("duplicate sequence {seq:?}")));
            }
        }
        let entries = map.into_iter().filter(|e| e.1 > 0.0).collect();
        Ok(Self {
            vocab,
            len,
            entries,
        })
    }

    /// Uniform over the given sequences.
    pub fn uniform(vocab: Vocabulary, len: usize, seqs: Vec<Vec<TokenId>>) -> Result<Self> {
        let entries = seqs.into_iter().map(|s| (s, 1.0)).collect();
        Self::normalized(vocab, len, entries)
    }

    /// Product of independent per-position distributions.
    pub fn product(vocab: Vocabulary, marginals: &[Dist]) -> Result<Self> {
        let len = marginals.len();
        let mut entries: Vec<(Vec<TokenId>, f64)> = vec![(Vec::new(), 1.0)];
        for m in marginals {
            if m.len() != vocab.size() {
                return Err(Error::Shape(format!(
                    "marginal of width {} for |V| = {}",
                    m.len(),
                    vocab.size()
                )));
            }
            let mut next = Vec::new();
            for (prefix, p) in &entries {
                for (t, &pt) in m.iter().enumerate().filter(|(_, &x)| x > 0.0) {
                    let mut s = prefix.clone();
                    s.push(t);
                    next.push((s, p * pt));
                }
            }
            entries = next;
        }
        Self::normalized(vocab, len, entries)
    }

    /// Random joint over the first `alphabet` content tokens: each sequence
    /// is kept with probability `density` and given an Exp(1) weight. At
    /// least one sequence always survives.
    pub fn random(
        vocab: Vocabulary,
        len: usize,
        alphabet: usize,
        density: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if alphabet == 0 || alphabet > vocab.num_content() {
            return Err(Error::contract(format!(
                "alphabet {alphabet} not in 1..={}",
                vocab.num_content()
            )));
        }
        let total = alphabet
            .checked_pow(len as u32)
            .filter(|&n| (n as f64) <= MAX_TABLE)
            .ok_or_else(|| Error::Intractable(format!("{alphabet}^{len} sequences")))?;
        let content: Vec<TokenId> = vocab.content_tokens().take(alphabet).collect();
        let mut entries = Vec::new();
        for code in 0..total {
            let keep = rng.random::<f64>() < density;
            let w = -(1.0 - rng.random::<f64>()).ln();
            if keep {
                entries.push((decode(code, alphabet, len, &content), w));
            }
        }
        if entries.is_empty() {
            let code = rng.random_range(0..total);
            entries.push((decode(code, alphabet, len, &content), 1.0));
        }
        Self::normalized(vocab, len, entries)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(Vec<TokenId>, f64)] {
        &self.entries
    }

    pub fn prob(&self, seq: &[TokenId]) -> f64 {
        self.entries
            .binary_search_by(|e| e.0.as_slice().cmp(seq))
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    /// `H[x_0]` in nats.
    pub fn entropy(&self) -> f64 {
        self.entries.iter().map(|e| -e.1 * e.1.ln()).sum()
    }

    /// Per-position marginals of the joint.
    pub fn marginals(&self) -> Vec<Dist> {
        let mut out = vec![vec![0.0; self.vocab.size()]; self.len];
        for (seq, p) in &self.entries {
            for (i, &t) in seq.iter().enumerate() {
                out[i][t] += p;
            }
        }
        out
    }

    /// The most probable sequence; ties go to the lexicographically smallest.
    pub fn mode(&self) -> &[TokenId] {
        let mut best = &self.entries[0];
        for e in &self.entries[1..] {
            if e.1 > best.1 {
                best = e;
            }
        }
        &best.0
    }

    fn check_evidence(&self, xt: &[TokenId]) -> Result<()> {
        if xt.len() != self.len {
            return Err(Error::contract(format!(
                "x_t has length {} != {}",
                xt.len(),
                self.len
            )));
        }
        for &t in xt {
            self.vocab.check_token(t)?;
        }
        Ok(())
    }

    /// Entries consistent with every unmasked position of `xt`.
    pub fn matching<'a>(
        &'a self,
        xt: &'a [TokenId],
    ) -> impl Iterator<Item = &'a (Vec<TokenId>, f64)> + 'a {
        let mask = self.vocab.mask();
        self.entries
            .iter()
            .filter(move |(seq, _)| seq.iter().zip(xt).all(|(&a, &b)| b == mask || a == b))
    }

    /// Exact `q(x_0^pos | x_t)`.
    pub fn conditional_marginal(&self, xt: &[TokenId], pos: usize) -> Result<Dist> {
        self.check_evidence(xt)?;
        if pos >= self.len || !self.vocab.is_mask(xt[pos]) {
            return Err(Error::contract(format!(
                "position {pos} is not masked in x_t"
            )));
        }
        let mut out = vec![0.0; self.vocab.size()];
        let mut mass = 0.0;
        for (seq, p) in self.matching(xt) {
            out[seq[pos]] += p;
            mass += p;
        }
        normalize(out, mass, xt)
    }

    /// Exact next-token conditional inside a fully masked block: `q(x_0^{start+|prefix|} | x_t, prefix)`.
    pub fn block_conditional(
        &self,
        xt: &[TokenId],
        block: Range<usize>,
        prefix: &[TokenId],
    ) -> Result<Dist> {
        self.check_evidence(xt)?;
        if block.end > self.len || block.is_empty() {
            return Err(Error::contract(format!("block {block:?} outside sequence")));
        }
        if prefix.len() >= block.len() {
            return Err(Error::contract("prefix fills the whole block"));
        }
        if block.clone().any(|p| !self.vocab.is_mask(xt[p])) {
            return Err(Error::contract(format!(
                "block {block:?} is not fully masked"
            )));
        }
        let at = block.start + prefix.len();
        let mut out = vec![0.0; self.vocab.size()];
        let mut mass = 0.0;
        for (seq, p) in self.matching(xt) {
            if seq[block.start..at] == *prefix {
                out[seq[at]] += p;
                mass += p;
            }
        }
        normalize(out, mass, xt)
    }

    /// Exact `q(b | x_t)` for a block of positions, as sorted (block, prob) pairs.
    pub fn block_posterior(
        &self,
        xt: &[TokenId],
        block: Range<usize>,
    ) -> Result<Vec<(Vec<TokenId>, f64)>> {
        self.check_evidence(xt)?;
        let mut map: BTreeMap<Vec<TokenId>, f64> = BTreeMap::new();
        let mut mass = 0.0;
        for (seq, p) in self.matching(xt) {
            *map.entry(seq[block.clone()].to_vec()).or_insert(0.0) += p;
            mass += p;
        }
        if mass <= 0.0 {
            return Err(Error::Unreachable(format!("{xt:?}")));
        }
        Ok(map.into_iter().map(|(k, v)| (k, v / mass)).collect())
    }

    /// Restrict to a block of positions (the block's own marginal joint).
    pub fn block_joint(&self, block: Range<usize>) -> Result<TabularJoint> {
        let mut map: BTreeMap<Vec<TokenId>, f64> = BTreeMap::new();
        for (seq, p) in &self.entries {
            *map.entry(seq[block.clone()].to_vec()).or_insert(0.0) += p;
        }
        TabularJoint::normalized(self.vocab, block.len(), map.into_iter().collect())
    }

    /// `tokens<TAB>probability` lines, tokens space separated.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (seq, p) in &self.entries {
            let toks: Vec<String> = seq.iter().map(|t| t.to_string()).collect();
            let _ = writeln!(out, "{}\t{}", toks.join(" "), p);
        }
        out
    }

    /// Parse the text format; masses are normalised.
    pub fn from_text(vocab: Vocabulary, text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut len = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (toks, prob) = line
                .split_once('\t')
                .ok_or_else(|| Error::Parse(format!("line {}: missing tab", i + 1)))?;
            let seq: Vec<TokenId> = toks
                .split_whitespace()
                .map(|t| {
                    t.parse()
                        .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))
                })
                .collect::<Result<_>>()?;
            let p: f64 = prob
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
            if *len.get_or_insert(seq.len()) != seq.len() {
                return Err(Error::Parse(format!(
                    "line {}: ragged sequence length",
                    i + 1
                )));
            }
            entries.push((seq, p));
        }
        let len = len.ok_or_else(|| Error::Parse("empty table".into()))?;
        let total: f64 = entries.iter().map(|e| e.1).sum();
        if (total - 1.0).abs() <= 1e-12 {
            Self::new(vocab, len, entries)
        } else {
            Self::normalized(vocab, len, entries)
        }
    }
}

fn normalize(mut out: Dist, mass: f64, xt: &[TokenId]) -> Result<Dist> {
    if mass <= 0.0 {
        return Err(Error::Unreachable(format!("{xt:?}")));
    }
    for x in &mut out {
        *x /= mass;
    }
    Ok(out)
}

fn decode(mut code: usize, base: usize, len: usize, alphabet: &[TokenId]) -> Vec<TokenId> {
    let mut seq = vec![0; len];
    for slot in seq.iter_mut().rev() {
        *slot = alphabet[code % base];
        code /= base;
    }
    seq
}
