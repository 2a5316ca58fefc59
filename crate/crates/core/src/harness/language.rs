use std::path::Path;

use rand::Rng as _;

use crate::config::Config;
use crate::diffusion::Vocabulary;
use crate::oracle::{TabularJoint, MAX_TABLE};
use crate::rng::{Rng, SeedStream};
use crate::{Error, Result, TokenId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LanguageKind {
    /// Sequences of `(a_k, b_k)` pairs. Pair types follow a Markov chain that
    /// repeats the previous type with probability `stickiness` and otherwise
    /// draws uniformly, so every position has a uniform marginal.
    Paired { pairs: usize, stickiness: f64 },
    /// Balanced parentheses with nesting depth at most `max_depth`, uniform
    /// over all such strings.
    Brackets { max_depth: usize },
    /// `[w, SEP, w, SEP]` for a uniform word `w` over `alphabet` symbols.
    Copy { alphabet: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLanguage {
    kind: LanguageKind,
    vocab: Vocabulary,
    len: usize,
}

const OPEN: TokenId = 0;
const CLOSE: TokenId = 1;

impl SyntheticLanguage {
    pub fn new(kind: LanguageKind, len: usize) -> Result<Self> {
        let bad = |msg: String| Err(Error::Config(msg));
        let content = match kind {
            LanguageKind::Paired { pairs, stickiness } => {
                if pairs == 0
                    || len == 0
                    || !len.is_multiple_of(2)
                    || !(0.0..=1.0).contains(&stickiness)
                {
                    return bad(format!("paired language needs pairs > 0, even length, stickiness in [0,1]: {kind:?} len {len}"));
                }
                2 * pairs
            }
            LanguageKind::Brackets { max_depth } => {
                if max_depth == 0 || len == 0 || !len.is_multiple_of(2) {
                    return bad(format!(
                        "bracket language needs depth > 0 and even length: {kind:?} len {len}"
                    ));
                }
                2
            }
            LanguageKind::Copy { alphabet } => {
                if alphabet == 0 || len < 4 || !len.is_multiple_of(2) {
                    return bad(format!(
                        "copy language needs an alphabet and even length ≥ 4: {kind:?} len {len}"
                    ));
                }
                alphabet + 1
            }
        };
        Ok(Self {
            kind,
            vocab: Vocabulary::with_content(content)?,
            len,
        })
    }

    /// Keys: `kind = paired|brackets|copy`, `len`, and `pairs stickiness`,
    /// `depth` or `alphabet` by kind.
    pub fn from_config(cfg: &Config, section: &str) -> Result<Self> {
        let kind: String = cfg.require(section, "kind")?;
        let len = cfg.require(section, "len")?;
        let kind = match kind.as_str() {
            "paired" => LanguageKind::Paired {
                pairs: cfg.get_or(section, "pairs", 4)?,
                stickiness: cfg.get_or(section, "stickiness", 0.0)?,
            },
            "brackets" => LanguageKind::Brackets {
                max_depth: cfg.get_or(section, "depth", 2)?,
            },
            "copy" => LanguageKind::Copy {
                alphabet: cfg.get_or(section, "alphabet", 4)?,
            },
            other => return Err(Error::Config(format!("unknown language kind {other}"))),
        };
        Self::new(kind, len)
    }

    pub fn write_config(&self, cfg: &mut Config, section: &str) {
        cfg.set(section, "len", self.len);
        match self.kind {
            LanguageKind::Paired { pairs, stickiness } => {
                cfg.set(section, "kind", "paired");
                cfg.set(section, "pairs", pairs);
                cfg.set(section, "stickiness", stickiness);
            }
            LanguageKind::Brackets { max_depth } => {
                cfg.set(section, "kind", "brackets");
                cfg.set(section, "depth", max_depth);
            }
            LanguageKind::Copy { alphabet } => {
                cfg.set(section, "kind", "copy");
                cfg.set(section, "alphabet", alphabet);
            }
        }
    }

    pub fn kind(&self) -> LanguageKind {
        self.kind
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Exact membership test.
    pub fn is_valid(&self, seq: &[TokenId]) -> bool {
        if seq.len() != self.len {
            return false;
        }
        match self.kind {
            LanguageKind::Paired { pairs, .. } => {
                seq.chunks(2).all(|p| p[0] < pairs && p[1] == p[0] + pairs)
            }
            LanguageKind::Brackets { max_depth } => {
                let mut depth = 0usize;
                for &t in seq {
                    match t {
                        OPEN => {
                            depth += 1;
                            if depth > max_depth {
                                return false;
                            }
                        }
                        CLOSE if depth > 0 => depth -= 1,
                        _ => return false,
                    }
                }
                depth == 0
            }
            LanguageKind::Copy { alphabet } => {
                let m = self.len / 2 - 1;
                let (a, b) = seq.split_at(m + 1);
                a == b && a[m] == alphabet && a[..m].iter().all(|&t| t < alphabet)
            }
        }
    }

    /// Completion counts `ways[pos][depth]` for the bracket language.
    fn bracket_ways(&self, max_depth: usize) -> Vec<Vec<f64>> {
        let mut ways = vec![vec![0.0; max_depth + 2]; self.len + 1];
        ways[self.len][0] = 1.0;
        for pos in (0..self.len).rev() {
            for d in 0..=max_depth {
                let up = if d < max_depth {
                    ways[pos + 1][d + 1]
                } else {
                    0.0
                };
                let down = if d > 0 { ways[pos + 1][d - 1] } else { 0.0 };
                ways[pos][d] = up + down;
            }
        }
        ways
    }

    /// Number of valid sequences.
    pub fn num_valid(&self) -> f64 {
        match self.kind {
            LanguageKind::Paired { pairs, .. } => (pairs as f64).powi((self.len / 2) as i32),
            LanguageKind::Brackets { max_depth } => self.bracket_ways(max_depth)[0][0],
            LanguageKind::Copy { alphabet } => (alphabet as f64).powi((self.len / 2 - 1) as i32),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<TokenId> {
        match self.kind {
            LanguageKind::Paired { pairs, stickiness } => {
                let mut out = Vec::with_capacity(self.len);
                let mut k = rng.random_range(0..pairs);
                for i in 0..self.len / 2 {
                    if i > 0 && rng.random::<f64>() >= stickiness {
                        k = rng.random_range(0..pairs);
                    }
                    out.extend([k, pairs + k]);
                }
                out
            }
            LanguageKind::Brackets { max_depth } => {
                let ways = self.bracket_ways(max_depth);
                let mut depth = 0;
                (0..self.len)
                    .map(|pos| {
                        let up = if depth < max_depth {
                            ways[pos + 1][depth + 1]
                        } else {
                            0.0
                        };
                        if rng.random::<f64>() * ways[pos][depth] < up {
                            depth += 1;
                            OPEN
                        } else {
                            depth -= 1;
                            CLOSE
                        }
                    })
                    .collect()
            }
            LanguageKind::Copy { alphabet } => {
                let m = self.len / 2 - 1;
                let mut w: Vec<TokenId> = (0..m).map(|_| rng.random_range(0..alphabet)).collect();
                w.push(alphabet);
                [w.clone(), w].concat()
            }
        }
    }

    /// Probability of a sequence under the generator.
    pub fn prob(&self, seq: &[TokenId]) -> f64 {
        if !self.is_valid(seq) {
            return 0.0;
        }
        match self.kind {
            LanguageKind::Paired { pairs, stickiness } => {
                let k = pairs as f64;
                let types: Vec<TokenId> = seq.chunks(2).map(|p| p[0]).collect();
                types.windows(2).fold(1.0 / k, |acc, w| {
                    acc * ((1.0 - stickiness) / k + if w[0] == w[1] { stickiness } else { 0.0 })
                })
            }
            _ => 1.0 / self.num_valid(),
        }
    }

    /// Per-position marginals of the generator.
    pub fn marginals(&self) -> Result<Vec<crate::Dist>> {
        match self.kind {
            LanguageKind::Paired { pairs, .. } => Ok((0..self.len)
                .map(|i| {
                    let offset = if i % 2 == 0 { 0 } else { pairs };
                    let mut d = vec![0.0; self.vocab.size()];
                    d[offset..offset + pairs].fill(1.0 / pairs as f64);
                    d
                })
                .collect()),
            _ => Ok(self.tabular()?.marginals()),
        }
    }

    /// Fraction of valid sequences produced by sampling every position
    /// independently from the generator's marginals.
    pub fn independent_validity(&self) -> Option<f64> {
        match self.kind {
            LanguageKind::Paired { pairs, .. } => {
                Some((1.0 / pairs as f64).powi((self.len / 2) as i32))
            }
            _ => None,
        }
    }

    fn enumerate_valid(&self) -> Vec<Vec<TokenId>> {
        match self.kind {
            LanguageKind::Paired { pairs, .. } => {
                let mut out = vec![Vec::new()];
                for _ in 0..self.len / 2 {
                    out = out
                        .into_iter()
                        .flat_map(|p: Vec<TokenId>| {
                            (0..pairs).map(move |k| {
                                let mut s = p.clone();
                                s.extend([k, pairs + k]);
                                s
                            })
                        })
                        .collect();
                }
                out
            }
            LanguageKind::Brackets { max_depth } => {
                let ways = self.bracket_ways(max_depth);
                let mut out = Vec::new();
                let mut stack = vec![(Vec::new(), 0usize)];
                while let Some((s, d)) = stack.pop() {
                    if s.len() == self.len {
                        out.push(s);
                        continue;
                    }
                    let pos = s.len();
                    if d > 0 && ways[pos + 1][d - 1] > 0.0 {
                        let mut t = s.clone();
                        t.push(CLOSE);
                        stack.push((t, d - 1));
                    }
                    if d < max_depth && ways[pos + 1][d + 1] > 0.0 {
                        let mut t = s;
                        t.push(OPEN);
                        stack.push((t, d + 1));
                    }
                }
                out
            }
            LanguageKind::Copy { alphabet } => {
                let m = self.len / 2 - 1;
                let mut words = vec![Vec::new()];
                for _ in 0..m {
                    words = words
                        .into_iter()
                        .flat_map(|w: Vec<TokenId>| {
                            (0..alphabet).map(move |c| {
                                let mut x = w.clone();
                                x.push(c);
                                x
                            })
                        })
                        .collect();
                }
                words
                    .into_iter()
                    .map(|mut w| {
                        w.push(alphabet);
                        [w.clone(), w].concat()
                    })
                    .collect()
            }
        }
    }

    /// The generator as an explicit joint, when small enough to enumerate.
    pub fn tabular(&self) -> Result<TabularJoint> {
        let emittable = (self.vocab.num_content() + 1) as f64;
        let size = emittable.powi(self.len as i32);
        if size > MAX_TABLE {
            return Err(Error::Intractable(format!(
                "{emittable}^{} = {size:.3e} sequences exceeds {MAX_TABLE:.0e}",
                self.len
            )));
        }
        let entries = self
            .enumerate_valid()
            .into_iter()
            .map(|s| {
                let p = self.prob(&s);
                (s, p)
            })
            .collect();
        TabularJoint::normalized(self.vocab, self.len, entries)
    }

    pub fn corpus(&self, n: usize, stream: &SeedStream) -> Vec<Vec<TokenId>> {
        (0..n)
            .map(|i| self.sample(&mut stream.rng(i as u64)))
            .collect()
    }

    /// Independent train and validation corpora derived from one seed.
    pub fn splits(
        &self,
        train: usize,
        val: usize,
        seed: u64,
    ) -> (Vec<Vec<TokenId>>, Vec<Vec<TokenId>>) {
        let s = SeedStream::new(seed);
        (
            self.corpus(train, &s.child("train")),
            self.corpus(val, &s.child("val")),
        )
    }
}

/// One sequence per line, tokens separated by spaces.
pub fn write_corpus(path: impl AsRef<Path>, seqs: &[Vec<TokenId>]) -> Result<()> {
    let text: String = seqs
        .iter()
        .map(|s| {
            s.iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(" ")
                + "\n"
        })
        .collect();
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Vec<TokenId>>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.split_whitespace()
                .map(|w| {
                    w.parse()
                        .map_err(|e| Error::Parse(format!("corpus line {}: {e}", i + 1)))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paired_counts_and_membership() {
        let lang = SyntheticLanguage::new(
            LanguageKind::Paired {
                pairs: 4,
                stickiness: 0.0,
            },
            8,
        )
        .unwrap();
        assert_eq!(lang.num_valid(), 256.0);
        assert!(lang.is_valid(&[0, 4, 3, 7, 1, 5, 1, 5]));
        assert!(!lang.is_valid(&[0, 5, 3, 7, 1, 5, 1, 5]));
        assert!(lang.tabular().is_err());
        let small = SyntheticLanguage::new(
            LanguageKind::Paired {
                pairs: 4,
                stickiness: 0.6,
            },
            6,
        )
        .unwrap();
        let q = small.tabular().unwrap();
        assert_eq!(q.entries().len(), 64);
        let stream = SeedStream::new(3);
        let n = 20_000;
        let mut first = vec![0.0; 4];
        let mut same = 0.0;
        for s in small.corpus(n, &stream) {
            assert!(small.is_valid(&s));
            first[s[2]] += 1.0 / n as f64;
            same += f64::from(u8::from(s[0] == s[2])) / n as f64;
        }
        assert!(first.iter().all(|f| (f - 0.25).abs() < 0.015), "{first:?}");
        assert!((same - (0.6 + 0.4 / 4.0)).abs() < 0.015);
        let m = q.marginals();
        assert!((m[3][5] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn brackets() {
        let lang = SyntheticLanguage::new(LanguageKind::Brackets { max_depth: 2 }, 6).unwrap();
        assert!(lang.is_valid(&[0, 1, 0, 0, 1, 1]));
        assert!(!lang.is_valid(&[0, 0, 0, 1, 1, 1]));
        assert!(!lang.is_valid(&[1, 0, 0, 1, 0, 1]));
        assert_eq!(lang.num_valid(), 4.0);
        let q = lang.tabular().unwrap();
        assert_eq!(q.entries().len(), 4);
        let mut rng = SeedStream::new(1).rng(0);
        for _ in 0..200 {
            assert!(lang.is_valid(&lang.sample(&mut rng)));
        }
    }

    #[test]
    fn copy() {
        let lang = SyntheticLanguage::new(LanguageKind::Copy { alphabet: 3 }, 8).unwrap();
        assert!(lang.is_valid(&[0, 2, 1, 3, 0, 2, 1, 3]));
        assert!(!lang.is_valid(&[0, 2, 1, 3, 0, 2, 2, 3]));
        assert!(!lang.is_valid(&[0, 2, 3, 1, 0, 2, 3, 1]));
        assert_eq!(lang.tabular().unwrap().entries().len(), 27);
        let mut rng = SeedStream::new(1).rng(0);
        assert!(lang.is_valid(&lang.sample(&mut rng)));
    }

    #[test]
    fn config_and_corpus_round_trip() {
        let lang = SyntheticLanguage::new(
            LanguageKind::Paired {
                pairs: 3,
                stickiness: 0.25,
            },
            10,
        )
        .unwrap();
        let mut cfg = Config::new();
        lang.write_config(&mut cfg, "language");
        assert_eq!(
            SyntheticLanguage::from_config(&cfg, "language").unwrap(),
            lang
        );
        let (train, val) = lang.splits(5, 3, 9);
        assert_ne!(train[..3], val[..]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        write_corpus(&p, &train).unwrap();
        assert_eq!(read_corpus(&p).unwrap(), train);
        assert!(SyntheticLanguage::new(
            LanguageKind::Paired {
                pairs: 3,
                stickiness: 0.2
            },
            5
        )
        .is_err());
    }
}
