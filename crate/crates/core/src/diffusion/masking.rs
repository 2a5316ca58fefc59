use rand::Rng as _;

use super::{BlockPartition, Vocabulary};
use crate::rng::{Rng, SeedStream};
use crate::{Error, Result, TokenId};

/// Floor added to the sampled masking level.
pub const MASK_LEVEL_EPS: f64 = 1e-3;

/// Range of the uniform draw `t` that sets the masking level for a batch.
pub const MASK_LEVEL_RANGE: (f64, f64) = (0.2, 0.8);

/// `p_mask = (1 - eps) t + eps`.
pub fn mask_level(t: f64) -> f64 {
    (1.0 - MASK_LEVEL_EPS) * t + MASK_LEVEL_EPS
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockMasking {
    pub masked: Vec<TokenId>,
    /// One flag per block.
    pub blocks: Vec<bool>,
    pub mask_level: f64,
    /// True when no block was drawn and one was masked by the fallback.
    pub forced: bool,
}

impl BlockMasking {
    pub fn masked_blocks(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocks
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i)
    }
}

fn check_clean(x0: &[TokenId], part: &BlockPartition, vocab: &Vocabulary) -> Result<()> {
    if x0.len() != part.len() {
        return Err(Error::contract(format!(
            "sequence length {} does not match partition length {}",
            x0.len(),
            part.len()
        )));
    }
    for &t in x0 {
        vocab.check_token(t)?;
        if vocab.is_mask(t) {
            return Err(Error::contract("clean sequence contains MASK"));
        }
    }
    Ok(())
}

fn apply(
    x0: &[TokenId],
    part: &BlockPartition,
    vocab: &Vocabulary,
    blocks: &[bool],
) -> Vec<TokenId> {
    let mut out = x0.to_vec();
    for (i, _) in blocks.iter().enumerate().filter(|(_, &m)| m) {
        for p in part.range(i) {
            out[p] = vocab.mask();
        }
    }
    out
}

/// Mask every block independently with probability `p_mask`; if none was
/// selected, mask one block chosen uniformly at random.
pub fn mask_blocks(
    x0: &[TokenId],
    part: &BlockPartition,
    vocab: &Vocabulary,
    p_mask: f64,
    rng: &mut Rng,
) -> Result<BlockMasking> {
    check_clean(x0, part, vocab)?;
    if !(0.0..=1.0).contains(&p_mask) {
        return Err(Error::contract(format!(
            "mask level {p_mask} outside [0,1]"
        )));
    }
    let mut blocks: Vec<bool> = (0..part.num_blocks())
        .map(|_| rng.random::<f64>() < p_mask)
        .collect();
    let forced = !blocks.iter().any(|&m| m);
    if forced {
        let i = rng.random_range(0..part.num_blocks());
        blocks[i] = true;
    }
    Ok(BlockMasking {
        masked: apply(x0, part, vocab, &blocks),
        blocks,
        mask_level: p_mask,
        forced,
    })
}

/// Draw `t ~ U(0.2, 0.8)`, set `p_mask = mask_level(t)` and mask blocks.
pub fn sample_block_masking(
    x0: &[TokenId],
    part: &BlockPartition,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<BlockMasking> {
    let mut rng = SeedStream::new(seed).rng(0);
    let t = rng.random_range(MASK_LEVEL_RANGE.0..MASK_LEVEL_RANGE.1);
    mask_blocks(x0, part, vocab, mask_level(t), &mut rng)
}

/// Mask the contiguous span `start..start+span`, which must be a union of
/// whole blocks. The reported mask level is the masked fraction.
pub fn mask_span(
    x0: &[TokenId],
    part: &BlockPartition,
    vocab: &Vocabulary,
    start: usize,
    span: usize,
) -> Result<BlockMasking> {
    check_clean(x0, part, vocab)?;
    let b = part.block_size();
    if span == 0 || !start.is_multiple_of(b) || !span.is_multiple_of(b) || start + span > part.len()
    {
        return Err(Error::contract(format!(
            "span {start}..{} is not a union of blocks of size {b}",
            start + span
        )));
    }
    let blocks: Vec<bool> = (0..part.num_blocks())
        .map(|i| i * b >= start && (i + 1) * b <= start + span)
        .collect();
    Ok(BlockMasking {
        masked: apply(x0, part, vocab, &blocks),
        blocks,
        mask_level: span as f64 / part.len() as f64,
        forced: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab() -> Vocabulary {
        Vocabulary::with_content(4).unwrap()
    }

    #[test]
    fn single_block_masked_as_unit() {
        let v = vocab();
        let part = BlockPartition::new(8, 8).unwrap();
        let x0 = vec![0, 1, 2, 3, 0, 1, 2, 3];
        let m = sample_block_masking(&x0, &part, &v, 11).unwrap();
        // a single block is either drawn or forced
        assert!(m.masked.iter().all(|&t| t == v.mask()));
    }

    #[test]
    fn zero_level_forces_exactly_one_block() {
        let v = vocab();
        let part = BlockPartition::new(8, 2).unwrap();
        let x0 = vec![0; 8];
        let mut counts = [0usize; 4];
        for i in 0..400 {
            let mut rng = SeedStream::new(i).rng(0);
            let m = mask_blocks(&x0, &part, &v, 0.0, &mut rng).unwrap();
            assert!(m.forced);
            assert_eq!(m.masked_blocks().count(), 1);
            counts[m.masked_blocks().next().unwrap()] += 1;
        }
        assert!(counts.iter().all(|&c| c > 60), "{counts:?}");
    }

    #[test]
    fn rejects_masked_input() {
        let v = vocab();
        let part = BlockPartition::new(4, 2).unwrap();
        assert!(sample_block_masking(&[0, v.mask(), 1, 2], &part, &v, 0).is_err());
        assert!(sample_block_masking(&[0, 1, 2], &part, &v, 0).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let v = vocab();
        let part = BlockPartition::new(16, 2).unwrap();
        let x0: Vec<usize> = (0..16).map(|i| i % 4).collect();
        assert_eq!(
            sample_block_masking(&x0, &part, &v, 5).unwrap(),
            sample_block_masking(&x0, &part, &v, 5).unwrap()
        );
    }

    #[test]
    fn span_masking() {
        let v = vocab();
        let part = BlockPartition::new(16, 2).unwrap();
        let x0 = vec![1; 16];
        let m = mask_span(&x0, &part, &v, 4, 8).unwrap();
        let masked: Vec<usize> = (0..16).filter(|&i| m.masked[i] == v.mask()).collect();
        assert_eq!(masked, (4..12).collect::<Vec<_>>());
        assert_eq!(m.mask_level, 0.5);
        assert!(mask_span(&x0, &part, &v, 3, 8).is_err());
    }

    #[test]
    fn monte_carlo_block_rate() {
        // p_mask at t = 0.5 is 0.999 * 0.5 + 0.001 = 0.5005. The independent
        // draws hit that rate; the fallback adds (1 - p)^4 / 4 on top.
        let v = vocab();
        let part = BlockPartition::new(8, 2).unwrap();
        let x0 = vec![2; 8];
        let p = mask_level(0.5);
        assert!((p - 0.5005).abs() < 1e-15);
        let trials = 100_000usize;
        let stream = SeedStream::new(99);
        let per_trial = crate::par::map_indexed(trials, |i| {
            let mut rng = stream.rng(i as u64);
            let m = mask_blocks(&x0, &part, &v, p, &mut rng).unwrap();
            let n = m.blocks.iter().filter(|&&b| b).count();
            (if m.forced { 0 } else { n }, n)
        });
        let drawn: usize = per_trial.iter().map(|t| t.0).sum();
        let total: usize = per_trial.iter().map(|t| t.1).sum();
        let denom = trials as f64 * 4.0;
        let drawn_rate = drawn as f64 / denom;
        let total_rate = total as f64 / denom;
        assert!(
            (drawn_rate - 0.5005).abs() < 0.01,
            "drawn rate {drawn_rate}"
        );
        let expected_total = p + (1.0 - p).powi(4) / 4.0;
        assert!(
            (total_rate - expected_total).abs() < 0.01,
            "total rate {total_rate}"
        );
    }

    proptest! {
        #[test]
        fn never_splits_a_block(seed in 0u64..10_000, bs in 1usize..5, nb in 1usize..6) {
            let v = vocab();
            let part = BlockPartition::new(bs * nb, bs).unwrap();
            let x0: Vec<usize> = (0..bs * nb).map(|i| i % 4).collect();
            let m = sample_block_masking(&x0, &part, &v, seed).unwrap();
            for (i, r) in part.blocks().enumerate() {
                let n = r.clone().filter(|&p| m.masked[p] == v.mask()).count();
                prop_assert!(n == 0 || n == bs);
                prop_assert_eq!(n == bs, m.blocks[i]);
            }
            prop_assert!(m.blocks.iter().any(|&b| b));
            prop_assert!((0.2..=0.8).contains(&((m.mask_level - MASK_LEVEL_EPS) / (1.0 - MASK_LEVEL_EPS))));
        }
    }
}
