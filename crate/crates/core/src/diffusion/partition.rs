use std::ops::Range;

use crate::{Error, Result};

/// Contiguous, disjoint blocks of `block_size` positions covering a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockPartition {
    len: usize,
    block_size: usize,
}

impl BlockPartition {
    pub fn new(len: usize, block_size: usize) -> Result<Self> {
        if block_size == 0 || len == 0 || !len.is_multiple_of(block_size) {
            return Err(Error::Partition { len, block_size });
        }
        Ok(Self { len, block_size })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn num_blocks(&self) -> usize {
        self.len / self.block_size
    }

    /// Positions of block `i` (0-based).
    pub fn range(&self, i: usize) -> Range<usize> {
        i * self.block_size..(i + 1) * self.block_size
    }

    pub fn block_of(&self, pos: usize) -> usize {
        pos / self.block_size
    }

    pub fn blocks(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.num_blocks()).map(|i| self.range(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covers_exactly() {
        let p = BlockPartition::new(12, 4).unwrap();
        assert_eq!(p.num_blocks(), 3);
        let mut seen = [0; 12];
        for r in p.blocks() {
            for i in r {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(p.block_of(7), 1);
        assert_eq!(p.range(2), 8..12);
    }

    #[test]
    fn rejects_non_divisible() {
        assert!(BlockPartition::new(10, 4).is_err());
        assert!(BlockPartition::new(0, 4).is_err());
        assert!(BlockPartition::new(8, 0).is_err());
    }
}
