//! Absorbing-state forward process at token and block granularity.

mod masking;
mod partition;
mod process;
mod schedule;
mod vocab;

pub use masking::{
    mask_blocks, mask_level, mask_span, sample_block_masking, BlockMasking, MASK_LEVEL_EPS,
    MASK_LEVEL_RANGE,
};
pub use partition::BlockPartition;
pub use process::{forward_marginal, forward_step, loss_weight, posterior_step, Absorbing};
pub use schedule::NoiseSchedule;
pub use vocab::Vocabulary;
