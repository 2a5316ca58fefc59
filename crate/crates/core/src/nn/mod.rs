//! Tiny trainable models: a bidirectional denoiser producing marginals and a
//! causal block executor conditioned on them.

mod denoiser;
mod executor;
mod layers;
mod optim;
mod params;
mod tape;
mod tensor;
mod train;

pub use denoiser::TinyDenoiser;
pub use executor::{
    build_block_prompt, hard_condition_prompt, soft_embed, Conditioning, TinyARExecutor,
};
pub use layers::ModelConfig;
pub use optim::{clip_grads, lr_at, AdamW};
pub use params::{Checkpoint, ParamId, ParamStore, CHECKPOINT_MAGIC};
pub use tape::{masked_softmax, Grads, Tape, Target, Var};
pub use tensor::Mat;
pub use train::{
    block_loss, block_loss_grad, mask_level_weight, pretrain_denoiser, read_loss_csv,
    smoothed_final, train_executor, write_loss_csv, ExecutorMasking, LossRecord, TrainConfig,
};

use crate::diffusion::Vocabulary;
use crate::{Error, Result};

pub(crate) fn vocab_meta(v: &Vocabulary) -> String {
    format!(
        "{} {} {} {} {}",
        v.size(),
        v.mask(),
        v.eos(),
        v.bot(),
        v.eot()
    )
}

pub(crate) fn vocab_from_meta(s: &str) -> Result<Vocabulary> {
    let v: Vec<usize> = s
        .split_whitespace()
        .map(|w| {
            w.parse()
                .map_err(|_| Error::Parse(format!("vocabulary {s}")))
        })
        .collect::<Result<_>>()?;
    let [size, mask, eos, bot, eot] = v[..] else {
        return Err(Error::Parse(format!("vocabulary {s}")));
    };
    Vocabulary::new(size, mask, eos, bot, eot)
}
