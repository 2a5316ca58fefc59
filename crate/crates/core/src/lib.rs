//! Block-granular masked discrete diffusion with locally coherent parallel
//! decoding.
//!
//! The crate is organised around five subsystems:
//!
//! * [`diffusion`]: the absorbing forward process, its closed-form marginals
//!   and posteriors, block partitions and the block-masking sampler.
//! * [`oracle`]: an explicit tabular joint over short sequences with exact
//!   conditionals, entropies, NELBO bounds, KL identities and top-k support
//!   constructions.
//! * [`nn`]: tiny trainable denoiser / block executor pair built on a small
//!   reverse-mode tape, plus the block-masked training loop.
//! * [`decode`]: the generation loop with static and dynamic entropy-based
//!   unmasking schedulers and candidate scoping.
//! * [`harness`]: synthetic languages, metrics, experiment grids and the
//!   theorem verification report.
//!
//! Data-parallel inner loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (the default) and runs sequentially otherwise.

pub mod config;
pub mod decode;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod nn;
pub mod oracle;
pub mod par;
pub mod rng;

pub use error::{Error, Result};

/// Index of a token in a [`diffusion::Vocabulary`].
pub type TokenId = usize;

/// Dense categorical distribution over the whole vocabulary.
pub type Dist = Vec<f64>;
