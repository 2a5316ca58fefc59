//! Iterative block decoding: score candidate blocks, let an executor decode
//! them jointly, and commit whole blocks or low-entropy prefixes.

mod generate;
mod models;
pub mod sampling;
mod scheduler;

pub use generate::{
    candidate_scope, decode_block, format_tokens, generate, read_trace_csv, write_trace_csv,
    BlockStatus, Generation, GenerationState, GenerationStats, StatsRecord, TraceRow,
};
pub use models::{
    BlockExecutor, BlockOutput, BlockRequest, IndependentPredictor, MarginalPredictor,
    MarginalSamplingExecutor, OracleExecutor, OraclePredictor,
};
pub use sampling::{argmax, draw, Sampling};
pub use scheduler::{
    block_entropy, k_star, select_dynamic, select_static, DynamicChoice, Mode, SchedulerConfig,
    DEFAULT_SCOPE,
};
