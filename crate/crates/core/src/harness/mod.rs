//! Synthetic languages, metrics, experiment grids and the exact-oracle
//! verification report.

mod experiment;
mod language;
mod metrics;
mod report;
mod verify;

pub use experiment::{
    decode_single, executor_checkpoint_name, parse_tokens, read_outputs, read_runs,
    recompute_metrics, run_experiment, write_outputs, Cell, CellTraceRow, ExperimentConfig,
    ExperimentOutput, ModelKind, RunRecord, SampleRow, DENOISER_CKPT, RUNS_CSV, SAMPLES_CSV,
    TRACES_CSV,
};
pub use language::{read_corpus, write_corpus, LanguageKind, SyntheticLanguage};
pub use metrics::{binomial_se, exact_match_rate, validity_rate};
pub use report::{pareto, render_report};
pub use verify::{chain_rule_tv, verify_theorems, CheckResult, VerifyReport, VerifySettings};
