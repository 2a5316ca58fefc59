use std::path::Path;

use blockdiff::config::Config;
use blockdiff::decode::Mode;
use blockdiff::harness::{run_experiment, ExperimentConfig, LanguageKind, SyntheticLanguage};
use blockdiff::nn::{
    pretrain_denoiser, train_executor, ExecutorMasking, ModelConfig, TinyARExecutor, TinyDenoiser,
    TrainConfig,
};

fn parse(text: &str, base: &Path) -> ExperimentConfig {
    ExperimentConfig::from_config(&Config::parse(text).unwrap(), base).unwrap()
}

#[test]
fn oracle_static_grid_is_valid_at_block_speed() {
    let cfg = parse(
        "[experiment] seed=5 samples=60 model=oracle\n\
         [language] kind=paired len=8 pairs=2 stickiness=0.3\n\
         [grid] mode=[static] block=[2, 4, 8]\n",
        Path::new("."),
    );
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.records.len(), 3);
    for r in &out.records {
        assert_eq!(r.validity_rate, 1.0, "B={}", r.block);
        assert_eq!(r.tokens_per_step, r.block as f64);
        assert_eq!(r.steps, (8 / r.block) as f64);
    }
}

#[test]
fn independent_baseline_matches_product_of_marginals() {
    // Two equiprobable pairs per position: each pair is coherent with
    // probability 1/2, so a 4-pair sequence is valid with probability 1/16.
    let cfg = parse(
        "[experiment] seed=1 samples=4000 model=independent\n\
         [language] kind=paired len=8 pairs=2 stickiness=0\n\
         [grid] mode=[static] block=[4]\n",
        Path::new("."),
    );
    let rate = run_experiment(&cfg).unwrap().records[0].validity_rate;
    let p: f64 = 1.0 / 16.0;
    let se = (p * (1.0 - p) / 4000.0).sqrt();
    assert!((rate - p).abs() < 3.0 * se, "rate {rate}");
}

#[test]
fn wider_scope_barely_changes_throughput() {
    let len = 32;
    let lang = SyntheticLanguage::new(
        LanguageKind::Paired {
            pairs: 4,
            stickiness: 0.7,
        },
        len,
    )
    .unwrap();
    let (data, _) = lang.splits(1000, 0, 0);
    let small = ModelConfig {
        d_model: 32,
        n_layers: 2,
        n_heads: 2,
        d_ff: 64,
    };
    let train = TrainConfig {
        steps: 300,
        ..Default::default()
    };
    let mut den = TinyDenoiser::new(*lang.vocab(), len, small, 0).unwrap();
    pretrain_denoiser(&mut den, &data, &train).unwrap();
    let mut exec = TinyARExecutor::new(*lang.vocab(), 2, small, 1).unwrap();
    train_executor(&mut exec, &den, &data, 2, ExecutorMasking::Blocks, &train).unwrap();

    let dir = tempfile::tempdir().unwrap();
    den.checkpoint()
        .save(dir.path().join("denoiser.ckpt"))
        .unwrap();
    exec.checkpoint()
        .save(dir.path().join("executor_b2.ckpt"))
        .unwrap();
    let cfg = parse(
        &format!(
            "[experiment] seed=3 samples=60 model=neural\n\
             [language] kind=paired len={len} pairs=4 stickiness=0.7\n\
             [grid] mode=[dynamic] block=[2] tau=[0.6] scope=[10, 50]\n"
        ),
        dir.path(),
    );
    let records = run_experiment(&cfg).unwrap().records;
    assert!(records.iter().all(|r| r.mode == Mode::Dynamic));
    let (narrow, wide) = (records[0].tokens_per_step, records[1].tokens_per_step);
    assert_eq!((records[0].scope, records[1].scope), (10, 50));
    assert!(
        (wide - narrow).abs() <= 0.15 * narrow,
        "scope 10: {narrow}, scope 50: {wide}"
    );
}
