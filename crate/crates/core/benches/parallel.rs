//! Parallel versus single-threaded timings of the data-parallel hot paths.
//! With `--no-default-features` both variants run the sequential fallback.

use std::hint::black_box;
use std::path::Path;

use blockdiff::config::Config;
use blockdiff::diffusion::{NoiseSchedule, Vocabulary};
use blockdiff::harness::{
    run_experiment, verify_theorems, ExperimentConfig, LanguageKind, SyntheticLanguage,
    VerifySettings,
};
use blockdiff::nn::{pretrain_denoiser, ModelConfig, TinyDenoiser, TrainConfig};
use blockdiff::oracle::{nelbo_bound, TabularJoint};
use blockdiff::par;
use blockdiff::rng::SeedStream;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn both<R: Send>(c: &mut Criterion, group: &str, f: impl Fn() -> R + Sync) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("parallel", par::is_parallel()), |b| {
        b.iter(|| black_box(f()))
    });
    g.bench_function(
        BenchmarkId::new("single_threaded", par::is_parallel()),
        |b| b.iter(|| par::single_threaded(|| black_box(f()))),
    );
    g.finish();
}

fn oracle(c: &mut Criterion) {
    let settings = VerifySettings {
        trials: 10,
        seed: 0,
        sweep: (4, 3, 3),
    };
    both(c, "verify_theorems", || {
        verify_theorems(&settings).all_pass()
    });

    let mut rng = SeedStream::new(1).rng(0);
    let q =
        TabularJoint::random(Vocabulary::with_content(4).unwrap(), 5, 4, 0.5, &mut rng).unwrap();
    let sched = NoiseSchedule::linear_alpha(3).unwrap();
    both(c, "nelbo_bound", || nelbo_bound(&q, &sched, 1).unwrap());
}

fn training(c: &mut Criterion) {
    let lang = SyntheticLanguage::new(
        LanguageKind::Paired {
            pairs: 4,
            stickiness: 0.7,
        },
        16,
    )
    .unwrap();
    let (data, _) = lang.splits(256, 0, 0);
    let den = TinyDenoiser::new(*lang.vocab(), 16, ModelConfig::default(), 0).unwrap();
    let cfg = TrainConfig {
        steps: 2,
        batch: 8,
        ..Default::default()
    };
    both(c, "denoiser_train_steps", || {
        let mut d = den.clone();
        pretrain_denoiser(&mut d, &data, &cfg).unwrap().len()
    });
}

fn decoding(c: &mut Criterion) {
    let text = "[experiment] seed=0 samples=32 model=oracle\n\
                [language] kind=paired len=8 pairs=2 stickiness=0.5\n\
                [grid] mode=[static, dynamic] block=[2, 4] tau=[0.3]\n";
    let cfg = ExperimentConfig::from_config(&Config::parse(text).unwrap(), Path::new(".")).unwrap();
    both(c, "oracle_grid", || {
        run_experiment(&cfg).unwrap().records.len()
    });
}

criterion_group!(benches, oracle, training, decoding);
criterion_main!(benches);
