//! End-to-end acceptance checks. Each test prints one PASS/FAIL line
//! straight to stdout so the verdicts show up even when output capture is on.

use std::io::Write as _;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use blockdiff::config::Config;
use blockdiff::decode::{
    generate, k_star, IndependentPredictor, MarginalSamplingExecutor, Mode, SchedulerConfig,
};
use blockdiff::diffusion::{sample_block_masking, BlockPartition, Vocabulary};
use blockdiff::harness::{
    binomial_se, run_experiment, verify_theorems, write_outputs, ExperimentConfig, LanguageKind,
    ModelKind, SyntheticLanguage, VerifyReport, VerifySettings,
};
use blockdiff::nn::{
    block_loss, block_loss_grad, pretrain_denoiser, smoothed_final, train_executor, Conditioning,
    ExecutorMasking, ModelConfig, TinyARExecutor, TinyDenoiser, TrainConfig,
};
use blockdiff::oracle::{counterexample, mode_exclusion_witness};
use blockdiff::rng::SeedStream;
use blockdiff::TokenId;
use rand::Rng as _;

fn verdict(id: u32, pass: bool, detail: &str) {
    let line = format!(
        "criterion {id}: {} {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
}

/// The oracle report is shared by the first three criteria; its runtime is
/// charged to each of them.
fn oracle_report() -> &'static (VerifyReport, Duration) {
    static REPORT: OnceLock<(VerifyReport, Duration)> = OnceLock::new();
    REPORT.get_or_init(|| {
        let start = Instant::now();
        let r = verify_theorems(&VerifySettings {
            trials: 50,
            seed: 0,
            sweep: (5, 4, 4),
        });
        (r, start.elapsed())
    })
}

fn report_checks(id: u32, names: &[&str], budget: Duration) -> bool {
    let (report, elapsed) = oracle_report();
    let mut pass = *elapsed < budget;
    let mut detail = format!("runtime {:.1}s;", elapsed.as_secs_f64());
    for name in names {
        let c = report
            .get(name)
            .unwrap_or_else(|| panic!("missing check {name}"));
        pass &= c.pass;
        detail += &format!(
            " {name} max_dev={:.2e} (tol {:.0e}, {} cases);",
            c.max_deviation, c.tolerance, c.cases
        );
    }
    verdict(id, pass, &detail);
    pass
}

#[test]
fn criterion_1_closed_form_kl() {
    let names = ["kl-closed-form-exhaustive", "kl-closed-form-random"];
    assert!(report_checks(1, &names, Duration::from_secs(120)));
}

#[test]
fn criterion_2_block_bound() {
    let names = [
        "nelbo-monotone-in-block-size",
        "nelbo-gap-equals-bound-difference",
        "nelbo-gap-aa-bb-is-ln2",
    ];
    assert!(report_checks(2, &names, Duration::from_secs(120)));
}

#[test]
fn criterion_3_mode_exclusion() {
    let q = counterexample();
    let probs: Vec<f64> = q.entries().iter().map(|(_, p)| *p).collect();
    let mut sorted = probs.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let values_ok = sorted.len() == 4
        && sorted
            .iter()
            .zip([0.45, 0.25, 0.25, 0.05])
            .all(|(a, b)| (a - b).abs() < 1e-12);
    let k1 = mode_exclusion_witness(&q, 1).unwrap().excluded;
    let k2 = mode_exclusion_witness(&q, 2).unwrap().excluded;
    let product = oracle_report()
        .0
        .get("mode-exclusion-product-joints")
        .unwrap();
    let pass = values_ok && k1 && !k2 && product.pass && product.cases >= 100;
    verdict(
        3,
        pass,
        &format!(
            "excluded(k=1)={k1} excluded(k=2)={k2}; product joints excluded {} of {} (joint, k) cases",
            product.max_deviation, product.cases
        ),
    );
    assert!(pass);
}

fn paired_config(model: &str, samples: usize, block: usize) -> ExperimentConfig {
    let text = format!(
        "[experiment] seed=4 samples={samples} model={model}\n\
         [language] kind=paired len=6 pairs=4 stickiness=0\n\
         [grid] mode=[static] block=[{block}]\n"
    );
    ExperimentConfig::from_config(&Config::parse(&text).unwrap(), std::path::Path::new("."))
        .unwrap()
}

#[test]
fn criterion_4_oracle_coherence() {
    let n = 10_000;
    let indep = paired_config("independent", n, 2);
    // Product-of-marginals validity: every pair (a_k, b_k) must be drawn
    // jointly from independent per-position marginals.
    let lang = &indep.language;
    let m = lang.marginals().unwrap();
    let pairs = 4;
    let expected: f64 = (0..lang.len() / 2)
        .map(|j| {
            (0..pairs)
                .map(|k| m[2 * j][k] * m[2 * j + 1][pairs + k])
                .sum::<f64>()
        })
        .product();
    let indep_rate = run_experiment(&indep).unwrap().records[0].validity_rate;
    let se = binomial_se(expected, n);
    let oracle_rate = run_experiment(&paired_config("oracle", 2000, 2))
        .unwrap()
        .records[0]
        .validity_rate;
    let pass = (expected - 0.25f64.powi(3)).abs() < 1e-12
        && (indep_rate - expected).abs() <= 3.0 * se
        && oracle_rate == 1.0;
    verdict(
        4,
        pass,
        &format!(
            "L=6: independent {indep_rate:.4} vs analytic {expected:.6} (3 se = {:.4}); oracle B=2 validity {oracle_rate}",
            3.0 * se
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_scheduler_accounting() {
    let vocab = Vocabulary::with_content(4).unwrap();
    let pred = IndependentPredictor::uniform_content(vocab, 64);
    let stat = SchedulerConfig {
        mode: Mode::Static,
        block_size: 4,
        ..Default::default()
    };
    let g = generate(&[], 64, &pred, &MarginalSamplingExecutor, &stat, 1).unwrap();
    let static_ok =
        g.stats.steps == 16 && g.stats.eos_filled == 0 && g.trace.iter().all(|r| r.k == 4);

    let dynamic = SchedulerConfig {
        mode: Mode::Dynamic,
        block_size: 4,
        tau: 1e-12,
        ..Default::default()
    };
    let g = generate(&[], 64, &pred, &MarginalSamplingExecutor, &dynamic, 2).unwrap();
    let dynamic_ok = g.stats.steps == 64 && g.trace.iter().all(|r| r.k == 1);

    let mut rng = SeedStream::new(7).rng(0);
    let mut violations = 0;
    for _ in 0..1000 {
        let b = rng.random_range(1..=8);
        let h: Vec<f64> = (0..b).map(|_| rng.random::<f64>() * 2.0).collect();
        let (t1, t2) = (rng.random::<f64>() * 2.0, rng.random::<f64>() * 2.0);
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        violations += usize::from(k_star(&h, lo) > k_star(&h, hi));
    }
    let pass = static_ok && dynamic_ok && violations == 0;
    verdict(
        7,
        pass,
        &format!("static L=64 B=4 ok={static_ok}; dynamic tau->0 one token per step ok={dynamic_ok}; k* monotonicity violations {violations}/1000"),
    );
    assert!(pass);
}

#[test]
fn criterion_8_gradient_check() {
    let lang = SyntheticLanguage::new(
        LanguageKind::Paired {
            pairs: 4,
            stickiness: 0.7,
        },
        8,
    )
    .unwrap();
    let small = ModelConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
    };
    let den = TinyDenoiser::new(*lang.vocab(), 8, small, 1).unwrap();
    let mut exec = TinyARExecutor::new(*lang.vocab(), 4, small, 2).unwrap();
    let part = BlockPartition::new(8, 2).unwrap();
    let stream = SeedStream::new(3);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for input in 0..5u64 {
        let mut rng = stream.child("input").rng(input);
        let x0: Vec<TokenId> = lang.sample(&mut rng);
        let masking = sample_block_masking(&x0, &part, lang.vocab(), input).unwrap();
        let weight = 1.0 / masking.mask_level;
        let (_, grads) = block_loss_grad(&den, &exec, &x0, &masking, &part, weight).unwrap();
        for _ in 0..20 {
            let id = rng.random_range(0..exec.params().len());
            let i = rng.random_range(0..exec.params().get(id).data().len());
            let orig = exec.params().get(id).data()[i];
            exec.params_mut().get_mut(id).data_mut()[i] = orig + h;
            let up = block_loss(&den, &exec, &x0, &masking, &part, weight).unwrap();
            exec.params_mut().get_mut(id).data_mut()[i] = orig - h;
            let down = block_loss(&den, &exec, &x0, &masking, &part, weight).unwrap();
            exec.params_mut().get_mut(id).data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grads.get(id).map_or(0.0, |m| m.data()[i]);
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
        }
    }
    let pass = worst < 1e-4;
    verdict(
        8,
        pass,
        &format!("max relative error {worst:.2e} over 5 inputs x 20 coordinates"),
    );
    assert!(pass);
}

#[test]
fn criterion_9_bench_determinism() {
    let text = "[experiment] seed=11 samples=40 model=oracle\n\
                [language] kind=paired len=6 pairs=4 stickiness=0.5\n\
                [grid] mode=[static, dynamic] block=[2, 3] tau=[0.1, 0.6] conditioning=[soft, top1]\n";
    let cfg =
        ExperimentConfig::from_config(&Config::parse(text).unwrap(), std::path::Path::new("."))
            .unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        write_outputs(&run_experiment(&cfg).unwrap(), d.path()).unwrap();
    }
    let mut identical = true;
    let mut bytes = 0;
    for name in ["runs.csv", "samples.csv", "traces.csv"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        identical &= a == b;
        bytes += a.len();
    }
    verdict(
        9,
        identical,
        &format!(
            "config {}: two runs, {bytes} CSV bytes, identical={identical}",
            cfg.hash
        ),
    );
    assert!(identical);
}

// Neural criteria: a paired-tokens language of length 16 whose pair types
// follow a sticky chain, so that neighbouring pairs carry information.

const NEURAL_SEEDS: [u64; 3] = [0, 1, 2];
const NEURAL_LEN: usize = 16;
const NEURAL_STEPS: usize = 1000;
/// Executors compared under soft and top-1 conditioning are trained longer:
/// at 1000 steps residual sampling slips dominate the validity difference.
const COMPARISON_STEPS: usize = 3000;

fn neural_language() -> SyntheticLanguage {
    SyntheticLanguage::new(
        LanguageKind::Paired {
            pairs: 4,
            stickiness: 0.7,
        },
        NEURAL_LEN,
    )
    .unwrap()
}

fn train_cfg(seed: u64, steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        seed,
        ..Default::default()
    }
}

struct SeedModels {
    data: Vec<Vec<TokenId>>,
    denoiser: TinyDenoiser,
}

fn seed_models(seed: u64) -> &'static SeedModels {
    static MODELS: OnceLock<Vec<SeedModels>> = OnceLock::new();
    let all = MODELS.get_or_init(|| {
        NEURAL_SEEDS
            .iter()
            .map(|&s| {
                let lang = neural_language();
                let (data, _) = lang.splits(4000, 0, s);
                let mut denoiser =
                    TinyDenoiser::new(*lang.vocab(), NEURAL_LEN, ModelConfig::default(), s)
                        .unwrap();
                pretrain_denoiser(&mut denoiser, &data, &train_cfg(s, NEURAL_STEPS)).unwrap();
                SeedModels { data, denoiser }
            })
            .collect()
    });
    &all[NEURAL_SEEDS.iter().position(|&s| s == seed).unwrap()]
}

fn trained_executor(
    seed: u64,
    block: usize,
    masking: ExecutorMasking,
    steps: usize,
) -> (TinyARExecutor, f64) {
    let m = seed_models(seed);
    let mut exec = TinyARExecutor::new(
        *m.denoiser.vocab(),
        block,
        ModelConfig::default(),
        seed + 100,
    )
    .unwrap();
    let curve = train_executor(
        &mut exec,
        &m.denoiser,
        &m.data,
        block,
        masking,
        &train_cfg(seed + 200, steps),
    )
    .unwrap();
    (exec, smoothed_final(&curve, 100))
}

#[test]
fn criterion_5_loss_falls_with_block_size() {
    let start = Instant::now();
    let mut ordered = 0;
    let mut detail = String::new();
    for &seed in &NEURAL_SEEDS {
        let losses: Vec<f64> = [1, 2, 4]
            .iter()
            .map(|&b| trained_executor(seed, b, ExecutorMasking::Span { len: 8 }, NEURAL_STEPS).1)
            .collect();
        let ok = losses[2] <= losses[1] && losses[1] <= losses[0];
        ordered += usize::from(ok);
        detail += &format!(
            " seed {seed}: B1 {:.3} B2 {:.3} B4 {:.3};",
            losses[0], losses[1], losses[2]
        );
    }
    let elapsed = start.elapsed();
    let pass = ordered == NEURAL_SEEDS.len() && elapsed < Duration::from_secs(30 * 60);
    verdict(
        5,
        pass,
        &format!(
            "{ordered}/3 seeds ordered, {:.0}s;{detail}",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_soft_beats_top1() {
    let dir = tempfile::tempdir().unwrap();
    let mut wins = 0;
    let mut total = 0;
    let mut detail = String::new();
    for &seed in &NEURAL_SEEDS {
        let m = seed_models(seed);
        m.denoiser
            .checkpoint()
            .save(dir.path().join("denoiser.ckpt"))
            .unwrap();
        for block in [2, 4] {
            let (exec, _) =
                trained_executor(seed, block, ExecutorMasking::Blocks, COMPARISON_STEPS);
            exec.checkpoint()
                .save(dir.path().join(format!("executor_b{block}.ckpt")))
                .unwrap();
        }
        let text = format!(
            "[experiment] seed={seed} samples=1000 model=neural\n\
             [language] kind=paired len={NEURAL_LEN} pairs=4 stickiness=0.7\n\
             [grid] mode=[static] block=[2, 4] conditioning=[soft, top1]\n"
        );
        let cfg =
            ExperimentConfig::from_config(&Config::parse(&text).unwrap(), dir.path()).unwrap();
        assert_eq!(cfg.model, ModelKind::Neural);
        let records = run_experiment(&cfg).unwrap().records;
        for block in [2, 4] {
            let rate = |c: Conditioning| {
                records
                    .iter()
                    .find(|r| r.block == block && r.conditioning == c)
                    .unwrap()
                    .validity_rate
            };
            let (soft, top1) = (rate(Conditioning::Soft), rate(Conditioning::Top1));
            wins += usize::from(soft >= top1);
            total += 1;
            detail += &format!(" seed {seed} B{block}: soft {soft:.3} top1 {top1:.3};");
        }
    }
    let pass = wins == total;
    verdict(
        6,
        pass,
        &format!("{wins}/{total} comparisons with soft >= top-1;{detail}"),
    );
    assert!(pass);
}
