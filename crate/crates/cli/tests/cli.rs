use std::path::Path;
use std::process::{Command, Output};

fn blockdiff(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockdiff"))
        .env("BLOCKDIFF_OUT", out)
        .args(args)
        .output()
        .expect("spawn blockdiff")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = blockdiff(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn verify_passes_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["verify", "--trials", "5"]);
    assert_eq!(text.lines().count(), 8);
    assert!(text.lines().all(|l| l.starts_with("PASS")));
    let csv = std::fs::read_to_string(dir.path().join("verify.csv")).unwrap();
    assert!(csv.starts_with("name,cases,max_deviation,tolerance,pass,detail"));
}

#[test]
fn oracle_bench_is_byte_identical_and_reportable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("grid.cfg");
    std::fs::write(
        &cfg,
        "[experiment] seed=2 samples=20 model=oracle\n\
         [language] kind=paired len=8 pairs=2 stickiness=0.5\n\
         [grid] mode=[static, dynamic] block=[2, 4] tau=[0.3]\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&a, &["bench", "-c", cfg]);
    ok(&b, &["bench", "-c", cfg]);
    for f in ["runs.csv", "samples.csv", "traces.csv"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let md = ok(&a, &["report"]);
    assert!(md.contains("| cell |"));
    assert!(a.join("report.md").exists());
}

#[test]
fn neural_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = out.join("neural.cfg");
    std::fs::write(
        &cfg,
        "[language] kind=paired len=8 pairs=2 stickiness=0.7\n\
         [data] train=64 val=8\n\
         [denoiser] d_model=16 layers=1 heads=2 d_ff=32\n\
         [executor] d_model=16 layers=1 heads=2 d_ff=32 max_block=4\n\
         [pretrain] steps=3 batch=2\n\
         [train] steps=3 batch=2 masking=span:4\n\
         [experiment] samples=3 model=neural\n\
         [grid] mode=[static, dynamic] block=[2] conditioning=[soft, top1]\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    assert!(ok(out, &["gen-data", "-c", cfg]).contains("64 train"));
    ok(out, &["pretrain-denoiser", "-c", cfg]);
    ok(out, &["train-executor", "-c", cfg, "--block", "2"]);
    for f in [
        "denoiser.ckpt",
        "denoiser_loss.csv",
        "executor_b2.ckpt",
        "executor_b2_loss.csv",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(ok(out, &["bench", "-c", cfg]).contains("Neural"));
    let decoded = ok(
        out,
        &["decode", "-c", cfg, "--cell", "2", "--prompt", "0 2"],
    );
    let seq: Vec<&str> = decoded.lines().next().unwrap().split(' ').collect();
    assert_eq!(seq.len(), 8);
    assert_eq!(&seq[..2], ["0", "2"]);
    assert!(out.join("trace.csv").exists());
}

#[test]
fn errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = blockdiff(dir.path(), &["bench", "--set", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("section.key=value"));
    let o = blockdiff(
        dir.path(),
        &[
            "pretrain-denoiser",
            "--set",
            "language.kind=paired",
            "--set",
            "language.len=4",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gen-data"));
}
