use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_poincare-resnet"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn tape_bench_prints_csv() {
    let o = run(&["verify", "tape-bench"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.starts_with("case,mode,nodes,saved_bytes\n"));
    assert!(s.contains("mobius_add,fused,1,"));
}

#[test]
fn norms_writes_out_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("norms.csv");
    let o = run(&["verify", "norms", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 11);
    assert!(stdout(&o).is_empty());
}

#[test]
fn gradcheck_succeeds_with_few_points() {
    let o = run(&["verify", "gradcheck", "--points", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!stdout(&o).contains(",false"));
}

#[test]
fn gradcheck_with_zero_tolerance_fails() {
    let o = run(&["verify", "gradcheck", "--points", "2", "--tol", "0"]);
    assert!(!o.status.success());
}

#[test]
fn bn_bench_rejects_too_few_repeats() {
    let o = run(&["verify", "bn-bench", "--repeats", "3"]);
    assert!(!o.status.success());
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("run.cfg");
    let text = format!(
        "arch = convnet\nwidths = 4, 8\nc = 0.1\nnum_classes = 2\ndata = synthetic:4\n\
         batch_size = 16\nepochs = 2\ntrain_subset = 64\ntest_subset = 32\nout_dir = {}\n",
        dir.join("out").display()
    );
    std::fs::write(&cfg, text).unwrap();
    cfg
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let o = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "3",
        "--bn",
        "frechet",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    assert!(csv.starts_with("epoch,train_loss,train_acc,test_acc,wall_seconds,bn_mode\n"));
    assert!(csv.lines().nth(2).unwrap().ends_with(",frechet"));

    let ck = dir.path().join("out/checkpoint.prn");
    let args = [
        "eval",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--data",
        "synthetic:4",
        "--seed",
        "3",
        "--subset",
        "32",
        "--bn",
        "frechet",
        "--batch-size",
        "16",
    ];
    let first = run(&args);
    assert!(
        first.status.success(),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    assert!(stdout(&first).contains("test accuracy"));
    // The reported accuracy matches the last epoch of the training CSV.
    let last: Vec<&str> = csv.lines().last().unwrap().split(',').collect();
    assert!(
        stdout(&first).contains(&format!("test accuracy {}", last[3])),
        "{} vs {}",
        stdout(&first),
        last[3]
    );
    assert_eq!(stdout(&first), stdout(&run(&args)));
}

#[test]
fn bad_config_reports_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "lr = -1\n").unwrap();
    let o = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("lr"));
}

#[test]
fn eval_missing_checkpoint_fails() {
    let o = run(&[
        "eval",
        "--checkpoint",
        "/nonexistent.prn",
        "--data",
        "synthetic",
    ]);
    assert!(!o.status.success());
}
