use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
name = "tiny"
function = "f1"
d = 2
domain = "A"
n_train = 120
n_test = 100
k_star = 1
methods = ["synthesized", "active_subspace"]
seeds = [0, 1]

[train]
adam_max_steps = 40
lbfgs_max_steps = 5
"#;

fn drills(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drills")).args(args).output().unwrap()
}

fn setup(config: &str) -> (tempfile::TempDir, String, String) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, config).unwrap();
    let out = dir.path().join("out");
    let (c, o) = (cfg.to_string_lossy().into_owned(), out.to_string_lossy().into_owned());
    (dir, c, o)
}

fn error_line(out: &Output) -> String {
    let stderr = String::from_utf8_lossy(&out.stderr);
    stderr.lines().find(|l| l.starts_with("error: ")).unwrap_or_default().to_string()
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn bench_writes_results_and_exits_zero() {
    let (_dir, cfg, out) = setup(TINY);
    let res = drills(&["bench", "--config", &cfg, "--out", &out]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let out = Path::new(&out);
    assert_eq!(lines(&out.join("tiny.csv")), 1 + 2 * 2 + 2);
    assert!(out.join("tiny_seed1.ckpt").exists());
    assert!(String::from_utf8_lossy(&res.stdout).contains("tiny synthesized mean NRMSE="));
}

#[test]
fn seed_override_runs_a_single_replicate() {
    let (_dir, cfg, out) = setup(TINY);
    assert!(drills(&["bench", "--config", &cfg, "--seed", "5", "--out", &out]).status.success());
    let text = std::fs::read_to_string(Path::new(&out).join("tiny.csv")).unwrap();
    assert!(text.lines().skip(1).all(|l| l.contains(",5,") || l.ends_with("true")));
    assert!(Path::new(&out).join("tiny_seed5.ckpt").exists());
}

#[test]
fn train_then_predict_quiver_and_sensitivity_from_checkpoint() {
    let (_dir, cfg, out) = setup(TINY);
    assert!(drills(&["train", "--config", &cfg, "--seed", "0", "--out", &out]).status.success());
    let ckpt = Path::new(&out).join("tiny_seed0.ckpt").to_string_lossy().into_owned();

    let res = drills(&["predict", "--config", &cfg, "--checkpoint", &ckpt, "--out", &out, "--points", "50"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(lines(&Path::new(&out).join("tiny_predict.csv")), 3);
    assert_eq!(lines(&Path::new(&out).join("tiny_regression.csv")), 51);

    let res = drills(&["quiver", "--config", &cfg, "--checkpoint", &ckpt, "--out", &out]);
    assert!(res.status.success());
    assert_eq!(lines(&Path::new(&out).join("tiny_seed0_quiver.csv")), 226);

    let res = drills(&["sensitivity", "--config", &cfg, "--checkpoint", &ckpt, "--out", &out]);
    assert!(res.status.success());
    assert_eq!(lines(&Path::new(&out).join("tiny_seed0_sensitivity.csv")), 3);
}

#[test]
fn ablate_writes_summary_and_plot_data() {
    let (_dir, cfg, out) = setup(TINY);
    let res = drills(&["ablate", "--config", &cfg, "--seed", "0", "--out", &out, "--grid", "5", "--points", "20"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let out = Path::new(&out);
    assert_eq!(lines(&out.join("ablation.csv")), 2);
    assert_eq!(lines(&out.join("tiny_seed0_quiver.csv")), 26);
    assert_eq!(lines(&out.join("tiny_seed0_regression.csv")), 21);
}

#[test]
fn failures_produce_one_machine_readable_line() {
    let (dir, cfg, out) = setup(&TINY.replace("k_star = 1", "k_star = 3"));
    let res = drills(&["bench", "--config", &cfg, "--out", &out]);
    assert!(!res.status.success());
    assert!(error_line(&res).starts_with("error: kind=config message="));

    let missing = dir.path().join("nope.toml").to_string_lossy().into_owned();
    let res = drills(&["train", "--config", &missing, "--out", &out]);
    assert!(!res.status.success());
    assert!(error_line(&res).starts_with("error: kind=io message="));

    let bogus = dir.path().join("bad.ckpt");
    std::fs::write(&bogus, b"drills-checkpoint\nversion = 1\n---\n123").unwrap();
    let (_d2, cfg2, _) = setup(TINY);
    let res = drills(&["predict", "--config", &cfg2, "--checkpoint", &bogus.to_string_lossy(), "--out", &out]);
    assert!(!res.status.success());
    assert!(error_line(&res).starts_with("error: kind=corrupt_checkpoint message="));

    let res = drills(&["bench", "--frobnicate"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(error_line(&res).starts_with("error: kind=usage message="));
}
