use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_apprentice-drive");

fn run(args: &[&str], run_dir: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--run-dir")
        .arg(run_dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// A configuration small enough for a smoke run of every stage.
const SMALL: &str = "\
# tiny run
demos.n_total = 20
demos.n_bad = 4
train.episodes = 3
train.memory_size = 64
train.minibatch = 16
train.hidden = 8
train.checkpoint_every = 1
eval.n_episodes = 2
";

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["drive-off"], dir.path());
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Usage"), "{stderr}");
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&[], dir.path())), 2);
}

#[test]
fn help_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--help"], dir.path());
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    for sub in ["gen-demos", "fit-expert", "recover-reward", "train", "evaluate", "export-plots", "pipeline"] {
        assert!(stdout.contains(sub), "help lacks {sub}");
    }
}

#[test]
fn train_without_recovered_reward_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["train"], dir.path());
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("recover-reward"), "{stderr}");
}

#[test]
fn bad_configuration_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "train.learning_rate = 0.1\n").unwrap();
    let out = run(&["gen-demos", "--config", cfg.to_str().unwrap()], &dir.path().join("run"));
    assert_eq!(code(&out), 2);
    fs::write(&cfg, "demos.n_bad = many\n").unwrap();
    let out = run(&["gen-demos", "--config", cfg.to_str().unwrap()], &dir.path().join("run"));
    assert_eq!(code(&out), 2);
    let out = run(&["gen-demos", "--config", "/nonexistent/run.cfg"], &dir.path().join("run"));
    assert_eq!(code(&out), 2);
}

#[test]
fn malformed_omega_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["train", "--omega", "0.5,0.6,0.1"], dir.path())), 2);
    assert_eq!(code(&run(&["train", "--omega", "a,b,c"], dir.path())), 2);
}

#[test]
fn unwritable_run_dir_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    fs::write(&file, "not a directory").unwrap();
    assert_eq!(code(&run(&["gen-demos"], &file.join("run"))), 1);
}

#[test]
fn corrupt_artifact_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("demos.csv"), "episode_id,step\n1,oops\n").unwrap();
    assert_eq!(code(&run(&["fit-expert"], dir.path())), 1);
}

#[test]
fn stages_run_in_order_and_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let out = run(&["pipeline", "--seed", "7", "--config", cfg], &a);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for file in [
        "demos.csv",
        "expert_policy.json",
        "girl_result.json",
        "learning_curve.csv",
        "checkpoints/final.json",
        "checkpoints/iter_0003.json",
        "eval_trajectories.csv",
        "eval_metrics.json",
        "plots/velocity.csv",
        "plots/accel.csv",
        "plots/reference_lines.csv",
        "resolved_config.txt",
    ] {
        assert!(a.join(file).exists(), "missing {file}");
    }
    let resolved = fs::read_to_string(a.join("resolved_config.txt")).unwrap();
    assert!(resolved.contains("seed = 7"), "{resolved}");

    // the same run, one stage at a time
    let b = dir.path().join("b");
    for stage in ["gen-demos", "fit-expert", "recover-reward", "train", "evaluate", "export-plots"] {
        let out = run(&[stage, "--seed", "7", "--config", cfg], &b);
        assert_eq!(code(&out), 0, "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["girl_result.json", "learning_curve.csv", "eval_metrics.json"] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file} differs"
        );
    }
}

#[test]
fn evaluate_accepts_an_explicit_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.cfg");
    fs::write(&cfg, SMALL).unwrap();
    let cfg = cfg.to_str().unwrap();
    let out = run(&["pipeline", "--config", cfg, "--omega", "0.5512,0.1562,0.2926"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = dir.path().join("checkpoints/iter_0001.json");
    let out = run(&["evaluate", "--config", cfg, "--checkpoint", ckpt.to_str().unwrap()], dir.path());
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("success_rate"));
    let missing = dir.path().join("checkpoints/iter_9999.json");
    let out = run(&["evaluate", "--checkpoint", missing.to_str().unwrap()], dir.path());
    assert_eq!(code(&out), 2);
}
