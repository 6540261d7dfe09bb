use std::path::Path;
use std::process::{Command, Output};

fn tfponet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfponet")).args(args).current_dir(cwd).env("RUST_LOG", "warn").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

const SMALL: [&str; 8] = ["--benchmark", "1d-smooth", "--train", "12", "--test", "2", "--batch-size", "6"];

#[test]
fn gen_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = tfponet(&[&["gen-data"], &SMALL[..], &["--out", "data"]].concat(), d);
    assert_eq!(code(&gen), 0, "{}", String::from_utf8_lossy(&gen.stderr));
    assert!(d.join("data/train.tfpo").exists() && d.join("data/test.tfpo").exists());

    let train = tfponet(&[&["train"], &SMALL[..], &["--steps", "20", "--data", "data/train.tfpo", "--out", "run"]].concat(), d);
    assert_eq!(code(&train), 0, "{}", String::from_utf8_lossy(&train.stderr));
    let loss = std::fs::read_to_string(d.join("run/loss.csv")).unwrap();
    assert!(loss.starts_with("step,loss,lr\n"));
    assert_eq!(loss.lines().count(), 21);

    let eval = tfponet(&["eval", "--checkpoint", "run/checkpoint.tfpo", "--data", "data/test.tfpo", "--out", "eval"], d);
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("eval/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["mode"], "eval");
    assert_eq!(summary["n_samples"], 2);

    let oracle = tfponet(&["oracle", "--config", "run/manifest.json", "--data", "data/test.tfpo", "--out", "oracle"], d);
    assert_eq!(code(&oracle), 0, "{}", String::from_utf8_lossy(&oracle.stderr));
    let printed: serde_json::Value = serde_json::from_slice(&oracle.stdout).unwrap();
    assert!(printed["rel_l2"]["median"].as_f64().unwrap() < 1e-2);
}

#[test]
fn convergence_and_reference_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let conv = tfponet(&["convergence", "--benchmark", "1d-smooth", "--cells", "8,16", "--samples", "2", "--out", "conv"], d);
    assert_eq!(code(&conv), 0, "{}", String::from_utf8_lossy(&conv.stderr));
    let csv = std::fs::read_to_string(d.join("conv/convergence.csv")).unwrap();
    assert!(csv.starts_with("cells,h,median,mean,min,max\n"));
    assert_eq!(csv.lines().count(), 3);

    assert_eq!(code(&tfponet(&[&["gen-data"], &SMALL[..]].concat(), d)), 0);
    let refd = tfponet(&[&["reference"], &SMALL[..], &["--data", "data/train.tfpo", "--out", "train_ref.tfpo"]].concat(), d);
    assert_eq!(code(&refd), 0, "{}", String::from_utf8_lossy(&refd.stderr));
    let oracle = tfponet(&[&["oracle"], &SMALL[..], &["--data", "train_ref.tfpo"]].concat(), d);
    assert_eq!(code(&oracle), 0, "{}", String::from_utf8_lossy(&oracle.stderr));
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&tfponet(&["gen-data", "--benchmark", "1d-smooth", "--train", "0"], d)), 2);
    assert_eq!(code(&tfponet(&["gen-data", "--benchmark", "3d-cube"], d)), 2);
    assert_eq!(code(&tfponet(&["gen-data"], d)), 2);
    assert_eq!(code(&tfponet(&["train", "--benchmark", "1d-smooth", "--data", "missing.tfpo"], d)), 2);
    assert_eq!(code(&tfponet(&["no-such-command"], d)), 2);
    assert_eq!(code(&tfponet(&["gen-data", "--benchmark", "1d-smooth", "--epsilon", "0.1"], d)), 2);

    assert_eq!(code(&tfponet(&[&["gen-data"], &SMALL[..]].concat(), d)), 0);
    let mismatch = tfponet(&["train", "--benchmark", "1d-singular", "--data", "data/train.tfpo"], d);
    assert_eq!(code(&mismatch), 2);
    let no_ref = tfponet(&[&["oracle"], &SMALL[..], &["--data", "data/train.tfpo"]].concat(), d);
    assert_eq!(code(&no_ref), 2);
}

#[test]
fn thread_variable_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_tfponet"))
            .args(["convergence", "--benchmark", "1d-smooth", "--cells", "8", "--samples", "1"])
            .current_dir(dir.path())
            .env("TFPONET_THREADS", threads)
            .output()
            .unwrap()
    };
    assert_eq!(code(&run("2")), 0);
    assert_eq!(code(&run("zero")), 2);
    assert_eq!(code(&run("0")), 2);
}

#[test]
fn help_exits_cleanly() {
    let out = tfponet(&["--help"], Path::new("."));
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["gen-data", "train", "eval", "oracle", "convergence", "reference"] {
        assert!(text.contains(cmd), "{cmd}");
    }
}
