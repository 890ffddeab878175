use std::path::Path;
use std::process::{Command, Output};

use layerwise::checkpoint::{Checkpoint, Model};
use layerwise::dataset::write_idx;
use layerwise::{DataMatrix, LabeledDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BIN: &str = env!("CARGO_BIN_EXE_layerwise");

fn write_split(dir: &Path, prefix: &str, n: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = (0..n * 16).map(|_| rng.gen_range(0..=255u8) as f64 / 255.0).collect();
    let ds = LabeledDataset::new(
        DataMatrix::from_vec(n, 16, pixels).unwrap(),
        (0..n).map(|i| (i % 10) as u8).collect(),
    )
    .unwrap();
    write_idx(
        &ds,
        (4, 4),
        &dir.join(format!("{prefix}-images-idx3-ubyte.gz")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte.gz")),
    )
    .unwrap();
}

/// A temp dir holding tiny train/test files and a config pointing at them.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_split(dir.path(), "train", 80, 1);
    write_split(dir.path(), "t10k", 30, 2);
    let out = dir.path().join("out");
    std::fs::write(
        dir.path().join("run.toml"),
        format!(
            "[arch]\ndims = [16, 8, 4]\n\n[train]\nepochs_per_layer = 2\nfinetune_epochs = 2\nbatch_size = 10\n\n\
             [data]\nper_class_valid = 2\n\n[sync]\nextra_epochs = [0, 2]\nmode = \"deterministic_rounds\"\n\n\
             [backprop]\nlearning_rate = 0.1\n\n[output]\ndir = \"{}\"\n",
            out.display()
        ),
    )
    .unwrap();
    dir
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--data-dir")
        .arg(dir)
        .current_dir(dir)
        .env_remove("LAYERWISE_DATA_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn dry_run_prints_schedule_and_writes_nothing() {
    let dir = workspace();
    let o = run(dir.path(), &["pretrain", "--config", "run.toml", "--dry-run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("stipulated"));
    assert!(text.contains("16-8"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn config_errors_exit_2_with_diagnostics() {
    let dir = workspace();
    std::fs::write(dir.path().join("bad.toml"), "train.seed = 1\ntrain.sede = 2\n").unwrap();
    let o = run(dir.path(), &["pretrain", "--config", "bad.toml", "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("train.sede") && err.contains("bad.toml:2"), "{err}");

    let o = run(dir.path(), &["pretrain", "--preset", "huge", "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(dir.path(), &["pretrain", "--config", "run.toml", "--algo", "magic"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_data_exits_3() {
    let dir = workspace();
    let o = run(dir.path(), &["pretrain", "--config", "run.toml", "--set", "data.images=nowhere.gz"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn pretrain_writes_artifacts() {
    let dir = workspace();
    let o = run(dir.path(), &["pretrain", "--algo", "sync", "--config", "run.toml", "--run-id", "p"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run_dir = dir.path().join("out/p");
    for f in ["trace.csv", "curves.csv", "summary.toml", "config.toml", "checkpoints/pretrained.ckpt"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let trace = std::fs::read_to_string(run_dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("worker,epoch,event,input_version,train_err,valid_err,t_start_ns,t_end_ns"));
    let ck = Checkpoint::load(&run_dir.join("checkpoints/pretrained.ckpt")).unwrap();
    assert!(matches!(ck.model, Model::RbmStack(ref r) if r.len() == 2));

    // the echoed config reproduces the run on its own
    let o = run(dir.path(), &["pretrain", "--algo", "sync", "--config", "out/p/config.toml", "--run-id", "q"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let again = Checkpoint::load(&dir.path().join("out/q/checkpoints/pretrained.ckpt")).unwrap();
    assert_eq!(ck, again);

    let o = run(dir.path(), &["trace-export", "--trace", "out/p/trace.csv", "--curves", "c.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("total non-busy"));
    assert!(std::fs::read_to_string(dir.path().join("c.csv")).unwrap().starts_with("phase,worker,epoch"));
}

#[test]
fn split_finetune_equals_single_run() {
    let dir = workspace();
    let o = run(dir.path(), &["pretrain", "--algo", "greedy", "--config", "run.toml", "--run-id", "p"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pre = "out/p/checkpoints/pretrained.ckpt";

    let o = run(dir.path(), &["finetune", "--checkpoint", pre, "--epochs", "2", "--config", "run.toml", "--run-id", "one"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(dir.path(), &["finetune", "--checkpoint", pre, "--epochs", "1", "--config", "run.toml", "--run-id", "a"]);
    assert!(o.status.success());
    let o = run(
        dir.path(),
        &["finetune", "--checkpoint", "out/a/checkpoints/final.ckpt", "--epochs", "1", "--config", "run.toml", "--run-id", "b"],
    );
    assert!(o.status.success());
    let one = std::fs::read(dir.path().join("out/one/checkpoints/final.ckpt")).unwrap();
    let two = std::fs::read(dir.path().join("out/b/checkpoints/final.ckpt")).unwrap();
    assert_eq!(one, two);
    assert!(dir.path().join("out/one/finetune.csv").exists());

    // zero epochs leaves the model untouched
    let o = run(
        dir.path(),
        &["finetune", "--checkpoint", "out/one/checkpoints/final.ckpt", "--epochs", "0", "--config", "run.toml", "--run-id", "z"],
    );
    assert!(o.status.success());
    let a = Checkpoint::load(&dir.path().join("out/one/checkpoints/final.ckpt")).unwrap();
    let z = Checkpoint::load(&dir.path().join("out/z/checkpoints/final.ckpt")).unwrap();
    assert_eq!(a, z);

    let o = run(
        dir.path(),
        &["eval", "--checkpoint", "out/one/checkpoints/final.ckpt", "--config", "run.toml", "--dump-reconstructions", "r.csv", "--dump-count", "3"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("test"));
    let dump = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(dump.lines().count(), 3);
    assert_eq!(dump.lines().next().unwrap().split(',').count(), 17);
}

#[test]
fn compare_prints_two_row_table() {
    let dir = workspace();
    let o = run(dir.path(), &["compare", "--config", "run.toml", "--run-id", "c"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].contains("test_err") && lines[0].contains("pretrain_s") && lines[0].contains("total_s"));
    assert!(lines[1].starts_with("greedy"));
    assert!(lines[2].starts_with("sync"));
    assert!(text.contains("speedup (pre-training only)"));
    assert!(text.contains("speedup (total time)"));
    for alg in ["greedy", "sync"] {
        assert!(dir.path().join(format!("out/c/{alg}/summary.toml")).exists());
    }
}

#[test]
fn data_dir_falls_back_to_environment() {
    let dir = workspace();
    let o = Command::new(BIN)
        .args(["pretrain", "--config", "run.toml", "--run-id", "env"])
        .current_dir(dir.path())
        .env("LAYERWISE_DATA_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
}
