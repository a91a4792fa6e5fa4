use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sofar::data;

fn sofar(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sofar")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_data(dir: &Path) {
    let (images, labels) = data::synthesize(40, 4, 1);
    data::write_cifar(&dir.join("train.bin"), &images, &labels).unwrap();
    let (images, labels) = data::synthesize(20, 4, 2);
    data::write_cifar(&dir.join("val.bin"), &images, &labels).unwrap();
}

fn tiny_config(out: &str, epochs: usize, lr: &str, extra: &str) -> String {
    format!(
        r#"out_dir = "{out}"
record_seconds = false
{extra}
[model.spec]
family = "RF"
columns = 2
stage_blocks = [1, 1]
width = 4
dataset = "cifar"
num_classes = 4
input_resolution = 32
stem_channels = 4
transition = "double"

[data]
format = "cifar_binary"
train = "train.bin"
val = "val.bin"

[train]
phase = "pretrain_fp"
epochs = {epochs}
batch_size = 10
seed = 3
optimizer = {{ kind = "sgd_momentum", momentum = 0.9, weight_decay = 0.0 }}
schedule = {{ kind = "cosine", lr = {lr} }}
"#
    )
}

#[test]
fn summarize_golden_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = sofar(dir.path(), &["summarize", "--arch", "RF-c4d8 ResNet37(41)", "--input-res", "224", "--golden"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).starts_with("PASS"));
    assert!(stdout(&o).contains("Mbit"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = sofar(dir.path(), &["summarize", "--arch", "RF-c4 ResNet37"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert_eq!(code(&sofar(dir.path(), &["bench", "--sizes", "0"])), 2);
    assert_eq!(code(&sofar(dir.path(), &["train", "--config", "absent.toml"])), 2);
    fs::write(dir.path().join("bad.toml"), "out_dir = 1\n").unwrap();
    assert_eq!(code(&sofar(dir.path(), &["train", "--config", "bad.toml"])), 2);
}

#[test]
fn missing_data_and_bad_checkpoint_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), tiny_config("out", 1, "0.01", "")).unwrap();
    let o = sofar(dir.path(), &["train", "--config", "run.toml"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));

    tiny_data(dir.path());
    fs::write(dir.path().join("ckpt.sofa"), b"ZZZZ\x01\x00\x00\x00").unwrap();
    let o = sofar(dir.path(), &["eval", "--checkpoint", "ckpt.sofa", "--dataset", "val.bin"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn huge_learning_rate_diverges() {
    let dir = tempfile::tempdir().unwrap();
    tiny_data(dir.path());
    fs::write(dir.path().join("run.toml"), tiny_config("out", 2, "1e30", "")).unwrap();
    let o = sofar(dir.path(), &["train", "--config", "run.toml"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn export_and_import_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let mut counts = Vec::new();
    for name in ["RF-c3d4 ResNet21(50)", "F-c3d4 ResNet21(50)"] {
        let o = sofar(dir.path(), &["export", "--arch", name, "--block", "--out", "block.json"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stderr(&o).contains("(7 convolutions)"));
        let o = sofar(dir.path(), &["import", "--graph", "block.json"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        counts.push(stdout(&o));
    }
    assert!(
        counts[0].contains("convs=7 ") && counts[0].contains("adds=7 ") && counts[0].contains("joins=2 "),
        "{}",
        counts[0]
    );
    let strip = |s: &str| {
        s.split(' ').filter(|f| !f.starts_with("nodes=") && !f.starts_with("adds=")).collect::<Vec<_>>().join(" ")
    };
    assert!(counts[1].contains("adds=0 "));
    assert_eq!(strip(&counts[1]), strip(&counts[0]));
}

#[test]
fn train_eval_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_data(d);
    fs::write(d.join("run.toml"), tiny_config("full", 4, "0.05", "")).unwrap();
    let o = sofar(d, &["train", "--config", "run.toml"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let full = fs::read_to_string(d.join("full/metrics.csv")).unwrap();
    assert_eq!(full.lines().count(), 5, "{full}");
    assert!(full.lines().nth(4).unwrap().starts_with("4,"));
    for e in 1..=4 {
        assert!(d.join(format!("full/epoch-{e:03}.sofa")).exists());
    }
    assert!(fs::read_to_string(d.join("full/run.toml")).unwrap().contains("[model.spec]"));

    let o = sofar(d, &["eval", "--checkpoint", "full/checkpoint.sofa", "--dataset", "val.bin"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("n=20 top1_error="));

    // Interrupted after epoch 2: the resumed run rewrites epochs 3 and 4
    // identically.
    fs::create_dir(d.join("part")).unwrap();
    let head: String = full.lines().take(3).map(|l| format!("{l}\n")).collect();
    fs::write(d.join("part/metrics.csv"), format!("{head}3,junk\n")).unwrap();
    fs::write(d.join("part.toml"), tiny_config("part", 4, "0.05", "")).unwrap();
    let o = sofar(d, &["train", "--config", "part.toml", "--resume", "full/epoch-002.sofa"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(d.join("part/metrics.csv")).unwrap(), full);
    assert_eq!(fs::read(d.join("part/checkpoint.sofa")).unwrap(), fs::read(d.join("full/checkpoint.sofa")).unwrap());
}

#[test]
fn synth_writes_cifar_batches() {
    let dir = tempfile::tempdir().unwrap();
    let o = sofar(dir.path(), &["synth", "--out-dir", "s", "--train", "12", "--test", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::metadata(dir.path().join("s/train.bin")).unwrap().len(), 12 * data::CIFAR_RECORD as u64);
    assert_eq!(data::load_cifar(&dir.path().join("s/test.bin"), 10).unwrap().len(), 3);
}
