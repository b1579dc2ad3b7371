use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn novodiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_novodiff")).args(args).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const TINY: &str = r#"
seed = 2
variant = "ar"

[vocabulary]
preset = "toy"

[synth]
n_spectra = 30
length_range = [3, 5]

[model]
model_dim = 16
heads = 2
ds_dim = 8
max_len = 8

[train]
epochs = 1
batch_size = 8
val_interval = 0
"#;

fn write_config(dir: &Path) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&novodiff(&["synth", "--config", &cfg, "--seed", "7", "--out", a.to_str().unwrap()]));
    ok(&novodiff(&["synth", "--config", &cfg, "--seed", "7", "--out", b.to_str().unwrap()]));
    for f in ["train.mgf", "val.mgf", "test.mgf"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn bad_length_range_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[synth]\nlength_range = [7, 2]\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = novodiff(&["synth", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[config]"));
    assert!(!out_dir.exists());
}

#[test]
fn unknown_config_key_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nepochz = 3\n").unwrap();
    let out = novodiff(&["synth", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
}

#[test]
fn end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).to_str().unwrap().to_string();
    let cfg = write_config(dir.path());
    ok(&novodiff(&["synth", "--config", &cfg, "--out", &d("data")]));
    let train = ok(&novodiff(&[
        "train",
        "--config",
        &cfg,
        "--train",
        &d("data/train.mgf"),
        "--val",
        &d("data/val.mgf"),
        "--checkpoint",
        &d("ar.ckpt"),
    ]));
    assert!(train.contains("parameters"));

    let predict = novodiff(&[
        "predict",
        "--config",
        &cfg,
        "--checkpoint",
        &d("ar.ckpt"),
        "--input",
        &d("data/test.mgf"),
        "--output",
        &d("pred.jsonl"),
        "--decoder",
        "knapsack-beam",
    ]);
    assert!(ok(&predict).contains("mean"));
    assert!(String::from_utf8_lossy(&predict.stderr).lines().count() >= 1);

    ok(&novodiff(&[
        "evaluate",
        "--config",
        &cfg,
        "--predictions",
        &d("pred.jsonl"),
        "--truth",
        &d("data/test.mgf"),
        "--output",
        &d("report.jsonl"),
    ]));
    let cmp = ok(&novodiff(&["compare", &d("report.jsonl"), &d("report.jsonl")]));
    assert!(cmp.contains("aa recall delta         +0.000"), "{cmp}");
    assert!(cmp.contains("undefined"), "{cmp}");

    let mismatch = novodiff(&[
        "predict",
        "--config",
        &cfg,
        "--checkpoint",
        &d("ar.ckpt"),
        "--input",
        &d("data/test.mgf"),
        "--output",
        &d("x.jsonl"),
        "--decoder",
        "diffusion",
    ]);
    assert_eq!(mismatch.status.code(), Some(2));
    assert!(!dir.path().join("x.jsonl").exists());

    let lines: Vec<String> = fs::read_to_string(d("report.jsonl")).unwrap().lines().map(String::from).collect();
    fs::write(d("short.jsonl"), lines[..lines.len() - 1].join("\n")).unwrap();
    let out = novodiff(&["compare", &d("report.jsonl"), &d("short.jsonl")]);
    assert!(!out.status.success());
}
