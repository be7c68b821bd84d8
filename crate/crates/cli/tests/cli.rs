use std::path::Path;
use std::process::{Command, Output};

use hintreg::data::idx::{write_idx, IdxArray, IdxData};
use hintreg::data::sha256_hex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MNIST: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

fn hintreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hintreg"))
        .args(args)
        .env_remove("HINTREG_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Random digit-sized images with balanced labels in the raw MNIST layout.
fn fake_mnist(dir: &Path, train: usize, test: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut write_pair = |images: &str, labels: &str, n: usize| {
        let pixels: Vec<u8> = (0..n * 784).map(|_| rng.gen()).collect();
        let y: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        write_idx(
            &dir.join(images),
            &IdxArray {
                dims: vec![n, 28, 28],
                data: IdxData::U8(pixels),
            },
        )
        .unwrap();
        write_idx(
            &dir.join(labels),
            &IdxArray {
                dims: vec![n],
                data: IdxData::U8(y),
            },
        )
        .unwrap();
    };
    write_pair(MNIST[0], MNIST[1], train);
    write_pair(MNIST[2], MNIST[3], test);
}

fn synth(raw: &Path, benchmark: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "synth",
        "--benchmark",
        benchmark,
        "--data-dir",
        raw.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    hintreg(&args)
}

fn hashes(dir: &Path) -> Vec<(String, String)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), sha256_hex(&std::fs::read(&p).unwrap()))
        })
        .collect();
    v.sort();
    v
}

struct Workspace {
    _tmp: tempfile::TempDir,
    root: std::path::PathBuf,
}

impl Workspace {
    /// Raw archives under `raw/`, mnist-std synthesized under `bench/mnist-std`.
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        std::fs::create_dir_all(root.join("raw")).unwrap();
        fake_mnist(&root.join("raw"), 120, 40);
        let out = synth(&root.join("raw"), "mnist-std", &root.join("bench/mnist-std"), &[]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        Self { _tmp: tmp, root }
    }

    fn config(&self, body: &str) -> std::path::PathBuf {
        let text = format!(
            "[experiment]\nmodel = \"mlp\"\nbenchmark = \"mnist-std\"\ndata_dir = \"{}\"\nout_dir = \"{}\"\ncheckpoint_every = 1\n{body}",
            self.root.join("bench").display(),
            self.root.join("out").display()
        );
        let path = self.root.join("config.toml");
        std::fs::write(&path, text).unwrap();
        path
    }
}

#[test]
fn synth_std_splits_and_is_deterministic() {
    let ws = Workspace::new();
    let again = ws.root.join("again");
    assert_eq!(code(&synth(&ws.root.join("raw"), "mnist-std", &again, &[])), 0);
    let a = hashes(&ws.root.join("bench/mnist-std"));
    assert_eq!(a, hashes(&again));
    assert_eq!(a.len(), 10);
    let set = hintreg::data::BenchmarkSet::load(&again).unwrap();
    assert_eq!((set.train.len(), set.valid.len(), set.test.len()), (100, 20, 40));
}

#[test]
fn synth_noise_is_deterministic() {
    let ws = Workspace::new();
    let sizes = ["--train-size", "30", "--valid-size", "10", "--test-size", "10", "--seed", "4"];
    let (a, b) = (ws.root.join("n1"), ws.root.join("n2"));
    assert_eq!(code(&synth(&ws.root.join("raw"), "mnist-noise", &a, &sizes)), 0);
    assert_eq!(code(&synth(&ws.root.join("raw"), "mnist-noise", &b, &sizes)), 0);
    assert_eq!(hashes(&a), hashes(&b));
}

#[test]
fn synth_img_without_cifar_lists_missing_files() {
    let ws = Workspace::new();
    let out = synth(&ws.root.join("raw"), "mnist-img", &ws.root.join("img"), &[]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("data_batch_1.bin") && err.contains("test_batch.bin"), "{err}");
}

#[test]
fn synth_missing_mnist_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = synth(tmp.path(), "mnist-std", &tmp.path().join("o"), &[]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("t10k-labels-idx1-ubyte"));
}

#[test]
fn synth_corrupt_archive_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    fake_mnist(tmp.path(), 12, 6);
    std::fs::write(tmp.path().join(MNIST[0]), [0u8, 0, 8, 3, 0, 0]).unwrap();
    let out = synth(tmp.path(), "mnist-std", &tmp.path().join("o"), &[]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn data_dir_comes_from_environment() {
    let ws = Workspace::new();
    let out = Command::new(env!("CARGO_BIN_EXE_hintreg"))
        .args(["synth", "--benchmark", "mnist-std", "--out"])
        .arg(ws.root.join("env"))
        .env("HINTREG_DATA_DIR", ws.root.join("raw"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn unknown_config_key_exits_4_naming_it() {
    let ws = Workspace::new();
    let cfg = ws.config("[schedule]\nmax_epoch = 3\n");
    let out = hintreg(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("max_epoch"), "{}", stderr(&out));
}

#[test]
fn missing_config_exits_2() {
    let out = hintreg(&["train", "--config", "/nonexistent/config.toml"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_without_hint_takes_no_hint_steps() {
    let ws = Workspace::new();
    let cfg = ws.config("[hint]\nlambda = 0.0\n\n[schedule]\nmax_epochs = 2\nbatch_size = 25\nseed = 3\n");
    let out = hintreg(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let runs: Vec<_> = std::fs::read_dir(ws.root.join("out")).unwrap().collect();
    assert_eq!(runs.len(), 1);
    let dir = runs[0].as_ref().unwrap().path().join("seed-3");
    for f in ["config.toml", "spec.json", "log.csv", "best.ckpt", "report.json"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    assert!(!dir.join("state.bin").exists());
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["log"]["hint_steps"], 0);
    assert_eq!(report["log"]["supervised_steps"], 8);
    let copied = std::fs::read_to_string(dir.join("config.toml")).unwrap();
    assert!(copied.contains("lambda = 0.0"), "{copied}");

    let ckpt = std::fs::read(dir.join("best.ckpt")).unwrap();
    std::fs::remove_file(dir.join("report.json")).unwrap();
    assert_eq!(code(&hintreg(&["train", "--config", cfg.to_str().unwrap()])), 0);
    assert!(std::fs::read(dir.join("best.ckpt")).unwrap() == ckpt);
    let again: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(without_timing(again), without_timing(report));
}

/// Drops wall-clock fields, the only part of a report allowed to differ
/// between identical runs.
fn without_timing(mut report: serde_json::Value) -> serde_json::Value {
    for r in report["log"]["records"].as_array_mut().unwrap() {
        r.as_object_mut().unwrap().remove("seconds");
    }
    report
}

#[test]
fn layer_study_writes_four_cells() {
    let ws = Workspace::new();
    let cfg = ws.config(
        "[protocol]\nrepeats = 3\nbase_seed = 1\nbaseline_epochs = 1\nhint_epochs = 1\nbatch_size = 50\neval_every = 1\nsubset_seed = 0\n",
    );
    let out = hintreg(&["study", "--kind", "layers", "--config", cfg.to_str().unwrap(), "--workers", "1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let dir = ws.root.join("out/study-layers-mnist-std-mlp");
    let csv = std::fs::read_to_string(dir.join("cells.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[1].contains(",none,none,"));
    for (k, row) in rows[2..].iter().enumerate() {
        assert!(row.contains(&format!(",sed,h{},", k + 1)), "{row}");
    }
    assert!(dir.join("bundle.json").is_file());
    assert!(std::fs::read_to_string(dir.join("config.toml")).unwrap().contains("workers = 1"));
}

#[test]
fn study_without_protocol_exits_4() {
    let ws = Workspace::new();
    let cfg = ws.config("");
    let out = hintreg(&["study", "--kind", "tables", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 4);
}

#[test]
fn probe_series_length_follows_cadence() {
    let ws = Workspace::new();
    let cfg = ws.config(
        "[probe]\nmodel = \"mlp\"\nclasses = [1, 7]\nper_class = 4\ncadence = 50\nepochs = 3\nbatch_size = 2\nseed = 0\nmeasure = \"nmd\"\n",
    );
    let out = hintreg(&["probe", "--config", cfg.to_str().unwrap(), "--cadence", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let dir = ws.root.join("out/probe-mlp");
    let csv = std::fs::read_to_string(dir.join("probe.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "batches,h1,h2,h3,h4");
    let set = hintreg::data::BenchmarkSet::load(&ws.root.join("bench/mnist-std")).unwrap();
    let n = set.train.labels().iter().filter(|&&l| l == 1 || l == 7).count();
    let total = 3 * (n / 2);
    assert_eq!(lines.len() - 1, total / 2 + 1);
    assert!(std::fs::read_to_string(dir.join("config.toml")).unwrap().contains("cadence = 2"));
}
