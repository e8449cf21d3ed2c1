use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use adtn_core::data::Dataset;
use adtn_core::Tensor;

fn adtn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adtn")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// 28x28 images where class k lights up a horizontal bar at row 2 + 2k.
fn bars(n: usize, shift: usize) -> Dataset {
    let labels: Vec<usize> = (0..n).map(|i| (i * 7 + shift) % 10).collect();
    let images = Tensor::from_fn(vec![n, 1, 28, 28], |i| {
        let row = 2 + 2 * labels[i[0]];
        let noise = ((i[0] * 31 + i[2] * 17 + i[3] * 13) % 23) as f32 / 230.0;
        if i[2] == row || i[2] == row + 1 { 0.9 - noise } else { noise }
    })
    .unwrap();
    Dataset::new(images, labels, 10).unwrap()
}

fn write_mnist(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    for (prefix, ds) in [("train", bars(300, 0)), ("t10k", bars(100, 3))] {
        let (images, labels) = ds.to_idx().unwrap();
        fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), images).unwrap();
        fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), labels).unwrap();
    }
}

struct Run {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Run {
    fn new(extra: &str) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        write_mnist(&root.join("mnist"));
        let config = root.join("run.toml");
        let text = format!(
            "model = \"fc2\"\nseed = 11\noutput_dir = \"{}\"\n\n[data]\ndir = \"{}\"\n\n[train]\nepochs = 1\nbatch_size = 32\n{extra}",
            root.join("out").display(),
            root.join("mnist").display()
        );
        fs::write(&config, text).unwrap();
        Run { _tmp: tmp, root, config }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.root.join("out").join(name)
    }

    fn cfg(&self) -> &str {
        self.config.to_str().unwrap()
    }
}

#[test]
fn train_writes_checkpoint_metrics_and_manifest() {
    let run = Run::new("");
    let o = adtn(&["train", "--config", run.cfg()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(run.out("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2, "{metrics}");
    assert!(metrics.starts_with("epoch,"));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.out("manifest-train.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 11);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 4);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);

    let first = fs::read(run.out("baseline.ckpt")).unwrap();
    let again = adtn(&["train", "--config", run.cfg()]);
    assert!(again.status.success());
    assert_eq!(fs::read(run.out("baseline.ckpt")).unwrap(), first, "same seed, same checkpoint");

    let ckpt = run.out("baseline.ckpt");
    let data = run.root.join("mnist");
    let e1 = adtn(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    let e2 = adtn(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert!(e1.status.success());
    assert_eq!(stdout(&e1), stdout(&e2));
    let recorded = adtn(&["inspect", ckpt.to_str().unwrap()]);
    let line = stdout(&recorded).lines().find(|l| l.trim_start().starts_with("eta_nn")).unwrap().to_string();
    let eta_nn: f64 = line.split('=').nth(1).unwrap().trim().parse().unwrap();
    let evaluated: f64 = stdout(&e1).trim().parse().unwrap();
    assert_eq!(eta_nn, evaluated);

    let empty = adtn(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap(), "--limit", "0"]);
    assert_eq!(empty.status.code(), Some(3));
}

#[test]
fn compress_reports_the_slice_and_manifest_order() {
    let run = Run::new(
        "\n[compression]\nlayers = [\"fc1\"]\norder = \"forward\"\nmax_chunks = 1\n\n[compression.pretrain]\nmax_steps = 20\n\n[compression.finetune]\nepochs = 1\n",
    );
    assert!(adtn(&["train", "--config", run.cfg()]).status.success());
    let o = adtn(&["compress", "--config", run.cfg()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(run.out("report.csv")).unwrap();
    let mut rows = csv::Reader::from_reader(report.as_bytes());
    let header = rows.headers().unwrap().clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let records: Vec<_> = rows.records().map(|r| r.unwrap()).collect();
    assert_eq!(records.len(), 2);
    let layer = &records[0];
    assert_eq!(&layer[col("layer")], "fc1");
    assert_eq!(&layer[col("p")], "131072");
    assert_eq!(&layer[col("adtn_params")], "256");
    assert_eq!(&layer[col("n_adtns")], "1");
    assert_eq!(&layer[col("rho")], "0.001953125");
    let summary = &records[1];
    for field in ["eta_nn", "eta", "rho_tot"] {
        assert!(summary[col(field)].parse::<f64>().is_ok(), "{field}");
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.out("manifest-compress.json")).unwrap()).unwrap();
    assert_eq!(manifest["order"], "forward");

    let ckpt = run.out("compressed.ckpt");
    let inspect = stdout(&adtn(&["inspect", ckpt.to_str().unwrap()]));
    assert!(inspect.contains("compressed: 1 ADTN(s), q=[17], m=1"), "{inspect}");
}

#[test]
fn empty_layer_list_is_a_warning() {
    let run = Run::new("");
    assert!(adtn(&["train", "--config", run.cfg()]).status.success());
    let o = adtn(&["compress", "--config", run.cfg()]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    assert!(!run.out("compressed.ckpt").exists());
}

#[test]
fn exit_codes_distinguish_failures() {
    let run = Run::new("");
    let bad_model = adtn(&["train", "--config", run.cfg(), "--set", "model=vgg16"]);
    assert_eq!(bad_model.status.code(), Some(2));
    let unknown_key = adtn(&["train", "--config", run.cfg(), "--set", "train.warmup=3"]);
    assert_eq!(unknown_key.status.code(), Some(2));
    let no_data = adtn(&["train", "--config", run.cfg(), "--set", "data.dir=/nonexistent"]);
    assert_eq!(no_data.status.code(), Some(3));
    let diverge = adtn(&["train", "--config", run.cfg(), "--set", "train.optimizer.kind=sgd", "--set", "train.optimizer.lr=1e30"]);
    assert_eq!(diverge.status.code(), Some(4), "{}", String::from_utf8_lossy(&diverge.stderr));

    assert!(adtn(&["train", "--config", run.cfg()]).status.success());
    let mismatch = adtn(&["compress", "--config", run.cfg(), "--set", "model=lenet5-mnist", "--set", "compression.layers=[\"fc1\"]"]);
    assert_eq!(mismatch.status.code(), Some(2));

    let ckpt = run.out("baseline.ckpt");
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[100] ^= 0x10;
    fs::write(&ckpt, bytes).unwrap();
    let corrupt = adtn(&["inspect", ckpt.to_str().unwrap()]);
    assert_eq!(corrupt.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&corrupt.stderr).contains("checksum"));
}

#[test]
fn gradcheck_scopes() {
    let ops = adtn(&["gradcheck", "--scope", "ops"]);
    assert!(ops.status.success());
    let text = stdout(&ops);
    for p in adtn_core::gradsuite::PRIMITIVES {
        assert!(text.contains(p), "{p} missing from\n{text}");
    }
    let adtn_scope = stdout(&adtn(&["gradcheck", "--scope", "adtn"]));
    assert!(adtn_scope.contains("q=6 m=3 relu"));
    assert!(adtn_scope.contains("24/24 checks passed"));
    assert_eq!(adtn(&["gradcheck", "--scope", "graph"]).status.code(), Some(2));
}
