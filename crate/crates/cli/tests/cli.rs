use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use adaptcl::data::idx::{encode_images, encode_labels};
use adaptcl::experiment::{ConfigFile, MethodConfig};
use adaptcl::verify::synthetic_config;

fn adaptcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adaptcl")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn small_config(dir: &Path, name: &str, method: &str, extra: &str) -> PathBuf {
    let out = dir.join(name);
    let text = format!(
        "method = \"{method}\"\nsequence = \"synthetic_strong\"\nmodel = \"toy_cnn\"\noutput_dir = \"{}\"\n\
         samples_per_class = 5\nepochs_per_dataset = 2\nbatch_size = 16\nlearning_rate = 0.01\n{extra}",
        out.display()
    );
    let path = dir.join(format!("{name}.toml"));
    fs::write(&path, text).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_is_deterministic_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let mut metrics = Vec::new();
    for name in ["a", "b"] {
        let cfg = small_config(tmp.path(), name, "adaptcl", "");
        let o = adaptcl(&["run", "--config", cfg.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        metrics.push(fs::read(tmp.path().join(name).join("metrics.json")).unwrap());
    }
    assert_eq!(metrics[0], metrics[1]);
    let m: serde_json::Value = serde_json::from_slice(&metrics[0]).unwrap();
    for key in ["acc", "bwt", "fwt", "used_params", "method", "sequence", "seed"] {
        assert!(!m[key].is_null(), "{key} missing in {m}");
    }

    let run = tmp.path().join("a");
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "complete");
    let files: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    for f in ["checkpoints/dataset_0.aclk", "checkpoints/dataset_2.aclk", "history.csv", "metrics.json", "matrix.csv", "layer_usage.csv"] {
        assert!(files.contains(&f), "{f} not in {files:?}");
    }
    // 3 datasets x 2 epochs x 3 evaluated tasks, plus the header.
    assert_eq!(fs::read_to_string(run.join("history.csv")).unwrap().lines().count(), 19);
}

#[test]
fn preset_name_runs_with_overrides() {
    // The shipped preset is full size; only check that the name resolves and
    // that an override is validated against it.
    let o = adaptcl(&["run", "--config", "synthetic_strong_adaptcl", "--method", "ewc"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("synthetic_strong_adaptcl.toml") && stderr(&o).contains("alpha"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let typo = small_config(tmp.path(), "typo", "adaptcl", "epochs_per_datset = 3\n");
    let o = adaptcl(&["run", "--config", typo.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("epochs_per_datset"), "{}", stderr(&o));

    let foreign = small_config(tmp.path(), "foreign", "adaptcl", "alpha = 0.001\n");
    let o = adaptcl(&["run", "--config", foreign.to_str().unwrap(), "--method", "sgd"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("alpha"), "{}", stderr(&o));

    let o = adaptcl(&["run", "--config", tmp.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), "boom", "sgd", "").to_str().unwrap().to_string();
    let text = fs::read_to_string(&cfg).unwrap().replace("learning_rate = 0.01", "learning_rate = 1e30");
    fs::write(&cfg, text).unwrap();
    let o = adaptcl(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("dataset 0"), "{}", stderr(&o));
}

#[test]
fn compare_and_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for (name, method) in [("ad", "adaptcl"), ("sg", "sgd")] {
        let cfg = small_config(tmp.path(), name, method, "");
        assert!(adaptcl(&["run", "--config", cfg.to_str().unwrap()]).status.success());
        runs.push(tmp.path().join(name));
    }
    let table = tmp.path().join("table.csv");
    let o = adaptcl(&["compare", "--runs", runs[0].to_str().unwrap(), runs[1].to_str().unwrap(), "--out", table.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "method,sequence,seed,acc,bwt,fwt,used_params");
    assert!(lines[1].starts_with("adaptcl,synthetic_strong,5,"));

    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let o = adaptcl(&["compare", "--runs", empty.to_str().unwrap(), "--out", table.to_str().unwrap()]);
    assert!(!o.status.success());

    let svg = |what: &str| {
        let out = tmp.path().join(format!("{what}.svg"));
        let o = adaptcl(&["plot", "--run", runs[0].to_str().unwrap(), "--what", what, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read_to_string(out).unwrap()
    };
    let curves = svg("curves");
    assert_eq!(curves.matches("class=\"series\"").count(), 3);
    assert!(curves.contains("data-epoch=\"2\"") && curves.contains("data-epoch=\"4\""));
    let keep = svg("keep_ratio");
    let values = keep.split("data-values=\"").nth(1).unwrap().split('"').next().unwrap();
    assert!(values.split(' ').map(|v| v.parse::<f64>().unwrap()).all(|v| (0.0..=1.0).contains(&v)));
    assert!(svg("layer_usage").contains("class=\"bar\""));

    let o = adaptcl(&["plot", "--run", runs[0].to_str().unwrap(), "--what", "loss", "--out", "x.svg"]);
    assert_eq!(o.status.code(), Some(2));
}

/// A few 28x28 digits in IDX format, enough for a one-epoch LeNet-5 run.
fn mnist_fixture(dir: &Path) {
    for (prefix, n) in [("train", 20usize), ("t10k", 10)] {
        let pixels: Vec<u8> = (0..n * 784).map(|k| ((k * 37) % 256) as u8).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), encode_images(n, 28, 28, &pixels)).unwrap();
        fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), encode_labels(&labels)).unwrap();
    }
}

#[test]
fn dense_lenet5_run_reports_all_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    mnist_fixture(tmp.path());
    let cfg = tmp.path().join("lenet.toml");
    fs::write(
        &cfg,
        format!(
            "method = \"sgd\"\ntasks = [\"mnist\", \"permuted_mnist\"]\nmodel = \"lenet5\"\noutput_dir = \"{}\"\n\
             data_dir = \"{}\"\nepochs_per_dataset = 1\nbatch_size = 8\n",
            tmp.path().join("run").display(),
            tmp.path().display()
        ),
    )
    .unwrap();
    let o = adaptcl(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = tmp.path().join("t.csv");
    assert!(adaptcl(&["compare", "--runs", tmp.path().join("run").to_str().unwrap(), "--out", table.to_str().unwrap()]).status.success());
    let row = fs::read_to_string(table).unwrap().lines().nth(1).unwrap().to_string();
    assert!(row.starts_with("sgd,mnist_custom,5,") && row.ends_with(",61706"), "{row}");
}

#[test]
fn verify_emits_json_lines() {
    let o = adaptcl(&["verify", "--suite", "quick", "--only", "4,7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<serde_json::Value> =
        String::from_utf8(o.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines.iter().all(|v| v["status"] == "pass"));

    assert_eq!(adaptcl(&["verify", "--suite", "slow"]).status.code(), Some(2));
}

#[test]
fn injected_fault_fails_freeze_check() {
    let o = adaptcl(&["verify", "--only", "1", "--inject-fault", "1:5"]);
    assert!(!o.status.success());
    let line: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&o.stdout).trim()).unwrap();
    assert_eq!(line["criterion"], "1");
    assert_eq!(line["status"], "fail");
    assert!(stderr(&o).contains("failed criteria: 1"));
}

#[test]
fn shipped_presets_resolve() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ConfigFile::load(&path).and_then(|c| c.resolve()).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        count += 1;
        if path.file_stem().unwrap() == "synthetic_strong_adaptcl" {
            let want = synthetic_config(1000, 5);
            assert_eq!(cfg.method, MethodConfig::AdaptCl { alpha: Some(want.alpha) });
            assert_eq!(cfg.train, adaptcl::trainer::TrainConfig { alpha: 0.0, ..want });
        }
    }
    assert_eq!(count, 20);
}
