use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dsffs::data::{write_csv, Dataset};
use ndarray::Array2;

const TINY: &str = r#"
dataset = "synthetic"
n_informative = 5
n_noise = 15
n_samples = 200
clients = 3
rounds = 2
local_epochs = 1
hidden = [10]
sparsity = 0.5
k = 6
"#;

fn dsffs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsffs"))
        .args(args)
        .env_remove("DSFFS_SEED")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn run(config: &str, out: &Path, extra: &[&str]) -> Output {
    let out = out.to_string_lossy().into_owned();
    let mut args = vec!["run", "--config", config, "--out", &out];
    args.extend_from_slice(extra);
    dsffs(&args)
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let out = dir.path().join("out");
    let res = run(&cfg, &out, &[]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(
        lines[0],
        "round,accuracy,cumulative_flops,cumulative_upload_bits,connected_input_neurons,global_nnz"
    );
    assert_eq!(lines.len(), 3);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("selected_features.json")).unwrap()).unwrap();
    assert_eq!(manifest["features"].as_array().unwrap().len(), 6);
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["config"]["clients"], 3);
    let resolved = fs::read_to_string(out.join("config.resolved")).unwrap();
    for key in [
        "sparsity = 0.5",
        "beta = 0.65",
        "zeta = 0.2",
        "adjust_interval = 10",
        "clients_per_round = 3",
    ] {
        assert!(resolved.contains(key), "missing {key}");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&cfg, &a, &["--workers", "1"]).status.success());
    assert!(run(&cfg, &b, &["--workers", "3"]).status.success());
    for f in ["metrics.csv", "selected_features.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_override_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tiny.toml", TINY);
    let out = dir.path().join("seeded");
    let res = Command::new(env!("CARGO_BIN_EXE_dsffs"))
        .args(["run", "--config", &cfg, "--out", &out.to_string_lossy()])
        .env("DSFFS_SEED", "17")
        .output()
        .unwrap();
    assert!(res.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("selected_features.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 17);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let one = write_config(
        dir.path(),
        "one.toml",
        &format!("{TINY}\n").replace("clients = 3", "clients = 1"),
    );
    let res = run(&one, &dir.path().join("x"), &[]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("M must be at least 2"));

    let typo = write_config(dir.path(), "typo.toml", "roundz = 3\n");
    let res = run(&typo, &dir.path().join("y"), &[]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("roundz"));

    let too_many = write_config(dir.path(), "k.toml", &TINY.replace("k = 6", "k = 50"));
    assert_eq!(run(&too_many, &dir.path().join("z"), &[]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "missing.toml",
        "dataset = \"csv\"\npath = \"nowhere.csv\"\nclients = 2\n",
    );
    assert_eq!(run(&cfg, &dir.path().join("o"), &[]).status.code(), Some(3));
}

#[test]
fn inspect_reports_shapes() {
    let dir = tempfile::tempdir().unwrap();
    // USPS-shaped file: 256 features, 10 classes
    let n = 300;
    let x = Array2::from_shape_fn((n, 256), |(i, j)| ((i * 31 + j * 7) % 97) as f64 / 97.0);
    let ds = Dataset::new(x, (0..n).map(|i| i % 10).collect(), "usps").unwrap();
    let path = dir.path().join("usps.csv");
    write_csv(&ds, &path).unwrap();
    let res = dsffs(&["inspect", "--dataset", &format!("csv:{}", path.display())]);
    assert!(res.status.success());
    let text = String::from_utf8_lossy(&res.stdout);
    assert!(text.contains("D: 256") && text.contains("C: 10") && text.contains("N: 300"));

    let res = dsffs(&[
        "inspect",
        "--dataset",
        "synthetic,n_informative=7,n_noise=13,n_samples=400",
        "--partition",
        "4,0.5,3",
    ]);
    assert!(res.status.success());
    let text = String::from_utf8_lossy(&res.stdout);
    assert!(text.contains("D: 20"));
    let train: usize = text
        .lines()
        .find_map(|l| l.strip_prefix("train: "))
        .unwrap()
        .parse()
        .unwrap();
    let shard_total: usize = text
        .lines()
        .filter_map(|l| l.strip_prefix("shard "))
        .map(|l| l.split_whitespace().nth(1).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(shard_total, train);
}

#[test]
fn figure1_writes_three_curves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "fig.toml", TINY);
    let out = dir.path().join("fig");
    let res = dsffs(&["figure1", "--config", &cfg, "--out", &out.to_string_lossy()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.join("figure1.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "round,original,noisy,dsffs");
    assert_eq!(lines.len(), 3);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("recovery.json")).unwrap()).unwrap();
    let set = |key: &str| -> BTreeSet<u64> {
        report[key]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_u64().unwrap())
            .collect()
    };
    let (informative, selected) = (set("informative"), set("selected"));
    let hits = informative.intersection(&selected).count();
    assert_eq!(report["hits"].as_u64().unwrap() as usize, hits);
    let recovery = report["recovery"].as_f64().unwrap();
    assert_eq!(recovery, hits as f64 / informative.len() as f64);
}
