//! Subcommand bodies behind the `dsffs` binary.
//!
//! Each command returns a [`Result`]; the binary maps configuration errors to
//! exit code 2 and everything else to 3.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{parse_dataset_spec, DatasetKind, ExperimentConfig};
use crate::data::{partition_noniid, PartitionedDataset};
use crate::error::{DsffsError, Result};
use crate::fed_core::{run_training_with_workers, SelectionConfig, TrainingOutcome};
use crate::input_selector::FeatureSelection;
use crate::metrics::RoundMetrics;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Exit code for a failed command.
pub fn exit_code(err: &DsffsError) -> i32 {
    if err.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

pub const METRICS_HEADER: [&str; 6] = [
    "round",
    "accuracy",
    "cumulative_flops",
    "cumulative_upload_bits",
    "connected_input_neurons",
    "global_nnz",
];

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| DsffsError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| DsffsError::io(dir, e))
}

/// Writes `metrics.csv`, one row per round.
pub fn write_metrics(path: &Path, metrics: &[RoundMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for m in metrics {
        w.write_record([
            m.round.to_string(),
            m.test_accuracy.to_string(),
            m.cumulative_flops.to_string(),
            m.cumulative_upload_bits.to_string(),
            m.connected_input_neurons.to_string(),
            m.global_nnz.to_string(),
        ])?;
    }
    w.flush().map_err(|e| DsffsError::io(path, e))
}

#[derive(Serialize)]
struct Manifest<'a> {
    seed: u64,
    k: Option<usize>,
    complete: Option<bool>,
    features: Option<&'a [crate::input_selector::SelectedFeature]>,
    config: serde_json::Value,
}

/// Config as JSON without execution-only keys, so the manifest depends on
/// nothing but the experiment itself.
fn manifest_config(cfg: &ExperimentConfig) -> serde_json::Value {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    if let Some(obj) = v.as_object_mut() {
        obj.remove("workers");
        obj.remove("out_dir");
        obj.insert(
            "clients_per_round".into(),
            cfg.clients_per_round.unwrap_or(cfg.clients).into(),
        );
    }
    v
}

pub fn manifest_json(cfg: &ExperimentConfig, selection: Option<&FeatureSelection>) -> String {
    let manifest = Manifest {
        seed: cfg.seed,
        k: cfg.feature_selection.then_some(cfg.k),
        complete: selection.map(|s| s.complete),
        features: selection.map(|s| s.features.as_slice()),
        config: manifest_config(cfg),
    };
    let mut s = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    s.push('\n');
    s
}

/// Trains per `cfg` and writes `metrics.csv`, `selected_features.json`, and
/// `config.resolved` into `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<TrainingOutcome> {
    let data = cfg.load_data()?;
    let outcome = run_training_with_workers(&cfg.fed_config(), &data, cfg.workers)?;
    create_dir(&cfg.out_dir)?;
    write_metrics(&cfg.out_dir.join("metrics.csv"), &outcome.metrics)?;
    write_file(
        &cfg.out_dir.join("selected_features.json"),
        &manifest_json(cfg, outcome.selection.as_ref()),
    )?;
    write_file(&cfg.out_dir.join("config.resolved"), &cfg.resolved())?;
    Ok(outcome)
}

/// `dsffs run`.
pub fn cmd_run(config: &Path, workers: Option<usize>, out: Option<PathBuf>) -> Result<TrainingOutcome> {
    let mut cfg = ExperimentConfig::from_path(config)?;
    if workers.is_some() {
        cfg.workers = workers;
    }
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    run_experiment(&cfg)
}

/// Three accuracy curves on the synthetic noisy-feature task plus how many
/// true informative features the selection found.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Figure1Report {
    /// Informative columns only, no selection.
    pub original: Vec<f64>,
    /// All columns, no selection.
    pub noisy: Vec<f64>,
    /// All columns with feature selection.
    pub dsffs: Vec<f64>,
    pub informative: Vec<usize>,
    pub selected: Vec<usize>,
    pub hits: usize,
    pub recovery: f64,
}

impl Figure1Report {
    pub fn final_accuracies(&self) -> (f64, f64, f64) {
        let last = |v: &[f64]| v.last().copied().unwrap_or(0.0);
        (last(&self.original), last(&self.noisy), last(&self.dsffs))
    }
}

fn curve(outcome: &TrainingOutcome) -> Vec<f64> {
    outcome.metrics.iter().map(|m| m.test_accuracy).collect()
}

/// Runs the three trainings behind [`cmd_figure1`] without writing files.
pub fn figure1(cfg: &ExperimentConfig) -> Result<Figure1Report> {
    if cfg.dataset != DatasetKind::Synthetic {
        return Err(DsffsError::config("figure1 needs dataset = \"synthetic\""));
    }
    let data: PartitionedDataset = cfg.load_data()?;
    let informative = data
        .dataset
        .informative
        .clone()
        .ok_or_else(|| DsffsError::invalid("synthetic data lacks informative columns"))?;

    let plain = crate::fed_core::FedConfig {
        selection: None,
        ..cfg.fed_config()
    };
    let original = run_training_with_workers(&plain, &data.select_columns(&informative)?, cfg.workers)?;
    let noisy = run_training_with_workers(&plain, &data, cfg.workers)?;
    let with_fs = crate::fed_core::FedConfig {
        selection: Some(SelectionConfig {
            k: cfg.k,
            beta: cfg.beta,
        }),
        ..cfg.fed_config()
    };
    let dsffs = run_training_with_workers(&with_fs, &data, cfg.workers)?;

    let selected = dsffs
        .selection
        .as_ref()
        .map(FeatureSelection::indices)
        .unwrap_or_default();
    let truth: BTreeSet<usize> = informative.iter().copied().collect();
    let hits = selected.iter().filter(|i| truth.contains(i)).count();
    Ok(Figure1Report {
        original: curve(&original),
        noisy: curve(&noisy),
        dsffs: curve(&dsffs),
        recovery: hits as f64 / informative.len() as f64,
        informative,
        selected,
        hits,
    })
}

/// `dsffs figure1`: writes `figure1.csv` (round, original, noisy, dsffs)
/// and `recovery.json`.
pub fn cmd_figure1(config: &Path, out: Option<PathBuf>) -> Result<Figure1Report> {
    let mut cfg = ExperimentConfig::from_path(config)?;
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    let report = figure1(&cfg)?;
    create_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join("figure1.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["round", "original", "noisy", "dsffs"])?;
    for r in 0..report.original.len() {
        w.write_record([
            (r + 1).to_string(),
            report.original[r].to_string(),
            report.noisy[r].to_string(),
            report.dsffs[r].to_string(),
        ])?;
    }
    w.flush().map_err(|e| DsffsError::io(&path, e))?;
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    write_file(&cfg.out_dir.join("recovery.json"), &json)?;
    Ok(report)
}

/// `M,alpha,seed`.
pub fn parse_partition(s: &str) -> Result<(usize, f64, u64)> {
    let bad = || DsffsError::config(format!("--partition expects M,alpha,seed, got {s:?}"));
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    Ok((
        parts[0].parse().map_err(|_| bad())?,
        parts[1].parse().map_err(|_| bad())?,
        parts[2].parse().map_err(|_| bad())?,
    ))
}

/// `dsffs inspect`: dataset summary, optionally with a client partition.
pub fn cmd_inspect(spec: &str, partition: Option<(usize, f64, u64)>) -> Result<String> {
    let cfg = parse_dataset_spec(spec)?;
    let (ds, train, test) = cfg.load_split()?;
    let mut out = String::new();
    writeln!(out, "dataset: {}", ds.name).unwrap();
    writeln!(out, "N: {}", ds.n_samples()).unwrap();
    writeln!(out, "D: {}", ds.n_features()).unwrap();
    writeln!(out, "C: {}", ds.n_classes).unwrap();
    writeln!(out, "classes: {:?}", ds.class_histogram()).unwrap();
    writeln!(out, "train: {}", train.len()).unwrap();
    writeln!(out, "test: {}", test.len()).unwrap();
    if let Some((m, alpha, seed)) = partition {
        if m < 2 {
            return Err(DsffsError::config(format!("M must be at least 2, got {m}")));
        }
        let shards = partition_noniid(&ds.labels, &train, m, alpha, seed)?;
        for (i, shard) in shards.iter().enumerate() {
            writeln!(out, "shard {i}: {} {:?}", shard.len(), ds.class_histogram_of(shard)).unwrap();
        }
    }
    Ok(out)
}
