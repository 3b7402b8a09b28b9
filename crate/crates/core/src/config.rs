//! Flat TOML experiment configuration.
//!
//! Every key is optional; unset keys take the defaults below. Unknown keys
//! are rejected. Relative paths are resolved against the config file's
//! directory.
//!
//! ```toml
//! dataset = "synthetic"
//! n_noise = 480
//! clients = 4
//! rounds = 60
//! k = 30
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    generate_synthetic, load_dataset, load_dataset_pair, stratified_split, DataSource, Dataset, NormalizeMode,
    PartitionedDataset, SyntheticSpec,
};
use crate::error::{DsffsError, Result};
use crate::fed_core::{FedConfig, SelectionConfig};
use crate::sparse_net::Activation;

/// Environment variable that overrides `seed`.
pub const SEED_ENV: &str = "DSFFS_SEED";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    #[default]
    Synthetic,
    Csv,
    Idx,
    Libsvm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    /// CSV or libsvm file, or the IDX image file.
    pub path: Option<PathBuf>,
    /// IDX label file.
    pub labels_path: Option<PathBuf>,
    /// Canonical test file; without it a stratified split is drawn.
    pub test_path: Option<PathBuf>,
    pub test_labels_path: Option<PathBuf>,
    pub label_column: Option<String>,
    pub libsvm_dim: Option<usize>,
    pub test_fraction: f64,
    pub normalize: NormalizeMode,

    pub n_informative: usize,
    pub n_noise: usize,
    pub n_samples: usize,
    pub n_classes: usize,
    /// Class-mean offset of informative columns, in noise standard deviations.
    pub separation: f64,

    pub clients: usize,
    /// Defaults to `clients`.
    pub clients_per_round: Option<usize>,
    /// Dirichlet concentration of the label skew.
    pub alpha: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub sparsity: f64,
    pub feature_selection: bool,
    pub k: usize,
    pub beta: f64,
    pub zeta: f64,
    pub rounds: usize,
    pub local_epochs: usize,
    pub mu: f64,
    pub adjust_interval: usize,
    pub adjust_rate: f64,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Parallel client trainings; defaults to the number of participants.
    pub workers: Option<usize>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let fed = FedConfig::default();
        let synth = SyntheticSpec::default();
        let sel = fed.selection.clone().unwrap_or(SelectionConfig { k: 150, beta: 0.65 });
        Self {
            dataset: DatasetKind::Synthetic,
            path: None,
            labels_path: None,
            test_path: None,
            test_labels_path: None,
            label_column: None,
            libsvm_dim: None,
            test_fraction: 0.2,
            normalize: NormalizeMode::Minmax,
            n_informative: synth.n_informative,
            n_noise: synth.n_noise,
            n_samples: synth.n_samples,
            n_classes: synth.n_classes,
            separation: synth.separation,
            clients: fed.clients,
            clients_per_round: None,
            alpha: 0.5,
            hidden: fed.hidden,
            activation: fed.activation,
            sparsity: fed.sparsity,
            feature_selection: true,
            k: sel.k,
            beta: sel.beta,
            zeta: fed.zeta,
            rounds: fed.rounds,
            local_epochs: fed.local_epochs,
            mu: fed.mu,
            adjust_interval: fed.adjust_interval,
            adjust_rate: fed.adjust_rate,
            lr: fed.lr,
            momentum: fed.momentum,
            batch_size: fed.batch_size,
            seed: fed.seed,
            workers: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| DsffsError::config(e.message().to_string()))
    }

    /// Reads a config file, resolves relative paths, and applies the seed
    /// override from the environment.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DsffsError::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.path,
            &mut cfg.labels_path,
            &mut cfg.test_path,
            &mut cfg.test_labels_path,
        ] {
            rebase(base, p);
        }
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| DsffsError::config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}")))?;
        }
        Ok(())
    }

    /// The configuration with every default filled in, as TOML.
    pub fn resolved(&self) -> String {
        let mut cfg = self.clone();
        cfg.clients_per_round = Some(self.clients_per_round.unwrap_or(self.clients));
        toml::to_string(&cfg).expect("config serializes")
    }

    pub fn fed_config(&self) -> FedConfig {
        FedConfig {
            clients: self.clients,
            clients_per_round: self.clients_per_round.unwrap_or(self.clients),
            local_epochs: self.local_epochs,
            rounds: self.rounds,
            hidden: self.hidden.clone(),
            sparsity: self.sparsity,
            zeta: self.zeta,
            selection: self.feature_selection.then_some(SelectionConfig {
                k: self.k,
                beta: self.beta,
            }),
            mu: self.mu,
            adjust_interval: self.adjust_interval,
            adjust_rate: self.adjust_rate,
            lr: self.lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
            seed: self.seed,
            activation: self.activation,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_informative: self.n_informative,
            n_noise: self.n_noise,
            n_samples: self.n_samples,
            n_classes: self.n_classes,
            separation: self.separation,
            seed: self.seed,
        }
    }

    fn require(&self, p: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        p.clone()
            .ok_or_else(|| DsffsError::config(format!("dataset {:?} needs `{key}`", self.dataset)))
    }

    fn source(&self, test: bool) -> Result<DataSource> {
        let (path, labels, key, labels_key) = if test {
            (&self.test_path, &self.test_labels_path, "test_path", "test_labels_path")
        } else {
            (&self.path, &self.labels_path, "path", "labels_path")
        };
        Ok(match self.dataset {
            DatasetKind::Csv => DataSource::Csv {
                path: self.require(path, key)?,
                label_column: self.label_column.clone(),
            },
            DatasetKind::Libsvm => DataSource::Libsvm {
                path: self.require(path, key)?,
                dim: self.libsvm_dim,
            },
            DatasetKind::Idx => DataSource::Idx {
                images: self.require(path, key)?,
                labels: self.require(labels, labels_key)?,
            },
            DatasetKind::Synthetic => unreachable!("synthetic data has no source file"),
        })
    }

    /// Loads the dataset with a train/test split: `(dataset, train, test)`.
    pub fn load_split(&self) -> Result<(Dataset, Vec<usize>, Vec<usize>)> {
        if self.dataset == DatasetKind::Synthetic {
            let ds = generate_synthetic(&self.synthetic_spec())?;
            let (train, test) =
                stratified_split(&ds.labels, ds.n_classes, self.test_fraction, self.seed.wrapping_add(1))?;
            return Ok((ds, train, test));
        }
        if self.test_path.is_some() {
            let (train, test) = load_dataset_pair(&self.source(false)?, &self.source(true)?)?;
            let n_train = train.n_samples();
            let ds = train.concat(&test)?;
            let test_idx = (n_train..ds.n_samples()).collect();
            return Ok((ds, (0..n_train).collect(), test_idx));
        }
        let ds = load_dataset(&self.source(false)?)?;
        let (train, test) = stratified_split(&ds.labels, ds.n_classes, self.test_fraction, self.seed.wrapping_add(1))?;
        Ok((ds, train, test))
    }

    /// Loads, splits, partitions over the clients, and normalizes.
    pub fn load_data(&self) -> Result<PartitionedDataset> {
        if self.clients < 2 {
            return Err(DsffsError::config(format!(
                "M must be at least 2 (clients = {}); a single client is centralized feature selection",
                self.clients
            )));
        }
        let (ds, train, test) = self.load_split()?;
        let mut data = PartitionedDataset::new(ds, &train, test, self.clients, self.alpha, self.seed.wrapping_add(2))?;
        data.normalize(self.normalize);
        Ok(data)
    }
}

/// Parses `kind[:path][,key=value...]`, e.g. `csv:usps.csv,label_column=y`
/// or `synthetic,n_noise=100`. Keys are config keys.
pub fn parse_dataset_spec(spec: &str) -> Result<ExperimentConfig> {
    let mut parts = spec.split(',');
    let head = parts.next().unwrap_or_default();
    let (kind, path) = match head.split_once(':') {
        Some((k, p)) => (k, Some(p)),
        None => (head, None),
    };
    let mut table = toml::Table::new();
    table.insert("dataset".into(), toml::Value::String(kind.trim().to_lowercase()));
    if let Some(p) = path.filter(|p| !p.is_empty()) {
        table.insert("path".into(), toml::Value::String(p.into()));
    }
    for pair in parts {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| DsffsError::config(format!("expected key=value in dataset spec, got {pair:?}")))?;
        let value = value.trim();
        let v = if let Ok(i) = value.parse::<i64>() {
            toml::Value::Integer(i)
        } else if let Ok(f) = value.parse::<f64>() {
            toml::Value::Float(f)
        } else if let Ok(b) = value.parse::<bool>() {
            toml::Value::Boolean(b)
        } else {
            toml::Value::String(value.into())
        };
        table.insert(key.trim().into(), v);
    }
    let mut cfg: ExperimentConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| DsffsError::config(e.message().to_string()))?;
    cfg.apply_env()?;
    Ok(cfg)
}
