//! Datasets, file formats, normalization, and federated partitioning.

mod loaders;
mod normalize;
mod partition;
mod synthetic;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{DsffsError, Result};

pub use loaders::{
    load_dataset, load_dataset_pair, read_csv, read_idx, read_libsvm, write_csv, write_idx, write_libsvm, DataSource,
};
pub use normalize::{normalize, NormalizeMode, Normalizer};
pub use partition::{partition_noniid, stratified_split, PartitionedDataset};
pub use synthetic::{generate_synthetic, SyntheticSpec};

/// A labelled, row-major feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    /// Class ids, dense in `0..n_classes`.
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub feature_names: Option<Vec<String>>,
    pub name: String,
    /// Ground-truth informative columns, when known (synthetic data).
    pub informative: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, name: impl Into<String>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(DsffsError::shape(format!(
                "{} rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(DsffsError::invalid("features contain NaN or infinite values"));
        }
        let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
        Ok(Self {
            features,
            labels,
            n_classes,
            feature_names: None,
            name: name.into(),
            informative: None,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        histogram(self.labels.iter().copied(), self.n_classes)
    }

    /// Histogram of labels over a subset of rows.
    pub fn class_histogram_of(&self, rows: &[usize]) -> Vec<usize> {
        histogram(rows.iter().map(|&r| self.labels[r]), self.n_classes)
    }

    /// Copies the given rows (in order).
    pub fn rows(&self, rows: &[usize]) -> (Array2<f64>, Vec<usize>) {
        let x = self.features.select(Axis(0), rows);
        let y = rows.iter().map(|&r| self.labels[r]).collect();
        (x, y)
    }

    /// Keeps only the given columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.n_features()) {
            return Err(DsffsError::invalid(format!(
                "column {bad} out of range for {} features",
                self.n_features()
            )));
        }
        let informative = self.informative.as_ref().map(|inf| {
            columns
                .iter()
                .enumerate()
                .filter(|(_, c)| inf.contains(c))
                .map(|(k, _)| k)
                .collect()
        });
        Ok(Dataset {
            features: self.features.select(Axis(1), columns),
            labels: self.labels.clone(),
            n_classes: self.n_classes,
            feature_names: self
                .feature_names
                .as_ref()
                .map(|names| columns.iter().map(|&c| names[c].clone()).collect()),
            name: self.name.clone(),
            informative,
        })
    }

    /// Stacks two datasets with the same columns (e.g. canonical train/test files).
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.n_features() != other.n_features() {
            return Err(DsffsError::shape(format!(
                "cannot stack {} and {} features",
                self.n_features(),
                other.n_features()
            )));
        }
        let features = ndarray::concatenate(Axis(0), &[self.features.view(), other.features.view()])
            .map_err(|e| DsffsError::shape(e.to_string()))?;
        let mut labels = self.labels.clone();
        labels.extend(&other.labels);
        Ok(Dataset {
            features,
            labels,
            n_classes: self.n_classes.max(other.n_classes),
            feature_names: self.feature_names.clone(),
            name: self.name.clone(),
            informative: self.informative.clone(),
        })
    }
}

fn histogram(labels: impl Iterator<Item = usize>, n_classes: usize) -> Vec<usize> {
    let mut h = vec![0; n_classes];
    for y in labels {
        h[y] += 1;
    }
    h
}

/// Supported on-disk formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Idx,
    Libsvm,
}
