use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use super::{Dataset, NormalizeMode, Normalizer};
use crate::error::{DsffsError, Result};

/// Class-stratified train/test split. Returns sorted `(train, test)` indices.
pub fn stratified_split(
    labels: &[usize],
    n_classes: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(DsffsError::config(format!(
            "test fraction must lie in [0, 1), got {test_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        let n_test = (idx.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Dirichlet label-skew partition of `train` over `clients` shards.
///
/// For each class a proportion vector is drawn from `Dirichlet(alpha)` and
/// the (shuffled) samples of that class are cut accordingly. Empty shards
/// are repaired by moving one sample from the largest shard.
pub fn partition_noniid(
    labels: &[usize],
    train: &[usize],
    clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if clients < 2 {
        return Err(DsffsError::config(format!("need at least 2 clients, got {clients}")));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(DsffsError::config(format!(
            "Dirichlet alpha must be positive, got {alpha}"
        )));
    }
    if clients > train.len() {
        return Err(DsffsError::config(format!(
            "{clients} clients but only {} training samples",
            train.len()
        )));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| DsffsError::config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_classes = train.iter().map(|&i| labels[i] + 1).max().unwrap_or(0);
    let mut shards = vec![Vec::new(); clients];
    for c in 0..n_classes {
        let mut idx: Vec<usize> = train.iter().copied().filter(|&i| labels[i] == c).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let draws: Vec<f64> = (0..clients).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        let props: Vec<f64> = if total > 0.0 {
            draws.iter().map(|g| g / total).collect()
        } else {
            vec![1.0 / clients as f64; clients]
        };
        let n = idx.len();
        let mut start = 0;
        let mut cum = 0.0;
        for (m, p) in props.iter().enumerate() {
            cum += p;
            let end = if m + 1 == clients {
                n
            } else {
                ((cum * n as f64).round() as usize).clamp(start, n)
            };
            shards[m].extend_from_slice(&idx[start..end]);
            start = end;
        }
    }
    while let Some(empty) = shards.iter().position(Vec::is_empty) {
        let largest = (0..clients)
            .max_by(|&a, &b| shards[a].len().cmp(&shards[b].len()).then(b.cmp(&a)))
            .unwrap();
        let moved = shards[largest].pop().unwrap();
        shards[empty].push(moved);
    }
    for s in &mut shards {
        s.sort_unstable();
    }
    Ok(shards)
}

/// A dataset with its client shards and held-out test rows.
#[derive(Clone, Debug)]
pub struct PartitionedDataset {
    pub dataset: Dataset,
    pub shards: Vec<Vec<usize>>,
    pub test: Vec<usize>,
}

impl PartitionedDataset {
    /// Partitions `train` across `clients` with Dirichlet label skew.
    pub fn new(
        dataset: Dataset,
        train: &[usize],
        test: Vec<usize>,
        clients: usize,
        alpha: f64,
        seed: u64,
    ) -> Result<Self> {
        let shards = partition_noniid(&dataset.labels, train, clients, alpha, seed)?;
        Self::from_parts(dataset, shards, test)
    }

    /// Validates disjointness, coverage bounds, and non-empty shards.
    pub fn from_parts(dataset: Dataset, shards: Vec<Vec<usize>>, test: Vec<usize>) -> Result<Self> {
        let n = dataset.n_samples();
        let mut seen = vec![false; n];
        for (m, shard) in shards.iter().enumerate() {
            if shard.is_empty() {
                return Err(DsffsError::config(format!("client {m} has an empty shard")));
            }
            for &i in shard {
                if i >= n || seen[i] {
                    return Err(DsffsError::config(format!(
                        "shard {m}: index {i} out of range or assigned twice"
                    )));
                }
                seen[i] = true;
            }
        }
        for &i in &test {
            if i >= n || seen[i] {
                return Err(DsffsError::config(format!(
                    "test index {i} overlaps a shard or is out of range"
                )));
            }
            seen[i] = true;
        }
        if test.is_empty() {
            return Err(DsffsError::config("test split is empty"));
        }
        Ok(Self { dataset, shards, test })
    }

    pub fn n_clients(&self) -> usize {
        self.shards.len()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.shards.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    }

    pub fn n_train(&self) -> usize {
        self.shards.iter().map(Vec::len).sum()
    }

    pub fn shard(&self, m: usize) -> (Array2<f64>, Vec<usize>) {
        self.dataset.rows(&self.shards[m])
    }

    pub fn test_data(&self) -> (Array2<f64>, Vec<usize>) {
        self.dataset.rows(&self.test)
    }

    /// Fits the normalizer on the training rows and applies it everywhere.
    pub fn normalize(&mut self, mode: NormalizeMode) {
        let train = self.train_indices();
        let norm = Normalizer::fit(&self.dataset.features, Some(&train), mode);
        norm.apply(&mut self.dataset.features);
    }

    /// Same partition restricted to a subset of columns.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        Ok(Self {
            dataset: self.dataset.select_columns(columns)?,
            shards: self.shards.clone(),
            test: self.test.clone(),
        })
    }
}
