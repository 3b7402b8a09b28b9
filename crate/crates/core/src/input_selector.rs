//! Input-layer feature selection.
//!
//! An input unit's *strength* is the L1 norm of its active outgoing weights.
//! Over the first `r_remove = ceil(beta * r_max)` rounds the schedule
//! disconnects a total of `T = ceil((1 - zeta) * D - K)` input units, pruning
//! the weakest ones and reconnecting a decaying number of disconnected units
//! by gradient magnitude. After `r_remove` pruning and regrowth are balanced.
//! When training ends the `K` strongest connected inputs are the selected
//! features.

use std::collections::HashSet;

use log::warn;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dst_update::{largest_inactive, smallest_active, KeepOne, TopologyDelta};
use crate::error::{DsffsError, Result};
use crate::sparse_net::{SparseLayer, SparseNetwork};

// Products like 0.65 * 400 land a few ulps above the integer; without the
// tolerance their ceiling overshoots by one.
fn ceil_tol(x: f64) -> usize {
    let eps = 1e-9 * x.abs().max(1.0);
    (x - eps).ceil().max(0.0) as usize
}

/// Neuron counts for one round (or one epoch) of input-layer updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleStep {
    pub round: usize,
    /// Input units to prune by strength (`n_p`).
    pub n_prune: usize,
    /// Net removals this round (`n_remove`).
    pub n_remove: usize,
    /// Disconnected units to reconnect (`n_g`).
    pub n_regrow: usize,
}

impl ScheduleStep {
    /// Balanced churn with the same regrowth count and no net removal.
    pub fn steady(&self) -> ScheduleStep {
        ScheduleStep {
            round: self.round,
            n_prune: self.n_regrow,
            n_remove: 0,
            n_regrow: self.n_regrow,
        }
    }
}

/// Cumulative neuron-removal state driving the prune/regrow counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSchedule {
    dim: usize,
    k: usize,
    zeta: f64,
    beta: f64,
    r_max: usize,
    r_remove: usize,
    total: usize,
    removed: usize,
    history: Vec<usize>,
}

impl InputSchedule {
    pub fn new(dim: usize, k: usize, zeta: f64, beta: f64, r_max: usize) -> Result<Self> {
        if k == 0 || k > dim {
            return Err(DsffsError::config(format!(
                "number of selected features must lie in 1..={dim}, got {k}"
            )));
        }
        if !(0.0..1.0).contains(&zeta) {
            return Err(DsffsError::config(format!("zeta must lie in [0, 1), got {zeta}")));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(DsffsError::config(format!("beta must lie in (0, 1), got {beta}")));
        }
        if r_max == 0 {
            return Err(DsffsError::config("at least one round is required"));
        }
        let r_remove = ceil_tol(beta * r_max as f64).max(1);
        let budget = (1.0 - zeta) * dim as f64 - k as f64;
        let total = if budget <= 0.0 {
            0
        } else {
            ceil_tol(budget).min(dim - k)
        };
        Ok(Self {
            dim,
            k,
            zeta,
            beta,
            r_max,
            r_remove,
            total,
            removed: 0,
            history: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn r_max(&self) -> usize {
        self.r_max
    }

    /// Last round with net removal.
    pub fn r_remove(&self) -> usize {
        self.r_remove
    }

    /// Total removal budget `T`.
    pub fn total(&self) -> usize {
        self.total
    }

    /// Units disconnected so far (`T^r` for the next uncommitted round).
    pub fn removed(&self) -> usize {
        self.removed
    }

    /// Input units that remain connected.
    pub fn connected(&self) -> usize {
        self.dim - self.removed
    }

    /// Committed `n_remove` values, one per round.
    pub fn history(&self) -> &[usize] {
        &self.history
    }

    /// Counts for round `r` (1-based) given the rounds committed so far.
    pub fn compute_schedule(&self, r: usize) -> Result<ScheduleStep> {
        if r == 0 || r > self.r_max {
            return Err(DsffsError::invalid(format!("round {r} outside 1..={}", self.r_max)));
        }
        if self.history.len() != r - 1 {
            return Err(DsffsError::invalid(format!(
                "round {r} requested but {} rounds committed",
                self.history.len()
            )));
        }
        let t_r = self.removed;
        let left = self.total - t_r;
        let n_remove = if r < self.r_remove {
            left.div_ceil(self.r_remove - r)
        } else if r == self.r_remove {
            left
        } else {
            0
        };
        // never let the connected count fall below K
        let n_remove = n_remove.min(self.dim - t_r - self.k);
        let decay = 1.0 - r as f64 / self.r_max as f64;
        let n_regrow = ceil_tol(self.zeta * decay * t_r as f64)
            .min(t_r)
            .min(self.dim - t_r - n_remove - self.k);
        Ok(ScheduleStep {
            round: r,
            n_prune: n_remove + n_regrow,
            n_remove,
            n_regrow,
        })
    }

    /// Records a computed step, advancing `T^r`.
    pub fn commit(&mut self, step: &ScheduleStep) -> Result<()> {
        if step.round != self.history.len() + 1 {
            return Err(DsffsError::invalid(format!(
                "committing round {} after {} rounds",
                step.round,
                self.history.len()
            )));
        }
        self.removed += step.n_remove;
        self.history.push(step.n_remove);
        Ok(())
    }

    /// `compute_schedule` followed by `commit`.
    pub fn advance(&mut self) -> Result<ScheduleStep> {
        let step = self.compute_schedule(self.history.len() + 1)?;
        self.commit(&step)?;
        Ok(step)
    }
}

/// L1 norm of the active weights leaving input unit `i`.
pub fn neuron_strength(layer: &SparseLayer, i: usize) -> f64 {
    layer
        .weights()
        .row(i)
        .iter()
        .zip(layer.mask().row(i))
        .filter(|(_, &on)| on)
        .map(|(w, _)| w.abs())
        .sum()
}

pub fn neuron_strengths(layer: &SparseLayer) -> Vec<f64> {
    (0..layer.rows()).map(|i| neuron_strength(layer, i)).collect()
}

/// Connectivity and strength of every input unit.
#[derive(Clone, Debug, PartialEq)]
pub struct InputLayerState {
    pub connected: Vec<bool>,
    pub strengths: Vec<f64>,
    /// Disconnected units counted against the removal budget. After every
    /// paired prune/regrow this is exactly the set of disconnected units.
    pub removed: Vec<bool>,
}

impl InputLayerState {
    pub fn from_layer(layer: &SparseLayer) -> Self {
        let connected: Vec<bool> = (0..layer.rows()).map(|i| layer.row_nnz(i) > 0).collect();
        let removed = connected.iter().map(|c| !c).collect();
        Self {
            connected,
            strengths: neuron_strengths(layer),
            removed,
        }
    }

    pub fn refresh(&mut self, layer: &SparseLayer) {
        *self = Self::from_layer(layer);
    }

    pub fn connected_count(&self) -> usize {
        self.connected.iter().filter(|&&c| c).count()
    }

    pub fn removed_count(&self) -> usize {
        self.removed.iter().filter(|&&r| r).count()
    }
}

/// Prunes the `n_prune` weakest connected input units, then a `zeta`
/// fraction of the remaining input connections by magnitude.
///
/// The connection phase never disconnects a unit entirely.
pub fn prune_input(
    net: &mut SparseNetwork,
    state: &mut InputLayerState,
    step: &ScheduleStep,
    zeta: f64,
) -> Result<TopologyDelta> {
    if !(0.0..1.0).contains(&zeta) {
        return Err(DsffsError::invalid(format!("zeta must lie in [0, 1), got {zeta}")));
    }
    state.refresh(net.layer(0));
    let mut candidates: Vec<usize> = (0..state.connected.len())
        .filter(|&i| state.connected[i] && !state.removed[i])
        .collect();
    candidates.sort_by(|&a, &b| state.strengths[a].total_cmp(&state.strengths[b]).then(a.cmp(&b)));
    if candidates.len() < step.n_prune {
        warn!(
            "round {}: only {} prunable input units for n_prune = {}",
            step.round,
            candidates.len(),
            step.n_prune
        );
    }
    let mut delta = TopologyDelta::default();
    let layer = net.layer_mut(0);
    for &i in candidates.iter().take(step.n_prune) {
        for j in 0..layer.cols() {
            if layer.deactivate(i, j) {
                delta.pruned.push((0, i, j));
            }
        }
        delta.pruned_neurons.push(i);
    }

    // Cap the connection prune so the regrowth that follows can refill every
    // slot without reusing a position pruned in this same update.
    let cols = layer.cols();
    let reconnect = step.n_regrow.min(state.connected.iter().filter(|&&c| !c).count());
    let free: usize = (0..layer.rows())
        .map(|i| layer.row_nnz(i))
        .filter(|&n| n > 0)
        .map(|n| cols - n)
        .sum();
    let room = (free + reconnect * cols).saturating_sub(delta.pruned.len());
    let count = ((zeta * layer.nnz() as f64).floor() as usize).min(room);
    for (i, j) in smallest_active(layer, count, KeepOne::Row) {
        layer.deactivate(i, j);
        delta.pruned.push((0, i, j));
    }
    state.refresh(net.layer(0));
    Ok(delta)
}

/// Reconnects `n_regrow` disconnected input units, then restores the input
/// layer's connection count.
///
/// Units pruned in this same update are not eligible. A reconnected unit
/// receives its single best connection by |gradient|; the remaining
/// connections go to the largest-|gradient| inactive positions of connected
/// units. All regrown weights start at zero.
pub fn regrow_input(
    net: &mut SparseNetwork,
    state: &mut InputLayerState,
    step: &ScheduleStep,
    dense_grads: &Array2<f64>,
    mut delta: TopologyDelta,
) -> Result<TopologyDelta> {
    if dense_grads.dim() != net.layer(0).weights().dim() {
        return Err(DsffsError::shape("input-layer gradient shape mismatch"));
    }
    let target = net.layer(0).nnz() + delta.pruned_in(0) - delta.regrown_in(0);
    state.refresh(net.layer(0));
    let pruned_now: HashSet<usize> = delta.pruned_neurons.iter().copied().collect();

    let cols = net.layer(0).cols();
    let mut candidates: Vec<(usize, usize, f64)> = (0..state.connected.len())
        .filter(|&i| !state.connected[i] && !pruned_now.contains(&i))
        .map(|i| {
            let row = dense_grads.row(i);
            let mut best = (0, row[0].abs());
            for j in 1..cols {
                if row[j].abs() > best.1 {
                    best = (j, row[j].abs());
                }
            }
            (i, best.0, best.1)
        })
        .collect();
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    if candidates.len() < step.n_regrow {
        warn!(
            "round {}: only {} disconnected input units for n_regrow = {}",
            step.round,
            candidates.len(),
            step.n_regrow
        );
    }
    {
        let layer = net.layer_mut(0);
        for &(i, j, _) in candidates.iter().take(step.n_regrow) {
            layer.activate(i, j);
            delta.regrown.push((0, i, j));
            delta.regrown_neurons.push(i);
        }
    }

    let need = target.saturating_sub(net.layer(0).nnz());
    let rows: Vec<bool> = (0..net.input_dim()).map(|i| net.layer(0).row_nnz(i) > 0).collect();
    let mut exclude = delta.pruned_set(0);
    let mut chosen = largest_inactive(net.layer(0), dense_grads, need, &exclude, Some(&rows));
    if chosen.len() < need {
        // fall back to positions pruned by magnitude in this same update
        exclude = chosen.iter().copied().collect();
        let extra = largest_inactive(net.layer(0), dense_grads, need - chosen.len(), &exclude, Some(&rows));
        chosen.extend(extra);
        if chosen.len() < need {
            warn!(
                "round {}: input layer can hold only {} of {need} regrown connections",
                step.round,
                chosen.len()
            );
        }
    }
    let layer = net.layer_mut(0);
    for (i, j) in chosen {
        layer.activate(i, j);
        delta.regrown.push((0, i, j));
    }
    state.refresh(net.layer(0));
    Ok(delta)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedFeature {
    pub index: usize,
    pub strength: f64,
}

/// Outcome of the final top-K selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelection {
    /// Strongest first.
    pub features: Vec<SelectedFeature>,
    /// False when fewer than K inputs were connected.
    pub complete: bool,
}

impl FeatureSelection {
    pub fn indices(&self) -> Vec<usize> {
        self.features.iter().map(|f| f.index).collect()
    }
}

/// The `k` connected inputs of highest strength, descending; ties by index.
pub fn select_features(net: &SparseNetwork, k: usize) -> FeatureSelection {
    let layer = net.layer(0);
    let strengths = neuron_strengths(layer);
    let mut connected: Vec<usize> = (0..layer.rows()).filter(|&i| layer.row_nnz(i) > 0).collect();
    connected.sort_by(|&a, &b| strengths[b].total_cmp(&strengths[a]).then(a.cmp(&b)));
    let complete = connected.len() >= k;
    if !complete {
        warn!("only {} connected inputs for K = {k}", connected.len());
    }
    FeatureSelection {
        features: connected
            .into_iter()
            .take(k)
            .map(|index| SelectedFeature {
                index,
                strength: strengths[index],
            })
            .collect(),
        complete,
    }
}
