//! Layer-wise magnitude pruning and gradient-magnitude regrowth.

use std::collections::HashSet;
use std::ops::Range;

use log::warn;
use ndarray::Array2;

use crate::error::{DsffsError, Result};
use crate::sparse_net::{SparseLayer, SparseNetwork};

/// Connections removed and added by one topology update.
///
/// Positions are `(layer, row, col)`. Neuron lists are only filled by the
/// input-layer update.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TopologyDelta {
    pub pruned: Vec<(usize, usize, usize)>,
    pub regrown: Vec<(usize, usize, usize)>,
    pub pruned_neurons: Vec<usize>,
    pub regrown_neurons: Vec<usize>,
}

impl TopologyDelta {
    pub fn pruned_in(&self, layer: usize) -> usize {
        self.pruned.iter().filter(|p| p.0 == layer).count()
    }

    pub fn regrown_in(&self, layer: usize) -> usize {
        self.regrown.iter().filter(|p| p.0 == layer).count()
    }

    /// Every layer regrew exactly as many connections as it lost.
    pub fn is_balanced(&self) -> bool {
        let layers: HashSet<usize> = self.pruned.iter().chain(&self.regrown).map(|p| p.0).collect();
        layers.into_iter().all(|l| self.pruned_in(l) == self.regrown_in(l))
    }

    /// No position appears in both lists.
    pub fn is_disjoint(&self) -> bool {
        let pruned: HashSet<_> = self.pruned.iter().collect();
        self.regrown.iter().all(|p| !pruned.contains(p))
    }

    pub(crate) fn pruned_set(&self, layer: usize) -> HashSet<(usize, usize)> {
        self.pruned
            .iter()
            .filter(|p| p.0 == layer)
            .map(|&(_, i, j)| (i, j))
            .collect()
    }
}

/// Which structural constraint a magnitude prune must respect.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum KeepOne {
    /// Prefer keeping one connection per output unit, but meet the count.
    ColumnIfPossible,
    /// Never disconnect an input unit entirely.
    Row,
}

/// Active positions of smallest |weight|, ties by `(row, col)`.
pub(crate) fn smallest_active(layer: &SparseLayer, count: usize, keep: KeepOne) -> Vec<(usize, usize)> {
    if count == 0 {
        return Vec::new();
    }
    let w = layer.weights();
    let mut active = layer.active_positions();
    active.sort_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs()).then(a.cmp(&b)));

    let mut row_left: Vec<usize> = (0..layer.rows()).map(|i| layer.row_nnz(i)).collect();
    let mut col_left: Vec<usize> = (0..layer.cols()).map(|j| layer.col_nnz(j)).collect();
    let mut chosen = Vec::with_capacity(count);
    let mut taken = vec![false; active.len()];
    for (k, &(i, j)) in active.iter().enumerate() {
        if chosen.len() == count {
            break;
        }
        let blocked = match keep {
            KeepOne::ColumnIfPossible => col_left[j] <= 1,
            KeepOne::Row => row_left[i] <= 1,
        };
        if blocked {
            continue;
        }
        row_left[i] -= 1;
        col_left[j] -= 1;
        taken[k] = true;
        chosen.push((i, j));
    }
    if keep == KeepOne::ColumnIfPossible && chosen.len() < count {
        for (k, &pos) in active.iter().enumerate() {
            if chosen.len() == count {
                break;
            }
            if !taken[k] {
                chosen.push(pos);
            }
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Inactive positions of largest |gradient|, ties by `(row, col)`.
///
/// `rows`, when given, restricts candidates to rows flagged true.
pub(crate) fn largest_inactive(
    layer: &SparseLayer,
    grads: &Array2<f64>,
    count: usize,
    exclude: &HashSet<(usize, usize)>,
    rows: Option<&[bool]>,
) -> Vec<(usize, usize)> {
    if count == 0 {
        return Vec::new();
    }
    let mut candidates: Vec<(usize, usize)> = layer
        .mask()
        .indexed_iter()
        .filter(|&((i, j), &on)| !on && !exclude.contains(&(i, j)) && rows.is_none_or(|r| r[i]))
        .map(|(ij, _)| ij)
        .collect();
    candidates.sort_by(|&a, &b| grads[b].abs().total_cmp(&grads[a].abs()).then(a.cmp(&b)));
    candidates.truncate(count);
    candidates
}

fn check_fraction(zeta: f64) -> Result<()> {
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(DsffsError::invalid(format!(
            "prune fraction must lie in (0, 1), got {zeta}"
        )));
    }
    Ok(())
}

/// Magnitude-prunes `floor(zeta * nnz_l)` connections in every layer of `layers`.
///
/// Each layer keeps at least one connection per output unit whenever the
/// prune count allows it.
pub fn magnitude_prune_layers(net: &mut SparseNetwork, zeta: f64, layers: Range<usize>) -> Result<TopologyDelta> {
    prune_layers(net, zeta, layers, false)
}

/// Like [`magnitude_prune_layers`], but never prunes more connections than
/// the layer has inactive positions, so a following regrowth can always
/// restore the count. Dense layers are left alone.
pub fn balanced_prune_layers(net: &mut SparseNetwork, zeta: f64, layers: Range<usize>) -> Result<TopologyDelta> {
    prune_layers(net, zeta, layers, true)
}

fn prune_layers(net: &mut SparseNetwork, zeta: f64, layers: Range<usize>, cap: bool) -> Result<TopologyDelta> {
    check_fraction(zeta)?;
    let mut delta = TopologyDelta::default();
    for l in layers {
        let nnz = net.layer(l).nnz();
        if nnz == 0 {
            warn!("layer {l} has no active connections; skipping magnitude prune");
            continue;
        }
        let mut count = (zeta * nnz as f64).floor() as usize;
        if cap {
            count = count.min(net.layer(l).rows() * net.layer(l).cols() - nnz);
        }
        let chosen = smallest_active(net.layer(l), count, KeepOne::ColumnIfPossible);
        let layer = net.layer_mut(l);
        for (i, j) in chosen {
            layer.deactivate(i, j);
            delta.pruned.push((l, i, j));
        }
    }
    Ok(delta)
}

/// Magnitude-prunes every layer except the input layer.
pub fn magnitude_prune_hidden(net: &mut SparseNetwork, zeta: f64) -> Result<TopologyDelta> {
    let n = net.num_layers();
    magnitude_prune_layers(net, zeta, 1..n)
}

/// Regrows, per layer, as many connections as `delta` pruned there.
///
/// Candidates are inactive positions not pruned in this same update, ranked
/// by |dense gradient|. Regrown connections start at weight zero.
pub fn gradient_regrow_hidden(
    net: &mut SparseNetwork,
    dense_grads: &[Array2<f64>],
    mut delta: TopologyDelta,
) -> Result<TopologyDelta> {
    if dense_grads.len() != net.num_layers() {
        return Err(DsffsError::shape("gradient layer count mismatch"));
    }
    let mut layers: Vec<usize> = delta.pruned.iter().map(|p| p.0).collect();
    layers.sort_unstable();
    layers.dedup();
    for l in layers {
        let need = delta.pruned_in(l) - delta.regrown_in(l);
        if dense_grads[l].dim() != net.layer(l).weights().dim() {
            return Err(DsffsError::shape(format!("gradient shape mismatch in layer {l}")));
        }
        let exclude = delta.pruned_set(l);
        let chosen = largest_inactive(net.layer(l), &dense_grads[l], need, &exclude, None);
        if chosen.len() < need {
            warn!(
                "layer {l}: only {} of {need} regrowth candidates available",
                chosen.len()
            );
        }
        let layer = net.layer_mut(l);
        for (i, j) in chosen {
            layer.activate(i, j);
            delta.regrown.push((l, i, j));
        }
    }
    Ok(delta)
}
