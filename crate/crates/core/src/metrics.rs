//! Accuracy, FLOPs, and communication accounting.
//!
//! FLOPs follow the layer-by-layer convention for sparse networks: one
//! multiply-accumulate per active connection counts as 2 FLOPs, each bias
//! add as 1, and a training step costs 3x inference (forward pass plus a
//! backward pass of roughly twice the forward cost). Topology-update
//! overhead (strength sums, sorting) is not counted.

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{DsffsError, Result};
use crate::sparse_net::SparseNetwork;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub test_accuracy: f64,
    pub cumulative_flops: u64,
    pub cumulative_upload_bits: u64,
    pub cumulative_download_bits: u64,
    pub connected_input_neurons: usize,
    pub global_nnz: usize,
    pub layer_nnz: Vec<usize>,
    /// Mean over participating clients of the L2 distance between the
    /// returned model and the broadcast model, on positions active in both.
    pub mean_client_drift: f64,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Fraction of logit rows whose argmax equals the label.
pub fn accuracy_from_logits(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    let hits = logits
        .outer_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row.view()) == y)
        .count();
    hits as f64 / labels.len() as f64
}

/// Test-set accuracy of `net`.
pub fn accuracy(net: &SparseNetwork, x: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(DsffsError::invalid("accuracy on an empty test set"));
    }
    if x.nrows() != labels.len() {
        return Err(DsffsError::shape("test rows and labels differ in length"));
    }
    const CHUNK: usize = 1024;
    let mut hits = 0usize;
    for start in (0..labels.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(labels.len());
        let logits = net.predict(x.slice(s![start..end, ..]))?;
        hits += logits
            .outer_iter()
            .zip(&labels[start..end])
            .filter(|(row, &y)| argmax(row.view()) == y)
            .count();
    }
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Inference,
    Training,
}

/// FLOPs to process one example.
pub fn flops_per_example(net: &SparseNetwork, phase: Phase) -> u64 {
    let inference: u64 = net
        .layers()
        .iter()
        .map(|l| 2 * l.nnz() as u64 + l.bias().map_or(0, |b| b.len() as u64))
        .sum();
    match phase {
        Phase::Inference => inference,
        Phase::Training => 3 * inference,
    }
}

/// Bits to transmit a sparse model: 32 bits per active weight plus one mask
/// bit per position, `ceil((32 * (1 - S) + 1) * n)`.
pub fn upload_cost_bits(n_params: usize, sparsity: f64) -> u64 {
    assert!(
        (0.0..=1.0).contains(&sparsity),
        "sparsity must lie in [0, 1], got {sparsity}"
    );
    let bits = (32.0 * (1.0 - sparsity) + 1.0) * n_params as f64;
    // absorb representation error such as 32 * (1 - 0.8) = 6.3999...
    let eps = 1e-9 * bits.max(1.0);
    (bits - eps).ceil() as u64
}

/// Training FLOPs charged to one client for one round.
pub fn client_round_flops(net: &SparseNetwork, n_samples: usize, local_epochs: usize, batch_size: usize) -> u64 {
    if n_samples == 0 {
        return 0;
    }
    let batch = batch_size.min(n_samples).max(1);
    let batches = n_samples.div_ceil(batch) as u64;
    local_epochs as u64 * batches * batch as u64 * flops_per_example(net, Phase::Training)
}

/// Inputs to [`record_round`] beyond the model itself.
#[derive(Clone, Debug)]
pub struct RoundUsage<'a> {
    pub round: usize,
    /// Sample counts of the clients that trained this round.
    pub participants: &'a [usize],
    pub local_epochs: usize,
    pub batch_size: usize,
    pub mean_client_drift: f64,
}

/// Extends the cumulative counters with one round.
pub fn record_round(
    previous: Option<&RoundMetrics>,
    global: &SparseNetwork,
    test_x: ArrayView2<f64>,
    test_y: &[usize],
    usage: &RoundUsage<'_>,
) -> Result<RoundMetrics> {
    let (flops0, up0, down0) = previous.map_or((0, 0, 0), |m| {
        (m.cumulative_flops, m.cumulative_upload_bits, m.cumulative_download_bits)
    });
    let per_model = upload_cost_bits(global.dense_params(), global.realized_sparsity());
    let flops: u64 = usage
        .participants
        .iter()
        .map(|&n| client_round_flops(global, n, usage.local_epochs, usage.batch_size))
        .sum();
    let transfers = usage.participants.len() as u64 * per_model;
    let layer0 = global.layer(0);
    Ok(RoundMetrics {
        round: usage.round,
        test_accuracy: accuracy(global, test_x, test_y)?,
        cumulative_flops: flops0 + flops,
        cumulative_upload_bits: up0 + transfers,
        cumulative_download_bits: down0 + transfers,
        connected_input_neurons: (0..layer0.rows()).filter(|&i| layer0.row_nnz(i) > 0).count(),
        global_nnz: global.nnz(),
        layer_nnz: global.layer_nnz(),
        mean_client_drift: usage.mean_client_drift,
    })
}
