//! Simulated horizontal federated training with embedded feature selection.
//!
//! Each round the server broadcasts its sparse model, every participating
//! client trains it locally while rewiring the input and hidden layers, and
//! the server averages the returned models weighted by local sample counts.
//! The average lives on the union of the client masks, so the server then
//! cuts every layer back to its connection budget and reconciles which input
//! units are disconnected so that all clients stay on the shared schedule.

use std::ops::Range;

use log::{debug, warn};
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::{index::sample, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PartitionedDataset;
use crate::dst_update::{balanced_prune_layers, gradient_regrow_hidden};
use crate::error::{DsffsError, Result};
use crate::input_selector::{
    neuron_strengths, prune_input, regrow_input, select_features, FeatureSelection, InputLayerState, InputSchedule,
    ScheduleStep,
};
use crate::metrics::{record_round, RoundMetrics, RoundUsage};
use crate::sparse_net::{init_er_topology, Activation, Proximal, Sgd, SparseLayer, SparseNetwork};

/// Feature-selection settings. Absent means plain federated sparse training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Number of features to select (`K`).
    pub k: usize,
    /// Fraction of rounds with net input-unit removal.
    pub beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    /// Number of clients `M`.
    pub clients: usize,
    pub clients_per_round: usize,
    /// Local epochs `Q`.
    pub local_epochs: usize,
    /// Rounds `r_max`.
    pub rounds: usize,
    pub hidden: Vec<usize>,
    pub sparsity: f64,
    /// Prune fraction for input and hidden connections.
    pub zeta: f64,
    pub selection: Option<SelectionConfig>,
    /// Proximal coefficient; 0 disables the proximal term.
    pub mu: f64,
    /// Rounds between server-side mask adjustments (`R_adj`).
    pub adjust_interval: usize,
    /// Fraction of each layer's connections the adjustment may swap (`a`).
    pub adjust_rate: f64,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub activation: Activation,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            clients: 10,
            clients_per_round: 10,
            local_epochs: 10,
            rounds: 400,
            hidden: vec![200, 200],
            sparsity: 0.8,
            zeta: 0.2,
            selection: Some(SelectionConfig { k: 150, beta: 0.65 }),
            mu: 0.0,
            adjust_interval: 10,
            adjust_rate: 0.05,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
            activation: Activation::Relu,
        }
    }
}

impl FedConfig {
    /// Checks every setting against `data`, naming the first violation.
    pub fn validate(&self, data: &PartitionedDataset) -> Result<()> {
        let fail = |msg: String| Err(DsffsError::config(msg));
        if self.clients < 2 {
            return fail(format!(
                "M must be at least 2 (clients = {}); a single client is centralized feature selection",
                self.clients
            ));
        }
        if data.n_clients() != self.clients {
            return fail(format!(
                "data has {} shards for {} clients",
                data.n_clients(),
                self.clients
            ));
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.clients {
            return fail(format!(
                "clients_per_round must lie in 1..={}, got {}",
                self.clients, self.clients_per_round
            ));
        }
        if let Some(m) = data.shards.iter().position(Vec::is_empty) {
            return fail(format!("client {m} has an empty shard"));
        }
        if self.rounds == 0 {
            return fail("rounds must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.lr > 0.0) {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.mu >= 0.0) {
            return fail(format!("mu must be non-negative, got {}", self.mu));
        }
        if !(0.0..1.0).contains(&self.zeta) {
            return fail(format!("zeta must lie in [0, 1), got {}", self.zeta));
        }
        if self.adjust_interval == 0 {
            return fail("adjust_interval must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.adjust_rate) {
            return fail(format!("adjust_rate must lie in [0, 1], got {}", self.adjust_rate));
        }
        if self.hidden.contains(&0) {
            return fail("hidden layer sizes must be positive".into());
        }
        if data.dataset.n_classes < 2 {
            return fail("need at least two classes".into());
        }
        Ok(())
    }

    fn layer_dims(&self, data: &PartitionedDataset) -> Vec<usize> {
        let mut dims = vec![data.dataset.n_features()];
        dims.extend(&self.hidden);
        dims.push(data.dataset.n_classes);
        dims
    }
}

/// One client's local data.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub id: usize,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

impl ClientState {
    pub fn new(id: usize, features: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(DsffsError::config(format!("client {id} has no samples")));
        }
        if features.nrows() != labels.len() {
            return Err(DsffsError::shape(format!("client {id}: rows and labels differ")));
        }
        Ok(Self { id, features, labels })
    }

    /// `N_m`.
    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Clone, Debug)]
pub struct ServerState {
    pub global_model: SparseNetwork,
    /// Last completed round (0 before training).
    pub round: usize,
    pub schedule: Option<InputSchedule>,
    pub global_removed: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    pub server: ServerState,
    pub metrics: Vec<RoundMetrics>,
    pub selection: Option<FeatureSelection>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of client `m`'s local generator in round `r`.
pub fn client_seed(seed: u64, round: usize, client: usize) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ round as u64) ^ client as u64)
}

fn topology_update(
    model: &mut SparseNetwork,
    x: ArrayView2<f64>,
    y: &[usize],
    step: Option<&ScheduleStep>,
    zeta: f64,
) -> Result<()> {
    let hidden: Range<usize> = match step {
        Some(step) => {
            let grads = model.gradients(x, y)?;
            let mut state = InputLayerState::from_layer(model.layer(0));
            let delta = prune_input(model, &mut state, step, zeta)?;
            regrow_input(model, &mut state, step, &grads.dense[0], delta)?;
            1..model.num_layers()
        }
        None => 0..model.num_layers(),
    };
    if zeta > 0.0 && !hidden.is_empty() {
        let grads = model.gradients(x, y)?;
        let delta = balanced_prune_layers(model, zeta, hidden)?;
        gradient_regrow_hidden(model, &grads.dense, delta)?;
    }
    Ok(())
}

/// Trains the broadcast model on one client's shard.
///
/// Every local epoch first rewires the topology (input layer by the
/// schedule, then hidden layers by magnitude/gradient) and then runs one
/// pass of minibatch SGD. The first epoch applies the round's net removal;
/// later epochs apply balanced churn. `step` is `None` when feature
/// selection is off, in which case the input layer is rewired like the
/// hidden ones.
pub fn local_train(
    client: &ClientState,
    global: &SparseNetwork,
    step: Option<&ScheduleStep>,
    config: &FedConfig,
    seed: u64,
) -> Result<SparseNetwork> {
    let mut model = global.clone();
    if config.local_epochs == 0 {
        return Ok(model);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Sgd::new(config.lr, config.momentum)?;
    let n = client.n_samples();
    let batch = config.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..config.local_epochs {
        let epoch_step = step.map(|s| if epoch == 0 { *s } else { s.steady() });
        topology_update(
            &mut model,
            client.features.view(),
            &client.labels,
            epoch_step.as_ref(),
            config.zeta,
        )?;
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let xb = client.features.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| client.labels[i]).collect();
            let grads = model.gradients(xb.view(), &yb)?;
            let prox = (config.mu > 0.0).then_some(Proximal {
                mu: config.mu,
                anchor: global,
            });
            opt.step(&mut model, &grads, prox)?;
        }
    }
    Ok(model)
}

/// Sample-weighted average of client models.
///
/// A position inactive in a client contributes zero for that client; the
/// result is active wherever any client is active.
pub fn aggregate(clients: &[(usize, &SparseNetwork)]) -> Result<SparseNetwork> {
    let (_, first) = clients
        .first()
        .ok_or_else(|| DsffsError::invalid("no client models to aggregate"))?;
    if clients.iter().any(|(_, net)| !net.same_shape(first)) {
        return Err(DsffsError::shape("client models differ in layer dimensions"));
    }
    let total: usize = clients.iter().map(|(n, _)| n).sum();
    if total == 0 {
        return Err(DsffsError::invalid("client sample counts sum to zero"));
    }
    let mut layers = Vec::with_capacity(first.num_layers());
    for l in 0..first.num_layers() {
        let template = first.layer(l);
        let mut weights = Array2::<f64>::zeros(template.weights().dim());
        let mut mask = Array2::from_elem(template.mask().dim(), false);
        let mut bias = template.bias().map(|b| Array1::<f64>::zeros(b.len()));
        for &(n, net) in clients {
            let p = n as f64 / total as f64;
            let layer = net.layer(l);
            Zip::from(&mut weights)
                .and(&mut mask)
                .and(layer.weights())
                .and(layer.mask())
                .for_each(|w, m, &cw, &cm| {
                    if cm {
                        *w += p * cw;
                        *m = true;
                    }
                });
            if let (Some(b), Some(cb)) = (bias.as_mut(), layer.bias()) {
                b.scaled_add(p, cb);
            }
        }
        layers.push(SparseLayer::new(weights, mask, bias)?);
    }
    Ok(first.with_layers(layers))
}

type Pos = (usize, usize);

/// Chooses which union positions of one layer survive.
///
/// Positions active in the previous global model (incumbents) are kept
/// first, strongest first; challengers fill the remaining slots. Up to
/// `swaps` weakest non-forced incumbents are then exchanged for stronger
/// challengers. `forced_rows` must each retain one position.
fn choose_kept(
    aggregated: &SparseLayer,
    previous: &SparseLayer,
    target: usize,
    allowed_rows: Option<&[bool]>,
    forced_rows: bool,
    swaps: usize,
) -> Vec<Pos> {
    let w = aggregated.weights();
    let row_ok = |i: usize| allowed_rows.is_none_or(|r| r[i]);
    let mut candidates: Vec<Pos> = aggregated
        .active_positions()
        .into_iter()
        .filter(|&(i, _)| row_ok(i))
        .collect();
    let priority = |a: &Pos, b: &Pos| {
        previous
            .is_active(b.0, b.1)
            .cmp(&previous.is_active(a.0, a.1))
            .then(w[*b].abs().total_cmp(&w[*a].abs()))
            .then(a.cmp(b))
    };
    candidates.sort_by(priority);

    let mut kept = vec![false; candidates.len()];
    let mut forced = vec![false; candidates.len()];
    let mut count = 0;
    if forced_rows {
        let mut seen = vec![false; aggregated.rows()];
        for (k, &(i, _)) in candidates.iter().enumerate() {
            if !seen[i] {
                seen[i] = true;
                kept[k] = true;
                forced[k] = true;
                count += 1;
            }
        }
    }
    for slot in kept.iter_mut() {
        if count >= target {
            break;
        }
        if !*slot {
            *slot = true;
            count += 1;
        }
    }

    if swaps > 0 {
        let mut losers: Vec<usize> = (0..candidates.len()).filter(|&k| kept[k] && !forced[k]).collect();
        losers.sort_by(|&a, &b| {
            w[candidates[a]]
                .abs()
                .total_cmp(&w[candidates[b]].abs())
                .then(candidates[a].cmp(&candidates[b]))
        });
        let mut winners: Vec<usize> = (0..candidates.len()).filter(|&k| !kept[k]).collect();
        winners.sort_by(|&a, &b| {
            w[candidates[b]]
                .abs()
                .total_cmp(&w[candidates[a]].abs())
                .then(candidates[a].cmp(&candidates[b]))
        });
        for (&out, &inn) in losers.iter().zip(&winners).take(swaps) {
            if w[candidates[inn]].abs() <= w[candidates[out]].abs() {
                break;
            }
            kept[out] = false;
            kept[inn] = true;
        }
    }

    let mut chosen: Vec<Pos> = candidates
        .iter()
        .zip(&kept)
        .filter(|(_, &k)| k)
        .map(|(&p, _)| p)
        .collect();
    if chosen.len() < target {
        warn!(
            "union holds {} of {target} connections; filling with zero-weight positions",
            chosen.len()
        );
        let taken: std::collections::HashSet<Pos> = chosen.iter().copied().collect();
        let mut fill: Vec<Pos> = aggregated
            .mask()
            .indexed_iter()
            .map(|(p, _)| p)
            .filter(|p| !taken.contains(p) && row_ok(p.0))
            .collect();
        fill.sort_by(|a, b| {
            previous
                .is_active(b.0, b.1)
                .cmp(&previous.is_active(a.0, a.1))
                .then(a.cmp(b))
        });
        chosen.extend(fill.into_iter().take(target - chosen.len()));
    }
    chosen
}

/// Input units the server disconnects: the `removed` weakest by aggregated
/// strength, units without any aggregated connection first, ties by index.
pub fn weakest_inputs(aggregated: &SparseLayer, removed: usize) -> Vec<bool> {
    let strengths = neuron_strengths(aggregated);
    let mut order: Vec<usize> = (0..aggregated.rows()).collect();
    let has = |i: usize| aggregated.row_nnz(i) > 0;
    order.sort_by(|&a, &b| {
        has(a)
            .cmp(&has(b))
            .then(strengths[a].total_cmp(&strengths[b]))
            .then(a.cmp(&b))
    });
    let mut out = vec![false; aggregated.rows()];
    for &i in order.iter().take(removed) {
        out[i] = true;
    }
    out
}

/// Restores each layer's connection budget after aggregation and enforces
/// the global input-unit removal count.
///
/// `server` must already reflect the round being closed: `server.round` is
/// that round and its schedule has the round committed. Every
/// `adjust_interval` rounds up to `floor(adjust_rate * nnz_l)` connections
/// per layer may be swapped for stronger ones outside the previous mask.
pub fn resparsify_and_reconcile(
    server: &ServerState,
    aggregated: &SparseNetwork,
    config: &FedConfig,
) -> Result<(SparseNetwork, Vec<bool>)> {
    let previous = &server.global_model;
    if !aggregated.same_shape(previous) {
        return Err(DsffsError::shape("aggregated model does not match the global model"));
    }
    let adjust = server.round > 0 && server.round.is_multiple_of(config.adjust_interval);
    let mut layers = Vec::with_capacity(aggregated.num_layers());
    let mut removed = vec![false; aggregated.input_dim()];
    for l in 0..aggregated.num_layers() {
        let agg = aggregated.layer(l);
        let target = previous.nnz_targets()[l];
        let swaps = if adjust {
            (config.adjust_rate * target as f64).floor() as usize
        } else {
            0
        };
        let kept = match (&server.schedule, l) {
            (Some(schedule), 0) => {
                removed = weakest_inputs(agg, schedule.removed());
                let surviving: Vec<bool> = removed.iter().map(|r| !r).collect();
                choose_kept(agg, previous.layer(0), target, Some(&surviving), true, swaps)
            }
            _ => choose_kept(agg, previous.layer(l), target, None, false, swaps),
        };
        let mut mask = Array2::from_elem(agg.mask().dim(), false);
        for p in kept {
            mask[p] = true;
        }
        layers.push(SparseLayer::new(agg.weights().clone(), mask, agg.bias().cloned())?);
    }
    let global = previous.with_layers(layers);
    if server.schedule.is_none() {
        let layer0 = global.layer(0);
        removed = (0..layer0.rows()).map(|i| layer0.row_nnz(i) == 0).collect();
    }
    Ok((global, removed))
}

/// L2 distance between two models over positions active in both.
pub fn shared_mask_distance(a: &SparseNetwork, b: &SparseNetwork) -> f64 {
    let mut sum = 0.0;
    for (la, lb) in a.layers().iter().zip(b.layers()) {
        Zip::from(la.weights())
            .and(la.mask())
            .and(lb.weights())
            .and(lb.mask())
            .for_each(|&wa, &ma, &wb, &mb| {
                if ma && mb {
                    sum += (wa - wb).powi(2);
                }
            });
    }
    sum.sqrt()
}

/// Runs the whole federated training using the global rayon pool.
pub fn run_training(config: &FedConfig, data: &PartitionedDataset) -> Result<TrainingOutcome> {
    run_training_with_workers(config, data, None)
}

/// Runs the whole federated training, training up to `workers` clients in
/// parallel. Results do not depend on `workers`.
pub fn run_training_with_workers(
    config: &FedConfig,
    data: &PartitionedDataset,
    workers: Option<usize>,
) -> Result<TrainingOutcome> {
    config.validate(data)?;
    let dims = config.layer_dims(data);
    let global = init_er_topology(&dims, config.sparsity, config.seed)?.with_activation(config.activation);

    let schedule = match &config.selection {
        Some(sel) => {
            let schedule = InputSchedule::new(dims[0], sel.k, config.zeta, sel.beta, config.rounds)?;
            let surviving = dims[0] - schedule.total();
            let capacity = surviving * dims[1];
            if capacity < global.nnz_targets()[0] {
                return Err(DsffsError::config(format!(
                    "{surviving} surviving inputs x {} units cannot hold the input layer's {} connections; \
                     lower the density or raise K",
                    dims[1],
                    global.nnz_targets()[0]
                )));
            }
            Some(schedule)
        }
        None => None,
    };

    let clients: Vec<ClientState> = (0..data.n_clients())
        .map(|m| {
            let (x, y) = data.shard(m);
            ClientState::new(m, x, y)
        })
        .collect::<Result<_>>()?;
    let (test_x, test_y) = data.test_data();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(config.clients_per_round).max(1))
        .build()
        .map_err(|e| DsffsError::invalid(e.to_string()))?;

    let mut server = ServerState {
        global_removed: vec![false; dims[0]],
        global_model: global,
        round: 0,
        schedule,
    };
    let mut metrics: Vec<RoundMetrics> = Vec::with_capacity(config.rounds);

    for r in 1..=config.rounds {
        let step = match &server.schedule {
            Some(s) => Some(s.compute_schedule(r)?),
            None => None,
        };
        let participants: Vec<usize> = if config.clients_per_round == config.clients {
            (0..config.clients).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix(config.seed ^ 0xC11E_4750) ^ r as u64);
            let mut chosen = sample(&mut rng, config.clients, config.clients_per_round).into_vec();
            chosen.sort_unstable();
            chosen
        };

        let global = &server.global_model;
        let trained: Vec<SparseNetwork> = pool.install(|| {
            participants
                .par_iter()
                .map(|&m| {
                    local_train(
                        &clients[m],
                        global,
                        step.as_ref(),
                        config,
                        client_seed(config.seed, r, m),
                    )
                })
                .collect::<Result<Vec<_>>>()
        })?;

        let drift = trained.iter().map(|net| shared_mask_distance(net, global)).sum::<f64>() / trained.len() as f64;
        let weighted: Vec<(usize, &SparseNetwork)> = participants
            .iter()
            .zip(&trained)
            .map(|(&m, net)| (clients[m].n_samples(), net))
            .collect();
        let aggregated = aggregate(&weighted)?;

        if let (Some(schedule), Some(step)) = (server.schedule.as_mut(), step.as_ref()) {
            schedule.commit(step)?;
        }
        server.round = r;
        let (next, removed) = resparsify_and_reconcile(&server, &aggregated, config)?;
        server.global_model = next;
        server.global_removed = removed;

        let sizes: Vec<usize> = participants.iter().map(|&m| clients[m].n_samples()).collect();
        let usage = RoundUsage {
            round: r,
            participants: &sizes,
            local_epochs: config.local_epochs,
            batch_size: config.batch_size,
            mean_client_drift: drift,
        };
        let m = record_round(metrics.last(), &server.global_model, test_x.view(), &test_y, &usage)?;
        debug!(
            "round {r}: accuracy {:.4}, connected inputs {}, nnz {}",
            m.test_accuracy, m.connected_input_neurons, m.global_nnz
        );
        metrics.push(m);
    }

    let selection = server
        .schedule
        .as_ref()
        .map(|s| select_features(&server.global_model, s.k()));
    Ok(TrainingOutcome {
        server,
        metrics,
        selection,
    })
}

/// Final test accuracy of plain federated sparse training restricted to
/// `columns`, the measure used to compare feature subsets.
pub fn evaluate_features(config: &FedConfig, data: &PartitionedDataset, columns: &[usize]) -> Result<f64> {
    let subset = data.select_columns(columns)?;
    let config = FedConfig {
        selection: None,
        ..config.clone()
    };
    let outcome = run_training(&config, &subset)?;
    Ok(outcome.metrics.last().map_or(0.0, |m| m.test_accuracy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn net_from(weights: Vec<Array2<f64>>) -> SparseNetwork {
        let layers = weights
            .into_iter()
            .map(|w| {
                let mask = w.mapv(|v| v != 0.0);
                let cols = w.ncols();
                SparseLayer::new(w, mask, Some(Array1::zeros(cols))).unwrap()
            })
            .collect();
        SparseNetwork::from_layers(layers, Activation::Relu).unwrap()
    }

    #[test]
    fn single_client_aggregate_is_identity() {
        let net = init_er_topology(&[6, 4, 3], 0.5, 1).unwrap();
        let out = aggregate(&[(17, &net)]).unwrap();
        assert_eq!(out, net);
    }

    #[test]
    fn weighted_mean_and_zero_fill() {
        let a = net_from(vec![array![[2.0, 1.0]]]);
        let b = net_from(vec![array![[4.0, 0.0]]]);
        let out = aggregate(&[(1, &a), (3, &b)]).unwrap();
        assert!((out.layer(0).weight(0, 0) - 3.5).abs() < 1e-15);
        let a = net_from(vec![array![[4.0, 1.0]]]);
        let b = net_from(vec![array![[0.0, 1.0]]]);
        let out = aggregate(&[(1, &a), (1, &b)]).unwrap();
        assert!((out.layer(0).weight(0, 0) - 2.0).abs() < 1e-15);
        assert!(out.layer(0).is_active(0, 0));
    }

    #[test]
    fn aggregate_rejects_empty() {
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn client_seeds_differ() {
        assert_ne!(client_seed(1, 1, 0), client_seed(1, 1, 1));
        assert_ne!(client_seed(1, 1, 0), client_seed(1, 2, 0));
        assert_eq!(client_seed(5, 3, 2), client_seed(5, 3, 2));
    }
}
