//! Masked multilayer perceptron.
//!
//! Every layer stores a dense weight buffer next to a boolean mask of active
//! connections. Inactive positions always hold exactly `0.0`, so the forward
//! pass can use ordinary dense matrix products. The number of active
//! connections (`nnz`) is the quantity the topology updates conserve.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{DsffsError, Result};

/// Hidden-layer nonlinearity. The output layer is always linear (logits).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// One fully connected layer with an explicit connectivity mask.
///
/// `weights[[i, j]]` connects input unit `i` to output unit `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseLayer {
    weights: Array2<f64>,
    mask: Array2<bool>,
    bias: Option<Array1<f64>>,
}

impl SparseLayer {
    /// Builds a layer, zeroing every weight whose mask entry is false.
    pub fn new(mut weights: Array2<f64>, mask: Array2<bool>, bias: Option<Array1<f64>>) -> Result<Self> {
        if weights.dim() != mask.dim() {
            return Err(DsffsError::shape(format!(
                "weights {:?} vs mask {:?}",
                weights.dim(),
                mask.dim()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != weights.ncols() {
                return Err(DsffsError::shape(format!(
                    "bias length {} vs {} output units",
                    b.len(),
                    weights.ncols()
                )));
            }
        }
        Zip::from(&mut weights).and(&mask).for_each(|w, &m| {
            if !m {
                *w = 0.0;
            }
        });
        Ok(Self { weights, mask, bias })
    }

    /// Fully connected layer with all weights and biases zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            weights: Array2::zeros((rows, cols)),
            mask: Array2::from_elem((rows, cols), true),
            bias: Some(Array1::zeros(cols)),
        }
    }

    pub fn rows(&self) -> usize {
        self.weights.nrows()
    }

    pub fn cols(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn bias(&self) -> Option<&Array1<f64>> {
        self.bias.as_ref()
    }

    pub fn bias_mut(&mut self) -> Option<&mut Array1<f64>> {
        self.bias.as_mut()
    }

    pub fn nnz(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn row_nnz(&self, i: usize) -> usize {
        self.mask.row(i).iter().filter(|&&m| m).count()
    }

    pub fn col_nnz(&self, j: usize) -> usize {
        self.mask.column(j).iter().filter(|&&m| m).count()
    }

    pub fn is_active(&self, i: usize, j: usize) -> bool {
        self.mask[[i, j]]
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[[i, j]]
    }

    /// Sets an active weight. Writing to an inactive position is an error.
    pub fn set_weight(&mut self, i: usize, j: usize, w: f64) -> Result<()> {
        if !self.mask[[i, j]] {
            return Err(DsffsError::invalid(format!(
                "position ({i}, {j}) is not an active connection"
            )));
        }
        self.weights[[i, j]] = w;
        Ok(())
    }

    /// Turns a connection on with weight zero. Returns false if it was
    /// already active.
    pub fn activate(&mut self, i: usize, j: usize) -> bool {
        if self.mask[[i, j]] {
            return false;
        }
        self.mask[[i, j]] = true;
        self.weights[[i, j]] = 0.0;
        true
    }

    /// Turns a connection off and zeroes it. Returns false if it was
    /// already inactive.
    pub fn deactivate(&mut self, i: usize, j: usize) -> bool {
        if !self.mask[[i, j]] {
            return false;
        }
        self.mask[[i, j]] = false;
        self.weights[[i, j]] = 0.0;
        true
    }

    /// Active positions in row-major order.
    pub fn active_positions(&self) -> Vec<(usize, usize)> {
        self.mask.indexed_iter().filter(|(_, &m)| m).map(|(ij, _)| ij).collect()
    }

    /// True when no inactive position carries a nonzero weight.
    pub fn is_consistent(&self) -> bool {
        Zip::from(&self.weights)
            .and(&self.mask)
            .fold(true, |ok, &w, &m| ok && (m || w == 0.0))
    }
}

/// An ordered stack of [`SparseLayer`]s with a fixed global sparsity budget.
#[derive(Clone, Debug)]
pub struct SparseNetwork {
    layers: Vec<SparseLayer>,
    sparsity: f64,
    nnz_targets: Vec<usize>,
    activation: Activation,
    // Bumped on every mutable access; lets `backward` reject caches that
    // were produced before the weights changed.
    generation: u64,
}

impl PartialEq for SparseNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
            && self.sparsity == other.sparsity
            && self.nnz_targets == other.nnz_targets
            && self.activation == other.activation
    }
}

/// Per-layer connection counts for an Erdős–Rényi allocation.
///
/// Density of layer `l` is proportional to `(n_in + n_out) / (n_in * n_out)`.
/// The proportionality constant is chosen so the whole network keeps a
/// `1 - sparsity` fraction of its dense connections. Layers that would exceed
/// density 1 are made dense and the excess is spread over the remaining ones.
pub fn er_layer_nnz(layer_dims: &[usize], sparsity: f64) -> Result<Vec<usize>> {
    if layer_dims.len() < 2 {
        return Err(DsffsError::config("a network needs at least two layer sizes"));
    }
    if layer_dims.contains(&0) {
        return Err(DsffsError::config("layer sizes must be positive"));
    }
    if !(0.0..1.0).contains(&sparsity) {
        return Err(DsffsError::config(format!(
            "sparsity must lie in [0, 1), got {sparsity}"
        )));
    }
    let n_layers = layer_dims.len() - 1;
    let sizes: Vec<f64> = (0..n_layers)
        .map(|l| (layer_dims[l] * layer_dims[l + 1]) as f64)
        .collect();
    let perimeters: Vec<f64> = (0..n_layers)
        .map(|l| (layer_dims[l] + layer_dims[l + 1]) as f64)
        .collect();
    let target = (1.0 - sparsity) * sizes.iter().sum::<f64>();

    let mut dense = vec![false; n_layers];
    let mut scale = 0.0;
    loop {
        let free: Vec<usize> = (0..n_layers).filter(|&l| !dense[l]).collect();
        if free.is_empty() {
            break;
        }
        let budget = target - (0..n_layers).filter(|&l| dense[l]).map(|l| sizes[l]).sum::<f64>();
        let perimeter: f64 = free.iter().map(|&l| perimeters[l]).sum();
        scale = budget / perimeter;
        let mut changed = false;
        for &l in &free {
            if scale * perimeters[l] >= sizes[l] * (1.0 - 1e-12) {
                dense[l] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let counts: Vec<usize> = (0..n_layers)
        .map(|l| {
            if dense[l] {
                sizes[l] as usize
            } else {
                ((scale * perimeters[l]).round() as usize).min(sizes[l] as usize)
            }
        })
        .collect();

    for (l, &nnz) in counts.iter().enumerate() {
        if nnz < layer_dims[l + 1] {
            return Err(DsffsError::config(format!(
                "sparsity {sparsity} leaves layer {l} with {nnz} connections for {} output units",
                layer_dims[l + 1]
            )));
        }
    }
    if counts[0] < layer_dims[0] {
        return Err(DsffsError::config(format!(
            "sparsity {sparsity} leaves the input layer with {} connections for {} input features",
            counts[0], layer_dims[0]
        )));
    }
    Ok(counts)
}

/// Random sparse MLP with Erdős–Rényi layer densities.
///
/// Every input unit receives at least one connection so that all features
/// start out connected. Weights at active positions are drawn from
/// `N(0, 2 / fan_in)` where `fan_in` is the mean number of active inputs per
/// output unit; biases start at zero.
pub fn init_er_topology(layer_dims: &[usize], sparsity: f64, seed: u64) -> Result<SparseNetwork> {
    let counts = er_layer_nnz(layer_dims, sparsity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(counts.len());
    for (l, &nnz) in counts.iter().enumerate() {
        let (rows, cols) = (layer_dims[l], layer_dims[l + 1]);
        let mut mask = Array2::from_elem((rows, cols), false);
        if nnz == rows * cols {
            mask.fill(true);
        } else if l == 0 {
            for i in 0..rows {
                let j = rng.random_range(0..cols);
                mask[[i, j]] = true;
            }
            let free: Vec<usize> = (0..rows * cols).filter(|&p| !mask[[p / cols, p % cols]]).collect();
            for k in sample(&mut rng, free.len(), nnz - rows) {
                let p = free[k];
                mask[[p / cols, p % cols]] = true;
            }
        } else {
            for p in sample(&mut rng, rows * cols, nnz) {
                mask[[p / cols, p % cols]] = true;
            }
        }
        let fan_in = (nnz as f64 / cols as f64).max(1.0);
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).map_err(|e| DsffsError::invalid(e.to_string()))?;
        let mut weights = Array2::zeros((rows, cols));
        for ((i, j), &m) in mask.indexed_iter() {
            if m {
                weights[[i, j]] = normal.sample(&mut rng);
            }
        }
        layers.push(SparseLayer::new(weights, mask, Some(Array1::zeros(cols)))?);
    }
    Ok(SparseNetwork {
        layers,
        sparsity,
        nnz_targets: counts,
        activation: Activation::Relu,
        generation: 0,
    })
}

/// Intermediate values of one forward pass, consumed by [`SparseNetwork::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input to each layer: the batch, then each hidden activation.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre_activations: Vec<Array2<f64>>,
    logits: Array2<f64>,
    generation: u64,
    dims: Vec<usize>,
}

impl ForwardCache {
    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn batch_size(&self) -> usize {
        self.logits.nrows()
    }
}

/// Gradients of the mean cross-entropy loss.
#[derive(Clone, Debug)]
pub struct Gradients {
    /// Weight gradients restricted to active connections.
    pub masked: Vec<Array2<f64>>,
    /// Weight gradients at every position, active or not. Used only to score
    /// regrowth candidates.
    pub dense: Vec<Array2<f64>>,
    pub bias: Vec<Option<Array1<f64>>>,
    /// Mean loss of the batch the gradients were computed on.
    pub loss: f64,
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (batch, classes) = logits.dim();
    if labels.len() != batch {
        return Err(DsffsError::shape(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if batch == 0 {
        return Err(DsffsError::shape("empty batch"));
    }
    let mut grad = Array2::zeros((batch, classes));
    let mut loss = 0.0;
    for (b, (row, &y)) in logits.outer_iter().zip(labels).enumerate() {
        if y >= classes {
            return Err(DsffsError::invalid(format!(
                "label {y} out of range for {classes} classes"
            )));
        }
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_sum = max + sum.ln();
        loss += log_sum - row[y];
        for c in 0..classes {
            grad[[b, c]] = (row[c] - log_sum).exp();
        }
        grad[[b, y]] -= 1.0;
    }
    let n = batch as f64;
    grad.mapv_inplace(|g| g / n);
    Ok((loss / n, grad))
}

impl SparseNetwork {
    /// Assembles a network from explicit layers. The current per-layer
    /// connection counts become the conserved targets.
    pub fn from_layers(layers: Vec<SparseLayer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(DsffsError::shape("a network needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].cols() != w[1].rows() {
                return Err(DsffsError::shape(format!(
                    "layer output {} does not feed layer input {}",
                    w[0].cols(),
                    w[1].rows()
                )));
            }
        }
        let nnz_targets: Vec<usize> = layers.iter().map(SparseLayer::nnz).collect();
        let dense: usize = layers.iter().map(|l| l.rows() * l.cols()).sum();
        let sparsity = 1.0 - nnz_targets.iter().sum::<usize>() as f64 / dense as f64;
        Ok(Self {
            layers,
            sparsity,
            nnz_targets,
            activation,
            generation: 0,
        })
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self.generation += 1;
        self
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[SparseLayer] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &SparseLayer {
        &self.layers[l]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut SparseLayer {
        self.generation += 1;
        &mut self.layers[l]
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Unit counts from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].rows()];
        dims.extend(self.layers.iter().map(SparseLayer::cols));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].cols()
    }

    /// Target sparsity the network was built with.
    pub fn sparsity(&self) -> f64 {
        self.sparsity
    }

    pub fn density(&self) -> f64 {
        1.0 - self.sparsity
    }

    /// Realized per-layer density `nnz_l / (n_in * n_out)`.
    pub fn layer_densities(&self) -> Vec<f64> {
        self.layers
            .iter()
            .map(|l| l.nnz() as f64 / (l.rows() * l.cols()) as f64)
            .collect()
    }

    /// Conserved per-layer connection counts.
    pub fn nnz_targets(&self) -> &[usize] {
        &self.nnz_targets
    }

    pub fn nnz(&self) -> usize {
        self.layers.iter().map(SparseLayer::nnz).sum()
    }

    pub fn layer_nnz(&self) -> Vec<usize> {
        self.layers.iter().map(SparseLayer::nnz).collect()
    }

    /// Number of weight positions in the dense counterpart.
    pub fn dense_params(&self) -> usize {
        self.layers.iter().map(|l| l.rows() * l.cols()).sum()
    }

    /// `1 - nnz / dense_params` for the current masks.
    pub fn realized_sparsity(&self) -> f64 {
        1.0 - self.nnz() as f64 / self.dense_params() as f64
    }

    pub fn is_consistent(&self) -> bool {
        self.layers.iter().all(SparseLayer::is_consistent)
    }

    pub(crate) fn same_shape(&self, other: &SparseNetwork) -> bool {
        self.dims() == other.dims()
    }

    /// Same budget and activation with replacement layers of equal shape.
    pub(crate) fn with_layers(&self, layers: Vec<SparseLayer>) -> SparseNetwork {
        debug_assert_eq!(layers.len(), self.layers.len());
        SparseNetwork {
            layers,
            sparsity: self.sparsity,
            nnz_targets: self.nnz_targets.clone(),
            activation: self.activation,
            generation: self.generation + 1,
        }
    }

    /// Logits for a batch of rows, without keeping intermediate values.
    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(batch)?;
        let last = self.layers.len() - 1;
        let mut a = batch.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights);
            if let Some(b) = &layer.bias {
                z += b;
            }
            if l < last {
                let act = self.activation;
                z.mapv_inplace(|v| act.apply(v));
            }
            a = z;
        }
        Ok(a)
    }

    /// Logits for a batch plus everything `backward` needs.
    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(batch)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(last);
        let mut a = batch.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights);
            if let Some(b) = &layer.bias {
                z += b;
            }
            inputs.push(a);
            if l < last {
                let act = self.activation;
                a = z.mapv(|v| act.apply(v));
                pre_activations.push(z);
            } else {
                a = z;
            }
        }
        let cache = ForwardCache {
            inputs,
            pre_activations,
            logits: a.clone(),
            generation: self.generation,
            dims: self.dims(),
        };
        Ok((a, cache))
    }

    /// Backpropagates mean cross-entropy through the cached forward pass.
    pub fn backward(&self, cache: &ForwardCache, labels: &[usize]) -> Result<Gradients> {
        if cache.dims != self.dims() {
            return Err(DsffsError::StaleCache(format!(
                "cache built for {:?}, network is {:?}",
                cache.dims,
                self.dims()
            )));
        }
        if cache.generation != self.generation {
            return Err(DsffsError::StaleCache(
                "network was modified after the forward pass".into(),
            ));
        }
        let (loss, mut delta) = softmax_cross_entropy(&cache.logits, labels)?;
        let n_layers = self.layers.len();
        let mut dense = vec![Array2::zeros((0, 0)); n_layers];
        let mut bias = vec![None; n_layers];
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            dense[l] = cache.inputs[l].t().dot(&delta);
            if layer.bias.is_some() {
                bias[l] = Some(delta.sum_axis(Axis(0)));
            }
            if l > 0 {
                let mut upstream = delta.dot(&layer.weights.t());
                let act = self.activation;
                Zip::from(&mut upstream)
                    .and(&cache.pre_activations[l - 1])
                    .for_each(|d, &z| *d *= act.derivative(z));
                delta = upstream;
            }
        }
        let masked = dense
            .iter()
            .zip(&self.layers)
            .map(|(g, layer)| {
                let mut m = g.clone();
                Zip::from(&mut m).and(&layer.mask).for_each(|v, &on| {
                    if !on {
                        *v = 0.0;
                    }
                });
                m
            })
            .collect();
        Ok(Gradients {
            masked,
            dense,
            bias,
            loss,
        })
    }

    /// Forward and backward on one batch.
    pub fn gradients(&self, batch: ArrayView2<f64>, labels: &[usize]) -> Result<Gradients> {
        let (_, cache) = self.forward(batch)?;
        self.backward(&cache, labels)
    }

    /// Mean cross-entropy on a batch.
    pub fn loss(&self, batch: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
        let logits = self.predict(batch)?;
        Ok(softmax_cross_entropy(&logits, labels)?.0)
    }

    fn check_input(&self, batch: ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(DsffsError::shape(format!(
                "batch has {} features, network expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

/// Proximal pull toward an anchor network.
#[derive(Clone, Copy, Debug)]
pub struct Proximal<'a> {
    pub mu: f64,
    pub anchor: &'a SparseNetwork,
}

/// Minibatch SGD with heavy-ball momentum and an optional proximal term.
///
/// With a proximal term the step solves
/// `min_w <v, w> + mu/2 |w - anchor|^2 + 1/(2 lr) |w - w_t|^2` in closed form:
///
/// `w' = (w - lr * v + lr * mu * anchor) / (1 + lr * mu)`
///
/// which agrees with the explicit step to first order in `lr * mu` and stays
/// stable for any `mu`.
#[derive(Clone, Debug)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Vec<Array2<f64>>,
    bias_velocity: Vec<Option<Array1<f64>>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(DsffsError::invalid(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(DsffsError::invalid(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: Vec::new(),
            bias_velocity: Vec::new(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step(&mut self, net: &mut SparseNetwork, grads: &Gradients, prox: Option<Proximal<'_>>) -> Result<()> {
        if grads.masked.len() != net.num_layers() {
            return Err(DsffsError::shape("gradient layer count mismatch"));
        }
        if let Some(p) = &prox {
            if !p.anchor.same_shape(net) {
                return Err(DsffsError::shape("proximal anchor shape mismatch"));
            }
            if p.mu < 0.0 {
                return Err(DsffsError::invalid("proximal coefficient must be >= 0"));
            }
        }
        if self.velocity.len() != net.num_layers() {
            self.velocity = net.layers.iter().map(|l| Array2::zeros(l.weights.dim())).collect();
            self.bias_velocity = net
                .layers
                .iter()
                .map(|l| l.bias.as_ref().map(|b| Array1::zeros(b.len())))
                .collect();
        }
        let (lr, m) = (self.lr, self.momentum);
        let mu = prox.map_or(0.0, |p| p.mu);
        let shrink = 1.0 + lr * mu;
        for l in 0..net.num_layers() {
            let g = &grads.masked[l];
            if g.dim() != net.layers[l].weights.dim() {
                return Err(DsffsError::shape(format!("gradient shape mismatch in layer {l}")));
            }
            let layer = &mut net.layers[l];
            let v = &mut self.velocity[l];
            match prox {
                Some(p) => {
                    let anchor = &p.anchor.layers[l].weights;
                    Zip::from(&mut layer.weights)
                        .and(&layer.mask)
                        .and(v)
                        .and(g)
                        .and(anchor)
                        .for_each(|w, &on, v, &g, &a| {
                            if on {
                                *v = m * *v + g;
                                *w = (*w - lr * *v + lr * mu * a) / shrink;
                            } else {
                                *v = 0.0;
                                *w = 0.0;
                            }
                        });
                }
                None => {
                    Zip::from(&mut layer.weights)
                        .and(&layer.mask)
                        .and(v)
                        .and(g)
                        .for_each(|w, &on, v, &g| {
                            if on {
                                *v = m * *v + g;
                                *w -= lr * *v;
                            } else {
                                *v = 0.0;
                                *w = 0.0;
                            }
                        });
                }
            }
            if let (Some(b), Some(bv), Some(gb)) = (
                layer.bias.as_mut(),
                self.bias_velocity[l].as_mut(),
                grads.bias[l].as_ref(),
            ) {
                let anchor_b = prox.and_then(|p| p.anchor.layers[l].bias.as_ref());
                for j in 0..b.len() {
                    bv[j] = m * bv[j] + gb[j];
                    let a = anchor_b.map_or(0.0, |ab| ab[j]);
                    b[j] = if prox.is_some() {
                        (b[j] - lr * bv[j] + lr * mu * a) / shrink
                    } else {
                        b[j] - lr * bv[j]
                    };
                }
            }
        }
        net.generation += 1;
        Ok(())
    }
}

/// A single SGD update from rest (zero velocity).
pub fn sgd_step(
    net: &mut SparseNetwork,
    grads: &Gradients,
    lr: f64,
    momentum: f64,
    prox: Option<Proximal<'_>>,
) -> Result<()> {
    Sgd::new(lr, momentum)?.step(net, grads, prox)
}
