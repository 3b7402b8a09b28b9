use std::collections::HashSet;

use dsffs::dst_update::{gradient_regrow_hidden, magnitude_prune_hidden};
use dsffs::input_selector::{
    neuron_strength, prune_input, regrow_input, select_features, InputLayerState, InputSchedule, ScheduleStep,
};
use dsffs::sparse_net::{Activation, SparseLayer, SparseNetwork};
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn layer_with(rng: &mut ChaCha8Rng, rows: usize, cols: usize, active: usize) -> SparseLayer {
    let mut mask = Array2::from_elem((rows, cols), false);
    for k in sample(rng, rows * cols, active) {
        mask[[k / cols, k % cols]] = true;
    }
    let w = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0));
    SparseLayer::new(w, mask, None).unwrap()
}

fn count_true(m: &Array2<bool>) -> usize {
    let mut n = 0;
    for &b in m.iter() {
        if b {
            n += 1;
        }
    }
    n
}

#[test]
fn hidden_prune_regrow_conserves_nnz() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let hidden = layer_with(&mut rng, 3, 3, 4);
        let input = SparseLayer::new(Array2::ones((2, 3)), Array2::from_elem((2, 3), true), None).unwrap();
        let mut net = SparseNetwork::from_layers(vec![input, hidden], Activation::Relu).unwrap();
        let before = count_true(net.layer(1).mask());
        let grads = vec![
            Array2::zeros((2, 3)),
            Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0)),
        ];
        let inactive_before: Vec<(usize, usize)> = net
            .layer(1)
            .mask()
            .indexed_iter()
            .filter(|(_, &m)| !m)
            .map(|(p, _)| p)
            .collect();

        let delta = magnitude_prune_hidden(&mut net, 0.5).unwrap();
        assert_eq!(delta.pruned.len(), 2);
        let delta = gradient_regrow_hidden(&mut net, &grads, delta).unwrap();

        assert_eq!(count_true(net.layer(1).mask()), before);
        assert!(delta.is_balanced() && delta.is_disjoint());
        // regrown = top-2 |g| over positions inactive before the update
        let mut ranked = inactive_before.clone();
        ranked.sort_by(|a, b| grads[1][*b].abs().total_cmp(&grads[1][*a].abs()).then(a.cmp(b)));
        let expect: HashSet<_> = ranked.into_iter().take(2).map(|(i, j)| (1, i, j)).collect();
        let got: HashSet<_> = delta.regrown.iter().copied().collect();
        assert_eq!(got, expect);
        for &(_, i, j) in &delta.regrown {
            assert_eq!(net.layer(1).weight(i, j), 0.0);
        }
    }
}

#[test]
fn equal_magnitudes_prune_lexicographically() {
    let hidden = SparseLayer::new(Array2::from_elem((2, 2), 0.5), Array2::from_elem((2, 2), true), None).unwrap();
    let input = SparseLayer::new(Array2::ones((1, 2)), Array2::from_elem((1, 2), true), None).unwrap();
    let mut net = SparseNetwork::from_layers(vec![input, hidden], Activation::Relu).unwrap();
    let delta = magnitude_prune_hidden(&mut net, 0.5).unwrap();
    assert_eq!(delta.pruned, vec![(1, 0, 0), (1, 0, 1)]);
}

/// Straightforward restatement of the input pruning rules.
fn brute_force_prune(w: &Array2<f64>, mask: &Array2<bool>, n_prune: usize, zeta: f64) -> Array2<bool> {
    let (rows, cols) = mask.dim();
    let mut m = mask.clone();
    let strength = |m: &Array2<bool>, i: usize| (0..cols).filter(|&j| m[[i, j]]).map(|j| w[[i, j]].abs()).sum::<f64>();
    for _ in 0..n_prune {
        let mut best: Option<usize> = None;
        for i in 0..rows {
            if (0..cols).any(|j| m[[i, j]]) {
                match best {
                    None => best = Some(i),
                    Some(b) if strength(&m, i) < strength(&m, b) => best = Some(i),
                    _ => {}
                }
            }
        }
        if let Some(i) = best {
            for j in 0..cols {
                m[[i, j]] = false;
            }
        }
    }
    let nnz = m.iter().filter(|&&b| b).count();
    // no reconnections here, so the refill must fit in rows still connected
    let free: usize = (0..rows)
        .map(|i| (0..cols).filter(|&j| m[[i, j]]).count())
        .filter(|&n| n > 0)
        .map(|n| cols - n)
        .sum();
    let neuron_conns = mask.iter().filter(|&&b| b).count() - nnz;
    let count = ((zeta * nnz as f64).floor() as usize).min(free.saturating_sub(neuron_conns));
    for _ in 0..count {
        let mut best: Option<(usize, usize)> = None;
        for i in 0..rows {
            let row_nnz = (0..cols).filter(|&j| m[[i, j]]).count();
            if row_nnz < 2 {
                continue;
            }
            for j in 0..cols {
                if m[[i, j]] && best.is_none_or(|(bi, bj)| w[[i, j]].abs() < w[[bi, bj]].abs()) {
                    best = Some((i, j));
                }
            }
        }
        if let Some(p) = best {
            m[p] = false;
        }
    }
    m
}

#[test]
fn input_prune_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..200 {
        let layer = layer_with(&mut rng, 10, 4, 24);
        let expect = brute_force_prune(layer.weights(), layer.mask(), 2, 0.2);
        let mut net = SparseNetwork::from_layers(vec![layer], Activation::Relu).unwrap();
        let mut state = InputLayerState::from_layer(net.layer(0));
        let step = ScheduleStep {
            round: 1,
            n_prune: 2,
            n_remove: 2,
            n_regrow: 0,
        };
        prune_input(&mut net, &mut state, &step, 0.2).unwrap();
        assert_eq!(net.layer(0).mask(), &expect, "trial {trial}");
    }
}

#[test]
fn input_round_trip_conserves_nnz() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut trials = 0;
    while trials < 100 {
        let rows = rng.random_range(8..30);
        let cols = rng.random_range(2..8);
        let active = rng.random_range(rows..rows * cols / 2 + rows);
        let mut layer = layer_with(&mut rng, rows, cols, active.min(rows * cols));
        // a few rows start disconnected so regrowth has candidates
        for i in 0..rows / 4 {
            for j in 0..cols {
                layer.deactivate(i, j);
            }
        }
        // the surviving units must be able to hold every connection
        let connected = (0..rows).filter(|&i| layer.row_nnz(i) > 0).count();
        if layer.nnz() > connected.saturating_sub(2) * cols {
            continue;
        }
        trials += 1;
        let mut net = SparseNetwork::from_layers(vec![layer], Activation::Relu).unwrap();
        let before = net.layer(0).nnz();
        let grads = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0));
        let mut state = InputLayerState::from_layer(net.layer(0));
        let n_regrow = rng.random_range(0..=rows / 4);
        let step = ScheduleStep {
            round: 3,
            n_prune: 2 + n_regrow,
            n_remove: 2,
            n_regrow,
        };
        let delta = prune_input(&mut net, &mut state, &step, 0.2).unwrap();
        let delta = regrow_input(&mut net, &mut state, &step, &grads, delta).unwrap();
        assert_eq!(net.layer(0).nnz(), before);
        assert!(delta.is_disjoint());
        for n in &delta.regrown_neurons {
            assert!(!delta.pruned_neurons.contains(n));
        }
    }
}

#[test]
fn reconnects_at_best_gradient() {
    let w = array![[0.0, 0.0], [0.4, 0.3]];
    let mask = array![[false, false], [true, true]];
    let mut net = SparseNetwork::from_layers(vec![SparseLayer::new(w, mask, None).unwrap()], Activation::Relu).unwrap();
    let grads = array![[0.1, 0.8], [0.0, 0.0]];
    let mut state = InputLayerState::from_layer(net.layer(0));
    let step = ScheduleStep {
        round: 2,
        n_prune: 0,
        n_remove: 0,
        n_regrow: 1,
    };
    let delta = prune_input(&mut net, &mut state, &step, 0.0).unwrap();
    let delta = regrow_input(&mut net, &mut state, &step, &grads, delta).unwrap();
    assert_eq!(delta.regrown_neurons, vec![0]);
    assert!(net.layer(0).is_active(0, 1));
    assert_eq!(net.layer(0).weight(0, 1), 0.0);
}

#[test]
fn schedule_removes_exactly_the_budget() {
    let mut s = InputSchedule::new(784, 150, 0.2, 0.65, 400).unwrap();
    assert_eq!((s.r_remove(), s.total()), (260, 478));
    let mut sum = 0;
    for r in 1..=400 {
        let step = s.advance().unwrap();
        assert_eq!(step.round, r);
        sum += step.n_remove;
        if r > 260 {
            assert_eq!(step.n_remove, 0);
            assert_eq!(step.n_prune, step.n_regrow);
        }
        assert!(s.connected() >= 150);
    }
    assert_eq!(sum, 478);
    assert_eq!(s.connected(), 306);
}

#[test]
fn selection_ties_and_limits() {
    let mask = Array2::from_elem((3, 1), true);
    let net = |w: Array2<f64>| {
        SparseNetwork::from_layers(vec![SparseLayer::new(w, mask.clone(), None).unwrap()], Activation::Relu).unwrap()
    };
    assert_eq!(
        select_features(&net(array![[0.1], [0.9], [0.5]]), 2).indices(),
        vec![1, 2]
    );
    assert_eq!(
        select_features(&net(array![[0.5], [0.5], [0.5]]), 2).indices(),
        vec![0, 1]
    );
    let all = select_features(&net(array![[0.5], [0.2], [0.5]]), 3);
    assert_eq!(all.indices(), vec![0, 2, 1]);
    assert!(all.complete);
    assert!(!select_features(&net(array![[0.5], [0.2], [0.5]]), 4).complete);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn selection_invariant_under_rescaling(
        seed in any::<u64>(),
        scale in 1e-3f64..1e3,
        k in 1usize..12,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = layer_with(&mut rng, 12, 5, 30);
        let scaled = SparseLayer::new(layer.weights() * scale, layer.mask().clone(), None).unwrap();
        let a = SparseNetwork::from_layers(vec![layer], Activation::Relu).unwrap();
        let b = SparseNetwork::from_layers(vec![scaled], Activation::Relu).unwrap();
        prop_assert_eq!(select_features(&a, k).indices(), select_features(&b, k).indices());
    }

    #[test]
    fn schedule_invariants(
        d in 10usize..400,
        k_frac in 0.01f64..0.9,
        zeta in 0.05f64..0.5,
        beta in 0.1f64..0.9,
        r_max in 2usize..120,
    ) {
        let k = ((d as f64 * k_frac) as usize).max(1);
        let mut s = InputSchedule::new(d, k, zeta, beta, r_max).unwrap();
        let mut last = 0;
        for _ in 0..r_max {
            let step = s.advance().unwrap();
            prop_assert!(s.removed() >= last);
            prop_assert!(s.removed() <= s.total());
            prop_assert!(step.n_regrow <= last);
            prop_assert!(s.connected() >= k);
            last = s.removed();
        }
        prop_assert_eq!(s.removed(), s.total());
    }

    #[test]
    fn strength_is_l1_of_active_row(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = layer_with(&mut rng, 6, 6, 15);
        for i in 0..6 {
            let want: f64 = (0..6).filter(|&j| layer.is_active(i, j)).map(|j| layer.weight(i, j).abs()).sum();
            prop_assert!((neuron_strength(&layer, i) - want).abs() < 1e-15);
        }
    }
}
