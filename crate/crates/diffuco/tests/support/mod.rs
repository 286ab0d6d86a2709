//! Helpers shared by the integration tests: small random instances and
//! finite differences that refuse to straddle a kink of the network.

#![allow(dead_code)]

use diffuco_core::energy::Assignment;
use diffuco_core::gnn::{ForwardCache, ModelConfig, ModelParams, StepInput};
use diffuco_core::graph::{Adjacency, Graph};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random connected graph: a random spanning tree plus extra edges with
/// probability `p`.
pub fn connected_graph(n: usize, p: f64, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.shuffle(&mut rng);
    let mut edges = Vec::new();
    for k in 1..n {
        let parent = order[rng.gen_range(0..k)];
        edges.push((order[k], parent));
    }
    for i in 0..n as u32 {
        for j in i + 1..n as u32 {
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph::new(n, edges).unwrap()
}

/// Freshly initialised parameters with every value perturbed by up to
/// `spread`, so that output fields are far from uniform.
pub fn random_params(config: ModelConfig, seed: u64, spread: f64) -> ModelParams {
    let mut p = ModelParams::init(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for v in p.values_mut() {
        *v += rng.gen_range(-spread..=spread);
    }
    p
}

pub fn small_config(layers: usize, hidden: usize, t_train: usize) -> ModelConfig {
    ModelConfig {
        layers,
        hidden,
        t_train,
        rand_features: 0,
    }
}

/// Activation pattern and largest normalisation gain of the network over
/// every state and every time index.
pub fn table_signature(params: &ModelParams, adj: &Adjacency) -> (Vec<bool>, f64) {
    let n = adj.num_nodes();
    let mut pattern = Vec::new();
    let mut gain = 0.0f64;
    let mut cache = ForwardCache::default();
    for t in 1..=params.config().t_train {
        for code in 0..1u64 << n {
            let x = Assignment::from_index(code, n);
            params
                .forward_cached(
                    &StepInput {
                        adjacency: adj,
                        x_t: x.bits(),
                        condition: t,
                        rand_feats: None,
                    },
                    &mut cache,
                )
                .unwrap();
            pattern.extend(cache.activation_pattern());
            gain = gain.max(cache.max_norm_gain());
        }
    }
    (pattern, gain)
}

pub fn shifted(params: &ModelParams, idx: usize, delta: f64) -> ModelParams {
    let mut p = params.clone();
    p.values_mut()[idx] += delta;
    p
}

/// Fourth-order central difference of `f` along coordinate `idx`, or
/// `None` when a rectifier or the output clamp switches inside the stencil.
pub fn smooth_derivative<F>(params: &ModelParams, adj: &Adjacency, idx: usize, h: f64, f: F) -> Option<f64>
where
    F: Fn(&ModelParams) -> f64,
{
    let base = table_signature(params, adj).0;
    let mut vals = [0.0; 4];
    for (slot, d) in [h, -h, h / 2.0, -h / 2.0].into_iter().enumerate() {
        let p = shifted(params, idx, d);
        if table_signature(&p, adj).0 != base {
            return None;
        }
        vals[slot] = f(&p);
    }
    let d_h = (vals[0] - vals[1]) / (2.0 * h);
    let d_half = (vals[2] - vals[3]) / h;
    Some((4.0 * d_half - d_h) / 3.0)
}

/// Parameters on which every normalised row keeps a healthy spread, so
/// that finite differences resolve the derivative.
pub fn well_conditioned_params(config: ModelConfig, adj: &Adjacency, seed: u64, spread: f64) -> ModelParams {
    for s in seed.. {
        let p = random_params(config, s, spread);
        if table_signature(&p, adj).1 < 30.0 {
            return p;
        }
    }
    unreachable!()
}
