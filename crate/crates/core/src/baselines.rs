//! Reference solvers: exhaustive search, problem-specific greedy rules,
//! mean-field annealing and simulated annealing.

use alloc::vec;
use alloc::vec::Vec;

// float math without std; unused when std is linked elsewhere in the build
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decode::conditional_expectation;
use crate::diffusion::{clamp_prob, BernoulliField};
use crate::energy::{Assignment, EnergyPoly};
use crate::error::{invalid, Error, Result};
use crate::graph::{complement, Graph, ProblemKind};

/// Largest instance [`brute_force`] accepts.
pub const BRUTE_FORCE_CAP: usize = 26;

/// Two energies closer than this are treated as equal when breaking ties.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Energy change from flipping variable `i` of the 0/1 vector `p`.
#[inline]
fn flip_delta(e: &EnergyPoly, p: &[f64], i: usize) -> f64 {
    let (e0, e1) = e.pin_gap(p, i);
    if p[i] == 1.0 {
        e0 - e1
    } else {
        e1 - e0
    }
}

/// Exact minimiser by Gray-code enumeration of all `2^n` assignments. Among
/// assignments within [`TIE_TOLERANCE`] of the minimum the one with the
/// lowest binary value `sum x_i 2^i` is returned, with its exactly
/// recomputed energy.
pub fn brute_force(e: &EnergyPoly) -> Result<(Assignment, f64)> {
    let n = e.num_vars();
    if n > BRUTE_FORCE_CAP {
        return Err(Error::SizeCap {
            n,
            cap: BRUTE_FORCE_CAP,
        });
    }
    let mut p = vec![0.0; n];
    let mut current = e.expected_unchecked(&p);
    let mut best_code = 0u64;
    let mut best = current;
    let total = 1u64 << n;
    for i in 1..total {
        let bit = i.trailing_zeros() as usize;
        current += flip_delta(e, &p, bit);
        p[bit] = 1.0 - p[bit];
        let code = i ^ (i >> 1);
        if i & 0xffff == 0 {
            // resynchronise the running sum
            current = e.expected_unchecked(&p);
        }
        if current < best - TIE_TOLERANCE {
            best = current;
            best_code = code;
        } else if current <= best + TIE_TOLERANCE && code < best_code {
            best = best.min(current);
            best_code = code;
        }
    }
    let x = Assignment::from_index(best_code, n);
    let energy = e.value(&x)?;
    Ok((x, energy))
}

/// Problem-specific greedy heuristic; the output is always feasible.
pub fn greedy(kind: ProblemKind, g: &Graph) -> Assignment {
    let bits = match kind {
        ProblemKind::Mis => greedy_mis(g),
        ProblemKind::MaxCl => greedy_mis(&complement(g)),
        ProblemKind::Mvc => greedy_mvc(g),
        ProblemKind::Mds => greedy_mds(g),
        ProblemKind::MaxCut => greedy_maxcut(g),
    };
    Assignment::from_bits(bits).expect("bits are 0/1")
}

/// Repeatedly takes a minimum-degree node of the remaining graph and
/// deletes it with its neighbourhood.
fn greedy_mis(g: &Graph) -> Vec<u8> {
    let adj = g.adjacency();
    let n = g.num_nodes();
    let mut alive = vec![true; n];
    let mut deg: Vec<usize> = (0..n).map(|v| adj.degree(v)).collect();
    let mut x = vec![0u8; n];
    let remove = |v: usize, alive: &mut Vec<bool>, deg: &mut Vec<usize>| {
        alive[v] = false;
        for &u in adj.neighbors(v) {
            deg[u as usize] = deg[u as usize].saturating_sub(1);
        }
    };
    while let Some(v) = (0..n).filter(|&v| alive[v]).min_by_key(|&v| deg[v]) {
        x[v] = 1;
        remove(v, &mut alive, &mut deg);
        for &u in adj.neighbors(v) {
            if alive[u as usize] {
                remove(u as usize, &mut alive, &mut deg);
            }
        }
    }
    x
}

/// Repeatedly takes the node covering the most uncovered edges.
fn greedy_mvc(g: &Graph) -> Vec<u8> {
    let adj = g.adjacency();
    let n = g.num_nodes();
    let mut x = vec![0u8; n];
    let mut deg: Vec<usize> = (0..n).map(|v| adj.degree(v)).collect();
    loop {
        let v = (0..n)
            .max_by_key(|&v| (deg[v], core::cmp::Reverse(v)))
            .filter(|&v| deg[v] > 0);
        let Some(v) = v else { break };
        x[v] = 1;
        deg[v] = 0;
        for &u in adj.neighbors(v) {
            if x[u as usize] == 0 {
                deg[u as usize] -= 1;
            }
        }
    }
    x
}

/// Repeatedly takes the node whose closed neighbourhood dominates the most
/// not-yet-dominated nodes.
fn greedy_mds(g: &Graph) -> Vec<u8> {
    let adj = g.adjacency();
    let n = g.num_nodes();
    let mut x = vec![0u8; n];
    let mut dominated = vec![false; n];
    let mut remaining = n;
    while remaining > 0 {
        let gain =
            |v: usize| (!dominated[v]) as usize + adj.neighbors(v).iter().filter(|&&u| !dominated[u as usize]).count();
        let v = (0..n)
            .max_by_key(|&v| (gain(v), core::cmp::Reverse(v)))
            .expect("non-empty graph");
        x[v] = 1;
        for u in core::iter::once(v).chain(adj.neighbors(v).iter().map(|&u| u as usize)) {
            if !dominated[u] {
                dominated[u] = true;
                remaining -= 1;
            }
        }
    }
    x
}

/// Places nodes in index order on the side opposite to the majority of
/// their already placed neighbours.
fn greedy_maxcut(g: &Graph) -> Vec<u8> {
    let adj = g.adjacency();
    let n = g.num_nodes();
    let mut x = vec![0u8; n];
    for v in 0..n {
        let (mut zeros, mut ones) = (0, 0);
        for &u in adj.neighbors(v) {
            if (u as usize) < v {
                if x[u as usize] == 1 {
                    ones += 1;
                } else {
                    zeros += 1;
                }
            }
        }
        x[v] = (zeros > ones) as u8;
    }
    x
}

/// Settings of [`mean_field_anneal`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfaConfig {
    pub sweeps: usize,
    /// Starting temperature, lowered linearly to zero over the sweeps.
    pub t_start: f64,
    /// Weight of the previous probabilities in each update.
    pub damping: f64,
}

impl Default for MfaConfig {
    fn default() -> Self {
        Self {
            sweeps: 200,
            t_start: 1.0,
            damping: 0.5,
        }
    }
}

/// One synchronous damped update `q_i <- d q_i + (1 - d) sigmoid(-dE_i / T)`
/// where `dE_i` is the conditional expected-energy gap of setting `i` to 1
/// rather than 0. At `T = 0` the sigmoid becomes a step (0.5 on a tie).
/// Probabilities are clamped into `[EPS, 1 - EPS]`.
pub fn mfa_sweep(e: &EnergyPoly, q: &mut [f64], temperature: f64, damping: f64) {
    let targets: Vec<f64> = (0..q.len())
        .map(|i| {
            let (e0, e1) = e.pin_gap(q, i);
            let gap = e1 - e0;
            if temperature == 0.0 {
                match gap.partial_cmp(&0.0) {
                    Some(core::cmp::Ordering::Less) => 1.0,
                    Some(core::cmp::Ordering::Greater) => 0.0,
                    _ => 0.5,
                }
            } else if temperature.is_infinite() {
                0.5
            } else {
                let z = -gap / temperature;
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let ez = z.exp();
                    ez / (1.0 + ez)
                }
            }
        })
        .collect();
    for (p, t) in q.iter_mut().zip(targets) {
        *p = clamp_prob(damping * *p + (1.0 - damping) * t);
    }
}

/// Mean-field annealing from a slightly perturbed uniform field, followed by
/// rounding at 0.5 and a conditional-expectation repair pass over the
/// rounded corner.
pub fn mean_field_anneal<R: Rng + ?Sized>(e: &EnergyPoly, config: &MfaConfig, rng: &mut R) -> Result<Assignment> {
    if config.sweeps == 0 {
        return Err(invalid("sweeps must be at least 1"));
    }
    if !(0.0..1.0).contains(&config.damping) || config.t_start < 0.0 {
        return Err(invalid("damping must lie in [0, 1) and t_start must be non-negative"));
    }
    let mut q: Vec<f64> = (0..e.num_vars()).map(|_| rng.gen_range(0.45..0.55)).collect();
    for s in 0..config.sweeps {
        let temp = config.t_start * (1.0 - (s + 1) as f64 / config.sweeps as f64);
        mfa_sweep(e, &mut q, temp, config.damping);
    }
    let rounded = Assignment::from_bits(q.iter().map(|&p| (p >= 0.5) as u8).collect()).expect("bits are 0/1");
    conditional_expectation(&BernoulliField::degenerate(&rounded), e)
}

/// Settings of [`simulated_anneal`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaConfig {
    pub steps: usize,
    /// Starting temperature, lowered linearly to zero; infinity gives an
    /// unbiased random walk.
    pub t_start: f64,
}

impl Default for SaConfig {
    fn default() -> Self {
        Self {
            steps: 100_000,
            t_start: 1.0,
        }
    }
}

/// Single-flip Metropolis chain from a uniform random state with linearly
/// decaying temperature; returns the best state seen.
pub fn simulated_anneal<R: Rng + ?Sized>(e: &EnergyPoly, config: &SaConfig, rng: &mut R) -> Result<Assignment> {
    if config.steps == 0 {
        return Err(invalid("steps must be at least 1"));
    }
    if config.t_start.is_nan() || config.t_start < 0.0 {
        return Err(invalid("t_start must be non-negative"));
    }
    let n = e.num_vars();
    if n == 0 {
        return Ok(Assignment::zeros(0));
    }
    let mut p: Vec<f64> = (0..n).map(|_| rng.gen::<bool>() as u8 as f64).collect();
    let mut current = e.expected_unchecked(&p);
    let mut best = current;
    let mut best_p = p.clone();
    for s in 0..config.steps {
        let temp = if config.t_start.is_infinite() {
            f64::INFINITY
        } else {
            config.t_start * (1.0 - s as f64 / config.steps as f64)
        };
        let i = rng.gen_range(0..n);
        let delta = flip_delta(e, &p, i);
        let accept = delta <= 0.0 || (temp > 0.0 && rng.gen::<f64>() < (-delta / temp).exp());
        if accept {
            p[i] = 1.0 - p[i];
            current += delta;
            if current < best - TIE_TOLERANCE {
                best = current;
                best_p.copy_from_slice(&p);
            }
        }
    }
    Ok(Assignment::from_bits(best_p.iter().map(|&v| v as u8).collect()).expect("bits are 0/1"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{build_energy, is_feasible, DEFAULT_A, DEFAULT_B};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn energy(kind: ProblemKind, g: &Graph) -> EnergyPoly {
        build_energy(kind, g, DEFAULT_A, DEFAULT_B).unwrap()
    }

    #[test]
    fn brute_force_small_cases() {
        let edge = Graph::new(2, [(0, 1)]).unwrap();
        let (x, v) = brute_force(&energy(ProblemKind::Mis, &edge)).unwrap();
        assert_eq!(v, -1.0);
        // both singletons tie; the lower binary value selects node 0
        assert_eq!(x.bits(), &[1, 0]);
        let k3 = Graph::complete(3);
        assert_eq!(brute_force(&energy(ProblemKind::MaxCut, &k3)).unwrap().1, -2.0);
        let big = Graph::empty(27);
        assert!(matches!(
            brute_force(&energy(ProblemKind::Mis, &big)),
            Err(Error::SizeCap { .. })
        ));
    }

    #[test]
    fn greedy_cases() {
        let k4 = Graph::complete(4);
        assert_eq!(greedy(ProblemKind::Mis, &k4).count_ones(), 1);
        let mut edges = Vec::new();
        for c in 0..3u32 {
            for i in 0..4 {
                for j in i + 1..4 {
                    edges.push((4 * c + i, 4 * c + j));
                }
            }
        }
        let three = Graph::new(12, edges).unwrap();
        assert_eq!(greedy(ProblemKind::Mis, &three).count_ones(), 3);
        let star = Graph::new(6, (1..6).map(|v| (0, v))).unwrap();
        let d = greedy(ProblemKind::Mds, &star);
        assert_eq!(d.bits(), &[1, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn greedy_is_feasible() {
        for seed in 0..20 {
            let g = crate::graph::gen_er(14, 0.3, seed).unwrap();
            for kind in ProblemKind::ALL {
                assert!(is_feasible(kind, &g, &greedy(kind, &g)).unwrap(), "{kind:?}");
            }
        }
    }

    #[test]
    fn infinite_temperature_sweep_is_uniform() {
        let g = Graph::new(3, [(0, 1), (1, 2)]).unwrap();
        let e = energy(ProblemKind::Mis, &g);
        let mut q = vec![0.5; 3];
        mfa_sweep(&e, &mut q, f64::INFINITY, 0.5);
        assert_eq!(q, vec![0.5; 3]);
        let mut q = vec![0.9, 0.2, 0.1];
        for _ in 0..60 {
            mfa_sweep(&e, &mut q, 1e300, 0.5);
        }
        assert!(q.iter().all(|&p| (p - 0.5).abs() < 1e-12));
    }

    #[test]
    fn mfa_single_edge_selects_one_endpoint() {
        let g = Graph::new(2, [(0, 1)]).unwrap();
        let e = energy(ProblemKind::Mis, &g);
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = mean_field_anneal(&e, &MfaConfig::default(), &mut rng).unwrap();
            assert_eq!(x.count_ones(), 1);
            let mut again = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(x, mean_field_anneal(&e, &MfaConfig::default(), &mut again).unwrap());
        }
    }

    #[test]
    fn sa_frozen_at_infinity_never_worse_than_start() {
        let g = crate::graph::gen_er(10, 0.3, 1).unwrap();
        let e = energy(ProblemKind::Mis, &g);
        let cfg = SaConfig {
            steps: 50,
            t_start: f64::INFINITY,
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(4);
        let x = simulated_anneal(&e, &cfg, &mut r1).unwrap();
        let mut r2 = ChaCha8Rng::seed_from_u64(4);
        let start: Vec<u8> = (0..10).map(|_| r2.gen::<bool>() as u8).collect();
        let start = Assignment::from_bits(start).unwrap();
        assert!(e.value(&x).unwrap() <= e.value(&start).unwrap());
        let mut r3 = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(x, simulated_anneal(&e, &cfg, &mut r3).unwrap());
    }
}
