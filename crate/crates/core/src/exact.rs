//! Exact enumeration for small instances: partition functions, the full
//! distribution of the reverse process, and the divergences the training
//! objective bounds. These are the reference values the closed-form and
//! Monte-Carlo machinery is checked against.

use alloc::vec;
use alloc::vec::Vec;

// float math without std; unused when std is linked elsewhere in the build
#[allow(unused_imports)]
use num_traits::Float;

use crate::diffusion::{mf_log_prob_raw, BernoulliField, NoiseKind, NoiseSchedule, Trajectory};
use crate::energy::{Assignment, EnergyPoly};
use crate::error::{check_len, invalid, Error, Result};
use crate::gnn::{ModelParams, StepInput};
use crate::graph::Adjacency;
use crate::training::{trajectory_terms, LossBreakdown};

/// Largest node count for tables of per-state fields.
pub const FIELD_CAP: usize = 10;

/// Largest `N * (T + 1)` for enumerating whole paths.
pub const PATH_CAP: usize = 24;

/// Largest node count for [`log_partition`].
pub const PARTITION_CAP: usize = 22;

fn logsumexp(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log sum_x exp(-beta H(x))` by enumeration.
pub fn log_partition(e: &EnergyPoly, beta: f64) -> Result<f64> {
    let n = e.num_vars();
    if n > PARTITION_CAP {
        return Err(Error::SizeCap { n, cap: PARTITION_CAP });
    }
    Ok(logsumexp((0..1u64 << n).map(|c| {
        let x = Assignment::from_index(c, n);
        -beta * e.value_unchecked(x.bits())
    })))
}

/// The network's field for every state and every time index.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTable {
    n: usize,
    t_steps: usize,
    // probs[t - 1][code] = q(. | X_t = code)
    probs: Vec<Vec<Vec<f64>>>,
}

impl FieldTable {
    /// Evaluates `params` on all `2^N` states for each of its time indices,
    /// with fixed random features.
    pub fn new(params: &ModelParams, adjacency: &Adjacency, rand_feats: Option<&[f64]>) -> Result<Self> {
        let n = adjacency.num_nodes();
        if n > FIELD_CAP {
            return Err(Error::SizeCap { n, cap: FIELD_CAP });
        }
        let t_steps = params.config().t_train;
        let mut probs = Vec::with_capacity(t_steps);
        for t in 1..=t_steps {
            let mut row = Vec::with_capacity(1 << n);
            for code in 0..1u64 << n {
                let x = Assignment::from_index(code, n);
                let q = params.forward(&StepInput {
                    adjacency,
                    x_t: x.bits(),
                    condition: t,
                    rand_feats,
                })?;
                row.push(q.into_probs());
            }
            probs.push(row);
        }
        Ok(Self { n, t_steps, probs })
    }

    /// Table from explicit fields: `probs[t - 1][code]`.
    pub fn from_probs(n: usize, probs: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if n > FIELD_CAP {
            return Err(Error::SizeCap { n, cap: FIELD_CAP });
        }
        if probs.is_empty() {
            return Err(invalid("at least one step is required"));
        }
        for row in &probs {
            check_len(1 << n, row.len())?;
            for f in row {
                check_len(n, f.len())?;
                BernoulliField::new(f.clone())?;
            }
        }
        Ok(Self {
            n,
            t_steps: probs.len(),
            probs,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn t_steps(&self) -> usize {
        self.t_steps
    }

    /// `q(X_{t-1} | X_t = code)`.
    pub fn field(&self, t: usize, code: u64) -> &[f64] {
        &self.probs[t - 1][code as usize]
    }

    fn log_transitions(&self, t: usize) -> Vec<f64> {
        let size = 1usize << self.n;
        let mut out = vec![0.0; size * size];
        let ys: Vec<Assignment> = (0..size as u64).map(|c| Assignment::from_index(c, self.n)).collect();
        for x in 0..size {
            let f = self.field(t, x as u64);
            for (y, ya) in ys.iter().enumerate() {
                out[x * size + y] = mf_log_prob_raw(f, ya.bits());
            }
        }
        out
    }

    /// Distribution of `X_0` under the reverse process, indexed by code.
    pub fn marginal(&self) -> Vec<f64> {
        let size = 1usize << self.n;
        let mut dist = vec![1.0 / size as f64; size];
        for t in (1..=self.t_steps).rev() {
            let lt = self.log_transitions(t);
            let mut next = vec![0.0; size];
            for (x, &px) in dist.iter().enumerate() {
                for (y, ny) in next.iter_mut().enumerate() {
                    *ny += px * lt[x * size + y].exp();
                }
            }
            dist = next;
        }
        dist
    }

    /// Every reverse path `X_T, ..., X_1` with its probability. The returned
    /// state vectors end with a placeholder all-zero `X_0`, which no loss
    /// term depends on.
    pub fn reverse_paths(&self) -> Result<Vec<(f64, Vec<Assignment>)>> {
        if self.n * self.t_steps > PATH_CAP {
            return Err(Error::SizeCap {
                n: self.n * self.t_steps,
                cap: PATH_CAP,
            });
        }
        let size = 1u64 << self.n;
        let mut out = Vec::new();
        let mut stack = vec![0u64; self.t_steps];
        let mut done = false;
        while !done {
            // stack[k] is the code of X_{T-k}
            let mut logp = -(self.n as f64) * core::f64::consts::LN_2;
            for k in 1..self.t_steps {
                let t = self.t_steps - k + 1;
                let y = Assignment::from_index(stack[k], self.n);
                logp += mf_log_prob_raw(self.field(t, stack[k - 1]), y.bits());
            }
            let mut states: Vec<Assignment> = stack.iter().map(|&c| Assignment::from_index(c, self.n)).collect();
            states.push(Assignment::zeros(self.n));
            out.push((logp.exp(), states));
            // odometer increment
            done = true;
            for k in (0..self.t_steps).rev() {
                stack[k] += 1;
                if stack[k] < size {
                    done = false;
                    break;
                }
                stack[k] = 0;
            }
        }
        Ok(out)
    }
}

fn check_temperature(temperature: f64) -> Result<f64> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(invalid("exact divergences need a positive finite temperature"));
    }
    Ok(1.0 / temperature)
}

/// `D_KL(q(X_0) || p_B)` with `p_B ~ exp(-H / temperature)`.
pub fn marginal_kl(table: &FieldTable, e: &EnergyPoly, temperature: f64) -> Result<f64> {
    let beta = check_temperature(temperature)?;
    check_len(table.n, e.num_vars())?;
    let log_z = log_partition(e, beta)?;
    let q0 = table.marginal();
    let mut kl = 0.0;
    for (c, &q) in q0.iter().enumerate() {
        if q > 0.0 {
            let x = Assignment::from_index(c as u64, table.n);
            let log_p = -beta * e.value_unchecked(x.bits()) - log_z;
            kl += q * (q.ln() - log_p);
        }
    }
    Ok(kl)
}

/// `D_KL(q(X_0, ..., X_T) || p(X_0, ..., X_T))` where `p` is the target
/// Boltzmann distribution followed by the forward noise process.
pub fn joint_kl(table: &FieldTable, e: &EnergyPoly, kind: NoiseKind, temperature: f64) -> Result<f64> {
    let beta = check_temperature(temperature)?;
    let n = table.n;
    check_len(n, e.num_vars())?;
    let t_steps = table.t_steps;
    if n * (t_steps + 1) > PATH_CAP {
        return Err(Error::SizeCap {
            n: n * (t_steps + 1),
            cap: PATH_CAP,
        });
    }
    let size = 1usize << n;
    let states: Vec<Assignment> = (0..size as u64).map(|c| Assignment::from_index(c, n)).collect();
    let energies: Vec<f64> = states.iter().map(|x| e.value_unchecked(x.bits())).collect();
    let log_z = log_partition(e, beta)?;
    let schedule = NoiseSchedule::new(kind, t_steps, beta)?;
    // lq[t-1][x * size + y] = log q(X_{t-1} = y | X_t = x)
    // lp[t-1][y * size + x] = log p(X_t = x | X_{t-1} = y)
    let mut lq = Vec::with_capacity(t_steps);
    let mut lp = Vec::with_capacity(t_steps);
    for t in 1..=t_steps {
        lq.push(table.log_transitions(t));
        let beta_t = schedule.beta(t)?;
        let mut m = vec![0.0; size * size];
        match kind {
            NoiseKind::Cnd => {
                let (keep, flip) = ((1.0 - beta_t).ln(), beta_t.ln());
                for y in 0..size {
                    for x in 0..size {
                        let flips = ((x ^ y) as u64).count_ones() as f64;
                        m[y * size + x] = flips * flip + (n as f64 - flips) * keep;
                    }
                }
            }
            NoiseKind::And => {
                let b = beta * beta_t;
                let lz = if beta_t == 0.0 {
                    n as f64 * core::f64::consts::LN_2
                } else {
                    log_partition(e, b)?
                };
                for y in 0..size {
                    for x in 0..size {
                        m[y * size + x] = -b * energies[x] - lz;
                    }
                }
            }
        }
        lp.push(m);
    }
    // depth-first over X_T, X_{T-1}, ..., X_0
    let prior = -(n as f64) * core::f64::consts::LN_2;
    let mut kl = 0.0;
    let mut codes = vec![0usize; t_steps + 1];
    let mut log_q = vec![0.0; t_steps + 2];
    let mut log_p = vec![0.0; t_steps + 2];
    log_q[0] = prior;
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        depth: usize,
        t_steps: usize,
        size: usize,
        codes: &mut [usize],
        log_q: &mut [f64],
        log_p: &mut [f64],
        lq: &[Vec<f64>],
        lp: &[Vec<f64>],
        leaf: &dyn Fn(usize, f64, f64) -> f64,
        acc: &mut f64,
    ) {
        for c in 0..size {
            codes[depth] = c;
            if depth == 0 {
                log_q[1] = log_q[0];
                log_p[1] = 0.0;
            } else {
                // X_{T-depth} drawn from the field at t = T - depth + 1
                let t = t_steps - depth + 1;
                let x = codes[depth - 1];
                log_q[depth + 1] = log_q[depth] + lq[t - 1][x * size + c];
                log_p[depth + 1] = log_p[depth] + lp[t - 1][c * size + x];
            }
            if depth == t_steps {
                *acc += leaf(c, log_q[depth + 1], log_p[depth + 1]);
            } else {
                recurse(depth + 1, t_steps, size, codes, log_q, log_p, lq, lp, leaf, acc);
            }
        }
    }
    let leaf = |x0: usize, lq_path: f64, lp_noise: f64| {
        let lp_path = lp_noise - beta * energies[x0] - log_z;
        let q = lq_path.exp();
        if q > 0.0 {
            q * (lq_path - lp_path)
        } else {
            0.0
        }
    };
    recurse(
        0, t_steps, size, &mut codes, &mut log_q, &mut log_p, &lq, &lp, &leaf, &mut kl,
    );
    Ok(kl)
}

/// Exact expectation of the training loss over all reverse paths.
pub fn exact_loss(
    params: &ModelParams,
    adjacency: &Adjacency,
    e: &EnergyPoly,
    rand_feats: Option<&[f64]>,
    schedule: &NoiseSchedule,
    temperature: f64,
) -> Result<LossBreakdown> {
    let table = FieldTable::new(params, adjacency, rand_feats)?;
    let mut out = LossBreakdown::default();
    let mut weight_sum = 0.0;
    for (w, states) in table.reverse_paths()? {
        let traj = path_trajectory(&table, e, states, rand_feats)?;
        let l = trajectory_terms(&traj, temperature, schedule)?;
        out.entropy_term += w * l.entropy_term;
        out.noise_term += w * l.noise_term;
        out.energy_term += w * l.energy_term;
        out.total += w * l.total;
        weight_sum += w;
    }
    debug_assert!((weight_sum - 1.0).abs() < 1e-9);
    Ok(out)
}

/// Trajectory for given states `X_T, ..., X_0` using fields from `table`.
pub fn path_trajectory(
    table: &FieldTable,
    e: &EnergyPoly,
    states: Vec<Assignment>,
    rand_feats: Option<&[f64]>,
) -> Result<Trajectory> {
    let t_steps = table.t_steps;
    check_len(t_steps + 1, states.len())?;
    let fields: Vec<BernoulliField> = (0..t_steps)
        .map(|k| {
            let t = t_steps - k;
            BernoulliField::new(table.field(t, states[k].to_index()).to_vec())
        })
        .collect::<Result<_>>()?;
    let log_q = fields
        .iter()
        .zip(&states[1..])
        .map(|(f, x)| mf_log_prob_raw(f.probs(), x.bits()))
        .sum();
    Ok(Trajectory {
        per_step_entropy: fields.iter().map(crate::diffusion::entropy).collect(),
        per_step_expected_energy: fields.iter().map(|f| e.expected_unchecked(f.probs())).collect(),
        final_energy: e.value_unchecked(states[t_steps].bits()),
        conditions: (1..=t_steps).rev().collect(),
        rand_feats: rand_feats.map(|r| r.to_vec()),
        log_q,
        fields,
        states,
    })
}

/// Parameter-free constant that, added to the loss total, gives
/// `temperature * D_KL` of the joint distributions.
pub fn loss_constant(e: &EnergyPoly, schedule: &NoiseSchedule, temperature: f64) -> Result<f64> {
    let beta = check_temperature(temperature)?;
    let n = e.num_vars() as f64;
    let mut c = log_partition(e, beta)?;
    match schedule.kind {
        NoiseKind::Cnd => c -= n * core::f64::consts::LN_2,
        NoiseKind::And => {
            for t in 1..schedule.t_steps {
                c += log_partition(e, beta * schedule.beta(t)?)?;
            }
        }
    }
    Ok(temperature * c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::build_energy;
    use crate::gnn::ModelConfig;
    use crate::graph::{gen_er, Graph, ProblemKind};

    #[test]
    fn partition_of_empty_mis() {
        // independent nodes: Z = (1 + e^beta)^n
        let g = Graph::empty(3);
        let e = build_energy(ProblemKind::Mis, &g, 1.0, 1.01).unwrap();
        let lz = log_partition(&e, 0.7).unwrap();
        assert!((lz - 3.0 * (1.0 + 0.7f64.exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn paths_sum_to_one() {
        let cfg = ModelConfig {
            layers: 1,
            hidden: 4,
            t_train: 2,
            rand_features: 0,
        };
        let p = ModelParams::init(cfg, 3).unwrap();
        let g = gen_er(3, 0.5, 1).unwrap();
        let table = FieldTable::new(&p, &g.adjacency(), None).unwrap();
        let total: f64 = table.reverse_paths().unwrap().iter().map(|(w, _)| w).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let m: f64 = table.marginal().iter().sum();
        assert!((m - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_zero_temperature() {
        let g = Graph::empty(2);
        let e = build_energy(ProblemKind::Mis, &g, 1.0, 1.01).unwrap();
        let table = FieldTable::from_probs(2, vec![vec![vec![0.5; 2]; 4]]).unwrap();
        assert!(marginal_kl(&table, &e, 0.0).is_err());
    }
}
