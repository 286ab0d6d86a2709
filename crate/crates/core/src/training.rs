//! The joint variational training objective, its gradient estimator, the
//! RAdam optimizer and the annealed training loop.
//!
//! For one reverse path `X_T, ..., X_0` with fields `F_t = q(X_{t-1} | X_t)`
//! the per-path integrand is
//!
//! ```text
//! L(path) = sum_t -T * S(F_t)                          entropy
//!         + sum_t -T * E_{F_t}[log p(X_t | X_{t-1})]    categorical noise
//!           or sum_{t<T} beta_t * E_{F_{t+1}}[H]        annealed noise
//!         + E_{F_1}[H]                                  energy
//! ```
//!
//! Every piece is a closed-form expectation over the last draw of its step,
//! so `E[L]` equals the joint bound up to parameter-free constants and `L`
//! does not depend on the sampled `X_0`. Its gradient is the pathwise part
//! plus a score-function part over the draws `X_{T-1}, ..., X_1`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

// float math without std; unused when std is linked elsewhere in the build
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    cnd_expected_log_prob_raw, cnd_expected_log_prob_slope, entropy_raw, entropy_slope, mf_log_prob_raw,
    mf_log_prob_slope, mf_sample, sample_stationary, BernoulliField, NoiseKind, NoiseSchedule, Trajectory,
};
use crate::energy::{build_energy, Assignment, EnergyPoly, DEFAULT_A, DEFAULT_B};
use crate::error::{check_len, invalid, Error, Result};
use crate::gnn::{ForwardCache, ModelConfig, ModelParams, ParamGrads, StepInput, RAND_FEATURES};
use crate::graph::{Adjacency, Graph, ProblemKind};

/// Training hyperparameters. Field names double as the configuration file
/// keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub t_steps: usize,
    pub l_layers: usize,
    pub n_h: usize,
    pub lr: f64,
    pub t_start: f64,
    pub n_anneal: usize,
    pub m_omega: usize,
    pub m_kl: usize,
    pub noise: NoiseKind,
    pub seed: u64,
    pub grad_clip: f64,
    pub random_features: bool,
    pub problem: ProblemKind,
}

/// Names accepted by [`TrainConfig::preset`].
pub const PRESET_NAMES: [&str; 9] = [
    "rb-large-mis",
    "rb-small-mis",
    "rb-small-maxcl",
    "ba-large-maxcut",
    "ba-small-maxcut",
    "ba-large-mds",
    "ba-small-mds",
    "rb-200-mvc",
    "desk",
];

impl TrainConfig {
    /// Published hyperparameters per dataset plus the small `desk` setup
    /// (15-node random graphs, trains in about a minute on one core).
    pub fn preset(name: &str) -> Option<Self> {
        use NoiseKind::{And, Cnd};
        use ProblemKind::*;
        #[allow(clippy::type_complexity)]
        let (lr, t_start, layers, steps, n_anneal, noise, m_omega, m_kl, problem, rand, n_h): (
            f64,
            f64,
            usize,
            usize,
            usize,
            NoiseKind,
            usize,
            usize,
            ProblemKind,
            bool,
            usize,
        ) = match name {
            "rb-large-mis" => (0.002, 0.3, 7, 4, 3000, And, 18, 5, Mis, true, 64),
            "rb-small-mis" => (0.002, 0.4, 8, 6, 4000, And, 30, 10, Mis, true, 64),
            "rb-small-maxcl" => (0.002, 0.5, 8, 5, 3000, Cnd, 20, 8, MaxCl, false, 64),
            "ba-large-maxcut" => (0.002, 0.2, 4, 6, 1000, And, 20, 10, MaxCut, false, 64),
            "ba-small-maxcut" => (0.002, 0.2, 8, 4, 2000, And, 20, 10, MaxCut, false, 64),
            "ba-large-mds" => (0.003, 0.3, 8, 3, 2000, And, 20, 10, Mds, false, 64),
            "ba-small-mds" => (0.003, 0.3, 8, 5, 2000, And, 20, 10, Mds, false, 64),
            "rb-200-mvc" => (0.001, 0.4, 8, 4, 4500, And, 30, 10, Mvc, true, 64),
            "desk" => (0.005, 0.4, 4, 4, 500, And, 8, 8, Mis, false, 32),
            _ => return None,
        };
        Some(Self {
            t_steps: steps,
            l_layers: layers,
            n_h,
            lr,
            t_start,
            n_anneal,
            m_omega,
            m_kl,
            noise,
            seed: 0,
            grad_clip: 1.0,
            random_features: rand,
            problem,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("t_steps", self.t_steps),
            ("l_layers", self.l_layers),
            ("n_h", self.n_h),
            ("n_anneal", self.n_anneal),
            ("m_omega", self.m_omega),
            ("m_kl", self.m_kl),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(invalid(alloc::format!("{name} must be at least 1")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid("lr must be positive"));
        }
        if !(self.t_start >= 0.0 && self.t_start.is_finite()) {
            return Err(invalid("t_start must be non-negative"));
        }
        if !(self.grad_clip > 0.0 && self.grad_clip.is_finite()) {
            return Err(invalid("grad_clip must be positive"));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            layers: self.l_layers,
            hidden: self.n_h,
            t_train: self.t_steps,
            rand_features: if self.random_features { RAND_FEATURES } else { 0 },
        }
    }

    pub fn schedule(&self) -> NoiseSchedule {
        NoiseSchedule {
            kind: self.noise,
            t_steps: self.t_steps,
            beta_target: 1.0,
        }
    }
}

fn beta_of(schedule: &NoiseSchedule, t: usize) -> f64 {
    schedule.beta(t).expect("step in range")
}

/// Loss split into its three groups. Every field is the contribution to
/// `total`, i.e. already multiplied by its temperature factor, so that the
/// annealed-noise term stays finite at zero temperature. Parameter-free
/// constants are omitted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `-T * sum_t E[S(F_t)]`.
    pub entropy_term: f64,
    /// `-T * sum_t E[log p(X_t | X_{t-1})]` without normalisers.
    pub noise_term: f64,
    /// `E[H(X_0)]`.
    pub energy_term: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn new(entropy_term: f64, noise_term: f64, energy_term: f64) -> Self {
        Self {
            entropy_term,
            noise_term,
            energy_term,
            total: entropy_term + noise_term + energy_term,
        }
    }

    fn add_scaled(&mut self, other: &Self, w: f64) {
        self.entropy_term += w * other.entropy_term;
        self.noise_term += w * other.noise_term;
        self.energy_term += w * other.energy_term;
        self.total += w * other.total;
    }
}

/// Linear annealing `T_start * max(0, 1 - step / N_anneal)`.
pub fn temperature(step: usize, t_start: f64, n_anneal: usize) -> f64 {
    if n_anneal == 0 {
        return 0.0;
    }
    t_start * (1.0 - step as f64 / n_anneal as f64).max(0.0)
}

fn sample_rand_feats<R: Rng + ?Sized>(params: &ModelParams, n: usize, rng: &mut R) -> Option<Vec<f64>> {
    let k = params.config().rand_features;
    (k > 0).then(|| (0..n * k).map(|_| rng.gen::<f64>()).collect())
}

/// Samples one reverse path, running one network step per entry of
/// `conditions` (time indices in execution order). When `caches` is given
/// the forward intermediates of every step are kept for a later backward
/// pass.
pub fn sample_path<R: Rng + ?Sized>(
    params: &ModelParams,
    adjacency: &Adjacency,
    energy: &EnergyPoly,
    conditions: &[usize],
    rng: &mut R,
    mut caches: Option<&mut Vec<ForwardCache>>,
) -> Result<Trajectory> {
    let n = adjacency.num_nodes();
    check_len(n, energy.num_vars())?;
    if conditions.is_empty() {
        return Err(invalid("at least one reverse step is required"));
    }
    let rand_feats = sample_rand_feats(params, n, rng);
    let mut states = vec![sample_stationary(n, rng)?];
    let mut fields = Vec::with_capacity(conditions.len());
    if let Some(c) = caches.as_deref_mut() {
        c.resize_with(conditions.len(), ForwardCache::default);
    }
    let mut scratch = ForwardCache::default();
    for (k, &condition) in conditions.iter().enumerate() {
        let cache = match caches.as_deref_mut() {
            Some(c) => &mut c[k],
            None => &mut scratch,
        };
        let input = StepInput {
            adjacency,
            x_t: states[k].bits(),
            condition,
            rand_feats: rand_feats.as_deref(),
        };
        params.forward_cached(&input, cache)?;
        let field = cache.field();
        states.push(mf_sample(&field, rng));
        fields.push(field);
    }
    Ok(finish_trajectory(
        states,
        fields,
        conditions.to_vec(),
        rand_feats,
        energy,
    ))
}

fn finish_trajectory(
    states: Vec<Assignment>,
    fields: Vec<BernoulliField>,
    conditions: Vec<usize>,
    rand_feats: Option<Vec<f64>>,
    energy: &EnergyPoly,
) -> Trajectory {
    let log_q = fields
        .iter()
        .zip(&states[1..])
        .map(|(f, x)| mf_log_prob_raw(f.probs(), x.bits()))
        .sum();
    let per_step_entropy = fields.iter().map(|f| entropy_raw(f.probs())).collect();
    let per_step_expected_energy = fields.iter().map(|f| energy.expected_unchecked(f.probs())).collect();
    let final_energy = energy.value_unchecked(states.last().expect("non-empty").bits());
    Trajectory {
        states,
        fields,
        conditions,
        rand_feats,
        log_q,
        per_step_entropy,
        per_step_expected_energy,
        final_energy,
    }
}

/// Training-time conditions `T, T-1, ..., 1`.
pub fn training_conditions(t_steps: usize) -> Vec<usize> {
    (1..=t_steps).rev().collect()
}

/// `m_kl` independent reverse paths of the training schedule.
pub fn rollout<R: Rng + ?Sized>(
    params: &ModelParams,
    adjacency: &Adjacency,
    energy: &EnergyPoly,
    m_kl: usize,
    rng: &mut R,
) -> Result<Vec<Trajectory>> {
    let conditions = training_conditions(params.config().t_train);
    (0..m_kl)
        .map(|_| sample_path(params, adjacency, energy, &conditions, rng, None))
        .collect()
}

/// Rebuilds a trajectory of the training schedule from given states
/// `X_T, ..., X_0`, evaluating the network at every step.
pub fn trajectory_from_states(
    params: &ModelParams,
    adjacency: &Adjacency,
    energy: &EnergyPoly,
    states: Vec<Assignment>,
    rand_feats: Option<Vec<f64>>,
) -> Result<Trajectory> {
    let t_steps = params.config().t_train;
    check_len(t_steps + 1, states.len())?;
    let conditions = training_conditions(t_steps);
    let mut fields = Vec::with_capacity(t_steps);
    for (k, &condition) in conditions.iter().enumerate() {
        check_len(adjacency.num_nodes(), states[k].len())?;
        fields.push(params.forward(&StepInput {
            adjacency,
            x_t: states[k].bits(),
            condition,
            rand_feats: rand_feats.as_deref(),
        })?);
    }
    check_len(adjacency.num_nodes(), states[t_steps].len())?;
    Ok(finish_trajectory(states, fields, conditions, rand_feats, energy))
}

fn check_traj(traj: &Trajectory, schedule: &NoiseSchedule) -> Result<()> {
    check_len(schedule.t_steps, traj.t_steps())?;
    check_len(schedule.t_steps + 1, traj.states.len())?;
    check_len(schedule.t_steps, traj.per_step_expected_energy.len())?;
    check_len(schedule.t_steps, traj.per_step_entropy.len())
}

/// Per-path integrand of the loss, split into its groups.
pub fn trajectory_terms(traj: &Trajectory, temperature: f64, schedule: &NoiseSchedule) -> Result<LossBreakdown> {
    check_traj(traj, schedule)?;
    let t_steps = schedule.t_steps;
    let entropy: f64 = traj.per_step_entropy.iter().sum();
    let noise = match schedule.kind {
        NoiseKind::Cnd => {
            let mut s = 0.0;
            for t in 1..=t_steps {
                let k = t_steps - t;
                s += cnd_expected_log_prob_raw(traj.states[k].bits(), traj.fields[k].probs(), beta_of(schedule, t));
            }
            if temperature == 0.0 {
                0.0
            } else {
                -temperature * s
            }
        }
        // beta_t * E[H(X_t)], X_t drawn from F_{t+1}
        NoiseKind::And => (1..t_steps)
            .map(|t| beta_of(schedule, t) * traj.per_step_expected_energy[t_steps - t - 1])
            .sum(),
    };
    let energy = traj.per_step_expected_energy[t_steps - 1];
    Ok(LossBreakdown::new(-temperature * entropy, noise, energy))
}

/// Contribution of every network step to the path integrand, in execution
/// order: entry `k` collects the terms that read field `k` (its entropy, its
/// noise term and, for the last step, the energy). The entries sum to the
/// `total` of [`trajectory_terms`].
pub fn step_contributions(traj: &Trajectory, temperature: f64, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    check_traj(traj, schedule)?;
    let t_steps = schedule.t_steps;
    Ok((0..t_steps)
        .map(|k| {
            let t = t_steps - k;
            let mut c = -temperature * traj.per_step_entropy[k];
            match schedule.kind {
                NoiseKind::Cnd if temperature != 0.0 => {
                    c -= temperature
                        * cnd_expected_log_prob_raw(
                            traj.states[k].bits(),
                            traj.fields[k].probs(),
                            beta_of(schedule, t),
                        );
                }
                NoiseKind::And if t >= 2 => c += beta_of(schedule, t - 1) * traj.per_step_expected_energy[k],
                _ => {}
            }
            if t == 1 {
                c += traj.per_step_expected_energy[k];
            }
            c
        })
        .collect())
}

/// Score weights of one instance's paths: entry `[m][k]` multiplies
/// `grad log q(X at step k + 1 | field k)` of path `m`. Only the
/// contributions of later steps depend on that sample, so the weight is
/// their sum (the reward-to-go) minus a leave-one-out baseline over the
/// other paths (see [`centered_weights`]). The last step has no sampled
/// successor in the score and gets weight 0.
pub fn score_weights(trajs: &[Trajectory], temperature: f64, schedule: &NoiseSchedule) -> Result<Vec<Vec<f64>>> {
    let t_steps = schedule.t_steps;
    let to_go: Vec<Vec<f64>> = trajs
        .iter()
        .map(|traj| {
            let c = step_contributions(traj, temperature, schedule)?;
            let mut g = vec![0.0; t_steps + 1];
            for k in (0..t_steps).rev() {
                g[k] = g[k + 1] + c[k];
            }
            Ok(g)
        })
        .collect::<Result<_>>()?;
    let mut weights = vec![vec![0.0; t_steps]; trajs.len()];
    for k in 0..t_steps.saturating_sub(1) {
        let later: Vec<f64> = to_go.iter().map(|g| g[k + 1]).collect();
        for (w, c) in weights.iter_mut().zip(centered_weights(&later)) {
            w[k] = c;
        }
    }
    Ok(weights)
}

/// Mean of [`trajectory_terms`] over a batch of paths.
pub fn loss_terms(trajs: &[Trajectory], temperature: f64, schedule: &NoiseSchedule) -> Result<LossBreakdown> {
    if trajs.is_empty() {
        return Err(invalid("no trajectories"));
    }
    let mut out = LossBreakdown::default();
    let w = 1.0 / trajs.len() as f64;
    for traj in trajs {
        out.add_scaled(&trajectory_terms(traj, temperature, schedule)?, w);
    }
    Ok(out)
}

/// `v_m - b_m`, where the baseline `b_m` is the mean of the other entries
/// (equivalently the batch mean with the `M / (M - 1)` correction). A single
/// entry gets weight 0.
pub fn centered_weights(values: &[f64]) -> Vec<f64> {
    let m = values.len();
    if m < 2 {
        return vec![0.0; m];
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    let scale = m as f64 / (m - 1) as f64;
    values.iter().map(|v| scale * (v - mean)).collect()
}

/// Adjoint of the loss with respect to the output of the network step that
/// produced field index `k` of `traj`, for one path with score weight `w`.
#[allow(clippy::too_many_arguments)]
fn step_seed(
    traj: &Trajectory,
    k: usize,
    energy: &EnergyPoly,
    temperature: f64,
    schedule: &NoiseSchedule,
    w: f64,
    scale: f64,
    out: &mut Vec<f64>,
) {
    let t_steps = schedule.t_steps;
    let t = t_steps - k;
    let q = traj.fields[k].probs();
    out.clear();
    out.extend(q.iter().map(|&p| -temperature * entropy_slope(p)));
    if schedule.kind == NoiseKind::Cnd && temperature != 0.0 {
        let beta = beta_of(schedule, t);
        for (o, &x) in out.iter_mut().zip(traj.states[k].bits()) {
            *o -= temperature * cnd_expected_log_prob_slope(x, beta);
        }
    }
    let energy_weight = if t == 1 {
        1.0
    } else if schedule.kind == NoiseKind::And {
        beta_of(schedule, t - 1)
    } else {
        0.0
    };
    if energy_weight != 0.0 {
        energy.expected_grad(q, energy_weight, out);
    }
    if t >= 2 && w != 0.0 {
        for ((o, &p), &x) in out.iter_mut().zip(q).zip(traj.states[k + 1].bits()) {
            *o += w * mf_log_prob_slope(p, x);
        }
    }
    for o in out.iter_mut() {
        *o *= scale;
    }
}

#[allow(clippy::too_many_arguments)]
fn accumulate_instance(
    params: &ModelParams,
    adjacency: &Adjacency,
    energy: &EnergyPoly,
    trajs: &[Trajectory],
    caches: Option<&[Vec<ForwardCache>]>,
    temperature: f64,
    schedule: &NoiseSchedule,
    scale: f64,
    grads: &mut ParamGrads,
) -> Result<LossBreakdown> {
    let terms = trajs
        .iter()
        .map(|t| trajectory_terms(t, temperature, schedule))
        .collect::<Result<Vec<_>>>()?;
    let weights = score_weights(trajs, temperature, schedule)?;
    let mut seed = Vec::new();
    let mut scratch = ForwardCache::default();
    for (m, traj) in trajs.iter().enumerate() {
        for k in 0..traj.t_steps() {
            let input = StepInput {
                adjacency,
                x_t: traj.states[k].bits(),
                condition: traj.conditions[k],
                rand_feats: traj.rand_feats.as_deref(),
            };
            let cache = match caches {
                Some(c) => &c[m][k],
                None => {
                    params.forward_cached(&input, &mut scratch)?;
                    &scratch
                }
            };
            step_seed(traj, k, energy, temperature, schedule, weights[m][k], scale, &mut seed);
            params.backward(&input, cache, &seed, grads)?;
        }
    }
    let mut out = LossBreakdown::default();
    let w = 1.0 / trajs.len() as f64;
    for t in &terms {
        out.add_scaled(t, w);
    }
    Ok(out)
}

/// Gradient estimate of the loss of one instance from its sampled paths:
/// the pathwise derivative of every closed-form term plus the score-function
/// term with the weights of [`score_weights`].
pub fn estimate_gradient(
    params: &ModelParams,
    adjacency: &Adjacency,
    energy: &EnergyPoly,
    trajs: &[Trajectory],
    temperature: f64,
    schedule: &NoiseSchedule,
) -> Result<(LossBreakdown, ParamGrads)> {
    if trajs.is_empty() {
        return Err(invalid("no trajectories"));
    }
    for t in trajs {
        check_traj(t, schedule)?;
    }
    let mut grads = params.zero_grads();
    let loss = accumulate_instance(
        params,
        adjacency,
        energy,
        trajs,
        None,
        temperature,
        schedule,
        1.0 / trajs.len() as f64,
        &mut grads,
    )?;
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            context: "gradient",
            step: 0,
        });
    }
    Ok((loss, grads))
}

/// Gradient of one path's integrand with an explicit score weight `w`
/// (`w = 0` gives the pathwise part only).
pub fn trajectory_gradient(
    params: &ModelParams,
    adjacency: &Adjacency,
    energy: &EnergyPoly,
    traj: &Trajectory,
    w: f64,
    temperature: f64,
    schedule: &NoiseSchedule,
) -> Result<ParamGrads> {
    check_traj(traj, schedule)?;
    let mut grads = params.zero_grads();
    let mut seed = Vec::new();
    let mut cache = ForwardCache::default();
    for k in 0..traj.t_steps() {
        let input = StepInput {
            adjacency,
            x_t: traj.states[k].bits(),
            condition: traj.conditions[k],
            rand_feats: traj.rand_feats.as_deref(),
        };
        params.forward_cached(&input, &mut cache)?;
        step_seed(traj, k, energy, temperature, schedule, w, 1.0, &mut seed);
        params.backward(&input, &cache, &seed, &mut grads)?;
    }
    Ok(grads)
}

/// Rescales `grads` to norm `max_norm` if its global L2 norm exceeds it.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ParamGrads, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in &mut grads.0 {
            *g *= s;
        }
    }
    norm
}

/// Optimizer state of rectified Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RAdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl RAdamState {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One rectified-Adam update of `params` in place. While the variance
/// estimate is too young (`rho_t <= 5`) the step is a bias-corrected
/// momentum step without adaptive scaling.
pub fn radam_step(state: &mut RAdamState, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    check_len(params.len(), grads.len())?;
    check_len(params.len(), state.m.len())?;
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let t = state.step as f64;
    let b1t = b1.powf(t);
    let b2t = b2.powf(t);
    let rho_inf = 2.0 / (1.0 - b2) - 1.0;
    let rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
    let rect = if rho_t > 5.0 {
        Some(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt())
    } else {
        None
    };
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / (1.0 - b1t);
        match rect {
            Some(r) => {
                let adapt = (1.0 - b2t).sqrt() / (v.sqrt() + state.eps);
                *p -= lr * m_hat * r * adapt;
            }
            None => *p -= lr * m_hat,
        }
    }
    Ok(())
}

/// Per-step training record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub temperature: f64,
    pub entropy_term: f64,
    pub noise_term: f64,
    pub energy_term: f64,
    pub total: f64,
    /// Norm before clipping.
    pub grad_norm: f64,
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<StepLog>,
    pub optimizer: RAdamState,
}

struct Instance {
    adjacency: Adjacency,
    energy: EnergyPoly,
}

/// Trains a fresh model for `config.n_anneal` optimizer steps on `graphs`,
/// calling `on_step` after every update.
pub fn train<F>(config: &TrainConfig, graphs: &[Graph], on_step: F) -> Result<TrainOutcome>
where
    F: FnMut(&StepLog, &ModelParams),
{
    let params = ModelParams::init(config.model_config(), config.seed)?;
    train_from(config, graphs, params, on_step)
}

/// Like [`train`] but starting from given parameters.
pub fn train_from<F>(
    config: &TrainConfig,
    graphs: &[Graph],
    mut params: ModelParams,
    mut on_step: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&StepLog, &ModelParams),
{
    config.validate()?;
    if graphs.is_empty() {
        return Err(invalid("training set is empty"));
    }
    if *params.config() != config.model_config() {
        return Err(invalid("parameters do not match the configured architecture"));
    }
    let instances = graphs
        .iter()
        .map(|g| {
            if g.num_nodes() == 0 {
                return Err(invalid("graph without nodes"));
            }
            Ok(Instance {
                adjacency: g.adjacency(),
                energy: build_energy(config.problem, g, DEFAULT_A, DEFAULT_B)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let schedule = config.schedule();
    let conditions = training_conditions(config.t_steps);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut opt = RAdamState::new(params.len());
    let mut log = Vec::with_capacity(config.n_anneal);
    let mut caches: Vec<Vec<ForwardCache>> = (0..config.m_kl).map(|_| Vec::new()).collect();
    let scale = 1.0 / (config.m_omega * config.m_kl) as f64;
    for step in 0..config.n_anneal {
        let temp = temperature(step, config.t_start, config.n_anneal);
        let mut grads = params.zero_grads();
        let mut loss = LossBreakdown::default();
        for _ in 0..config.m_omega {
            let inst = &instances[rng.gen_range(0..instances.len())];
            let trajs = caches
                .iter_mut()
                .map(|c| sample_path(&params, &inst.adjacency, &inst.energy, &conditions, &mut rng, Some(c)))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| at_step(e, step))?;
            let l = accumulate_instance(
                &params,
                &inst.adjacency,
                &inst.energy,
                &trajs,
                Some(&caches),
                temp,
                &schedule,
                scale,
                &mut grads,
            )
            .map_err(|e| at_step(e, step))?;
            loss.add_scaled(&l, 1.0 / config.m_omega as f64);
        }
        if !loss.total.is_finite() {
            return Err(Error::NonFinite { context: "loss", step });
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite {
                context: "gradient",
                step,
            });
        }
        let grad_norm = clip_global_norm(&mut grads, config.grad_clip);
        radam_step(&mut opt, params.values_mut(), &grads.0, config.lr)?;
        if params.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "parameters",
                step,
            });
        }
        let entry = StepLog {
            step,
            temperature: temp,
            entropy_term: loss.entropy_term,
            noise_term: loss.noise_term,
            energy_term: loss.energy_term,
            total: loss.total,
            grad_norm,
        };
        on_step(&entry, &params);
        log.push(entry);
    }
    Ok(TrainOutcome {
        params,
        log,
        optimizer: opt,
    })
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite { context, .. } => Error::NonFinite { context, step },
        other => other,
    }
}

/// Human-readable summary of a config, used in logs.
pub fn describe(config: &TrainConfig) -> String {
    alloc::format!(
        "{} T={} L={} n_h={} lr={} T_start={} N_anneal={} M_omega={} M_KL={} noise={:?}",
        config.problem.name(),
        config.t_steps,
        config.l_layers,
        config.n_h,
        config.lr,
        config.t_start,
        config.n_anneal,
        config.m_omega,
        config.m_kl,
        config.noise
    )
}
