//! Mean-field step distributions, the two forward noise processes and their
//! closed-form expectations.

use alloc::vec::Vec;

// float math without std; unused when std is linked elsewhere in the build
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::energy::{Assignment, EnergyPoly};
use crate::error::{check_len, invalid, Error, Result};
use crate::EPS;

/// Independent Bernoulli probabilities, one per node.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliField {
    probs: Vec<f64>,
}

#[inline]
pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

impl BernoulliField {
    /// Accepts any probabilities in `[0, 1]`; logarithms clamp internally.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("probabilities must lie in [0, 1]"));
        }
        Ok(Self { probs })
    }

    /// Clamps every entry into `[EPS, 1 - EPS]`.
    pub fn new_clamped(mut probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| p.is_nan()) {
            return Err(invalid("NaN probability"));
        }
        for p in &mut probs {
            *p = clamp_prob(*p);
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: alloc::vec![0.5; n],
        }
    }

    /// Field concentrated on `x`.
    pub fn degenerate(x: &Assignment) -> Self {
        Self {
            probs: x.bits().iter().map(|&b| b as f64).collect(),
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    /// Categorical noise: flips each bit with probability `beta_t`.
    Cnd,
    /// Annealed noise: Boltzmann distribution at inverse temperature
    /// `beta * beta_t`.
    And,
}

/// Forward-process schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    pub kind: NoiseKind,
    pub t_steps: usize,
    /// Inverse temperature scale of the annealed noise.
    pub beta_target: f64,
}

impl NoiseSchedule {
    pub fn new(kind: NoiseKind, t_steps: usize, beta_target: f64) -> Result<Self> {
        if t_steps == 0 {
            return Err(invalid("t_steps must be at least 1"));
        }
        Ok(Self {
            kind,
            t_steps,
            beta_target,
        })
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        match self.kind {
            NoiseKind::Cnd => cnd_beta(t, self.t_steps),
            NoiseKind::And => and_beta(t, self.t_steps),
        }
    }
}

fn check_step(t: usize, t_steps: usize) -> Result<()> {
    if t == 0 || t > t_steps {
        Err(Error::OutOfRange {
            what: "diffusion step",
            value: t as i64,
        })
    } else {
        Ok(())
    }
}

/// Flip probability of the categorical noise at step `t`: `1 / (T - t + 2)`.
pub fn cnd_beta(t: usize, t_steps: usize) -> Result<f64> {
    check_step(t, t_steps)?;
    Ok(1.0 / (t_steps - t + 2) as f64)
}

/// Inverse-temperature factor of the annealed noise at step `t`: `1 - t/T`.
pub fn and_beta(t: usize, t_steps: usize) -> Result<f64> {
    check_step(t, t_steps)?;
    Ok(1.0 - t as f64 / t_steps as f64)
}

/// `log p(x_t | x_prev)` of the categorical flip kernel.
pub fn cnd_log_prob(x_t: &Assignment, x_prev: &Assignment, beta_t: f64) -> Result<f64> {
    check_len(x_t.len(), x_prev.len())?;
    let (keep, flip) = ((1.0 - beta_t).ln(), beta_t.ln());
    Ok(x_t
        .bits()
        .iter()
        .zip(x_prev.bits())
        .map(|(a, b)| if a == b { keep } else { flip })
        .sum())
}

/// Draws `x_t ~ p(. | x_prev)` of the categorical kernel by flipping each
/// bit independently with probability `beta_t`.
pub fn cnd_forward_step<R: Rng + ?Sized>(x_prev: &Assignment, beta_t: f64, rng: &mut R) -> Assignment {
    let mut x = x_prev.clone();
    for b in x.bits_mut() {
        if rng.gen::<f64>() < beta_t {
            *b = 1 - *b;
        }
    }
    x
}

/// Exact mean of [`cnd_log_prob`] over `x_prev ~ q_prev`.
pub fn cnd_expected_log_prob(x_t: &Assignment, q_prev: &BernoulliField, beta_t: f64) -> Result<f64> {
    check_len(x_t.len(), q_prev.len())?;
    Ok(cnd_expected_log_prob_raw(x_t.bits(), q_prev.probs(), beta_t))
}

pub(crate) fn cnd_expected_log_prob_raw(x_t: &[u8], q_prev: &[f64], beta_t: f64) -> f64 {
    let (keep, flip) = ((1.0 - beta_t).ln(), beta_t.ln());
    x_t.iter()
        .zip(q_prev)
        .map(|(&x, &q)| {
            let match_p = if x == 1 { q } else { 1.0 - q };
            match_p * keep + (1.0 - match_p) * flip
        })
        .sum()
}

/// `d cnd_expected_log_prob / d q_prev[i]`.
pub(crate) fn cnd_expected_log_prob_slope(x: u8, beta_t: f64) -> f64 {
    let d = (1.0 - beta_t).ln() - beta_t.ln();
    if x == 1 {
        d
    } else {
        -d
    }
}

/// `-beta * beta_t * H(x_t)`; the normalisation constant is omitted.
pub fn and_log_prob_unnormalized(x_t: &Assignment, e: &EnergyPoly, beta: f64, beta_t: f64) -> Result<f64> {
    if beta_t == 0.0 {
        check_len(e.num_vars(), x_t.len())?;
        return Ok(0.0);
    }
    Ok(-beta * beta_t * e.value(x_t)?)
}

/// Exact mean of [`and_log_prob_unnormalized`] over `x_t ~ q_t`.
pub fn and_expected_log_prob(q_t: &BernoulliField, e: &EnergyPoly, beta: f64, beta_t: f64) -> Result<f64> {
    if beta_t == 0.0 {
        check_len(e.num_vars(), q_t.len())?;
        return Ok(0.0);
    }
    Ok(-beta * beta_t * e.expected(q_t.probs())?)
}

/// Shannon entropy of the mean-field distribution, in nats.
pub fn entropy(q: &BernoulliField) -> f64 {
    entropy_raw(q.probs())
}

pub(crate) fn entropy_raw(q: &[f64]) -> f64 {
    q.iter()
        .map(|&p| {
            let p = clamp_prob(p);
            -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
        })
        .sum()
}

/// `d entropy / d q_i = log((1 - q_i) / q_i)`.
pub(crate) fn entropy_slope(p: f64) -> f64 {
    let p = clamp_prob(p);
    (1.0 - p).ln() - p.ln()
}

/// Independent Bernoulli draw from `q`.
pub fn mf_sample<R: Rng + ?Sized>(q: &BernoulliField, rng: &mut R) -> Assignment {
    let bits = q.probs().iter().map(|&p| (rng.gen::<f64>() < p) as u8).collect();
    Assignment::from_bits(bits).expect("bits are 0/1")
}

/// Log-probability of `x` under `q` (probabilities clamped).
pub fn mf_log_prob(q: &BernoulliField, x: &Assignment) -> Result<f64> {
    check_len(q.len(), x.len())?;
    Ok(mf_log_prob_raw(q.probs(), x.bits()))
}

pub(crate) fn mf_log_prob_raw(q: &[f64], x: &[u8]) -> f64 {
    q.iter()
        .zip(x)
        .map(|(&p, &b)| {
            let p = clamp_prob(p);
            if b == 1 {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum()
}

/// `d log q(x) / d q_i`.
pub(crate) fn mf_log_prob_slope(p: f64, x: u8) -> f64 {
    let p = clamp_prob(p);
    if x == 1 {
        1.0 / p
    } else {
        -1.0 / (1.0 - p)
    }
}

/// Uniform draw over `{0,1}^n`, the stationary distribution of both noise
/// processes.
pub fn sample_stationary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Assignment> {
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    Ok(Assignment::from_bits((0..n).map(|_| rng.gen::<bool>() as u8).collect()).expect("bits are 0/1"))
}

/// One reverse-process sample path `X_T, ..., X_0`.
///
/// `states[k]` is `X_{T-k}`; `fields[k]` is `q(X_{T-k-1} | X_{T-k})`, the
/// field that produced `states[k + 1]`, and `conditions[k]` the time index
/// the network was conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Assignment>,
    pub fields: Vec<BernoulliField>,
    pub conditions: Vec<usize>,
    /// Random node features, fixed for the whole path.
    pub rand_feats: Option<Vec<f64>>,
    /// `sum_t log q(X_{t-1} | X_t)` over every transition.
    pub log_q: f64,
    pub per_step_entropy: Vec<f64>,
    /// Closed-form mean energy of each field.
    pub per_step_expected_energy: Vec<f64>,
    /// Energy of the sampled `X_0`.
    pub final_energy: f64,
}

impl Trajectory {
    pub fn t_steps(&self) -> usize {
        self.fields.len()
    }

    pub fn final_state(&self) -> &Assignment {
        self.states.last().expect("trajectory has states")
    }

    pub fn final_field(&self) -> &BernoulliField {
        self.fields.last().expect("trajectory has fields")
    }

    /// `X_t` for `t` in `0..=T`.
    pub fn state_at(&self, t: usize) -> &Assignment {
        &self.states[self.t_steps() - t]
    }

    /// `q(X_{t-1} | X_t)` for `t` in `1..=T`.
    pub fn field_at(&self, t: usize) -> &BernoulliField {
        &self.fields[self.t_steps() - t]
    }

    /// Sum of per-transition log-probabilities recomputed from the fields.
    pub fn recompute_log_q(&self) -> f64 {
        self.fields
            .iter()
            .zip(&self.states[1..])
            .map(|(f, x)| mf_log_prob_raw(f.probs(), x.bits()))
            .sum()
    }
}
