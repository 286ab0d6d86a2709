//! Turning a trained model into solutions: reverse sampling with an optional
//! extended step schedule, conditional-expectation derandomization and its
//! block-wise variant.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::diffusion::BernoulliField;
use crate::energy::{build_energy, is_feasible, objective_size, Assignment, EnergyPoly, Factor, DEFAULT_A, DEFAULT_B};
use crate::error::{check_len, invalid, Error, Result};
use crate::gnn::ModelParams;
use crate::graph::{Adjacency, Graph, ProblemKind};
use crate::training::sample_path;

/// Largest block size accepted by [`ce_st`].
pub const MAX_TOKEN: usize = 16;

/// Time index the network is conditioned on at step `t` (counted along the
/// extended diffusion time, `1..=n_repeat * t_train`): every training index
/// is repeated `n_repeat` times, `ceil(t / n_repeat)` clamped to
/// `[1, t_train]`.
pub fn condition_index(t: usize, n_repeat: usize, t_train: usize) -> usize {
    let n = n_repeat.max(1);
    t.div_ceil(n).clamp(1, t_train.max(1))
}

/// Conditions in execution order for an extended schedule of
/// `n_repeat * t_train` reverse steps.
pub fn extended_conditions(t_train: usize, n_repeat: usize) -> Vec<usize> {
    (1..=n_repeat * t_train)
        .rev()
        .map(|t| condition_index(t, n_repeat, t_train))
        .collect()
}

/// Output of [`reverse_sample`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReverseSamples {
    /// Sampled `X_0` per path.
    pub assignments: Vec<Assignment>,
    /// Final conditional field `q(X_0 | X_1)` per path.
    pub fields: Vec<BernoulliField>,
}

/// Runs `n_samples` independent reverse paths of `n_repeat * t_train` steps.
pub fn reverse_sample<R: Rng + ?Sized>(
    params: &ModelParams,
    adjacency: &Adjacency,
    energy: &EnergyPoly,
    n_repeat: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<ReverseSamples> {
    if n_repeat == 0 {
        return Err(invalid("n_repeat must be at least 1"));
    }
    let conditions = extended_conditions(params.config().t_train, n_repeat);
    let mut out = ReverseSamples {
        assignments: Vec::with_capacity(n_samples),
        fields: Vec::with_capacity(n_samples),
    };
    for _ in 0..n_samples {
        let mut traj = sample_path(params, adjacency, energy, &conditions, rng, None)?;
        out.assignments.push(traj.states.pop().expect("non-empty"));
        out.fields.push(traj.fields.pop().expect("non-empty"));
    }
    Ok(out)
}

/// Node order used by both derandomizers: probability descending, ties by
/// index.
pub fn decode_order(q: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&a, &b| q[b].total_cmp(&q[a]));
    order
}

/// Pins the nodes one at a time, in [`decode_order`], to whichever value
/// gives the lower conditional expected energy (0 on ties). The result has
/// energy at most the expected energy of `q`.
pub fn conditional_expectation(q: &BernoulliField, e: &EnergyPoly) -> Result<Assignment> {
    check_len(e.num_vars(), q.len())?;
    let mut p = q.probs().to_vec();
    for i in decode_order(q.probs()) {
        let (e0, e1) = e.pin_gap(&p, i);
        p[i] = if e1 < e0 { 1.0 } else { 0.0 };
    }
    Ok(to_assignment(&p))
}

fn to_assignment(p: &[f64]) -> Assignment {
    Assignment::from_bits(p.iter().map(|&v| (v == 1.0) as u8).collect()).expect("bits are 0/1")
}

const NO_SLOT: u8 = u8::MAX;

/// Block-wise conditional expectation: consumes the sorted nodes in blocks
/// of `k` and pins each block to the best of its `2^k` configurations
/// (lowest configuration index on ties). `k = 1` reproduces
/// [`conditional_expectation`] bit for bit.
pub fn ce_st(q: &BernoulliField, e: &EnergyPoly, k: usize) -> Result<Assignment> {
    check_len(e.num_vars(), q.len())?;
    if k == 0 || k > MAX_TOKEN {
        return Err(Error::OutOfRange {
            what: "token size",
            value: k as i64,
        });
    }
    let n = q.len();
    let mut p = q.probs().to_vec();
    let order = decode_order(&p);
    let mut slot = vec![NO_SLOT; n];
    let mut seen = vec![usize::MAX; e.num_terms()];
    let mut g = vec![0.0; 1 << k];
    let mut h = vec![0.0; 1 << k];
    for (b, block) in order.chunks(k).enumerate() {
        let kb = block.len();
        let size = 1usize << kb;
        g[..size].fill(0.0);
        h[..size].fill(0.0);
        for (s, &v) in block.iter().enumerate() {
            slot[v] = s as u8;
        }
        for &v in block {
            for &t in e.terms_of(v) {
                let t = t as usize;
                if seen[t] == b {
                    continue;
                }
                seen[t] = b;
                let term = e.term(t);
                let mut outside = term.coeff;
                let mut mask = 0usize;
                for &u in term.vars {
                    let s = slot[u as usize];
                    if s == NO_SLOT {
                        outside *= apply(term.factor, p[u as usize]);
                    } else {
                        mask |= 1 << s;
                    }
                }
                match term.factor {
                    Factor::Monomial => g[mask] += outside,
                    Factor::Complement => h[mask] += outside,
                }
            }
        }
        subset_sums(&mut g[..size], kb);
        subset_sums(&mut h[..size], kb);
        let full = size - 1;
        let mut best = 0;
        let mut best_val = f64::INFINITY;
        for c in 0..size {
            let val = g[c] + h[full ^ c];
            if val < best_val {
                best_val = val;
                best = c;
            }
        }
        for (s, &v) in block.iter().enumerate() {
            p[v] = ((best >> s) & 1) as f64;
            slot[v] = NO_SLOT;
        }
    }
    Ok(to_assignment(&p))
}

#[inline]
fn apply(f: Factor, p: f64) -> f64 {
    match f {
        Factor::Monomial => p,
        Factor::Complement => 1.0 - p,
    }
}

/// In-place zeta transform: `a[c] <- sum_{m subset of c} a[m]`.
fn subset_sums(a: &mut [f64], bits: usize) {
    for i in 0..bits {
        let bit = 1 << i;
        for c in 0..a.len() {
            if c & bit != 0 {
                a[c] += a[c ^ bit];
            }
        }
    }
}

/// How a sampled path is turned into a solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    /// The sampled `X_0`.
    Raw,
    /// [`conditional_expectation`] on the final field.
    Ce,
    /// [`ce_st`] with the given block size on the final field.
    CeSt(usize),
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecodeMode::Raw => f.write_str("raw"),
            DecodeMode::Ce => f.write_str("ce"),
            DecodeMode::CeSt(k) => write!(f, "ce-st:{k}"),
        }
    }
}

impl FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "raw" => Ok(DecodeMode::Raw),
            "ce" => Ok(DecodeMode::Ce),
            other => {
                let k = other
                    .strip_prefix("ce-st:")
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(|| invalid(String::from("decode mode must be raw, ce or ce-st:<k>, got ") + s))?;
                if k == 0 || k > MAX_TOKEN {
                    return Err(Error::OutOfRange {
                        what: "token size",
                        value: k as i64,
                    });
                }
                Ok(DecodeMode::CeSt(k))
            }
        }
    }
}

impl serde::Serialize for DecodeMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for DecodeMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Applies `mode` to one sampled path.
pub fn decode_sample(
    mode: DecodeMode,
    sampled: &Assignment,
    field: &BernoulliField,
    e: &EnergyPoly,
) -> Result<Assignment> {
    match mode {
        DecodeMode::Raw => {
            check_len(e.num_vars(), sampled.len())?;
            Ok(sampled.clone())
        }
        DecodeMode::Ce => conditional_expectation(field, e),
        DecodeMode::CeSt(k) => ce_st(field, e, k),
    }
}

/// One decoded sample with its statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub assignment: Assignment,
    pub energy: f64,
    pub feasible: bool,
    /// Natural objective: set size, cut size or cover size.
    pub size: f64,
    /// Expected energy of the final field the sample was decoded from.
    pub field_energy: f64,
}

/// Output of [`solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub samples: Vec<SampleOutcome>,
    /// Index of the lowest-energy sample (first on ties).
    pub best: usize,
}

impl SolveResult {
    pub fn best_sample(&self) -> &SampleOutcome {
        &self.samples[self.best]
    }

    pub fn energies(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.energy).collect()
    }

    pub fn mean_energy(&self) -> f64 {
        self.samples.iter().map(|s| s.energy).sum::<f64>() / self.samples.len() as f64
    }
}

/// Draws `n_samples` solutions of `kind` on `graph` and decodes each with
/// `mode`.
#[allow(clippy::too_many_arguments)]
pub fn solve<R: Rng + ?Sized>(
    params: &ModelParams,
    graph: &Graph,
    kind: ProblemKind,
    n_samples: usize,
    n_repeat: usize,
    mode: DecodeMode,
    rng: &mut R,
) -> Result<SolveResult> {
    if n_samples == 0 {
        return Err(invalid("n_samples must be at least 1"));
    }
    let energy = build_energy(kind, graph, DEFAULT_A, DEFAULT_B)?;
    let drawn = reverse_sample(params, &graph.adjacency(), &energy, n_repeat, n_samples, rng)?;
    let mut samples = Vec::with_capacity(n_samples);
    for (x, f) in drawn.assignments.iter().zip(&drawn.fields) {
        let assignment = decode_sample(mode, x, f, &energy)?;
        samples.push(SampleOutcome {
            energy: energy.value(&assignment)?,
            feasible: is_feasible(kind, graph, &assignment)?,
            size: objective_size(kind, graph, &assignment)?,
            field_energy: energy.expected(f.probs())?,
            assignment,
        });
    }
    let mut best = 0;
    for (i, s) in samples.iter().enumerate() {
        if s.energy < samples[best].energy {
            best = i;
        }
    }
    Ok(SolveResult { samples, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::ModelConfig;
    use crate::graph::gen_er;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_identity_and_extension() {
        assert_eq!(extended_conditions(4, 1), vec![4, 3, 2, 1]);
        let c = extended_conditions(6, 3);
        assert_eq!(c.len(), 18);
        assert_eq!(c, vec![6, 6, 6, 5, 5, 5, 4, 4, 4, 3, 3, 3, 2, 2, 2, 1, 1, 1]);
        for t in 1..=18 {
            let a = condition_index(t, 3, 6);
            assert!((1..=6).contains(&a));
            if t > 1 {
                assert!(a >= condition_index(t - 1, 3, 6));
            }
        }
    }

    #[test]
    fn single_edge_mis_hand_case() {
        let g = Graph::new(2, [(0, 1)]).unwrap();
        let e = build_energy(ProblemKind::Mis, &g, DEFAULT_A, DEFAULT_B).unwrap();
        let q = BernoulliField::new(vec![0.9, 0.8]).unwrap();
        let x = conditional_expectation(&q, &e).unwrap();
        assert_eq!(x.bits(), &[1, 0]);
        assert_eq!(e.value(&x).unwrap(), -1.0);
    }

    #[test]
    fn optimal_corner_is_kept() {
        let g = Graph::new(3, [(0, 1), (1, 2)]).unwrap();
        let e = build_energy(ProblemKind::Mis, &g, DEFAULT_A, DEFAULT_B).unwrap();
        let q = BernoulliField::new(vec![1.0, 0.0, 1.0]).unwrap();
        for k in [1, 2, 3] {
            assert_eq!(ce_st(&q, &e, k).unwrap().bits(), &[1, 0, 1]);
        }
        assert_eq!(conditional_expectation(&q, &e).unwrap().bits(), &[1, 0, 1]);
    }

    #[test]
    fn token_size_checked() {
        let g = Graph::new(2, [(0, 1)]).unwrap();
        let e = build_energy(ProblemKind::Mis, &g, DEFAULT_A, DEFAULT_B).unwrap();
        let q = BernoulliField::uniform(2);
        assert!(ce_st(&q, &e, 0).is_err());
        assert!(ce_st(&q, &e, 17).is_err());
        assert!(ce_st(&q, &e, 16).is_ok());
    }

    #[test]
    fn decode_mode_parsing() {
        assert_eq!("raw".parse::<DecodeMode>().unwrap(), DecodeMode::Raw);
        assert_eq!("CE".parse::<DecodeMode>().unwrap(), DecodeMode::Ce);
        assert_eq!("ce-st:8".parse::<DecodeMode>().unwrap(), DecodeMode::CeSt(8));
        assert!("ce-st:0".parse::<DecodeMode>().is_err());
        assert!("ce-st:x".parse::<DecodeMode>().is_err());
        assert_eq!(DecodeMode::CeSt(4).to_string(), "ce-st:4");
    }

    #[test]
    fn solve_reports_every_sample() {
        let cfg = ModelConfig {
            layers: 1,
            hidden: 8,
            t_train: 2,
            rand_features: 0,
        };
        let p = ModelParams::init(cfg, 1).unwrap();
        let g = gen_er(10, 0.3, 1).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            solve(&p, &g, ProblemKind::Mis, 8, 1, DecodeMode::Ce, &mut rng).unwrap()
        };
        let r = run(3);
        assert_eq!(r.samples.len(), 8);
        assert_eq!(r, run(3));
        assert!(r.best_sample().energy <= r.mean_energy());
        for s in &r.samples {
            assert!(s.energy <= s.field_energy + 1e-9);
        }
    }
}
