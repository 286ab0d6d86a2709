//! Multilinear energy functions over binary variables.
//!
//! Every problem energy is stored as a sum of terms `c * prod_{i in S} f(x_i)`
//! where `f(x) = x` for monomials and `f(x) = 1 - x` for complement products.
//! Complement products only appear for dominating-set neighbourhoods that are
//! too large to expand symbolically. Because every term is a product of
//! distinct variables, the expectation under independent Bernoulli variables
//! is obtained by substituting the probabilities.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::diffusion::BernoulliField;
use crate::error::{check_len, invalid, Result};
use crate::graph::{complement, Adjacency, Graph, ProblemKind};

/// Default penalty constants (`A < B` keeps every minimum feasible).
pub const DEFAULT_A: f64 = 1.0;
pub const DEFAULT_B: f64 = 1.01;

/// Closed neighbourhoods with more than this many neighbours are kept as an
/// unexpanded complement product in dominating-set energies.
pub const MDS_EXPAND_CAP: usize = 10;

/// A binary solution vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Assignment(Vec<u8>);

impl Assignment {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0; n])
    }

    /// Builds an assignment from 0/1 values.
    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(invalid("assignment entries must be 0 or 1"));
        }
        Ok(Self(bits))
    }

    /// Bit `i` of `code` becomes entry `i`.
    pub fn from_index(code: u64, n: usize) -> Self {
        Self((0..n).map(|i| ((code >> i) & 1) as u8).collect())
    }

    /// Inverse of [`Assignment::from_index`] (first 64 entries).
    pub fn to_index(&self) -> u64 {
        self.0
            .iter()
            .take(64)
            .enumerate()
            .fold(0, |acc, (i, &b)| acc | ((b as u64) << i))
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn bits_mut(&mut self) -> &mut [u8] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }

    /// Every bit flipped.
    pub fn flipped(&self) -> Self {
        Self(self.0.iter().map(|&b| 1 - b).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Factor {
    /// `prod x_i`
    Monomial,
    /// `prod (1 - x_i)`
    Complement,
}

impl Factor {
    #[inline]
    fn apply(self, p: f64) -> f64 {
        match self {
            Factor::Monomial => p,
            Factor::Complement => 1.0 - p,
        }
    }
}

/// Borrowed view of one term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term<'a> {
    pub coeff: f64,
    pub vars: &'a [u32],
    pub factor: Factor,
}

/// Energy function as an explicit multilinear polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyPoly {
    num_vars: usize,
    kind: ProblemKind,
    a: f64,
    b: f64,
    coeffs: Vec<f64>,
    factors: Vec<Factor>,
    offsets: Vec<usize>,
    vars: Vec<u32>,
    // terms containing each variable, CSR
    var_offsets: Vec<usize>,
    var_terms: Vec<u32>,
}

impl EnergyPoly {
    /// Collects terms, sorting each variable subset and merging terms that
    /// share both subset and factor kind. Zero coefficients are dropped.
    pub fn from_terms<I, V>(num_vars: usize, kind: ProblemKind, a: f64, b: f64, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, V, Factor)>,
        V: IntoIterator<Item = u32>,
    {
        let mut merged: BTreeMap<(Factor, Vec<u32>), f64> = BTreeMap::new();
        for (coeff, vars, factor) in terms {
            let mut vars: Vec<u32> = vars.into_iter().collect();
            vars.sort_unstable();
            if vars.windows(2).any(|w| w[0] == w[1]) {
                return Err(invalid("term repeats a variable"));
            }
            if let Some(&v) = vars.last() {
                if v as usize >= num_vars {
                    return Err(crate::Error::OutOfRange {
                        what: "term variable",
                        value: v as i64,
                    });
                }
            }
            *merged.entry((factor, vars)).or_insert(0.0) += coeff;
        }
        let mut poly = Self {
            num_vars,
            kind,
            a,
            b,
            coeffs: Vec::with_capacity(merged.len()),
            factors: Vec::with_capacity(merged.len()),
            offsets: vec![0],
            vars: Vec::new(),
            var_offsets: Vec::new(),
            var_terms: Vec::new(),
        };
        for ((factor, vars), coeff) in merged {
            if coeff == 0.0 {
                continue;
            }
            poly.coeffs.push(coeff);
            poly.factors.push(factor);
            poly.vars.extend_from_slice(&vars);
            poly.offsets.push(poly.vars.len());
        }
        poly.index_vars();
        Ok(poly)
    }

    fn index_vars(&mut self) {
        let mut counts = vec![0usize; self.num_vars + 1];
        for &v in &self.vars {
            counts[v as usize + 1] += 1;
        }
        for i in 0..self.num_vars {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut var_terms = vec![0u32; self.vars.len()];
        for t in 0..self.coeffs.len() {
            for &v in &self.vars[self.offsets[t]..self.offsets[t + 1]] {
                var_terms[fill[v as usize]] = t as u32;
                fill[v as usize] += 1;
            }
        }
        self.var_offsets = counts;
        self.var_terms = var_terms;
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn penalty_constants(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn num_terms(&self) -> usize {
        self.coeffs.len()
    }

    #[inline]
    pub fn term(&self, t: usize) -> Term<'_> {
        Term {
            coeff: self.coeffs[t],
            vars: &self.vars[self.offsets[t]..self.offsets[t + 1]],
            factor: self.factors[t],
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = Term<'_>> + '_ {
        (0..self.num_terms()).map(move |t| self.term(t))
    }

    /// Indices of the terms that contain variable `v`.
    #[inline]
    pub fn terms_of(&self, v: usize) -> &[u32] {
        &self.var_terms[self.var_offsets[v]..self.var_offsets[v + 1]]
    }

    /// Largest number of variables in a single term.
    pub fn max_degree(&self) -> usize {
        self.offsets.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }

    /// Energy of a binary assignment.
    pub fn value(&self, x: &Assignment) -> Result<f64> {
        check_len(self.num_vars, x.len())?;
        Ok(self.value_unchecked(x.bits()))
    }

    pub(crate) fn value_unchecked(&self, bits: &[u8]) -> f64 {
        let mut total = 0.0;
        for t in 0..self.coeffs.len() {
            let want = match self.factors[t] {
                Factor::Monomial => 1,
                Factor::Complement => 0,
            };
            if self.vars[self.offsets[t]..self.offsets[t + 1]]
                .iter()
                .all(|&v| bits[v as usize] == want)
            {
                total += self.coeffs[t];
            }
        }
        total
    }

    /// Expectation under independent Bernoulli variables with success
    /// probabilities `probs`. Values outside `[0, 1]` are not checked.
    pub fn expected(&self, probs: &[f64]) -> Result<f64> {
        check_len(self.num_vars, probs.len())?;
        Ok(self.expected_unchecked(probs))
    }

    pub(crate) fn expected_unchecked(&self, probs: &[f64]) -> f64 {
        let mut total = 0.0;
        for t in 0..self.coeffs.len() {
            let f = self.factors[t];
            let prod = self.vars[self.offsets[t]..self.offsets[t + 1]]
                .iter()
                .fold(1.0, |acc, &v| acc * f.apply(probs[v as usize]));
            total += self.coeffs[t] * prod;
        }
        total
    }

    /// Adds `scale * d expected / d probs` into `out`.
    pub fn expected_grad(&self, probs: &[f64], scale: f64, out: &mut [f64]) {
        let mut prefix = Vec::new();
        for t in 0..self.coeffs.len() {
            let vars = &self.vars[self.offsets[t]..self.offsets[t + 1]];
            let f = self.factors[t];
            let sign = match f {
                Factor::Monomial => 1.0,
                Factor::Complement => -1.0,
            };
            let c = scale * sign * self.coeffs[t];
            match vars.len() {
                0 => {}
                1 => out[vars[0] as usize] += c,
                2 => {
                    let (i, j) = (vars[0] as usize, vars[1] as usize);
                    out[i] += c * f.apply(probs[j]);
                    out[j] += c * f.apply(probs[i]);
                }
                _ => {
                    prefix.clear();
                    let mut acc = 1.0;
                    for &v in vars {
                        prefix.push(acc);
                        acc *= f.apply(probs[v as usize]);
                    }
                    let mut suffix = 1.0;
                    for (k, &v) in vars.iter().enumerate().rev() {
                        out[v as usize] += c * prefix[k] * suffix;
                        suffix *= f.apply(probs[v as usize]);
                    }
                }
            }
        }
    }

    /// Conditional expectations with variable `i` pinned, relative to the
    /// terms that do not contain `i`: returns `(e0, e1)` such that
    /// `E[H | x_i = v] = rest + e_v`.
    #[inline]
    pub fn pin_gap(&self, probs: &[f64], i: usize) -> (f64, f64) {
        let (mut e0, mut e1) = (0.0, 0.0);
        for &t in self.terms_of(i) {
            let t = t as usize;
            let f = self.factors[t];
            let mut out = self.coeffs[t];
            for &v in &self.vars[self.offsets[t]..self.offsets[t + 1]] {
                if v as usize != i {
                    out *= f.apply(probs[v as usize]);
                }
            }
            match f {
                Factor::Monomial => e1 += out,
                Factor::Complement => e0 += out,
            }
        }
        (e0, e1)
    }
}

/// Builds the energy of `kind` on `g` with penalty constants `a < b`.
pub fn build_energy(kind: ProblemKind, g: &Graph, a: f64, b: f64) -> Result<EnergyPoly> {
    build_energy_with_cap(kind, g, a, b, MDS_EXPAND_CAP)
}

/// As [`build_energy`], with an explicit expansion cap for dominating-set
/// neighbourhood products.
pub fn build_energy_with_cap(kind: ProblemKind, g: &Graph, a: f64, b: f64, mds_cap: usize) -> Result<EnergyPoly> {
    if !(a > 0.0 && b > a && b.is_finite()) {
        return Err(invalid(alloc::format!(
            "penalty constants need 0 < A < B, got A={a}, B={b}"
        )));
    }
    let n = g.num_nodes();
    let mut terms: Vec<(f64, Vec<u32>, Factor)> = Vec::new();
    match kind {
        ProblemKind::Mis => mis_terms(g, a, b, &mut terms),
        ProblemKind::MaxCl => mis_terms(&complement(g), a, b, &mut terms),
        ProblemKind::MaxCut => {
            // -(1 - s_i s_j)/2 with s = 2x - 1 expands to 2 x_i x_j - x_i - x_j
            for &(i, j) in g.edges() {
                terms.push((2.0, vec![i, j], Factor::Monomial));
                terms.push((-1.0, vec![i], Factor::Monomial));
                terms.push((-1.0, vec![j], Factor::Monomial));
            }
        }
        ProblemKind::Mvc => {
            for i in 0..n as u32 {
                terms.push((a, vec![i], Factor::Monomial));
            }
            for &(i, j) in g.edges() {
                terms.push((b, vec![], Factor::Monomial));
                terms.push((-b, vec![i], Factor::Monomial));
                terms.push((-b, vec![j], Factor::Monomial));
                terms.push((b, vec![i, j], Factor::Monomial));
            }
        }
        ProblemKind::Mds => {
            let adj = Adjacency::from_graph(g);
            for i in 0..n as u32 {
                terms.push((a, vec![i], Factor::Monomial));
            }
            for i in 0..n {
                let mut closed: Vec<u32> = adj.neighbors(i).to_vec();
                closed.push(i as u32);
                closed.sort_unstable();
                if adj.degree(i) > mds_cap {
                    terms.push((b, closed, Factor::Complement));
                } else {
                    // prod (1 - x_k) = sum_{S} (-1)^{|S|} prod_{k in S} x_k
                    for mask in 0u32..(1 << closed.len()) {
                        let subset: Vec<u32> = closed
                            .iter()
                            .enumerate()
                            .filter(|(k, _)| mask >> k & 1 == 1)
                            .map(|(_, &v)| v)
                            .collect();
                        let sign = if mask.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                        terms.push((sign * b, subset, Factor::Monomial));
                    }
                }
            }
        }
    }
    EnergyPoly::from_terms(n, kind, a, b, terms)
}

fn mis_terms(g: &Graph, a: f64, b: f64, terms: &mut Vec<(f64, Vec<u32>, Factor)>) {
    for i in 0..g.num_nodes() as u32 {
        terms.push((-a, vec![i], Factor::Monomial));
    }
    for &(i, j) in g.edges() {
        terms.push((b, vec![i, j], Factor::Monomial));
    }
}

pub fn energy_value(e: &EnergyPoly, x: &Assignment) -> Result<f64> {
    e.value(x)
}

/// Closed-form mean of the energy under the mean-field distribution `q`.
pub fn expected_energy(e: &EnergyPoly, q: &BernoulliField) -> Result<f64> {
    e.expected(q.probs())
}

/// Feasibility of `x` as a solution of `kind` on `g`.
pub fn is_feasible(kind: ProblemKind, g: &Graph, x: &Assignment) -> Result<bool> {
    check_len(g.num_nodes(), x.len())?;
    let bits = x.bits();
    Ok(match kind {
        ProblemKind::Mis => g.edges().iter().all(|&(i, j)| bits[i as usize] + bits[j as usize] < 2),
        ProblemKind::MaxCl => {
            let chosen: Vec<u32> = (0..bits.len() as u32).filter(|&i| bits[i as usize] == 1).collect();
            chosen
                .iter()
                .enumerate()
                .all(|(k, &i)| chosen[k + 1..].iter().all(|&j| g.has_edge(i, j)))
        }
        ProblemKind::Mvc => g.edges().iter().all(|&(i, j)| bits[i as usize] + bits[j as usize] > 0),
        ProblemKind::Mds => {
            let adj = g.adjacency();
            (0..bits.len()).all(|i| bits[i] == 1 || adj.neighbors(i).iter().any(|&j| bits[j as usize] == 1))
        }
        ProblemKind::MaxCut => true,
    })
}

/// Set size for the set problems, number of cut edges for MaxCut.
pub fn objective_size(kind: ProblemKind, g: &Graph, x: &Assignment) -> Result<f64> {
    check_len(g.num_nodes(), x.len())?;
    let bits = x.bits();
    Ok(match kind {
        ProblemKind::MaxCut => g
            .edges()
            .iter()
            .filter(|&&(i, j)| bits[i as usize] != bits[j as usize])
            .count() as f64,
        _ => x.count_ones() as f64,
    })
}
