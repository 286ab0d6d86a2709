//! Undirected graph instances, random generators and dataset records.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

// float math without std; unused when std is linked elsewhere in the build
#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Where a graph came from: generator name, its numeric parameters and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub generator: String,
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
}

impl GraphMeta {
    fn new(generator: &str, params: &[(&str, f64)], seed: u64) -> Self {
        Self {
            generator: generator.to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            seed,
        }
    }
}

/// A simple undirected graph. Edges are stored as `(i, j)` with `i < j`,
/// sorted lexicographically and free of duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(u32, u32)>,
    pub meta: Option<GraphMeta>,
}

impl Graph {
    /// Builds a graph from an arbitrary edge list. Pairs are normalised to
    /// `i < j` and deduplicated; self-loops and out-of-range endpoints are
    /// rejected.
    pub fn new(num_nodes: usize, edges: impl IntoIterator<Item = (u32, u32)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(invalid("self-loop"));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            if j as usize >= num_nodes {
                return Err(Error::OutOfRange {
                    what: "edge endpoint",
                    value: j as i64,
                });
            }
            set.insert((i, j));
        }
        Ok(Self {
            num_nodes,
            edges: set.into_iter().collect(),
            meta: None,
        })
    }

    pub fn empty(num_nodes: usize) -> Self {
        Self {
            num_nodes,
            edges: Vec::new(),
            meta: None,
        }
    }

    pub fn complete(num_nodes: usize) -> Self {
        let mut edges = Vec::with_capacity(num_nodes * num_nodes.saturating_sub(1) / 2);
        for i in 0..num_nodes as u32 {
            for j in i + 1..num_nodes as u32 {
                edges.push((i, j));
            }
        }
        Self {
            num_nodes,
            edges,
            meta: None,
        }
    }

    pub fn with_meta(mut self, meta: GraphMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn has_edge(&self, a: u32, b: u32) -> bool {
        let key = if a < b { (a, b) } else { (b, a) };
        self.edges.binary_search(&key).is_ok()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = alloc::vec![0usize; self.num_nodes];
        for &(i, j) in &self.edges {
            deg[i as usize] += 1;
            deg[j as usize] += 1;
        }
        deg
    }

    /// Sorted neighbour lists.
    pub fn adjacency(&self) -> Adjacency {
        Adjacency::from_graph(self)
    }

    /// Number of connected components.
    pub fn components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.num_nodes).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut count = self.num_nodes;
        for &(i, j) in &self.edges {
            let (a, b) = (find(&mut parent, i as usize), find(&mut parent, j as usize));
            if a != b {
                parent[a] = b;
                count -= 1;
            }
        }
        count
    }

    /// Applies a node relabelling `perm[old] = new`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        crate::error::check_len(self.num_nodes, perm.len())?;
        Self::new(
            self.num_nodes,
            self.edges
                .iter()
                .map(|&(i, j)| (perm[i as usize] as u32, perm[j as usize] as u32)),
        )
    }
}

/// Compressed neighbour lists (CSR layout).
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
}

impl Adjacency {
    pub fn from_graph(g: &Graph) -> Self {
        let deg = g.degrees();
        let mut offsets = Vec::with_capacity(g.num_nodes + 1);
        offsets.push(0);
        for d in &deg {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets.clone();
        let mut neighbors = alloc::vec![0u32; 2 * g.num_edges()];
        for &(i, j) in &g.edges {
            neighbors[fill[i as usize]] = j;
            fill[i as usize] += 1;
            neighbors[fill[j as usize]] = i;
            fill[j as usize] += 1;
        }
        for v in 0..g.num_nodes {
            neighbors[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        Self { offsets, neighbors }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }
}

/// The five problem families with energy formulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProblemKind {
    #[serde(rename = "MIS")]
    Mis,
    #[serde(rename = "MDS")]
    Mds,
    #[serde(rename = "MaxCl")]
    MaxCl,
    #[serde(rename = "MaxCut")]
    MaxCut,
    #[serde(rename = "MVC")]
    Mvc,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 5] = [
        ProblemKind::Mis,
        ProblemKind::Mds,
        ProblemKind::MaxCl,
        ProblemKind::MaxCut,
        ProblemKind::Mvc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Mis => "MIS",
            ProblemKind::Mds => "MDS",
            ProblemKind::MaxCl => "MaxCl",
            ProblemKind::MaxCut => "MaxCut",
            ProblemKind::Mvc => "MVC",
        }
    }

    /// Case-insensitive parse of `mis`, `mds`, `maxcl`, `maxcut`, `mvc`.
    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name().eq_ignore_ascii_case(s))
    }

    /// Whether the natural objective is a size to be maximised.
    pub fn maximizes(self) -> bool {
        matches!(self, ProblemKind::Mis | ProblemKind::MaxCl | ProblemKind::MaxCut)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One instance of a dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub graph: Graph,
    pub kind: ProblemKind,
    pub split: Split,
    pub oracle_energy: Option<f64>,
}

fn check_prob(p: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(invalid(alloc::format!("{what} must lie in [0, 1], got {p}")))
    }
}

/// Erdős–Rényi graph: every pair independently with probability `p_edge`.
pub fn gen_er(n: usize, p_edge: f64, seed: u64) -> Result<Graph> {
    if n == 0 {
        return Err(invalid("n must be at least 1"));
    }
    check_prob(p_edge, "p_edge")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n as u32 {
        for j in i + 1..n as u32 {
            if rng.gen::<f64>() < p_edge {
                edges.push((i, j));
            }
        }
    }
    Ok(Graph {
        num_nodes: n,
        edges,
        meta: Some(GraphMeta::new("er", &[("n", n as f64), ("p_edge", p_edge)], seed)),
    })
}

/// Barabási–Albert preferential attachment. Starts from a clique on
/// `m_attach + 1` nodes; every further node connects to `m_attach` distinct
/// existing nodes chosen with probability proportional to their degree.
pub fn gen_ba(n: usize, m_attach: usize, seed: u64) -> Result<Graph> {
    if m_attach == 0 || m_attach >= n {
        return Err(invalid(alloc::format!(
            "need 1 <= m_attach < n, got m_attach={m_attach}, n={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    // every edge contributes both endpoints, so uniform draws from this list
    // are degree-proportional
    let mut endpoints: Vec<u32> = Vec::new();
    for i in 0..=m_attach as u32 {
        for j in i + 1..=m_attach as u32 {
            edges.push((i, j));
            endpoints.push(i);
            endpoints.push(j);
        }
    }
    let mut targets = Vec::with_capacity(m_attach);
    for v in (m_attach + 1) as u32..n as u32 {
        targets.clear();
        while targets.len() < m_attach {
            let t = endpoints[rng.gen_range(0..endpoints.len())];
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for &t in &targets {
            edges.push((t, v));
            endpoints.push(t);
            endpoints.push(v);
        }
    }
    edges.sort_unstable();
    Ok(Graph {
        num_nodes: n,
        edges,
        meta: Some(GraphMeta::new("ba", &[("n", n as f64), ("m", m_attach as f64)], seed)),
    })
}

/// Default density factor of the inter-clique edge budget.
pub const RB_DEFAULT_RHO: f64 = 0.3;

/// Number of inter-clique edges drawn by [`gen_rb`]:
/// `round((1 - p) * n_cliques * ln(n_cliques) * k_clique^2 * rho)`, capped at
/// the number of available cross pairs.
pub fn rb_inter_edge_budget(n_cliques: usize, k_clique: usize, p: f64, rho: f64) -> usize {
    let raw = (1.0 - p) * n_cliques as f64 * (n_cliques as f64).ln() * (k_clique * k_clique) as f64 * rho;
    let cross = n_cliques * (n_cliques - 1) / 2 * k_clique * k_clique;
    (raw.round().max(0.0) as usize).min(cross)
}

/// RB-model style graph with the default density factor.
pub fn gen_rb(n_cliques: usize, k_clique: usize, p: f64, seed: u64) -> Result<Graph> {
    gen_rb_with_rho(n_cliques, k_clique, p, RB_DEFAULT_RHO, seed)
}

/// RB-model style graph: `n_cliques` disjoint cliques of `k_clique` nodes plus
/// [`rb_inter_edge_budget`] distinct cross-clique pairs drawn uniformly
/// without replacement.
pub fn gen_rb_with_rho(n_cliques: usize, k_clique: usize, p: f64, rho: f64, seed: u64) -> Result<Graph> {
    if n_cliques < 2 || k_clique < 2 {
        return Err(invalid(alloc::format!(
            "need n_cliques >= 2 and k_clique >= 2, got {n_cliques}, {k_clique}"
        )));
    }
    check_prob(p, "p")?;
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(invalid("rho must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_cliques * k_clique;
    let mut edges = Vec::new();
    for c in 0..n_cliques {
        let base = (c * k_clique) as u32;
        for a in 0..k_clique as u32 {
            for b in a + 1..k_clique as u32 {
                edges.push((base + a, base + b));
            }
        }
    }
    let budget = rb_inter_edge_budget(n_cliques, k_clique, p, rho);
    if budget > 0 {
        let kk = k_clique * k_clique;
        let pairs = n_cliques * (n_cliques - 1) / 2;
        // first cross-pair index of each clique pair (a, b), a < b, in row order
        let mut clique_pairs = Vec::with_capacity(pairs);
        for a in 0..n_cliques {
            for b in a + 1..n_cliques {
                clique_pairs.push((a, b));
            }
        }
        for idx in index::sample(&mut rng, pairs * kk, budget).into_iter() {
            let (a, b) = clique_pairs[idx / kk];
            let within = idx % kk;
            let u = (a * k_clique + within / k_clique) as u32;
            let v = (b * k_clique + within % k_clique) as u32;
            edges.push((u, v));
        }
    }
    edges.sort_unstable();
    Ok(Graph {
        num_nodes: n,
        edges,
        meta: Some(GraphMeta::new(
            "rb",
            &[
                ("n_cliques", n_cliques as f64),
                ("k_clique", k_clique as f64),
                ("p", p),
                ("rho", rho),
            ],
            seed,
        )),
    })
}

/// Parameter ranges for sampling RB graphs within a node-count window.
#[derive(Debug, Clone, PartialEq)]
pub struct RbRange {
    /// Inclusive range for the number of cliques.
    pub n_cliques: (usize, usize),
    /// Inclusive range for the clique size.
    pub k_clique: (usize, usize),
    /// Inclusive range for `p`.
    pub p: (f64, f64),
    /// Accepted node counts (inclusive).
    pub nodes: (usize, usize),
    pub rho: f64,
}

impl RbRange {
    /// RB-small analogue: 200 to 300 nodes.
    pub fn small() -> Self {
        Self {
            n_cliques: (20, 25),
            k_clique: (5, 12),
            p: (0.3, 1.0),
            nodes: (200, 300),
            rho: RB_DEFAULT_RHO,
        }
    }

    /// RB-large analogue: 800 to 1200 nodes.
    pub fn large() -> Self {
        Self {
            n_cliques: (40, 55),
            k_clique: (20, 25),
            p: (0.3, 1.0),
            nodes: (800, 1200),
            rho: RB_DEFAULT_RHO,
        }
    }
}

/// Maximum number of draws before [`sample_rb`] gives up.
pub const RB_MAX_RETRIES: usize = 1000;

/// Draws RB parameters uniformly from `range` and rejects graphs whose node
/// count falls outside `range.nodes`.
pub fn sample_rb(range: &RbRange, seed: u64) -> Result<Graph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RB_MAX_RETRIES {
        let nc = rng.gen_range(range.n_cliques.0..=range.n_cliques.1);
        let k = rng.gen_range(range.k_clique.0..=range.k_clique.1);
        let p = if range.p.0 < range.p.1 {
            rng.gen_range(range.p.0..=range.p.1)
        } else {
            range.p.0
        };
        let sub_seed: u64 = rng.gen();
        if (range.nodes.0..=range.nodes.1).contains(&(nc * k)) {
            return gen_rb_with_rho(nc, k, p, range.rho, sub_seed);
        }
    }
    Err(Error::ResampleExhausted(RB_MAX_RETRIES))
}

/// Graph on the same nodes whose edges are exactly the pairs absent from `g`.
pub fn complement(g: &Graph) -> Graph {
    let n = g.num_nodes as u32;
    let mut edges = Vec::with_capacity((n as usize * (n as usize).saturating_sub(1)) / 2 - g.num_edges());
    let mut present = g.edges.iter().peekable();
    for i in 0..n {
        for j in i + 1..n {
            if present.peek() == Some(&&(i, j)) {
                present.next();
            } else {
                edges.push((i, j));
            }
        }
    }
    Graph {
        num_nodes: g.num_nodes,
        edges,
        meta: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn er_extremes() {
        let g = gen_er(5, 0.0, 7).unwrap();
        assert_eq!((g.num_nodes(), g.num_edges()), (5, 0));
        let g = gen_er(4, 1.0, 1).unwrap();
        assert_eq!(g.edges(), Graph::complete(4).edges());
        assert!(gen_er(0, 0.5, 1).is_err());
        assert!(gen_er(3, 1.5, 1).is_err());
    }

    #[test]
    fn er_edge_count_in_binomial_window() {
        // Bin(4950, 0.1): mean 495, sd 21.1; [300, 700] is more than 9 sd wide
        let g = gen_er(100, 0.1, 3).unwrap();
        assert!((300..=700).contains(&g.num_edges()), "{}", g.num_edges());
    }

    #[test]
    fn ba_edge_counts() {
        let g = gen_ba(3, 2, 0).unwrap();
        assert_eq!(g.edges(), Graph::complete(3).edges());
        // m(n - m - 1) + m(m + 1)/2 = 8 + 1
        let g = gen_ba(10, 1, 5).unwrap();
        assert_eq!(g.num_edges(), 9);
        assert_eq!(g.components(), 1);
        let g = gen_ba(300, 4, 11).unwrap();
        assert_eq!(g.num_edges(), 4 * (300 - 5) + 10);
        assert!(gen_ba(4, 4, 0).is_err());
        assert!(gen_ba(4, 0, 0).is_err());
    }

    #[test]
    fn ba_is_heavy_tailed() {
        for seed in 0..10 {
            let g = gen_ba(1000, 4, 9 + seed).unwrap();
            let max = g.degrees().into_iter().max().unwrap();
            assert!(max >= 30, "seed {seed}: max degree {max}");
        }
    }

    #[test]
    fn rb_disjoint_cliques_at_p_one() {
        let g = gen_rb(3, 4, 1.0, 2).unwrap();
        assert_eq!(g.num_edges(), 18);
        assert_eq!(g.components(), 3);
    }

    #[test]
    fn rb_budget_at_p_zero() {
        // round(2 * ln 2 * 4 * 0.3) = round(1.664) = 2
        assert_eq!(rb_inter_edge_budget(2, 2, 0.0, 0.3), 2);
        let g = gen_rb(2, 2, 0.0, 0).unwrap();
        assert_eq!(g.num_edges(), 2 + 2);
        let cross = g.edges().iter().filter(|&&(i, j)| i / 2 != j / 2).count();
        assert_eq!(cross, 2);
    }

    #[test]
    fn rb_budget_monotone_in_p() {
        let mut last = usize::MAX;
        for step in 0..=10 {
            let p = step as f64 / 10.0;
            let b = rb_inter_edge_budget(20, 10, p, 0.3);
            assert!(b < last || (b == 0 && last == 0));
            last = b;
        }
        assert_eq!(last, 0);
        let g = gen_rb(9, 8, 0.25, 1).unwrap();
        assert_eq!(g.num_nodes(), 72);
    }

    #[test]
    fn rb_sampling_respects_node_window() {
        let g = sample_rb(&RbRange::small(), 4).unwrap();
        assert!((200..=300).contains(&g.num_nodes()));
        let impossible = RbRange {
            nodes: (1, 2),
            ..RbRange::small()
        };
        assert_eq!(sample_rb(&impossible, 0), Err(Error::ResampleExhausted(RB_MAX_RETRIES)));
    }

    #[test]
    fn complement_examples() {
        assert_eq!(complement(&Graph::complete(3)).num_edges(), 0);
        assert_eq!(complement(&Graph::empty(4)).edges(), Graph::complete(4).edges());
        let path = Graph::new(3, [(0, 1), (1, 2)]).unwrap();
        assert_eq!(complement(&path).edges(), &[(0, 2)]);
    }

    #[test]
    fn graph_new_normalises() {
        let g = Graph::new(4, [(2, 1), (1, 2), (0, 3)]).unwrap();
        assert_eq!(g.edges(), &[(0, 3), (1, 2)]);
        assert!(Graph::new(3, [(1, 1)]).is_err());
        assert!(Graph::new(3, [(0, 3)]).is_err());
    }

    #[test]
    fn generators_are_pure() {
        assert_eq!(gen_er(30, 0.3, 9).unwrap(), gen_er(30, 0.3, 9).unwrap());
        assert_eq!(gen_ba(50, 3, 9).unwrap(), gen_ba(50, 3, 9).unwrap());
        assert_eq!(gen_rb(5, 4, 0.2, 9).unwrap(), gen_rb(5, 4, 0.2, 9).unwrap());
    }

    proptest! {
        #[test]
        fn complement_is_involution(n in 1usize..=64, p in 0.0f64..1.0, seed in any::<u64>()) {
            let g = gen_er(n, p, seed).unwrap();
            let cc = complement(&complement(&g));
            prop_assert_eq!(cc.edges(), g.edges());
            prop_assert_eq!(cc.num_nodes(), n);
        }

        #[test]
        fn rb_p_one_gives_clique_components(nc in 2usize..8, k in 2usize..6, seed in any::<u64>()) {
            let g = gen_rb(nc, k, 1.0, seed).unwrap();
            prop_assert_eq!(g.components(), nc);
            prop_assert_eq!(g.num_edges(), nc * k * (k - 1) / 2);
        }
    }
}
