//! Time-conditioned message-passing network producing one Bernoulli field per
//! reverse diffusion step, with exact hand-written reverse mode.
//!
//! Per node the network computes
//!
//! ```text
//! h    = embed(features)
//! L x: a = W * sum_{j in N(i)} h_j + h
//!      h = mlp2(mlp1(a))                 each mlp layer: norm(relu(linear))
//! out  = sigmoid(lin3(mlp_o2(mlp_o1(h))))
//! ```
//!
//! and clamps the output into `[EPS, 1 - EPS]`. Node features are the current
//! bit, a one-hot of the time index and optionally [`RAND_FEATURES`] uniform
//! random features.

mod ops;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

// float math without std; unused when std is linked elsewhere in the build
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::BernoulliField;
use crate::error::{check_len, invalid, Error, Result};
use crate::graph::Adjacency;
use crate::EPS;
use ops::{relu_backward, relu_in_place, sigmoid, Lin, Norm, NormCache};

/// Number of random node features when they are enabled.
pub const RAND_FEATURES: usize = 5;

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Message-passing rounds.
    pub layers: usize,
    pub hidden: usize,
    /// Length of the time one-hot.
    pub t_train: usize,
    /// Random features per node (0 or [`RAND_FEATURES`]).
    pub rand_features: usize,
}

impl ModelConfig {
    pub fn feature_width(&self) -> usize {
        1 + self.t_train + self.rand_features
    }
}

/// Closed-form parameter count for the architecture.
pub fn param_count(layers: usize, hidden: usize, feature_width: usize) -> usize {
    let h = hidden;
    feature_width * h + layers * (3 * h * h + 6 * h) + 2 * h * h + 8 * h + 1
}

#[derive(Debug, Clone, PartialEq)]
struct LayerLayout {
    msg: Lin,
    mlp1: Lin,
    norm1: Norm,
    mlp2: Lin,
    norm2: Norm,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    embed: Lin,
    layers: Vec<LayerLayout>,
    out1: Lin,
    out_norm1: Norm,
    out2: Lin,
    out_norm2: Norm,
    out3: Lin,
    total: usize,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Self {
        let h = cfg.hidden;
        let mut off = 0;
        let mut lin = |inp, out, bias| {
            let l = Lin { off, inp, out, bias };
            off += l.len();
            l
        };
        let embed = lin(cfg.feature_width(), h, true);
        let mut layers = Vec::with_capacity(cfg.layers);
        // norms are placed after all linears of a block; order is irrelevant
        // as long as it is fixed
        for _ in 0..cfg.layers {
            let msg = lin(h, h, false);
            let mlp1 = lin(h, h, true);
            let mlp2 = lin(h, h, true);
            layers.push((msg, mlp1, mlp2));
        }
        let out1 = lin(h, h, true);
        let out2 = lin(h, h, true);
        let out3 = lin(h, 1, true);
        let mut norm = || {
            let n = Norm { off, dim: h };
            off += n.len();
            n
        };
        let layers = layers
            .into_iter()
            .map(|(msg, mlp1, mlp2)| LayerLayout {
                msg,
                mlp1,
                norm1: norm(),
                mlp2,
                norm2: norm(),
            })
            .collect();
        let out_norm1 = norm();
        let out_norm2 = norm();
        Self {
            embed,
            layers,
            out1,
            out_norm1,
            out2,
            out_norm2,
            out3,
            total: off,
        }
    }

    fn linears(&self) -> impl Iterator<Item = (String, Lin)> + '_ {
        let mut v = vec![(String::from("embed"), self.embed)];
        for (l, layer) in self.layers.iter().enumerate() {
            v.push((format!("layer{l}.msg"), layer.msg));
            v.push((format!("layer{l}.mlp1"), layer.mlp1));
            v.push((format!("layer{l}.mlp2"), layer.mlp2));
        }
        v.push(("out1".into(), self.out1));
        v.push(("out2".into(), self.out2));
        v.push(("out3".into(), self.out3));
        v.into_iter()
    }

    fn norms(&self) -> impl Iterator<Item = (String, Norm)> + '_ {
        let mut v = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            v.push((format!("layer{l}.norm1"), layer.norm1));
            v.push((format!("layer{l}.norm2"), layer.norm2));
        }
        v.push(("out_norm1".into(), self.out_norm1));
        v.push(("out_norm2".into(), self.out_norm2));
        v.into_iter()
    }
}

/// All learnable weights, stored as one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    layout: Layout,
    values: Vec<f64>,
}

/// Gradient with the same flat layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub Vec<f64>);

impl ParamGrads {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn add_scaled(&mut self, other: &ParamGrads, scale: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|g| g.is_finite())
    }
}

/// One named tensor of the parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

fn check_config(cfg: &ModelConfig) -> Result<()> {
    if cfg.layers == 0 || cfg.hidden == 0 || cfg.t_train == 0 {
        return Err(invalid("layers, hidden and t_train must be at least 1"));
    }
    Ok(())
}

impl ModelParams {
    /// Fan-based uniform initialisation `U(+-sqrt(6 / (fan_in + fan_out)))`,
    /// zero biases, unit gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        check_config(&config)?;
        let layout = Layout::new(&config);
        let mut values = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, lin) in layout.linears() {
            let bound = (6.0 / (lin.inp + lin.out) as f64).sqrt();
            for w in &mut values[lin.off..lin.off + lin.inp * lin.out] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        for (_, norm) in layout.norms() {
            values[norm.off..norm.off + norm.dim].fill(1.0);
        }
        Ok(Self { config, layout, values })
    }

    pub fn from_values(config: ModelConfig, values: Vec<f64>) -> Result<Self> {
        check_config(&config)?;
        let layout = Layout::new(&config);
        check_len(layout.total, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite parameter"));
        }
        Ok(Self { config, layout, values })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn zero_grads(&self) -> ParamGrads {
        ParamGrads::zeros(self.values.len())
    }

    /// Names, shapes and offsets of every tensor, sorted by offset.
    pub fn manifest(&self) -> Vec<TensorSpec> {
        let mut specs: Vec<TensorSpec> = Vec::new();
        for (name, lin) in self.layout.linears() {
            specs.push(TensorSpec {
                name: format!("{name}.weight"),
                shape: vec![lin.out, lin.inp],
                offset: lin.off,
            });
            if lin.bias {
                specs.push(TensorSpec {
                    name: format!("{name}.bias"),
                    shape: vec![lin.out],
                    offset: lin.off + lin.inp * lin.out,
                });
            }
        }
        for (name, norm) in self.layout.norms() {
            specs.push(TensorSpec {
                name: format!("{name}.gain"),
                shape: vec![norm.dim],
                offset: norm.off,
            });
            specs.push(TensorSpec {
                name: format!("{name}.offset"),
                shape: vec![norm.dim],
                offset: norm.off + norm.dim,
            });
        }
        specs.sort_by_key(|s| s.offset);
        specs
    }

    pub fn forward(&self, input: &StepInput<'_>) -> Result<BernoulliField> {
        let mut cache = ForwardCache::default();
        self.forward_cached(input, &mut cache)?;
        Ok(cache.field())
    }

    /// Forward pass that keeps every intermediate needed by
    /// [`ModelParams::backward`].
    pub fn forward_cached(&self, input: &StepInput<'_>, cache: &mut ForwardCache) -> Result<()> {
        let n = input.adjacency.num_nodes();
        check_len(n, input.x_t.len())?;
        if input.condition == 0 || input.condition > self.config.t_train {
            return Err(Error::OutOfRange {
                what: "time condition",
                value: input.condition as i64,
            });
        }
        match (input.rand_feats, self.config.rand_features) {
            (None, 0) => {}
            (Some(r), k) if k > 0 => check_len(n * k, r.len())?,
            _ => return Err(invalid("random features do not match the model configuration")),
        }
        let cfg = &self.config;
        let p = &self.values[..];
        let h = cfg.hidden;
        cache.n = n;
        let fw = cfg.feature_width();
        cache.input.clear();
        cache.input.resize(n * fw, 0.0);
        for (i, row) in cache.input.chunks_exact_mut(fw).enumerate() {
            row[0] = input.x_t[i] as f64;
            row[input.condition] = 1.0;
            if let Some(r) = input.rand_feats {
                let k = cfg.rand_features;
                row[1 + cfg.t_train..].copy_from_slice(&r[i * k..(i + 1) * k]);
            }
        }
        cache.hs.resize_with(cfg.layers + 1, Vec::new);
        cache.layers.resize_with(cfg.layers, LayerCache::default);
        self.layout.embed.forward(p, &cache.input, n, &mut cache.hs[0]);

        let mut tmp = core::mem::take(&mut cache.tmp);
        for (l, lay) in self.layout.layers.iter().enumerate() {
            let (before, after) = cache.hs.split_at_mut(l + 1);
            let h_in = &before[l];
            let h_out = &mut after[0];
            let lc = &mut cache.layers[l];
            aggregate(input.adjacency, h_in, h, &mut lc.agg);
            lay.msg.forward(p, &lc.agg, n, &mut lc.a);
            for (a, x) in lc.a.iter_mut().zip(h_in) {
                *a += x;
            }
            lay.mlp1.forward(p, &lc.a, n, &mut lc.pre1);
            tmp.clear();
            tmp.extend_from_slice(&lc.pre1);
            relu_in_place(&mut tmp);
            lay.norm1.forward(p, &tmp, n, &mut lc.z1, &mut lc.norm1);
            lay.mlp2.forward(p, &lc.z1, n, &mut lc.pre2);
            tmp.clear();
            tmp.extend_from_slice(&lc.pre2);
            relu_in_place(&mut tmp);
            lay.norm2.forward(p, &tmp, n, h_out, &mut lc.norm2);
        }
        let lo = &self.layout;
        let h_last = &cache.hs[cfg.layers];
        lo.out1.forward(p, h_last, n, &mut cache.pre_o1);
        tmp.clear();
        tmp.extend_from_slice(&cache.pre_o1);
        relu_in_place(&mut tmp);
        lo.out_norm1.forward(p, &tmp, n, &mut cache.v1, &mut cache.norm_o1);
        lo.out2.forward(p, &cache.v1, n, &mut cache.pre_o2);
        tmp.clear();
        tmp.extend_from_slice(&cache.pre_o2);
        relu_in_place(&mut tmp);
        lo.out_norm2.forward(p, &tmp, n, &mut cache.v2, &mut cache.norm_o2);
        lo.out3.forward(p, &cache.v2, n, &mut cache.logits);
        cache.tmp = tmp;
        cache.probs.clear();
        cache.probs.extend(cache.logits.iter().map(|&z| sigmoid(z)));
        if cache.probs.iter().any(|q| q.is_nan()) {
            return Err(Error::NonFinite {
                context: "network output",
                step: 0,
            });
        }
        Ok(())
    }

    /// Accumulates `d loss / d params` into `grads`, given `dq`, the adjoint
    /// of the clamped output probabilities of the cached forward pass.
    pub fn backward(
        &self,
        input: &StepInput<'_>,
        cache: &ForwardCache,
        dq: &[f64],
        grads: &mut ParamGrads,
    ) -> Result<()> {
        let n = cache.n;
        check_len(n, dq.len())?;
        check_len(self.values.len(), grads.0.len())?;
        let p = &self.values[..];
        let g = &mut grads.0[..];
        let lo = &self.layout;
        let mut dz: Vec<f64> = cache
            .probs
            .iter()
            .zip(dq)
            .map(|(&q, &d)| {
                if q > EPS && q < 1.0 - EPS {
                    d * q * (1.0 - q)
                } else {
                    0.0
                }
            })
            .collect();
        let mut d_a = Vec::new();
        let mut d_b = Vec::new();
        lo.out3.backward(p, &cache.v2, &dz, n, g, Some(&mut d_a));
        lo.out_norm2.backward(p, &cache.norm_o2, &d_a, n, g, &mut d_b);
        relu_backward(&cache.pre_o2, &mut d_b);
        lo.out2.backward(p, &cache.v1, &d_b, n, g, Some(&mut d_a));
        lo.out_norm1.backward(p, &cache.norm_o1, &d_a, n, g, &mut d_b);
        relu_backward(&cache.pre_o1, &mut d_b);
        let mut dh = Vec::new();
        lo.out1
            .backward(p, &cache.hs[self.config.layers], &d_b, n, g, Some(&mut dh));

        let mut d_in = Vec::new();
        for l in (0..self.config.layers).rev() {
            let lay = &lo.layers[l];
            let lc = &cache.layers[l];
            lay.norm2.backward(p, &lc.norm2, &dh, n, g, &mut d_b);
            relu_backward(&lc.pre2, &mut d_b);
            lay.mlp2.backward(p, &lc.z1, &d_b, n, g, Some(&mut d_a));
            lay.norm1.backward(p, &lc.norm1, &d_a, n, g, &mut d_b);
            relu_backward(&lc.pre1, &mut d_b);
            // d_a: adjoint of a = msg + h_in
            lay.mlp1.backward(p, &lc.a, &d_b, n, g, Some(&mut d_a));
            lay.msg.backward(p, &lc.agg, &d_a, n, g, Some(&mut dz));
            // the neighbour sum is symmetric, so its adjoint is itself
            aggregate(input.adjacency, &dz, self.config.hidden, &mut d_in);
            for ((o, a), s) in dh.iter_mut().zip(&d_a).zip(&d_in) {
                *o = a + s;
            }
        }
        lo.embed.backward(p, &cache.input, &dh, n, g, None);
        Ok(())
    }
}

/// Fan-based initialisation; see [`ModelParams::init`].
pub fn init_params(seed: u64, config: ModelConfig) -> Result<ModelParams> {
    ModelParams::init(config, seed)
}

/// One network evaluation.
pub fn forward(params: &ModelParams, input: &StepInput<'_>) -> Result<BernoulliField> {
    params.forward(input)
}

fn aggregate(adj: &Adjacency, h: &[f64], dim: usize, out: &mut Vec<f64>) {
    let n = adj.num_nodes();
    out.clear();
    out.resize(n * dim, 0.0);
    for (i, row) in out.chunks_exact_mut(dim).enumerate() {
        for &j in adj.neighbors(i) {
            let src = &h[j as usize * dim..(j as usize + 1) * dim];
            for (o, s) in row.iter_mut().zip(src) {
                *o += s;
            }
        }
    }
}

/// Inputs of one reverse step.
#[derive(Debug, Clone, Copy)]
pub struct StepInput<'a> {
    pub adjacency: &'a Adjacency,
    /// Current state `X_t`, one bit per node.
    pub x_t: &'a [u8],
    /// Time index in `1..=t_train` encoded as a one-hot.
    pub condition: usize,
    /// `num_nodes * rand_features` values, row-major by node.
    pub rand_feats: Option<&'a [f64]>,
}

#[derive(Debug, Clone, Default)]
struct LayerCache {
    agg: Vec<f64>,
    a: Vec<f64>,
    pre1: Vec<f64>,
    norm1: NormCache,
    z1: Vec<f64>,
    pre2: Vec<f64>,
    norm2: NormCache,
}

/// Intermediates of a forward pass; reusable across calls.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    n: usize,
    input: Vec<f64>,
    hs: Vec<Vec<f64>>,
    layers: Vec<LayerCache>,
    pre_o1: Vec<f64>,
    norm_o1: NormCache,
    v1: Vec<f64>,
    pre_o2: Vec<f64>,
    norm_o2: NormCache,
    v2: Vec<f64>,
    logits: Vec<f64>,
    probs: Vec<f64>,
    tmp: Vec<f64>,
}

impl ForwardCache {
    /// Clamped output of the cached pass.
    pub fn field(&self) -> BernoulliField {
        BernoulliField::new_clamped(self.probs.clone()).expect("probabilities are finite")
    }

    /// Unclamped sigmoid outputs.
    pub fn raw_probs(&self) -> &[f64] {
        &self.probs
    }

    /// Largest `1 / std` applied by any normalisation layer. Large values
    /// flag rows that are almost constant, where the network is sharply
    /// curved in its parameters.
    pub fn max_norm_gain(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|lc| [&lc.norm1, &lc.norm2])
            .chain([&self.norm_o1, &self.norm_o2])
            .flat_map(|c| c.inv_std.iter().copied())
            .fold(0.0, f64::max)
    }

    /// Which rectifiers are active and which outputs lie strictly inside
    /// the clamp range. The network is smooth in its parameters wherever
    /// this pattern does not change.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for lc in &self.layers {
            out.extend(lc.pre1.iter().chain(&lc.pre2).map(|&v| v > 0.0));
        }
        out.extend(self.pre_o1.iter().chain(&self.pre_o2).map(|&v| v > 0.0));
        out.extend(self.probs.iter().map(|&q| q > EPS && q < 1.0 - EPS));
        out
    }
}

/// Inputs, cache and output gradient of one recorded forward pass.
type TapeRecord = (Adjacency, Vec<u8>, usize, Option<Vec<f64>>, ForwardCache, Vec<f64>);

/// Records forward passes for [`grad`].
pub struct Tape<'p> {
    params: &'p ModelParams,
    records: Vec<TapeRecord>,
    direct: Vec<f64>,
}

/// Handle to a recorded forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PassId(usize);

impl<'p> Tape<'p> {
    pub fn params(&self) -> &ModelParams {
        self.params
    }

    /// Runs and records a forward pass.
    pub fn forward(&mut self, input: &StepInput<'_>) -> Result<(PassId, BernoulliField)> {
        let mut cache = ForwardCache::default();
        self.params.forward_cached(input, &mut cache)?;
        let field = cache.field();
        let n = field.len();
        self.records.push((
            input.adjacency.clone(),
            input.x_t.to_vec(),
            input.condition,
            input.rand_feats.map(|r| r.to_vec()),
            cache,
            vec![0.0; n],
        ));
        Ok((PassId(self.records.len() - 1), field))
    }

    /// Adds `d loss / d q` for the output of a recorded pass.
    pub fn seed(&mut self, id: PassId, dq: &[f64]) -> Result<()> {
        let slot = &mut self.records[id.0].5;
        check_len(slot.len(), dq.len())?;
        for (s, d) in slot.iter_mut().zip(dq) {
            *s += d;
        }
        Ok(())
    }

    /// Adds a direct partial derivative with respect to parameter `index`.
    pub fn seed_param(&mut self, index: usize, d: f64) {
        self.direct[index] += d;
    }
}

/// Reverse-mode gradient of a scalar built from recorded forward passes.
///
/// The closure runs forward passes through the [`Tape`], returns the scalar
/// and seeds the adjoint of every output it used.
pub fn grad<F>(params: &ModelParams, f: F) -> Result<(f64, ParamGrads)>
where
    F: FnOnce(&mut Tape<'_>) -> Result<f64>,
{
    let mut tape = Tape {
        params,
        records: Vec::new(),
        direct: vec![0.0; params.len()],
    };
    let value = f(&mut tape)?;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: "loss",
            step: 0,
        });
    }
    let mut grads = ParamGrads(core::mem::take(&mut tape.direct));
    for (adj, x, condition, rand, cache, dq) in &tape.records {
        let input = StepInput {
            adjacency: adj,
            x_t: x,
            condition: *condition,
            rand_feats: rand.as_deref(),
        };
        params.backward(&input, cache, dq, &mut grads)?;
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            context: "gradient",
            step: 0,
        });
    }
    Ok((value, grads))
}
