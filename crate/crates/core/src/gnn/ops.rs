//! Dense row-major kernels used by the network and their adjoints.

use alloc::vec::Vec;

// float math without std; unused when std is linked elsewhere in the build
#[allow(unused_imports)]
use num_traits::Float;

pub(crate) const LN_EPS: f64 = 1e-5;

/// A dense layer stored at `off` as `out x inp` weights followed by `out`
/// biases when `bias` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Lin {
    pub off: usize,
    pub inp: usize,
    pub out: usize,
    pub bias: bool,
}

impl Lin {
    pub fn len(&self) -> usize {
        self.inp * self.out + if self.bias { self.out } else { 0 }
    }

    pub fn weights<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.off..self.off + self.inp * self.out]
    }

    pub fn biases<'a>(&self, p: &'a [f64]) -> Option<&'a [f64]> {
        let start = self.off + self.inp * self.out;
        self.bias.then(|| &p[start..start + self.out])
    }

    /// `y = x W^T + b` for `rows` input rows.
    pub fn forward(&self, p: &[f64], x: &[f64], rows: usize, y: &mut Vec<f64>) {
        let w = self.weights(p);
        y.clear();
        y.resize(rows * self.out, 0.0);
        let b = self.biases(p);
        for (xr, yr) in x.chunks_exact(self.inp).zip(y.chunks_exact_mut(self.out)).take(rows) {
            for (o, (yo, wr)) in yr.iter_mut().zip(w.chunks_exact(self.inp)).enumerate() {
                let mut acc = 0.0;
                for (a, c) in xr.iter().zip(wr) {
                    acc += a * c;
                }
                *yo = acc + b.map_or(0.0, |b| b[o]);
            }
        }
    }

    /// Accumulates weight/bias gradients into `g` and, if given, writes the
    /// input adjoint into `dx` (overwriting).
    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], rows: usize, g: &mut [f64], dx: Option<&mut Vec<f64>>) {
        let w = self.weights(p);
        let (gw, gb) = g[self.off..self.off + self.len()].split_at_mut(self.inp * self.out);
        for (xr, dyr) in x.chunks_exact(self.inp).zip(dy.chunks_exact(self.out)).take(rows) {
            for (o, &d) in dyr.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (gwi, xi) in gw[o * self.inp..(o + 1) * self.inp].iter_mut().zip(xr) {
                    *gwi += d * xi;
                }
                if self.bias {
                    gb[o] += d;
                }
            }
        }
        if let Some(dx) = dx {
            dx.clear();
            dx.resize(rows * self.inp, 0.0);
            for (dxr, dyr) in dx.chunks_exact_mut(self.inp).zip(dy.chunks_exact(self.out)) {
                for (&d, wr) in dyr.iter().zip(w.chunks_exact(self.inp)) {
                    if d == 0.0 {
                        continue;
                    }
                    for (a, c) in dxr.iter_mut().zip(wr) {
                        *a += d * c;
                    }
                }
            }
        }
    }
}

/// Per-row layer normalisation with learnable gain then offset stored at
/// `off`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Norm {
    pub off: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct NormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl Norm {
    pub fn len(&self) -> usize {
        2 * self.dim
    }

    pub fn forward(&self, p: &[f64], x: &[f64], rows: usize, y: &mut Vec<f64>, cache: &mut NormCache) {
        let gain = &p[self.off..self.off + self.dim];
        let shift = &p[self.off + self.dim..self.off + 2 * self.dim];
        let d = self.dim as f64;
        y.clear();
        y.resize(rows * self.dim, 0.0);
        cache.xhat.clear();
        cache.xhat.resize(rows * self.dim, 0.0);
        cache.inv_std.clear();
        for ((xr, yr), hr) in x
            .chunks_exact(self.dim)
            .zip(y.chunks_exact_mut(self.dim))
            .zip(cache.xhat.chunks_exact_mut(self.dim))
            .take(rows)
        {
            let mean = xr.iter().sum::<f64>() / d;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            cache.inv_std.push(inv);
            for k in 0..self.dim {
                let h = (xr[k] - mean) * inv;
                hr[k] = h;
                yr[k] = gain[k] * h + shift[k];
            }
        }
    }

    /// Accumulates gain/offset gradients and writes the input adjoint.
    pub fn backward(&self, p: &[f64], cache: &NormCache, dy: &[f64], rows: usize, g: &mut [f64], dx: &mut Vec<f64>) {
        let gain = &p[self.off..self.off + self.dim];
        let (gg, gs) = g[self.off..self.off + 2 * self.dim].split_at_mut(self.dim);
        let d = self.dim as f64;
        dx.clear();
        dx.resize(rows * self.dim, 0.0);
        for (((dyr, hr), dxr), &inv) in dy
            .chunks_exact(self.dim)
            .zip(cache.xhat.chunks_exact(self.dim))
            .zip(dx.chunks_exact_mut(self.dim))
            .zip(&cache.inv_std)
        {
            let mut mean_dh = 0.0;
            let mut mean_dh_h = 0.0;
            for k in 0..self.dim {
                gg[k] += dyr[k] * hr[k];
                gs[k] += dyr[k];
                let dh = dyr[k] * gain[k];
                mean_dh += dh;
                mean_dh_h += dh * hr[k];
            }
            mean_dh /= d;
            mean_dh_h /= d;
            for k in 0..self.dim {
                let dh = dyr[k] * gain[k];
                dxr[k] = inv * (dh - mean_dh - hr[k] * mean_dh_h);
            }
        }
    }
}

pub(crate) fn relu_in_place(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `d` wherever the pre-activation was non-positive.
pub(crate) fn relu_backward(pre: &[f64], d: &mut [f64]) {
    for (dv, &p) in d.iter_mut().zip(pre) {
        if p <= 0.0 {
            *dv = 0.0;
        }
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
