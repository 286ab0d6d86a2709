//! Solution-quality metrics and aggregation helpers.

use alloc::string::String;
use alloc::vec::Vec;

// float math without std; unused when std is linked elsewhere in the build
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

fn check_opt(e_opt: f64) -> Result<()> {
    if e_opt == 0.0 || !e_opt.is_finite() {
        return Err(invalid("reference optimum must be finite and non-zero"));
    }
    Ok(())
}

/// `|E_opt - E| / |E_opt|`.
pub fn relative_error(e_opt: f64, e_model: f64) -> Result<f64> {
    check_opt(e_opt)?;
    Ok((e_opt - e_model).abs() / e_opt.abs())
}

/// Best approximation ratio `E_best / E_opt`.
pub fn ar_star(e_opt: f64, e_best: f64) -> Result<f64> {
    check_opt(e_opt)?;
    Ok(e_best / e_opt)
}

/// Arithmetic mean, independent of element order; `NaN` for an empty
/// slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    // summing in sorted order makes the result independent of input order
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (`n - 1` denominator); 0 for fewer than two
/// values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let mut v: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    v.sort_by(f64::total_cmp);
    (v.iter().sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Per-instance, per-method evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub instance_id: String,
    pub method: String,
    pub seed: u64,
    pub mean_energy: f64,
    pub best_energy: f64,
    pub mean_size: f64,
    /// Size of the best-energy sample.
    pub best_size: f64,
    pub feasibility_rate: f64,
    pub wall_ms: f64,
    pub oracle_energy: Option<f64>,
}

impl EvalResult {
    /// Builds a record from per-sample energies, sizes and feasibility
    /// flags.
    #[allow(clippy::too_many_arguments)]
    pub fn from_samples(
        instance_id: String,
        method: String,
        seed: u64,
        energies: &[f64],
        sizes: &[f64],
        feasible: &[bool],
        wall_ms: f64,
        oracle_energy: Option<f64>,
    ) -> Result<Self> {
        if energies.is_empty() || energies.len() != sizes.len() || energies.len() != feasible.len() {
            return Err(invalid("per-sample vectors must be non-empty and of equal length"));
        }
        let mut best = 0;
        for (i, &e) in energies.iter().enumerate() {
            if e < energies[best] {
                best = i;
            }
        }
        let n = energies.len() as f64;
        Ok(Self {
            instance_id,
            method,
            seed,
            mean_energy: energies.iter().sum::<f64>() / n,
            best_energy: energies[best],
            mean_size: sizes.iter().sum::<f64>() / n,
            best_size: sizes[best],
            feasibility_rate: feasible.iter().filter(|&&f| f).count() as f64 / n,
            wall_ms,
            oracle_energy,
        })
    }

    /// Relative error of the mean energy, when an oracle value exists.
    pub fn mean_relative_error(&self) -> Option<f64> {
        self.oracle_energy
            .and_then(|o| relative_error(o, self.mean_energy).ok())
    }

    /// Relative error of the best energy, when an oracle value exists.
    pub fn best_relative_error(&self) -> Option<f64> {
        self.oracle_energy
            .and_then(|o| relative_error(o, self.best_energy).ok())
    }

    pub fn ar_star(&self) -> Option<f64> {
        self.oracle_energy.and_then(|o| ar_star(o, self.best_energy).ok())
    }

    /// True when the model found a lower energy than the oracle, which
    /// means the oracle value was not optimal.
    pub fn beats_oracle(&self) -> bool {
        self.oracle_energy.is_some_and(|o| self.best_energy < o - 1e-9)
    }
}
