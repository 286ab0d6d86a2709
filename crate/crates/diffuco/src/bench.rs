//! Experiment harness: evaluates trained models and reference solvers on a
//! dataset and aggregates the results across seeds.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use diffuco_core::baselines::{greedy, mean_field_anneal, simulated_anneal, MfaConfig, SaConfig};
use diffuco_core::decode::{solve, DecodeMode};
use diffuco_core::energy::{build_energy, is_feasible, objective_size, Assignment, DEFAULT_A, DEFAULT_B};
use diffuco_core::gnn::ModelParams;
use diffuco_core::graph::{DatasetRecord, ProblemKind};
use diffuco_core::metrics::{mean, std_dev, EvalResult};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::instance_id;
use crate::error::{Error, Result};
use crate::parallel::map_indexed;

/// A solver evaluated by [`run_experiment`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// The trained diffusion model with the given decoding.
    Model(DecodeMode),
    Greedy,
    MeanField(MfaConfig),
    Annealing(SaConfig),
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Model(mode) => format!("diffuco:{mode}"),
            Method::Greedy => "greedy".into(),
            Method::MeanField(_) => "mfa".into(),
            Method::Annealing(_) => "sa".into(),
        }
    }

    /// Parses `greedy`, `mfa`, `sa` or `diffuco:<decode mode>`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Method::Greedy),
            "mfa" => Ok(Method::MeanField(MfaConfig::default())),
            "sa" => Ok(Method::Annealing(SaConfig::default())),
            other => match other.strip_prefix("diffuco:") {
                Some(mode) => Ok(Method::Model(mode.parse()?)),
                None => Err(Error::Usage(format!(
                    "unknown method {other:?} (expected greedy, mfa, sa or diffuco:<decode>)"
                ))),
            },
        }
    }
}

/// A trained model together with the seed it was trained with.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub seed: u64,
    pub params: ModelParams,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Solutions drawn per instance.
    pub samples: usize,
    /// Each training time index is repeated this many times at evaluation.
    pub n_repeat: usize,
    /// Worker threads across instances.
    pub threads: usize,
    /// Mixed into every sampling seed.
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            samples: 8,
            n_repeat: 1,
            threads: 1,
            seed: 0,
        }
    }
}

/// One decoded solution, as written to a solution dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub instance_id: String,
    pub mode: String,
    pub seed: u64,
    pub sample_idx: usize,
    pub energy: f64,
    pub size: f64,
    pub feasible: bool,
    pub wall_ms: f64,
}

/// One CSV row: an [`EvalResult`] plus the derived metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub instance_id: String,
    pub method: String,
    pub seed: u64,
    /// Reverse steps used at evaluation; empty for reference solvers.
    pub steps: Option<usize>,
    pub mean_energy: f64,
    pub best_energy: f64,
    pub mean_size: f64,
    pub best_size: f64,
    pub feasibility_rate: f64,
    pub wall_ms: f64,
    pub oracle_energy: Option<f64>,
    pub mean_rel_error: Option<f64>,
    pub best_rel_error: Option<f64>,
    pub ar_star: Option<f64>,
}

impl ReportRow {
    pub fn new(result: &EvalResult, steps: Option<usize>) -> Self {
        Self {
            instance_id: result.instance_id.clone(),
            method: result.method.clone(),
            seed: result.seed,
            steps,
            mean_energy: result.mean_energy,
            best_energy: result.best_energy,
            mean_size: result.mean_size,
            best_size: result.best_size,
            feasibility_rate: result.feasibility_rate,
            wall_ms: result.wall_ms,
            oracle_energy: result.oracle_energy,
            mean_rel_error: result.mean_relative_error(),
            best_rel_error: result.best_relative_error(),
            ar_star: result.ar_star(),
        }
    }
}

/// Rows and solutions of an experiment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub solutions: Vec<SolutionRecord>,
}

struct Decoded {
    assignment: Assignment,
    wall_ms: f64,
}

fn instance_rng(seed: u64, method_index: usize, instance: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (method_index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(instance as u64);
    rng
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

#[allow(clippy::too_many_arguments)]
fn evaluate_instance(
    method: &Method,
    method_index: usize,
    model: Option<&ModelParams>,
    seed: u64,
    record: &DatasetRecord,
    index: usize,
    opts: &EvalOptions,
) -> Result<(ReportRow, Vec<SolutionRecord>)> {
    let graph = &record.graph;
    let kind = record.kind;
    let mut rng = instance_rng(opts.seed ^ seed, method_index, index);
    let mut decoded = Vec::with_capacity(opts.samples);
    match method {
        Method::Model(mode) => {
            let params = model.ok_or_else(|| Error::Usage("model method without a model".into()))?;
            for _ in 0..opts.samples {
                // timing covers the reverse process and the decoding only
                let start = Instant::now();
                let res = solve(params, graph, kind, 1, opts.n_repeat, *mode, &mut rng)?;
                let wall_ms = elapsed_ms(start);
                decoded.push(Decoded {
                    assignment: res.samples[0].assignment.clone(),
                    wall_ms,
                });
            }
        }
        Method::Greedy => {
            let start = Instant::now();
            let assignment = greedy(kind, graph);
            let wall_ms = elapsed_ms(start);
            for _ in 0..opts.samples {
                decoded.push(Decoded {
                    assignment: assignment.clone(),
                    wall_ms,
                });
            }
        }
        Method::MeanField(_) | Method::Annealing(_) => {
            let energy = build_energy(kind, graph, DEFAULT_A, DEFAULT_B)?;
            for _ in 0..opts.samples {
                let start = Instant::now();
                let assignment = match method {
                    Method::MeanField(cfg) => mean_field_anneal(&energy, cfg, &mut rng)?,
                    Method::Annealing(cfg) => simulated_anneal(&energy, cfg, &mut rng)?,
                    _ => unreachable!(),
                };
                decoded.push(Decoded {
                    assignment,
                    wall_ms: elapsed_ms(start),
                });
            }
        }
    }
    let energy = build_energy(kind, graph, DEFAULT_A, DEFAULT_B)?;
    let id = instance_id(index);
    let name = method.name();
    let mut energies = Vec::with_capacity(decoded.len());
    let mut sizes = Vec::with_capacity(decoded.len());
    let mut feasible = Vec::with_capacity(decoded.len());
    let mut solutions = Vec::with_capacity(decoded.len());
    for (sample_idx, d) in decoded.iter().enumerate() {
        let e = energy.value(&d.assignment)?;
        let size = objective_size(kind, graph, &d.assignment)?;
        let ok = is_feasible(kind, graph, &d.assignment)?;
        energies.push(e);
        sizes.push(size);
        feasible.push(ok);
        solutions.push(SolutionRecord {
            instance_id: id.clone(),
            mode: name.clone(),
            seed,
            sample_idx,
            energy: e,
            size,
            feasible: ok,
            wall_ms: d.wall_ms,
        });
    }
    let wall_ms = match method {
        // greedy is deterministic and run once per instance
        Method::Greedy => decoded.first().map_or(0.0, |d| d.wall_ms),
        _ => decoded.iter().map(|d| d.wall_ms).sum(),
    };
    let result = EvalResult::from_samples(
        id,
        name,
        seed,
        &energies,
        &sizes,
        &feasible,
        wall_ms,
        record.oracle_energy,
    )?;
    let steps = model
        .filter(|_| matches!(method, Method::Model(_)))
        .map(|p| p.config().t_train * opts.n_repeat);
    Ok((ReportRow::new(&result, steps), solutions))
}

/// Evaluates every method on every record, once per trained model (the
/// reference solvers run once per model seed as well, or once with seed 0
/// when there are no models). An empty method list gives an empty report.
pub fn run_experiment(
    models: &[TrainedModel],
    records: &[DatasetRecord],
    methods: &[Method],
    opts: &EvalOptions,
) -> Result<Report> {
    if opts.samples == 0 || opts.n_repeat == 0 {
        return Err(Error::Usage("samples and repeat must be at least 1".into()));
    }
    let mut report = Report::default();
    let seeds: Vec<(u64, Option<&ModelParams>)> = if models.is_empty() {
        vec![(0, None)]
    } else {
        models.iter().map(|m| (m.seed, Some(&m.params))).collect()
    };
    for (method_index, method) in methods.iter().enumerate() {
        if matches!(method, Method::Model(_)) && models.is_empty() {
            return Err(Error::Usage(format!("method {} needs a trained model", method.name())));
        }
        for &(seed, params) in &seeds {
            let per_instance = map_indexed(records.len(), opts.threads, |i| {
                evaluate_instance(method, method_index, params, seed, &records[i], i, opts)
            })?;
            for (row, sols) in per_instance {
                report.rows.push(row);
                report.solutions.extend(sols);
            }
        }
    }
    Ok(report)
}

/// Mean and sample standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    fn of(xs: &[f64]) -> Self {
        Self {
            mean: mean(xs),
            std: std_dev(xs),
        }
    }
}

/// Aggregate of one method (at one number of reverse steps).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub steps: Option<usize>,
    pub seeds: Vec<u64>,
    pub instances: usize,
    /// Statistics of the per-seed means over instances.
    pub mean_rel_error: Option<Stat>,
    pub best_rel_error: Option<Stat>,
    pub ar_star: Option<Stat>,
    pub mean_energy: Stat,
    pub best_energy: Stat,
    pub mean_size: Stat,
    pub best_size: Stat,
    pub feasibility_rate: Stat,
    pub wall_ms: Stat,
    /// Rows whose best energy undercuts the oracle value, meaning that value
    /// was not optimal.
    pub oracle_beaten: usize,
}

/// JSON summary of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// How to read energies and AR* for each problem kind.
    pub orientation: BTreeMap<String, String>,
    pub methods: Vec<MethodSummary>,
}

fn orientation() -> BTreeMap<String, String> {
    ProblemKind::ALL
        .iter()
        .map(|k| {
            let text = match k {
                ProblemKind::Mis | ProblemKind::MaxCl => {
                    "energy = -(set size) + penalties, lower is better; AR* = E_best / E_opt, 1 is optimal and smaller is worse"
                }
                ProblemKind::MaxCut => {
                    "energy = -(cut size), lower is better; AR* = E_best / E_opt, 1 is optimal and smaller is worse"
                }
                ProblemKind::Mds | ProblemKind::Mvc => {
                    "energy = set size + penalties, lower is better; AR* = E_best / E_opt, 1 is optimal and larger is worse"
                }
            };
            (k.name().to_string(), text.to_string())
        })
        .collect()
}

fn seed_means(rows: &[&ReportRow], seeds: &[u64], f: impl Fn(&ReportRow) -> Option<f64>) -> Option<Vec<f64>> {
    let mut out = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let xs: Vec<f64> = rows.iter().filter(|r| r.seed == s).filter_map(|r| f(r)).collect();
        if xs.is_empty() {
            return None;
        }
        out.push(mean(&xs));
    }
    Some(out)
}

/// Aggregates rows per method and step count: every metric is averaged over
/// instances within a seed, then mean and standard deviation are taken over
/// the seed means. The result does not depend on row order.
pub fn summarize(rows: &[ReportRow]) -> Summary {
    let mut groups: BTreeMap<(String, Option<usize>), Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.method.clone(), r.steps)).or_default().push(r);
    }
    let methods = groups
        .into_iter()
        .map(|((method, steps), rs)| {
            let mut seeds: Vec<u64> = rs.iter().map(|r| r.seed).collect();
            seeds.sort_unstable();
            seeds.dedup();
            let mut ids: Vec<&str> = rs.iter().map(|r| r.instance_id.as_str()).collect();
            ids.sort_unstable();
            ids.dedup();
            let stat = |f: &dyn Fn(&ReportRow) -> Option<f64>| seed_means(&rs, &seeds, f).map(|v| Stat::of(&v));
            let always = |f: &dyn Fn(&ReportRow) -> f64| stat(&|r| Some(f(r))).expect("every row has the field");
            MethodSummary {
                instances: ids.len(),
                mean_rel_error: stat(&|r| r.mean_rel_error),
                best_rel_error: stat(&|r| r.best_rel_error),
                ar_star: stat(&|r| r.ar_star),
                mean_energy: always(&|r| r.mean_energy),
                best_energy: always(&|r| r.best_energy),
                mean_size: always(&|r| r.mean_size),
                best_size: always(&|r| r.best_size),
                feasibility_rate: always(&|r| r.feasibility_rate),
                wall_ms: always(&|r| r.wall_ms),
                oracle_beaten: rs
                    .iter()
                    .filter(|r| r.oracle_energy.is_some_and(|o| r.best_energy < o - 1e-9))
                    .count(),
                method,
                steps,
                seeds,
            }
        })
        .collect();
    Summary {
        orientation: orientation(),
        methods,
    }
}

/// An x/y series for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub y_std: Vec<f64>,
}

/// Mean relative error against the number of reverse steps, one series per
/// model method.
pub fn plot_data(summary: &Summary) -> Vec<PlotSeries> {
    let mut series: BTreeMap<&str, Vec<(usize, Stat)>> = BTreeMap::new();
    for m in &summary.methods {
        if let (Some(steps), Some(err)) = (m.steps, m.mean_rel_error) {
            series.entry(m.method.as_str()).or_default().push((steps, err));
        }
    }
    series
        .into_iter()
        .map(|(name, mut pts)| {
            pts.sort_by_key(|p| p.0);
            PlotSeries {
                name: name.to_string(),
                x_label: "diffusion steps".into(),
                y_label: "mean relative error".into(),
                x: pts.iter().map(|p| p.0 as f64).collect(),
                y: pts.iter().map(|p| p.1.mean).collect(),
                y_std: pts.iter().map(|p| p.1.std).collect(),
            }
        })
        .collect()
}

pub fn write_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize);
    match (e.into_kind(), line) {
        (csv::ErrorKind::Io(io), _) => Error::io(path, io),
        (kind, Some(line)) => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
        (kind, None) => Error::format(path, format!("{kind:?}")),
    }
}

/// Pretty-printed JSON file.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("reports always serialise");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// JSON-lines file with one object per item.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).expect("records always serialise");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
