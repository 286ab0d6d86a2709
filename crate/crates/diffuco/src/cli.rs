//! The `diffuco` command line: dataset generation, training, evaluation,
//! oracle annotation and report merging.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use diffuco_core::baselines::{brute_force, BRUTE_FORCE_CAP};
use diffuco_core::decode::DecodeMode;
use diffuco_core::energy::{build_energy, DEFAULT_A, DEFAULT_B};
use diffuco_core::graph::{gen_ba, gen_er, gen_rb, sample_rb, DatasetRecord, Graph, ProblemKind, RbRange, Split};
use diffuco_core::training::{describe, train, TrainConfig, PRESET_NAMES};
use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bench::{plot_data, read_csv, run_experiment, summarize, write_csv, write_json, write_jsonl};
use crate::bench::{EvalOptions, Method, Summary, TrainedModel};
use crate::checkpoint;
use crate::config::load_config;
use crate::dataset::{read_dataset, write_dataset};
use crate::error::{Error, Result};
use crate::parallel::{default_threads, map_indexed};

#[derive(Debug, Parser)]
#[command(
    name = "diffuco",
    version,
    about = "Diffusion models for unsupervised combinatorial optimization on graphs"
)]
pub struct Cli {
    /// Worker threads for gen, eval and oracle (0 = all cores); training always runs on one thread
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a JSON-lines dataset of random graphs
    Gen(GenArgs),
    /// Train a model and write a checkpoint plus a JSON-lines log
    Train(TrainArgs),
    /// Evaluate checkpoints and reference solvers on a dataset
    Eval(EvalArgs),
    /// Annotate dataset records with exact optimal energies
    Oracle(OracleArgs),
    /// Merge report CSV files into a summary and plot data
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GraphKind {
    Er,
    Ba,
    Rb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RbPreset {
    Small,
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

fn parse_problem(s: &str) -> std::result::Result<ProblemKind, String> {
    ProblemKind::parse(s).ok_or_else(|| format!("unknown problem {s:?} (expected MIS, MDS, MaxCl, MaxCut or MVC)"))
}

fn parse_decode(s: &str) -> std::result::Result<DecodeMode, String> {
    s.parse().map_err(|e: diffuco_core::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Graph generator
    #[arg(long, value_enum)]
    pub kind: GraphKind,
    /// Number of nodes (er, ba)
    #[arg(long)]
    pub n: Option<usize>,
    /// Edge probability (er) or RB constraint tightness (rb)
    #[arg(long)]
    pub p: Option<f64>,
    /// Edges per new node (ba)
    #[arg(long)]
    pub m: Option<usize>,
    /// Number of cliques (rb)
    #[arg(long)]
    pub cliques: Option<usize>,
    /// Clique size (rb)
    #[arg(long)]
    pub ksize: Option<usize>,
    /// Draw RB parameters from a size range instead of fixing them (rb)
    #[arg(long, value_enum)]
    pub range: Option<RbPreset>,
    /// Number of graphs
    #[arg(long)]
    pub count: usize,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Problem recorded with every instance
    #[arg(long, default_value = "MIS", value_parser = parse_problem)]
    pub problem: ProblemKind,
    /// Split recorded with every instance
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    /// Output dataset file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Published hyperparameter preset
    #[arg(long, conflicts_with = "config", required_unless_present = "config", value_parser = clap::builder::PossibleValuesParser::new(PRESET_NAMES))]
    pub preset: Option<String>,
    /// JSON configuration file with the training hyperparameters
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset file; records of the selected split are used
    #[arg(long)]
    pub data: PathBuf,
    /// Split to train on
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
    /// Training seed (overrides the configuration)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint file to write
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
    /// Training log (JSON lines); defaults to the checkpoint path with a .log.jsonl extension
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Also write a checkpoint every this many steps (0 = only at the end)
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint files, one per training seed
    #[arg(long, num_args = 1..)]
    pub ckpt: Vec<PathBuf>,
    /// Dataset file
    #[arg(long)]
    pub data: PathBuf,
    /// Solutions drawn per instance
    #[arg(long, default_value_t = 8)]
    pub samples: usize,
    /// Repetitions of every diffusion step at evaluation
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
    /// Decoding of sampled solutions: raw, ce or ce-st:<k>
    #[arg(long, default_value = "ce", value_parser = parse_decode)]
    pub decode: DecodeMode,
    /// Reference solvers to run as well (greedy, mfa, sa)
    #[arg(long, value_delimiter = ',')]
    pub baselines: Vec<String>,
    /// Sampling seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output prefix: writes <out>.csv, <out>.json and <out>.plot.json
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
    /// Also write every decoded solution to this JSON-lines file
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Dataset file, annotated in place unless --out is given
    #[arg(long)]
    pub data: PathBuf,
    /// Write the annotated dataset here instead
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report CSV files to merge
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output prefix: writes <out>.csv, <out>.json and <out>.plot.json
    #[arg(long, default_value = "summary")]
    pub out: PathBuf,
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let threads = if cli.threads == 0 {
        default_threads()
    } else {
        cli.threads
    };
    match cli.command {
        Command::Gen(a) => cmd_gen(&a, threads),
        Command::Train(a) => {
            if cli.threads > 1 {
                info!("training is sequential; --threads only affects gen, eval and oracle");
            }
            cmd_train(&a)
        }
        Command::Eval(a) => cmd_eval(&a, threads),
        Command::Oracle(a) => cmd_oracle(&a, threads),
        Command::Report(a) => cmd_report(&a),
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

fn reject_flags(kind: &str, flags: &[(&str, bool)]) -> Result<()> {
    for (name, present) in flags {
        if *present {
            return Err(usage(format!("--{name} does not apply to --kind {kind}")));
        }
    }
    Ok(())
}

fn need<T: Copy>(v: Option<T>, name: &str, kind: &str) -> Result<T> {
    v.ok_or_else(|| usage(format!("--kind {kind} requires --{name}")))
}

/// Builds the generator closure for `gen`, checking flag combinations.
fn generator(a: &GenArgs) -> Result<Box<dyn Fn(u64) -> diffuco_core::Result<Graph> + Sync>> {
    match a.kind {
        GraphKind::Er => {
            reject_flags(
                "er",
                &[
                    ("m", a.m.is_some()),
                    ("cliques", a.cliques.is_some()),
                    ("ksize", a.ksize.is_some()),
                    ("range", a.range.is_some()),
                ],
            )?;
            let (n, p) = (need(a.n, "n", "er")?, need(a.p, "p", "er")?);
            Ok(Box::new(move |s| gen_er(n, p, s)))
        }
        GraphKind::Ba => {
            reject_flags(
                "ba",
                &[
                    ("p", a.p.is_some()),
                    ("cliques", a.cliques.is_some()),
                    ("ksize", a.ksize.is_some()),
                    ("range", a.range.is_some()),
                ],
            )?;
            let (n, m) = (need(a.n, "n", "ba")?, need(a.m, "m", "ba")?);
            Ok(Box::new(move |s| gen_ba(n, m, s)))
        }
        GraphKind::Rb => {
            reject_flags("rb", &[("n", a.n.is_some()), ("m", a.m.is_some())])?;
            match a.range {
                Some(r) => {
                    reject_flags(
                        "rb with --range",
                        &[
                            ("cliques", a.cliques.is_some()),
                            ("ksize", a.ksize.is_some()),
                            ("p", a.p.is_some()),
                        ],
                    )?;
                    let range = match r {
                        RbPreset::Small => RbRange::small(),
                        RbPreset::Large => RbRange::large(),
                    };
                    Ok(Box::new(move |s| sample_rb(&range, s)))
                }
                None => {
                    let c = need(a.cliques, "cliques", "rb")?;
                    let k = need(a.ksize, "ksize", "rb")?;
                    let p = need(a.p, "p", "rb")?;
                    Ok(Box::new(move |s| gen_rb(c, k, p, s)))
                }
            }
        }
    }
}

fn cmd_gen(a: &GenArgs, threads: usize) -> Result<()> {
    let make = generator(a)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let seeds: Vec<u64> = (0..a.count).map(|_| rng.gen()).collect();
    let graphs = map_indexed(a.count, threads, |i| make(seeds[i]))?;
    let records: Vec<DatasetRecord> = graphs
        .into_iter()
        .map(|graph| DatasetRecord {
            graph,
            kind: a.problem,
            split: a.split.into(),
            oracle_energy: None,
        })
        .collect();
    write_dataset(&a.out, &records)?;
    info!("wrote {} records to {}", records.len(), a.out.display());
    Ok(())
}

fn default_log_path(out: &Path) -> PathBuf {
    out.with_extension("log.jsonl")
}

fn step_checkpoint_path(out: &Path, step: usize) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    out.with_file_name(format!("{stem}.step{step}.json"))
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut config = match (&a.preset, &a.config) {
        (Some(name), None) => TrainConfig::preset(name).ok_or_else(|| usage(format!("unknown preset {name:?}")))?,
        (None, Some(path)) => load_config(path)?,
        _ => return Err(usage("exactly one of --preset and --config is required")),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let split: Split = a.split.into();
    let records: Vec<DatasetRecord> = read_dataset(&a.data)?
        .into_iter()
        .filter(|r| r.split == split)
        .collect();
    if records.is_empty() {
        return Err(Error::format(&a.data, format!("no records in the {split:?} split")));
    }
    if let Some(r) = records.iter().find(|r| r.kind != config.problem) {
        return Err(Error::format(
            &a.data,
            format!(
                "record for {} but the configuration trains {}",
                r.kind.name(),
                config.problem.name()
            ),
        ));
    }
    let graphs: Vec<Graph> = records.into_iter().map(|r| r.graph).collect();
    info!("training on {} graphs: {}", graphs.len(), describe(&config));
    let log_path = a.log.clone().unwrap_or_else(|| default_log_path(&a.out));
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let mut failure: Option<Error> = None;
    let outcome = train(&config, &graphs, |entry, params| {
        if failure.is_some() {
            return;
        }
        let line = serde_json::to_string(entry).expect("log entries always serialise");
        if let Err(e) = writeln!(log, "{line}") {
            failure = Some(Error::io(&log_path, e));
            return;
        }
        let done = entry.step + 1;
        if a.checkpoint_every > 0 && done % a.checkpoint_every == 0 && done < config.n_anneal {
            if let Err(e) = checkpoint::save(&step_checkpoint_path(&a.out, done), params, Some(&config), done) {
                failure = Some(e);
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    checkpoint::save(&a.out, &outcome.params, Some(&config), config.n_anneal)?;
    if let Some(last) = outcome.log.last() {
        info!("final loss {:.6} (energy term {:.6})", last.total, last.energy_term);
    }
    info!("wrote {} and {}", a.out.display(), log_path.display());
    Ok(())
}

fn prefixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_outputs(prefix: &Path, rows: &[crate::bench::ReportRow]) -> Result<Summary> {
    let summary = summarize(rows);
    write_csv(&prefixed(prefix, ".csv"), rows)?;
    write_json(&prefixed(prefix, ".json"), &summary)?;
    write_json(&prefixed(prefix, ".plot.json"), &plot_data(&summary))?;
    Ok(summary)
}

fn print_summary(summary: &Summary) {
    println!(
        "{:<18} {:>6} {:>6} {:>10} {:>22} {:>12} {:>10}",
        "method", "steps", "seeds", "instances", "mean rel. error", "feasible", "ms/inst"
    );
    for m in &summary.methods {
        let err = m
            .mean_rel_error
            .map_or_else(|| "n/a".to_string(), |s| format!("{:.4} ± {:.4}", s.mean, s.std));
        println!(
            "{:<18} {:>6} {:>6} {:>10} {:>22} {:>12.3} {:>10.2}",
            m.method,
            m.steps.map_or_else(|| "-".to_string(), |s| s.to_string()),
            m.seeds.len(),
            m.instances,
            err,
            m.feasibility_rate.mean,
            m.wall_ms.mean
        );
    }
}

fn cmd_eval(a: &EvalArgs, threads: usize) -> Result<()> {
    let mut methods = Vec::new();
    if !a.ckpt.is_empty() {
        methods.push(Method::Model(a.decode));
    }
    for b in &a.baselines {
        let m = Method::parse(b.trim())?;
        if matches!(m, Method::Model(_)) {
            return Err(usage(format!("{b} is not a reference solver")));
        }
        methods.push(m);
    }
    let mut models = Vec::with_capacity(a.ckpt.len());
    for (i, path) in a.ckpt.iter().enumerate() {
        let ck = checkpoint::load(path)?;
        let seed = ck.training.as_ref().map_or(i as u64, |t| t.seed);
        if models.iter().any(|m: &TrainedModel| m.seed == seed) {
            return Err(usage(format!("two checkpoints share the training seed {seed}")));
        }
        models.push(TrainedModel {
            seed,
            params: ck.params,
        });
    }
    let records = read_dataset(&a.data)?;
    let opts = EvalOptions {
        samples: a.samples,
        n_repeat: a.repeat,
        threads,
        seed: a.seed,
    };
    let report = run_experiment(&models, &records, &methods, &opts)?;
    let summary = write_outputs(&a.out, &report.rows)?;
    if let Some(path) = &a.dump {
        write_jsonl(path, &report.solutions)?;
    }
    for m in &summary.methods {
        if m.oracle_beaten > 0 {
            warn!(
                "{}: {} instances beat the stored oracle energy, which is therefore not optimal",
                m.method, m.oracle_beaten
            );
        }
    }
    print_summary(&summary);
    Ok(())
}

fn cmd_oracle(a: &OracleArgs, threads: usize) -> Result<()> {
    let mut records = read_dataset(&a.data)?;
    let energies = map_indexed(records.len(), threads, |i| -> Result<Option<f64>> {
        let r = &records[i];
        if r.graph.num_nodes() > BRUTE_FORCE_CAP {
            return Ok(None);
        }
        let e = build_energy(r.kind, &r.graph, DEFAULT_A, DEFAULT_B)?;
        Ok(Some(brute_force(&e)?.1))
    })?;
    let mut annotated = 0;
    for (i, (r, e)) in records.iter_mut().zip(energies).enumerate() {
        match e {
            Some(v) => {
                r.oracle_energy = Some(v);
                annotated += 1;
            }
            None => warn!(
                "record {}: {} nodes exceed the exhaustive-search cap of {}, skipped",
                i + 1,
                r.graph.num_nodes(),
                BRUTE_FORCE_CAP
            ),
        }
    }
    let out = a.out.as_ref().unwrap_or(&a.data);
    write_dataset(out, &records)?;
    info!(
        "annotated {annotated} of {} records in {}",
        records.len(),
        out.display()
    );
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for path in &a.inputs {
        rows.extend(read_csv(path)?);
    }
    let summary = write_outputs(&a.out, &rows)?;
    print_summary(&summary);
    Ok(())
}
