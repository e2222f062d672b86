//! Command-line front end: training runs, the exact oracle, trace
//! verification and policy-graph export.

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mirror_core::dag::build_dag;
use mirror_core::drift::{DriftKind, DriftSpec};
use mirror_core::env::{build_random_mdp, EnvName};
use mirror_core::experiment::{
    export_trace, load_trace, run_training, verify_rows, verify_trace, write_csv, LoadedTrace,
    RunConfig, TraceFormat, VerificationReport, ORACLE_TOL,
};
use mirror_core::mdp::value_iteration;
use mirror_core::mirror::{SamplingSpec, SolverConfig};
use mirror_core::neighbourhood::{NeighbourhoodKind, NeighbourhoodSpec};
use mirror_core::policy::TabularPolicy;

/// Shape of the random micro-MDPs used by `dag --env random`.
const DAG_RANDOM_STATES: usize = 2;
const DAG_RANDOM_ACTIONS: usize = 2;
const DAG_RANDOM_GAMMA: f64 = 0.9;

#[derive(Parser)]
#[command(name = "mirror", version, about = "Tabular mirror learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from the uniform policy and export the trace.
    Run(RunArgs),
    /// Print the optimal return and state values.
    Oracle {
        #[arg(long)]
        env: EnvName,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-check a saved trace; exits nonzero on any failure.
    Verify {
        #[arg(long)]
        trace: PathBuf,
        /// Also require the last iterate to match the oracle (structured
        /// traces only).
        #[arg(long)]
        convergence: bool,
    },
    /// Build the policy graph of a micro-MDP and export it as CSV.
    Dag(DagArgs),
}

#[derive(Args)]
struct DriftArgs {
    #[arg(long)]
    drift: Option<DriftKind>,
    #[arg(long)]
    drift_coeff: Option<f64>,
    #[arg(long)]
    clip_eps: Option<f64>,
    #[arg(long)]
    neigh: Option<NeighbourhoodKind>,
    #[arg(long)]
    radius: Option<f64>,
}

impl DriftArgs {
    fn drift(&self) -> Result<DriftSpec> {
        let kind = self.drift.context("--drift is required")?;
        let base = DriftSpec::of(kind);
        let clip = match (kind, self.clip_eps) {
            (DriftKind::PpoClip, eps) => Some(eps.unwrap_or(base.clip_epsilon.unwrap())),
            (_, Some(_)) => bail!("--clip-eps only applies to ppo_clip"),
            (_, None) => None,
        };
        Ok(DriftSpec::new(kind, self.drift_coeff.unwrap_or(base.coeff), clip, base.nu_kind)?)
    }

    fn neighbourhood(&self, drift: DriftSpec) -> Result<NeighbourhoodSpec> {
        let kind = self.neigh.context("--neigh is required")?;
        Ok(NeighbourhoodSpec::of(kind, self.radius, drift)?)
    }
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; replaces every other run option except --out
    /// and --format.
    #[arg(long, conflicts_with_all = ["env", "drift", "neigh", "iters"])]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<EnvName>,
    #[command(flatten)]
    drift: DriftArgs,
    #[arg(long, default_value = "uniform")]
    sampling: SamplingSpec,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; the CSV goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: TraceFormat,
}

impl RunArgs {
    fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_json_file(path)
                .with_context(|| format!("reading {}", path.display()))?,
            None => {
                let drift = self.drift.drift()?;
                RunConfig {
                    env: self.env.context("--env is required")?,
                    drift,
                    neighbourhood: self.drift.neighbourhood(drift)?,
                    sampling: self.sampling,
                    iterations: self.iters.context("--iters is required")?,
                    solver: SolverConfig::default(),
                    seed: self.seed,
                    output: None,
                }
            }
        };
        if self.out.is_some() {
            cfg.output = self.out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct DagArgs {
    /// `bandit` or `random`.
    #[arg(long)]
    env: EnvName,
    #[arg(long)]
    grid_step: f64,
    #[command(flatten)]
    drift: DriftArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving `vertices.csv` and `edges.csv`.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => run(&args),
        Command::Oracle { env, seed } => {
            let mdp = env.build(seed)?;
            let sol = value_iteration(&mdp, ORACLE_TOL)?;
            let mut out = io::stdout().lock();
            writeln!(out, "eta_star {:?}", sol.eta_star)?;
            for (s, v) in sol.values.v.iter().enumerate() {
                writeln!(out, "V[{s}] {v:?}")?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { trace, convergence } => {
            let loaded = load_trace(&trace).with_context(|| format!("reading {}", trace.display()))?;
            let report = match &loaded {
                LoadedTrace::Full(t) => verify_trace(t, convergence),
                LoadedTrace::Rows(rows) => {
                    if convergence {
                        bail!("--convergence needs a structured trace");
                    }
                    verify_rows(rows)
                }
            };
            print_report(&report)?;
            Ok(exit_for(&report))
        }
        Command::Dag(args) => dag(&args),
    }
}

fn run(args: &RunArgs) -> Result<ExitCode> {
    let cfg = args.config()?;
    let trace = run_training(&cfg)?;
    match &cfg.output {
        Some(path) => {
            export_trace(&trace, args.format, path)
                .with_context(|| format!("writing {}", path.display()))?;
            let last = trace.rows.last().unwrap();
            eprintln!(
                "{} iterations: eta {:?} (oracle {:?}), cumulative drift {:?} <= {:?}",
                cfg.iterations, last.eta, trace.oracle_eta_star, last.cum_drift, last.bound
            );
        }
        None => match args.format {
            TraceFormat::Csv => write_csv(&trace.rows, io::stdout().lock())?,
            TraceFormat::Structured => {
                let mut out = io::stdout().lock();
                serde_json::to_writer_pretty(&mut out, &trace)?;
                writeln!(out)?;
            }
        },
    }
    let report = verify_trace(&trace, false);
    if !report.passed() {
        print_report(&report)?;
    }
    Ok(exit_for(&report))
}

fn dag(args: &DagArgs) -> Result<ExitCode> {
    let mdp = match args.env {
        EnvName::Bandit => args.env.build(args.seed)?,
        EnvName::Random => build_random_mdp(
            DAG_RANDOM_STATES,
            DAG_RANDOM_ACTIONS,
            DAG_RANDOM_GAMMA,
            args.seed,
        )?,
        other => bail!("dag supports bandit and random, not {other}"),
    };
    let drift = args.drift.drift()?;
    let neigh = args.drift.neighbourhood(drift)?;
    let uniform = TabularPolicy::uniform(mdp.num_states(), mdp.num_actions());
    let beta = SamplingSpec::Uniform.resolve(&mdp, &uniform)?;
    let graph = build_dag(&mdp, args.grid_step, &drift, &neigh, &beta)?;
    graph
        .export_csv(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let stranded = graph.stranded_vertices();
    println!(
        "vertices {} edges {} eta_star {:?} eps_grid {:?} sinks {:?} stranded {:?}",
        graph.num_vertices(),
        graph.edges().len(),
        graph.eta_star(),
        graph.eps_grid(),
        graph.sinks(),
        stranded
    );
    Ok(if stranded.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn print_report(report: &VerificationReport) -> Result<()> {
    let mut out = io::stdout().lock();
    for check in &report.checks {
        let n = report.failures.iter().filter(|f| &f.check == check).count();
        writeln!(out, "{check}: {}", if n == 0 { "ok".to_string() } else { format!("{n} failure(s)") })?;
    }
    for f in &report.failures {
        match f.iter {
            Some(i) => writeln!(out, "FAIL {} at iteration {i}: {}", f.check, f.detail)?,
            None => writeln!(out, "FAIL {}: {}", f.check, f.detail)?,
        }
    }
    Ok(())
}

fn exit_for(report: &VerificationReport) -> ExitCode {
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
