//! Experiment runner for the linearized Becker-Döring laboratory.
//!
//! One binary with a subcommand per experiment. Every subcommand reads an
//! optional TOML [`config::RunConfig`], applies command-line overrides,
//! validates, runs, and writes CSV tables plus a `summary.json` report into
//! the output directory.

pub mod config;
pub mod output;
pub mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, Generator, InitialData, RunConfig, Scheme, Task};
pub use run::{run, CliError, ExperimentReport};

#[derive(Debug, Parser)]
#[command(
    name = "bdlab",
    version,
    about = "Linearized Becker-Döring experiments"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for parameter sweeps.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Reserved; no command uses randomness.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct EquilibriumFlags {
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub z: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for z and print z, μ, tail bound and ratio.
    Equilibrium {
        #[command(flatten)]
        eq: EquilibriumFlags,
        #[arg(long = "N")]
        n: Option<usize>,
    },
    /// Evolve the linearized flow and record diagnostics.
    Evolve {
        /// TOML file whose `[model]` table replaces the configured model.
        #[arg(long)]
        model_config: Option<PathBuf>,
        #[command(flatten)]
        eq: EquilibriumFlags,
        #[arg(long = "N")]
        n: Option<usize>,
        #[arg(long = "T")]
        t: Option<f64>,
        #[arg(long)]
        rtol: Option<f64>,
        #[arg(long, value_enum)]
        scheme: Option<Scheme>,
        #[arg(long, value_enum)]
        data: Option<InitialData>,
        #[arg(long, value_enum)]
        operator: Option<Generator>,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
        support: Option<Vec<usize>>,
        /// Write full-state snapshots.
        #[arg(long)]
        snapshots: bool,
        /// Diagnostics CSV path.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Quasimode residual table over a λ grid and window schedule.
    Spectrum {
        #[command(flatten)]
        eq: EquilibriumFlags,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        lambda_grid: Option<Vec<f64>>,
        #[arg(long = "N1-schedule", value_delimiter = ',')]
        n1_schedule: Option<Vec<usize>>,
        #[arg(long)]
        k: Option<f64>,
        #[arg(long)]
        mass_correct: bool,
    },
    /// Transport-window experiment for uniform pulses.
    Pulse {
        #[arg(long = "N1", value_delimiter = ',')]
        n1: Option<Vec<usize>>,
        #[arg(long = "N2")]
        n2: Option<usize>,
        #[command(flatten)]
        eq: EquilibriumFlags,
        #[arg(long)]
        eps: Option<f64>,
        /// Absolute K*; skips the multiple-of-D scan.
        #[arg(long = "Kstar")]
        k_star: Option<f64>,
        #[arg(long = "T")]
        t: Option<f64>,
    },
    /// Cutoff sweep on two-pulse data.
    Cutoff {
        #[arg(long = "N-list", value_delimiter = ',')]
        n_list: Option<Vec<usize>>,
        #[command(flatten)]
        eq: EquilibriumFlags,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Check the standing and quasimode hypotheses on the rates.
    CheckAssumptions {
        #[arg(long = "N")]
        n: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
}

impl Command {
    pub fn task(&self) -> Task {
        match self {
            Command::Equilibrium { .. } => Task::Equilibrium,
            Command::Evolve { .. } => Task::Evolve,
            Command::Spectrum { .. } => Task::Spectrum,
            Command::Pulse { .. } => Task::Pulse,
            Command::Cutoff { .. } => Task::Cutoff,
            Command::CheckAssumptions { .. } => Task::CheckAssumptions,
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn apply_equilibrium(c: &mut RunConfig, eq: &EquilibriumFlags) {
    if let Some(mu) = eq.mu {
        c.equilibrium.mu = Some(mu);
        if eq.z.is_none() {
            c.equilibrium.z = None;
        }
    }
    if let Some(z) = eq.z {
        c.equilibrium.z = Some(z);
        if eq.mu.is_none() {
            c.equilibrium.mu = None;
        }
    }
}

impl Cli {
    /// Loads the config file (or defaults) and layers the flags on top.
    pub fn resolve_config(&self) -> Result<(RunConfig, Option<PathBuf>), ConfigError> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(dir) = &self.out {
            c.output.dir = dir.clone();
        }
        let mut csv_path = None;
        let e = &mut c.experiment;
        match &self.command {
            Command::Equilibrium { eq, n } => {
                apply_equilibrium(&mut c, eq);
                set_opt(&mut c.numerics.n_trunc, *n);
            }
            Command::Evolve {
                model_config,
                eq,
                n,
                t,
                rtol,
                scheme,
                data,
                operator,
                support,
                snapshots,
                output,
            } => {
                set(&mut e.evolve.t, *t);
                set(&mut e.evolve.data, *data);
                set(&mut e.evolve.operator, *operator);
                if let Some(s) = support {
                    e.evolve.support = [s[0], s[1]];
                }
                e.evolve.snapshots |= *snapshots;
                if let Some(p) = model_config {
                    c.model = RunConfig::load(p)?.model;
                }
                apply_equilibrium(&mut c, eq);
                set_opt(&mut c.numerics.n_trunc, *n);
                set(&mut c.numerics.rtol, *rtol);
                set(&mut c.numerics.scheme, *scheme);
                csv_path = output.clone();
            }
            Command::Spectrum {
                eq,
                lambda_grid,
                n1_schedule,
                k,
                mass_correct,
            } => {
                set(&mut e.spectrum.lambda_grid, lambda_grid.clone());
                set(&mut e.spectrum.n1_schedule, n1_schedule.clone());
                set(&mut e.spectrum.k, *k);
                e.spectrum.mass_correct |= *mass_correct;
                apply_equilibrium(&mut c, eq);
            }
            Command::Pulse {
                n1,
                n2,
                eq,
                eps,
                k_star,
                t,
            } => {
                set(&mut e.pulse.n1, n1.clone());
                set_opt(&mut e.pulse.n2, *n2);
                set(&mut e.pulse.eps, *eps);
                set_opt(&mut e.pulse.k_star, *k_star);
                set_opt(&mut e.pulse.t, *t);
                apply_equilibrium(&mut c, eq);
            }
            Command::Cutoff {
                n_list,
                eq,
                eps,
                eta,
            } => {
                set(&mut e.cutoff.n_list, n_list.clone());
                set(&mut e.cutoff.eps, *eps);
                set(&mut e.cutoff.eta, *eta);
                apply_equilibrium(&mut c, eq);
            }
            Command::CheckAssumptions { n, tol } => {
                set(&mut e.assumptions.n, *n);
                set(&mut e.assumptions.tol, *tol);
            }
        }
        Ok((c.resolve(self.command.task())?, csv_path))
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the report. Used by the binary and by tests.
pub fn run_from_args<I, T>(args: I) -> Result<ExperimentReport, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    run_cli(&cli)
}

pub fn run_cli(cli: &Cli) -> Result<ExperimentReport, CliError> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        bdlab::exec::configure_threads(k).map_err(CliError::Threads)?;
    }
    let (config, csv_path) = cli.resolve_config()?;
    run::run(cli.command.task(), &config, csv_path.as_deref())
}
