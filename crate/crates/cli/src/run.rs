//! Dispatch from a validated config to the experiment drivers.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use bdlab::cutoff::{
    calibrate_d, run_cutoff_experiment, run_pulse_experiment, run_pulse_sweep, two_pulse_data,
    uniform_pulse, CutoffConfig, PulseConfig, TAIL_LIMIT,
};
use bdlab::dynamics::{
    evolve_linear_implicit, evolve_linear_with, Control, EvolveOptions, Trajectory,
};
use bdlab::exec::Execution;
use bdlab::operators::{l2q_norm_v, OperatorMatrix, StateVector};
use bdlab::spectral::{kernel_certificate, spectrum_scan, ScanSpec};
use bdlab::{check_assumptions, compute_q, mu_s_estimate, solve_z, EquilibriumState};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{ConfigError, Generator, InitialData, RunConfig, Scheme, Task};
use crate::output::{fmt_f64, fmt_opt, OutputError, OutputSet};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] bdlab::Error),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("thread pool: {0}")]
    Threads(String),
}

/// Truncation used when only `z` is given to `equilibrium`.
const DEFAULT_EQUILIBRIUM_N: usize = 4096;

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub command: Task,
    pub config: RunConfig,
    pub config_hash: String,
    /// Paths of the CSV/JSON tables, relative to the output directory when inside it.
    pub tables: Vec<String>,
    pub summary: Value,
    pub flags: BTreeMap<String, bool>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.flags.values().all(|f| *f)
    }
}

struct Outcome {
    summary: Value,
    flags: BTreeMap<String, bool>,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    out: OutputSet,
    timings: BTreeMap<String, f64>,
    exec: Execution,
}

impl Ctx<'_> {
    fn timed<T>(
        &mut self,
        stage: &str,
        f: impl FnOnce(&mut Self) -> Result<T, CliError>,
    ) -> Result<T, CliError> {
        let start = Instant::now();
        let r = f(self);
        self.timings
            .insert(stage.to_string(), start.elapsed().as_secs_f64());
        r
    }

    fn equilibrium(&self, n: usize) -> Result<Arc<EquilibriumState>, CliError> {
        let model = self.cfg.model.build()?;
        let z = match (self.cfg.equilibrium.mu, self.cfg.equilibrium.z) {
            (Some(mu), _) => solve_z(&model, mu, self.cfg.equilibrium.tol)?.z(),
            (None, Some(z)) => z,
            (None, None) => return Err(ConfigError::MuOrZ.into()),
        };
        Ok(Arc::new(compute_q(&model, z, n)?))
    }
}

/// Runs `task` with a resolved config, writing tables and `summary.json`
/// into `config.output.dir`. On error every file written so far is removed.
pub fn run(
    task: Task,
    config: &RunConfig,
    evolve_csv: Option<&Path>,
) -> Result<ExperimentReport, CliError> {
    let mut ctx = Ctx {
        cfg: config,
        out: OutputSet::new(&config.output.dir)?,
        timings: BTreeMap::new(),
        exec: Execution::available(),
    };
    let start = Instant::now();
    let result = match task {
        Task::Equilibrium => ctx.timed("equilibrium", run_equilibrium),
        Task::Evolve => ctx.timed("evolve", |c| run_evolve(c, evolve_csv)),
        Task::Spectrum => ctx.timed("spectrum", run_spectrum),
        Task::Pulse => ctx.timed("pulse", run_pulse),
        Task::Cutoff => ctx.timed("cutoff", run_cutoff),
        Task::CheckAssumptions => ctx.timed("check_assumptions", run_assumptions),
    };
    let finish = |ctx: &mut Ctx, outcome: Outcome| -> Result<ExperimentReport, CliError> {
        ctx.timings
            .insert("total".into(), start.elapsed().as_secs_f64());
        let dir = ctx.out.dir().to_path_buf();
        let tables = ctx
            .out
            .written()
            .iter()
            .map(|p| p.strip_prefix(&dir).unwrap_or(p).display().to_string())
            .collect();
        let report = ExperimentReport {
            command: task,
            config: config.clone(),
            config_hash: config.content_hash(),
            tables,
            summary: outcome.summary,
            flags: outcome.flags,
            timings: std::mem::take(&mut ctx.timings),
        };
        let path = ctx.out.path("summary.json");
        ctx.out.write_json(&path, &report)?;
        Ok(report)
    };
    match result.and_then(|o| finish(&mut ctx, o)) {
        Ok(r) => Ok(r),
        Err(e) => {
            ctx.out.discard();
            Err(e)
        }
    }
}

fn flags<const N: usize>(items: [(&str, bool); N]) -> BTreeMap<String, bool> {
    items.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn run_equilibrium(ctx: &mut Ctx) -> Result<Outcome, CliError> {
    let model = ctx.cfg.model.build()?;
    let eq = match (ctx.cfg.equilibrium.mu, ctx.cfg.equilibrium.z) {
        (Some(mu), _) => solve_z(&model, mu, ctx.cfg.equilibrium.tol)?,
        (None, Some(z)) => compute_q(
            &model,
            z,
            ctx.cfg.numerics.n_trunc.unwrap_or(DEFAULT_EQUILIBRIUM_N),
        )?,
        (None, None) => return Err(ConfigError::MuOrZ.into()),
    };
    let s = eq.summary();
    let residual = eq.detailed_balance_residual();
    let summary = json!({
        "z": s.z,
        "mu": s.mu,
        "tail_bound": s.tail_bound,
        "ratio": s.ratio,
        "N": s.n,
        "detailed_balance_residual": residual,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).map_err(OutputError::from)?
    );
    let path = ctx.out.path("equilibrium.json");
    ctx.out.write_json(&path, &summary)?;
    Ok(Outcome {
        summary,
        flags: flags([
            ("detailed_balance", residual <= 1e-12),
            ("tail_converged", s.ratio < 1.0),
        ]),
    })
}

fn initial_data(ctx: &Ctx, eq: &EquilibriumState, n: usize) -> Result<Vec<f64>, CliError> {
    let [lo, hi] = ctx.cfg.experiment.evolve.support;
    Ok(match ctx.cfg.experiment.evolve.data {
        InitialData::Pulse => uniform_pulse(lo, hi, n)?,
        InitialData::TwoPulse => two_pulse_data(hi, n)?,
        InitialData::Kernel => {
            let xi = &eq.xi_v()[..n];
            let s: f64 = xi.iter().sum();
            xi.iter().map(|x| x / s).collect()
        }
    })
}

fn run_evolve(ctx: &mut Ctx, csv_path: Option<&Path>) -> Result<Outcome, CliError> {
    let n = ctx.cfg.n_trunc();
    let e = ctx.cfg.experiment.evolve.clone();
    let num = ctx.cfg.numerics.clone();
    let eq = ctx.equilibrium(n)?;
    let op = match e.operator {
        Generator::Full => OperatorMatrix::assemble_full(&eq, n)?,
        Generator::Tilde => OperatorMatrix::assemble_tilde(&eq, n)?,
    };
    let v0 = StateVector::v_form(initial_data(ctx, &eq, n)?);
    let outs: Vec<f64> = (1..=e.n_out)
        .map(|j| e.t * j as f64 / e.n_out as f64)
        .collect();
    let mut l2: Vec<f64> = Vec::new();
    let mut snaps: Vec<(f64, Vec<f64>)> = Vec::new();
    let traj: Trajectory = match num.scheme {
        Scheme::Explicit => evolve_linear_with(
            &op,
            &v0,
            e.t,
            &EvolveOptions::new(num.rtol).diagnostics_only(),
            &outs,
            |t, v| {
                l2.push(l2q_norm_v(&eq, v));
                if e.snapshots {
                    snaps.push((t, v.to_vec()));
                }
                Control::Continue
            },
        )?,
        Scheme::Implicit => {
            let tr = evolve_linear_implicit(&op, &v0, e.t, num.dt, &outs)?;
            for (t, s) in tr.times.iter().zip(&tr.states) {
                l2.push(l2q_norm_v(&eq, s.values()));
                if e.snapshots {
                    snaps.push((*t, s.values().to_vec()));
                }
            }
            tr
        }
    };
    let path = csv_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.out.path("evolve.csv"));
    let rows = (0..traj.times.len())
        .map(|j| {
            vec![
                fmt_f64(traj.times[j]),
                fmt_f64(traj.x1[j]),
                fmt_f64(traj.mass[j]),
                fmt_f64(l2[j]),
            ]
        })
        .collect::<Vec<_>>();
    ctx.out
        .write_csv(&path, &["t", "X1_norm", "mass", "l2Q_norm"], rows)?;
    if e.snapshots {
        let rows = snaps.iter().flat_map(|(t, v)| {
            v.iter()
                .enumerate()
                .map(move |(k, x)| vec![fmt_f64(*t), (k + 1).to_string(), fmt_f64(*x)])
        });
        let p = path.with_file_name(format!(
            "{}_snapshots.csv",
            path.file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("evolve")
        ));
        ctx.out
            .write_csv(&p, &["t", "i", "v_i"], rows.collect::<Vec<_>>())?;
    }
    let norm0 = traj.x1[0];
    let mass_ok = traj.max_mass_drift <= 10.0 * num.rtol * norm0.max(f64::MIN_POSITIVE);
    let slack = (10.0 * num.rtol + 1e-14) * l2[0];
    let contractive = l2.windows(2).all(|w| w[1] <= w[0] + slack);
    let mut fl = flags([("mass_conserved", mass_ok)]);
    if e.operator == Generator::Full {
        fl.insert("contractive".into(), contractive);
    }
    let summary = json!({
        "N": n,
        "z": eq.z(),
        "T": traj.final_time(),
        "scheme": num.scheme,
        "operator": e.operator,
        "max_mass_drift": traj.max_mass_drift,
        "X1_initial": norm0,
        "X1_final": traj.x1.last(),
        "l2Q_initial": l2.first(),
        "l2Q_final": l2.last(),
        "steps_accepted": traj.stats.accepted,
        "steps_rejected": traj.stats.rejected,
    });
    Ok(Outcome { summary, flags: fl })
}

fn run_spectrum(ctx: &mut Ctx) -> Result<Outcome, CliError> {
    let s = &ctx.cfg.experiment.spectrum;
    let mut spec = ScanSpec::new(s.lambda_grid.clone(), s.n1_schedule.clone(), s.k);
    spec.mass_correct = s.mass_correct;
    spec.n2_factor = s.n2_factor;
    let n = ctx.cfg.n_trunc().max(spec.required_truncation());
    let eq = ctx.equilibrium(n)?;
    let rows = spectrum_scan(&eq, &spec, n, ctx.exec)?;
    let kernel = kernel_certificate(&eq, n, spec.k)?;
    let path = ctx.out.path("spectrum.csv");
    let table = rows.iter().map(|r| {
        vec![
            fmt_f64(r.lambda),
            r.n1.to_string(),
            r.n2.to_string(),
            fmt_f64(r.k),
            fmt_f64(r.residual),
            fmt_f64(r.bound),
        ]
    });
    ctx.out.write_csv(
        &path,
        &["lambda", "N1", "N2", "k", "residual", "bound"],
        table.collect::<Vec<_>>(),
    )?;
    let per = spec.n1_schedule.len();
    let decreasing = rows
        .chunks(per)
        .all(|c| c.windows(2).all(|w| w[1].residual < w[0].residual));
    let decay: Vec<Value> = rows
        .chunks(per)
        .map(
            |c| json!({"lambda": c[0].lambda, "first": c[0].residual, "last": c[per - 1].residual}),
        )
        .collect();
    let summary = json!({
        "N": n,
        "z": eq.z(),
        "rows": rows.len(),
        "residual_decay": decay,
        "kernel_residual": kernel.residual,
    });
    Ok(Outcome {
        summary,
        flags: flags([
            ("residual_decreasing", decreasing),
            ("kernel_exact", kernel.residual <= 1e-12),
        ]),
    })
}

fn run_pulse(ctx: &mut Ctx) -> Result<Outcome, CliError> {
    let p = ctx.cfg.experiment.pulse.clone();
    let n = ctx.cfg.n_trunc();
    let eq = ctx.equilibrium(n)?;
    let d = calibrate_d(&eq)?;
    let mut template = PulseConfig::new(p.n1[0], p.n2.unwrap_or(p.n2_factor * p.n1[0]));
    template.eps = p.eps;
    template.k_star_multiples = match p.k_star {
        Some(k) => vec![k / d],
        None => p.k_star_multiples.clone(),
    };
    template.t_end = p.t;
    template.rtol = ctx.cfg.numerics.rtol;
    template.n_out = p.n_out;
    let (experiments, chosen, delta_hat, uniformity, gaps, passed) = if p.n2.is_some() {
        template.n_trunc = Some(n);
        let e = run_pulse_experiment(&eq, &template)?;
        let pick = e.k_star.iter().position(|o| o.delta_hat > 0.0);
        let delta = pick.map_or(0.0, |j| e.k_star[j].delta_hat);
        let gaps = vec![e.duhamel_gap_at_horizon];
        (vec![e], pick, delta, 1.0, gaps, pick.is_some())
    } else {
        let r = run_pulse_sweep(&eq, &p.n1, p.n2_factor, &template, ctx.exec)?;
        let pick = r
            .k_star_multiple
            .and_then(|m| template.k_star_multiples.iter().position(|x| *x == m));
        (
            r.experiments,
            pick,
            r.delta_hat,
            r.uniformity,
            r.duhamel_gaps,
            r.passed,
        )
    };
    let j = chosen.unwrap_or(template.k_star_multiples.len() - 1);
    for e in &experiments {
        let path = ctx.out.path(&format!("pulse_N1_{}.csv", e.n1));
        let rows = e.samples.iter().map(|s| {
            vec![
                fmt_f64(s.t),
                fmt_f64(s.x1),
                fmt_f64(s.window_mass[j]),
                fmt_f64(s.windows[j].0),
                fmt_f64(s.windows[j].1),
                fmt_f64(s.duhamel_gap),
            ]
        });
        ctx.out.write_csv(
            &path,
            &[
                "t",
                "X1_norm",
                "window_mass",
                "window_lo",
                "window_hi",
                "duhamel_gap",
            ],
            rows.collect::<Vec<_>>(),
        )?;
    }
    let tail_ok = experiments.iter().all(|e| e.tail_mass < TAIL_LIMIT);
    let runs: Vec<Value> = experiments
        .iter()
        .map(|e| {
            json!({
                "N1": e.n1,
                "N2": e.n2,
                "N_trunc": e.n_trunc,
                "N_star": e.n_star.value,
                "horizon": e.horizon,
                "k_star": e.k_star,
                "duhamel_gap_at_horizon": e.duhamel_gap_at_horizon,
                "comparison_excess": e.comparison_excess,
                "tilde_min": e.tilde_min,
                "tail_mass": e.tail_mass,
                "mass_drift": e.mass_drift,
            })
        })
        .collect();
    let summary = json!({
        "z": eq.z(),
        "D": d,
        "k_star": chosen.map(|j| template.k_star_multiples[j] * d),
        "k_star_multiple": chosen.map(|j| template.k_star_multiples[j]),
        "delta_hat": delta_hat,
        "uniformity": uniformity,
        "duhamel_gaps": gaps,
        "runs": runs,
    });
    Ok(Outcome {
        summary,
        flags: flags([("transport_window", passed), ("tail_mass_small", tail_ok)]),
    })
}

fn run_cutoff(ctx: &mut Ctx) -> Result<Outcome, CliError> {
    let c = &ctx.cfg.experiment.cutoff;
    let mut cfg = CutoffConfig::new(c.n_list.clone());
    cfg.eps = c.eps;
    cfg.eta = c.eta;
    cfg.dt_out = c.dt_out;
    cfg.budget_factor = c.budget_factor;
    cfg.rtol = ctx.cfg.numerics.rtol;
    let n = ctx.cfg.n_trunc();
    let eq = ctx.equilibrium(n)?;
    let rep = run_cutoff_experiment(&eq, &cfg, ctx.exec)?;
    for r in &rep.runs {
        let path = ctx.out.path(&format!("cutoff_N_{}.csv", r.n));
        let rows = r.samples.iter().map(|s| {
            vec![
                fmt_f64(s.t),
                fmt_f64(s.x1),
                fmt_f64(s.y_eta),
                fmt_f64(s.mass),
            ]
        });
        ctx.out.write_csv(
            &path,
            &["t", "X1_norm", "Yeta_norm", "mass"],
            rows.collect::<Vec<_>>(),
        )?;
    }
    let path = ctx.out.path("cutoff_table.csv");
    let rows = rep.runs.iter().map(|r| {
        vec![
            r.n.to_string(),
            r.n_trunc.to_string(),
            fmt_opt(r.t_lower),
            fmt_opt(r.t_half),
            fmt_opt(r.t_eps),
            fmt_f64(r.delta_hat),
            fmt_opt(r.decay_rate),
            r.censored.to_string(),
        ]
    });
    ctx.out.write_csv(
        &path,
        &[
            "N",
            "N_trunc",
            "T_lower",
            "T_half",
            "T_eps",
            "delta_hat",
            "decay_rate",
            "censored",
        ],
        rows.collect::<Vec<_>>(),
    )?;
    let t_half: Vec<Value> = rep
        .runs
        .iter()
        .map(|r| json!({"N": r.n, "T_half": r.t_half, "T_eps": r.t_eps, "T_lower": r.t_lower}))
        .collect();
    let summary = json!({
        "z": eq.z(),
        "delta_hat": rep.delta_hat,
        "delta_uniformity": rep.delta_uniformity,
        "T_half_table": t_half,
        "fitted_exponent": rep.exponent,
        "target_exponent": rep.target_exponent,
        "prefactor": rep.prefactor,
        "t_eps_ratios": rep.t_eps_ratios,
        "decay_rates": rep.runs.iter().map(|r| r.decay_rate).collect::<Vec<_>>(),
    });
    Ok(Outcome {
        summary,
        flags: flags([
            ("lower_bound", rep.lower_bound_pass),
            ("exponent", rep.exponent_pass),
            ("t_half_monotone", rep.t_half_monotone),
            ("upper_ratio", rep.upper_ratio_pass),
            ("decay", rep.decay_pass),
        ]),
    })
}

fn run_assumptions(ctx: &mut Ctx) -> Result<Outcome, CliError> {
    let a = &ctx.cfg.experiment.assumptions;
    let model = ctx.cfg.model.build()?;
    let rep = check_assumptions(&model, a.n, a.tol)?;
    let mu_s = mu_s_estimate(&model, a.n)?;
    let summary = json!({ "assumptions": rep, "mu_s": mu_s });
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).map_err(OutputError::from)?
    );
    let path = ctx.out.path("assumptions.json");
    ctx.out.write_json(&path, &summary)?;
    Ok(Outcome {
        summary,
        flags: flags([
            ("standing", rep.standing_pass()),
            ("quasimode_hypotheses", rep.quasimode_hypotheses_pass()),
        ]),
    })
}
