//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bdlab::cutoff::{
    calibrate_d, run_cutoff_experiment, run_pulse_sweep, supersolution_check, Characteristic,
    CutoffConfig, PulseConfig, Supersolution,
};
use bdlab::dynamics::{evolve_linear, evolve_linear_with, Control, EvolveOptions};
use bdlab::exec::Execution;
use bdlab::operators::{l2q_norm_v, mass_functional, OperatorMatrix, StateVector};
use bdlab::spectral::{kernel_certificate, spectrum_scan, ScanSpec};
use bdlab::{solve_z, CoefficientModel};
use common::*;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn equilibrium_exactness() -> Verdict {
    let m = Arc::new(CoefficientModel::constant(1.0, 1.0).unwrap());
    let eq = solve_z(&m, 2.0, 1e-12).unwrap();
    let z_err = (eq.z() - 0.5).abs();
    let closed_form = eq.z() / (1.0 - eq.z()).powi(2);
    let db = penrose_eq(4096).detailed_balance_residual();
    verdict(
        z_err <= 1e-10 && (closed_form - 2.0).abs() <= 1e-9 && db <= 1e-14,
        format!("|z - 1/2| = {z_err:.2e}, z/(1-z)^2 = {closed_form:.12}, detailed-balance residual {db:.2e}"),
    )
}

fn operator_oracle() -> Verdict {
    let mut worst = [0.0f64; 2];
    let mut r = rng(11);
    for n in [64, 128] {
        let eq = penrose_eq(n);
        let pairs = [
            (
                OperatorMatrix::assemble_full(&eq, n).unwrap(),
                dense_full_display(&eq, n),
            ),
            (
                OperatorMatrix::assemble_tilde(&eq, n).unwrap(),
                dense_tilde_display(&eq, n),
            ),
        ];
        for _ in 0..100 {
            let x = random_vec(&mut r, n);
            for (k, (op, dense)) in pairs.iter().enumerate() {
                let y = op.apply(&StateVector::v_form(x.clone())).unwrap();
                let yo = matvec(dense, &x);
                worst[k] = worst[k].max(l1_diff(y.values(), &yo) / l1(&yo));
            }
        }
    }
    verdict(
        worst.iter().all(|e| *e <= 1e-12),
        format!(
            "max relative error: full {:.2e}, tilde {:.2e}",
            worst[0], worst[1]
        ),
    )
}

fn conservation() -> Verdict {
    let n = 1024;
    let rtol = 1e-8;
    let eq = penrose_eq(n);
    let op = OperatorMatrix::assemble_full(&eq, n).unwrap();
    let mut worst = 0.0f64;
    let mut r = rng(3);
    for k in 0..3 {
        let v0 = if k == 0 {
            (1..=n)
                .map(|i| if (100..200).contains(&i) { 0.01 } else { 0.0 })
                .collect()
        } else {
            random_vec(&mut r, n)
        };
        let v0 = StateVector::v_form(v0);
        let m0 = mass_functional(&eq, &v0).unwrap();
        let outs: Vec<f64> = (1..=100).map(|j| j as f64).collect();
        let tr = evolve_linear(&op, &v0, 100.0, rtol, &outs).unwrap();
        let sampled = tr
            .states
            .iter()
            .map(|s| (mass_functional(&eq, s).unwrap() - m0).abs())
            .fold(0.0, f64::max);
        let drift = sampled.max(tr.max_mass_drift);
        worst = worst.max(drift / (10.0 * rtol * l1(v0.values())));
    }
    verdict(
        worst <= 1.0,
        format!("max drift / (10 rtol ||v0||) = {worst:.2e} over t in [0, 100]"),
    )
}

fn contractivity() -> Verdict {
    let n = 512;
    let rtol = 1e-8;
    let eq = penrose_eq(n);
    let op = OperatorMatrix::assemble_full(&eq, n).unwrap();
    let outs: Vec<f64> = (1..=80).map(|j| 0.25 * j as f64).collect();
    let mut r = rng(2025);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..20 {
        let v0 = random_zero_mass_v(&eq, &mut r, n);
        let mut norms = vec![l2q_norm_v(&eq, &v0)];
        evolve_linear_with(
            &op,
            &StateVector::v_form(v0),
            20.0,
            &EvolveOptions::new(rtol).diagnostics_only(),
            &outs,
            |t, v| {
                if t > 0.0 {
                    norms.push(l2q_norm_v(&eq, v));
                }
                Control::Continue
            },
        )
        .unwrap();
        for w in norms.windows(2) {
            worst = worst.max((w[1] - w[0]) / (10.0 * rtol * norms[0]));
        }
    }
    verdict(
        worst <= 1.0,
        format!("max norm increase / (10 rtol ||v0||) = {worst:.2e} over 20 data"),
    )
}

fn quasimode_decay() -> Verdict {
    let schedule: Vec<usize> = (6..=12).map(|p| 1usize << p).collect();
    let mut ok = true;
    let mut notes = Vec::new();
    for k in [1.0, 2.0] {
        let spec = ScanSpec::new(vec![0.0, 1.0, 5.0], schedule.clone(), k);
        let n = spec.required_truncation();
        let eq = penrose_eq(n);
        let rows = spectrum_scan(&eq, &spec, n, Execution::available()).unwrap();
        for chunk in rows.chunks(schedule.len()) {
            let decreasing = chunk.windows(2).all(|w| w[1].residual < w[0].residual);
            let first = chunk[0].residual;
            let last = chunk[chunk.len() - 1].residual;
            ok &= decreasing && last <= first / 4.0;
            notes.push(format!(
                "k={k} λ={}: r(64)/r(4096) = {:.2}",
                chunk[0].lambda,
                first / last
            ));
        }
    }
    verdict(ok, notes.join("; "))
}

fn exact_kernel() -> Verdict {
    let eq = penrose_eq(4096);
    let r: Vec<f64> = [1.0, 2.0]
        .iter()
        .map(|k| kernel_certificate(&eq, 4096, *k).unwrap().residual)
        .collect();
    verdict(
        r.iter().all(|x| *x <= 1e-12),
        format!("kernel residual k=1 {:.2e}, k=2 {:.2e}", r[0], r[1]),
    )
}

fn supersolution() -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    for n1 in [512usize, 1024] {
        let n = 4 * n1;
        let eq = penrose_eq(n);
        let c = Characteristic::from_equilibrium(&eq).unwrap();
        let d = calibrate_d(&eq).unwrap();
        let t_ext = c.extinction_time(n1 as f64) / 2.0;
        let grid: Vec<f64> = (0..=200).map(|j| t_ext * j as f64 / 200.0).collect();
        let good = supersolution_check(&eq, &Supersolution::w1(c, n1, d), &grid, n).unwrap();
        let bad = supersolution_check(&eq, &Supersolution::w1(c, n1, d / 4.0), &grid, n).unwrap();
        ok &= good.min_residual >= -1e-10 && bad.min_residual < -1e-10;
        notes.push(format!(
            "N1={n1}: min residual {:.2e} (D), {:.2e} (D/4)",
            good.min_residual, bad.min_residual
        ));
    }
    verdict(ok, notes.join("; "))
}

fn transport_window() -> Verdict {
    let n1_list = [512usize, 1024, 2048];
    let eq = penrose_eq(4 * 2 * 2048);
    let alpha = eq.model().alpha();
    let d = calibrate_d(&eq).unwrap();
    let template = PulseConfig::new(n1_list[0], 2 * n1_list[0]);
    let rep = run_pulse_sweep(&eq, &n1_list, 2, &template, Execution::available()).unwrap();
    let Some(mult) = rep.k_star_multiple else {
        return verdict(
            false,
            format!(
                "no K* in {{2D, 4D, 8D}} gives a uniform δ̂ (best {:.3})",
                rep.delta_hat
            ),
        );
    };
    let j = template
        .k_star_multiples
        .iter()
        .position(|m| *m == mult)
        .unwrap();
    let mut min_mass = f64::INFINITY;
    for e in &rep.experiments {
        let horizon = rep.delta_hat * (e.n1 as f64).powf(1.0 - alpha);
        for s in e.samples.iter().filter(|s| s.t < horizon) {
            min_mass = min_mass.min(s.window_mass[j]);
        }
    }
    verdict(
        rep.passed && rep.delta_hat > 0.0 && min_mass > 0.9,
        format!(
            "K* = {mult}D (D = {d:.3}), δ̂ = {:.3}, min window mass before δ̂N1^(1-α) = {min_mass:.4}, Duhamel gaps {:?}",
            rep.delta_hat,
            rep.duhamel_gaps.iter().map(|g| format!("{g:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn cutoff() -> (Verdict, Verdict) {
    let n_list = vec![256, 512, 1024, 2048];
    let eq = penrose_eq(4 * 2048);
    let alpha = eq.model().alpha();
    let rep =
        run_cutoff_experiment(&eq, &CutoffConfig::new(n_list), Execution::available()).unwrap();
    let mut min_norm = f64::INFINITY;
    for r in &rep.runs {
        let horizon = rep.delta_hat * (r.n as f64).powf(1.0 - alpha);
        for s in r.samples.iter().filter(|s| s.t < horizon) {
            min_norm = min_norm.min(s.x1);
        }
    }
    let exponent = rep.exponent.unwrap_or(f64::NAN);
    let lower = verdict(
        rep.lower_bound_pass && min_norm >= 0.9 && (exponent - (1.0 - alpha)).abs() <= 0.15,
        format!("δ̂ = {:.3}, min ||u|| before δ̂N^(1-α) = {min_norm:.4}, T_half exponent {exponent:.3} (target {:.2})", rep.delta_hat, 1.0 - alpha),
    );
    let rates: Vec<String> = rep
        .runs
        .iter()
        .map(|r| format!("{:.3e}", r.decay_rate.unwrap_or(f64::NAN)))
        .collect();
    let upper = verdict(
        rep.upper_ratio_pass && rep.decay_pass,
        format!(
            "t_eps(2N)/t_eps(N) = {:?}, decay rates {rates:?}",
            rep.t_eps_ratios
                .iter()
                .map(|x| format!("{x:.3}"))
                .collect::<Vec<_>>()
        ),
    );
    (lower, upper)
}

fn run_cli(out: &Path, threads: &str, args: &[&str]) -> bool {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bdlab"));
    cmd.args(["--out", out.to_str().unwrap(), "--threads", threads])
        .args(args);
    cmd.output()
        .map(|o| o.status.code().is_some_and(|c| c < 2))
        .unwrap_or(false)
}

fn csv_tables(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    files
        .iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(p).unwrap(),
            )
        })
        .collect()
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let commands: [&[&str]; 4] = [
        &[
            "spectrum",
            "--z",
            "0.5",
            "--lambda-grid",
            "-1,0,2",
            "--N1-schedule",
            "32,64,128,256",
        ],
        &[
            "evolve",
            "--z",
            "0.5",
            "--T",
            "5",
            "--support",
            "20",
            "60",
            "--snapshots",
        ],
        &["pulse", "--z", "0.5", "--N1", "64,128"],
        &["cutoff", "--z", "0.5", "--N-list", "64,128"],
    ];
    let mut runs = Vec::new();
    for (name, threads) in [("a", "4"), ("b", "4"), ("c", "1")] {
        let dir = tmp.path().join(name);
        for args in commands {
            if !run_cli(&dir, threads, args) {
                return verdict(false, format!("run {name} of {args:?} failed"));
            }
        }
        runs.push(csv_tables(&dir));
    }
    let files = runs[0].len();
    let bytes: usize = runs[0].iter().map(|(_, b)| b.len()).sum();
    verdict(
        files >= 6 && runs[0] == runs[1] && runs[0] == runs[2],
        format!(
            "{files} CSV files ({bytes} bytes) identical across 2 runs and a single-thread rerun"
        ),
    )
}

fn main() {
    type Check = fn() -> Verdict;
    let singles: [(usize, &str, Check, u64); 7] = [
        (1, "equilibrium exactness", equilibrium_exactness, 1),
        (2, "operator oracle equivalence", operator_oracle, 5),
        (3, "conservation", conservation, 30),
        (4, "contractivity", contractivity, 60),
        (5, "quasimode residual decay", quasimode_decay, 600),
        (6, "exact kernel", exact_kernel, 60),
        (7, "supersolution residual", supersolution, 60),
    ];
    let mut failures = 0;
    let mut report = |id: usize, name: &str, v: Verdict, elapsed: Duration, budget: u64| {
        let in_time = elapsed <= Duration::from_secs(budget);
        let pass = v.pass && in_time;
        if !pass {
            failures += 1;
        }
        let timing = if in_time {
            String::new()
        } else {
            format!(" [over {budget} s budget]")
        };
        println!(
            "{} criterion {id}: {name}: {} ({:.2} s){timing}",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64()
        );
    };
    let guarded = |f: &dyn Fn() -> Verdict| {
        catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| verdict(false, "panicked"))
    };

    for (id, name, f, budget) in singles {
        let start = Instant::now();
        let v = guarded(&f);
        report(id, name, v, start.elapsed(), budget);
    }

    let start = Instant::now();
    let v = guarded(&transport_window);
    report(8, "transport window", v, start.elapsed(), 900);

    let start = Instant::now();
    let (lower, upper) = catch_unwind(cutoff)
        .unwrap_or_else(|_| (verdict(false, "panicked"), verdict(false, "panicked")));
    let elapsed = start.elapsed();
    report(9, "cutoff scaling", lower, elapsed, 1200);
    report(10, "upper regime", upper, elapsed, 1200);

    let start = Instant::now();
    let v = guarded(&determinism);
    report(11, "determinism", v, start.elapsed(), 600);

    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 11 acceptance criteria passed");
}
