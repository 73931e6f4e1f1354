//! Truncated nonlinear Becker-Döring flow and the linearization check.

use std::sync::Arc;

use serde::Serialize;

use super::rk::{Admit, Dopri5};
use super::{evolve_linear, output_grid, StepStats};
use crate::coefficients::CoefficientModel;
use crate::equilibrium::EquilibriumState;
use crate::error::{invalid, Error, Result};
use crate::operators::{compensated_sum, mass_functional, OperatorMatrix, StateVector};

/// Relative negativity tolerated before a step is rejected; smaller
/// undershoots are clamped to zero.
const NEGATIVITY_SLACK: f64 = 1e-13;

#[derive(Debug, Clone)]
pub struct NonlinearTrajectory {
    pub times: Vec<f64>,
    /// Concentrations `c_1..c_N` at each output time.
    pub states: Vec<Vec<f64>>,
    /// `Σ i c_i` at each output time.
    pub mass: Vec<f64>,
    pub max_mass_drift: f64,
    pub stats: StepStats,
}

fn first_moment(c: &[f64]) -> f64 {
    compensated_sum(c.iter().enumerate().map(|(k, x)| (k + 1) as f64 * x))
}

struct Rates {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Rates {
    fn new(model: &CoefficientModel, n: usize) -> Self {
        // index k holds a_{k+1}, b_{k+1}
        Self {
            a: (1..=n).map(|i| model.a(i)).collect(),
            b: (1..=n).map(|i| model.b(i)).collect(),
        }
    }

    fn rhs(&self, c: &[f64], dc: &mut [f64], flux: &mut [f64]) {
        let n = c.len();
        let c1 = c[0];
        for k in 0..n - 1 {
            flux[k] = self.a[k] * c1 * c[k] - self.b[k + 1] * c[k + 1];
        }
        let mut prev = 0.0;
        for k in 0..n {
            let jk = if k + 1 < n { flux[k] } else { 0.0 };
            dc[k] = prev - jk;
            prev = jk;
        }
        // monomers take part in every aggregation and fragmentation
        dc[0] = -flux[0] - compensated_sum(flux[..n - 1].iter().copied());
    }

    fn rate_scale(&self, c: &[f64]) -> f64 {
        let c1 = c[0].max(0.0);
        let tri = self
            .a
            .iter()
            .zip(&self.b)
            .map(|(a, b)| a * c1 + b)
            .fold(0.0, f64::max);
        let row1 = 4.0 * self.a[0] * c1
            + compensated_sum(self.a.iter().zip(c).map(|(a, x)| a * x.max(0.0)));
        tri.max(row1)
    }
}

/// Integrates `dc_i/dt = J_{i-1} - J_i` (with the monomer equation) under
/// the zero-flux closure `J_N = 0`, where `N = c0.len()`.
pub fn evolve_nonlinear(
    model: &CoefficientModel,
    c0: &[f64],
    t_end: f64,
    rtol: f64,
    output_times: &[f64],
) -> Result<NonlinearTrajectory> {
    let n = c0.len();
    if n < 2 {
        return Err(Error::Size(format!(
            "nonlinear truncation needs N >= 2, got {n}"
        )));
    }
    if c0.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(invalid("c0", "must be finite and nonnegative"));
    }
    if !(rtol > 0.0) {
        return Err(invalid("rtol", format!("{rtol} must be positive")));
    }
    let grid = output_grid(t_end, output_times)?;
    let rates = Rates::new(model, n);
    let mass0 = first_moment(c0);
    let cap0 = 1.8 / rates.rate_scale(c0);
    let mut flux = vec![0.0; n];
    let mut rk = Dopri5::new(
        |c: &[f64], dc: &mut [f64]| rates.rhs(c, dc, &mut flux),
        c0.to_vec(),
        rtol,
        cap0,
        50_000_000,
    );

    let mut out = NonlinearTrajectory {
        times: Vec::with_capacity(grid.len()),
        states: Vec::with_capacity(grid.len()),
        mass: Vec::with_capacity(grid.len()),
        max_mass_drift: 0.0,
        stats: StepStats::default(),
    };
    let t_last = *grid.last().unwrap();
    let mut drift = 0.0f64;
    let mut snap = vec![0.0; n];
    for &t_out in &grid {
        while rk.t < t_out {
            rk.step(t_last, &mut |cand: &mut [f64]| {
                let top = cand.iter().fold(0.0f64, |m, x| m.max(*x));
                let mut verdict = Admit::Accept;
                for x in cand.iter_mut() {
                    if *x < 0.0 {
                        if *x < -NEGATIVITY_SLACK * top {
                            return Admit::Reject;
                        }
                        *x = 0.0;
                        verdict = Admit::Modified;
                    }
                }
                drift = drift.max((first_moment(cand) - mass0).abs());
                verdict
            })?;
            let cap = 1.8 / rates.rate_scale(&rk.y);
            rk.set_dt_cap(cap);
        }
        if t_out == 0.0 {
            snap.copy_from_slice(c0);
        } else {
            rk.interpolate(t_out, &mut snap);
        }
        out.times.push(t_out);
        out.mass.push(first_moment(&snap));
        out.states.push(snap.clone());
    }
    out.max_mass_drift = drift;
    out.stats = rk.stats;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct LinearizationEntry {
    pub eps: f64,
    /// `‖g_ε(T) - e^{LT} h⁰‖_{X_1}`; `None` when `Q(1 + ε h⁰)` is negative.
    pub gap: Option<f64>,
    pub nonlinear_mass_drift: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LinearizationReport {
    pub t: f64,
    pub n: usize,
    pub entries: Vec<LinearizationEntry>,
    /// `gap(ε_k) / gap(ε_{k+1})` for consecutive accepted entries.
    pub ratios: Vec<f64>,
    /// Mass functional of the linear flow at `T`.
    pub linear_mass: f64,
}

const LINEARIZATION_RTOL: f64 = 1e-11;

/// Compares the nonlinear flow from `Q(1 + ε h⁰)` with the linear flow
/// `e^{Lt} h⁰` for each `ε`, in the X_1 norm.
pub fn linearization_check(
    model: &CoefficientModel,
    eq: &Arc<EquilibriumState>,
    h0: &StateVector,
    eps_list: &[f64],
    t_end: f64,
) -> Result<LinearizationReport> {
    let n = h0.len();
    let v0 = h0.to_v(eq)?;
    let scale: f64 = v0.values().iter().map(|x| x.abs()).sum();
    let mu = mass_functional(eq, &v0)?;
    if mu.abs() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(invalid("h0", format!("must have zero mass, found {mu:e}")));
    }
    let h = h0.to_h(eq)?;
    if h.values().iter().any(|x| !x.is_finite()) {
        return Err(invalid("h0", "must be bounded"));
    }
    let op = OperatorMatrix::assemble_full(eq, n)?;
    let lin = evolve_linear(&op, &v0, t_end, LINEARIZATION_RTOL, &[t_end])?;
    let v_lin = lin.final_state.values();

    let mut entries = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        if !(eps > 0.0) {
            return Err(invalid("eps", format!("{eps} must be positive")));
        }
        let c0: Vec<f64> = (1..=n)
            .map(|i| eq.q(i) * (1.0 + eps * h.values()[i - 1]))
            .collect();
        if c0.iter().any(|x| *x < 0.0) {
            entries.push(LinearizationEntry {
                eps,
                gap: None,
                nonlinear_mass_drift: 0.0,
            });
            continue;
        }
        let tr = evolve_nonlinear(model, &c0, t_end, LINEARIZATION_RTOL, &[t_end])?;
        let c = tr.states.last().unwrap();
        let gap: f64 = (1..=n)
            .map(|i| {
                let g = i as f64 * (c[i - 1] - eq.q(i)) / eps;
                (g - v_lin[i - 1]).abs()
            })
            .sum();
        entries.push(LinearizationEntry {
            eps,
            gap: Some(gap),
            nonlinear_mass_drift: tr.max_mass_drift,
        });
    }
    let accepted: Vec<f64> = entries.iter().filter_map(|e| e.gap).collect();
    let ratios = accepted.windows(2).map(|w| w[0] / w[1]).collect();
    Ok(LinearizationReport {
        t: t_end,
        n,
        entries,
        ratios,
        linear_mass: *lin.mass.last().unwrap(),
    })
}
