//! Time evolution of the truncated linear semigroups and of the nonlinear
//! Becker-Döring system.

mod implicit;
mod nonlinear;
pub(crate) mod rk;

pub use implicit::evolve_linear_implicit;
pub use nonlinear::{
    evolve_nonlinear, linearization_check, LinearizationEntry, LinearizationReport,
    NonlinearTrajectory,
};
pub use rk::StepStats;

use crate::error::{invalid, Error, Result};
use crate::operators::{compensated_sum, Coords, OperatorMatrix, StateVector};
use rk::{Admit, Dopri5};

/// Observer verdict at an output time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveOptions {
    pub rtol: f64,
    /// Keep every snapshot; when false only diagnostics and the final state are stored.
    pub keep_states: bool,
    pub max_steps: usize,
}

impl EvolveOptions {
    pub fn new(rtol: f64) -> Self {
        Self {
            rtol,
            keep_states: true,
            max_steps: 50_000_000,
        }
    }

    pub fn diagnostics_only(mut self) -> Self {
        self.keep_states = false;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
    /// Mass functional at each output time.
    pub mass: Vec<f64>,
    /// X_1 norm (`Σ|v_i|`) at each output time.
    pub x1: Vec<f64>,
    /// Largest `|μ(v) - μ(v⁰)|` over all accepted steps.
    pub max_mass_drift: f64,
    pub stats: StepStats,
    pub stopped_early: bool,
    pub final_state: StateVector,
}

impl Trajectory {
    pub fn final_time(&self) -> f64 {
        *self
            .times
            .last()
            .expect("trajectory has at least the initial time")
    }
}

pub(crate) fn output_grid(t_end: f64, output_times: &[f64]) -> Result<Vec<f64>> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(invalid("T", format!("{t_end} must be positive and finite")));
    }
    let mut grid = vec![0.0];
    for &t in output_times {
        if t == 0.0 && grid.len() == 1 {
            continue;
        }
        let last = *grid.last().unwrap();
        if !(t > last) || t > t_end {
            return Err(invalid(
                "output_times",
                "must be strictly increasing within (0, T]",
            ));
        }
        grid.push(t);
    }
    if grid.len() == 1 {
        grid.push(t_end);
    }
    Ok(grid)
}

fn mass_of(coords: Coords, y: &[f64]) -> f64 {
    match coords {
        Coords::Integrated => y.last().copied().unwrap_or(0.0),
        _ => compensated_sum(y.iter().copied()),
    }
}

fn x1_of(coords: Coords, y: &[f64]) -> f64 {
    match coords {
        Coords::Integrated => {
            let mut prev = 0.0;
            y.iter()
                .map(|&v| {
                    let d = (v - prev).abs();
                    prev = v;
                    d
                })
                .sum()
        }
        _ => y.iter().map(|a| a.abs()).sum(),
    }
}

pub(crate) fn check_initial(op: &OperatorMatrix, v0: &StateVector) -> Result<()> {
    let expected = op.input_coords();
    if v0.coords() != expected {
        let name = |c: Coords| match c {
            Coords::H => "h-form",
            Coords::V => "v-form",
            Coords::Integrated => "V-form",
        };
        return Err(Error::CoordinateMismatch {
            expected: name(expected),
            found: name(v0.coords()),
        });
    }
    if v0.len() != op.n() {
        return Err(Error::Size(format!(
            "initial state length {} != operator size {}",
            v0.len(),
            op.n()
        )));
    }
    if v0.values().iter().any(|x| !x.is_finite()) {
        return Err(invalid("v0", "must be finite"));
    }
    Ok(())
}

/// Explicit adaptive evolution of `dv/dt = A v`.
pub fn evolve_linear(
    op: &OperatorMatrix,
    v0: &StateVector,
    t_end: f64,
    rtol: f64,
    output_times: &[f64],
) -> Result<Trajectory> {
    evolve_linear_with(
        op,
        v0,
        t_end,
        &EvolveOptions::new(rtol),
        output_times,
        |_, _| Control::Continue,
    )
}

/// As [`evolve_linear`], calling `observer(t, state)` at every output time.
/// Returning [`Control::Stop`] ends the integration at that time.
pub fn evolve_linear_with<O>(
    op: &OperatorMatrix,
    v0: &StateVector,
    t_end: f64,
    opts: &EvolveOptions,
    output_times: &[f64],
    mut observer: O,
) -> Result<Trajectory>
where
    O: FnMut(f64, &[f64]) -> Control,
{
    check_initial(op, v0)?;
    if !(opts.rtol > 0.0) {
        return Err(invalid("rtol", format!("{} must be positive", opts.rtol)));
    }
    let grid = output_grid(t_end, output_times)?;
    let coords = op.input_coords();
    let n = op.n();
    let mass0 = mass_of(coords, v0.values());
    let dt_cap = 1.8 / op.rate_scale();
    let mut rk = Dopri5::new(
        |x: &[f64], y: &mut [f64]| op.apply_slice(x, y),
        v0.values().to_vec(),
        opts.rtol,
        dt_cap,
        opts.max_steps,
    );

    let mut traj = Trajectory {
        times: Vec::with_capacity(grid.len()),
        states: Vec::new(),
        mass: Vec::with_capacity(grid.len()),
        x1: Vec::with_capacity(grid.len()),
        max_mass_drift: 0.0,
        stats: StepStats::default(),
        stopped_early: false,
        final_state: v0.clone(),
    };
    let mut snap = vec![0.0; n];
    let t_last = *grid.last().unwrap();
    let mut drift = 0.0f64;
    for &t_out in &grid {
        while rk.t < t_out {
            rk.step(t_last, &mut |cand: &mut [f64]| {
                drift = drift.max((mass_of(coords, cand) - mass0).abs());
                Admit::Accept
            })?;
        }
        if t_out == 0.0 {
            snap.copy_from_slice(v0.values());
        } else {
            rk.interpolate(t_out, &mut snap);
        }
        traj.times.push(t_out);
        traj.mass.push(mass_of(coords, &snap));
        traj.x1.push(x1_of(coords, &snap));
        if opts.keep_states {
            traj.states.push(StateVector::new(coords, snap.clone()));
        }
        if observer(t_out, &snap) == Control::Stop {
            traj.stopped_early = t_out < t_last;
            break;
        }
    }
    traj.final_state = StateVector::new(coords, snap);
    traj.max_mass_drift = drift;
    traj.stats = rk.stats;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::CoefficientModel;
    use crate::equilibrium::compute_q;
    use std::sync::Arc;

    fn setup(n: usize) -> OperatorMatrix {
        let m = Arc::new(CoefficientModel::penrose(0.5, 0.0, 1.0, 1.0).unwrap());
        let eq = Arc::new(compute_q(&m, 0.5, n).unwrap());
        OperatorMatrix::assemble_full(&eq, n).unwrap()
    }

    #[test]
    fn zero_eigenvector_is_stationary() {
        let op = setup(128);
        let xi = StateVector::v_form(op.equilibrium().xi_v()[..128].to_vec());
        let tr = evolve_linear(&op, &xi, 10.0, 1e-8, &[5.0, 10.0]).unwrap();
        for s in &tr.states {
            let d: f64 = s
                .values()
                .iter()
                .zip(xi.values())
                .map(|(a, b)| (a - b).abs())
                .sum();
            assert!(d <= 1e-7, "{d}");
        }
        assert_eq!(tr.times, vec![0.0, 5.0, 10.0]);
    }

    #[test]
    fn short_time_consistency() {
        let op = setup(64);
        let v0: Vec<f64> = (0..64)
            .map(|k| if (10..20).contains(&k) { 0.1 } else { 0.0 })
            .collect();
        let x = StateVector::v_form(v0.clone());
        let av = op.apply(&x).unwrap();
        let mut prev = f64::INFINITY;
        for dt in [1e-2, 5e-3, 2.5e-3] {
            let tr = evolve_linear(&op, &x, dt, 1e-12, &[]).unwrap();
            let e: f64 = tr
                .final_state
                .values()
                .iter()
                .zip(&v0)
                .zip(av.values())
                .map(|((a, b), c)| ((a - b) / dt - c).abs())
                .sum();
            assert!(e < prev);
            prev = e;
        }
    }

    #[test]
    fn observer_can_stop() {
        let op = setup(64);
        let x = StateVector::v_form((0..64).map(|k| if k == 20 { 1.0 } else { 0.0 }).collect());
        let tr = evolve_linear_with(
            &op,
            &x,
            10.0,
            &EvolveOptions::new(1e-8),
            &[1.0, 2.0, 3.0],
            |t, _| {
                if t >= 2.0 {
                    Control::Stop
                } else {
                    Control::Continue
                }
            },
        )
        .unwrap();
        assert!(tr.stopped_early);
        assert_eq!(tr.final_time(), 2.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let op = setup(32);
        let h = StateVector::h_form(vec![0.0; 32]);
        assert!(matches!(
            evolve_linear(&op, &h, 1.0, 1e-8, &[]),
            Err(Error::CoordinateMismatch { .. })
        ));
        let v = StateVector::v_form(vec![0.0; 32]);
        assert!(evolve_linear(&op, &v, 1.0, 1e-8, &[0.5, 0.2]).is_err());
        assert!(evolve_linear(&op, &v, -1.0, 1e-8, &[]).is_err());
    }
}
