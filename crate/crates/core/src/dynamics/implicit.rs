//! Crank-Nicolson stepping with a bordered tridiagonal solve.

use super::{check_initial, mass_of, output_grid, x1_of, StepStats, Trajectory};
use crate::error::{invalid, Error, Result};
use crate::operators::{compensated_sum, OperatorMatrix, StateVector};

const MAX_HALVINGS: usize = 40;

/// Factorized `I - h A` for the arrowhead structure: `x_1` couples to
/// every row through `c`, row 1 is dense, rows `2..=N` are tridiagonal.
struct Bordered {
    h: f64,
    m11: f64,
    /// `-h R_j` for `j >= 2` (index `j - 2`).
    m1: Vec<f64>,
    sub: Vec<f64>,
    cp: Vec<f64>,
    inv_beta: Vec<f64>,
    q: Vec<f64>,
    denom: f64,
}

fn row_one(op: &OperatorMatrix) -> Vec<f64> {
    if op.has_arrowhead() {
        op.first_row().to_vec()
    } else {
        let mut r = vec![0.0; op.n()];
        r[0] = op.diag()[0];
        r[1] = op.upper()[0];
        r
    }
}

fn column_one(op: &OperatorMatrix) -> Vec<f64> {
    let n = op.n();
    let mut c: Vec<f64> = (1..n)
        .map(|k| op.first_col().get(k).copied().unwrap_or(0.0))
        .collect();
    c[0] += op.lower()[1];
    c
}

impl Bordered {
    fn factor(op: &OperatorMatrix, h: f64) -> Option<Self> {
        let n = op.n();
        let r = row_one(op);
        let c = column_one(op);
        let m = n - 1;
        let mut sub = vec![0.0; m];
        let mut cp = vec![0.0; m];
        let mut inv_beta = vec![0.0; m];
        for j in 0..m {
            let k = j + 1;
            let b = 1.0 - h * op.diag()[k];
            let a = if j > 0 { -h * op.lower()[k] } else { 0.0 };
            let up = if k + 1 < n { -h * op.upper()[k] } else { 0.0 };
            let beta = b - if j > 0 { a * cp[j - 1] } else { 0.0 };
            if !beta.is_finite() || beta.abs() < 1e-300 {
                return None;
            }
            sub[j] = a;
            inv_beta[j] = 1.0 / beta;
            cp[j] = up / beta;
        }
        let mut me = Self {
            h,
            m11: 1.0 - h * r[0],
            m1: r[1..].iter().map(|x| -h * x).collect(),
            sub,
            cp,
            inv_beta,
            q: c.iter().map(|x| -h * x).collect(),
            denom: 0.0,
        };
        let mut q = std::mem::take(&mut me.q);
        me.thomas(&mut q);
        me.denom = me.m11 - compensated_sum(me.m1.iter().zip(&q).map(|(a, b)| a * b));
        me.q = q;
        if !me.denom.is_finite() || me.denom.abs() < 1e-300 {
            return None;
        }
        Some(me)
    }

    fn thomas(&self, d: &mut [f64]) {
        let m = d.len();
        for j in 0..m {
            let prev = if j > 0 { d[j - 1] } else { 0.0 };
            d[j] = (d[j] - self.sub[j] * prev) * self.inv_beta[j];
        }
        for j in (0..m.saturating_sub(1)).rev() {
            d[j] -= self.cp[j] * d[j + 1];
        }
    }

    /// Solves `(I - hA) x = rhs` in place.
    fn solve(&self, rhs: &mut [f64]) {
        let r1 = rhs[0];
        let rest = &mut rhs[1..];
        self.thomas(rest);
        let x1 = (r1 - compensated_sum(self.m1.iter().zip(rest.iter()).map(|(a, b)| a * b)))
            / self.denom;
        for (x, q) in rest.iter_mut().zip(&self.q) {
            *x -= q * x1;
        }
        rhs[0] = x1;
    }
}

/// Trapezoidal evolution with step at most `dt`; each interval between
/// output times is split into equal substeps.
pub fn evolve_linear_implicit(
    op: &OperatorMatrix,
    v0: &StateVector,
    t_end: f64,
    dt: f64,
    output_times: &[f64],
) -> Result<Trajectory> {
    check_initial(op, v0)?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid("dt", format!("{dt} must be positive")));
    }
    let grid = output_grid(t_end, output_times)?;
    let coords = op.input_coords();
    let n = op.n();
    let mass0 = mass_of(coords, v0.values());
    let mut y = v0.values().to_vec();
    let mut ay = vec![0.0; n];
    let mut factor: Option<Bordered> = None;
    let mut stats = StepStats::default();
    let mut drift = 0.0f64;
    let mut traj = Trajectory {
        times: Vec::with_capacity(grid.len()),
        states: Vec::with_capacity(grid.len()),
        mass: Vec::new(),
        x1: Vec::new(),
        max_mass_drift: 0.0,
        stats,
        stopped_early: false,
        final_state: v0.clone(),
    };
    let mut t = 0.0;
    for &t_out in &grid {
        let span = t_out - t;
        if span > 0.0 {
            let mut pieces = (span / dt - 1e-9).ceil().max(1.0) as u64;
            let mut halvings = 0;
            loop {
                let step = span / pieces as f64;
                let h = 0.5 * step;
                if factor.as_ref().is_none_or(|f| f.h != h) {
                    factor = Bordered::factor(op, h);
                }
                if factor.is_some() {
                    break;
                }
                halvings += 1;
                if halvings > MAX_HALVINGS {
                    return Err(Error::SingularStep {
                        halvings: MAX_HALVINGS,
                    });
                }
                pieces *= 2;
            }
            let f = factor.as_ref().unwrap();
            for _ in 0..pieces {
                op.apply_slice(&y, &mut ay);
                for (yi, ai) in y.iter_mut().zip(&ay) {
                    *yi += f.h * ai;
                }
                f.solve(&mut y);
                if y.iter().any(|x| !x.is_finite()) {
                    return Err(Error::IntegrationFailure {
                        t,
                        reason: "non-finite state".into(),
                    });
                }
                t += 2.0 * f.h;
                stats.accepted += 1;
                let s = 2.0 * f.h;
                if stats.accepted == 1 {
                    stats.dt_min = s;
                    stats.dt_max = s;
                } else {
                    stats.dt_min = stats.dt_min.min(s);
                    stats.dt_max = stats.dt_max.max(s);
                }
                drift = drift.max((mass_of(coords, &y) - mass0).abs());
            }
            t = t_out;
        }
        traj.times.push(t_out);
        traj.mass.push(mass_of(coords, &y));
        traj.x1.push(x1_of(coords, &y));
        traj.states.push(StateVector::new(coords, y.clone()));
    }
    traj.final_state = StateVector::new(coords, y);
    traj.max_mass_drift = drift;
    traj.stats = stats;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::CoefficientModel;
    use crate::equilibrium::compute_q;
    use std::sync::Arc;

    #[test]
    fn bordered_solve_inverts_step_matrix() {
        let m = Arc::new(CoefficientModel::penrose(0.5, 0.0, 1.0, 1.0).unwrap());
        let eq = Arc::new(compute_q(&m, 0.5, 40).unwrap());
        for op in [
            OperatorMatrix::assemble_full(&eq, 40).unwrap(),
            OperatorMatrix::assemble_tilde(&eq, 40).unwrap(),
            OperatorMatrix::assemble_integrated(&eq, 40).unwrap(),
        ] {
            let h = 0.3;
            let f = Bordered::factor(&op, h).unwrap();
            let x: Vec<f64> = (0..40).map(|k| ((k * 7 % 9) as f64) - 4.0).collect();
            let mut ax = vec![0.0; 40];
            op.apply_slice(&x, &mut ax);
            let mut rhs: Vec<f64> = x.iter().zip(&ax).map(|(a, b)| a - h * b).collect();
            f.solve(&mut rhs);
            for (a, b) in rhs.iter().zip(&x) {
                assert!((a - b).abs() < 1e-11, "{a} vs {b}");
            }
        }
    }
}
