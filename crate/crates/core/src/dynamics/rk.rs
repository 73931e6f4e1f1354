//! Dormand-Prince 5(4) stepper with cubic Hermite dense output.

use crate::error::{Error, Result};

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;

/// Step-size statistics of one integration.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub dt_min: f64,
    pub dt_max: f64,
}

impl StepStats {
    fn record(&mut self, dt: f64) {
        if self.accepted == 0 {
            self.dt_min = dt;
            self.dt_max = dt;
        } else {
            self.dt_min = self.dt_min.min(dt);
            self.dt_max = self.dt_max.max(dt);
        }
        self.accepted += 1;
    }
}

/// Verdict of a state guard on a candidate step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Admit {
    Accept,
    /// Accepted after the guard altered the state in place.
    Modified,
    Reject,
}

pub(crate) struct Dopri5<F> {
    rhs: F,
    rtol: f64,
    dt_cap: f64,
    dt: f64,
    max_steps: usize,
    pub(crate) t: f64,
    pub(crate) y: Vec<f64>,
    f: Vec<f64>,
    t_prev: f64,
    y_prev: Vec<f64>,
    f_prev: Vec<f64>,
    k: [Vec<f64>; 6],
    tmp: Vec<f64>,
    pub(crate) stats: StepStats,
}

fn l1(x: &[f64]) -> f64 {
    x.iter().map(|a| a.abs()).sum()
}

impl<F: FnMut(&[f64], &mut [f64])> Dopri5<F> {
    pub(crate) fn new(mut rhs: F, y0: Vec<f64>, rtol: f64, dt_cap: f64, max_steps: usize) -> Self {
        let n = y0.len();
        let mut f = vec![0.0; n];
        rhs(&y0, &mut f);
        let (ny, nf) = (l1(&y0), l1(&f));
        let mut dt = if ny > 0.0 && nf > 0.0 {
            0.01 * ny / nf
        } else {
            dt_cap
        };
        dt = dt.min(dt_cap);
        if !(dt > 0.0) || !dt.is_finite() {
            dt = dt_cap.min(1e-3);
        }
        Self {
            rhs,
            rtol,
            dt_cap,
            dt,
            max_steps,
            t: 0.0,
            y_prev: y0.clone(),
            f_prev: f.clone(),
            y: y0,
            f,
            t_prev: 0.0,
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            stats: StepStats::default(),
        }
    }

    pub(crate) fn set_dt_cap(&mut self, cap: f64) {
        self.dt_cap = cap;
        self.dt = self.dt.min(cap);
    }

    fn stage(&mut self, dt: f64, coeffs: &[(usize, f64)], include_f: f64, out: usize) {
        let n = self.y.len();
        for i in 0..n {
            let mut acc = include_f * self.f[i];
            for &(j, a) in coeffs {
                acc += a * self.k[j][i];
            }
            self.tmp[i] = self.y[i] + dt * acc;
        }
        let (tmp, k) = (&self.tmp, &mut self.k);
        (self.rhs)(tmp, &mut k[out]);
    }

    /// Advances by one accepted step not passing `t_limit`. `admissible`
    /// may veto a candidate state, forcing a smaller step.
    pub(crate) fn step(
        &mut self,
        t_limit: f64,
        admissible: &mut dyn FnMut(&mut [f64]) -> Admit,
    ) -> Result<()> {
        let mut rejected_here = false;
        loop {
            if self.stats.accepted + self.stats.rejected >= self.max_steps {
                return Err(Error::IntegrationFailure {
                    t: self.t,
                    reason: "step budget exhausted".into(),
                });
            }
            let remaining = t_limit - self.t;
            let mut dt = self.dt.min(self.dt_cap);
            let clipped = dt >= remaining;
            if clipped {
                dt = remaining;
            }
            if dt <= 1e-14 * self.t.abs().max(1.0) && !clipped {
                return Err(Error::Stiffness { t: self.t, dt });
            }
            // k[0..6] hold k2..k7
            self.stage(dt, &[], A21, 0);
            self.stage(dt, &[(0, A32)], A31, 1);
            self.stage(dt, &[(0, A42), (1, A43)], A41, 2);
            self.stage(dt, &[(0, A52), (1, A53), (2, A54)], A51, 3);
            self.stage(dt, &[(0, A62), (1, A63), (2, A64), (3, A65)], A61, 4);
            // y_new lands in tmp; k7 = f(y_new)
            self.stage(dt, &[(1, A73), (2, A74), (3, A75), (4, A76)], A71, 5);

            let mut err = 0.0;
            for i in 0..self.y.len() {
                let e = E1 * self.f[i]
                    + E3 * self.k[1][i]
                    + E4 * self.k[2][i]
                    + E5 * self.k[3][i]
                    + E6 * self.k[4][i]
                    + E7 * self.k[5][i];
                err += (dt * e).abs();
            }
            let scale = self.rtol * l1(&self.y).max(l1(&self.tmp)) + f64::MIN_POSITIVE;
            let ratio = err / scale;
            if !ratio.is_finite() || self.tmp.iter().any(|x| !x.is_finite()) {
                return Err(Error::IntegrationFailure {
                    t: self.t,
                    reason: "non-finite state or error estimate".into(),
                });
            }
            let fac = if ratio == 0.0 {
                FAC_MAX
            } else {
                (SAFETY * ratio.powf(-0.2)).clamp(FAC_MIN, FAC_MAX)
            };
            let verdict = if ratio <= 1.0 {
                admissible(&mut self.tmp)
            } else {
                Admit::Reject
            };
            if verdict != Admit::Reject {
                let proposal = dt * if rejected_here { fac.min(1.0) } else { fac };
                if !clipped || proposal < self.dt {
                    self.dt = proposal;
                }
                self.accept(dt, verdict == Admit::Modified);
                return Ok(());
            }
            self.stats.rejected += 1;
            rejected_here = true;
            self.dt = dt * if ratio <= 1.0 { 0.5 } else { fac.min(0.9) };
        }
    }

    fn accept(&mut self, dt: f64, modified: bool) {
        std::mem::swap(&mut self.y_prev, &mut self.y);
        std::mem::swap(&mut self.f_prev, &mut self.f);
        std::mem::swap(&mut self.y, &mut self.tmp);
        if modified {
            (self.rhs)(&self.y, &mut self.f);
        } else {
            self.f.copy_from_slice(&self.k[5]);
        }
        self.t_prev = self.t;
        self.t += dt;
        self.stats.record(dt);
    }

    /// Cubic Hermite interpolant on the last accepted step.
    pub(crate) fn interpolate(&self, t: f64, out: &mut [f64]) {
        let h = self.t - self.t_prev;
        if h <= 0.0 || t >= self.t {
            out.copy_from_slice(&self.y);
            return;
        }
        let s = (t - self.t_prev) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = (s3 - 2.0 * s2 + s) * h;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = (s3 - s2) * h;
        for (i, o) in out.iter_mut().enumerate() {
            *o = h00 * self.y_prev[i] + h10 * self.f_prev[i] + h01 * self.y[i] + h11 * self.f[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_is_accurate() {
        let rhs = |y: &[f64], dy: &mut [f64]| {
            dy[0] = -y[0];
            dy[1] = -2.0 * y[1];
        };
        let mut rk = Dopri5::new(rhs, vec![1.0, 1.0], 1e-10, 1.0, 100_000);
        while rk.t < 3.0 {
            rk.step(3.0, &mut |_| Admit::Accept).unwrap();
        }
        assert!((rk.t - 3.0).abs() < 1e-15);
        assert!((rk.y[0] - (-3.0f64).exp()).abs() < 1e-9);
        assert!((rk.y[1] - (-6.0f64).exp()).abs() < 1e-9);
        let mut mid = vec![0.0; 2];
        let tm = rk.t_prev + 0.5 * (rk.t - rk.t_prev);
        rk.interpolate(tm, &mut mid);
        assert!((mid[0] - (-tm).exp()).abs() < 1e-6);
    }

    #[test]
    fn stiffness_is_reported() {
        let rhs = |y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0];
        let mut rk = Dopri5::new(rhs, vec![1.0], 1e-8, 10.0, 1_000_000);
        let mut err = None;
        for _ in 0..100_000 {
            if let Err(e) = rk.step(2.0, &mut |_| Admit::Accept) {
                err = Some(e);
                break;
            }
        }
        assert!(matches!(
            err,
            Some(Error::Stiffness { .. }) | Some(Error::IntegrationFailure { .. })
        ));
    }
}
