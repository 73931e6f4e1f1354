//! Detailed-balance equilibria `Q_i` and the monomer density for a given
//! subcritical mass.
//!
//! `Q_i` decays geometrically with ratio `z/z_s` and leaves the normal f64
//! range after a few hundred indices. Each value is therefore kept twice: a
//! linear `f64` (which may underflow to zero) and an extended-range
//! [`ScaledReal`] holding a mantissa and a binary exponent.

use std::sync::Arc;

use serde::Serialize;

use crate::coefficients::CoefficientModel;
use crate::error::{invalid, Error, Result};

/// `mant * 2^exp2` with the exponent kept outside the f64 range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledReal {
    mant: f64,
    exp2: i64,
}

const RESCALE_BITS: i32 = 512;

impl ScaledReal {
    pub fn new(x: f64) -> Self {
        Self { mant: x, exp2: 0 }.normalized()
    }

    fn normalized(mut self) -> Self {
        let lo = 2f64.powi(-RESCALE_BITS);
        let hi = 2f64.powi(RESCALE_BITS);
        while self.mant != 0.0 && self.mant.abs() < lo {
            self.mant *= hi;
            self.exp2 -= RESCALE_BITS as i64;
        }
        while self.mant.abs() > hi && self.mant.is_finite() {
            self.mant *= lo;
            self.exp2 += RESCALE_BITS as i64;
        }
        self
    }

    #[inline]
    pub fn mul_f64(self, x: f64) -> Self {
        Self {
            mant: self.mant * x,
            exp2: self.exp2,
        }
        .normalized()
    }

    /// The value in plain f64 (may underflow to zero or overflow to infinity).
    pub fn value(self) -> f64 {
        scale_pow2(self.mant, self.exp2)
    }

    pub fn ln(self) -> f64 {
        self.mant.ln() + self.exp2 as f64 * std::f64::consts::LN_2
    }

    /// `x / self` as plain f64.
    pub fn div_into(self, x: f64) -> f64 {
        scale_pow2(x / self.mant, -self.exp2)
    }

    /// `self / other` as plain f64.
    pub fn ratio(self, other: ScaledReal) -> f64 {
        scale_pow2(self.mant / other.mant, self.exp2 - other.exp2)
    }
}

fn scale_pow2(mut x: f64, mut e: i64) -> f64 {
    // step in exact powers of two so no intermediate rounding occurs before
    // the final (possibly subnormal) result
    while e > 0 && x.is_finite() && x != 0.0 {
        let s = e.min(1000);
        x *= 2f64.powi(s as i32);
        e -= s;
    }
    while e < 0 && x != 0.0 {
        let s = (-e).min(1000);
        x *= 2f64.powi(-(s as i32));
        e += s;
    }
    x
}

/// Detailed-balance equilibrium truncated at `n` clusters.
#[derive(Debug, Clone)]
pub struct EquilibriumState {
    model: Arc<CoefficientModel>,
    z: f64,
    q: Vec<f64>,
    q_scaled: Vec<ScaledReal>,
    mass: f64,
    tail_bound: f64,
    ratio: f64,
    sum_q_i2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumSummary {
    pub z: f64,
    pub mu: f64,
    pub tail_bound: f64,
    pub ratio: f64,
    pub n: usize,
}

impl EquilibriumState {
    pub fn model(&self) -> &Arc<CoefficientModel> {
        &self.model
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    /// Stored length N.
    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// `Σ_{i<=N} i Q_i` plus the certified tail.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    /// `z / z_s`, the limit of `Q_{i+1}/Q_i`.
    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// Linear-scale `Q_i` (1-based).
    #[inline]
    pub fn q(&self, i: usize) -> f64 {
        self.q[i - 1]
    }

    pub fn q_slice(&self) -> &[f64] {
        &self.q
    }

    #[inline]
    pub fn q_scaled(&self, i: usize) -> ScaledReal {
        self.q_scaled[i - 1]
    }

    pub fn ln_q(&self, i: usize) -> f64 {
        self.q_scaled[i - 1].ln()
    }

    /// `Σ Q_i i^2`, the normalization of the zero eigenvector.
    pub fn sum_q_i2(&self) -> f64 {
        self.sum_q_i2
    }

    /// Mass-weighted zero eigenvector `v_i = Q_i i^2 / Σ Q_j j^2`, i.e. the
    /// v-form of `xi_i = i / Σ Q_j j^2`.
    pub fn xi_v(&self) -> Vec<f64> {
        (1..=self.len())
            .map(|i| self.q(i) * (i * i) as f64 / self.sum_q_i2)
            .collect()
    }

    /// `max_i |b_{i+1} Q_{i+1} - a_i Q_i Q_1| / (a_i Q_i Q_1)` in extended range.
    pub fn detailed_balance_residual(&self) -> f64 {
        let m = &self.model;
        (1..self.len())
            .map(|i| {
                let lhs = self.q_scaled(i + 1).mul_f64(m.b(i + 1));
                let rhs = self.q_scaled(i).mul_f64(m.a(i) * self.z);
                (lhs.ratio(rhs) - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn summary(&self) -> EquilibriumSummary {
        EquilibriumSummary {
            z: self.z,
            mu: self.mass,
            tail_bound: self.tail_bound,
            ratio: self.ratio,
            n: self.len(),
        }
    }
}

/// Detailed-balance recursion `Q_1 = z`, `Q_{i+1} = a_i Q_i z / b_{i+1}`.
pub fn compute_q(model: &Arc<CoefficientModel>, z: f64, n: usize) -> Result<EquilibriumState> {
    if n < 2 {
        return Err(Error::Size(format!("equilibrium needs N >= 2, got {n}")));
    }
    if !(z > 0.0) {
        return Err(invalid("z", format!("{z} must be positive")));
    }
    let z_s = model.z_s();
    if z >= z_s {
        return Err(Error::Supercritical { z, z_s });
    }
    let r = model.tail_ratio_sup(z, n);
    if r >= 1.0 {
        return Err(Error::TruncationTooSmall { n, ratio: r });
    }
    let mut q_scaled = Vec::with_capacity(n);
    let mut cur = ScaledReal::new(z);
    q_scaled.push(cur);
    for i in 1..n {
        cur = cur.mul_f64(model.a(i) * z / model.b(i + 1));
        q_scaled.push(cur);
    }
    let q: Vec<f64> = q_scaled.iter().map(|s| s.value()).collect();
    let partial: f64 = q
        .iter()
        .enumerate()
        .map(|(k, qi)| (k + 1) as f64 * qi)
        .sum();
    let sum_q_i2: f64 = q
        .iter()
        .enumerate()
        .map(|(k, qi)| ((k + 1) * (k + 1)) as f64 * qi)
        .sum();
    let tail_bound = geometric_tail(q[n - 1], n, r);
    Ok(EquilibriumState {
        model: Arc::clone(model),
        z,
        q,
        q_scaled,
        mass: partial + tail_bound,
        tail_bound,
        ratio: z / z_s,
        sum_q_i2,
    })
}

/// `Σ_{m>=1} (N+m) Q_N r^m`.
fn geometric_tail(q_n: f64, n: usize, r: f64) -> f64 {
    let g = r / (1.0 - r);
    q_n * (n as f64 * g + g / (1.0 - r))
}

const STREAM_CAP: usize = 1 << 26;
const CRITICAL_PROBE_N: usize = 1 << 20;

enum MassProbe {
    /// Partial sum already exceeds the target.
    Above,
    /// `(partial + tail, n_terms)` with the tail below the requested bound.
    Converged(f64, usize),
    Undecided(f64),
}

/// Streams `Σ i Q_i` until either the certified tail is below `tail_tol` or
/// the partial sum exceeds `stop_above`.
fn probe_mass(model: &CoefficientModel, z: f64, tail_tol: f64, stop_above: f64) -> MassProbe {
    let mut q = ScaledReal::new(z);
    let mut partial = z;
    let mut i = 1usize;
    loop {
        if i % 32 == 0 || i < 32 {
            let r = model.tail_ratio_sup(z, i);
            if r < 1.0 {
                let tail = geometric_tail(q.value(), i, r);
                if tail <= tail_tol {
                    return MassProbe::Converged(partial + tail, i.max(2));
                }
            }
        }
        if partial > stop_above {
            return MassProbe::Above;
        }
        if i >= STREAM_CAP {
            return MassProbe::Undecided(partial);
        }
        q = q.mul_f64(model.a(i) * z / model.b(i + 1));
        i += 1;
        partial += i as f64 * q.value();
    }
}

/// Bisection on `z ∈ (0, z_s (1 - 1e-9))` for `Σ i Q_i = mu`.
pub fn solve_z(model: &Arc<CoefficientModel>, mu: f64, tol: f64) -> Result<EquilibriumState> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(invalid("mu", format!("{mu} must be positive")));
    }
    if !(tol > 0.0) {
        return Err(invalid("tol", format!("{tol} must be positive")));
    }
    let est = mu_s_estimate(model, CRITICAL_PROBE_N)?;
    if !est.saturated && mu >= est.value {
        return Err(Error::SupercriticalMass {
            mu,
            mu_s: est.value,
        });
    }
    let (mut lo, mut hi) = (0.0, model.z_s() * (1.0 - 1e-9));
    let mut last = f64::NAN;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        match probe_mass(model, mid, tol / 10.0, mu + tol) {
            MassProbe::Above => hi = mid,
            MassProbe::Converged(m, n) => {
                last = m - mu;
                if last.abs() <= tol {
                    let state = compute_q(model, mid, n)?;
                    return Ok(state);
                }
                if m > mu {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            MassProbe::Undecided(partial) => {
                return Err(Error::ConvergenceFailure {
                    tol,
                    steps: 0,
                    residual: partial - mu,
                });
            }
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Err(Error::ConvergenceFailure {
        tol,
        steps: 200,
        residual: last,
    })
}

/// Lower bound for the critical mass: `Σ_{i<=N} i Q_i` at `z = z_s (1 - 1e-6)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CriticalMassEstimate {
    pub value: f64,
    pub tail_bound: f64,
    pub lower_bound: bool,
    /// The certified tail dwarfs the partial sum (or the sum overflowed):
    /// the critical mass is effectively infinite at this truncation.
    pub saturated: bool,
}

const SATURATION_RATIO: f64 = 1e6;

pub fn mu_s_estimate(model: &CoefficientModel, n: usize) -> Result<CriticalMassEstimate> {
    if n < 64 {
        return Err(Error::Size(format!("mu_s_estimate needs N >= 64, got {n}")));
    }
    let z = model.z_s() * (1.0 - 1e-6);
    let mut q = ScaledReal::new(z);
    let mut partial = z;
    for i in 1..n {
        q = q.mul_f64(model.a(i) * z / model.b(i + 1));
        partial += (i + 1) as f64 * q.value();
    }
    let r = model.tail_ratio_sup(z, n);
    let tail_bound = if r < 1.0 {
        geometric_tail(q.value(), n, r)
    } else {
        f64::INFINITY
    };
    let saturated = !partial.is_finite() || !(tail_bound <= SATURATION_RATIO * partial);
    Ok(CriticalMassEstimate {
        value: partial,
        tail_bound,
        lower_bound: true,
        saturated,
    })
}
