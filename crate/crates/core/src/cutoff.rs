//! Transport along characteristics, supersolutions of the integrated
//! equation, and the pulse-lifetime and cutoff experiments.

use std::sync::Arc;

use serde::Serialize;

use crate::dynamics::{evolve_linear_with, Control, EvolveOptions};
use crate::equilibrium::EquilibriumState;
use crate::error::{invalid, Error, Result};
use crate::exec::{self, Execution};
use crate::operators::{yeta_norm_v, Coords, OperatorMatrix, StateVector};

/// Characteristic curves of `∂_t A = -(z_s - z) A^α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Characteristic {
    pub alpha: f64,
    pub drift: f64,
}

impl Characteristic {
    pub fn new(alpha: f64, drift: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid("alpha", format!("{alpha} must lie in (0, 1)")));
        }
        if !(drift > 0.0 && drift.is_finite()) {
            return Err(Error::Supercritical {
                z: f64::NAN,
                z_s: f64::NAN,
            });
        }
        Ok(Self { alpha, drift })
    }

    pub fn from_equilibrium(eq: &EquilibriumState) -> Result<Self> {
        let m = eq.model();
        let drift = m.z_s() - eq.z();
        if !(drift > 0.0) {
            return Err(Error::Supercritical {
                z: eq.z(),
                z_s: m.z_s(),
            });
        }
        Self::new(m.alpha(), drift)
    }

    /// `A(x, t)`, clamped below at 1.
    pub fn a(&self, x: f64, t: f64) -> f64 {
        if t == 0.0 {
            return x;
        }
        let p = 1.0 - self.alpha;
        let rad = x.powf(p) - self.drift * p * t;
        if rad > 0.0 {
            rad.powf(1.0 / p).max(1.0)
        } else {
            1.0
        }
    }

    /// `∂_t A(x, t)`; zero once the clamp is active.
    pub fn a_dot(&self, x: f64, t: f64) -> f64 {
        let p = 1.0 - self.alpha;
        let rad = x.powf(p) - self.drift * p * t;
        if rad > 1.0 {
            -self.drift * self.a(x, t).powf(self.alpha)
        } else {
            0.0
        }
    }

    pub fn extinction_time(&self, x: f64) -> f64 {
        let p = 1.0 - self.alpha;
        x.powf(p) / (self.drift * p)
    }

    /// Time at which `A(x, t) = y` for `1 <= y <= x`.
    pub fn time_to_reach(&self, x: f64, y: f64) -> f64 {
        let p = 1.0 - self.alpha;
        (x.powf(p) - y.powf(p)) / (self.drift * p)
    }
}

pub fn characteristic_a(c: &Characteristic, x: f64, t: f64) -> f64 {
    c.a(x, t)
}

/// Time dilation factors of the lower and upper window edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct Dilation {
    pub lower: f64,
    pub upper: f64,
}

impl Default for Dilation {
    fn default() -> Self {
        Self {
            lower: 2.0,
            upper: 0.5,
        }
    }
}

pub fn chi_window(c: &Characteristic, n1: usize, n2: usize, t: f64, k_star: f64) -> (f64, f64) {
    chi_window_with(c, n1, n2, t, k_star, Dilation::default())
}

pub fn chi_window_with(
    c: &Characteristic,
    n1: usize,
    n2: usize,
    t: f64,
    k_star: f64,
    dil: Dilation,
) -> (f64, f64) {
    (
        c.a(n1 as f64, dil.lower * t) - k_star,
        c.a(n2 as f64, dil.upper * t) + k_star,
    )
}

fn mass_inside(v: &[f64], (lo, hi): (f64, f64)) -> f64 {
    if !(hi > lo) {
        return 0.0;
    }
    let first = (lo.floor() as i64 + 1).max(1) as usize;
    let last_excl = hi.ceil() as i64 - 1;
    if last_excl < first as i64 {
        return 0.0;
    }
    let last = (last_excl as usize).min(v.len());
    if last < first {
        return 0.0;
    }
    v[first - 1..last].iter().sum()
}

/// `Σ v_i` over indices strictly inside the window.
pub fn window_mass(v: &StateVector, window: (f64, f64)) -> Result<f64> {
    if v.coords() != Coords::V {
        return Err(Error::CoordinateMismatch {
            expected: "v-form",
            found: "other",
        });
    }
    Ok(mass_inside(v.values(), window))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Which {
    W1,
    W2,
}

/// Exponential-edge supersolution following a dilated characteristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Supersolution {
    pub which: Which,
    pub d: f64,
    pub n_ref: usize,
    pub characteristic: Characteristic,
    /// Time factor inside `A(N_ref, factor·t)`.
    pub factor: f64,
}

impl Supersolution {
    pub fn w1(c: Characteristic, n1: usize, d: f64) -> Self {
        Self {
            which: Which::W1,
            d,
            n_ref: n1,
            characteristic: c,
            factor: Dilation::default().lower,
        }
    }

    pub fn w2(c: Characteristic, n2: usize, d: f64) -> Self {
        Self {
            which: Which::W2,
            d,
            n_ref: n2,
            characteristic: c,
            factor: Dilation::default().upper,
        }
    }

    pub fn edge(&self, t: f64) -> f64 {
        self.characteristic.a(self.n_ref as f64, self.factor * t)
    }

    fn edge_dot(&self, t: f64) -> f64 {
        self.factor
            * self
                .characteristic
                .a_dot(self.n_ref as f64, self.factor * t)
    }

    pub fn value(&self, x: f64, t: f64) -> f64 {
        let a = self.edge(t);
        match self.which {
            Which::W1 if x < a => ((x - a) / self.d).exp(),
            Which::W2 if x > a => ((a - x) / self.d).exp(),
            _ => 1.0,
        }
    }

    pub fn time_derivative(&self, x: f64, t: f64) -> f64 {
        let a = self.edge(t);
        let ad = self.edge_dot(t);
        match self.which {
            Which::W1 if x < a => -self.value(x, t) * ad / self.d,
            Which::W2 if x > a => self.value(x, t) * ad / self.d,
            _ => 0.0,
        }
    }
}

/// Samples `W(i, t)` for `i = 1..=n` as V-form data.
pub fn supersolution_values(s: &Supersolution, t: f64, n: usize) -> StateVector {
    StateVector::integrated((1..=n).map(|i| s.value(i as f64, t)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupersolutionReport {
    pub min_residual: f64,
    pub at_index: usize,
    pub at_time: f64,
    /// Index range where the residual is below the tolerance at the worst time.
    pub negative_region: Option<(usize, usize)>,
    /// Largest `|residual|` on rows beyond `edge + 1` (W1 only).
    pub trivial_region_max: f64,
    pub passed: bool,
}

pub const SUPERSOLUTION_TOL: f64 = 1e-10;

fn residuals(s: &Supersolution, op: &OperatorMatrix, t: f64, buf: &mut [f64]) -> Vec<f64> {
    let n = op.n();
    let w: Vec<f64> = (1..=n).map(|i| s.value(i as f64, t)).collect();
    op.apply_slice(&w, buf);
    (1..=n)
        .map(|i| s.time_derivative(i as f64, t) - buf[i - 1])
        .collect()
}

/// Minimum of `∂_t W - 𝕃W` over `t_grid × {1..=n}`.
pub fn supersolution_check(
    eq: &Arc<EquilibriumState>,
    s: &Supersolution,
    t_grid: &[f64],
    n: usize,
) -> Result<SupersolutionReport> {
    if t_grid.is_empty() {
        return Err(invalid("t_grid", "must be nonempty"));
    }
    let op = OperatorMatrix::assemble_integrated(eq, n)?;
    let mut buf = vec![0.0; n];
    let mut report = SupersolutionReport {
        min_residual: f64::INFINITY,
        at_index: 0,
        at_time: 0.0,
        negative_region: None,
        trivial_region_max: 0.0,
        passed: true,
    };
    let mut worst: Vec<f64> = Vec::new();
    for &t in t_grid {
        let r = residuals(s, &op, t, &mut buf);
        let edge = s.edge(t);
        if s.which == Which::W1 {
            for (k, x) in r.iter().enumerate() {
                if (k + 1) as f64 > edge + 1.0 {
                    report.trivial_region_max = report.trivial_region_max.max(x.abs());
                }
            }
        }
        let (k, m) =
            r.iter().enumerate().fold(
                (0, f64::INFINITY),
                |acc, (k, x)| if *x < acc.1 { (k, *x) } else { acc },
            );
        if m < report.min_residual {
            report.min_residual = m;
            report.at_index = k + 1;
            report.at_time = t;
            worst = r;
        }
    }
    let neg: Vec<usize> = worst
        .iter()
        .enumerate()
        .filter(|(_, x)| **x < -SUPERSOLUTION_TOL)
        .map(|(k, _)| k + 1)
        .collect();
    if let (Some(&lo), Some(&hi)) = (neg.first(), neg.last()) {
        report.negative_region = Some((lo, hi));
    }
    report.passed = report.min_residual >= -SUPERSOLUTION_TOL;
    Ok(report)
}

const CALIBRATION_PROBE: usize = 4096;

/// `C = max_i (a_i Q_1 + b_{i+1} i/(i+1)) / (2 i^α)` over the probe range.
pub fn comparison_constant(eq: &EquilibriumState) -> f64 {
    let m = eq.model();
    let q1 = eq.z();
    let top = CALIBRATION_PROBE.min(eq.len().saturating_sub(1)).max(1);
    (1..=top)
        .map(|i| {
            let fi = i as f64;
            (m.a(i) * q1 + m.b(i + 1) * fi / (fi + 1.0)) / (2.0 * fi.powf(m.alpha()))
        })
        .fold(0.0, f64::max)
}

/// `D = 4C / (z_s - z)`.
pub fn calibrate_d(eq: &EquilibriumState) -> Result<f64> {
    let drift = eq.model().z_s() - eq.z();
    if !(drift > 0.0) {
        return Err(Error::Supercritical {
            z: eq.z(),
            z_s: eq.model().z_s(),
        });
    }
    Ok(4.0 * comparison_constant(eq) / drift)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NStar {
    /// Smallest edge value down to which the W1 check holds.
    pub value: f64,
    /// First scanned time with a negative residual, if any.
    pub failed_at: Option<f64>,
}

const N_STAR_SAMPLES: usize = 400;

/// Scans `A(N1, 2t)` from `N1` down to extinction and records where the W1
/// residual first drops below the tolerance.
pub fn find_n_star(eq: &Arc<EquilibriumState>, d: f64, n1: usize, n: usize) -> Result<NStar> {
    let c = Characteristic::from_equilibrium(eq)?;
    let s = Supersolution::w1(c, n1, d);
    let t_ext = c.extinction_time(n1 as f64) / s.factor;
    let op = OperatorMatrix::assemble_integrated(eq, n)?;
    let mut buf = vec![0.0; n];
    let mut last_edge = n1 as f64;
    for j in 0..=N_STAR_SAMPLES {
        let t = t_ext * j as f64 / N_STAR_SAMPLES as f64;
        let r = residuals(&s, &op, t, &mut buf);
        if r.iter().any(|x| *x < -SUPERSOLUTION_TOL) {
            return Ok(NStar {
                value: last_edge,
                failed_at: Some(t),
            });
        }
        last_edge = s.edge(t);
    }
    Ok(NStar {
        value: 1.0,
        failed_at: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrincipleReport {
    pub boundary_min: f64,
    pub interior_min: f64,
    pub boundary_max: f64,
    pub interior_max: f64,
    pub tolerance: f64,
    pub min_ok: bool,
    pub max_ok: bool,
}

/// Evolves `dW/dt = 𝕃W` and compares interior extrema with extrema on the
/// parabolic boundary `{t = 0} ∪ {i = 1} ∪ {i = N}`.
pub fn minimum_principle_check(
    eq: &Arc<EquilibriumState>,
    w0: &StateVector,
    t_end: f64,
    rtol: f64,
) -> Result<PrincipleReport> {
    if w0.coords() != Coords::Integrated {
        return Err(Error::CoordinateMismatch {
            expected: "V-form",
            found: "other",
        });
    }
    let n = w0.len();
    let op = OperatorMatrix::assemble_integrated(eq, n)?;
    let v = w0.values();
    let mut bmin = v.iter().copied().fold(f64::INFINITY, f64::min);
    let mut bmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut imin = f64::INFINITY;
    let mut imax = f64::NEG_INFINITY;
    let outputs: Vec<f64> = (1..=200).map(|j| t_end * j as f64 / 200.0).collect();
    evolve_linear_with(
        &op,
        w0,
        t_end,
        &EvolveOptions::new(rtol).diagnostics_only(),
        &outputs,
        |t, w| {
            if t > 0.0 {
                for x in [w[0], w[n - 1]] {
                    bmin = bmin.min(x);
                    bmax = bmax.max(x);
                }
                for &x in &w[1..n - 1] {
                    imin = imin.min(x);
                    imax = imax.max(x);
                }
            }
            Control::Continue
        },
    )?;
    let scale = v
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    let tol = 10.0 * rtol * scale;
    Ok(PrincipleReport {
        boundary_min: bmin,
        interior_min: imin,
        boundary_max: bmax,
        interior_max: imax,
        tolerance: tol,
        min_ok: imin >= bmin - tol,
        max_ok: imax <= bmax + tol,
    })
}

fn tail_mass(v: &[f64]) -> f64 {
    let n = v.len();
    v[3 * n / 4..].iter().map(|x| x.abs()).sum()
}

pub const TAIL_LIMIT: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct PulseConfig {
    pub n1: usize,
    pub n2: usize,
    pub eps: f64,
    /// K* candidates as multiples of D.
    pub k_star_multiples: Vec<f64>,
    /// Evolution horizon; defaults to the validity time `A(N1, 2t) = N*`.
    pub t_end: Option<f64>,
    /// Truncation; defaults to `4 N2`.
    pub n_trunc: Option<usize>,
    pub rtol: f64,
    pub n_out: usize,
    pub dilation: Dilation,
}

impl PulseConfig {
    pub fn new(n1: usize, n2: usize) -> Self {
        Self {
            n1,
            n2,
            eps: 0.1,
            k_star_multiples: vec![2.0, 4.0, 8.0],
            t_end: None,
            n_trunc: None,
            rtol: 1e-8,
            n_out: 200,
            dilation: Dilation::default(),
        }
    }

    pub fn truncation(&self) -> usize {
        self.n_trunc.unwrap_or(4 * self.n2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PulseSample {
    pub t: f64,
    pub x1: f64,
    /// Window mass for each K* candidate.
    pub window_mass: Vec<f64>,
    pub windows: Vec<(f64, f64)>,
    pub duhamel_gap: f64,
    /// Smallest i with cumulative mass >= ε.
    pub left_edge: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KStarOutcome {
    pub k_star: f64,
    /// First time the window mass reaches 1 - ε, interpolated between samples.
    pub t_fail: Option<f64>,
    pub delta_hat: f64,
    /// Left mass edge stayed at or above the window's lower edge.
    pub edge_consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub n1: usize,
    pub n2: usize,
    pub n_trunc: usize,
    pub eps: f64,
    pub d: f64,
    pub n_star: NStar,
    pub horizon: f64,
    pub samples: Vec<PulseSample>,
    pub k_star: Vec<KStarOutcome>,
    pub duhamel_gap_at_horizon: f64,
    /// `max (V_i - W¹_i)` for the tilde flow over samples.
    pub comparison_excess: f64,
    /// Most negative `v_i / ‖v⁰‖` along the tilde flow.
    pub tilde_min: f64,
    pub tail_mass: f64,
    pub mass_drift: f64,
}

fn cumulative_edge(v: &[f64], eps: f64) -> usize {
    let mut acc = 0.0;
    for (k, x) in v.iter().enumerate() {
        acc += x;
        if acc >= eps {
            return k + 1;
        }
    }
    v.len()
}

/// Uniform unit-mass pulse on the open interval `(n1, n2)`.
pub fn uniform_pulse(n1: usize, n2: usize, n: usize) -> Result<Vec<f64>> {
    if n2 < n1 + 2 || n2 > n {
        return Err(Error::Window(format!(
            "pulse ({n1}, {n2}) is empty or exceeds truncation {n}"
        )));
    }
    let w = 1.0 / (n2 - n1 - 1) as f64;
    Ok((1..=n)
        .map(|i| if i > n1 && i < n2 { w } else { 0.0 })
        .collect())
}

/// Evolves a uniform pulse under 𝐋 and 𝐋̃, tracking window masses for each
/// K* candidate against the transport window.
pub fn run_pulse_experiment(
    eq: &Arc<EquilibriumState>,
    cfg: &PulseConfig,
) -> Result<ExperimentReport> {
    if !(cfg.eps > 0.0 && cfg.eps < 1.0) {
        return Err(invalid("eps", format!("{} must lie in (0, 1)", cfg.eps)));
    }
    if cfg.k_star_multiples.is_empty() || cfg.n_out == 0 {
        return Err(invalid(
            "k_star_multiples",
            "need at least one K* candidate and one output",
        ));
    }
    let n = cfg.truncation();
    if n < 4 * cfg.n2 {
        return Err(Error::Size(format!(
            "truncation {n} is below 4 x N2 = {}",
            4 * cfg.n2
        )));
    }
    let c = Characteristic::from_equilibrium(eq)?;
    let d = calibrate_d(eq)?;
    let n_star = find_n_star(eq, d, cfg.n1, n)?;
    let t_valid = c.time_to_reach(cfg.n1 as f64, n_star.value) / cfg.dilation.lower;
    let horizon = cfg.t_end.unwrap_or(t_valid);
    if !(horizon > 0.0) {
        return Err(Error::Window(format!(
            "empty validity horizon for N1 = {}",
            cfg.n1
        )));
    }
    let v0 = StateVector::v_form(uniform_pulse(cfg.n1, cfg.n2, n)?);
    let outputs: Vec<f64> = (1..=cfg.n_out)
        .map(|j| horizon * j as f64 / cfg.n_out as f64)
        .collect();
    let k_stars: Vec<f64> = cfg.k_star_multiples.iter().map(|m| m * d).collect();
    let w1 = Supersolution::w1(c, cfg.n1, d);

    let tilde = OperatorMatrix::assemble_tilde(eq, n)?;
    let mut tilde_states: Vec<Vec<f64>> = Vec::with_capacity(outputs.len() + 1);
    let mut excess = f64::NEG_INFINITY;
    let mut tilde_min = 0.0f64;
    let mut tail = 0.0f64;
    let opts = EvolveOptions::new(cfg.rtol).diagnostics_only();
    evolve_linear_with(&tilde, &v0, horizon, &opts, &outputs, |t, v| {
        let mut acc = 0.0;
        for (k, x) in v.iter().enumerate() {
            acc += x;
            excess = excess.max(acc - w1.value((k + 1) as f64, t));
            tilde_min = tilde_min.min(*x);
        }
        tail = tail.max(tail_mass(v));
        tilde_states.push(v.to_vec());
        Control::Continue
    })?;

    let full = OperatorMatrix::assemble_full(eq, n)?;
    let mut samples = Vec::with_capacity(outputs.len() + 1);
    let mut idx = 0;
    let traj = evolve_linear_with(&full, &v0, horizon, &opts, &outputs, |t, v| {
        let windows: Vec<(f64, f64)> = k_stars
            .iter()
            .map(|&k| chi_window_with(&c, cfg.n1, cfg.n2, t, k, cfg.dilation))
            .collect();
        let masses = windows.iter().map(|&w| mass_inside(v, w)).collect();
        let gap = v
            .iter()
            .zip(&tilde_states[idx])
            .map(|(a, b)| (a - b).abs())
            .sum();
        tail = tail.max(tail_mass(v));
        samples.push(PulseSample {
            t,
            x1: v.iter().map(|x| x.abs()).sum(),
            window_mass: masses,
            windows,
            duhamel_gap: gap,
            left_edge: cumulative_edge(v, cfg.eps),
        });
        idx += 1;
        Control::Continue
    })?;
    if tail > TAIL_LIMIT {
        return Err(Error::Invalidated(format!(
            "tail mass {tail:e} exceeds {TAIL_LIMIT:e} at truncation {n}; increase the truncation"
        )));
    }

    let scale = cfg.n1 as f64;
    let k_star = k_stars
        .iter()
        .enumerate()
        .map(|(j, &k)| {
            let level = 1.0 - cfg.eps;
            let t_fail = samples
                .iter()
                .position(|s| s.window_mass[j] <= level)
                .map(|p| {
                    if p == 0 {
                        return 0.0;
                    }
                    let (a, b) = (&samples[p - 1], &samples[p]);
                    let (ma, mb) = (a.window_mass[j], b.window_mass[j]);
                    a.t + (ma - level) / (ma - mb) * (b.t - a.t)
                });
            let t_ok = t_fail.unwrap_or(horizon);
            let edge_consistent = samples
                .iter()
                .filter(|s| s.t < t_ok)
                .all(|s| s.left_edge as f64 >= s.windows[j].0);
            KStarOutcome {
                k_star: k,
                t_fail,
                delta_hat: t_ok / scale.powf(1.0 - c.alpha),
                edge_consistent,
            }
        })
        .collect();
    Ok(ExperimentReport {
        n1: cfg.n1,
        n2: cfg.n2,
        n_trunc: n,
        eps: cfg.eps,
        d,
        n_star,
        horizon,
        duhamel_gap_at_horizon: samples.last().map_or(0.0, |s| s.duhamel_gap),
        samples,
        k_star,
        comparison_excess: excess,
        tilde_min,
        tail_mass: tail,
        mass_drift: traj.max_mass_drift,
    })
}

/// Duhamel gap at time `t`, interpolated linearly between samples.
fn gap_at(samples: &[PulseSample], t: f64) -> f64 {
    let mut prev = (0.0, 0.0);
    for s in samples {
        if s.t >= t {
            let w = if s.t > prev.0 {
                (t - prev.0) / (s.t - prev.0)
            } else {
                1.0
            };
            return prev.1 + w * (s.duhamel_gap - prev.1);
        }
        prev = (s.t, s.duhamel_gap);
    }
    prev.1
}

/// Minimum over maximum of a positive sequence.
fn uniformity(xs: &[f64]) -> f64 {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(0.0, f64::max);
    if hi > 0.0 {
        lo / hi
    } else {
        0.0
    }
}

pub const UNIFORMITY_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PulseSweepReport {
    pub experiments: Vec<ExperimentReport>,
    /// Smallest passing K* (absolute), with its multiple of D.
    pub k_star: Option<f64>,
    pub k_star_multiple: Option<f64>,
    /// `min_N1 δ̂(N1)` for the selected K*.
    pub delta_hat: f64,
    pub uniformity: f64,
    /// Duhamel gap at `t = δ̂ N1^{1-α}`, in sweep order.
    pub duhamel_gaps: Vec<f64>,
    pub passed: bool,
}

/// Runs the pulse experiment for each `N1` with `N2 = n2_factor·N1` and
/// selects the smallest K* multiple whose δ̂ is positive and uniform.
pub fn run_pulse_sweep(
    eq: &Arc<EquilibriumState>,
    n1_list: &[usize],
    n2_factor: usize,
    template: &PulseConfig,
    execution: Execution,
) -> Result<PulseSweepReport> {
    if n1_list.is_empty() {
        return Err(invalid("n1_list", "must be nonempty"));
    }
    let experiments = exec::try_map(execution, n1_list, |&n1| {
        let mut cfg = template.clone();
        cfg.n1 = n1;
        cfg.n2 = n2_factor * n1;
        cfg.n_trunc = template.n_trunc.map(|_| 4 * cfg.n2);
        run_pulse_experiment(eq, &cfg)
    })?;
    let mut chosen = None;
    for (j, &mult) in template.k_star_multiples.iter().enumerate() {
        let deltas: Vec<f64> = experiments.iter().map(|e| e.k_star[j].delta_hat).collect();
        let u = uniformity(&deltas);
        let min = deltas.iter().copied().fold(f64::INFINITY, f64::min);
        if min > 0.0 && u >= UNIFORMITY_FLOOR {
            chosen = Some((j, mult, min, u));
            break;
        }
    }
    let delta_for_gaps = match chosen {
        Some((_, _, min, _)) => min,
        None => {
            let last = template.k_star_multiples.len() - 1;
            experiments
                .iter()
                .map(|e| e.k_star[last].delta_hat)
                .fold(f64::INFINITY, f64::min)
        }
    };
    let duhamel_gaps = experiments
        .iter()
        .map(|e| {
            let alpha = eq.model().alpha();
            gap_at(&e.samples, delta_for_gaps * (e.n1 as f64).powf(1.0 - alpha))
        })
        .collect();
    Ok(match chosen {
        Some((j, mult, min, u)) => PulseSweepReport {
            k_star: Some(experiments[0].k_star[j].k_star),
            k_star_multiple: Some(mult),
            delta_hat: min,
            uniformity: u,
            duhamel_gaps,
            experiments,
            passed: true,
        },
        None => {
            let last = template.k_star_multiples.len() - 1;
            let deltas: Vec<f64> = experiments
                .iter()
                .map(|e| e.k_star[last].delta_hat)
                .collect();
            PulseSweepReport {
                k_star: None,
                k_star_multiple: None,
                delta_hat: deltas.iter().copied().fold(f64::INFINITY, f64::min),
                uniformity: uniformity(&deltas),
                duhamel_gaps,
                experiments,
                passed: false,
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct CutoffConfig {
    pub n_list: Vec<usize>,
    pub eps: f64,
    pub eta: f64,
    pub rtol: f64,
    /// Output spacing in time.
    pub dt_out: f64,
    /// Time budget per run as a multiple of N.
    pub budget_factor: f64,
    pub headroom: usize,
}

impl CutoffConfig {
    pub fn new(n_list: Vec<usize>) -> Self {
        Self {
            n_list,
            eps: 0.1,
            eta: 0.01,
            rtol: 1e-8,
            dt_out: 0.25,
            budget_factor: 8.0,
            headroom: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CutoffSample {
    pub t: f64,
    pub x1: f64,
    pub y_eta: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffRun {
    pub n: usize,
    pub n_trunc: usize,
    pub t_lower: Option<f64>,
    pub t_half: Option<f64>,
    pub t_eps: Option<f64>,
    /// `t_lower / N^{1-α}`.
    pub delta_hat: f64,
    pub decay_rate: Option<f64>,
    pub max_x1: f64,
    pub mass_drift: f64,
    pub tail_mass: f64,
    pub censored: bool,
    pub samples: Vec<CutoffSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffReport {
    pub runs: Vec<CutoffRun>,
    pub exponent: Option<f64>,
    pub prefactor: Option<f64>,
    pub target_exponent: f64,
    pub delta_hat: f64,
    pub delta_uniformity: f64,
    /// `t_eps(N_{j+1}) / t_eps(N_j)` along the sweep.
    pub t_eps_ratios: Vec<f64>,
    pub lower_bound_pass: bool,
    pub exponent_pass: bool,
    pub t_half_monotone: bool,
    pub upper_ratio_pass: bool,
    pub decay_pass: bool,
}

impl CutoffReport {
    pub fn passed(&self) -> bool {
        self.lower_bound_pass
            && self.exponent_pass
            && self.t_half_monotone
            && self.upper_ratio_pass
            && self.decay_pass
    }
}

pub const EXPONENT_SLACK: f64 = 0.15;
pub const UPPER_RATIO_LIMIT: f64 = 2.5;

/// Two opposite pulses `u¹ - u²`, each of mass 1/2, on `[N/4, N/2)` and
/// `[3N/4, N)`.
pub fn two_pulse_data(n: usize, n_trunc: usize) -> Result<Vec<f64>> {
    if n < 8 || n % 4 != 0 {
        return Err(invalid(
            "N",
            format!("{n} must be a multiple of 4 and at least 8"),
        ));
    }
    if n_trunc < n {
        return Err(Error::Size(format!(
            "truncation {n_trunc} is below N = {n}"
        )));
    }
    let h = 2.0 / n as f64;
    Ok((1..=n_trunc)
        .map(|i| {
            if i >= n / 4 && i < n / 2 {
                h
            } else if i >= 3 * n / 4 && i < n {
                -h
            } else {
                0.0
            }
        })
        .collect())
}

/// Least-squares line `y = a + b x`; returns `(a, b)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    Some((my - b * mx, b))
}

fn crossing(samples: &[CutoffSample], level: f64) -> Option<f64> {
    let j = samples.iter().position(|s| s.x1 < level)?;
    if j == 0 {
        return Some(samples[0].t);
    }
    let (a, b) = (samples[j - 1], samples[j]);
    Some(a.t + (a.x1 - level) / (a.x1 - b.x1) * (b.t - a.t))
}

/// Single two-pulse run at size `n`; decay rate is fitted to `ln ‖u‖_η`
/// after the norm first drops below ε.
pub fn upper_decay_check(
    eq: &Arc<EquilibriumState>,
    n: usize,
    cfg: &CutoffConfig,
) -> Result<CutoffRun> {
    if !(cfg.eta >= 0.0) {
        return Err(invalid("eta", format!("{} must be >= 0", cfg.eta)));
    }
    if !(cfg.eps > 0.0 && cfg.eps < 0.5) {
        return Err(invalid("eps", format!("{} must lie in (0, 1/2)", cfg.eps)));
    }
    let n_trunc = cfg.headroom * n;
    let v0 = two_pulse_data(n, n_trunc)?;
    yeta_norm_v(&v0, cfg.eta)?;
    let alpha = eq.model().alpha();
    let op = OperatorMatrix::assemble_full(eq, n_trunc)?;
    let budget = cfg.budget_factor * n as f64;
    let steps = (budget / cfg.dt_out).ceil() as usize;
    let outputs: Vec<f64> = (1..=steps).map(|j| j as f64 * cfg.dt_out).collect();
    let stop_level = cfg.eps / 100.0;
    let mut samples = Vec::new();
    let mut tail = 0.0f64;
    let mut sat = None;
    let traj = evolve_linear_with(
        &op,
        &StateVector::v_form(v0),
        budget,
        &EvolveOptions::new(cfg.rtol).diagnostics_only(),
        &outputs,
        |t, v| {
            let x1: f64 = v.iter().map(|x| x.abs()).sum();
            let y_eta = match yeta_norm_v(v, cfg.eta) {
                Ok(y) => y,
                Err(e) => {
                    sat = Some(e);
                    return Control::Stop;
                }
            };
            tail = tail.max(tail_mass(v));
            samples.push(CutoffSample {
                t,
                x1,
                y_eta,
                mass: v.iter().sum(),
            });
            if x1 < stop_level {
                Control::Stop
            } else {
                Control::Continue
            }
        },
    )?;
    if let Some(e) = sat {
        return Err(e);
    }
    if tail > TAIL_LIMIT {
        return Err(Error::Invalidated(format!(
            "tail mass {tail:e} exceeds {TAIL_LIMIT:e} at truncation {n_trunc}"
        )));
    }
    let t_lower = crossing(&samples, 1.0 - cfg.eps);
    let t_half = crossing(&samples, 0.5);
    let t_eps = crossing(&samples, cfg.eps);
    let decay_rate = t_eps.and_then(|te| {
        let late: Vec<&CutoffSample> = samples
            .iter()
            .filter(|s| s.t >= te && s.y_eta > 0.0)
            .collect();
        if late.len() < 5 {
            return None;
        }
        let x: Vec<f64> = late.iter().map(|s| s.t).collect();
        let y: Vec<f64> = late.iter().map(|s| s.y_eta.ln()).collect();
        fit_line(&x, &y).map(|(_, b)| -b)
    });
    let scale = (n as f64).powf(1.0 - alpha);
    Ok(CutoffRun {
        n,
        n_trunc,
        delta_hat: t_lower.unwrap_or(budget) / scale,
        t_lower,
        censored: t_half.is_none(),
        t_half,
        t_eps,
        decay_rate,
        max_x1: samples.iter().map(|s| s.x1).fold(1.0, f64::max),
        mass_drift: traj.max_mass_drift,
        tail_mass: tail,
        samples,
    })
}

/// Two-pulse cutoff sweep over `cfg.n_list` with the scaling fit of `T_half`.
pub fn run_cutoff_experiment(
    eq: &Arc<EquilibriumState>,
    cfg: &CutoffConfig,
    execution: Execution,
) -> Result<CutoffReport> {
    if cfg.n_list.len() < 2 {
        return Err(invalid("n_list", "need at least two sizes"));
    }
    let alpha = eq.model().alpha();
    let runs = exec::try_map(execution, &cfg.n_list, |&n| upper_decay_check(eq, n, cfg))?;
    let fitted: Vec<(f64, f64)> = runs
        .iter()
        .filter_map(|r| r.t_half.map(|t| ((r.n as f64).ln(), t.ln())))
        .collect();
    let all_half = fitted.len() == runs.len();
    let fit = if all_half {
        let (x, y): (Vec<f64>, Vec<f64>) = fitted.into_iter().unzip();
        fit_line(&x, &y)
    } else {
        None
    };
    let target = 1.0 - alpha;
    let deltas: Vec<f64> = runs.iter().map(|r| r.delta_hat).collect();
    let delta_hat = deltas.iter().copied().fold(f64::INFINITY, f64::min);
    let delta_uniformity = uniformity(&deltas);
    let t_eps_ratios: Vec<f64> = runs
        .windows(2)
        .map(|w| match (w[0].t_eps, w[1].t_eps) {
            (Some(a), Some(b)) => b / a,
            _ => f64::INFINITY,
        })
        .collect();
    let t_half_monotone = all_half && runs.windows(2).all(|w| w[1].t_half > w[0].t_half);
    Ok(CutoffReport {
        exponent: fit.map(|f| f.1),
        prefactor: fit.map(|f| f.0.exp()),
        target_exponent: target,
        lower_bound_pass: runs.iter().all(|r| r.t_lower.is_some())
            && delta_hat > 0.0
            && delta_uniformity >= UNIFORMITY_FLOOR,
        exponent_pass: fit.is_some_and(|f| (f.1 - target).abs() <= EXPONENT_SLACK),
        t_half_monotone,
        upper_ratio_pass: t_eps_ratios.iter().all(|r| *r <= UPPER_RATIO_LIMIT),
        decay_pass: runs.iter().all(|r| r.decay_rate.is_some_and(|l| l > 0.0)),
        delta_hat,
        delta_uniformity,
        t_eps_ratios,
        runs,
    })
}
