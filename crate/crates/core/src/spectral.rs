//! Quasimodes on the imaginary axis and resolvent lower bounds in `X_k`.

use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::equilibrium::EquilibriumState;
use crate::error::{invalid, Error, Result};
use crate::exec::{self, Execution};
use crate::operators::OperatorMatrix;

/// Phase-modulated pulse approximating an eigenvector of `L` at `λ𝕚`.
///
/// Values are stored in mass-weighted form `w_i = i Q_i h̃_i`; the h-form
/// is `w_i / (i Q_i)`, which overflows f64 for large windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Quasimode {
    pub lambda: f64,
    pub n1: usize,
    pub n2: usize,
    pub k: f64,
    /// Truncation size the mode is built for.
    pub n: usize,
    pub mass_corrected: bool,
    pub second_window: Option<(usize, usize)>,
    values: Vec<Complex64>,
}

impl Quasimode {
    pub fn v_values(&self) -> &[Complex64] {
        &self.values
    }

    /// `h̃_i` at a 1-based index; may be infinite beyond the f64 range.
    pub fn h_value(&self, eq: &EquilibriumState, i: usize) -> Complex64 {
        let w = self.values[i - 1];
        let s = eq.q_scaled(i);
        Complex64::new(s.div_into(w.re / i as f64), s.div_into(w.im / i as f64))
    }

    /// `Σ Q_i i^k |h̃_i| = Σ i^{k-1} |w_i|`.
    pub fn xk_norm(&self) -> f64 {
        weighted_l1(&self.values, self.k)
    }

    pub fn mass(&self) -> Complex64 {
        self.values.iter().sum()
    }
}

fn weighted_l1(v: &[Complex64], k: f64) -> f64 {
    v.iter()
        .enumerate()
        .map(|(j, x)| ((j + 1) as f64).powf(k - 1.0) * x.norm())
        .sum()
}

fn phased_pulse(eq: &EquilibriumState, lambda: f64, lo: usize, hi: usize, out: &mut [Complex64]) {
    let m = eq.model();
    let rate = lambda / (m.z_s() - eq.z());
    let mut acc = 0.0;
    for i in lo..=hi {
        acc += 1.0 / m.a(i);
        out[i - 1] = Complex64::from_polar(1.0, rate * acc);
    }
}

/// Builds the phase-modulated quasimode on `[n1, n2]` for truncation `n`. With
/// `mass_correct`, a partner pulse on `[4 n2, 8 n2]` cancels the mass.
pub fn build_quasimode(
    eq: &EquilibriumState,
    lambda: f64,
    n1: usize,
    n2: usize,
    k: f64,
    mass_correct: bool,
    n: usize,
) -> Result<Quasimode> {
    build_quasimode_with_window(
        eq,
        lambda,
        n1,
        n2,
        k,
        mass_correct.then_some((4 * n2, 8 * n2)),
        n,
    )
}

pub fn build_quasimode_with_window(
    eq: &EquilibriumState,
    lambda: f64,
    n1: usize,
    n2: usize,
    k: f64,
    second: Option<(usize, usize)>,
    n: usize,
) -> Result<Quasimode> {
    if !(2 <= n1 && n1 < n2) {
        return Err(Error::Window(format!(
            "need 2 <= N1 < N2, got [{n1}, {n2}]"
        )));
    }
    if !(k >= 1.0) {
        return Err(invalid("k", format!("{k} must be >= 1")));
    }
    if !lambda.is_finite() {
        return Err(invalid("lambda", "must be finite"));
    }
    if n > eq.len() {
        return Err(Error::Size(format!(
            "truncation {n} exceeds equilibrium length {}",
            eq.len()
        )));
    }
    let top = match second {
        Some((lo, hi)) => {
            if lo <= n2 + 1 || hi < lo {
                return Err(Error::Window(format!(
                    "partner window [{lo}, {hi}] overlaps or touches [{n1}, {n2}]"
                )));
            }
            hi
        }
        None => n2,
    };
    if n < 2 * top {
        return Err(Error::TruncationTooSmall {
            n,
            ratio: n as f64 / top as f64,
        });
    }
    let mut values = vec![Complex64::new(0.0, 0.0); n];
    phased_pulse(eq, lambda, n1, n2, &mut values);
    if let Some((lo, hi)) = second {
        let mu: Complex64 = values[n1 - 1..n2].iter().sum();
        let mut partner = vec![Complex64::new(0.0, 0.0); n];
        phased_pulse(eq, lambda, lo, hi, &mut partner);
        let pm: Complex64 = partner[lo - 1..hi].iter().sum();
        if pm.norm() == 0.0 {
            return Err(Error::Window("partner pulse has zero mass".into()));
        }
        let s = -mu / pm;
        for i in lo..=hi {
            values[i - 1] = s * partner[i - 1];
        }
    }
    Ok(Quasimode {
        lambda,
        n1,
        n2,
        k,
        n,
        mass_corrected: second.is_some(),
        second_window: second,
        values,
    })
}

/// `‖(𝐋 - λ𝕚) w‖_{X_k} / ‖w‖_{X_k}` for a mass-weighted vector.
pub fn residual_ratio_vector(
    op: &OperatorMatrix,
    w: &[Complex64],
    lambda: f64,
    k: f64,
) -> Result<f64> {
    if w.len() != op.n() {
        return Err(Error::Size(format!(
            "vector length {} != operator size {}",
            w.len(),
            op.n()
        )));
    }
    let den = weighted_l1(w, k);
    if !(den > 0.0) {
        return Err(Error::Window("zero vector has no residual ratio".into()));
    }
    let lw = op.apply_complex(w);
    let shift = Complex64::new(0.0, lambda);
    let res: Vec<Complex64> = lw.iter().zip(w).map(|(a, b)| a - shift * b).collect();
    Ok(weighted_l1(&res, k) / den)
}

pub fn residual_ratio_with(op: &OperatorMatrix, q: &Quasimode) -> Result<f64> {
    residual_ratio_vector(op, &q.values, q.lambda, q.k)
}

/// Residual ratio under the full operator at the mode's truncation.
pub fn residual_ratio(eq: &Arc<EquilibriumState>, q: &Quasimode) -> Result<f64> {
    let op = OperatorMatrix::assemble_full(eq, q.n)?;
    residual_ratio_with(&op, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificateSource {
    Quasimode,
    /// The exact zero eigenvector ξ.
    Kernel,
}

/// Record asserting `‖(L - λ𝕚)^{-1}‖_{X_k} >= bound` on the truncated operator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolventCertificate {
    pub lambda: f64,
    pub k: f64,
    pub n1: usize,
    pub n2: usize,
    pub residual: f64,
    pub bound: f64,
    pub source: CertificateSource,
}

pub fn resolvent_certificate(q: &Quasimode, r: f64) -> Result<ResolventCertificate> {
    if !(r >= 0.0) {
        return Err(invalid("r", format!("{r} must be nonnegative")));
    }
    Ok(ResolventCertificate {
        lambda: q.lambda,
        k: q.k,
        n1: q.n1,
        n2: q.n2,
        residual: r,
        bound: 1.0 / r,
        source: CertificateSource::Quasimode,
    })
}

/// Certificate from the exact kernel vector ξ at truncation `n`.
pub fn kernel_certificate(
    eq: &Arc<EquilibriumState>,
    n: usize,
    k: f64,
) -> Result<ResolventCertificate> {
    let op = OperatorMatrix::assemble_full(eq, n)?;
    let xi: Vec<Complex64> = eq.xi_v()[..n]
        .iter()
        .map(|x| Complex64::new(*x, 0.0))
        .collect();
    let r = residual_ratio_vector(&op, &xi, 0.0, k)?;
    Ok(ResolventCertificate {
        lambda: 0.0,
        k,
        n1: 1,
        n2: n,
        residual: r,
        bound: 1.0 / r,
        source: CertificateSource::Kernel,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumRow {
    pub lambda: f64,
    #[serde(rename = "N1")]
    pub n1: usize,
    #[serde(rename = "N2")]
    pub n2: usize,
    pub k: f64,
    pub residual: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanSpec {
    pub lambda_grid: Vec<f64>,
    pub n1_schedule: Vec<usize>,
    pub k: f64,
    pub mass_correct: bool,
    /// `N2 = n2_factor * N1`.
    pub n2_factor: usize,
}

impl ScanSpec {
    pub fn new(lambda_grid: Vec<f64>, n1_schedule: Vec<usize>, k: f64) -> Self {
        Self {
            lambda_grid,
            n1_schedule,
            k,
            mass_correct: false,
            n2_factor: 2,
        }
    }

    /// Truncation wide enough for every window in the scan.
    pub fn required_truncation(&self) -> usize {
        let n2 = self.n1_schedule.iter().copied().max().unwrap_or(0) * self.n2_factor;
        let top = if self.mass_correct { 8 * n2 } else { n2 };
        2 * top + 2
    }
}

/// Residual table over `λ × N1`, in row-major order of `lambda_grid`.
pub fn spectrum_scan(
    eq: &Arc<EquilibriumState>,
    spec: &ScanSpec,
    n: usize,
    execution: Execution,
) -> Result<Vec<SpectrumRow>> {
    if spec.lambda_grid.is_empty() || spec.n1_schedule.is_empty() {
        return Err(invalid(
            "grid",
            "lambda grid and N1 schedule must be nonempty",
        ));
    }
    if spec.n2_factor < 2 {
        return Err(invalid("n2_factor", "must be at least 2"));
    }
    let op = OperatorMatrix::assemble_full(eq, n)?;
    let cells: Vec<(f64, usize)> = spec
        .lambda_grid
        .iter()
        .flat_map(|&l| spec.n1_schedule.iter().map(move |&n1| (l, n1)))
        .collect();
    exec::try_map(execution, &cells, |&(lambda, n1)| {
        let n2 = spec.n2_factor * n1;
        let q = build_quasimode(eq, lambda, n1, n2, spec.k, spec.mass_correct, n)?;
        let r = residual_ratio_with(&op, &q)?;
        Ok(SpectrumRow {
            lambda,
            n1,
            n2,
            k: spec.k,
            residual: r,
            bound: 1.0 / r,
        })
    })
}
