//! Truncated linearized operators in mass-weighted coordinates.
//!
//! With `v_i = Q_i i h_i` the linearized operator becomes a tridiagonal core
//! plus a dense first row and first column (the monomer coupling). Three
//! operators share this storage:
//!
//! * [`OperatorKind::Full`]: the similarity transform of `L`,
//! * [`OperatorKind::Tilde`]: its tridiagonal divergence-form approximation,
//! * [`OperatorKind::Integrated`]: the operator acting on prefix sums
//!   `V_i = Σ_{j<=i} v_j`.
//!
//! All operators use the zero-flux closure `J_N = 0` at the truncation edge.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::equilibrium::EquilibriumState;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    Full,
    Tilde,
    Integrated,
}

/// Coordinate convention of a [`StateVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coords {
    /// Relative perturbation `h_i` with `c_i = Q_i (1 + h_i)`.
    H,
    /// Mass-weighted `v_i = Q_i i h_i`.
    V,
    /// Prefix sums `V_i = Σ_{j<=i} v_j`.
    Integrated,
}

impl Coords {
    fn name(self) -> &'static str {
        match self {
            Coords::H => "h-form",
            Coords::V => "v-form",
            Coords::Integrated => "V-form",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    coords: Coords,
    values: Vec<f64>,
}

impl StateVector {
    pub fn new(coords: Coords, values: Vec<f64>) -> Self {
        Self { coords, values }
    }

    pub fn v_form(values: Vec<f64>) -> Self {
        Self::new(Coords::V, values)
    }

    pub fn h_form(values: Vec<f64>) -> Self {
        Self::new(Coords::H, values)
    }

    pub fn integrated(values: Vec<f64>) -> Self {
        Self::new(Coords::Integrated, values)
    }

    pub fn zeros(coords: Coords, n: usize) -> Self {
        Self::new(coords, vec![0.0; n])
    }

    pub fn coords(&self) -> Coords {
        self.coords
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    fn check_len(&self, eq: &EquilibriumState) -> Result<()> {
        if self.len() > eq.len() {
            return Err(Error::Size(format!(
                "state of length {} exceeds equilibrium length {}",
                self.len(),
                eq.len()
            )));
        }
        Ok(())
    }

    /// Converts to v-form. h-form uses `v_i = Q_i i h_i` in extended range;
    /// V-form takes first differences with `V_0 = 0`.
    pub fn to_v(&self, eq: &EquilibriumState) -> Result<StateVector> {
        let values = match self.coords {
            Coords::V => self.values.clone(),
            Coords::H => {
                self.check_len(eq)?;
                self.values
                    .iter()
                    .enumerate()
                    .map(|(k, h)| eq.q_scaled(k + 1).mul_f64(h * (k + 1) as f64).value())
                    .collect()
            }
            Coords::Integrated => {
                let mut prev = 0.0;
                self.values
                    .iter()
                    .map(|&vi| {
                        let d = vi - prev;
                        prev = vi;
                        d
                    })
                    .collect()
            }
        };
        Ok(StateVector::v_form(values))
    }

    /// Converts to h-form, `h_i = v_i / (i Q_i)`. Entries beyond the f64 range
    /// become infinite.
    pub fn to_h(&self, eq: &EquilibriumState) -> Result<StateVector> {
        if self.coords == Coords::H {
            return Ok(self.clone());
        }
        let v = self.to_v(eq)?;
        v.check_len(eq)?;
        let values = v
            .values
            .iter()
            .enumerate()
            .map(|(k, vi)| eq.q_scaled(k + 1).div_into(vi / (k + 1) as f64))
            .collect();
        Ok(StateVector::h_form(values))
    }

    /// Prefix sums of the v-form.
    pub fn to_integrated(&self, eq: &EquilibriumState) -> Result<StateVector> {
        if self.coords == Coords::Integrated {
            return Ok(self.clone());
        }
        let v = self.to_v(eq)?;
        let mut acc = 0.0;
        let values = v
            .values
            .iter()
            .map(|vi| {
                acc += vi;
                acc
            })
            .collect();
        Ok(StateVector::integrated(values))
    }

    fn convert_to(&self, coords: Coords, eq: &EquilibriumState) -> Result<StateVector> {
        match coords {
            Coords::V => self.to_v(eq),
            Coords::H => self.to_h(eq),
            Coords::Integrated => self.to_integrated(eq),
        }
    }
}

/// Left-to-right Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in terms {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Truncated operator with tridiagonal core and optional arrowhead.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    kind: OperatorKind,
    n: usize,
    /// `diag[k]` is the coefficient of `x_{k+1}` in row `k+1`.
    diag: Vec<f64>,
    /// `lower[k]` couples row `k+1` to `x_k`; `lower[0] = 0`.
    lower: Vec<f64>,
    /// `upper[k]` couples row `k+1` to `x_{k+2}`; `upper[n-1] = 0`.
    upper: Vec<f64>,
    /// Coupling of rows `2..=N` to `x_1` beyond the tridiagonal core.
    first_col: Vec<f64>,
    /// Dense row 1 (full operator only). When present it replaces
    /// `diag[0]`/`upper[0]`.
    first_row: Vec<f64>,
    eq: Arc<EquilibriumState>,
}

impl OperatorMatrix {
    fn check_size(eq: &EquilibriumState, n: usize) -> Result<()> {
        if n < 4 {
            return Err(Error::Size(format!(
                "operator truncation needs N >= 4, got {n}"
            )));
        }
        if n > eq.len() {
            return Err(Error::Size(format!(
                "operator truncation N = {n} exceeds equilibrium length {}",
                eq.len()
            )));
        }
        Ok(())
    }

    /// Full operator `𝐋 = I L I^{-1}` assembled from the linearized fluxes
    /// `F_i = Q_1 a_i Q_i (h_{i+1} - h_i - h_1)`, `i = 1..N-1`:
    /// `(𝐋v)_i = i F_i - i F_{i-1}` for `i >= 2`, `(𝐋v)_1 = 2 F_1 + Σ_{i>=2} F_i`.
    pub fn assemble_full(eq: &Arc<EquilibriumState>, n: usize) -> Result<Self> {
        Self::check_size(eq, n)?;
        let m = eq.model();
        let q1 = eq.z();
        let mut diag = vec![0.0; n];
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut first_col = vec![0.0; n];
        let mut first_row = vec![0.0; n];
        // F_i = up_i v_{i+1} + dg_i v_i + one_i v_1
        let up = |i: usize| m.b(i + 1) / (i + 1) as f64;
        let dg = |i: usize| -m.a(i) * q1 / i as f64;
        let one = |i: usize| -m.a(i) * eq.q(i);

        for i in 2..=n {
            let fi = i as f64;
            let k = i - 1;
            // -i F_{i-1}
            diag[k] = -fi * up(i - 1);
            lower[k] = -fi * dg(i - 1);
            first_col[k] = -fi * one(i - 1);
            if i < n {
                // +i F_i
                diag[k] += fi * dg(i);
                upper[k] = fi * up(i);
                first_col[k] += fi * one(i);
            }
        }
        for i in 1..n {
            let w = if i == 1 { 2.0 } else { 1.0 };
            first_row[i] += w * up(i);
            first_row[i - 1] += w * dg(i);
            first_row[0] += w * one(i);
        }
        Ok(Self {
            kind: OperatorKind::Full,
            n,
            diag,
            lower,
            upper,
            first_col,
            first_row,
            eq: Arc::clone(eq),
        })
    }

    /// Divergence-form operator `(𝐋̃v)_i = G_{i-1} - G_i` with
    /// `G_i = a_i Q_1 v_i - b_{i+1} i/(i+1) v_{i+1}`, `G_0 = G_N = 0`.
    pub fn assemble_tilde(eq: &Arc<EquilibriumState>, n: usize) -> Result<Self> {
        Self::check_size(eq, n)?;
        let m = eq.model();
        let q1 = eq.z();
        let mut diag = vec![0.0; n];
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for i in 1..=n {
            let k = i - 1;
            let fi = i as f64;
            if i > 1 {
                lower[k] = m.a(i - 1) * q1;
                diag[k] = -m.b(i) * (fi - 1.0) / fi;
            }
            if i < n {
                diag[k] -= m.a(i) * q1;
                upper[k] = m.b(i + 1) * fi / (fi + 1.0);
            }
        }
        Ok(Self {
            kind: OperatorKind::Tilde,
            n,
            diag,
            lower,
            upper,
            first_col: Vec::new(),
            first_row: Vec::new(),
            eq: Arc::clone(eq),
        })
    }

    /// Integrated operator
    /// `(𝕃V)_i = -a_i Q_1 (V_i - V_{i-1}) + b_{i+1} (V_{i+1} - V_i) i/(i+1)`
    /// for `i < N`, with `V_0 = 0`; `(𝕃V)_N = 0`, so `V_N` (the mass) is conserved.
    pub fn assemble_integrated(eq: &Arc<EquilibriumState>, n: usize) -> Result<Self> {
        Self::check_size(eq, n)?;
        let m = eq.model();
        let q1 = eq.z();
        let mut diag = vec![0.0; n];
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for i in 1..n {
            let k = i - 1;
            let fi = i as f64;
            let c = m.b(i + 1) * fi / (fi + 1.0);
            diag[k] = -m.a(i) * q1 - c;
            upper[k] = c;
            if i > 1 {
                lower[k] = m.a(i) * q1;
            }
        }
        Ok(Self {
            kind: OperatorKind::Integrated,
            n,
            diag,
            lower,
            upper,
            first_col: Vec::new(),
            first_row: Vec::new(),
            eq: Arc::clone(eq),
        })
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn equilibrium(&self) -> &Arc<EquilibriumState> {
        &self.eq
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn first_col(&self) -> &[f64] {
        &self.first_col
    }

    pub fn first_row(&self) -> &[f64] {
        &self.first_row
    }

    pub fn has_arrowhead(&self) -> bool {
        !self.first_row.is_empty()
    }

    /// Coordinate form the operator acts on.
    pub fn input_coords(&self) -> Coords {
        match self.kind {
            OperatorKind::Integrated => Coords::Integrated,
            _ => Coords::V,
        }
    }

    /// Rate scale `ρ̂ = max_i (a_i Q_1 + b_i)`, widened by the row-1 diagonal
    /// of the full operator.
    pub fn rate_scale(&self) -> f64 {
        let m = self.eq.model();
        let q1 = self.eq.z();
        let base = (1..=self.n)
            .map(|i| m.a(i) * q1 + m.b(i))
            .fold(0.0, f64::max);
        let row1 = self.first_row.first().map_or(0.0, |d| d.abs());
        base.max(row1)
            .max(self.diag.iter().fold(0.0, |acc, d| acc.max(d.abs())))
    }

    /// `y = A x` in O(N). Row 1 of the full operator is a compensated
    /// left-to-right dot product; the integrated operator is applied in
    /// difference form.
    pub fn apply_slice(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n;
        assert_eq!(x.len(), n, "input length must equal the truncation size");
        assert_eq!(y.len(), n, "output length must equal the truncation size");
        if self.kind == OperatorKind::Integrated {
            self.apply_difference_form(x, y);
            return;
        }
        let has_col = !self.first_col.is_empty();
        y[0] = if self.has_arrowhead() {
            compensated_sum(self.first_row.iter().zip(x).map(|(a, b)| a * b))
        } else {
            self.diag[0] * x[0] + self.upper[0] * x[1]
        };
        let x1 = x[0];
        for k in 1..n - 1 {
            let mut acc = self.lower[k] * x[k - 1] + self.diag[k] * x[k] + self.upper[k] * x[k + 1];
            if has_col {
                acc += self.first_col[k] * x1;
            }
            y[k] = acc;
        }
        let k = n - 1;
        let mut acc = self.lower[k] * x[k - 1] + self.diag[k] * x[k];
        if has_col {
            acc += self.first_col[k] * x1;
        }
        y[k] = acc;
    }

    fn apply_difference_form(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n;
        let out1 = self.eq.model().a(1) * self.eq.z();
        y[0] = -out1 * x[0] + self.upper[0] * (x[1] - x[0]);
        for k in 1..n - 1 {
            y[k] = -self.lower[k] * (x[k] - x[k - 1]) + self.upper[k] * (x[k + 1] - x[k]);
        }
        y[n - 1] = 0.0;
    }

    pub fn apply(&self, x: &StateVector) -> Result<StateVector> {
        let expected = self.input_coords();
        if x.coords() != expected {
            return Err(Error::CoordinateMismatch {
                expected: expected.name(),
                found: x.coords().name(),
            });
        }
        if x.len() != self.n {
            return Err(Error::Size(format!(
                "state length {} != operator size {}",
                x.len(),
                self.n
            )));
        }
        let mut y = vec![0.0; self.n];
        self.apply_slice(x.values(), &mut y);
        Ok(StateVector::new(expected, y))
    }

    /// Applies the real operator to real and imaginary parts separately.
    pub fn apply_complex(&self, x: &[Complex64]) -> Vec<Complex64> {
        let re: Vec<f64> = x.iter().map(|c| c.re).collect();
        let im: Vec<f64> = x.iter().map(|c| c.im).collect();
        let mut yr = vec![0.0; self.n];
        let mut yi = vec![0.0; self.n];
        self.apply_slice(&re, &mut yr);
        self.apply_slice(&im, &mut yi);
        yr.into_iter()
            .zip(yi)
            .map(|(r, i)| Complex64::new(r, i))
            .collect()
    }
}

/// `𝕃V` for a V-form state, assembling the integrated operator at the state's length.
pub fn integrated_apply(eq: &Arc<EquilibriumState>, v: &StateVector) -> Result<StateVector> {
    if v.coords() != Coords::Integrated {
        return Err(Error::CoordinateMismatch {
            expected: "V-form",
            found: v.coords().name(),
        });
    }
    OperatorMatrix::assemble_integrated(eq, v.len())?.apply(v)
}

/// `μ(h) = Σ Q_i i h_i = Σ v_i`.
pub fn mass_functional(eq: &EquilibriumState, x: &StateVector) -> Result<f64> {
    match x.coords() {
        Coords::Integrated => Ok(x.values().last().copied().unwrap_or(0.0)),
        _ => Ok(compensated_sum(x.to_v(eq)?.values().iter().copied())),
    }
}

/// `h - ξ μ(h)`, returned in the input's coordinates.
pub fn project_zero_mass(eq: &EquilibriumState, x: &StateVector) -> Result<StateVector> {
    let mut v = x.to_v(eq)?;
    let mu = compensated_sum(v.values().iter().copied());
    let n = v.len();
    let s = compensated_sum((1..=n).map(|i| eq.q(i) * (i * i) as f64));
    for (k, vi) in v.values_mut().iter_mut().enumerate() {
        let i = k + 1;
        *vi -= mu * eq.q(i) * (i * i) as f64 / s;
    }
    v.convert_to(x.coords(), eq)
}

/// Norm families on perturbations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum NormSpec {
    /// `Σ Q_i i^k |h_i| = Σ i^{k-1} |v_i|`.
    Xk { k: f64 },
    /// `(Σ Q_i h_i^2)^{1/2}`.
    L2Q,
    /// `Σ Q_i e^{η i} |h_i| = Σ e^{η i} |v_i| / i`.
    Yeta { eta: f64 },
}

impl NormSpec {
    pub fn x1() -> Self {
        NormSpec::Xk { k: 1.0 }
    }
}

/// Weighted-ℓ¹ norm of a v-form slice, `Σ i^{k-1} |v_i|`.
pub fn xk_norm_v(v: &[f64], k: f64) -> f64 {
    if k == 1.0 {
        return v.iter().map(|x| x.abs()).sum();
    }
    v.iter()
        .enumerate()
        .map(|(j, x)| ((j + 1) as f64).powf(k - 1.0) * x.abs())
        .sum()
}

pub fn l2q_norm_v(eq: &EquilibriumState, v: &[f64]) -> f64 {
    v.iter()
        .enumerate()
        .map(|(j, x)| {
            let w = x / (j + 1) as f64;
            w * eq.q_scaled(j + 1).div_into(w)
        })
        .sum::<f64>()
        .sqrt()
}

pub fn yeta_norm_v(v: &[f64], eta: f64) -> Result<f64> {
    let mut total = 0.0;
    for (j, x) in v.iter().enumerate() {
        if *x == 0.0 {
            continue;
        }
        let i = (j + 1) as f64;
        let t = (eta * i + x.abs().ln() - i.ln()).exp();
        if !t.is_finite() {
            return Err(Error::Saturation(format!(
                "Y_eta norm with eta = {eta} at i = {}",
                j + 1
            )));
        }
        total += t;
    }
    if !total.is_finite() {
        return Err(Error::Saturation(format!("Y_eta norm with eta = {eta}")));
    }
    Ok(total)
}

pub fn norm(spec: NormSpec, eq: &EquilibriumState, x: &StateVector) -> Result<f64> {
    let v = x.to_v(eq)?;
    match spec {
        NormSpec::Xk { k } => {
            if k < 1.0 {
                return Err(crate::error::invalid("k", format!("{k} must be >= 1")));
            }
            Ok(xk_norm_v(v.values(), k))
        }
        NormSpec::L2Q => {
            v.check_len(eq)?;
            Ok(l2q_norm_v(eq, v.values()))
        }
        NormSpec::Yeta { eta } => {
            if !(eta >= 0.0) {
                return Err(crate::error::invalid("eta", format!("{eta} must be >= 0")));
            }
            yeta_norm_v(v.values(), eta)
        }
    }
}
