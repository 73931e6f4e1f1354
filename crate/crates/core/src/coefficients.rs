//! Aggregation/fragmentation rate families and finite-N checks of the
//! standing hypotheses on them.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Rate-coefficient family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelKind {
    /// `a_i = i^alpha`, `b_i = a_i (z_s + q / i^(1 - beta))`.
    Penrose {
        alpha: f64,
        beta: f64,
        q: f64,
        z_s: f64,
    },
    /// `a_i = a`, `b_i = b` for every `i`.
    Constant { a: f64, b: f64 },
    /// Tabulated `(a_i, b_i)` for `i = 1..=len`, continued by a power law.
    CustomTable { a: Vec<f64>, b: Vec<f64> },
}

/// Immutable coefficient model. Construct through [`CoefficientModel::penrose`],
/// [`CoefficientModel::constant`] or [`CoefficientModel::custom_table`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientModel {
    kind: ModelKind,
    /// Growth exponent (fitted for custom tables, 0 for constant models).
    alpha: f64,
    /// Critical monomer density, `lim b_i / a_i`.
    z_s: f64,
}

impl CoefficientModel {
    pub fn penrose(alpha: f64, beta: f64, q: f64, z_s: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(invalid("alpha", format!("{alpha} not in (0, 1]")));
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(invalid("beta", format!("{beta} not in [0, 1]")));
        }
        if !(q > 0.0 && q.is_finite()) {
            return Err(invalid("q", format!("{q} must be positive")));
        }
        if !(z_s > 0.0 && z_s.is_finite()) {
            return Err(invalid("z_s", format!("{z_s} must be positive")));
        }
        Ok(Self {
            kind: ModelKind::Penrose {
                alpha,
                beta,
                q,
                z_s,
            },
            alpha,
            z_s,
        })
    }

    pub fn constant(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(invalid("a", format!("{a} must be positive")));
        }
        if !(b > 0.0 && b.is_finite()) {
            return Err(invalid("b", format!("{b} must be positive")));
        }
        Ok(Self {
            kind: ModelKind::Constant { a, b },
            alpha: 0.0,
            z_s: b / a,
        })
    }

    /// Tabulated rates. Beyond the table the rates continue as
    /// `a_i = a_n (i/n)^alpha_fit`, `b_i = a_i b_n / a_n`, where `alpha_fit`
    /// is the log-slope of `a` over the last half of the table.
    pub fn custom_table(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(invalid(
                "table",
                "a and b must be nonempty and of equal length",
            ));
        }
        if let Some(x) = a
            .iter()
            .chain(b.iter())
            .find(|x| !(**x > 0.0 && x.is_finite()))
        {
            return Err(invalid(
                "table",
                format!("entry {x} is not a positive finite real"),
            ));
        }
        let n = a.len();
        let alpha = if n >= 2 {
            let m = n.div_ceil(2).min(n - 1);
            ((a[n - 1] / a[m - 1]).ln() / (n as f64 / m as f64).ln()).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let z_s = b[n - 1] / a[n - 1];
        Ok(Self {
            kind: ModelKind::CustomTable { a, b },
            alpha,
            z_s,
        })
    }

    /// Rebuilds a model from a deserialized kind, re-running validation.
    pub fn from_kind(kind: ModelKind) -> Result<Self> {
        match kind {
            ModelKind::Penrose {
                alpha,
                beta,
                q,
                z_s,
            } => Self::penrose(alpha, beta, q, z_s),
            ModelKind::Constant { a, b } => Self::constant(a, b),
            ModelKind::CustomTable { a, b } => Self::custom_table(a, b),
        }
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn z_s(&self) -> f64 {
        self.z_s
    }

    /// `(a_i, b_i)`; `i = 0` is rejected.
    pub fn rate(&self, i: usize) -> Result<(f64, f64)> {
        if i == 0 {
            return Err(Error::IndexOutOfRange(i));
        }
        Ok((self.a(i), self.b(i)))
    }

    /// Aggregation rate `a_i`, `i >= 1`.
    #[inline]
    pub fn a(&self, i: usize) -> f64 {
        debug_assert!(i >= 1);
        match &self.kind {
            ModelKind::Penrose { alpha, .. } => (i as f64).powf(*alpha),
            ModelKind::Constant { a, .. } => *a,
            ModelKind::CustomTable { a, .. } => {
                let n = a.len();
                if i <= n {
                    a[i - 1]
                } else {
                    a[n - 1] * (i as f64 / n as f64).powf(self.alpha)
                }
            }
        }
    }

    /// Fragmentation rate `b_i`, `i >= 1`.
    #[inline]
    pub fn b(&self, i: usize) -> f64 {
        debug_assert!(i >= 1);
        match &self.kind {
            ModelKind::Penrose { beta, q, z_s, .. } => {
                self.a(i) * (z_s + q / (i as f64).powf(1.0 - beta))
            }
            ModelKind::Constant { b, .. } => *b,
            ModelKind::CustomTable { b, .. } => {
                let n = b.len();
                if i <= n {
                    b[i - 1]
                } else {
                    self.a(i) * self.z_s
                }
            }
        }
    }

    /// `sup_{i >= from} a_i z / b_{i+1}`, the one-step ratio of the
    /// detailed-balance recursion over the whole tail.
    pub fn tail_ratio_sup(&self, z: f64, from: usize) -> f64 {
        let from = from.max(1);
        let step = |i: usize| self.a(i) * z / self.b(i + 1);
        match &self.kind {
            // (i/(i+1))^alpha increases and z_s + q (i+1)^(beta-1) decreases
            // in i, so the ratio increases towards its limit.
            ModelKind::Penrose { .. } => step(from).max(z / self.z_s),
            ModelKind::Constant { .. } => z / self.z_s,
            ModelKind::CustomTable { a, .. } => {
                let n = a.len();
                let table_max = (from..=n).map(step).fold(0.0, f64::max);
                table_max.max(step(from.max(n))).max(z / self.z_s)
            }
        }
    }
}

/// Finite-N surrogates of the standing hypotheses and of the extra
/// hypotheses used for imaginary-axis quasimodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub n: usize,
    pub tolerance: f64,
    /// Witness `C1 = min_{i <= N} a_i`.
    pub c1: f64,
    /// Witness `C2 = max_{i <= N} max(a_i, b_i) / i`.
    pub c2: f64,
    pub max_a_over_i: f64,
    pub max_b_over_i: f64,
    /// `a_N / a_{N-1}`.
    pub tail_ratio: f64,
    /// `a_N / b_N`, compared with `1 / z_s`.
    pub tail_a_over_b: f64,
    pub inverse_z_s: f64,
    /// `max |a_i - a_{i-1}|` over the last `N/2` indices.
    pub tail_a_diff: f64,
    /// `max |b_i - b_{i-1}|` over the last `N/2` indices.
    pub tail_b_diff: f64,
    /// `a_N / a_{N/2}`.
    pub growth_ratio: f64,
    pub lower_bound_pass: bool,
    pub ratio_limit_pass: bool,
    pub z_s_limit_pass: bool,
    pub linear_growth_pass: bool,
    pub a_diff_pass: bool,
    pub b_diff_pass: bool,
    pub unbounded_pass: bool,
}

impl AssumptionReport {
    pub fn standing_pass(&self) -> bool {
        self.lower_bound_pass
            && self.ratio_limit_pass
            && self.z_s_limit_pass
            && self.linear_growth_pass
    }

    pub fn quasimode_hypotheses_pass(&self) -> bool {
        self.a_diff_pass && self.b_diff_pass && self.unbounded_pass
    }
}

pub fn check_assumptions(model: &CoefficientModel, n: usize, tol: f64) -> Result<AssumptionReport> {
    if n < 16 {
        return Err(Error::Size(format!(
            "check_assumptions needs N >= 16, got {n}"
        )));
    }
    let half = n / 2;
    let mut c1 = f64::INFINITY;
    let (mut max_a_i, mut max_b_i) = (0.0f64, 0.0f64);
    let (mut head_growth, mut tail_growth) = (0.0f64, 0.0f64);
    let (mut a_diff, mut b_diff) = (0.0f64, 0.0f64);
    for i in 1..=n {
        let (a, b) = (model.a(i), model.b(i));
        c1 = c1.min(a);
        max_a_i = max_a_i.max(a / i as f64);
        max_b_i = max_b_i.max(b / i as f64);
        let g = a.max(b) / i as f64;
        if i <= half {
            head_growth = head_growth.max(g);
        } else {
            tail_growth = tail_growth.max(g);
            a_diff = a_diff.max((a - model.a(i - 1)).abs());
            b_diff = b_diff.max((b - model.b(i - 1)).abs());
        }
    }
    let tail_ratio = model.a(n) / model.a(n - 1);
    let tail_a_over_b = model.a(n) / model.b(n);
    let inverse_z_s = 1.0 / model.z_s();
    let growth_ratio = model.a(n) / model.a(half);
    Ok(AssumptionReport {
        n,
        tolerance: tol,
        c1,
        c2: max_a_i.max(max_b_i),
        max_a_over_i: max_a_i,
        max_b_over_i: max_b_i,
        tail_ratio,
        tail_a_over_b,
        inverse_z_s,
        tail_a_diff: a_diff,
        tail_b_diff: b_diff,
        growth_ratio,
        lower_bound_pass: c1 > 0.0,
        ratio_limit_pass: (tail_ratio - 1.0).abs() <= tol,
        z_s_limit_pass: (tail_a_over_b - inverse_z_s).abs() <= tol,
        linear_growth_pass: tail_growth <= (1.0 + tol) * head_growth,
        a_diff_pass: a_diff <= tol,
        b_diff_pass: b_diff <= tol,
        unbounded_pass: growth_ratio - 1.0 > tol,
    })
}
