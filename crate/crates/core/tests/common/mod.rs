#![allow(dead_code)]

use std::sync::Arc;

use bdlab::{compute_q, CoefficientModel, EquilibriumState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Dense = Vec<Vec<f64>>;

pub fn penrose() -> Arc<CoefficientModel> {
    Arc::new(CoefficientModel::penrose(0.5, 0.0, 1.0, 1.0).unwrap())
}

pub fn penrose_eq(n: usize) -> Arc<EquilibriumState> {
    Arc::new(compute_q(&penrose(), 0.5, n).unwrap())
}

pub fn constant_eq(n: usize) -> Arc<EquilibriumState> {
    let m = Arc::new(CoefficientModel::constant(1.0, 1.0).unwrap());
    Arc::new(compute_q(&m, 0.5, n).unwrap())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Full operator entry by entry: interior rows from the v-form display,
/// row N with its outflow flux removed, row 1 from `Q_1 (Lh)_1` rewritten
/// in v-form.
pub fn dense_full_display(eq: &EquilibriumState, n: usize) -> Dense {
    let m = eq.model();
    let q1 = eq.z();
    let q = |i: usize| eq.q(i);
    let mut a = vec![vec![0.0; n]; n];
    for i in 2..=n {
        let fi = i as f64;
        let r = &mut a[i - 1];
        if i < n {
            r[0] += fi * (m.a(i - 1) * q(i - 1) - m.a(i) * q(i));
            r[i - 1] += -m.a(i) * q1 - m.b(i);
            r[i] += m.b(i + 1) * fi / (fi + 1.0);
        } else {
            r[0] += fi * m.a(i - 1) * q(i - 1);
            r[i - 1] += -m.b(i);
        }
        r[i - 2] += m.a(i - 1) * q1 * fi / (fi - 1.0);
    }
    // Q_1 (Lh)_1 = Q_1^2 a_1 (h_2 - 2h_1) + Σ_{i<N} Q_i Q_1 a_i (h_{i+1} - h_i - h_1)
    let mut coef_h = vec![0.0; n];
    coef_h[1] += q1 * q1 * m.a(1);
    coef_h[0] -= 2.0 * q1 * q1 * m.a(1);
    for i in 1..n {
        let w = q(i) * q1 * m.a(i);
        coef_h[i] += w;
        coef_h[i - 1] -= w;
        coef_h[0] -= w;
    }
    for j in 1..=n {
        a[0][j - 1] = coef_h[j - 1] / (j as f64 * q(j));
    }
    a
}

/// Full operator from the symmetric weak form
/// `Σ Q_i (Lh)_i φ_i = Σ_{j<N} Q_j Q_1 a_j (h_{j+1} - h_j - h_1)(φ_1 + φ_j - φ_{j+1})`,
/// transformed by `v = diag(i Q_i) h`.
pub fn dense_full_weak(eq: &EquilibriumState, n: usize) -> Dense {
    let m = eq.model();
    let q1 = eq.z();
    // lh[i][k] = Q_i L_{ik}
    let mut lh = vec![vec![0.0; n]; n];
    for j in 1..n {
        let w = eq.q(j) * q1 * m.a(j);
        let h_terms = [(j + 1, 1.0), (j, -1.0), (1, -1.0)];
        let phi_terms = [(1, 1.0), (j, 1.0), (j + 1, -1.0)];
        for &(pi, ps) in &phi_terms {
            for &(hk, hs) in &h_terms {
                lh[pi - 1][hk - 1] += w * ps * hs;
            }
        }
    }
    let mut out = vec![vec![0.0; n]; n];
    for i in 1..=n {
        for k in 1..=n {
            out[i - 1][k - 1] = i as f64 * lh[i - 1][k - 1] / (k as f64 * eq.q(k));
        }
    }
    out
}

pub fn dense_tilde_display(eq: &EquilibriumState, n: usize) -> Dense {
    let m = eq.model();
    let q1 = eq.z();
    let mut a = vec![vec![0.0; n]; n];
    a[0][0] = -m.a(1) * q1;
    a[0][1] = m.b(2) * 0.5;
    for i in 2..=n {
        let fi = i as f64;
        let r = &mut a[i - 1];
        r[i - 2] += m.a(i - 1) * q1;
        r[i - 1] += -m.b(i) * (fi - 1.0) / fi;
        if i < n {
            r[i - 1] += -m.a(i) * q1;
            r[i] += m.b(i + 1) * fi / (fi + 1.0);
        }
    }
    a
}

pub fn matvec(a: &Dense, x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum())
        .collect()
}

fn matmul(a: &Dense, b: &Dense) -> Dense {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i][j] += aik * b[k][j];
            }
        }
    }
    c
}

/// `exp(t A)` by Taylor scaling and squaring.
pub fn expm(a: &Dense, t: f64) -> Dense {
    let n = a.len();
    let norm = a
        .iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
        * t.abs();
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scale = t / 2f64.powi(s);
    let m: Dense = a
        .iter()
        .map(|r| r.iter().map(|x| x * scale).collect())
        .collect();
    let mut result: Dense = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut term = result.clone();
    for k in 1..=24 {
        term = matmul(&term, &m);
        for r in term.iter_mut() {
            for x in r.iter_mut() {
                *x /= k as f64;
            }
        }
        for i in 0..n {
            for j in 0..n {
                result[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..s {
        result = matmul(&result, &result);
    }
    result
}

pub fn l1(x: &[f64]) -> f64 {
    x.iter().map(|a| a.abs()).sum()
}

pub fn l1_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Random bounded zero-mass perturbation in v-form.
pub fn random_zero_mass_v(eq: &EquilibriumState, r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    use bdlab::operators::{project_zero_mass, StateVector};
    let h: Vec<f64> = random_vec(r, n);
    let v = StateVector::h_form(h).to_v(eq).unwrap();
    project_zero_mass(eq, &v).unwrap().into_values()
}
