mod common;

use bdlab::exec::Execution;
use bdlab::spectral::{
    build_quasimode, kernel_certificate, residual_ratio, resolvent_certificate, spectrum_scan,
    CertificateSource, ScanSpec,
};
use common::*;
use num_complex::Complex64;

#[test]
fn residual_matches_dense_complex_oracle() {
    let n = 64;
    let eq = penrose_eq(n);
    let m = eq.model();
    let dense = dense_full_display(&eq, n);
    let lambda = 1.0;
    let rate = lambda / (m.z_s() - eq.z());
    let mut w = vec![Complex64::new(0.0, 0.0); n];
    let mut phase = 0.0;
    for i in 8..=16 {
        phase += 1.0 / m.a(i);
        w[i - 1] = Complex64::new(0.0, rate * phase).exp();
    }
    let lw: Vec<Complex64> = dense
        .iter()
        .map(|row| row.iter().zip(&w).map(|(a, x)| x * *a).sum())
        .collect();
    let num: f64 = lw
        .iter()
        .zip(&w)
        .map(|(a, x)| (a - Complex64::new(0.0, lambda) * x).norm())
        .sum();
    let den: f64 = w.iter().map(|x| x.norm()).sum();
    let oracle = num / den;
    let q = build_quasimode(&eq, lambda, 8, 16, 1.0, false, n).unwrap();
    let r = residual_ratio(&eq, &q).unwrap();
    assert!((r - oracle).abs() <= 1e-12, "{r} vs {oracle}");
}

#[test]
fn truncation_insensitive_for_interior_windows() {
    let eq = penrose_eq(2048);
    for (lambda, k) in [(0.0, 1.0), (1.0, 2.0), (5.0, 1.0)] {
        let a = build_quasimode(&eq, lambda, 64, 128, k, false, 512).unwrap();
        let b = build_quasimode(&eq, lambda, 64, 128, k, false, 1024).unwrap();
        let ra = residual_ratio(&eq, &a).unwrap();
        let rb = residual_ratio(&eq, &b).unwrap();
        assert!((ra - rb).abs() <= 1e-10, "{ra} vs {rb}");
    }
}

#[test]
fn residual_decreases_along_doubling_schedule() {
    let schedule: Vec<usize> = (6..=12).map(|p| 1usize << p).collect();
    for k in [1.0, 2.0] {
        let spec = ScanSpec::new(vec![0.0, 1.0, 5.0], schedule.clone(), k);
        let n = spec.required_truncation();
        let eq = penrose_eq(n);
        let rows = spectrum_scan(&eq, &spec, n, Execution::available()).unwrap();
        for chunk in rows.chunks(schedule.len()) {
            for w in chunk.windows(2) {
                assert!(
                    w[1].residual < w[0].residual,
                    "k={k} λ={}: {} !< {}",
                    w[0].lambda,
                    w[1].residual,
                    w[0].residual
                );
                assert!(w[1].bound >= w[0].bound);
            }
        }
    }
}

#[test]
fn xk_size_within_integral_bounds() {
    let eq = penrose_eq(4096);
    for k in [1.0f64, 2.0, 3.0] {
        let c1 = (2f64.powf(k) - 1.0) / k;
        let c2 = c1 + 2f64.powf(k - 1.0);
        for n1 in [16usize, 64, 256, 1024] {
            let q = build_quasimode(&eq, 1.0, n1, 2 * n1, k, false, 4 * n1).unwrap();
            let s = q.xk_norm();
            let exact: f64 = (n1..=2 * n1).map(|i| (i as f64).powf(k - 1.0)).sum();
            assert!((s - exact).abs() <= 1e-12 * exact);
            let nk = (n1 as f64).powf(k);
            assert!(c1 * nk < s && s <= c2 * nk, "k={k} N1={n1}: {s}");
        }
    }
}

#[test]
fn mass_corrected_mode_and_kernel() {
    let eq = penrose_eq(4096);
    let q = build_quasimode(&eq, 2.0, 32, 64, 1.0, true, 1024).unwrap();
    assert!(q.mass().norm() <= 1e-12 * q.xk_norm());
    assert_eq!(q.second_window, Some((256, 512)));
    let r = residual_ratio(&eq, &q).unwrap();
    let cert = resolvent_certificate(&q, r).unwrap();
    assert_eq!(cert.source, CertificateSource::Quasimode);
    assert!((cert.bound * r - 1.0).abs() < 1e-15);

    let ker = kernel_certificate(&eq, 1024, 1.0).unwrap();
    assert!(ker.residual <= 1e-12, "{}", ker.residual);
    assert_ne!(ker.source, cert.source);
}

#[test]
fn conjugation_symmetry_and_phase_invariance() {
    let eq = penrose_eq(1024);
    for lambda in [0.5, 2.0, 5.0] {
        let p = build_quasimode(&eq, lambda, 40, 80, 1.0, false, 512).unwrap();
        let m = build_quasimode(&eq, -lambda, 40, 80, 1.0, false, 512).unwrap();
        let rp = residual_ratio(&eq, &p).unwrap();
        let rm = residual_ratio(&eq, &m).unwrap();
        assert!((rp - rm).abs() <= 1e-12);
    }
}
