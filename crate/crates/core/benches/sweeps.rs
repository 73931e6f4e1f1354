use std::hint::black_box;
use std::sync::Arc;
use std::time::Duration;

use bdlab::cutoff::{run_cutoff_experiment, run_pulse_sweep, CutoffConfig, PulseConfig};
use bdlab::exec::Execution;
use bdlab::operators::{OperatorMatrix, StateVector};
use bdlab::spectral::{spectrum_scan, ScanSpec};
use bdlab::{compute_q, CoefficientModel, EquilibriumState};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn equilibrium(n: usize) -> Arc<EquilibriumState> {
    let m = Arc::new(CoefficientModel::penrose(0.5, 0.0, 1.0, 1.0).unwrap());
    Arc::new(compute_q(&m, 0.5, n).unwrap())
}

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn apply(c: &mut Criterion) {
    let mut g = c.benchmark_group("apply_full");
    for n in [1024usize, 16384] {
        let eq = equilibrium(n);
        let op = OperatorMatrix::assemble_full(&eq, n).unwrap();
        let x = StateVector::v_form((0..n).map(|k| ((k * 37) % 11) as f64 - 5.0).collect());
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| op.apply(black_box(&x)).unwrap())
        });
    }
    g.finish();
}

fn spectrum(c: &mut Criterion) {
    let spec = ScanSpec::new(
        vec![-5.0, -2.0, -1.0, 0.0, 1.0, 2.0, 5.0],
        (6..=11).map(|p| 1usize << p).collect(),
        1.0,
    );
    let n = spec.required_truncation();
    let eq = equilibrium(n);
    let mut g = c.benchmark_group("spectrum_scan");
    for (name, mode) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| spectrum_scan(&eq, black_box(&spec), n, mode).unwrap())
        });
    }
    g.finish();
}

fn pulse(c: &mut Criterion) {
    let eq = equilibrium(4 * 2 * 256);
    let mut template = PulseConfig::new(64, 128);
    template.n_out = 50;
    let mut g = c.benchmark_group("pulse_sweep");
    g.sample_size(10).measurement_time(Duration::from_secs(20));
    for (name, mode) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| run_pulse_sweep(&eq, &[64, 128, 256], 2, &template, mode).unwrap())
        });
    }
    g.finish();
}

fn cutoff(c: &mut Criterion) {
    let eq = equilibrium(4 * 512);
    let cfg = CutoffConfig::new(vec![128, 256, 512]);
    let mut g = c.benchmark_group("cutoff_sweep");
    g.sample_size(10).measurement_time(Duration::from_secs(20));
    for (name, mode) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| run_cutoff_experiment(&eq, &cfg, mode).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, apply, spectrum, pulse, cutoff);
criterion_main!(benches);
