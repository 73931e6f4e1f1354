use std::fs;
use std::path::Path;
use std::process::Command;

use bdlab_cli::config::{ConfigError, RunConfig, Task};
use bdlab_cli::{run_from_args, CliError};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bdlab"))
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn equilibrium_constant_model_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "[model]\nkind = \"constant\"\n[equilibrium]\nmu = 2.0\n",
    );
    let out = dir.path().join("out");
    let o = bin()
        .args([
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "equilibrium",
        ])
        .output()
        .unwrap();
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["z"].as_f64().unwrap() - 0.5).abs() <= 1e-10);
    let written: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("equilibrium.json")).unwrap()).unwrap();
    assert_eq!(v, written);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert!(summary["config_hash"]
        .as_str()
        .unwrap()
        .starts_with("sha256:"));
    assert_eq!(summary["flags"]["detailed_balance"], true);
}

#[test]
fn minimal_file_fills_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "[model]\nkind = \"penrose\"\n[equilibrium]\nmu = 0.5\n",
    );
    let c = RunConfig::load(Path::new(&cfg))
        .unwrap()
        .resolve(Task::Pulse)
        .unwrap();
    assert_eq!(c.numerics.rtol, 1e-8);
    assert_eq!(c.experiment.pulse.eps, 0.1);
    assert_eq!(c.n_trunc(), 4 * 2 * 2048);
}

#[test]
fn config_errors_exit_with_two_and_name_fields() {
    let dir = tempfile::tempdir().unwrap();
    let both = write(
        dir.path(),
        "both.toml",
        "[equilibrium]\nmu = 1.0\nz = 0.5\n",
    );
    let o = bin()
        .args([
            "--config",
            &both,
            "--out",
            dir.path().join("o1").to_str().unwrap(),
            "spectrum",
        ])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mu"));

    let unknown = write(
        dir.path(),
        "unknown.toml",
        "[equilibrium]\nz = 0.5\n[numerics]\nscheme = \"explicit\"\nrtoll = 1e-9\n",
    );
    let o = bin()
        .args([
            "--config",
            &unknown,
            "--out",
            dir.path().join("o2").to_str().unwrap(),
            "spectrum",
        ])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rtoll"));

    let small = write(
        dir.path(),
        "small.toml",
        "[equilibrium]\nz = 0.5\n[numerics]\nn_trunc = 300\n",
    );
    let err = run_from_args([
        "bdlab",
        "--config",
        &small,
        "--out",
        dir.path().join("o3").to_str().unwrap(),
        "pulse",
        "--N1",
        "64",
        "--N2",
        "100",
    ])
    .unwrap_err();
    match err {
        CliError::Config(ConfigError::Truncation {
            n_trunc,
            top,
            required,
        }) => {
            assert_eq!((n_trunc, top, required), (300, 100, 400));
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn failed_run_leaves_no_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    // A two-pulse upper end that is not a multiple of 4 fails inside the run.
    let err = run_from_args([
        "bdlab",
        "--out",
        out.to_str().unwrap(),
        "evolve",
        "--z",
        "0.5",
        "--data",
        "two-pulse",
        "--support",
        "1",
        "30",
        "--T",
        "1",
    ]);
    assert!(matches!(err, Err(CliError::Core(_))));
    assert_eq!(fs::read_dir(&out).unwrap().count(), 0);
}

#[test]
fn spectrum_defaults_give_full_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let r = run_from_args([
        "bdlab",
        "--out",
        out.to_str().unwrap(),
        "spectrum",
        "--z",
        "0.5",
    ])
    .unwrap();
    assert!(r.passed(), "{:?}", r.flags);
    let text = fs::read_to_string(out.join("spectrum.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 9 * 7);
    assert_eq!(
        text.lines().next().unwrap(),
        "lambda,N1,N2,k,residual,bound"
    );
}

#[test]
fn evolve_scheme_flags_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(
        dir.path(),
        "model.toml",
        "[model]\nkind = \"penrose\"\nalpha = 0.5\nz_s = 1.0\n",
    );
    for scheme in ["explicit", "implicit"] {
        let csv = dir.path().join(format!("{scheme}.csv"));
        let r = run_from_args([
            "bdlab",
            "--out",
            dir.path().join("out").to_str().unwrap(),
            "evolve",
            "--model-config",
            &model,
            "--mu",
            "0.5",
            "--N",
            "256",
            "--T",
            "2",
            "--scheme",
            scheme,
            "--support",
            "16",
            "32",
            "--snapshots",
            "--output",
            csv.to_str().unwrap(),
        ])
        .unwrap();
        assert!(r.passed(), "{scheme}: {:?}", r.flags);
        let rows = fs::read_to_string(&csv).unwrap().lines().count();
        assert_eq!(rows, 1 + 101);
        let snaps = fs::read_to_string(dir.path().join(format!("{scheme}_snapshots.csv"))).unwrap();
        assert_eq!(snaps.lines().count(), 1 + 101 * 256);
    }
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut tables = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = out.to_str().unwrap();
        run_from_args([
            "bdlab",
            "--out",
            o,
            "spectrum",
            "--z",
            "0.5",
            "--lambda-grid",
            "-2,0,3",
            "--N1-schedule",
            "32,64,128",
        ])
        .unwrap();
        run_from_args([
            "bdlab",
            "--out",
            o,
            "evolve",
            "--z",
            "0.5",
            "--T",
            "3",
            "--support",
            "10",
            "40",
        ])
        .unwrap();
        run_from_args([
            "bdlab", "--out", o, "cutoff", "--z", "0.5", "--N-list", "32,64",
        ])
        .unwrap();
        let mut files: Vec<_> = fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        tables.push(
            files
                .iter()
                .map(|p| (p.file_name().unwrap().to_owned(), fs::read(p).unwrap()))
                .collect::<Vec<_>>(),
        );
    }
    assert!(tables[0].len() >= 4);
    assert_eq!(tables[0], tables[1]);
}
