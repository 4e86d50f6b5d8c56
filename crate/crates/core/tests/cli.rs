use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use noisy_cg::config::{load_config, parse_config};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_noisy-cg"))
}

fn presets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets")
}

fn all_presets() -> Vec<PathBuf> {
    let mut out = Vec::new();
    for dir in [presets(), presets().join("full")] {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.extension().is_some_and(|x| x == "cfg") {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

#[test]
fn every_preset_validates_and_echo_reparses() {
    let files = all_presets();
    assert!(files.len() >= 20);
    for f in files {
        let out = run(&["validate-config", f.to_str().unwrap()]);
        assert!(out.status.success(), "{}: {}", f.display(), String::from_utf8_lossy(&out.stderr));
        let echoed = parse_config(&String::from_utf8(out.stdout).unwrap()).unwrap();
        assert_eq!(echoed, load_config(&f, &[]).unwrap(), "{}", f.display());
    }
}

#[test]
fn table2_adversarial_echo() {
    let out = run(&["validate-config", presets().join("table2_adversarial.cfg").to_str().unwrap()]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("problem.n = 1000"));
    assert!(text.contains("problem.r = 2000"));
    assert!(text.contains("noise.kind = adversarial_b"));
    assert!(text.contains("sweep.grid = 0, "));
    assert!(text.contains(", 0.1\n"));
}

#[test]
fn presets_mirror_tables() {
    let m = load_config(&presets().join("table1_matrix_noise.cfg"), &[]).unwrap();
    assert_eq!(m.problem.n, 1000);
    assert_eq!(m.problem.r, 2000.0);
    assert_eq!(m.grid, vec![0.0025, 0.005]);
    let c = load_config(&presets().join("table3_combined.cfg"), &[]).unwrap();
    assert_eq!((c.noise.kind.delta_a(), c.noise.kind.delta_b()), (0.001, 0.01));
    assert_eq!(c.grid.first(), Some(&0.0));
    assert_eq!(c.grid.last(), Some(&50.0));
}

#[test]
fn zero_delta_override_is_exact_equivalent() {
    let cfg = load_config(
        &presets().join("table1_stochastic.cfg"),
        &[("noise.delta_b".into(), "0".into())],
    )
    .unwrap();
    assert_eq!(cfg.noise.kind.delta_b(), 0.0);
    assert_eq!(cfg.noise.kind.delta_a(), 0.0);
}

#[test]
fn missing_config_exits_1() {
    let out = run(&["sweep-delta", "--config", "missing.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config not found"));
}

#[test]
fn unknown_subcommand_exits_2() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn bad_override_names_key() {
    let p = presets().join("stochastic_b.cfg");
    let out = run(&["trajectory", "--config", p.to_str().unwrap(), "--set", "noise.delta_q=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("noise.delta_q"));
}

#[test]
fn family_mismatch_is_rejected() {
    let p = presets().join("stochastic_b.cfg");
    let out = run(&["sweep-r", "--config", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("experiment.family"));
}

#[test]
fn trajectory_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let p = presets().join("stochastic_b.cfg");
    let out = run(&[
        "trajectory",
        "--config",
        p.to_str().unwrap(),
        "--set",
        "problem.n=50",
        "--set",
        "run.seeds=3",
        "--output-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = String::from_utf8(out.stdout).unwrap();
    assert!(summary.contains("no_accum"));
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "run_id,seed,noise_kind,n,delta_a,delta_b,r,iter,f_true,f_scaled,residual_norm,arg_error"
    );
    assert_eq!(lines.count(), 5 * 50 + 1);
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("trajectory.csv"));
    assert!(manifest.contains("noise.kind = stochastic_b"));
}

#[test]
fn sweep_and_compare_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let sweep = presets().join("table3_combined.cfg");
    let out = run(&[
        "sweep-r", "--config", sweep.to_str().unwrap(), "--set", "problem.n=30", "--set", "run.seeds=1", "--output-dir", d,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let s = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(s.starts_with(
        "family,noise_kind,n,grid_param_name,grid_value,seed,plateau_error_f,final_error_x,status\n"
    ));
    let f = std::fs::read_to_string(dir.path().join("fits.csv")).unwrap();
    assert!(f.starts_with("family,model,coef0,coef1,coef2,r_squared,loglog_slope\n"));
    assert!(f.contains(",power_law,"));

    let cmp = presets().join("compare_nesterov.cfg");
    let out = run(&[
        "compare", "--config", cmp.to_str().unwrap(), "--set", "problem.n=30", "--set", "run.seeds=1", "--output-dir", d,
    ]);
    assert!(out.status.success());
    let c = std::fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    assert!(c.starts_with("solver,seed,iter,f_scaled\ncg,1,0,"));
    assert!(c.contains("\nnesterov,1,0,"));
}

#[test]
fn json_config_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"experiment": {"family": "sweep_delta"}, "problem": {"n": 20, "r": 5},
            "noise": {"kind": "adversarial_b"}, "sweep": {"param": "delta_b", "grid": [0, 0.01, 0.02, 0.03, 0.04]},
            "run": {"seeds": [1]}}"#,
    )
    .unwrap();
    let out = run(&["validate-config", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("sweep.grid = 0, 0.01, 0.02, 0.03, 0.04"));
}
