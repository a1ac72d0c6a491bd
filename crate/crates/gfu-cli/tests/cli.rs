//! End-to-end checks of the command-line surface: every subcommand, the
//! documented exit codes, and the file formats they produce.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_gfu")
}

struct TempDir(PathBuf);

impl TempDir {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("gfu-cli-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        TempDir(dir)
    }

    fn file(&self, name: &str, content: &str) -> PathBuf {
        let path = self.0.join(name);
        std::fs::write(&path, content).unwrap();
        path
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        std::fs::remove_dir_all(&self.0).ok();
    }
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawning gfu")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analyze_reports_spectrum_and_validation_errors() {
    let dir = TempDir::new("analyze");
    let ok = dir.file("h.csv", "0.7,0.3\n0.3,0.7\n");
    let out = run(&["analyze", path_str(&ok)]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["dim"], 2);
    assert!((json["rho"].as_f64().unwrap() - 0.4).abs() < 1e-9);
    assert_eq!(json["regime"], "subcritical");

    let bad = dir.file("bad.csv", "0.5,0.6\n0.5,0.5\n");
    let out = run(&["analyze", path_str(&bad)]);
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("row sums"));

    let supercritical = dir.file("super.csv", "0.9,0.1\n0.1,0.9\n");
    let out = run(&["analyze", path_str(&supercritical)]);
    assert_eq!(exit_code(&out), 2);

    let critical = dir.file("crit.csv", "0.75,0.25\n0.25,0.75\n");
    let out = run(&["analyze", path_str(&critical)]);
    assert_eq!(exit_code(&out), 0);
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["regime"], "critical");
    assert_eq!(json["critical_pairs"].as_array().unwrap().len(), 1);
}

#[test]
fn gamma_emits_block_report() {
    let dir = TempDir::new("gamma");
    let cfg = dir.file(
        "g.cfg",
        "schema_version = 1\nrule.kind = rpw\nrule.p1 = 0.7\nrule.p2 = 0.7\nurn.y0 = 1,1\n",
    );
    let out = run(&["gamma", path_str(&cfg)]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((json["gamma_blocks"]["g11"][0][0].as_f64().unwrap() - 1.25).abs() < 1e-8);
    assert!((json["gamma_blocks"]["g22"][0][0].as_f64().unwrap() - 4.75).abs() < 1e-8);
    assert!(json["method"]["sylvester_residual"].as_f64().unwrap() < 1e-9);

    let crit = dir.file(
        "c.cfg",
        "schema_version = 1\nrule.kind = rpw\nrule.p1 = 0.75\nrule.p2 = 0.75\nurn.y0 = 1,1\n",
    );
    let out = run(&["gamma", path_str(&crit)]);
    assert_eq!(exit_code(&out), 0);
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["regime"], "critical");
    assert!((json["gamma_blocks"]["g11"][0][0].as_f64().unwrap() - 0.25).abs() < 1e-8);
    assert!((json["gamma_blocks"]["g22"][0][0].as_f64().unwrap() - 1.0).abs() < 1e-8);
}

#[test]
fn simulate_writes_trajectory_csv() {
    let dir = TempDir::new("simulate");
    let cfg = dir.file(
        "s.cfg",
        "schema_version = 1\nrule.kind = rpw\nrule.p1 = 0.5\nrule.p2 = 0.5\n\
         urn.y0 = 1,1\nsim.n = 25\nseed = 3\n",
    );
    let out_path = dir.path("traj.csv");
    let out = run(&["simulate", path_str(&cfg), "--out", path_str(&out_path)]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&out_path).unwrap();
    let lines: Vec<&str> = csv.trim().lines().collect();
    assert_eq!(lines[0], "m,drawn_type,d_1,d_2,y_1,y_2,n_1,n_2,a");
    assert_eq!(lines.len(), 27); // header + stage 0 + 25 stages
    // the final total is a0 + n for this rule
    assert!(lines.last().unwrap().ends_with(",27"));

    // same seed twice gives the identical file
    let out2_path = dir.path("traj2.csv");
    run(&["simulate", path_str(&cfg), "--out", path_str(&out2_path)]);
    assert_eq!(std::fs::read(&out_path).unwrap(), std::fs::read(&out2_path).unwrap());
}

#[test]
fn limit_reports_and_exports_paths() {
    let dir = TempDir::new("limit");
    let cfg = dir.file(
        "l.cfg",
        "schema_version = 1\nrule.kind = rpw\nrule.p1 = 0.7\nrule.p2 = 0.7\nurn.y0 = 1,1\n\
         limit.paths = 3000\nlimit.grid_points = 512\nlimit.rel_tol = 0.2\nseed = 5\n",
    );
    let json_path = dir.path("limit.json");
    let path_csv = dir.path("path.csv");
    let out = run(&[
        "limit",
        path_str(&cfg),
        "--out",
        path_str(&json_path),
        "--export-path",
        path_str(&path_csv),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&json_path).unwrap()).unwrap();
    assert_eq!(json["paths"], 3000);
    assert!(json["verdict"]["pass"].as_bool().unwrap());
    let csv = std::fs::read_to_string(&path_csv).unwrap();
    assert!(csv.starts_with("t,s_1,s_2,i_1,i_2"));
    assert_eq!(csv.trim().lines().count(), 513);
}

#[test]
fn mc_exit_codes_follow_the_contract() {
    let dir = TempDir::new("mc");
    // missing mc section: validation error
    let incomplete = dir.file(
        "i.cfg",
        "schema_version = 1\nrule.kind = rpw\nrule.p1 = 0.5\nrule.p2 = 0.5\nurn.y0 = 1,1\n",
    );
    let out = run(&["mc", path_str(&incomplete)]);
    assert_eq!(exit_code(&out), 2);

    // an impossible tolerance: comparison FAIL
    let strict = dir.file(
        "strict.cfg",
        "schema_version = 1\nrule.kind = rpw\nrule.p1 = 0.5\nrule.p2 = 0.5\nurn.y0 = 1,1\n\
         mc.horizons = 100\nmc.replicates = 200\nmc.cov_rel_tol = 1e-6\nseed = 1\n",
    );
    let out = run(&["mc", path_str(&strict)]);
    assert_eq!(exit_code(&out), 3);

    // a sane config passes and produces both report files
    let ok = dir.file(
        "ok.cfg",
        "schema_version = 1\nrule.kind = rpw\nrule.p1 = 0.5\nrule.p2 = 0.5\nurn.y0 = 1,1\n\
         mc.horizons = 200\nmc.replicates = 2000\nmc.cov_rel_tol = 0.2\nseed = 1\n",
    );
    let json_path = dir.path("report.json");
    let out = run(&["mc", path_str(&ok), "--out", path_str(&json_path)]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&json_path).unwrap()).unwrap();
    assert_eq!(json["replicates"], 2000);
    assert!(json["horizons"][0]["verdict"]["pass"].as_bool().unwrap());
    let csv = std::fs::read_to_string(dir.path("report.csv")).unwrap();
    assert!(csv.starts_with("horizon,component,empirical,theoretical,rel_err"));

    // regime mismatch: validation error
    let mismatch = dir.file(
        "m.cfg",
        "schema_version = 1\nrule.kind = rpw\nrule.p1 = 0.5\nrule.p2 = 0.5\nurn.y0 = 1,1\n\
         mc.horizons = 100\nmc.replicates = 100\nmc.expected_regime = critical\nseed = 1\n",
    );
    let out = run(&["mc", path_str(&mismatch)]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn rpw_closed_forms_to_stdout() {
    let out = run(&["rpw", "--p1", "0.5", "--p2", "0.5"]);
    assert_eq!(exit_code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("sigma11 = 0.25"));
    assert!(text.contains("sigma22 = 0.75"));

    let out = run(&["rpw", "--p1", "0.75", "--p2", "0.75"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("regime = critical"));
    assert!(text.contains("sigma_tilde_sq = 0.25"));

    // supercritical parameters are refused
    let out = run(&["rpw", "--p1", "0.9", "--p2", "0.9"]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = TempDir::new("cfg");
    let bad_kind = dir.file(
        "bad.cfg",
        "schema_version = 1\nrule.kind = mystery\nurn.y0 = 1,1\n",
    );
    let out = run(&["gamma", path_str(&bad_kind)]);
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown rule kind"));

    let out = run(&["gamma", path_str(&dir.path("missing.cfg"))]);
    assert_eq!(exit_code(&out), 2);
}
