//! Command-line front end: spectral reports, covariance reports, trajectory
//! simulation, limit-process ensembles, Monte Carlo experiments and the
//! play-the-winner closed forms.
//!
//! Exit codes: 0 success, 2 validation/configuration error, 3 comparison
//! FAIL, 4 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use gfu::config::{load_config, matrix_from_csv, FileConfig};
use gfu::covariance::{gamma_critical, gamma_subcritical, sigma_matrices, RpwLimit};
use gfu::harness::{limit_ensemble, mc_experiment, ExperimentConfig, LimitEnsembleConfig};
use gfu::limit::{simulate_equ1, TimeGrid};
use gfu::spectral::{spectral_analyze, validate_generating_matrix, Regime};
use gfu::stream::derive_stream;
use gfu::urn::init_urn_with_stream;

#[derive(Parser)]
#[command(
    name = "gfu",
    about = "Simulation and numerical verification of multi-color generalized Friedman urn models",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Override the master seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = rayon default).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Deterministic reports: fixed reduction order and no volatile
    /// metadata, so identical runs are byte-identical.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Write the primary report to this file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Spectral report for a generating matrix read from CSV.
    Analyze {
        matrix: PathBuf,
        /// Row-sum / nonnegativity tolerance.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Eigenvalue / regime-boundary tolerance.
        #[arg(long, default_value_t = 1e-9)]
        eig_tol: f64,
        /// Jordan order override when repeated eigenvalues attain rho.
        #[arg(long)]
        nu_override: Option<u32>,
    },
    /// Theoretical covariance report (JSON) for the configured rule.
    Gamma { config: PathBuf },
    /// Simulate one trajectory and export it as CSV.
    Simulate { config: PathBuf },
    /// Limit-process ensemble statistics (JSON).
    Limit {
        config: PathBuf,
        /// Additionally export one limit path as CSV (t, s_*, i_*).
        #[arg(long)]
        export_path: Option<PathBuf>,
    },
    /// Full Monte Carlo experiment: JSON report plus summary CSV.
    Mc {
        config: PathBuf,
        /// Where to write the summary CSV (default: next to --out).
        #[arg(long)]
        summary_csv: Option<PathBuf>,
    },
    /// Closed-form play-the-winner asymptotics.
    Rpw {
        #[arg(long)]
        p1: f64,
        #[arg(long)]
        p2: f64,
        /// Response variance of arm 1 (default: dichotomous p1 (1 - p1)).
        #[arg(long)]
        a1: Option<f64>,
        /// Response variance of arm 2 (default: dichotomous p2 (1 - p2)).
        #[arg(long)]
        a2: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<gfu::Error>().map(|e| e.exit_code()).unwrap_or(2);
            ExitCode::from(code as u8)
        }
    }
}

fn read_file(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn emit(out: &Option<PathBuf>, content: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))?
        }
        None => print!("{content}"),
    }
    Ok(())
}

fn mat_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

fn load(path: &Path, cli: &Cli) -> anyhow::Result<FileConfig> {
    let mut cfg = load_config(&read_file(path)?)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    if cli.deterministic {
        cfg.deterministic = true;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match &cli.cmd {
        Cmd::Analyze { matrix, tol, eig_tol, nu_override } => {
            let raw = matrix_from_csv(&read_file(matrix)?)?;
            let g = validate_generating_matrix(&raw, *tol)?;
            let s = spectral_analyze(&g, *eig_tol, *nu_override)?;
            let json = serde_json::json!({
                "dim": s.dim(),
                "row_sum_s": g.row_sum_s(),
                "h": mat_rows(s.h()),
                "v": s.v().iter().cloned().collect::<Vec<f64>>(),
                "eigenvalues": s.eigenvalues().iter()
                    .map(|l| serde_json::json!({"re": l.re, "im": l.im}))
                    .collect::<Vec<_>>(),
                "rho": s.rho(),
                "nu": s.nu(),
                "regime": s.regime().to_string(),
                "h_tilde": mat_rows(s.h_tilde()),
                "critical_pairs": s.critical_pairs().iter().map(|p| serde_json::json!({
                    "lambda": {"re": p.lambda.re, "im": p.lambda.im},
                    "right": p.right.iter()
                        .map(|c| serde_json::json!({"re": c.re, "im": c.im}))
                        .collect::<Vec<_>>(),
                })).collect::<Vec<_>>(),
            });
            emit(&cli.out, &format!("{}\n", serde_json::to_string_pretty(&json)?))?;
            Ok(0)
        }
        Cmd::Gamma { config } => {
            let cfg = load(config, &cli)?;
            let rule = cfg.rule.build()?;
            let g = validate_generating_matrix(rule.declared_mean(), 1e-9)?;
            let s = spectral_analyze(&g, 1e-9, None)?;
            let v_rows: Vec<_> =
                (0..rule.dim()).map(|q| rule.declared_row_cov(q).clone()).collect();
            let noise = sigma_matrices(s.v(), &v_rows, s.h())?;
            let report = match s.regime() {
                Regime::Critical => gamma_critical(&s, &noise)?,
                _ => gamma_subcritical(&s, &noise, cfg.quad_tol)?,
            };
            emit(&cli.out, &format!("{}\n", serde_json::to_string_pretty(&report.to_json())?))?;
            Ok(0)
        }
        Cmd::Simulate { config } => {
            let cfg = load(config, &cli)?;
            let rule = cfg.rule.build()?;
            let mut urn =
                init_urn_with_stream(&cfg.y0, rule.as_ref(), derive_stream(cfg.seed, 0))?;
            let traj = urn.run(rule.as_ref(), cfg.sim_n, cfg.sim_stride)?;
            emit(&cli.out, &traj.to_csv())?;
            Ok(0)
        }
        Cmd::Limit { config, export_path } => {
            let cfg = load(config, &cli)?;
            let report = limit_ensemble(&LimitEnsembleConfig {
                rule: cfg.rule.clone(),
                paths: cfg.limit_paths,
                grid_points: cfg.limit_grid_points,
                t_max: cfg.limit_t_max,
                master_seed: cfg.seed,
                rel_tol: cfg.limit_rel_tol,
                threads: cfg.threads,
                deterministic: cfg.deterministic,
            })?;
            if let Some(path) = export_path {
                let rule = cfg.rule.build()?;
                let g = validate_generating_matrix(rule.declared_mean(), 1e-9)?;
                let s = spectral_analyze(&g, 1e-9, None)?;
                let v_rows: Vec<_> =
                    (0..rule.dim()).map(|q| rule.declared_row_cov(q).clone()).collect();
                let noise = sigma_matrices(s.v(), &v_rows, s.h())?;
                let grid = TimeGrid::from_zero(cfg.limit_t_max, cfg.limit_grid_points)?;
                let mut rng = derive_stream(cfg.seed, u64::MAX);
                // the composition-fluctuation limit: driver covariance
                // H' S1 H + S2
                let path_sim = simulate_equ1(&s, &noise.sigma, grid, &mut rng)?;
                std::fs::write(path, path_sim.to_csv()).context("writing path export")?;
            }
            let pass = report.verdict.pass;
            emit(&cli.out, &String::from_utf8_lossy(&report.to_json_bytes()))?;
            Ok(if pass { 0 } else { 3 })
        }
        Cmd::Mc { config, summary_csv } => {
            let cfg = load(config, &cli)?;
            let horizons = cfg.mc_horizons.clone().ok_or_else(|| {
                gfu::Error::InvalidConfig("`mc.horizons` required for the mc command".into())
            })?;
            let replicates = cfg.mc_replicates.ok_or_else(|| {
                gfu::Error::InvalidConfig("`mc.replicates` required for the mc command".into())
            })?;
            let report = mc_experiment(&ExperimentConfig {
                rule: cfg.rule.clone(),
                y0: cfg.y0.clone(),
                horizons,
                replicates,
                master_seed: cfg.seed,
                expected_regime: cfg.mc_expected_regime,
                cov_rel_tol: cfg.mc_cov_rel_tol,
                ks_alpha: cfg.mc_ks_alpha,
                quad_tol: cfg.quad_tol,
                threads: cfg.threads,
                deterministic: cfg.deterministic,
            })?;
            let csv_path = summary_csv
                .clone()
                .or_else(|| cli.out.as_ref().map(|p| p.with_extension("csv")));
            if let Some(path) = csv_path {
                std::fs::write(&path, report.summary_csv())
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            let pass = report.overall_pass();
            emit(&cli.out, &String::from_utf8_lossy(&report.to_json_bytes()))?;
            Ok(if pass { 0 } else { 3 })
        }
        Cmd::Rpw { p1, p2, a1, a2 } => {
            let a1 = a1.unwrap_or(p1 * (1.0 - p1));
            let a2 = a2.unwrap_or(p2 * (1.0 - p2));
            let r = gfu::covariance::rpw_closed_forms(*p1, *p2, a1, a2)?;
            let mut text = format!(
                "v1 = {}\nv2 = {}\nrho = {}\nsigma1_sq = {}\nsigma2_sq = {}\n",
                r.v1, r.v2, r.rho, r.sigma1_sq, r.sigma2_sq
            );
            match r.limit {
                RpwLimit::Subcritical { sigma11, sigma12, sigma22 } => {
                    text.push_str(&format!(
                        "regime = subcritical\nsigma11 = {sigma11}\nsigma12 = {sigma12}\nsigma22 = {sigma22}\n"
                    ));
                }
                RpwLimit::Critical { sigma_tilde_sq } => {
                    text.push_str(&format!(
                        "regime = critical\nsigma_tilde_sq = {sigma_tilde_sq}\nscaled_covariance = [{}, {}; {}, {}]\n",
                        sigma_tilde_sq,
                        2.0 * sigma_tilde_sq,
                        2.0 * sigma_tilde_sq,
                        4.0 * sigma_tilde_sq
                    ));
                }
            }
            emit(&cli.out, &text)?;
            Ok(0)
        }
    }
}
