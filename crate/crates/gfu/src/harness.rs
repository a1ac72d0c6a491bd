//! Monte Carlo experiments that confront simulated urns with their
//! theoretical Gaussian limits.
//!
//! Replicates are embarrassingly parallel: replicate r always uses the
//! stream derived from (master_seed, r), work is split into fixed chunks of
//! 64 replicates, and chunk results are merged in index order, so every
//! number in a report is independent of the thread count. The
//! `deterministic` flag additionally strips volatile metadata (wall-clock
//! time) from reports so that repeated runs are byte-identical.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RuleSpec;
use crate::covariance::{gamma_critical, gamma_subcritical, mat_rows, sigma_matrices};
use crate::error::{Error, Result};
use crate::limit::{CompositeEngine, TimeGrid};
use crate::rules::{assumption_diagnostics, DiagnosticsReport};
use crate::spectral::{
    spectral_analyze, validate_generating_matrix, Regime, SpectralData, DEFAULT_EIG_TOL,
};
use crate::stats::{chi_square_cdf, ks_critical_value, ks_statistic, MomentAccumulator};
use crate::stream::derive_stream;
use crate::urn::init_urn_with_stream;

const CHUNK: u64 = 64;

/// How replicate streams are derived; recorded in every report.
pub const STREAM_DERIVATION: &str =
    "chacha12(seed = splitmix64 expansion of master_seed xor (index+1)*0x9e3779b97f4a7c15)";

fn run_in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    if threads == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool construction")
            .install(f)
    }
}

fn chunk_ranges(total: u64) -> Vec<std::ops::Range<u64>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < total {
        let end = (start + CHUNK).min(total);
        out.push(start..end);
        start = end;
    }
    out
}

// ---------------------------------------------------------------------------
// Covariance comparison
// ---------------------------------------------------------------------------

/// PASS/FAIL comparison of an empirical against a theoretical matrix.
#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub pass: bool,
    pub tol: f64,
    pub frobenius_rel_err: f64,
    /// Worst per-entry relative error over entries that are not null
    /// directions of the theoretical matrix.
    pub max_entry_rel_err: Option<f64>,
}

/// Frobenius-relative comparison: PASS when ||E - T||_F / ||T||_F <= tol.
/// Entries below 1e-9 of the largest theoretical entry (null directions) are
/// excluded from the per-entry relative errors; a zero theoretical matrix is
/// compared absolutely.
pub fn compare(empirical: &DMatrix<f64>, theoretical: &DMatrix<f64>, tol: f64) -> Result<Verdict> {
    if empirical.shape() != theoretical.shape() {
        return Err(Error::ShapeMismatch {
            left: format!("{:?}", empirical.shape()),
            right: format!("{:?}", theoretical.shape()),
        });
    }
    let t_norm = theoretical.norm();
    let fro = if t_norm > 0.0 {
        (empirical - theoretical).norm() / t_norm
    } else {
        (empirical - theoretical).norm()
    };
    let floor = 1e-9 * theoretical.abs().max();
    let mut max_entry: Option<f64> = None;
    for i in 0..theoretical.nrows() {
        for j in 0..theoretical.ncols() {
            let t = theoretical[(i, j)];
            if t.abs() > floor && floor > 0.0 {
                let rel = (empirical[(i, j)] - t).abs() / t.abs();
                max_entry = Some(max_entry.map_or(rel, |m: f64| m.max(rel)));
            }
        }
    }
    Ok(Verdict { pass: fro <= tol, tol, frobenius_rel_err: fro, max_entry_rel_err: max_entry })
}

// ---------------------------------------------------------------------------
// Monte Carlo experiment
// ---------------------------------------------------------------------------

/// Configuration of one Monte Carlo experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub rule: RuleSpec,
    pub y0: Vec<f64>,
    /// Strictly increasing horizons; fluctuations are collected at each.
    pub horizons: Vec<u64>,
    pub replicates: u64,
    pub master_seed: u64,
    pub expected_regime: Option<Regime>,
    /// Frobenius relative tolerance for the covariance verdicts.
    pub cov_rel_tol: f64,
    /// Significance level of the KS normality check.
    pub ks_alpha: f64,
    pub quad_tol: f64,
    pub threads: usize,
    pub deterministic: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::InvalidConfig("need at least 2 replicates".into()));
        }
        if self.horizons.is_empty() {
            return Err(Error::InvalidConfig("need at least one horizon".into()));
        }
        if self.horizons.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("horizons must be strictly increasing".into()));
        }
        if !(self.cov_rel_tol > 0.0) || !(self.ks_alpha > 0.0) || !(self.quad_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KsReport {
    pub statistic: f64,
    pub threshold: f64,
    pub df: usize,
    pub rejected: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct HorizonReport {
    pub n: u64,
    pub normalization: String,
    pub empirical_mean: Vec<f64>,
    pub empirical_cov: Vec<Vec<f64>>,
    /// Largest |mean| z-score over the retained (non-null) eigendirections
    /// of the theoretical covariance.
    pub mean_abs_z_max_retained: f64,
    pub verdict: Verdict,
    /// Mahalanobis-vs-chi-square normality check on the retained subspace;
    /// absent when the theoretical covariance has rank zero.
    pub ks: Option<KsReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub stream_derivation: &'static str,
    pub chunk_size: u64,
    pub deterministic: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub rule: String,
    pub y0: Vec<f64>,
    pub replicates: u64,
    pub master_seed: u64,
    pub regime: Regime,
    pub v: Vec<f64>,
    pub rho: f64,
    pub nu: u32,
    pub theoretical_gamma: Vec<Vec<f64>>,
    pub gamma_rank: usize,
    pub horizons: Vec<HorizonReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assumption_diagnostics: Option<DiagnosticsReport>,
    pub provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_ms: Option<u128>,
}

impl ExperimentReport {
    pub fn overall_pass(&self) -> bool {
        self.horizons
            .iter()
            .all(|h| h.verdict.pass && h.ks.as_ref().is_none_or(|k| !k.rejected))
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes =
            serde_json::to_vec_pretty(self).expect("report serialization cannot fail");
        bytes.push(b'\n');
        bytes
    }

    /// Plot-ready CSV: horizon, component, empirical, theoretical, rel_err.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("horizon,component,empirical,theoretical,rel_err\n");
        let d2 = self.theoretical_gamma.len();
        let d = d2 / 2;
        let label = |i: usize| {
            if i < d {
                format!("y{}", i + 1)
            } else {
                format!("n{}", i + 1 - d)
            }
        };
        for h in &self.horizons {
            for i in 0..d2 {
                for j in 0..d2 {
                    let e = h.empirical_cov[i][j];
                    let t = self.theoretical_gamma[i][j];
                    let rel = if t.abs() > 1e-12 {
                        format!("{}", (e - t).abs() / t.abs())
                    } else {
                        String::new()
                    };
                    out.push_str(&format!(
                        "{},{}:{},{},{},{}\n",
                        h.n,
                        label(i),
                        label(j),
                        e,
                        t,
                        rel
                    ));
                }
            }
        }
        out
    }
}

struct RetainedBasis {
    /// Columns: retained eigenvectors of the theoretical covariance.
    vectors: Vec<DVector<f64>>,
    eigenvalues: Vec<f64>,
}

fn retained_basis(theta: &DMatrix<f64>) -> Result<RetainedBasis> {
    let eig = theta.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    if eig.eigenvalues.iter().any(|&l| l < -1e-9 * max.max(1.0)) {
        return Err(Error::SingularTheoreticalCovariance(format!(
            "negative eigenvalue {:.3e}",
            eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
        )));
    }
    let mut vectors = Vec::new();
    let mut eigenvalues = Vec::new();
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l >= 1e-10 * max && l > 0.0 {
            vectors.push(eig.eigenvectors.column(i).clone_owned());
            eigenvalues.push(l);
        }
    }
    Ok(RetainedBasis { vectors, eigenvalues })
}

/// Scale of the fluctuation normalization at horizon n.
fn normalization_scale(regime: Regime, nu: u32, n: u64) -> f64 {
    let nf = n as f64;
    match regime {
        Regime::Critical => {
            let log_n = nf.max(std::f64::consts::E).ln();
            nf.sqrt() * log_n.powf(nu as f64 - 0.5)
        }
        _ => nf.sqrt(),
    }
}

fn normalization_label(regime: Regime, nu: u32) -> String {
    match regime {
        Regime::Critical => {
            if nu == 1 {
                "1/sqrt(n log n)".into()
            } else {
                format!("n^(-1/2) (log n)^(1/2 - {nu})")
            }
        }
        _ => "1/sqrt(n)".into(),
    }
}

struct McChunk {
    accs: Vec<MomentAccumulator>,
    distances: Vec<Vec<f64>>,
}

/// Run the full experiment: simulate replicates in parallel, collect the
/// normalized fluctuation vectors at every horizon, and compare their
/// empirical covariance (and Mahalanobis normality) against the theoretical
/// limit.
pub fn mc_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = std::time::Instant::now();
    let rule = cfg.rule.build()?;
    let d = rule.dim();
    if cfg.y0.len() != d {
        return Err(Error::InvalidConfig(format!(
            "y0 has length {}, rule dimension is {d}",
            cfg.y0.len()
        )));
    }
    let g = validate_generating_matrix(rule.declared_mean(), 1e-9)?;
    let spectral = spectral_analyze(&g, DEFAULT_EIG_TOL, None)?;
    if let Some(expected) = cfg.expected_regime {
        if expected != spectral.regime() {
            return Err(Error::RegimeMismatch {
                expected: expected.to_string(),
                found: spectral.regime().to_string(),
            });
        }
    }
    let v_rows: Vec<DMatrix<f64>> = (0..d).map(|q| rule.declared_row_cov(q).clone()).collect();
    let noise = sigma_matrices(spectral.v(), &v_rows, spectral.h())?;
    let gamma = match spectral.regime() {
        Regime::Critical => gamma_critical(&spectral, &noise)?,
        _ => gamma_subcritical(&spectral, &noise, cfg.quad_tol)?,
    };
    let theta = gamma.gamma.stacked();
    let basis = retained_basis(&theta)?;
    let rank = basis.vectors.len();
    let v: Vec<f64> = spectral.v().iter().cloned().collect();
    let regime = spectral.regime();
    let nu = spectral.nu();
    let horizons = cfg.horizons.clone();
    let max_horizon = *horizons.last().unwrap();

    let chunks = chunk_ranges(cfg.replicates);
    let rule_ref: &dyn crate::rules::AdditionRule = rule.as_ref();
    let results: Vec<Result<McChunk>> = run_in_pool(cfg.threads, || {
        chunks
            .into_par_iter()
            .map(|range| -> Result<McChunk> {
                let mut accs: Vec<MomentAccumulator> =
                    horizons.iter().map(|_| MomentAccumulator::new(2 * d)).collect();
                let mut distances: Vec<Vec<f64>> = horizons.iter().map(|_| Vec::new()).collect();
                let mut z = vec![0.0; 2 * d];
                for r in range {
                    let stream = derive_stream(cfg.master_seed, r);
                    let mut urn = init_urn_with_stream(&cfg.y0, rule_ref, stream)?;
                    let mut h_idx = 0;
                    while urn.state.m < max_horizon {
                        urn.step(rule_ref)?;
                        if urn.state.m == horizons[h_idx] {
                            let n = horizons[h_idx];
                            let scale = normalization_scale(regime, nu, n);
                            for k in 0..d {
                                z[k] = (urn.state.y[k] - n as f64 * v[k]) / scale;
                                z[d + k] =
                                    (urn.state.draws[k] as f64 - n as f64 * v[k]) / scale;
                            }
                            accs[h_idx].push(&z);
                            let mut dist = 0.0;
                            for (u, &l) in basis.vectors.iter().zip(&basis.eigenvalues) {
                                let proj: f64 =
                                    z.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
                                dist += proj * proj / l;
                            }
                            distances[h_idx].push(dist);
                            h_idx += 1;
                        }
                    }
                    debug_assert_eq!(h_idx, horizons.len());
                }
                Ok(McChunk { accs, distances })
            })
            .collect()
    });

    // Merge in chunk-index order: thread-count independent.
    let mut accs: Vec<MomentAccumulator> =
        horizons.iter().map(|_| MomentAccumulator::new(2 * d)).collect();
    let mut distances: Vec<Vec<f64>> = horizons.iter().map(|_| Vec::new()).collect();
    for chunk in results {
        let chunk = chunk?;
        for (a, b) in accs.iter_mut().zip(&chunk.accs) {
            a.merge(b);
        }
        for (a, b) in distances.iter_mut().zip(chunk.distances) {
            a.extend(b);
        }
    }

    let mut horizon_reports = Vec::with_capacity(horizons.len());
    for (idx, &n) in horizons.iter().enumerate() {
        let mean = accs[idx].mean();
        let cov = accs[idx].covariance()?;
        let verdict = compare(&cov, &theta, cfg.cov_rel_tol)?;
        let r = cfg.replicates as f64;
        let mut mean_z = 0.0_f64;
        for (u, &l) in basis.vectors.iter().zip(&basis.eigenvalues) {
            let proj: f64 = mean.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
            mean_z = mean_z.max(proj.abs() / (l / r).sqrt());
        }
        let ks = if rank > 0 {
            let mut dist = std::mem::take(&mut distances[idx]);
            dist.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let statistic = ks_statistic(&dist, |x| chi_square_cdf(rank as f64, x));
            let threshold = ks_critical_value(cfg.ks_alpha, dist.len());
            Some(KsReport { statistic, threshold, df: rank, rejected: statistic > threshold })
        } else {
            None
        };
        horizon_reports.push(HorizonReport {
            n,
            normalization: normalization_label(regime, nu),
            empirical_mean: mean.iter().cloned().collect(),
            empirical_cov: mat_rows(&cov),
            mean_abs_z_max_retained: mean_z,
            verdict,
            ks,
        });
    }

    let diag = diagnostics_for(&cfg.rule, &spectral, max_horizon.min(100_000));

    Ok(ExperimentReport {
        schema_version: 1,
        rule: cfg.rule.describe(),
        y0: cfg.y0.clone(),
        replicates: cfg.replicates,
        master_seed: cfg.master_seed,
        regime,
        v,
        rho: spectral.rho(),
        nu,
        theoretical_gamma: mat_rows(&theta),
        gamma_rank: rank,
        horizons: horizon_reports,
        assumption_diagnostics: diag,
        provenance: Provenance {
            stream_derivation: STREAM_DERIVATION,
            chunk_size: CHUNK,
            deterministic: cfg.deterministic,
        },
        wall_clock_ms: if cfg.deterministic { None } else { Some(start.elapsed().as_millis()) },
    })
}

/// Inline mean-convergence diagnostics for non-homogeneous rule specs; the
/// result never gates PASS/FAIL.
fn diagnostics_for(
    spec: &RuleSpec,
    spectral: &SpectralData,
    horizon: u64,
) -> Option<DiagnosticsReport> {
    if let RuleSpec::Nonhomogeneous { exponent, direction, .. } = spec {
        let d = spectral.dim();
        let flat: Vec<f64> = direction.iter().flatten().cloned().collect();
        let dir = DMatrix::from_row_slice(d, d, &flat);
        let h = spectral.h().clone();
        let exponent = *exponent;
        let mean_at = move |m: u64| &h + &dir * (m as f64).powf(exponent);
        Some(assumption_diagnostics(&mean_at, spectral.h(), horizon))
    } else {
        None
    }
}

// ---------------------------------------------------------------------------
// Law-of-the-iterated-logarithm envelope statistics
// ---------------------------------------------------------------------------

/// Which fluctuation component the envelope statistic tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ProcessSelector {
    /// Urn composition Y.
    Composition,
    /// Draw counts N.
    Allocation,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LilFunctional {
    pub process: ProcessSelector,
    /// Zero-based component index.
    pub component: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeHorizon {
    pub n_max: u64,
    pub median_sup: f64,
    pub p95_sup: f64,
    pub mean_sup: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeReport {
    pub functional: String,
    pub envelope: String,
    pub replicates: u64,
    pub per_horizon: Vec<EnvelopeHorizon>,
    /// Largest ratio of a later median to the first horizon's median.
    pub max_median_growth: f64,
}

fn log_e(x: f64) -> f64 {
    x.max(std::f64::consts::E).ln()
}

/// sqrt(2 n loglog n), the almost-sure fluctuation envelope below the
/// critical line.
pub fn subcritical_envelope(n: u64) -> f64 {
    let nf = n as f64;
    (2.0 * nf * log_e(log_e(nf))).sqrt()
}

/// sqrt(2 n logloglog n) * (log n)^{nu - 1/2}, the critical-line envelope.
pub fn critical_envelope(n: u64, nu: u32) -> f64 {
    let nf = n as f64;
    (2.0 * nf * log_e(log_e(log_e(nf)))).sqrt() * log_e(nf).powf(nu as f64 - 0.5)
}

/// Per replicate, track sup_{n <= N} |fluctuation| / envelope(n) and report
/// its cross-replicate distribution at each horizon. The claim under test is
/// boundedness: medians must not keep growing as the horizon increases.
pub fn lil_envelope(cfg: &ExperimentConfig, functional: LilFunctional) -> Result<EnvelopeReport> {
    cfg.validate()?;
    const MIN_HORIZON: u64 = 100_000;
    let max_horizon = *cfg.horizons.last().unwrap();
    if max_horizon < MIN_HORIZON {
        return Err(Error::HorizonTooShort { got: max_horizon, min: MIN_HORIZON });
    }
    let rule = cfg.rule.build()?;
    let d = rule.dim();
    if functional.component >= d {
        return Err(Error::InvalidConfig(format!(
            "component {} out of range for dimension {d}",
            functional.component
        )));
    }
    let g = validate_generating_matrix(rule.declared_mean(), 1e-9)?;
    let spectral = spectral_analyze(&g, DEFAULT_EIG_TOL, None)?;
    let critical = spectral.regime() == Regime::Critical;
    let nu = spectral.nu();
    let vc = spectral.v()[functional.component];
    let comp = functional.component;
    let horizons = cfg.horizons.clone();
    let rule_ref: &dyn crate::rules::AdditionRule = rule.as_ref();

    let chunks = chunk_ranges(cfg.replicates);
    let results: Vec<Result<Vec<Vec<f64>>>> = run_in_pool(cfg.threads, || {
        chunks
            .into_par_iter()
            .map(|range| -> Result<Vec<Vec<f64>>> {
                let mut sups = Vec::new();
                for r in range {
                    let stream = derive_stream(cfg.master_seed, r);
                    let mut urn = init_urn_with_stream(&cfg.y0, rule_ref, stream)?;
                    let mut sup = 0.0_f64;
                    let mut per_horizon = Vec::with_capacity(horizons.len());
                    let mut h_idx = 0;
                    while urn.state.m < horizons[horizons.len() - 1] {
                        urn.step(rule_ref)?;
                        let n = urn.state.m;
                        let fluct = match functional.process {
                            ProcessSelector::Composition => urn.state.y[comp] - n as f64 * vc,
                            ProcessSelector::Allocation => {
                                urn.state.draws[comp] as f64 - n as f64 * vc
                            }
                        };
                        let env = if critical {
                            critical_envelope(n, nu)
                        } else {
                            subcritical_envelope(n)
                        };
                        sup = sup.max(fluct.abs() / env);
                        if n == horizons[h_idx] {
                            per_horizon.push(sup);
                            h_idx += 1;
                        }
                    }
                    sups.push(per_horizon);
                }
                Ok(sups)
            })
            .collect()
    });

    let mut all: Vec<Vec<f64>> = Vec::with_capacity(cfg.replicates as usize);
    for chunk in results {
        all.extend(chunk?);
    }
    let mut per_horizon = Vec::with_capacity(horizons.len());
    for (idx, &n_max) in horizons.iter().enumerate() {
        let mut sups: Vec<f64> = all.iter().map(|s| s[idx]).collect();
        sups.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = sups[sups.len() / 2];
        let p95 = sups[((sups.len() as f64 * 0.95) as usize).min(sups.len() - 1)];
        let mean = sups.iter().sum::<f64>() / sups.len() as f64;
        per_horizon.push(EnvelopeHorizon { n_max, median_sup: median, p95_sup: p95, mean_sup: mean });
    }
    let first_median = per_horizon[0].median_sup.max(f64::MIN_POSITIVE);
    let max_growth = per_horizon
        .iter()
        .map(|h| h.median_sup / first_median)
        .fold(0.0_f64, f64::max);
    Ok(EnvelopeReport {
        functional: format!(
            "{}[{}]",
            match functional.process {
                ProcessSelector::Composition => "y",
                ProcessSelector::Allocation => "n",
            },
            functional.component + 1
        ),
        envelope: if critical {
            "sqrt(2 n logloglog n) * (log n)^(nu - 1/2)".into()
        } else {
            "sqrt(2 n loglog n)".into()
        },
        replicates: cfg.replicates,
        per_horizon,
        max_median_growth: max_growth,
    })
}

// ---------------------------------------------------------------------------
// Limit-process ensembles
// ---------------------------------------------------------------------------

/// Configuration for a composite limit-path ensemble run.
#[derive(Debug, Clone)]
pub struct LimitEnsembleConfig {
    pub rule: RuleSpec,
    pub paths: u64,
    pub grid_points: usize,
    pub t_max: f64,
    pub master_seed: u64,
    pub rel_tol: f64,
    pub threads: usize,
    pub deterministic: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitEnsembleReport {
    pub rule: String,
    pub paths: u64,
    pub grid_points: usize,
    pub t_max: f64,
    pub master_seed: u64,
    pub empirical_mean: Vec<f64>,
    pub empirical_cov: Vec<Vec<f64>>,
    pub theoretical_cov: Vec<Vec<f64>>,
    pub verdict: Verdict,
    pub provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_ms: Option<u128>,
}

impl LimitEnsembleReport {
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut bytes =
            serde_json::to_vec_pretty(self).expect("report serialization cannot fail");
        bytes.push(b'\n');
        bytes
    }
}

/// Sample composite (y, n) limit endpoints in parallel and compare their
/// ensemble covariance at t_max against t_max * Gamma.
pub fn limit_ensemble(cfg: &LimitEnsembleConfig) -> Result<LimitEnsembleReport> {
    if cfg.paths < 2 {
        return Err(Error::InsufficientPaths { got: cfg.paths as usize });
    }
    let start = std::time::Instant::now();
    let rule = cfg.rule.build()?;
    let d = rule.dim();
    let g = validate_generating_matrix(rule.declared_mean(), 1e-9)?;
    let spectral = spectral_analyze(&g, DEFAULT_EIG_TOL, None)?;
    let v_rows: Vec<DMatrix<f64>> = (0..d).map(|q| rule.declared_row_cov(q).clone()).collect();
    let noise = sigma_matrices(spectral.v(), &v_rows, spectral.h())?;
    let gamma = gamma_subcritical(&spectral, &noise, crate::covariance::DEFAULT_QUAD_TOL)?;
    let theta = gamma.gamma.stacked() * cfg.t_max;

    let grid = TimeGrid::from_zero(cfg.t_max, cfg.grid_points)?;
    let engine = CompositeEngine::new(&spectral, &noise.sigma1, &noise.sigma2, grid)?;

    let chunks = chunk_ranges(cfg.paths);
    let accs: Vec<MomentAccumulator> = run_in_pool(cfg.threads, || {
        chunks
            .into_par_iter()
            .map(|range| {
                let mut acc = MomentAccumulator::new(2 * d);
                for i in range {
                    let mut rng = derive_stream(cfg.master_seed, i);
                    let z = engine.sample_stacked_endpoint(&mut rng);
                    acc.push(&z);
                }
                acc
            })
            .collect()
    });
    let mut acc = MomentAccumulator::new(2 * d);
    for a in &accs {
        acc.merge(a);
    }
    let cov = acc.covariance()?;
    let verdict = compare(&cov, &theta, cfg.rel_tol)?;
    Ok(LimitEnsembleReport {
        rule: cfg.rule.describe(),
        paths: cfg.paths,
        grid_points: cfg.grid_points,
        t_max: cfg.t_max,
        master_seed: cfg.master_seed,
        empirical_mean: acc.mean().iter().cloned().collect(),
        empirical_cov: mat_rows(&cov),
        theoretical_cov: mat_rows(&theta),
        verdict,
        provenance: Provenance {
            stream_derivation: STREAM_DERIVATION,
            chunk_size: CHUNK,
            deterministic: cfg.deterministic,
        },
        wall_clock_ms: if cfg.deterministic { None } else { Some(start.elapsed().as_millis()) },
    })
}
