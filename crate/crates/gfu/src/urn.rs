//! Exact simulation of the urn recursion Y_m = Y_{m-1} + X_m D_m and exact
//! reconstruction of its martingale decomposition from a trajectory log.
//!
//! At every stage a ball type K is drawn with probability Y_K / a (with
//! replacement), the draw count N_K is incremented, and row K of a freshly
//! sampled replacement matrix D_m is added to Y. A trajectory keeps the full
//! draw log (drawn type, sampled row, conditional-mean row when the rule is
//! non-homogeneous), so the identities
//!
//!   Y_n - n v = M_{n2} + M_{n1} H + sum_{m<n} ((Y_m - m v)/m) Ht + R_{n1} + Y_0
//!   N_n - n v = M_{n1} + sum_{m<n} ((Y_m - m v)/m)(I - 1'v) + R_{n2}
//!
//! hold exactly (up to floating-point rounding) and can be replayed and
//! verified from the log alone.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rules::AdditionRule;
use crate::spectral::SpectralData;
use crate::stream::{stream_from_seed, Stream};

/// Urn composition after `m` draws: ball counts, draw counts, total mass.
#[derive(Debug, Clone, PartialEq)]
pub struct UrnState {
    pub y: Vec<f64>,
    pub draws: Vec<u64>,
    pub total: f64,
    pub m: u64,
}

impl UrnState {
    pub fn dim(&self) -> usize {
        self.y.len()
    }
}

/// The simulator: state plus its private random stream and scratch buffers.
pub struct Urn {
    pub state: UrnState,
    rng: Stream,
    d_row: Vec<f64>,
    mean_row: Vec<f64>,
    last_drawn: usize,
}

/// Create an urn at stage 0 with a stream derived from `seed`.
pub fn init_urn(y0: &[f64], rule: &dyn AdditionRule, seed: u64) -> Result<Urn> {
    init_urn_with_stream(y0, rule, stream_from_seed(seed))
}

/// Same, with an explicitly supplied stream (used for replicate ensembles).
pub fn init_urn_with_stream(y0: &[f64], rule: &dyn AdditionRule, rng: Stream) -> Result<Urn> {
    if y0.len() != rule.dim() {
        return Err(Error::DimensionMismatch(format!(
            "initial composition has length {}, rule dimension is {}",
            y0.len(),
            rule.dim()
        )));
    }
    for (index, &value) in y0.iter().enumerate() {
        if !(value > 0.0) {
            return Err(Error::NonpositiveInitialCount { index, value });
        }
    }
    let d = y0.len();
    Ok(Urn {
        state: UrnState { y: y0.to_vec(), draws: vec![0; d], total: y0.iter().sum(), m: 0 },
        rng,
        d_row: vec![0.0; d],
        mean_row: vec![0.0; d],
        last_drawn: 0,
    })
}

impl Urn {
    /// One stage of the recursion. Returns the drawn type; the sampled row
    /// and (for non-homogeneous rules) the conditional-mean row are kept in
    /// scratch buffers until the next call.
    pub fn step(&mut self, rule: &dyn AdditionRule) -> Result<usize> {
        let state = &mut self.state;
        if !(state.total > 0.0) {
            return Err(Error::AllMassLost { stage: state.m, total: state.total });
        }
        // One uniform variate, cumulative scan with half-open bins.
        let target: f64 = self.rng.random::<f64>() * state.total;
        let d = state.y.len();
        let mut acc = 0.0;
        let mut drawn = d - 1;
        for (k, &yk) in state.y.iter().enumerate() {
            acc += yk;
            if target < acc {
                drawn = k;
                break;
            }
        }
        // Sample before mutating: the rule conditions on the pre-draw state.
        if !rule.is_homogeneous() {
            rule.conditional_mean_row(state, drawn, &mut self.mean_row);
        }
        rule.sample_row(state, drawn, &mut self.rng, &mut self.d_row);

        state.draws[drawn] += 1;
        for (yk, &add) in state.y.iter_mut().zip(self.d_row.iter()) {
            *yk += add;
        }
        // Recompute the total so that a = sum(Y) exactly at all times.
        state.total = state.y.iter().sum();
        state.m += 1;
        self.last_drawn = drawn;
        Ok(drawn)
    }

    pub fn last_d_row(&self) -> &[f64] {
        &self.d_row
    }

    pub fn last_mean_row(&self) -> &[f64] {
        &self.mean_row
    }

    /// Run `n` stages, invoking `observe` after every one.
    pub fn run_observed(
        &mut self,
        rule: &dyn AdditionRule,
        n: u64,
        mut observe: impl FnMut(&UrnState),
    ) -> Result<()> {
        for _ in 0..n {
            self.step(rule)?;
            observe(&self.state);
        }
        Ok(())
    }

    /// Run `n` stages and collect the full trajectory log.
    /// `stride` controls checkpoint density; `None` stores every state below
    /// 1e5 stages and every 64th above.
    pub fn run(
        &mut self,
        rule: &dyn AdditionRule,
        n: u64,
        stride: Option<u64>,
    ) -> Result<Trajectory> {
        let d = self.state.dim();
        let stride = stride.unwrap_or(if n < 100_000 { 1 } else { 64 }).max(1);
        let homogeneous = rule.is_homogeneous();
        let mut traj = Trajectory {
            format_version: TRAJECTORY_FORMAT_VERSION,
            y0: self.state.y.clone(),
            dim: d,
            declared_mean: rule.declared_mean().iter().cloned().collect(),
            declared_mean_row_major: mat_rows(rule.declared_mean()),
            homogeneous,
            checkpoint_stride: stride,
            drawn: Vec::with_capacity(n as usize),
            d_rows: Vec::with_capacity(n as usize * d),
            mean_rows: if homogeneous { Vec::new() } else { Vec::with_capacity(n as usize * d) },
            checkpoints: Vec::new(),
        };
        if self.state.m != 0 {
            return Err(Error::MissingLog { what: "run must start at stage 0" });
        }
        for i in 0..n {
            let drawn = self.step(rule)?;
            traj.drawn.push(drawn as u32);
            traj.d_rows.extend_from_slice(&self.d_row);
            if !homogeneous {
                traj.mean_rows.extend_from_slice(&self.mean_row);
            }
            if (i + 1) % stride == 0 || i + 1 == n {
                traj.checkpoints.push(Checkpoint {
                    m: self.state.m,
                    y: self.state.y.clone(),
                    draws: self.state.draws.clone(),
                    total: self.state.total,
                });
            }
        }
        Ok(traj)
    }
}

pub const TRAJECTORY_FORMAT_VERSION: u32 = 1;

/// Stored urn state at a logged stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub m: u64,
    pub y: Vec<f64>,
    pub draws: Vec<u64>,
    pub total: f64,
}

/// Full urn history: the per-stage draw log plus periodic state checkpoints.
/// Replaying the log from y0 reproduces every checkpoint bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub format_version: u32,
    pub y0: Vec<f64>,
    pub dim: usize,
    /// Declared H, column-major flat (serialization detail).
    declared_mean: Vec<f64>,
    /// Declared H, row-major nested (for readability of exported files).
    declared_mean_row_major: Vec<Vec<f64>>,
    pub homogeneous: bool,
    pub checkpoint_stride: u64,
    pub drawn: Vec<u32>,
    /// Drawn rows of D_m, flat n x d.
    pub d_rows: Vec<f64>,
    /// Drawn rows of H_m, flat n x d; empty for homogeneous rules.
    pub mean_rows: Vec<f64>,
    pub checkpoints: Vec<Checkpoint>,
}

fn mat_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

/// One replayed stage: the state before the draw, the log entry, and the
/// state after.
pub struct ReplayStep<'a> {
    pub m: u64,
    pub y_prev: &'a [f64],
    pub draws_prev: &'a [u64],
    pub total_prev: f64,
    pub drawn: usize,
    pub d_row: &'a [f64],
    pub mean_row: &'a [f64],
    pub y: &'a [f64],
    pub draws: &'a [u64],
    pub total: f64,
}

impl Trajectory {
    pub fn len(&self) -> u64 {
        self.drawn.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.drawn.is_empty()
    }

    pub fn declared_mean(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.dim, self.dim, &self.declared_mean)
    }

    /// Replay the log from y0, visiting every stage in order. Additions are
    /// applied in the same order as the simulator, so the reconstruction is
    /// exact.
    pub fn replay(&self, mut visit: impl FnMut(ReplayStep<'_>)) {
        let d = self.dim;
        let h = self.declared_mean();
        let mut y = self.y0.clone();
        let mut y_prev = self.y0.clone();
        let mut draws = vec![0u64; d];
        let mut draws_prev = vec![0u64; d];
        let mut total: f64 = y.iter().sum();
        let mut declared_row = vec![0.0; d];
        for (i, &drawn) in self.drawn.iter().enumerate() {
            let drawn = drawn as usize;
            let total_prev = total;
            y_prev.copy_from_slice(&y);
            draws_prev.copy_from_slice(&draws);
            let d_row = &self.d_rows[i * d..(i + 1) * d];
            let mean_row: &[f64] = if self.homogeneous {
                for k in 0..d {
                    declared_row[k] = h[(drawn, k)];
                }
                &declared_row
            } else {
                &self.mean_rows[i * d..(i + 1) * d]
            };
            draws[drawn] += 1;
            for (yk, &add) in y.iter_mut().zip(d_row.iter()) {
                *yk += add;
            }
            total = y.iter().sum();
            visit(ReplayStep {
                m: (i + 1) as u64,
                y_prev: &y_prev,
                draws_prev: &draws_prev,
                total_prev,
                drawn,
                d_row,
                mean_row,
                y: &y,
                draws: &draws,
                total,
            });
        }
    }

    /// Verify that replaying the log reproduces every checkpoint exactly
    /// (bitwise).
    pub fn verify_checkpoints(&self) -> Result<()> {
        let mut idx = 0usize;
        let mut ok = true;
        self.replay(|step| {
            if idx < self.checkpoints.len() && self.checkpoints[idx].m == step.m {
                let cp = &self.checkpoints[idx];
                if cp.y != step.y || cp.draws != step.draws || cp.total != step.total {
                    ok = false;
                }
                idx += 1;
            }
        });
        if !ok || idx != self.checkpoints.len() {
            return Err(Error::MissingLog { what: "checkpoint replay mismatch" });
        }
        Ok(())
    }

    /// Final state reconstructed from the log.
    pub fn final_state(&self) -> UrnState {
        let d = self.dim;
        let mut y = self.y0.clone();
        let mut draws = vec![0u64; d];
        for (i, &drawn) in self.drawn.iter().enumerate() {
            draws[drawn as usize] += 1;
            for k in 0..d {
                y[k] += self.d_rows[i * d + k];
            }
        }
        let total = y.iter().sum();
        UrnState { y, draws, total, m: self.len() }
    }

    /// Export as CSV with columns m, drawn_type, d_1.., y_1.., n_1.., a.
    pub fn to_csv(&self) -> String {
        let d = self.dim;
        let mut out = String::new();
        out.push_str("m,drawn_type");
        for k in 1..=d {
            out.push_str(&format!(",d_{k}"));
        }
        for k in 1..=d {
            out.push_str(&format!(",y_{k}"));
        }
        for k in 1..=d {
            out.push_str(&format!(",n_{k}"));
        }
        out.push_str(",a\n");
        let a0: f64 = self.y0.iter().sum();
        out.push_str("0,");
        for _ in 0..d {
            out.push(',');
        }
        for v in &self.y0 {
            out.push_str(&format!(",{v}"));
        }
        for _ in 0..d {
            out.push_str(",0");
        }
        out.push_str(&format!(",{a0}\n"));
        self.replay(|step| {
            out.push_str(&format!("{},{}", step.m, step.drawn + 1));
            for v in step.d_row {
                out.push_str(&format!(",{v}"));
            }
            for v in step.y {
                out.push_str(&format!(",{v}"));
            }
            for v in step.draws {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{}\n", step.total));
        });
        out
    }

    /// Versioned JSON serialization; floats round-trip exactly.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trajectory serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: Trajectory = serde_json::from_str(text)
            .map_err(|e| Error::ConfigParse(format!("trajectory JSON: {e}")))?;
        if t.format_version != TRAJECTORY_FORMAT_VERSION {
            return Err(Error::ConfigParse(format!(
                "unsupported trajectory format version {}",
                t.format_version
            )));
        }
        Ok(t)
    }
}

// ---------------------------------------------------------------------------
// Martingale reconstruction
// ---------------------------------------------------------------------------

/// The two martingale components reconstructed from a trajectory:
/// M_{n1} = sum (X_k - Y_{k-1}/a_{k-1}) and M_{n2} = sum X_m (D_m - H_m).
/// Paths are stored flat, (n+1) x d, starting at zero.
#[derive(Debug, Clone)]
pub struct MartingaleTracks {
    pub dim: usize,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
}

impl MartingaleTracks {
    pub fn m1_at(&self, n: usize) -> &[f64] {
        &self.m1[n * self.dim..(n + 1) * self.dim]
    }

    pub fn m2_at(&self, n: usize) -> &[f64] {
        &self.m2[n * self.dim..(n + 1) * self.dim]
    }
}

/// Reconstruct both martingale paths exactly from the log.
pub fn martingale_tracks(traj: &Trajectory) -> Result<MartingaleTracks> {
    let d = traj.dim;
    if traj.d_rows.len() != traj.drawn.len() * d {
        return Err(Error::MissingLog { what: "martingale_tracks" });
    }
    let n = traj.drawn.len();
    let mut m1 = vec![0.0; (n + 1) * d];
    let mut m2 = vec![0.0; (n + 1) * d];
    traj.replay(|step| {
        let i = step.m as usize;
        for k in 0..d {
            let p = step.y_prev[k] / step.total_prev;
            let x = if k == step.drawn { 1.0 } else { 0.0 };
            m1[i * d + k] = m1[(i - 1) * d + k] + (x - p);
            m2[i * d + k] = m2[(i - 1) * d + k] + (step.d_row[k] - step.mean_row[k]);
        }
    });
    Ok(MartingaleTracks { dim: d, m1, m2 })
}

// ---------------------------------------------------------------------------
// Exact decomposition check
// ---------------------------------------------------------------------------

/// Maximum absolute residuals of the two decomposition identities over all
/// stages of a trajectory.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DecompositionResiduals {
    pub max_residual_y: f64,
    pub max_residual_n: f64,
}

/// Evaluate both exact identities at every stage and return the worst
/// residuals. `spectral` must come from the rule's declared H.
pub fn decompose(traj: &Trajectory, spectral: &SpectralData) -> Result<DecompositionResiduals> {
    let d = traj.dim;
    if spectral.dim() != d {
        return Err(Error::DimensionMismatch("spectral data vs trajectory dimension".into()));
    }
    let h = traj.declared_mean();
    if (&h - spectral.h()).abs().max() > 1e-9 {
        return Err(Error::DimensionMismatch(
            "spectral data was not computed from the trajectory's declared mean".into(),
        ));
    }
    let ht = spectral.h_tilde();
    let v: Vec<f64> = spectral.v().iter().cloned().collect();
    let a0: f64 = traj.y0.iter().sum();

    // Running row vectors.
    let mut m1 = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    let mut mean_dev_sum = vec![0.0; d]; // sum of drawn rows of (H_m - H)
    let mut fluct_sum = vec![0.0; d]; // sum_{m<=n-1} (Y_m - m v)/m
    let mut rem_sum = vec![0.0; d]; // sum_{m<=n-1} ((m - a_m)/m)(Y_m/a_m - v)
    let mut r1_base = vec![0.0; d]; // (Y0/a0 - v) Ht
    let mut r2_base = vec![0.0; d]; // (Y0/a0 - v)
    for k in 0..d {
        r2_base[k] = traj.y0[k] / a0 - v[k];
    }
    crate::linalg::row_times_mat(&r2_base, ht, &mut r1_base);

    let mut buf_a = vec![0.0; d];
    let mut buf_b = vec![0.0; d];
    let mut rem_ht = vec![0.0; d];
    let mut max_res_y = 0.0_f64;
    let mut max_res_n = 0.0_f64;

    traj.replay(|step| {
        let n = step.m as f64;
        for k in 0..d {
            let p = step.y_prev[k] / step.total_prev;
            let x = if k == step.drawn { 1.0 } else { 0.0 };
            m1[k] += x - p;
            m2[k] += step.d_row[k] - step.mean_row[k];
            mean_dev_sum[k] += step.mean_row[k] - h[(step.drawn, k)];
        }

        // Y identity at stage n.
        crate::linalg::row_times_mat(&m1, &h, &mut buf_a); // M_{n1} H
        crate::linalg::row_times_mat(&fluct_sum, ht, &mut buf_b); // drift sum * Ht
        crate::linalg::row_times_mat(&rem_sum, ht, &mut rem_ht);
        let mut res_y = 0.0_f64;
        for k in 0..d {
            let rhs = n * v[k]
                + m2[k]
                + buf_a[k]
                + buf_b[k]
                + r1_base[k]
                + rem_ht[k]
                + mean_dev_sum[k]
                + traj.y0[k];
            res_y = res_y.max((step.y[k] - rhs).abs());
        }
        max_res_y = max_res_y.max(res_y);

        // N identity at stage n: project the drift and remainder sums with
        // (I - 1'v), i.e. subtract (row sum) * v.
        let fluct_total: f64 = fluct_sum.iter().sum();
        let rem_total: f64 = rem_sum.iter().sum();
        let mut res_n = 0.0_f64;
        for k in 0..d {
            let drift = fluct_sum[k] - fluct_total * v[k];
            let rem = rem_sum[k] - rem_total * v[k];
            let rhs = n * v[k] + m1[k] + drift + r2_base[k] + rem;
            res_n = res_n.max((step.draws[k] as f64 - rhs).abs());
        }
        max_res_n = max_res_n.max(res_n);

        // Extend the sums with index m = n for later stages.
        for k in 0..d {
            fluct_sum[k] += (step.y[k] - n * v[k]) / n;
            rem_sum[k] += ((n - step.total) / n) * (step.y[k] / step.total - v[k]);
        }
    });

    Ok(DecompositionResiduals { max_residual_y: max_res_y, max_residual_n: max_res_n })
}

// ---------------------------------------------------------------------------
// Conditional covariance checks
// ---------------------------------------------------------------------------

/// Monte Carlo report on the martingale increment structure: orthogonality
/// of the two components and their average conditional covariances against
/// the declared noise matrices.
#[derive(Debug, Clone, Serialize)]
pub struct CovCheckReport {
    pub replicates: usize,
    pub samples: u64,
    pub cross_mean: Vec<Vec<f64>>,
    pub cross_se: Vec<Vec<f64>>,
    pub max_cross_z: f64,
    pub m1_product_mean: Vec<Vec<f64>>,
    pub m2_product_mean: Vec<Vec<f64>>,
    pub sigma1: Vec<Vec<f64>>,
    pub sigma2: Vec<Vec<f64>>,
    pub m1_rel_err_fro: f64,
    pub m2_rel_err_fro: f64,
    /// Mean of the raw increments (must be within MC error of zero: the
    /// martingale property itself).
    pub m1_increment_mean: Vec<f64>,
    pub m2_increment_mean: Vec<f64>,
    pub m1_increment_z_max: f64,
    pub m2_increment_z_max: f64,
}

/// Streaming accumulator behind `conditional_cov_check`, so large replicate
/// ensembles can be processed in batches without keeping every trajectory.
pub struct CovCheckAccumulator {
    d: usize,
    sigma1: DMatrix<f64>,
    sigma2: DMatrix<f64>,
    replicates: usize,
    samples: u64,
    cross_sum: Vec<f64>,
    cross_sq: Vec<f64>,
    m1_sum: Vec<f64>,
    m2_sum: Vec<f64>,
    m1_inc_sum: Vec<f64>,
    m2_inc_sum: Vec<f64>,
}

impl CovCheckAccumulator {
    pub fn new(rule: &dyn AdditionRule) -> Result<Self> {
        let d = rule.dim();
        let g = crate::spectral::validate_generating_matrix(rule.declared_mean(), 1e-9)?;
        let s = crate::spectral::spectral_analyze(&g, crate::spectral::DEFAULT_EIG_TOL, None)?;
        let v_rows: Vec<DMatrix<f64>> = (0..d).map(|q| rule.declared_row_cov(q).clone()).collect();
        let noise = crate::covariance::sigma_matrices(s.v(), &v_rows, s.h())?;
        Ok(CovCheckAccumulator {
            d,
            sigma1: noise.sigma1.clone(),
            sigma2: noise.sigma2.clone(),
            replicates: 0,
            samples: 0,
            cross_sum: vec![0.0; d * d],
            cross_sq: vec![0.0; d * d],
            m1_sum: vec![0.0; d * d],
            m2_sum: vec![0.0; d * d],
            m1_inc_sum: vec![0.0; d],
            m2_inc_sum: vec![0.0; d],
        })
    }

    pub fn add(&mut self, traj: &Trajectory) -> Result<()> {
        let d = self.d;
        if traj.dim != d {
            return Err(Error::DimensionMismatch("trajectory dimension".into()));
        }
        let mut dm1 = vec![0.0; d];
        let mut dm2 = vec![0.0; d];
        traj.replay(|step| {
            for k in 0..d {
                let p = step.y_prev[k] / step.total_prev;
                dm1[k] = (if k == step.drawn { 1.0 } else { 0.0 }) - p;
                dm2[k] = step.d_row[k] - step.mean_row[k];
            }
            for k in 0..d {
                self.m1_inc_sum[k] += dm1[k];
                self.m2_inc_sum[k] += dm2[k];
                for l in 0..d {
                    let idx = k * d + l;
                    let cross = dm1[k] * dm2[l];
                    self.cross_sum[idx] += cross;
                    self.cross_sq[idx] += cross * cross;
                    self.m1_sum[idx] += dm1[k] * dm1[l];
                    self.m2_sum[idx] += dm2[k] * dm2[l];
                }
            }
            self.samples += 1;
        });
        self.replicates += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<CovCheckReport> {
        if self.replicates < 2 {
            return Err(Error::InsufficientReplicates { got: self.replicates });
        }
        let d = self.d;
        let n = self.samples as f64;
        let mut cross_mean = vec![vec![0.0; d]; d];
        let mut cross_se = vec![vec![0.0; d]; d];
        let mut m1_mean = vec![vec![0.0; d]; d];
        let mut m2_mean = vec![vec![0.0; d]; d];
        let mut max_z = 0.0_f64;
        let mut m1_err = 0.0;
        let mut m2_err = 0.0;
        let mut s1_norm = 0.0;
        let mut s2_norm = 0.0;
        for k in 0..d {
            for l in 0..d {
                let idx = k * d + l;
                let mean = self.cross_sum[idx] / n;
                let var = (self.cross_sq[idx] / n - mean * mean).max(0.0);
                let se = (var / n).sqrt();
                cross_mean[k][l] = mean;
                cross_se[k][l] = se;
                if se > 0.0 {
                    max_z = max_z.max(mean.abs() / se);
                }
                m1_mean[k][l] = self.m1_sum[idx] / n;
                m2_mean[k][l] = self.m2_sum[idx] / n;
                m1_err += (m1_mean[k][l] - self.sigma1[(k, l)]).powi(2);
                m2_err += (m2_mean[k][l] - self.sigma2[(k, l)]).powi(2);
                s1_norm += self.sigma1[(k, l)].powi(2);
                s2_norm += self.sigma2[(k, l)].powi(2);
            }
        }
        let m1_rel = if s1_norm > 0.0 { (m1_err / s1_norm).sqrt() } else { m1_err.sqrt() };
        let m2_rel = if s2_norm > 0.0 { (m2_err / s2_norm).sqrt() } else { m2_err.sqrt() };
        // increment means and their z-scores (variance of the increments is
        // the diagonal of the respective product means)
        let mut m1_inc_mean = vec![0.0; d];
        let mut m2_inc_mean = vec![0.0; d];
        let mut m1_z = 0.0_f64;
        let mut m2_z = 0.0_f64;
        for k in 0..d {
            m1_inc_mean[k] = self.m1_inc_sum[k] / n;
            m2_inc_mean[k] = self.m2_inc_sum[k] / n;
            let se1 = (m1_mean[k][k].max(0.0) / n).sqrt();
            let se2 = (m2_mean[k][k].max(0.0) / n).sqrt();
            if se1 > 0.0 {
                m1_z = m1_z.max(m1_inc_mean[k].abs() / se1);
            }
            if se2 > 0.0 {
                m2_z = m2_z.max(m2_inc_mean[k].abs() / se2);
            }
        }
        Ok(CovCheckReport {
            replicates: self.replicates,
            samples: self.samples,
            cross_mean,
            cross_se,
            max_cross_z: max_z,
            m1_product_mean: m1_mean,
            m2_product_mean: m2_mean,
            sigma1: mat_rows(&self.sigma1),
            sigma2: mat_rows(&self.sigma2),
            m1_rel_err_fro: m1_rel,
            m2_rel_err_fro: m2_rel,
            m1_increment_mean: m1_inc_mean,
            m2_increment_mean: m2_inc_mean,
            m1_increment_z_max: m1_z,
            m2_increment_z_max: m2_z,
        })
    }
}

/// Check orthogonality of the two martingale increment streams and compare
/// their average products against the declared noise matrices.
pub fn conditional_cov_check(
    replicates: &[Trajectory],
    rule: &dyn AdditionRule,
) -> Result<CovCheckReport> {
    if replicates.len() < 2 {
        return Err(Error::InsufficientReplicates { got: replicates.len() });
    }
    let mut acc = CovCheckAccumulator::new(rule)?;
    for traj in replicates {
        acc.add(traj)?;
    }
    acc.finish()
}
