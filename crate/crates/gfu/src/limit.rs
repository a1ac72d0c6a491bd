//! Simulation of the limiting Gaussian processes.
//!
//! The processes solve the linear stochastic equations
//!
//! ```text
//!   S_t = W_t + int_0^t S_s Ht / s ds,          S_0 = 0   (started at 0)
//!   Sh_t = W_t - W_1 + int_1^t Sh_s Ht / s ds,  Sh_1 = 0  (started at 1)
//! ```
//!
//! whose solutions are S_t = (int_0^t (dW_x) x^{-Ht}) t^{Ht}. On a time grid
//! the exact propagation S(t_{j+1}) = S(t_j) (t_{j+1}/t_j)^{Ht} plus
//! (int_{t_j}^{t_{j+1}} dW_x x^{-Ht}) t_{j+1}^{Ht} is discretized with a
//! midpoint kernel for the panel increment. For the start-at-0 equation the
//! first panel is sampled exactly: Var S(t_1) = t_1 * C with
//! C - Ht' C - C Ht = Lambda and Cov(S(t_1), W(t_1)) = t_1 (I - Ht')^{-1}
//! Lambda, so (S(t_1), W(t_1)) is drawn jointly from its true Gaussian law
//! (a midpoint kernel there would lose a t_1^{1-2 rho} share of variance).
//!
//! Grids are geometric (log-uniform) because the kernels vary in ln(t/x);
//! the start-at-0 grid prepends 0 with a first point at t_max * 1e-12, small
//! enough that the neglected part of int_0^{t} S/x dx is below 1e-6 of its
//! total standard deviation.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, row_times_mat, solve_displacement_equation};
use crate::spectral::{Regime, SpectralData};
use crate::stats::MomentAccumulator;
use crate::stream::Stream;

/// Relative position of the first positive grid point of a start-at-0 grid.
pub const FIRST_POINT_FRACTION: f64 = 1e-12;

/// Which equation a grid (and a path) belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EquationKind {
    /// Started at time 0.
    FromZero,
    /// Started at time 1.
    FromOne,
}

/// Strictly increasing simulation times.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    kind: EquationKind,
}

impl TimeGrid {
    /// Grid for the start-at-0 equation: {0} followed by a geometric grid
    /// from t_max * 1e-12 to t_max.
    pub fn from_zero(t_max: f64, points: usize) -> Result<Arc<Self>> {
        if !(t_max > 0.0) || points < 4 {
            return Err(Error::BadGrid(format!("t_max = {t_max}, points = {points}")));
        }
        let mut times = Vec::with_capacity(points);
        times.push(0.0);
        let first = t_max * FIRST_POINT_FRACTION;
        let m = points - 1;
        for i in 0..m {
            let f = i as f64 / (m - 1) as f64;
            times.push(first * (t_max / first).powf(f));
        }
        *times.last_mut().unwrap() = t_max;
        Ok(Arc::new(TimeGrid { times, kind: EquationKind::FromZero }))
    }

    /// Geometric grid from 1 to t_max for the start-at-1 equation.
    pub fn from_one(t_max: f64, points: usize) -> Result<Arc<Self>> {
        if !(t_max > 1.0) || points < 2 {
            return Err(Error::BadGrid(format!("t_max = {t_max}, points = {points}")));
        }
        let mut times = Vec::with_capacity(points);
        for i in 0..points {
            let f = i as f64 / (points - 1) as f64;
            times.push(t_max.powf(f));
        }
        times[0] = 1.0;
        *times.last_mut().unwrap() = t_max;
        Ok(Arc::new(TimeGrid { times, kind: EquationKind::FromOne }))
    }

    /// Custom strictly increasing times; the first must be 0 (start-at-0) or
    /// 1 (start-at-1) to match `kind`.
    pub fn custom(times: Vec<f64>, kind: EquationKind) -> Result<Arc<Self>> {
        if times.len() < 2 {
            return Err(Error::BadGrid("need at least two grid points".into()));
        }
        let start = match kind {
            EquationKind::FromZero => 0.0,
            EquationKind::FromOne => 1.0,
        };
        if times[0] != start {
            return Err(Error::BadGrid(format!("grid must start at {start}, got {}", times[0])));
        }
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::BadGrid("times must be strictly increasing".into()));
            }
        }
        Ok(Arc::new(TimeGrid { times, kind }))
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn kind(&self) -> EquationKind {
        self.kind
    }

    pub fn t_max(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Index of the grid point equal to `t` (within 1e-12 relative).
    pub fn index_of(&self, t: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|&x| (x - t).abs() <= 1e-12 * t.abs().max(1.0))
            .ok_or_else(|| Error::BadGrid(format!("time {t} is not a grid point")))
    }
}

/// One simulated path of a limit process on a grid: values S(t_j), the
/// running integral int S(x)/x dx accumulated by the trapezoid rule, and
/// (optionally) the driving Brownian path W(t_j) - W(t_0).
#[derive(Debug, Clone)]
pub struct LimitPath {
    pub grid: Arc<TimeGrid>,
    dim: usize,
    pub values: Vec<f64>,
    pub running_integral: Vec<f64>,
    pub driver: Option<Vec<f64>>,
    generator: DMatrix<f64>,
}

impl LimitPath {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value_at(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn integral_at(&self, j: usize) -> &[f64] {
        &self.running_integral[j * self.dim..(j + 1) * self.dim]
    }

    /// CSV export with columns t, s_1.., i_1.. .
    pub fn to_csv(&self) -> String {
        let d = self.dim;
        let mut out = String::from("t");
        for k in 1..=d {
            out.push_str(&format!(",s_{k}"));
        }
        for k in 1..=d {
            out.push_str(&format!(",i_{k}"));
        }
        out.push('\n');
        for (j, &t) in self.grid.times().iter().enumerate() {
            out.push_str(&format!("{t}"));
            for v in self.value_at(j) {
                out.push_str(&format!(",{v}"));
            }
            for v in self.integral_at(j) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Simulation engines
// ---------------------------------------------------------------------------

struct Panels {
    /// (t_{j+1}/t_j)^Ht per panel (index 0 unused for start-at-0 grids).
    ratio_pow: Vec<Arc<DMatrix<f64>>>,
    /// (t_{j+1}/x_j^*)^Ht with the midpoint x_j^* = (t_j + t_{j+1})/2.
    mid_pow: Vec<Arc<DMatrix<f64>>>,
}

fn power_cached(
    cache: &mut HashMap<u64, Arc<DMatrix<f64>>>,
    ht: &DMatrix<f64>,
    ratio: f64,
) -> Arc<DMatrix<f64>> {
    if let Some(m) = cache.get(&ratio.to_bits()) {
        return m.clone();
    }
    let m = Arc::new((ht.clone() * ratio.ln()).exp());
    cache.insert(ratio.to_bits(), m.clone());
    m
}

fn build_panels(ht: &DMatrix<f64>, grid: &TimeGrid) -> Panels {
    let times = grid.times();
    let skip_first = grid.kind() == EquationKind::FromZero;
    let mut cache = HashMap::new();
    let d = ht.nrows();
    let identity = Arc::new(DMatrix::identity(d, d));
    let mut ratio_pow = Vec::with_capacity(times.len() - 1);
    let mut mid_pow = Vec::with_capacity(times.len() - 1);
    for j in 0..times.len() - 1 {
        if j == 0 && skip_first {
            ratio_pow.push(identity.clone());
            mid_pow.push(identity.clone());
            continue;
        }
        let (a, b) = (times[j], times[j + 1]);
        ratio_pow.push(power_cached(&mut cache, ht, b / a));
        mid_pow.push(power_cached(&mut cache, ht, b / (0.5 * (a + b))));
    }
    Panels { ratio_pow, mid_pow }
}

/// Values of one process at the final grid time, for streaming ensembles.
pub struct EndpointSample {
    pub value: Vec<f64>,
    pub integral: Vec<f64>,
    pub driver: Vec<f64>,
}

/// Shared, immutable simulation kernel for one (generator, driver covariance,
/// grid) triple. Paths are sampled from it with independent streams.
pub struct PathEngine {
    grid: Arc<TimeGrid>,
    dim: usize,
    generator: DMatrix<f64>,
    sqrt_lambda: DMatrix<f64>,
    panels: Panels,
    /// Symmetric square root of the joint covariance of (S(t_1), W(t_1)),
    /// divided by sqrt(t_1); start-at-0 grids only.
    first_step_sqrt: Option<DMatrix<f64>>,
}

impl PathEngine {
    /// Engine for the start-at-0 equation. Requires the subcritical regime.
    pub fn from_zero(
        spectral: &SpectralData,
        lambda: &DMatrix<f64>,
        grid: Arc<TimeGrid>,
    ) -> Result<Self> {
        if spectral.regime() != Regime::Subcritical {
            return Err(Error::CriticalRegime { rho: spectral.rho() });
        }
        if grid.kind() != EquationKind::FromZero {
            return Err(Error::BadGrid("engine needs a start-at-0 grid".into()));
        }
        let d = spectral.dim();
        if lambda.shape() != (d, d) {
            return Err(Error::DimensionMismatch("driver covariance shape".into()));
        }
        let ht = spectral.h_tilde().clone();
        let sqrt_lambda = psd_sqrt(lambda, 1e-12)?;
        // Exact joint law of (S(t_1), W(t_1)).
        let c = solve_displacement_equation(&ht, lambda)?;
        let cross = (DMatrix::identity(d, d) - ht.transpose())
            .lu()
            .solve(lambda)
            .ok_or_else(|| Error::EigenFailure("(I - Ht') is singular".into()))?;
        let mut joint = DMatrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            for j in 0..d {
                joint[(i, j)] = c[(i, j)];
                joint[(i, d + j)] = cross[(i, j)];
                joint[(d + i, j)] = cross[(j, i)];
                joint[(d + i, d + j)] = lambda[(i, j)];
            }
        }
        let first_step_sqrt = Some(psd_sqrt(&joint, 1e-9)?);
        let panels = build_panels(&ht, &grid);
        Ok(PathEngine { grid, dim: d, generator: ht, sqrt_lambda, panels, first_step_sqrt })
    }

    /// Engine for the start-at-1 equation (any rho up to the critical line).
    pub fn from_one(
        spectral: &SpectralData,
        lambda: &DMatrix<f64>,
        grid: Arc<TimeGrid>,
    ) -> Result<Self> {
        if grid.kind() != EquationKind::FromOne {
            return Err(Error::BadGrid("engine needs a start-at-1 grid".into()));
        }
        let d = spectral.dim();
        if lambda.shape() != (d, d) {
            return Err(Error::DimensionMismatch("driver covariance shape".into()));
        }
        let ht = spectral.h_tilde().clone();
        let sqrt_lambda = psd_sqrt(lambda, 1e-12)?;
        let panels = build_panels(&ht, &grid);
        Ok(PathEngine { grid, dim: d, generator: ht, sqrt_lambda, panels, first_step_sqrt: None })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    fn step_state(
        &self,
        rng: &mut Stream,
        s: &mut [f64],
        w: &mut [f64],
        integral: &mut [f64],
        mut record: impl FnMut(usize, &[f64], &[f64], &[f64]),
    ) {
        let d = self.dim;
        let times = self.grid.times();
        let mut z = vec![0.0; 2 * d];
        let mut dw = vec![0.0; d];
        let mut s_new = vec![0.0; d];
        let mut buf = vec![0.0; d];
        record(0, s, integral, w);
        let mut start_panel = 0;
        if let Some(first) = &self.first_step_sqrt {
            // Joint exact draw of (S(t_1), W(t_1)) scaled by sqrt(t_1).
            let t1 = times[1];
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(rng);
            }
            let mut sw = vec![0.0; 2 * d];
            row_times_mat(&z, first, &mut sw);
            let scale = t1.sqrt();
            for k in 0..d {
                s[k] = sw[k] * scale;
                w[k] = sw[d + k] * scale;
            }
            // One-sided rule on the singular first panel: t_1 * S(t_1)/t_1.
            integral.copy_from_slice(s);
            record(1, s, integral, w);
            start_panel = 1;
        }
        for j in start_panel..times.len() - 1 {
            let (a, b) = (times[j], times[j + 1]);
            let dt = b - a;
            let sqrt_dt = dt.sqrt();
            for zi in z[..d].iter_mut() {
                *zi = StandardNormal.sample(rng);
            }
            row_times_mat(&z[..d], &self.sqrt_lambda, &mut dw);
            for x in dw.iter_mut() {
                *x *= sqrt_dt;
            }
            row_times_mat(s, &self.panels.ratio_pow[j], &mut s_new);
            row_times_mat(&dw, &self.panels.mid_pow[j], &mut buf);
            for k in 0..d {
                s_new[k] += buf[k];
                w[k] += dw[k];
            }
            // Trapezoid increment of int S(x)/x dx over [a, b].
            for k in 0..d {
                integral[k] += 0.5 * dt * (s[k] / a + s_new[k] / b);
            }
            s.copy_from_slice(&s_new);
            record(j + 1, s, integral, w);
        }
    }

    /// Sample one full path, retaining the driver increments.
    pub fn sample_path(&self, rng: &mut Stream) -> LimitPath {
        let d = self.dim;
        let m = self.grid.len();
        let mut values = vec![0.0; m * d];
        let mut integrals = vec![0.0; m * d];
        let mut driver = vec![0.0; m * d];
        let mut s = vec![0.0; d];
        let mut w = vec![0.0; d];
        let mut i = vec![0.0; d];
        self.step_state(rng, &mut s, &mut w, &mut i, |j, s, int, w| {
            values[j * d..(j + 1) * d].copy_from_slice(s);
            integrals[j * d..(j + 1) * d].copy_from_slice(int);
            driver[j * d..(j + 1) * d].copy_from_slice(w);
        });
        LimitPath {
            grid: self.grid.clone(),
            dim: d,
            values,
            running_integral: integrals,
            driver: Some(driver),
            generator: self.generator.clone(),
        }
    }

    /// Sample only the endpoint (no per-time storage).
    pub fn sample_endpoint(&self, rng: &mut Stream) -> EndpointSample {
        let d = self.dim;
        let mut s = vec![0.0; d];
        let mut w = vec![0.0; d];
        let mut i = vec![0.0; d];
        self.step_state(rng, &mut s, &mut w, &mut i, |_, _, _, _| {});
        EndpointSample { value: s, integral: i, driver: w }
    }
}

/// Simulate the start-at-0 equation driven by Brownian motion with
/// covariance `lambda` on `grid`.
pub fn simulate_equ1(
    spectral: &SpectralData,
    lambda: &DMatrix<f64>,
    grid: Arc<TimeGrid>,
    rng: &mut Stream,
) -> Result<LimitPath> {
    Ok(PathEngine::from_zero(spectral, lambda, grid)?.sample_path(rng))
}

/// Simulate the start-at-1 equation driven by Brownian motion with
/// covariance `lambda` on `grid`.
pub fn simulate_equ2(
    spectral: &SpectralData,
    lambda: &DMatrix<f64>,
    grid: Arc<TimeGrid>,
    rng: &mut Stream,
) -> Result<LimitPath> {
    Ok(PathEngine::from_one(spectral, lambda, grid)?.sample_path(rng))
}

// ---------------------------------------------------------------------------
// Composite (Y, N) limit paths
// ---------------------------------------------------------------------------

/// The composite limit pair: y(t) = G1(t) H + G2(t) and
/// n(t) = G1(t) + [int_0^t G2(x)/x dx] (I - 1'v).
#[derive(Debug, Clone)]
pub struct CompositePaths {
    pub grid: Arc<TimeGrid>,
    pub dim: usize,
    pub y: Vec<f64>,
    pub n: Vec<f64>,
}

impl CompositePaths {
    pub fn y_at(&self, j: usize) -> &[f64] {
        &self.y[j * self.dim..(j + 1) * self.dim]
    }

    pub fn n_at(&self, j: usize) -> &[f64] {
        &self.n[j * self.dim..(j + 1) * self.dim]
    }

    /// Stacked (y, n) vector at a grid time.
    pub fn stacked_at(&self, j: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.dim);
        out.extend_from_slice(self.y_at(j));
        out.extend_from_slice(self.n_at(j));
        out
    }
}

/// Combine two independent driver paths (G1 with covariance S1, G2 with S2)
/// into the composite (y, n) limit paths.
pub fn composite_paths(
    g1: &LimitPath,
    g2: &LimitPath,
    spectral: &SpectralData,
) -> Result<CompositePaths> {
    if g1.grid.times() != g2.grid.times() || g1.grid.kind() != g2.grid.kind() {
        return Err(Error::GridMismatch);
    }
    let d = spectral.dim();
    if g1.dim != d || g2.dim != d {
        return Err(Error::DimensionMismatch("path dimension vs spectral data".into()));
    }
    let h = spectral.h();
    let proj = spectral.centering_projection();
    let m = g1.grid.len();
    let mut y = vec![0.0; m * d];
    let mut n = vec![0.0; m * d];
    let mut buf = vec![0.0; d];
    for j in 0..m {
        row_times_mat(g1.value_at(j), h, &mut buf);
        for k in 0..d {
            y[j * d + k] = buf[k] + g2.value_at(j)[k];
        }
        row_times_mat(g2.integral_at(j), &proj, &mut buf);
        for k in 0..d {
            n[j * d + k] = g1.value_at(j)[k] + buf[k];
        }
    }
    Ok(CompositePaths { grid: g1.grid.clone(), dim: d, y, n })
}

/// Streaming sampler of composite endpoints for ensemble statistics.
pub struct CompositeEngine {
    g1: PathEngine,
    g2: PathEngine,
    h: DMatrix<f64>,
    proj: DMatrix<f64>,
    dim: usize,
}

impl CompositeEngine {
    pub fn new(
        spectral: &SpectralData,
        sigma1: &DMatrix<f64>,
        sigma2: &DMatrix<f64>,
        grid: Arc<TimeGrid>,
    ) -> Result<Self> {
        let g1 = PathEngine::from_zero(spectral, sigma1, grid.clone())?;
        let g2 = PathEngine::from_zero(spectral, sigma2, grid)?;
        Ok(CompositeEngine {
            g1,
            g2,
            h: spectral.h().clone(),
            proj: spectral.centering_projection(),
            dim: spectral.dim(),
        })
    }

    /// The stacked (y, n) endpoint of one composite path.
    pub fn sample_stacked_endpoint(&self, rng: &mut Stream) -> Vec<f64> {
        let d = self.dim;
        let e1 = self.g1.sample_endpoint(rng);
        let e2 = self.g2.sample_endpoint(rng);
        let mut out = vec![0.0; 2 * d];
        let mut buf = vec![0.0; d];
        row_times_mat(&e1.value, &self.h, &mut buf);
        for k in 0..d {
            out[k] = buf[k] + e2.value[k];
        }
        row_times_mat(&e2.integral, &self.proj, &mut buf);
        for k in 0..d {
            out[d + k] = e1.value[k] + buf[k];
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Residuals and ensemble statistics
// ---------------------------------------------------------------------------

/// Maximum over the grid of || S(t_j) - W(t_j) - Q(t_j) || where Q is the
/// trapezoid quadrature of int S(x) Ht / x dx (one-sided on the singular
/// first panel of a start-at-0 grid). Requires the retained driver.
pub fn sde_residual(path: &LimitPath) -> Result<f64> {
    let driver = path.driver.as_ref().ok_or(Error::DriverMissing)?;
    let d = path.dim;
    let times = path.grid.times();
    let mut q = vec![0.0; d];
    let mut buf = vec![0.0; d];
    let mut max_res = 0.0_f64;
    for j in 1..times.len() {
        let (a, b) = (times[j - 1], times[j]);
        if j == 1 && path.grid.kind() == EquationKind::FromZero {
            row_times_mat(path.value_at(1), &path.generator, &mut buf);
            q.copy_from_slice(&buf);
        } else {
            let dt = b - a;
            row_times_mat(path.value_at(j - 1), &path.generator, &mut buf);
            for k in 0..d {
                q[k] += 0.5 * dt * buf[k] / a;
            }
            row_times_mat(path.value_at(j), &path.generator, &mut buf);
            for k in 0..d {
                q[k] += 0.5 * dt * buf[k] / b;
            }
        }
        for k in 0..d {
            let res = path.value_at(j)[k] - driver[j * d + k] - q[k];
            max_res = max_res.max(res.abs());
        }
    }
    Ok(max_res)
}

/// Unbiased ensemble mean and covariance of a set of equal-length vectors.
pub fn ensemble_stats(samples: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if samples.len() < 2 {
        return Err(Error::InsufficientPaths { got: samples.len() });
    }
    let mut acc = MomentAccumulator::new(samples[0].len());
    for s in samples {
        if s.len() != samples[0].len() {
            return Err(Error::DimensionMismatch("ensemble sample lengths differ".into()));
        }
        acc.push(s);
    }
    Ok((acc.mean(), acc.covariance()?))
}

/// Ensemble statistics of path values at grid time `t`.
pub fn ensemble_stats_at(paths: &[LimitPath], t: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if paths.len() < 2 {
        return Err(Error::InsufficientPaths { got: paths.len() });
    }
    let j = paths[0].grid.index_of(t)?;
    let samples: Vec<Vec<f64>> = paths.iter().map(|p| p.value_at(j).to_vec()).collect();
    ensemble_stats(&samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{spectral_analyze, validate_generating_matrix, DEFAULT_EIG_TOL};
    use crate::stream::stream_from_seed;
    use approx::assert_relative_eq;

    fn analyze(h: &DMatrix<f64>) -> SpectralData {
        let g = validate_generating_matrix(h, 1e-9).unwrap();
        spectral_analyze(&g, DEFAULT_EIG_TOL, None).unwrap()
    }

    fn rpw_h(p: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[p, 1.0 - p, 1.0 - p, p])
    }

    fn sign_matrix(scale: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]) * scale
    }

    #[test]
    fn grids_validate_their_shape() {
        let g = TimeGrid::from_zero(1.0, 64).unwrap();
        assert_eq!(g.times()[0], 0.0);
        assert_eq!(g.t_max(), 1.0);
        let g = TimeGrid::from_one(10.0, 64).unwrap();
        assert_eq!(g.times()[0], 1.0);
        assert!(TimeGrid::custom(vec![0.5, 1.0], EquationKind::FromOne).is_err());
        assert!(TimeGrid::custom(vec![1.0, 1.0], EquationKind::FromOne).is_err());
    }

    #[test]
    fn zero_driver_gives_zero_path() {
        let s = analyze(&rpw_h(0.7));
        let grid = TimeGrid::from_zero(1.0, 128).unwrap();
        let mut rng = stream_from_seed(1);
        let path = simulate_equ1(&s, &DMatrix::zeros(2, 2), grid, &mut rng).unwrap();
        assert_eq!(path.values.iter().cloned().fold(0.0_f64, |a, b| a.max(b.abs())), 0.0);
        assert_eq!(sde_residual(&path).unwrap(), 0.0);
        let grid = TimeGrid::from_one(8.0, 64).unwrap();
        let path = simulate_equ2(&s, &DMatrix::zeros(2, 2), grid, &mut rng).unwrap();
        assert_eq!(path.values.iter().cloned().fold(0.0_f64, |a, b| a.max(b.abs())), 0.0);
    }

    #[test]
    fn zero_generator_reduces_to_brownian_motion() {
        // Ht = 0: the recursion telescopes to S = W exactly.
        let s = analyze(&rpw_h(0.5));
        let grid = TimeGrid::from_zero(1.0, 256).unwrap();
        let mut rng = stream_from_seed(2);
        let path = simulate_equ1(&s, &DMatrix::identity(2, 2), grid, &mut rng).unwrap();
        let driver = path.driver.as_ref().unwrap();
        for (v, w) in path.values.iter().zip(driver) {
            assert_relative_eq!(v, w, epsilon = 1e-12);
        }
        assert!(sde_residual(&path).unwrap() <= 1e-12);

        let grid = TimeGrid::from_one(8.0, 128).unwrap();
        let path = simulate_equ2(&s, &DMatrix::identity(2, 2), grid, &mut rng).unwrap();
        let driver = path.driver.as_ref().unwrap();
        for (v, w) in path.values.iter().zip(driver) {
            assert_relative_eq!(v, w, epsilon = 1e-12);
        }
    }

    #[test]
    fn critical_generator_rejected_for_start_at_zero() {
        let s = analyze(&rpw_h(0.75));
        let grid = TimeGrid::from_zero(1.0, 64).unwrap();
        assert!(matches!(
            PathEngine::from_zero(&s, &sign_matrix(1.0), grid),
            Err(Error::CriticalRegime { .. })
        ));
    }

    #[test]
    fn scalar_variance_matches_closed_form() {
        // Driver covariance sigma^2 (1,-1)'(1,-1), generator rho = 0.4:
        // Var of the first component of S(1) is sigma^2 / (1 - 2 rho).
        let s = analyze(&rpw_h(0.7));
        let sigma_sq = 0.21;
        let grid = TimeGrid::from_zero(1.0, 1024).unwrap();
        let engine = PathEngine::from_zero(&s, &sign_matrix(sigma_sq), grid).unwrap();
        let mut acc = MomentAccumulator::new(2);
        let mut rng = stream_from_seed(33);
        for _ in 0..30_000 {
            let e = engine.sample_endpoint(&mut rng);
            acc.push(&e.value);
        }
        let cov = acc.covariance().unwrap();
        let expected = sigma_sq / (1.0 - 0.8);
        assert_relative_eq!(cov[(0, 0)], expected, epsilon = 0.04 * expected);
        assert_relative_eq!(cov[(0, 1)], -expected, epsilon = 0.04 * expected);
    }

    #[test]
    fn critical_scalar_variance_grows_like_t_log_t() {
        // rho = 1/2 started at 1: Var Sh(T) = sigma^2 T ln T.
        let s = analyze(&rpw_h(0.75));
        let t_max = (4.0_f64).exp();
        let grid = TimeGrid::from_one(t_max, 512).unwrap();
        let engine = PathEngine::from_one(&s, &sign_matrix(1.0), grid).unwrap();
        let mut acc = MomentAccumulator::new(2);
        let mut rng = stream_from_seed(5);
        for _ in 0..40_000 {
            let e = engine.sample_endpoint(&mut rng);
            acc.push(&e.value);
        }
        let cov = acc.covariance().unwrap();
        let expected = t_max * 4.0;
        assert_relative_eq!(cov[(0, 0)], expected, epsilon = 0.05 * expected);
    }

    #[test]
    fn composite_with_zero_second_driver() {
        let s = analyze(&rpw_h(0.7));
        let grid = TimeGrid::from_zero(1.0, 128).unwrap();
        let mut rng = stream_from_seed(6);
        let g1 = simulate_equ1(&s, &sign_matrix(0.25), grid.clone(), &mut rng).unwrap();
        let g2 = simulate_equ1(&s, &DMatrix::zeros(2, 2), grid, &mut rng).unwrap();
        let c = composite_paths(&g1, &g2, &s).unwrap();
        let j = c.grid.len() - 1;
        // n = G1 and y = G1 H
        for k in 0..2 {
            assert_relative_eq!(c.n_at(j)[k], g1.value_at(j)[k], epsilon = 1e-12);
        }
        let mut expect = [0.0; 2];
        row_times_mat(g1.value_at(j), s.h(), &mut expect);
        for k in 0..2 {
            assert_relative_eq!(c.y_at(j)[k], expect[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn composite_grid_mismatch_is_detected() {
        let s = analyze(&rpw_h(0.7));
        let mut rng = stream_from_seed(7);
        let g1 = simulate_equ1(&s, &sign_matrix(0.25), TimeGrid::from_zero(1.0, 64).unwrap(), &mut rng)
            .unwrap();
        let g2 = simulate_equ1(&s, &sign_matrix(0.25), TimeGrid::from_zero(1.0, 65).unwrap(), &mut rng)
            .unwrap();
        assert!(matches!(composite_paths(&g1, &g2, &s), Err(Error::GridMismatch)));
    }

    #[test]
    fn residual_decreases_under_grid_refinement() {
        let s = analyze(&rpw_h(0.7));
        let median = |points: usize| -> f64 {
            let grid = TimeGrid::from_zero(1.0, points).unwrap();
            let engine = PathEngine::from_zero(&s, &sign_matrix(0.21), grid).unwrap();
            let mut residuals: Vec<f64> = (0..15)
                .map(|seed| {
                    let mut rng = crate::stream::derive_stream(900, seed);
                    sde_residual(&engine.sample_path(&mut rng)).unwrap()
                })
                .collect();
            residuals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            residuals[residuals.len() / 2]
        };
        let coarse = median(1 << 12);
        let fine = median(1 << 14);
        assert!(
            coarse / fine >= 1.5,
            "refinement did not shrink the residual: {coarse} -> {fine}"
        );
    }

    #[test]
    fn ensemble_stats_basics() {
        let samples = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let (mean, cov) = ensemble_stats(&samples).unwrap();
        assert_eq!(mean[0], 1.0);
        assert_eq!(cov[(0, 0)], 0.0);
        assert!(matches!(
            ensemble_stats(&samples[..1]),
            Err(Error::InsufficientPaths { got: 1 })
        ));
    }

    #[test]
    fn brownian_marginal_covariance_recovered() {
        // Ht = 0, Lambda = I: covariance of S(1) is the identity.
        let s = analyze(&rpw_h(0.5));
        let grid = TimeGrid::from_zero(1.0, 64).unwrap();
        let engine = PathEngine::from_zero(&s, &DMatrix::identity(2, 2), grid).unwrap();
        let mut acc = MomentAccumulator::new(2);
        let mut rng = stream_from_seed(8);
        for _ in 0..30_000 {
            acc.push(&engine.sample_endpoint(&mut rng).value);
        }
        let cov = acc.covariance().unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((cov[(i, j)] - expected).abs() < 0.025);
            }
        }
    }

    #[test]
    fn ensemble_stats_at_grid_times() {
        let s = analyze(&rpw_h(0.5));
        let grid = TimeGrid::from_zero(1.0, 32).unwrap();
        let engine = PathEngine::from_zero(&s, &DMatrix::identity(2, 2), grid.clone()).unwrap();
        let paths: Vec<LimitPath> = (0..200)
            .map(|i| {
                let mut rng = crate::stream::derive_stream(55, i);
                engine.sample_path(&mut rng)
            })
            .collect();
        let (_, cov) = ensemble_stats_at(&paths, 1.0).unwrap();
        assert!((cov[(0, 0)] - 1.0).abs() < 0.35);
        assert!(matches!(ensemble_stats_at(&paths, 0.33), Err(Error::BadGrid(_))));
    }

    #[test]
    fn path_csv_has_header_and_rows() {
        let s = analyze(&rpw_h(0.7));
        let grid = TimeGrid::from_zero(1.0, 16).unwrap();
        let mut rng = stream_from_seed(9);
        let path = simulate_equ1(&s, &sign_matrix(0.25), grid, &mut rng).unwrap();
        let csv = path.to_csv();
        let lines: Vec<&str> = csv.trim().lines().collect();
        assert_eq!(lines[0], "t,s_1,s_2,i_1,i_2");
        assert_eq!(lines.len(), 17);
    }
}
