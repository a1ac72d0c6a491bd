//! Addition rules: how many balls of each type enter the urn after a draw.
//!
//! A rule knows how to sample the replacement matrix D_m (row by row), and
//! declares its limiting first and second moments: the generating matrix H
//! (conditional mean of D_m) and the per-row covariance matrices V_q. The
//! shipped rules all have finite support, so the declared moments are exact.

use nalgebra::{DMatrix, RowDVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::spectral_norm;
use crate::stream::Stream;
use crate::urn::UrnState;

/// Sampling contract for D_m plus its conditional moments.
///
/// `sample_row` must fill one row of D_m; rows are sampled independently of
/// each other and of the draw, so the conditional row covariance is well
/// defined for every row, drawn or not.
pub trait AdditionRule: Send + Sync {
    fn dim(&self) -> usize;

    /// Declared limit H of the conditional means.
    fn declared_mean(&self) -> &DMatrix<f64>;

    /// Declared limit V_q of the conditional covariance of row q.
    fn declared_row_cov(&self, q: usize) -> &DMatrix<f64>;

    /// Upper bound on any sampled entry (finite support).
    fn support_bound(&self) -> f64;

    fn is_homogeneous(&self) -> bool {
        true
    }

    /// Conditional mean H_m of the next replacement matrix given the state
    /// reached after `state.m` draws.
    fn conditional_mean(&self, _state: &UrnState) -> DMatrix<f64> {
        self.declared_mean().clone()
    }

    /// One row of the conditional mean, written into `out`.
    fn conditional_mean_row(&self, _state: &UrnState, row: usize, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.declared_mean()[(row, k)];
        }
    }

    /// Conditional covariance of row q given the current state.
    fn conditional_row_cov(&self, _state: &UrnState, q: usize) -> DMatrix<f64> {
        self.declared_row_cov(q).clone()
    }

    /// Sample row `row` of D_m into `out`.
    fn sample_row(&self, state: &UrnState, row: usize, rng: &mut Stream, out: &mut [f64]);

    /// Sample the full replacement matrix (all rows independent).
    fn sample_full(&self, state: &UrnState, rng: &mut Stream) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        let mut buf = vec![0.0; d];
        for q in 0..d {
            self.sample_row(state, q, rng, &mut buf);
            for k in 0..d {
                m[(q, k)] = buf[k];
            }
        }
        m
    }

    fn describe(&self) -> String;
}

// ---------------------------------------------------------------------------
// Responses and the generalized play-the-winner rule
// ---------------------------------------------------------------------------

/// A response distribution d_k(xi) with support in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ResponseSpec {
    /// Bernoulli success indicator: d(xi) = xi with P(xi = 1) = p.
    Dichotomous { p: f64 },
    /// Finite discrete distribution given as (value, weight) atoms.
    Discrete { atoms: Vec<(f64, f64)> },
}

impl ResponseSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ResponseSpec::Dichotomous { p } => {
                if !(0.0..=1.0).contains(p) {
                    return Err(Error::InvalidProbability(format!("p = {p} outside [0, 1]")));
                }
            }
            ResponseSpec::Discrete { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::InvalidProbability("empty response support".into()));
                }
                let mut total = 0.0;
                for &(v, w) in atoms {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::InvalidProbability(format!(
                            "response value {v} outside [0, 1]"
                        )));
                    }
                    if w < 0.0 {
                        return Err(Error::InvalidProbability(format!("negative weight {w}")));
                    }
                    total += w;
                }
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidProbability(format!(
                        "weights sum to {total}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match self {
            ResponseSpec::Dichotomous { p } => *p,
            ResponseSpec::Discrete { atoms } => atoms.iter().map(|&(v, w)| v * w).sum(),
        }
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        match self {
            ResponseSpec::Dichotomous { p } => p * (1.0 - p),
            ResponseSpec::Discrete { atoms } => {
                atoms.iter().map(|&(v, w)| w * (v - m) * (v - m)).sum()
            }
        }
    }

    pub fn sample(&self, rng: &mut Stream) -> f64 {
        match self {
            ResponseSpec::Dichotomous { p } => {
                if rng.random::<f64>() < *p {
                    1.0
                } else {
                    0.0
                }
            }
            ResponseSpec::Discrete { atoms } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for &(v, w) in atoms {
                    acc += w;
                    if u < acc {
                        return v;
                    }
                }
                atoms.last().unwrap().0
            }
        }
    }
}

/// Parameters of the generalized randomized play-the-winner rule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RpwParams {
    pub d1: ResponseSpec,
    pub d2: ResponseSpec,
}

impl RpwParams {
    /// Dichotomous responses with success probabilities p1, p2.
    pub fn dichotomous(p1: f64, p2: f64) -> Self {
        RpwParams {
            d1: ResponseSpec::Dichotomous { p: p1 },
            d2: ResponseSpec::Dichotomous { p: p2 },
        }
    }
}

/// Two-color rule: a success on the drawn treatment reinforces its own color,
/// a failure reinforces the other. Row 1 of D is (d1, 1 - d1), row 2 is
/// (1 - d2, d2); exactly one ball enters per draw.
pub struct RpwRule {
    params: RpwParams,
    h: DMatrix<f64>,
    v_rows: [DMatrix<f64>; 2],
}

/// Build the generalized play-the-winner rule.
pub fn rpw_rule(params: RpwParams) -> Result<RpwRule> {
    params.d1.validate()?;
    params.d2.validate()?;
    let (p1, p2) = (params.d1.mean(), params.d2.mean());
    let (a1, a2) = (params.d1.variance(), params.d2.variance());
    let h = DMatrix::from_row_slice(2, 2, &[p1, 1.0 - p1, 1.0 - p2, p2]);
    let sign = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
    let v_rows = [sign.clone() * a1, sign * a2];
    Ok(RpwRule { params, h, v_rows })
}

impl AdditionRule for RpwRule {
    fn dim(&self) -> usize {
        2
    }

    fn declared_mean(&self) -> &DMatrix<f64> {
        &self.h
    }

    fn declared_row_cov(&self, q: usize) -> &DMatrix<f64> {
        &self.v_rows[q]
    }

    fn support_bound(&self) -> f64 {
        1.0
    }

    fn sample_row(&self, _state: &UrnState, row: usize, rng: &mut Stream, out: &mut [f64]) {
        if row == 0 {
            let x = self.params.d1.sample(rng);
            out[0] = x;
            out[1] = 1.0 - x;
        } else {
            let x = self.params.d2.sample(rng);
            out[0] = 1.0 - x;
            out[1] = x;
        }
    }

    fn describe(&self) -> String {
        format!(
            "rpw(p1={:.6}, p2={:.6}, a1={:.6}, a2={:.6})",
            self.params.d1.mean(),
            self.params.d2.mean(),
            self.params.d1.variance(),
            self.params.d2.variance()
        )
    }
}

// ---------------------------------------------------------------------------
// Homogeneous rules with finite vector supports
// ---------------------------------------------------------------------------

/// Finite-support sampler for one row of D: atoms (vector, weight).
#[derive(Debug, Clone)]
pub struct RowSampler {
    atoms: Vec<(Vec<f64>, f64)>,
}

impl RowSampler {
    pub fn new(atoms: Vec<(Vec<f64>, f64)>) -> Self {
        RowSampler { atoms }
    }

    /// Point mass at a single vector.
    pub fn point_mass(v: Vec<f64>) -> Self {
        RowSampler { atoms: vec![(v, 1.0)] }
    }

    /// One-hot vector e_k with probability weights[k].
    pub fn one_hot(weights: &[f64]) -> Self {
        let d = weights.len();
        let atoms = weights
            .iter()
            .enumerate()
            .map(|(k, &w)| {
                let mut e = vec![0.0; d];
                e[k] = 1.0;
                (e, w)
            })
            .collect();
        RowSampler { atoms }
    }

    pub fn atoms(&self) -> &[(Vec<f64>, f64)] {
        &self.atoms
    }
}

/// Rule with i.i.d. replacement matrices: each row has its own finite-support
/// distribution, and the declared moments are computed exactly from the
/// support.
pub struct HomogeneousRule {
    rows: Vec<RowSampler>,
    h: DMatrix<f64>,
    v_rows: Vec<DMatrix<f64>>,
    bound: f64,
    label: String,
}

/// Build a homogeneous rule from per-row samplers. Supports must be
/// nonempty with nonnegative entries and weights summing to 1 (unless
/// `allow_negative` research mode is wanted, see `homogeneous_rule_unchecked`).
pub fn homogeneous_rule(rows: Vec<RowSampler>) -> Result<HomogeneousRule> {
    build_homogeneous(rows, false, "homogeneous".into())
}

/// Same as `homogeneous_rule` but skipping the nonnegativity requirement on
/// support vectors; the positivity of the urn is then the caller's problem.
pub fn homogeneous_rule_unchecked(rows: Vec<RowSampler>) -> Result<HomogeneousRule> {
    build_homogeneous(rows, true, "homogeneous-unchecked".into())
}

/// Deterministic rule D = H (point mass on every row).
pub fn deterministic_rule(h: &DMatrix<f64>) -> Result<HomogeneousRule> {
    let rows = (0..h.nrows())
        .map(|q| RowSampler::point_mass(h.row(q).iter().cloned().collect()))
        .collect();
    build_homogeneous(rows, false, "deterministic".into())
}

/// Rule whose every row is an independent one-hot draw with probabilities w.
pub fn one_hot_rule(weights: &[f64]) -> Result<HomogeneousRule> {
    let rows = (0..weights.len()).map(|_| RowSampler::one_hot(weights)).collect();
    build_homogeneous(rows, false, "one-hot".into())
}

fn build_homogeneous(
    rows: Vec<RowSampler>,
    allow_negative: bool,
    label: String,
) -> Result<HomogeneousRule> {
    let d = rows.len();
    if d < 1 {
        return Err(Error::EmptySupport { row: 0 });
    }
    let mut h = DMatrix::zeros(d, d);
    let mut v_rows = Vec::with_capacity(d);
    let mut bound = 0.0_f64;
    for (q, sampler) in rows.iter().enumerate() {
        if sampler.atoms.is_empty() {
            return Err(Error::EmptySupport { row: q });
        }
        let mut total_w = 0.0;
        for (x, w) in &sampler.atoms {
            if x.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "row {q} atom has length {} instead of {d}",
                    x.len()
                )));
            }
            if *w < 0.0 {
                return Err(Error::InvalidProbability(format!("negative weight {w} in row {q}")));
            }
            for &e in x {
                if e < 0.0 && !allow_negative {
                    return Err(Error::NegativeSupportEntry { value: e });
                }
                bound = bound.max(e.abs());
            }
            total_w += w;
        }
        if (total_w - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidProbability(format!(
                "row {q} weights sum to {total_w}, expected 1"
            )));
        }
        // Exact first and second moments from the support.
        let mut mean = RowDVector::zeros(d);
        for (x, w) in &sampler.atoms {
            for k in 0..d {
                mean[k] += x[k] * w;
            }
        }
        let mut cov = DMatrix::zeros(d, d);
        for (x, w) in &sampler.atoms {
            for k in 0..d {
                for l in 0..d {
                    cov[(k, l)] += w * (x[k] - mean[k]) * (x[l] - mean[l]);
                }
            }
        }
        for k in 0..d {
            h[(q, k)] = mean[k];
        }
        v_rows.push(cov);
    }
    Ok(HomogeneousRule { rows, h, v_rows, bound, label })
}

impl AdditionRule for HomogeneousRule {
    fn dim(&self) -> usize {
        self.rows.len()
    }

    fn declared_mean(&self) -> &DMatrix<f64> {
        &self.h
    }

    fn declared_row_cov(&self, q: usize) -> &DMatrix<f64> {
        &self.v_rows[q]
    }

    fn support_bound(&self) -> f64 {
        self.bound
    }

    fn sample_row(&self, _state: &UrnState, row: usize, rng: &mut Stream, out: &mut [f64]) {
        let sampler = &self.rows[row];
        if sampler.atoms.len() == 1 {
            out.copy_from_slice(&sampler.atoms[0].0);
            return;
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (x, w) in &sampler.atoms {
            acc += w;
            if u < acc {
                out.copy_from_slice(x);
                return;
            }
        }
        out.copy_from_slice(&sampler.atoms.last().unwrap().0);
    }

    fn describe(&self) -> String {
        format!("{}(d={})", self.label, self.rows.len())
    }
}

// ---------------------------------------------------------------------------
// Non-homogeneous wrapper
// ---------------------------------------------------------------------------

/// Produces the conditional mean H_m for the next stage from the current
/// state (the next stage index is `state.m + 1`).
pub type MeanPerturbation = dyn Fn(&UrnState) -> DMatrix<f64> + Send + Sync;

/// Wraps a base rule with a history-dependent conditional mean. Sampling
/// shifts every row of the base sample by the mean difference, then floors
/// at zero and rescales the row back to its pre-floor sum.
pub struct NonhomogeneousRule {
    base: Box<dyn AdditionRule>,
    perturbation: Box<MeanPerturbation>,
    shift_bound: f64,
}

/// Build a non-homogeneous rule around `base`. The perturbation must keep
/// every row sum equal to the base row sum (checked at every stage).
/// `shift_bound` widens the declared support bound to cover the shifts.
pub fn nonhomogeneous_wrapper(
    base: Box<dyn AdditionRule>,
    perturbation: Box<MeanPerturbation>,
    shift_bound: f64,
) -> NonhomogeneousRule {
    NonhomogeneousRule { base, perturbation, shift_bound }
}

/// The stock perturbation family H_m = H + m^exponent * E, with E a fixed
/// matrix of zero row sums.
pub fn power_law_perturbation(
    base_mean: DMatrix<f64>,
    direction: DMatrix<f64>,
    exponent: f64,
) -> Result<Box<MeanPerturbation>> {
    let d = base_mean.nrows();
    if direction.shape() != (d, d) {
        return Err(Error::DimensionMismatch("perturbation direction shape".into()));
    }
    for q in 0..d {
        let s: f64 = direction.row(q).sum();
        if s.abs() > 1e-9 {
            return Err(Error::RowSumViolation { row: q, sum: s });
        }
    }
    Ok(Box::new(move |state: &UrnState| {
        let m = (state.m + 1) as f64;
        &base_mean + &direction * m.powf(exponent)
    }))
}

impl NonhomogeneousRule {
    fn checked_mean(&self, state: &UrnState) -> Result<DMatrix<f64>> {
        let hm = (self.perturbation)(state);
        let d = self.base.dim();
        if hm.shape() != (d, d) {
            return Err(Error::DimensionMismatch("perturbed mean shape".into()));
        }
        for q in 0..d {
            let s: f64 = hm.row(q).sum();
            let base_s: f64 = self.base.declared_mean().row(q).sum();
            if (s - base_s).abs() > 1e-9 {
                return Err(Error::RowSumViolation { row: q, sum: s });
            }
        }
        Ok(hm)
    }
}

impl AdditionRule for NonhomogeneousRule {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn declared_mean(&self) -> &DMatrix<f64> {
        self.base.declared_mean()
    }

    fn declared_row_cov(&self, q: usize) -> &DMatrix<f64> {
        self.base.declared_row_cov(q)
    }

    fn support_bound(&self) -> f64 {
        self.base.support_bound() + self.shift_bound
    }

    fn is_homogeneous(&self) -> bool {
        false
    }

    fn conditional_mean(&self, state: &UrnState) -> DMatrix<f64> {
        self.checked_mean(state).expect("perturbation violated the row-sum contract")
    }

    fn conditional_mean_row(&self, state: &UrnState, row: usize, out: &mut [f64]) {
        let hm = self.conditional_mean(state);
        for (k, o) in out.iter_mut().enumerate() {
            *o = hm[(row, k)];
        }
    }

    fn sample_row(&self, state: &UrnState, row: usize, rng: &mut Stream, out: &mut [f64]) {
        self.base.sample_row(state, row, rng, out);
        let hm = self.conditional_mean(state);
        let base_h = self.base.declared_mean();
        let mut target = 0.0;
        for (k, o) in out.iter_mut().enumerate() {
            *o += hm[(row, k)] - base_h[(row, k)];
            target += *o;
        }
        if out.iter().any(|&x| x < 0.0) {
            let mut positive = 0.0;
            for o in out.iter_mut() {
                *o = o.max(0.0);
                positive += *o;
            }
            if positive > 0.0 && target > 0.0 {
                let scale = target / positive;
                for o in out.iter_mut() {
                    *o *= scale;
                }
            }
        }
    }

    fn describe(&self) -> String {
        format!("nonhomogeneous({})", self.base.describe())
    }
}

// ---------------------------------------------------------------------------
// Assumption diagnostics
// ---------------------------------------------------------------------------

/// Descriptive report on how fast a mean sequence H_m approaches its limit.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub horizon: u64,
    /// Log-spaced stages at which partial sums were recorded.
    pub checkpoints: Vec<u64>,
    /// Partial sums of ||H_m - H|| (spectral norm).
    pub deviation_partial_sums: Vec<f64>,
    /// Partial sums of ||H_m - H|| / sqrt(m).
    pub sqrt_weighted_partial_sums: Vec<f64>,
    /// Fitted log-log growth exponent of the deviation partial sums; None
    /// when the sums are identically zero.
    pub growth_exponent: Option<f64>,
    /// 1/2 minus the growth exponent; None means unbounded (H_m = H).
    pub tau_estimate: Option<f64>,
    /// Share of the sqrt-weighted sum accrued in the second half of the
    /// horizon; near zero indicates a visible plateau (summability).
    pub sqrt_weighted_tail_fraction: f64,
}

/// Accumulate partial sums of ||H_m - H|| and ||H_m - H||/sqrt(m) for
/// m = 1..=horizon and fit a growth exponent. Purely descriptive.
pub fn assumption_diagnostics(
    mean_at: &dyn Fn(u64) -> DMatrix<f64>,
    h: &DMatrix<f64>,
    horizon: u64,
) -> DiagnosticsReport {
    assert!(horizon >= 1);
    let mut checkpoints = Vec::new();
    let mut cp = 1u64;
    while cp < horizon {
        checkpoints.push(cp);
        cp *= 2;
    }
    checkpoints.push(horizon);

    let mut dev_sums = Vec::with_capacity(checkpoints.len());
    let mut sqrt_sums = Vec::with_capacity(checkpoints.len());
    let mut dev_acc = 0.0;
    let mut sqrt_acc = 0.0;
    let mut half_mark = 0.0;
    let mut next = 0usize;
    for m in 1..=horizon {
        let deviation = spectral_norm(&(mean_at(m) - h));
        dev_acc += deviation;
        sqrt_acc += deviation / (m as f64).sqrt();
        if m == horizon / 2 {
            half_mark = sqrt_acc;
        }
        if next < checkpoints.len() && m == checkpoints[next] {
            dev_sums.push(dev_acc);
            sqrt_sums.push(sqrt_acc);
            next += 1;
        }
    }

    let (growth_exponent, tau_estimate) = if dev_acc <= f64::MIN_POSITIVE {
        (None, None)
    } else {
        // Fit over the upper half of the checkpoints, where the asymptotic
        // power law dominates start-up effects.
        let lo = checkpoints.len() / 2;
        let xs: Vec<f64> = checkpoints[lo..].iter().map(|&n| (n as f64).ln()).collect();
        let ys: Vec<f64> = dev_sums[lo..].iter().map(|&s| s.max(f64::MIN_POSITIVE).ln()).collect();
        let slope = crate::linalg::regression_slope(&xs, &ys);
        (Some(slope), Some(0.5 - slope))
    };

    let tail_fraction = if sqrt_acc > 0.0 { (sqrt_acc - half_mark) / sqrt_acc } else { 0.0 };

    DiagnosticsReport {
        horizon,
        checkpoints,
        deviation_partial_sums: dev_sums,
        sqrt_weighted_partial_sums: sqrt_sums,
        growth_exponent,
        tau_estimate,
        sqrt_weighted_tail_fraction: tail_fraction,
    }
}
