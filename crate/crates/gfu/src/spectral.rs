//! Validation of generating matrices and extraction of the spectral
//! quantities that drive every downstream formula.
//!
//! A generating matrix H has nonnegative off-diagonal entries and constant
//! row sums s > 0; after normalization by s its Perron eigenvalue is 1 with
//! right eigenvector 1' and a left probability eigenvector v. The fluctuation
//! generator is Ht = H - 1'v, and the regime of the model is decided by
//! rho, the largest real part among the non-Perron eigenvalues:
//! rho < 1/2 subcritical, rho = 1/2 critical, rho > 1/2 unsupported.

use nalgebra::{Complex, DMatrix, DVector, RowDVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{eigenvector_for, spectral_norm};

/// Default tolerance for eigenvalue comparisons and regime boundaries.
pub const DEFAULT_EIG_TOL: f64 = 1e-9;

/// A validated mean replacement matrix, normalized to unit row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratingMatrix {
    h: DMatrix<f64>,
    s: f64,
}

impl GeneratingMatrix {
    /// Normalized matrix (unit row sums).
    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// Original common row sum.
    pub fn row_sum_s(&self) -> f64 {
        self.s
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }
}

/// Regime classification by rho.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Subcritical,
    Critical,
    Supercritical,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regime::Subcritical => write!(f, "subcritical"),
            Regime::Critical => write!(f, "critical"),
            Regime::Supercritical => write!(f, "supercritical"),
        }
    }
}

/// Classify rho against the 1/2 boundary with tolerance band `tol`.
pub fn classify_regime(rho: f64, tol: f64) -> Regime {
    if rho < 0.5 - tol {
        Regime::Subcritical
    } else if rho <= 0.5 + tol {
        Regime::Critical
    } else {
        Regime::Supercritical
    }
}

/// An eigenvalue on the critical line together with its right eigenvector.
#[derive(Debug, Clone)]
pub struct CriticalPair {
    pub lambda: Complex<f64>,
    /// Unit-norm right eigenvector, phase fixed so the first component of
    /// magnitude > 1e-8 is positive real.
    pub right: DVector<Complex<f64>>,
}

/// Everything the covariance and limit-process machinery needs from H.
#[derive(Debug, Clone)]
pub struct SpectralData {
    h: DMatrix<f64>,
    v: RowDVector<f64>,
    eigenvalues: Vec<Complex<f64>>,
    rho: f64,
    nu: u32,
    h_tilde: DMatrix<f64>,
    regime: Regime,
    critical_pairs: Vec<CriticalPair>,
    eig_tol: f64,
}

impl SpectralData {
    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    /// Normalized generating matrix H.
    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// Left Perron eigenvector, normalized to sum 1.
    pub fn v(&self) -> &RowDVector<f64> {
        &self.v
    }

    /// All d eigenvalues; the one closest to 1 is listed first.
    pub fn eigenvalues(&self) -> &[Complex<f64>] {
        &self.eigenvalues
    }

    /// Largest real part among the non-Perron eigenvalues.
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Largest Jordan block order among eigenvalues attaining rho.
    pub fn nu(&self) -> u32 {
        self.nu
    }

    /// Fluctuation generator Ht = H - 1'v.
    pub fn h_tilde(&self) -> &DMatrix<f64> {
        &self.h_tilde
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn critical_pairs(&self) -> &[CriticalPair] {
        &self.critical_pairs
    }

    pub fn eig_tol(&self) -> f64 {
        self.eig_tol
    }

    /// Projection I - 1'v onto the zero-sum subspace (acting on row vectors
    /// from the right).
    pub fn centering_projection(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut p = DMatrix::identity(d, d);
        for i in 0..d {
            for j in 0..d {
                p[(i, j)] -= self.v[j];
            }
        }
        p
    }

    /// t^Ht = exp(Ht ln t) for t > 0.
    pub fn matrix_power(&self, t: f64) -> Result<DMatrix<f64>> {
        matrix_power(self, t)
    }
}

/// Validate a raw replacement matrix: square, d >= 2, constant row sums
/// s > 0 (within `tol`), nonnegative off-diagonal entries after dividing by
/// s. Rows are rescaled individually so the result has unit row sums to
/// machine precision.
pub fn validate_generating_matrix(raw: &DMatrix<f64>, tol: f64) -> Result<GeneratingMatrix> {
    let (rows, cols) = raw.shape();
    if rows != cols || rows < 2 {
        return Err(Error::InvalidDimension { rows, cols });
    }
    let sums: Vec<f64> = (0..rows).map(|q| raw.row(q).sum()).collect();
    let max = sums.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = sums.iter().cloned().fold(f64::INFINITY, f64::min);
    if max - min > tol {
        return Err(Error::NonConstantRowSums { spread: max - min, tol });
    }
    let s = sums.iter().sum::<f64>() / rows as f64;
    if s <= tol {
        return Err(Error::NonpositiveRowSum { s });
    }
    let mut h = raw.clone();
    for q in 0..rows {
        let row_scale = sums[q];
        for k in 0..cols {
            h[(q, k)] /= row_scale;
        }
    }
    for q in 0..rows {
        for k in 0..cols {
            if k != q && h[(q, k)] < -tol {
                return Err(Error::NegativeOffDiagonal { row: q, col: k, value: h[(q, k)] });
            }
        }
    }
    Ok(GeneratingMatrix { h, s })
}

/// Full spectral analysis of a validated generating matrix.
///
/// The Perron eigenvalue 1 must be simple within `eig_tol`. The Jordan order
/// nu defaults to 1 when every eigenvalue attaining rho is simple, and also
/// when H is normal (hence diagonalizable); any other repetition requires
/// `nu_override`. A supercritical rho is rejected because none of the
/// covariance formulas apply there.
pub fn spectral_analyze(
    g: &GeneratingMatrix,
    eig_tol: f64,
    nu_override: Option<u32>,
) -> Result<SpectralData> {
    let h = g.h().clone();
    let d = h.nrows();
    let eigs_raw = h.complex_eigenvalues();
    let mut eigs: Vec<Complex<f64>> = eigs_raw.iter().cloned().collect();

    // Locate the Perron root (the eigenvalue closest to 1).
    let perron_idx = (0..d)
        .min_by(|&a, &b| {
            let da = (eigs[a] - Complex::new(1.0, 0.0)).norm();
            let db = (eigs[b] - Complex::new(1.0, 0.0)).norm();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap();
    if (eigs[perron_idx] - Complex::new(1.0, 0.0)).norm() > 1e-6 {
        return Err(Error::EigenFailure(format!(
            "no eigenvalue near 1 (closest: {})",
            eigs[perron_idx]
        )));
    }
    let near_one = eigs
        .iter()
        .filter(|l| (*l - Complex::new(1.0, 0.0)).norm() <= eig_tol.max(1e-12))
        .count();
    if near_one > 1 {
        return Err(Error::NonSimplePerronRoot { count: near_one, tol: eig_tol });
    }
    eigs.swap(0, perron_idx);
    eigs[0] = Complex::new(1.0, 0.0);
    // Deterministic ordering of the rest: by descending real part, then
    // imaginary part.
    eigs[1..].sort_by(|a, b| {
        b.re.partial_cmp(&a.re).unwrap().then(b.im.partial_cmp(&a.im).unwrap())
    });

    let rho = eigs[1..].iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    let regime = classify_regime(rho, eig_tol);
    if regime == Regime::Supercritical {
        return Err(Error::SupercriticalUnsupported { rho });
    }

    // Left Perron eigenvector: solve (H' - I) v' = 0 with the last equation
    // replaced by the normalization sum(v) = 1.
    let mut system = h.transpose() - DMatrix::identity(d, d);
    for j in 0..d {
        system[(d - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(d);
    rhs[d - 1] = 1.0;
    let sol = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::EigenFailure("stationary solve is singular".into()))?;
    let mut v = RowDVector::from_fn(d, |_, j| sol[j]);
    for (index, &value) in v.iter().enumerate() {
        if value < -eig_tol {
            return Err(Error::NegativeStationaryMass { index, value });
        }
    }
    for value in v.iter_mut() {
        if *value < 0.0 {
            *value = 0.0;
        }
    }
    let total: f64 = v.iter().sum();
    v /= total;

    // Jordan order at rho. Eigenvalues attaining rho with algebraic
    // multiplicity 1 force nu = 1; so does a normal H (diagonalizable).
    // Multiplicity clustering needs a floor well above eig_tol: a defective
    // pair splits at the sqrt(machine-eps) scale (~1e-8) under the
    // eigensolver's backward error, so clustering at 1e-9 would silently
    // report it as simple.
    let cluster_tol = eig_tol.max(1e-7);
    let attaining: Vec<Complex<f64>> =
        eigs[1..].iter().filter(|l| l.re >= rho - eig_tol).cloned().collect();
    let all_simple = attaining.iter().all(|l| {
        eigs[1..].iter().filter(|m| (*m - l).norm() <= cluster_tol).count() <= 1
    });
    let normal = spectral_norm(&(&h * h.transpose() - h.transpose() * &h))
        <= 1e-10 * spectral_norm(&h).powi(2).max(1.0);
    let nu = if all_simple || normal {
        1
    } else {
        match nu_override {
            Some(n) if n >= 1 => n,
            _ => return Err(Error::AmbiguousNu { rho }),
        }
    };

    let mut h_tilde = h.clone();
    for i in 0..d {
        for j in 0..d {
            h_tilde[(i, j)] -= v[j];
        }
    }

    let mut critical_pairs = Vec::new();
    if regime == Regime::Critical {
        for l in eigs[1..].iter().filter(|l| (l.re - 0.5).abs() <= eig_tol) {
            let right = eigenvector_for(&h, *l, false)?;
            critical_pairs.push(CriticalPair { lambda: *l, right });
        }
    }

    Ok(SpectralData { h, v, eigenvalues: eigs, rho, nu, h_tilde, regime, critical_pairs, eig_tol })
}

/// t^Ht via the matrix exponential of Ht * ln t.
pub fn matrix_power(s: &SpectralData, t: f64) -> Result<DMatrix<f64>> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::OverflowDomain { t });
    }
    let m = (s.h_tilde.clone() * t.ln()).exp();
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::OverflowDomain { t });
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn rpw_h(p1: f64, p2: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[p1, 1.0 - p1, 1.0 - p2, p2])
    }

    fn analyze(h: &DMatrix<f64>) -> SpectralData {
        let g = validate_generating_matrix(h, DEFAULT_EIG_TOL).unwrap();
        spectral_analyze(&g, DEFAULT_EIG_TOL, None).unwrap()
    }

    #[test]
    fn validation_accepts_row_stochastic_matrix() {
        let g = validate_generating_matrix(&rpw_h(0.5, 0.5), 1e-9).unwrap();
        assert_eq!(g.row_sum_s(), 1.0);
        assert_eq!(g.h(), &rpw_h(0.5, 0.5));
    }

    #[test]
    fn validation_normalizes_common_row_sum() {
        let raw = DMatrix::from_row_slice(2, 2, &[1.4, 0.6, 0.6, 1.4]);
        let g = validate_generating_matrix(&raw, 1e-9).unwrap();
        assert_relative_eq!(g.row_sum_s(), 2.0, epsilon = 1e-12);
        assert_relative_eq!(g.h(), &rpw_h(0.7, 0.7), epsilon = 1e-15);
    }

    #[test]
    fn validation_rejects_unequal_row_sums() {
        let raw = DMatrix::from_row_slice(2, 2, &[0.5, 0.6, 0.5, 0.5]);
        assert!(matches!(
            validate_generating_matrix(&raw, 1e-9),
            Err(Error::NonConstantRowSums { .. })
        ));
    }

    #[test]
    fn validation_rejects_negative_off_diagonal() {
        let raw = DMatrix::from_row_slice(2, 2, &[1.1, -0.1, 0.4, 0.6]);
        assert!(matches!(
            validate_generating_matrix(&raw, 1e-9),
            Err(Error::NegativeOffDiagonal { .. })
        ));
    }

    #[test]
    fn rank_one_matrix_has_zero_generator() {
        let s = analyze(&rpw_h(0.5, 0.5));
        assert_relative_eq!(s.v()[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(s.rho(), 0.0, epsilon = 1e-12);
        assert_eq!(s.nu(), 1);
        assert_relative_eq!(s.h_tilde().abs().max(), 0.0, epsilon = 1e-12);
        assert_eq!(s.regime(), Regime::Subcritical);
    }

    #[test]
    fn rpw_spectrum_matches_closed_form() {
        // p1 = p2 = 0.7: v = (1/2, 1/2), second eigenvalue p1 - q2 = 0.4
        let s = analyze(&rpw_h(0.7, 0.7));
        assert_relative_eq!(s.v()[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(s.v()[1], 0.5, epsilon = 1e-12);
        assert_relative_eq!(s.rho(), 0.4, epsilon = 1e-12);
        assert_eq!(s.nu(), 1);
        assert_eq!(s.regime(), Regime::Subcritical);
    }

    #[test]
    fn symmetric_doubly_stochastic_three_colors() {
        // Eigenvalues of (J - I)/2 are {1, -1/2, -1/2}; the matrix is normal,
        // so the repeated eigenvalue still yields nu = 1.
        let h = DMatrix::from_row_slice(3, 3, &[0.0, 0.5, 0.5, 0.5, 0.0, 0.5, 0.5, 0.5, 0.0]);
        let s = analyze(&h);
        for k in 0..3 {
            assert_relative_eq!(s.v()[k], 1.0 / 3.0, epsilon = 1e-10);
        }
        assert_relative_eq!(s.rho(), -0.5, epsilon = 1e-10);
        assert_eq!(s.nu(), 1);
        let mut sorted: Vec<f64> = s.eigenvalues().iter().map(|l| l.re).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(sorted[0], -0.5, epsilon = 1e-10);
        assert_relative_eq!(sorted[1], -0.5, epsilon = 1e-10);
        assert_relative_eq!(sorted[2], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn identity_matrix_rejected_for_non_simple_perron_root() {
        let h = DMatrix::identity(2, 2);
        let g = validate_generating_matrix(&h, 1e-9).unwrap();
        assert!(matches!(
            spectral_analyze(&g, DEFAULT_EIG_TOL, None),
            Err(Error::NonSimplePerronRoot { .. })
        ));
    }

    #[test]
    fn supercritical_rho_rejected() {
        let g = validate_generating_matrix(&rpw_h(0.9, 0.9), 1e-9).unwrap();
        assert!(matches!(
            spectral_analyze(&g, DEFAULT_EIG_TOL, None),
            Err(Error::SupercriticalUnsupported { .. })
        ));
    }

    #[test]
    fn defective_spectrum_requires_and_accepts_override() {
        // H = 1'v + eps a'b with b a' = 0 builds a genuine Jordan block at
        // the repeated eigenvalue 0; the matrix is not normal, so detection
        // must refuse to guess and accept an explicit override.
        let d = 3;
        let eps = 0.05;
        let a = [1.0, 1.0, -2.0];
        let b = [1.0, -1.0, 0.0];
        let mut h = DMatrix::from_element(d, d, 1.0 / 3.0);
        for i in 0..d {
            for j in 0..d {
                h[(i, j)] += eps * a[i] * b[j];
            }
        }
        let g = validate_generating_matrix(&h, 1e-9).unwrap();
        assert!(matches!(
            spectral_analyze(&g, DEFAULT_EIG_TOL, None),
            Err(Error::AmbiguousNu { .. })
        ));
        let s = spectral_analyze(&g, DEFAULT_EIG_TOL, Some(2)).unwrap();
        assert_eq!(s.nu(), 2);
        // the defective pair is computed with sqrt(machine-eps)-scale error
        assert_relative_eq!(s.rho(), 0.0, epsilon = 1e-7);
    }

    #[test]
    fn critical_rpw_exposes_critical_pair() {
        let s = analyze(&rpw_h(0.75, 0.75));
        assert_eq!(s.regime(), Regime::Critical);
        assert_eq!(s.critical_pairs().len(), 1);
        let pair = &s.critical_pairs()[0];
        assert_relative_eq!(pair.lambda.re, 0.5, epsilon = 1e-12);
        // eigenvector proportional to (1, -1)
        assert_relative_eq!((pair.right[0] + pair.right[1]).norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn matrix_power_at_one_is_identity() {
        let s = analyze(&rpw_h(0.7, 0.7));
        let m = s.matrix_power(1.0).unwrap();
        assert_relative_eq!(m, DMatrix::identity(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn matrix_power_closed_form_for_idempotent_generator() {
        // Ht = rho * P with P = (0.5, -0.5)' (1, -1) idempotent, so
        // t^Ht = I + (t^rho - 1) P.
        let s = analyze(&rpw_h(0.7, 0.7));
        let p = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        let t = 4.0_f64;
        let expected = DMatrix::identity(2, 2) + p * (t.powf(0.4) - 1.0);
        assert_relative_eq!(s.matrix_power(t).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn matrix_power_of_zero_generator_is_identity() {
        let s = analyze(&rpw_h(0.5, 0.5));
        for &t in &[0.01, 0.5, 7.3, 1e4] {
            assert_relative_eq!(
                s.matrix_power(t).unwrap(),
                DMatrix::identity(2, 2),
                epsilon = 1e-13
            );
        }
    }

    #[test]
    fn matrix_power_rejects_nonpositive_t() {
        let s = analyze(&rpw_h(0.7, 0.7));
        assert!(matches!(s.matrix_power(0.0), Err(Error::OverflowDomain { .. })));
        assert!(matches!(s.matrix_power(-2.0), Err(Error::OverflowDomain { .. })));
    }

    #[test]
    fn growth_rate_of_matrix_power_tracks_rho() {
        // ||a^Ht|| / (a^(rho+) log^(nu-1) a) stays bounded and the log-log
        // slope of ||a^Ht|| recovers rho+ = max(rho, 0). The zero eigenvalue
        // of Ht (Perron direction) contributes the O(1) projector 1'v, so
        // the norm cannot decay below a constant even when rho < 0.
        for h in [
            rpw_h(0.7, 0.7),
            rpw_h(0.75, 0.75),
            rpw_h(0.5, 0.5),
            DMatrix::from_row_slice(3, 3, &[0.0, 0.5, 0.5, 0.5, 0.0, 0.5, 0.5, 0.5, 0.0]),
        ] {
            let s = analyze(&h);
            let rho_plus = s.rho().max(0.0);
            let mut lns = Vec::new();
            let mut ln_norms = Vec::new();
            let mut ratios = Vec::new();
            for k in 1..=20 {
                let a = (2.0_f64).powi(k);
                let norm = spectral_norm(&s.matrix_power(a).unwrap());
                let envelope = a.powf(rho_plus) * a.ln().max(1.0).powi(s.nu() as i32 - 1);
                ratios.push(norm / envelope);
                lns.push(a.ln());
                ln_norms.push(norm.ln());
            }
            let spread = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                / ratios.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(spread.is_finite() && spread < 50.0, "unbounded growth ratio");
            let slope = crate::linalg::regression_slope(&lns, &ln_norms);
            assert!(
                (slope - rho_plus).abs() < 0.02,
                "slope {slope} differs from rho+ {rho_plus}"
            );
        }
    }

    #[test]
    fn analysis_invariants_hold() {
        let s = analyze(&rpw_h(0.7, 0.6));
        let d = s.dim();
        // v H = v, v 1' = 1
        let vh = s.v() * s.h();
        assert_relative_eq!(vh, s.v().clone_owned(), epsilon = 1e-10);
        assert_relative_eq!(s.v().sum(), 1.0, epsilon = 1e-10);
        // Ht 1' = 0 and v Ht = 0
        let ones = DVector::from_element(d, 1.0);
        assert_relative_eq!((s.h_tilde() * ones).abs().max(), 0.0, epsilon = 1e-10);
        assert_relative_eq!((s.v() * s.h_tilde()).abs().max(), 0.0, epsilon = 1e-10);
        // eigenvalues of Ht are {0} plus the non-Perron eigenvalues of H
        let mut ht_eigs: Vec<f64> = s.h_tilde().complex_eigenvalues().iter().map(|l| l.re).collect();
        ht_eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expected: Vec<f64> =
            std::iter::once(0.0).chain(s.eigenvalues()[1..].iter().map(|l| l.re)).collect();
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in ht_eigs.iter().zip(&expected) {
            assert_relative_eq!(a, b, epsilon = 1e-8);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        // Row-sum preservation: (t^Ht) 1' = 1' for random valid H and a wide
        // range of t.
        #[test]
        fn power_preserves_row_sums(rows in proptest::collection::vec(0.01_f64..1.0, 9),
                                    t_exp in -2.0_f64..2.0) {
            let mut h = DMatrix::from_row_slice(3, 3, &rows);
            for q in 0..3 {
                let s: f64 = h.row(q).sum();
                for k in 0..3 { h[(q, k)] /= s; }
            }
            let g = validate_generating_matrix(&h, 1e-9).unwrap();
            if let Ok(sd) = spectral_analyze(&g, DEFAULT_EIG_TOL, None) {
                let t = 10f64.powf(t_exp);
                let m = sd.matrix_power(t).unwrap();
                let ones = DVector::from_element(3, 1.0);
                let sums = &m * &ones;
                for k in 0..3 {
                    prop_assert!((sums[k] - 1.0).abs() <= 1e-9);
                }
            }
        }

        // Semigroup property of commuting powers.
        #[test]
        fn power_semigroup(p1 in 0.05_f64..0.7, p2 in 0.05_f64..0.7,
                           t in 0.05_f64..20.0, u in 0.05_f64..20.0) {
            let g = validate_generating_matrix(&rpw_h(p1, p2), 1e-9).unwrap();
            if let Ok(sd) = spectral_analyze(&g, DEFAULT_EIG_TOL, None) {
                let lhs = sd.matrix_power(t).unwrap() * sd.matrix_power(u).unwrap();
                let rhs = sd.matrix_power(t * u).unwrap();
                prop_assert!((lhs - rhs).abs().max() <= 1e-9);
            }
        }

        // Scale invariance: analyzing c * raw changes only the recorded s.
        #[test]
        fn analysis_is_scale_invariant(c in 0.1_f64..10.0) {
            let raw = rpw_h(0.7, 0.6);
            let g1 = validate_generating_matrix(&raw, 1e-9).unwrap();
            let scaled = raw * c;
            let g2 = validate_generating_matrix(&scaled, 1e-6).unwrap();
            let s1 = spectral_analyze(&g1, DEFAULT_EIG_TOL, None).unwrap();
            let s2 = spectral_analyze(&g2, DEFAULT_EIG_TOL, None).unwrap();
            prop_assert!((g2.row_sum_s() / g1.row_sum_s() - c).abs() < 1e-12);
            prop_assert!((s1.h() - s2.h()).abs().max() < 1e-12);
            prop_assert!((s1.v() - s2.v()).abs().max() < 1e-12);
            prop_assert!((s1.rho() - s2.rho()).abs() < 1e-12);
        }
    }
}
