//! Asymptotic covariance computations.
//!
//! The stacked fluctuation vector (Y_n - n v, N_n - n v), normalized by
//! sqrt(n) in the subcritical regime, has limiting covariance Gamma with
//! 2x2 block structure over the Y and N parts:
//!
//!   G11 = int_0^1 x^{-Ht'} (H' S1 H + S2) x^{-Ht} dx
//!   G22 = int_0^1 x^{-Ht'} S1 x^{-Ht} dx
//!         + (I-1'v)' int_0^1 K(x)' S2 K(x) dx (I-1'v),   K(x) = int_x^1 (y/x)^{Ht} dy/y
//!   G12 = H' int_0^1 x^{-Ht'} S1 x^{-Ht} dx + (I-Ht')^{-1} int_0^1 x^{-Ht'} S2 x^{-Ht} dx (I-1'v)
//!
//! where S1 = diag(v) - v'v and S2 = sum_q v_q V_q. All integrals are
//! computed by Gauss-Legendre panels in the substituted variable u = -ln x,
//! where the kernels become exp(u Ht) weighted by e^{-u} and K turns into
//! the entire function Phi(u) = int_0^u exp(w Ht) dw. G11 is cross-checked
//! against the independent linear-equation route
//! G11 - Ht' G11 - G11 Ht = H' S1 H + S2.
//!
//! In the critical regime (rho = 1/2) the limit covariance of
//! (n log n)^{-1/2} (Y_n - n v, N_n - n v) is assembled from the critical
//! eigenpairs: with u_l the left and t_l the right eigenvector of H for a
//! simple critical eigenvalue lambda_l, normalized to u_l t_l' = 1,
//!
//!   Gt11 = sum_l (|l|^2 tb S1 t' + tb S2 t') conj(u_l)' u_l,
//!
//! and analogously with weights (1, |l|^{-2}) for Gt22 and (conj(l), 1/l)
//! for Gt12 (tb denotes the conjugate of t_l). The result is basis
//! independent.

use nalgebra::{Complex, DMatrix, RowDVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    assert_psd, eigenvector_for, exp_with_integral, gauss_legendre, solve_displacement_equation,
    spectral_norm,
};
use crate::spectral::{Regime, SpectralData};

/// Default quadrature tolerance for the Gamma integrals.
pub const DEFAULT_QUAD_TOL: f64 = 1e-10;

/// The two noise covariances and their combination.
#[derive(Debug, Clone)]
pub struct NoiseMatrices {
    /// diag(v) - v'v: draw randomness.
    pub sigma1: DMatrix<f64>,
    /// sum_q v_q V_q: addition-rule randomness.
    pub sigma2: DMatrix<f64>,
    /// H' sigma1 H + sigma2.
    pub sigma: DMatrix<f64>,
}

/// Assemble the noise matrices from the stationary vector, the per-row
/// covariances and the generating matrix.
pub fn sigma_matrices(
    v: &RowDVector<f64>,
    v_rows: &[DMatrix<f64>],
    h: &DMatrix<f64>,
) -> Result<NoiseMatrices> {
    let d = v.len();
    if v_rows.len() != d || h.shape() != (d, d) {
        return Err(Error::DimensionMismatch(format!(
            "v has length {d}, got {} row covariances and H of shape {:?}",
            v_rows.len(),
            h.shape()
        )));
    }
    let mut sigma1 = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            sigma1[(i, j)] = if i == j { v[i] - v[i] * v[j] } else { -v[i] * v[j] };
        }
    }
    let mut sigma2 = DMatrix::zeros(d, d);
    for (q, vq) in v_rows.iter().enumerate() {
        if vq.shape() != (d, d) {
            return Err(Error::DimensionMismatch(format!("V_{q} has shape {:?}", vq.shape())));
        }
        assert_psd(vq, 1e-10)?;
        sigma2 += vq * v[q];
    }
    let sigma = h.transpose() * &sigma1 * h + &sigma2;
    assert_psd(&sigma1, 1e-10)?;
    assert_psd(&sigma2, 1e-10)?;
    Ok(NoiseMatrices { sigma1, sigma2, sigma })
}

/// The four blocks of the stacked limit covariance.
#[derive(Debug, Clone)]
pub struct GammaBlocks {
    pub g11: DMatrix<f64>,
    pub g12: DMatrix<f64>,
    pub g21: DMatrix<f64>,
    pub g22: DMatrix<f64>,
}

impl GammaBlocks {
    /// The full 2d x 2d covariance of the stacked (Y, N) fluctuation.
    pub fn stacked(&self) -> DMatrix<f64> {
        let d = self.g11.nrows();
        let mut m = DMatrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] = self.g11[(i, j)];
                m[(i, d + j)] = self.g12[(i, j)];
                m[(d + i, j)] = self.g21[(i, j)];
                m[(d + i, d + j)] = self.g22[(i, j)];
            }
        }
        m
    }
}

/// Quadrature provenance recorded with every report.
#[derive(Debug, Clone, Serialize)]
pub struct MethodInfo {
    pub quad_tol: f64,
    pub panels: usize,
    pub u_max: f64,
    pub sylvester_residual: f64,
}

/// Theoretical covariance report for one model instance.
#[derive(Debug, Clone)]
pub struct CovarianceReport {
    pub regime: Regime,
    pub v: RowDVector<f64>,
    pub rho: f64,
    pub nu: u32,
    pub noise: NoiseMatrices,
    pub gamma: GammaBlocks,
    pub method: MethodInfo,
    /// For the critical regime: how the critical eigenvectors were
    /// normalized (recorded for reproducibility; the blocks themselves are
    /// basis independent).
    pub critical_normalization: Option<String>,
}

pub(crate) fn mat_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

impl CovarianceReport {
    /// JSON form: regime, v, rho, nu, sigma1, sigma2, gamma blocks as
    /// row-major arrays, and the method provenance.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "regime": self.regime.to_string(),
            "v": self.v.iter().cloned().collect::<Vec<f64>>(),
            "rho": self.rho,
            "nu": self.nu,
            "sigma1": mat_rows(&self.noise.sigma1),
            "sigma2": mat_rows(&self.noise.sigma2),
            "gamma_blocks": {
                "g11": mat_rows(&self.gamma.g11),
                "g12": mat_rows(&self.gamma.g12),
                "g21": mat_rows(&self.gamma.g21),
                "g22": mat_rows(&self.gamma.g22),
            },
            "method": {
                "quad_tol": self.method.quad_tol,
                "panels": self.method.panels,
                "u_max": self.method.u_max,
                "sylvester_residual": self.method.sylvester_residual,
            },
            "critical_normalization": self.critical_normalization,
        })
    }
}

// ---------------------------------------------------------------------------
// Subcritical Gamma by quadrature
// ---------------------------------------------------------------------------

struct QuadIntegrals {
    a_sigma: DMatrix<f64>,
    a1: DMatrix<f64>,
    a2: DMatrix<f64>,
    b: DMatrix<f64>,
}

fn integrate_panels(
    ht: &DMatrix<f64>,
    noise: &NoiseMatrices,
    proj: &DMatrix<f64>,
    u_max: f64,
    panels: usize,
    order: usize,
) -> QuadIntegrals {
    let d = ht.nrows();
    let (nodes, weights) = gauss_legendre(order);
    let mut out = QuadIntegrals {
        a_sigma: DMatrix::zeros(d, d),
        a1: DMatrix::zeros(d, d),
        a2: DMatrix::zeros(d, d),
        b: DMatrix::zeros(d, d),
    };
    let panel_width = u_max / panels as f64;
    for p in 0..panels {
        let lo = p as f64 * panel_width;
        for (x, w) in nodes.iter().zip(&weights) {
            let u = lo + 0.5 * panel_width * (x + 1.0);
            let weight = 0.5 * panel_width * w * (-u).exp();
            let (e, phi) = exp_with_integral(ht, u);
            let et = e.transpose();
            out.a_sigma += &et * &noise.sigma * &e * weight;
            out.a1 += &et * &noise.sigma1 * &e * weight;
            out.a2 += &et * &noise.sigma2 * &e * weight;
            let m = phi * proj;
            out.b += m.transpose() * &noise.sigma2 * m * weight;
        }
    }
    out
}

fn max_diff(a: &QuadIntegrals, b: &QuadIntegrals) -> f64 {
    [(&a.a_sigma, &b.a_sigma), (&a.a1, &b.a1), (&a.a2, &b.a2), (&a.b, &b.b)]
        .iter()
        .map(|(x, y)| (*x - *y).abs().max())
        .fold(0.0, f64::max)
}

/// Choose the tail cutoff U so that the neglected mass of each integrand is
/// below `quad_tol`, using growth constants estimated on the instance.
fn tail_cutoff(
    ht: &DMatrix<f64>,
    proj: &DMatrix<f64>,
    rho: f64,
    nu: u32,
    sigma_scale: f64,
    quad_tol: f64,
) -> Result<f64> {
    let samples = [0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 8.0, 13.0, 21.0, 34.0];
    let mut c_exp = 0.0_f64;
    let mut c_phi = 0.0_f64;
    for &u in &samples {
        let (e, phi) = exp_with_integral(ht, u);
        let envelope = (rho * u).exp() * (1.0 + u).powi(nu as i32 - 1);
        c_exp = c_exp.max(spectral_norm(&e) / envelope);
        let m = phi * proj;
        c_phi = c_phi.max(spectral_norm(&m) / envelope.max(1.0));
    }
    c_exp *= 2.0;
    c_phi *= 2.0;
    let gap_a = 1.0 - 2.0 * rho;
    let gap_b = 1.0 - 2.0 * rho.max(0.0);
    let solve_u = |c: f64, gap: f64| -> f64 {
        let base = (4.0 * c * c * sigma_scale.max(1e-30) / (gap * quad_tol)).ln() / gap;
        let mut u = base.max(10.0);
        for _ in 0..4 {
            u = (base + (2.0 * (nu as f64 - 1.0)) * (1.0 + u).ln() / gap).max(10.0);
        }
        u
    };
    let u = solve_u(c_exp, gap_a).max(solve_u(c_phi, gap_b));
    if !u.is_finite() || u > 5000.0 {
        return Err(Error::QuadratureDivergence { panels: 0, u_max: u });
    }
    Ok(u)
}

/// Subcritical limit covariance by adaptive Gauss-Legendre quadrature, with
/// the G11 block cross-checked against the independent linear-equation
/// solution (mismatch beyond 10 * quad_tol is an error).
pub fn gamma_subcritical(
    s: &SpectralData,
    noise: &NoiseMatrices,
    quad_tol: f64,
) -> Result<CovarianceReport> {
    if s.regime() != Regime::Subcritical {
        return Err(Error::CriticalRegime { rho: s.rho() });
    }
    let d = s.dim();
    if noise.sigma1.nrows() != d {
        return Err(Error::DimensionMismatch("noise matrices vs spectral data".into()));
    }
    let ht = s.h_tilde();
    let proj = s.centering_projection();
    let sigma_scale = spectral_norm(&noise.sigma)
        .max(spectral_norm(&noise.sigma1))
        .max(spectral_norm(&noise.sigma2));

    let u_max = tail_cutoff(ht, &proj, s.rho(), s.nu(), sigma_scale, quad_tol)?;
    let order = 16;
    let mut panels = ((u_max / 2.0).ceil() as usize).max(8);
    let mut coarse = integrate_panels(ht, noise, &proj, u_max, panels, order);
    let integrals = loop {
        let fine = integrate_panels(ht, noise, &proj, u_max, panels * 2, order);
        if max_diff(&coarse, &fine) < quad_tol {
            panels *= 2;
            break fine;
        }
        panels *= 2;
        if panels > 1 << 14 {
            return Err(Error::QuadratureDivergence { panels, u_max });
        }
        coarse = fine;
    };

    // Independent route for G11: the linear displacement equation.
    let direct = solve_displacement_equation(ht, &noise.sigma)?;
    let denom = direct.norm().max(1.0);
    let sylvester_residual = (&integrals.a_sigma - &direct).norm() / denom;
    if sylvester_residual > 10.0 * quad_tol {
        return Err(Error::SylvesterMismatch {
            residual: sylvester_residual,
            limit: 10.0 * quad_tol,
        });
    }

    let g11 = integrals.a_sigma;
    let g22 = &integrals.a1 + &integrals.b;
    let inv_term = (DMatrix::identity(d, d) - ht.transpose())
        .lu()
        .solve(&integrals.a2)
        .ok_or_else(|| Error::EigenFailure("(I - Ht') is singular".into()))?;
    let g12 = s.h().transpose() * &integrals.a1 + inv_term * &proj;
    let g21 = g12.transpose();

    Ok(CovarianceReport {
        regime: s.regime(),
        v: s.v().clone(),
        rho: s.rho(),
        nu: s.nu(),
        noise: noise.clone(),
        gamma: GammaBlocks { g11, g12, g21, g22 },
        method: MethodInfo { quad_tol, panels, u_max, sylvester_residual },
        critical_normalization: None,
    })
}

// ---------------------------------------------------------------------------
// Critical Gamma from the eigenstructure
// ---------------------------------------------------------------------------

/// Critical-regime limit covariance, supported for diagonalizable critical
/// eigenvalues (nu = 1). Each simple eigenvalue on the critical line
/// contributes a rank-one term through its left/right eigenvector pair.
pub fn gamma_critical(s: &SpectralData, noise: &NoiseMatrices) -> Result<CovarianceReport> {
    if s.regime() != Regime::Critical {
        return Err(Error::NotCritical { rho: s.rho() });
    }
    if s.nu() != 1 {
        return Err(Error::UnsupportedJordanStructure { nu: s.nu() });
    }
    let d = s.dim();
    if noise.sigma1.nrows() != d {
        return Err(Error::DimensionMismatch("noise matrices vs spectral data".into()));
    }
    let s1c = complexify(&noise.sigma1);
    let s2c = complexify(&noise.sigma2);
    let mut g11 = DMatrix::<Complex<f64>>::zeros(d, d);
    let mut g22 = DMatrix::<Complex<f64>>::zeros(d, d);
    let mut g12 = DMatrix::<Complex<f64>>::zeros(d, d);
    for pair in s.critical_pairs() {
        let lambda = pair.lambda;
        let t = &pair.right;
        // Left eigenvector, normalized so that u t' = 1 (bilinear pairing).
        let mut u = eigenvector_for(s.h(), lambda, true)?;
        let pairing: Complex<f64> = u.iter().zip(t.iter()).map(|(a, b)| a * b).sum();
        if pairing.norm() < 1e-10 {
            return Err(Error::UnsupportedJordanStructure { nu: 2 });
        }
        u /= pairing;
        // Hermitian quadratic forms of the eigenvector in the noise matrices.
        let q1 = hermitian_form(&s1c, t);
        let q2 = hermitian_form(&s2c, t);
        let abs2 = Complex::new(lambda.norm_sqr(), 0.0);
        let w11 = abs2 * q1 + q2;
        let w22 = q1 + q2 / abs2;
        let w12 = lambda.conj() * q1 + q2 / lambda;
        // Rank-one factor conj(u)' u.
        for i in 0..d {
            for j in 0..d {
                let outer = u[i].conj() * u[j];
                g11[(i, j)] += w11 * outer;
                g22[(i, j)] += w22 * outer;
                g12[(i, j)] += w12 * outer;
            }
        }
    }
    let g11 = realify(&g11)?;
    let g22 = realify(&g22)?;
    let g12 = realify(&g12)?;
    let g21 = g12.transpose();
    Ok(CovarianceReport {
        regime: Regime::Critical,
        v: s.v().clone(),
        rho: s.rho(),
        nu: s.nu(),
        noise: noise.clone(),
        gamma: GammaBlocks { g11, g12, g21, g22 },
        method: MethodInfo {
            quad_tol: 0.0,
            panels: 0,
            u_max: 0.0,
            sylvester_residual: 0.0,
        },
        critical_normalization: Some(
            "right eigenvectors: unit Euclidean norm, leading component positive real; \
             left eigenvectors scaled to u t' = 1"
                .into(),
        ),
    })
}

fn complexify(m: &DMatrix<f64>) -> DMatrix<Complex<f64>> {
    m.map(|x| Complex::new(x, 0.0))
}

fn hermitian_form(
    m: &DMatrix<Complex<f64>>,
    t: &nalgebra::DVector<Complex<f64>>,
) -> Complex<f64> {
    let d = t.len();
    let mut acc = Complex::new(0.0, 0.0);
    for i in 0..d {
        for j in 0..d {
            acc += t[i].conj() * m[(i, j)] * t[j];
        }
    }
    acc
}

fn realify(m: &DMatrix<Complex<f64>>) -> Result<DMatrix<f64>> {
    let max_im = m.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    let scale = m.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1.0);
    if max_im > 1e-9 * scale {
        return Err(Error::EigenFailure(format!(
            "critical covariance has imaginary residue {max_im:.3e}"
        )));
    }
    Ok(m.map(|c| c.re))
}

// ---------------------------------------------------------------------------
// Closed forms for the generalized play-the-winner rule
// ---------------------------------------------------------------------------

/// Closed-form asymptotics of the two-color play-the-winner rule.
#[derive(Debug, Clone, Serialize)]
pub struct RpwAsymptotics {
    pub v1: f64,
    pub v2: f64,
    pub rho: f64,
    /// v1 v2 = q1 q2 / (q1 + q2)^2.
    pub sigma1_sq: f64,
    /// (a1 q2 + a2 q1) / (q1 + q2).
    pub sigma2_sq: f64,
    pub limit: RpwLimit,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "regime", rename_all = "lowercase")]
pub enum RpwLimit {
    /// rho < 1/2: scalar covariance of n^{-1/2}(Y_{n1} - n v1, N_{n1} - n v1).
    Subcritical { sigma11: f64, sigma12: f64, sigma22: f64 },
    /// rho = 1/2: scalar covariance of (n log n)^{-1/2}(...), which is
    /// (s~^2, 2 s~^2; 2 s~^2, 4 s~^2).
    Critical { sigma_tilde_sq: f64 },
}

/// Evaluate the closed forms. `a1`, `a2` are the response variances; for
/// dichotomous responses a_k = p_k (1 - p_k).
pub fn rpw_closed_forms(p1: f64, p2: f64, a1: f64, a2: f64) -> Result<RpwAsymptotics> {
    for (name, p) in [("p1", p1), ("p2", p2)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidProbability(format!("{name} = {p} outside [0, 1]")));
        }
    }
    for (name, a) in [("a1", a1), ("a2", a2)] {
        if !(0.0..=0.25 + 1e-12).contains(&a) {
            return Err(Error::InvalidProbability(format!(
                "{name} = {a} is not a variance of a [0, 1] response"
            )));
        }
    }
    let (q1, q2) = (1.0 - p1, 1.0 - p2);
    let q_sum = q1 + q2;
    if q_sum <= 1e-12 {
        return Err(Error::DegenerateRpw { q_sum });
    }
    let rho = p1 - q2;
    let tol = crate::spectral::DEFAULT_EIG_TOL;
    if rho > 0.5 + tol {
        return Err(Error::SupercriticalUnsupported { rho });
    }
    let v1 = q2 / q_sum;
    let v2 = q1 / q_sum;
    let sigma1_sq = q1 * q2 / (q_sum * q_sum);
    let sigma2_sq = (a1 * q2 + a2 * q1) / q_sum;
    let limit = if (rho - 0.5).abs() <= tol {
        RpwLimit::Critical { sigma_tilde_sq: q1 * q2 + 2.0 * (a1 * q2 + a2 * q1) }
    } else {
        let denom = (1.0 - 2.0 * rho) * q_sum * q_sum;
        RpwLimit::Subcritical {
            sigma11: (rho * rho * q1 * q2 + q_sum * (a1 * q2 + a2 * q1)) / denom,
            sigma12: (rho * q1 * q2 + (a1 * q2 + a2 * q1)) / denom,
            sigma22: (q1 * q2 + 2.0 * (a1 * q2 + a2 * q1)) / denom,
        }
    };
    Ok(RpwAsymptotics { v1, v2, rho, sigma1_sq, sigma2_sq, limit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{spectral_analyze, validate_generating_matrix, DEFAULT_EIG_TOL};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn analyze(h: &DMatrix<f64>) -> SpectralData {
        let g = validate_generating_matrix(h, 1e-9).unwrap();
        spectral_analyze(&g, DEFAULT_EIG_TOL, None).unwrap()
    }

    fn rpw_h(p1: f64, p2: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[p1, 1.0 - p1, 1.0 - p2, p2])
    }

    fn rpw_noise(p1: f64, p2: f64) -> (SpectralData, NoiseMatrices) {
        let s = analyze(&rpw_h(p1, p2));
        let sign = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let v_rows = vec![sign.clone() * (p1 * (1.0 - p1)), sign * (p2 * (1.0 - p2))];
        let noise = sigma_matrices(s.v(), &v_rows, s.h()).unwrap();
        (s, noise)
    }

    const R: [f64; 4] = [1.0, -1.0, -1.0, 1.0];

    #[test]
    fn sigma_matrices_direct_formulas() {
        let v = RowDVector::from_row_slice(&[0.5, 0.5]);
        let zeros = vec![DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)];
        let h = rpw_h(0.7, 0.7);
        let n = sigma_matrices(&v, &zeros, &h).unwrap();
        assert_relative_eq!(n.sigma1, DMatrix::from_row_slice(2, 2, &R) * 0.25, epsilon = 1e-15);
        assert_relative_eq!(n.sigma2.abs().max(), 0.0, epsilon = 1e-15);
        assert_relative_eq!(n.sigma, h.transpose() * &n.sigma1 * &h, epsilon = 1e-15);
        // row sums of sigma1 vanish
        for i in 0..2 {
            assert!(n.sigma1.row(i).sum().abs() <= 1e-12);
        }
    }

    #[test]
    fn sigma_matrices_scalar_case() {
        let v = RowDVector::from_row_slice(&[1.0]);
        let n = sigma_matrices(&v, &[DMatrix::zeros(1, 1)], &DMatrix::identity(1, 1)).unwrap();
        assert_eq!(n.sigma1[(0, 0)], 0.0);
    }

    #[test]
    fn sigma2_for_rpw_half() {
        let (_, noise) = rpw_noise(0.5, 0.5);
        assert_relative_eq!(
            noise.sigma2,
            DMatrix::from_row_slice(2, 2, &R) * 0.25,
            epsilon = 1e-15
        );
    }

    #[test]
    fn gamma_pure_multinomial_case() {
        // H = 1'v, S2 = 0: G11 = 0, G12 = 0, G22 = S1.
        let h = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.3, 0.7]);
        let s = analyze(&h);
        let zeros = vec![DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)];
        let noise = sigma_matrices(s.v(), &zeros, s.h()).unwrap();
        let rep = gamma_subcritical(&s, &noise, DEFAULT_QUAD_TOL).unwrap();
        assert_relative_eq!(rep.gamma.g11.abs().max(), 0.0, epsilon = 1e-10);
        assert_relative_eq!(rep.gamma.g12.abs().max(), 0.0, epsilon = 1e-10);
        assert_relative_eq!(rep.gamma.g22, noise.sigma1, epsilon = 1e-9);
    }

    #[test]
    fn gamma_rpw_half_matches_closed_forms() {
        let (s, noise) = rpw_noise(0.5, 0.5);
        let rep = gamma_subcritical(&s, &noise, DEFAULT_QUAD_TOL).unwrap();
        let r = DMatrix::from_row_slice(2, 2, &R);
        assert_relative_eq!(rep.gamma.g11, &r * 0.25, epsilon = 1e-9);
        assert_relative_eq!(rep.gamma.g12, &r * 0.25, epsilon = 1e-9);
        assert_relative_eq!(rep.gamma.g22, &r * 0.75, epsilon = 1e-9);
    }

    #[test]
    fn gamma_null_directions_and_psd() {
        let (s, noise) = rpw_noise(0.65, 0.55);
        let rep = gamma_subcritical(&s, &noise, DEFAULT_QUAD_TOL).unwrap();
        for i in 0..2 {
            assert!(rep.gamma.g22.row(i).sum().abs() <= 1e-9);
            assert!(rep.gamma.g12.row(i).sum().abs() <= 1e-9);
            // rule rows sum to a constant, so the Y block is centered too
            assert!(rep.gamma.g11.row(i).sum().abs() <= 1e-9);
        }
        let stacked = rep.gamma.stacked();
        let eigs = stacked.symmetric_eigen().eigenvalues;
        let max = eigs.iter().cloned().fold(0.0_f64, f64::max);
        assert!(eigs.iter().all(|&l| l >= -1e-9 * max.max(1.0)));
        assert_relative_eq!(rep.gamma.g21, rep.gamma.g12.transpose(), epsilon = 1e-12);
    }

    #[test]
    fn quadrature_agrees_with_displacement_solution_on_random_instances() {
        let mut rng = crate::stream::stream_from_seed(2024);
        let mut tested = 0;
        while tested < 5 {
            let d = 2 + (rng.random::<f64>() * 3.0) as usize; // 2..4
            let mut h = DMatrix::zeros(d, d);
            for q in 0..d {
                let mut row: Vec<f64> = (0..d).map(|_| -(rng.random::<f64>()).ln()).collect();
                let s: f64 = row.iter().sum();
                for x in row.iter_mut() {
                    *x /= s;
                }
                for k in 0..d {
                    h[(q, k)] = row[k];
                }
            }
            let g = validate_generating_matrix(&h, 1e-9).unwrap();
            let Ok(s) = spectral_analyze(&g, DEFAULT_EIG_TOL, None) else { continue };
            if s.rho() >= 0.45 {
                continue;
            }
            // random PSD row covariances
            let v_rows: Vec<DMatrix<f64>> = (0..d)
                .map(|_| {
                    let a = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
                    &a * a.transpose() / d as f64
                })
                .collect();
            let noise = sigma_matrices(s.v(), &v_rows, s.h()).unwrap();
            let rep = gamma_subcritical(&s, &noise, DEFAULT_QUAD_TOL).unwrap();
            let direct = solve_displacement_equation(s.h_tilde(), &noise.sigma).unwrap();
            let rel = (&rep.gamma.g11 - &direct).norm() / direct.norm().max(1.0);
            assert!(rel <= 1e-8, "relative error {rel}");
            tested += 1;
        }
    }

    #[test]
    fn gamma_critical_rpw_three_quarters() {
        let (s, noise) = rpw_noise(0.75, 0.75);
        let rep = gamma_critical(&s, &noise).unwrap();
        let r = DMatrix::from_row_slice(2, 2, &R);
        // sigma~^2 = 0.25 here
        assert_relative_eq!(rep.gamma.g11, &r * 0.25, epsilon = 1e-9);
        assert_relative_eq!(rep.gamma.g12, &r * 0.5, epsilon = 1e-9);
        assert_relative_eq!(rep.gamma.g22, &r * 1.0, epsilon = 1e-9);
        // lambda = 1/2 real: the N block is 4x the Y block
        assert_relative_eq!(rep.gamma.g22, &rep.gamma.g11 * 4.0, epsilon = 1e-9);
    }

    #[test]
    fn gamma_critical_zero_noise_is_zero() {
        // both driver covariances forced to zero (not derivable from any v)
        let s = analyze(&rpw_h(0.75, 0.75));
        let noise = NoiseMatrices {
            sigma1: DMatrix::zeros(2, 2),
            sigma2: DMatrix::zeros(2, 2),
            sigma: DMatrix::zeros(2, 2),
        };
        let rep = gamma_critical(&s, &noise).unwrap();
        assert_relative_eq!(rep.gamma.g11.abs().max(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(rep.gamma.g22.abs().max(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gamma_critical_rejects_subcritical_input() {
        let (s, noise) = rpw_noise(0.6, 0.6);
        assert!(matches!(gamma_critical(&s, &noise), Err(Error::NotCritical { .. })));
        assert!(matches!(
            gamma_subcritical(&rpw_noise(0.75, 0.75).0, &noise, 1e-10),
            Err(Error::CriticalRegime { .. })
        ));
    }

    #[test]
    fn closed_forms_at_one_half() {
        let r = rpw_closed_forms(0.5, 0.5, 0.25, 0.25).unwrap();
        assert_relative_eq!(r.v1, 0.5);
        assert_relative_eq!(r.rho, 0.0);
        assert_relative_eq!(r.sigma1_sq, 0.25);
        assert_relative_eq!(r.sigma2_sq, 0.25);
        match r.limit {
            RpwLimit::Subcritical { sigma11, sigma12, sigma22 } => {
                assert_relative_eq!(sigma11, 0.25, epsilon = 1e-15);
                assert_relative_eq!(sigma12, 0.25, epsilon = 1e-15);
                assert_relative_eq!(sigma22, 0.75, epsilon = 1e-15);
            }
            _ => panic!("expected subcritical"),
        }
    }

    #[test]
    fn closed_forms_critical_point() {
        let a = 0.75 * 0.25;
        let r = rpw_closed_forms(0.75, 0.75, a, a).unwrap();
        assert_relative_eq!(r.rho, 0.5, epsilon = 1e-15);
        match r.limit {
            RpwLimit::Critical { sigma_tilde_sq } => {
                assert_relative_eq!(sigma_tilde_sq, 0.25, epsilon = 1e-15);
                // identity sigma~^2 = sigma1^2 / 4 + sigma2^2 at q1 + q2 = 1/2
                assert_relative_eq!(
                    sigma_tilde_sq,
                    0.25 * r.sigma1_sq + r.sigma2_sq,
                    epsilon = 1e-15
                );
            }
            _ => panic!("expected critical"),
        }
    }

    #[test]
    fn closed_forms_deterministic_responses() {
        let r = rpw_closed_forms(0.5, 0.5, 0.0, 0.0).unwrap();
        match r.limit {
            RpwLimit::Subcritical { sigma11, sigma12, sigma22 } => {
                assert_relative_eq!(sigma11, 0.0, epsilon = 1e-15);
                assert_relative_eq!(sigma12, 0.0, epsilon = 1e-15);
                assert_relative_eq!(sigma22, 0.25, epsilon = 1e-15);
            }
            _ => panic!("expected subcritical"),
        }
    }

    #[test]
    fn closed_forms_reject_supercritical_and_degenerate() {
        assert!(matches!(
            rpw_closed_forms(0.9, 0.9, 0.09, 0.09),
            Err(Error::SupercriticalUnsupported { .. })
        ));
        assert!(matches!(rpw_closed_forms(1.0, 1.0, 0.0, 0.0), Err(Error::DegenerateRpw { .. })));
    }

    #[test]
    fn dichotomous_variance_has_equivalent_literature_form() {
        // For a_k = p_k q_k the N-variance reduces to
        // q1 q2 (5 - 2(q1+q2)) / ((2(q1+q2) - 1)(q1+q2)^2).
        let mut rng = crate::stream::stream_from_seed(7);
        let mut done = 0;
        while done < 20 {
            let p1: f64 = rng.random();
            let p2: f64 = rng.random();
            let rho = p1 + p2 - 1.0;
            if rho >= 0.45 || (1.0 - p1) + (1.0 - p2) < 0.05 {
                continue;
            }
            let (q1, q2) = (1.0 - p1, 1.0 - p2);
            let r = rpw_closed_forms(p1, p2, p1 * q1, p2 * q2).unwrap();
            let RpwLimit::Subcritical { sigma22, .. } = r.limit else { panic!() };
            let qs = q1 + q2;
            let alt = q1 * q2 * (5.0 - 2.0 * qs) / ((2.0 * qs - 1.0) * qs * qs);
            assert_relative_eq!(sigma22, alt, epsilon = 1e-12);
            done += 1;
        }
    }

    #[test]
    fn rpw_bridge_general_pipeline_reproduces_closed_forms() {
        for &(p1, p2) in &[(0.7, 0.7), (0.6, 0.45), (0.55, 0.8)] {
            let (s, noise) = rpw_noise(p1, p2);
            let rep = gamma_subcritical(&s, &noise, DEFAULT_QUAD_TOL).unwrap();
            let r =
                rpw_closed_forms(p1, p2, p1 * (1.0 - p1), p2 * (1.0 - p2)).unwrap();
            let RpwLimit::Subcritical { sigma11, sigma12, sigma22 } = r.limit else { panic!() };
            assert_relative_eq!(rep.gamma.g11[(0, 0)], sigma11, epsilon = 1e-8);
            assert_relative_eq!(rep.gamma.g12[(0, 0)], sigma12, epsilon = 1e-8);
            assert_relative_eq!(rep.gamma.g22[(0, 0)], sigma22, epsilon = 1e-8);
        }
    }

    #[test]
    fn report_json_has_documented_fields() {
        let (s, noise) = rpw_noise(0.7, 0.7);
        let rep = gamma_subcritical(&s, &noise, DEFAULT_QUAD_TOL).unwrap();
        let json = rep.to_json();
        for key in ["regime", "v", "rho", "nu", "sigma1", "sigma2", "gamma_blocks", "method"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert!(json["method"].get("sylvester_residual").is_some());
    }
}
