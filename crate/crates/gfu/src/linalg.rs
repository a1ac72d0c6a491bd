//! Small dense linear-algebra helpers shared across the crate:
//! Kronecker-based linear matrix equations, symmetric PSD square roots,
//! inverse-iteration eigenvectors for known simple eigenvalues,
//! Gauss-Legendre nodes and a least-squares slope fit.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Kronecker product A (x) B.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = s * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Solve the linear matrix equation `X - G' X - X G = C` for X by
/// vectorization: `(I - I(x)G' - G'(x)I) vec(X) = vec(C)` in column-major vec.
///
/// The equation is uniquely solvable when every pair of eigenvalues
/// (mu_i, mu_j) of G satisfies mu_i + mu_j != 1, which holds whenever all
/// eigenvalue real parts are below 1/2.
pub fn solve_displacement_equation(g: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = g.nrows();
    if g.ncols() != d || c.shape() != (d, d) {
        return Err(Error::DimensionMismatch(format!(
            "displacement equation needs square matrices of equal size, got {:?} and {:?}",
            g.shape(),
            c.shape()
        )));
    }
    let eye = DMatrix::identity(d, d);
    let gt = g.transpose();
    // vec(G' X) = (I (x) G') vec(X); vec(X G) = (G' (x) I) vec(X)
    let system = kron(&eye, &gt) + kron(&gt, &eye);
    let lhs = DMatrix::identity(d * d, d * d) - system;
    let rhs = DVector::from_column_slice(c.as_slice());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::EigenFailure("displacement equation is singular".into()))?;
    Ok(DMatrix::from_column_slice(d, d, sol.as_slice()))
}

/// Symmetric square root of a PSD matrix via its eigendecomposition.
/// Eigenvalues in [-clamp_tol * max, 0) are clamped to zero; anything more
/// negative is an error.
pub fn psd_sqrt(m: &DMatrix<f64>, clamp_tol: f64) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    if m.ncols() != d {
        return Err(Error::DimensionMismatch("psd_sqrt needs a square matrix".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let floor = -clamp_tol * max_eig.max(1.0);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < floor {
            return Err(Error::NotPositiveSemidefinite { min_eig: *v });
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

/// Check symmetry and that all eigenvalues are >= -tol * scale.
pub fn assert_psd(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    let d = m.nrows();
    for i in 0..d {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * (1.0 + m[(i, j)].abs()) {
                return Err(Error::DimensionMismatch(format!(
                    "matrix is not symmetric at ({i},{j})"
                )));
            }
        }
    }
    let sym = (m + m.transpose()) * 0.5;
    let eigs = sym.symmetric_eigen().eigenvalues;
    let max_eig = eigs.iter().cloned().fold(0.0_f64, f64::max);
    let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -tol * max_eig.max(1.0) {
        return Err(Error::NotPositiveSemidefinite { min_eig });
    }
    Ok(())
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Right eigenvector of `m` for a known (approximately) simple eigenvalue
/// `lambda`, by shifted inverse iteration in complex arithmetic.
///
/// Returned with unit Euclidean norm and phase fixed so the first component
/// of magnitude > 1e-8 is positive real.
pub fn eigenvector_for(
    m: &DMatrix<f64>,
    lambda: Complex<f64>,
    transpose: bool,
) -> Result<DVector<Complex<f64>>> {
    let d = m.nrows();
    let mc: DMatrix<Complex<f64>> = DMatrix::from_fn(d, d, |i, j| {
        let v = if transpose { m[(j, i)] } else { m[(i, j)] };
        Complex::new(v, 0.0)
    });
    // Small shift keeps the system invertible at an exact eigenvalue.
    let scale = spectral_norm(m).max(1.0);
    let shift = Complex::new(1e-11 * scale, 1e-12 * scale);
    let shifted = &mc - DMatrix::from_diagonal_element(d, d, lambda + shift);
    let lu = shifted.lu();
    // Deterministic, mildly irregular start vector.
    let mut x = DVector::from_fn(d, |i, _| {
        Complex::new(1.0 + 0.37 * ((i + 1) as f64).sin(), 0.11 * (i as f64 + 0.5).cos())
    });
    x /= Complex::new(x.norm(), 0.0);
    let mut converged = false;
    for _ in 0..50 {
        let y = lu
            .solve(&x)
            .ok_or_else(|| Error::EigenFailure("inverse iteration hit a singular solve".into()))?;
        let norm = y.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::EigenFailure("inverse iteration diverged".into()));
        }
        let y = y / Complex::new(norm, 0.0);
        let delta = (&y - &x).norm().min((&y + &x).norm());
        x = y;
        if delta < 1e-13 {
            converged = true;
            break;
        }
    }
    // Residual check: ||x M - lambda x|| (or M x for right vectors).
    let residual = (&mc * &x - &x * lambda).norm();
    if !converged && residual > 1e-6 * scale {
        return Err(Error::EigenFailure(format!(
            "inverse iteration residual {residual:.3e} for eigenvalue {lambda}"
        )));
    }
    // Phase fix.
    if let Some(lead) = x.iter().find(|c| c.norm() > 1e-8) {
        let phase = lead / lead.norm();
        x /= phase;
    }
    Ok(x)
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Least-squares slope of y against x.
pub fn regression_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        num += (xi - mx) * (yi - my);
        den += (xi - mx) * (xi - mx);
    }
    num / den
}

/// Row-vector times matrix: out = x * m, with m column-major.
#[inline]
pub fn row_times_mat(x: &[f64], m: &DMatrix<f64>, out: &mut [f64]) {
    let d = x.len();
    debug_assert_eq!(m.nrows(), d);
    debug_assert_eq!(m.ncols(), out.len());
    let data = m.as_slice();
    for (j, o) in out.iter_mut().enumerate() {
        let col = &data[j * d..(j + 1) * d];
        let mut acc = 0.0;
        for i in 0..d {
            acc += x[i] * col[i];
        }
        *o = acc;
    }
}

/// exp(u * G) together with its integral Phi(u) = int_0^u exp(w G) dw,
/// obtained from one exponential of the augmented block matrix
/// [[G, I], [0, 0]].
pub fn exp_with_integral(g: &DMatrix<f64>, u: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = g.nrows();
    let mut aug = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in 0..d {
            aug[(i, j)] = g[(i, j)] * u;
        }
        aug[(i, d + i)] = u;
    }
    let e = aug.exp();
    let top_left = DMatrix::from_fn(d, d, |i, j| e[(i, j)]);
    let top_right = DMatrix::from_fn(d, d, |i, j| e[(i, d + j)]);
    (top_left, top_right)
}
