//! Dense complex linear algebra and numerical analysis primitives shared
//! by the other modules: Hermitian eigendecompositions, matrix
//! exponentials, log-determinants, Gauss-Legendre quadrature and finite
//! differences.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Machine-level tolerance for structural checks (hermiticity, weights).
pub const TOL_MACHINE: f64 = 1e-12;
/// Method tolerance for iterative / factorization-based results.
pub const TOL_METHOD: f64 = 1e-10;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// A square complex matrix validated to be Hermitian at construction.
#[derive(Debug, Clone)]
pub struct HermitianMatrix {
    data: CMatrix,
}

impl HermitianMatrix {
    /// Validates `max |A_mn - conj(A_nm)| <= 1e-12 * max|A|` and wraps the matrix.
    pub fn new(data: CMatrix) -> Result<Self> {
        if !data.is_square() {
            return Err(Error::DimensionMismatch {
                expected: data.nrows(),
                actual: data.ncols(),
            });
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite);
        }
        let scale = data.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let mut dev = 0.0f64;
        for i in 0..data.nrows() {
            for j in 0..=i {
                dev = dev.max((data[(i, j)] - data[(j, i)].conj()).norm());
            }
        }
        let tol = TOL_MACHINE * scale.max(1.0);
        if dev > tol {
            return Err(Error::NotHermitian {
                deviation: dev,
                tolerance: tol,
            });
        }
        Ok(Self { data })
    }

    /// Builds from a real symmetric matrix.
    pub fn from_real(m: &DMatrix<f64>) -> Result<Self> {
        Self::new(m.map(|x| Complex64::new(x, 0.0)))
    }

    /// Diagonal Hermitian matrix from a real vector.
    pub fn from_diagonal(d: &DVector<f64>) -> Self {
        Self {
            data: CMatrix::from_diagonal(&d.map(|x| Complex64::new(x, 0.0))),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            data: CMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.data
    }

    pub fn into_matrix(self) -> CMatrix {
        self.data
    }

    /// Largest singular value, computed from the eigenvalues.
    pub fn operator_norm(&self) -> f64 {
        let (vals, _) = herm_eig(self).expect("validated Hermitian matrix");
        vals.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }

    /// True if every entry has negligible imaginary part.
    pub fn is_real(&self, tol: f64) -> bool {
        self.data.iter().all(|z| z.im.abs() <= tol)
    }
}

/// A square complex matrix with finite entries but no symmetry constraint.
#[derive(Debug, Clone)]
pub struct GeneralMatrix {
    data: CMatrix,
}

impl GeneralMatrix {
    pub fn new(data: CMatrix) -> Result<Self> {
        if !data.is_square() {
            return Err(Error::DimensionMismatch {
                expected: data.nrows(),
                actual: data.ncols(),
            });
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { data })
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.data
    }

    pub fn into_matrix(self) -> CMatrix {
        self.data
    }

    /// Operator (spectral) norm via A* A.
    pub fn operator_norm(&self) -> f64 {
        operator_norm(&self.data)
    }
}

/// Spectral norm of a general complex matrix, via the largest eigenvalue of A* A.
pub fn operator_norm(a: &CMatrix) -> f64 {
    let gram = a.adjoint() * a;
    let eig = gram.symmetric_eigen();
    eig.eigenvalues
        .iter()
        .map(|x| x.max(0.0))
        .fold(0.0, f64::max)
        .sqrt()
}

/// Eigendecomposition of a Hermitian matrix.
///
/// Returns eigenvalues in ascending order and the matching unitary matrix of
/// eigenvectors (columns), with the residual `||A U - U diag(lambda)||`
/// checked against `1e-10 * ||A||`.
pub fn herm_eig(a: &HermitianMatrix) -> Result<(DVector<f64>, CMatrix)> {
    let m = a.as_matrix();
    let n = m.nrows();
    let eig = m.clone().symmetric_eigen();
    let check = |vals: DVector<f64>, vecs: CMatrix| -> Result<(DVector<f64>, CMatrix)> {
        let scale = vals.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1.0);
        let residual =
            (m * &vecs - &vecs * CMatrix::from_diagonal(&vals.map(|x| Complex64::new(x, 0.0))))
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
        if residual > 10.0 * (n as f64) * TOL_METHOD * scale {
            return Err(Error::EigenFailed { residual });
        }
        Ok((vals, vecs))
    };
    let sorted = |raw_vals: &DVector<f64>, raw_vecs: &CMatrix| {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| raw_vals[i].total_cmp(&raw_vals[j]));
        let vals = DVector::from_iterator(n, order.iter().map(|&i| raw_vals[i]));
        let mut vecs = CMatrix::zeros(n, n);
        for (k, &i) in order.iter().enumerate() {
            vecs.set_column(k, &raw_vecs.column(i));
        }
        (vals, vecs)
    };
    let (vals, vecs) = sorted(&eig.eigenvalues, &eig.eigenvectors);
    match check(vals, vecs) {
        Ok(out) => Ok(out),
        // The QR iteration can fail on strongly degenerate spectra; the
        // cyclic Jacobi scheme below is slower but unconditionally stable.
        Err(_) => {
            let (jvals, jvecs) = jacobi_hermitian(m);
            let (vals, vecs) = sorted(&jvals, &jvecs);
            check(vals, vecs)
        }
    }
}

/// Cyclic Jacobi diagonalization of a Hermitian matrix. Returns unsorted
/// eigenvalues and the accumulated unitary.
fn jacobi_hermitian(m: &CMatrix) -> (DVector<f64>, CMatrix) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut v = CMatrix::identity(n, n);
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    for _sweep in 0..60 {
        let off = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| a[(p, q)].norm())
            .fold(0.0, f64::max);
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r <= 1e-18 * scale {
                    continue;
                }
                let w = apq / r;
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let theta = if (app - aqq).abs() <= 1e-300 {
                    std::f64::consts::FRAC_PI_4
                } else {
                    0.5 * (2.0 * r / (app - aqq)).atan()
                };
                let (s, c) = theta.sin_cos();
                // J has block [[c, -s], [s w*, c w*]] on (p, q); A <- J* A J
                let (jw_pp, jw_pq) = (Complex64::new(c, 0.0), Complex64::new(-s, 0.0));
                let (jw_qp, jw_qq) = (w.conj() * s, w.conj() * c);
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = akp * jw_pp + akq * jw_qp;
                    a[(k, q)] = akp * jw_pq + akq * jw_qq;
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = vkp * jw_pp + vkq * jw_qp;
                    v[(k, q)] = vkp * jw_pq + vkq * jw_qq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = apk * jw_pp.conj() + aqk * jw_qp.conj();
                    a[(q, k)] = apk * jw_pq.conj() + aqk * jw_qq.conj();
                }
            }
        }
    }
    let vals = DVector::from_fn(n, |i, _| a[(i, i)].re);
    (vals, v)
}

/// `exp(scale * A)` for Hermitian `A`, through the eigendecomposition.
///
/// Stable for large imaginary times; errors out when the real part of the
/// exponent would overflow.
pub fn expm_hermitian(a: &HermitianMatrix, scale: Complex64) -> Result<GeneralMatrix> {
    let (vals, vecs) = herm_eig(a)?;
    let max_abs = vals.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if scale.re.abs() * max_abs > 700.0 {
        return Err(Error::Overflow {
            context: "expm_hermitian: Re(scale)*max|lambda| too large; shift the spectrum or work in log-domain".into(),
            magnitude: scale.re.abs() * max_abs,
        });
    }
    let d = CVector::from_iterator(vals.len(), vals.iter().map(|&l| (scale * l).exp()));
    let mut scaled = vecs.clone();
    for (j, col) in d.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0); // keep column, multiply below
        for i in 0..vals.len() {
            scaled[(i, j)] *= *col;
        }
    }
    GeneralMatrix::new(scaled * vecs.adjoint())
}

/// Matrix exponential of a general complex matrix by scaling and squaring
/// with a truncated Taylor series on the scaled matrix.
pub fn expm_general(a: &GeneralMatrix) -> Result<GeneralMatrix> {
    let m = a.as_matrix();
    let n = m.nrows();
    let norm1 = (0..n)
        .map(|j| (0..n).map(|i| m[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max);
    if !norm1.is_finite() {
        return Err(Error::NonFinite);
    }
    let s = if norm1 > 0.5 {
        (norm1 / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let b = m / Complex64::new(2f64.powi(s as i32), 0.0);
    // Taylor on ||B|| <= 0.5 converges to machine precision in ~25 terms.
    let mut result = CMatrix::identity(n, n);
    let mut term = CMatrix::identity(n, n);
    for k in 1..=30 {
        term = (&term * &b) / Complex64::new(k as f64, 0.0);
        result += &term;
        if term.iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-18 {
            break;
        }
    }
    for _ in 0..s {
        result = &result * &result;
    }
    GeneralMatrix::new(result)
}

/// `log det(id + A)` via LU factorization in log-domain.
///
/// The real part accumulates `log |u_ii|` so no underflow occurs for
/// dimensions up to ~10^3; the imaginary part tracks the accumulated phase
/// (principal branch per factor, plus the permutation sign).
pub fn logdet_id_plus(a: &GeneralMatrix) -> Result<Complex64> {
    let n = a.dim();
    let m = a.as_matrix() + CMatrix::identity(n, n);
    logdet(&m)
}

/// `log det(M)` in log-domain with phase tracking.
pub fn logdet(m: &CMatrix) -> Result<Complex64> {
    let n = m.nrows();
    let lu = m.clone().lu();
    let mut log_abs = 0.0f64;
    let mut phase = 0.0f64;
    let u = lu.u();
    let mut min_diag = f64::INFINITY;
    for i in 0..n {
        let d = u[(i, i)];
        min_diag = min_diag.min(d.norm());
        if d.norm() == 0.0 {
            return Err(Error::SingularLogDet { smallest_sv: 0.0 });
        }
        log_abs += d.norm().ln();
        phase += d.arg();
    }
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if min_diag < 1e-14 * scale.max(1.0) {
        return Err(Error::SingularLogDet {
            smallest_sv: min_diag,
        });
    }
    // Permutation determinant is +-1.
    if lu.p().determinant::<f64>() < 0.0 {
        phase += std::f64::consts::PI;
    }
    Ok(Complex64::new(log_abs, phase))
}

/// Nodes and weights of a quadrature rule on `[a, b]`.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub nodes: DVector<f64>,
    pub weights: DVector<f64>,
    pub interval: (f64, f64),
}

impl QuadratureRule {
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(self.weights.iter())
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Gauss-Legendre rule with `n` nodes on `[a, b]` (Golub-Welsch).
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Result<QuadratureRule> {
    if n < 1 {
        return Err(Error::InvalidArgument("gauss_legendre: n >= 1 required".into()));
    }
    if !(a < b) {
        return Err(Error::InvalidArgument("gauss_legendre: a < b required".into()));
    }
    let mut j = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let c = (i as f64) / ((4 * i * i - 1) as f64).sqrt();
        j[(i, i - 1)] = c;
        j[(i - 1, i)] = c;
    }
    let eig = j.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let x = eig.eigenvalues[k];
            let w = 2.0 * eig.eigenvectors[(0, k)].powi(2);
            (x, w)
        })
        .collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let nodes = DVector::from_iterator(n, pairs.iter().map(|p| mid + half * p.0));
    let weights = DVector::from_iterator(n, pairs.iter().map(|p| half * p.1));
    Ok(QuadratureRule {
        nodes,
        weights,
        interval: (a, b),
    })
}

/// A finite-difference estimate together with a Richardson error indicator.
#[derive(Debug, Clone, Copy)]
pub struct DiffEstimate {
    pub value: f64,
    pub error_estimate: f64,
}

/// Directional derivative of `f` at `x0` along a unit `direction` by central
/// differences: a 4th-order stencil for `order == 1`, the standard second
/// difference for `order == 2`.
pub fn central_diff<F>(
    f: F,
    x0: &[f64],
    direction: &[f64],
    order: u8,
    h: f64,
) -> Result<DiffEstimate>
where
    F: Fn(&[f64]) -> f64,
{
    if x0.len() != direction.len() {
        return Err(Error::DimensionMismatch {
            expected: x0.len(),
            actual: direction.len(),
        });
    }
    let eval = |step: f64| -> Result<f64> {
        let x: Vec<f64> = x0
            .iter()
            .zip(direction.iter())
            .map(|(&xi, &di)| xi + step * di)
            .collect();
        let v = f(&x);
        if !v.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(v)
    };
    let stencil = |h: f64| -> Result<f64> {
        match order {
            1 => Ok((-eval(2.0 * h)? + 8.0 * eval(h)? - 8.0 * eval(-h)? + eval(-2.0 * h)?)
                / (12.0 * h)),
            2 => Ok((eval(h)? - 2.0 * eval(0.0)? + eval(-h)?) / (h * h)),
            _ => Err(Error::InvalidArgument(
                "central_diff: order must be 1 or 2".into(),
            )),
        }
    };
    let coarse = stencil(h)?;
    let fine = stencil(h / 2.0)?;
    Ok(DiffEstimate {
        value: fine,
        error_estimate: (fine - coarse).abs(),
    })
}

/// Trace of a complex matrix.
pub fn trace(m: &CMatrix) -> Complex64 {
    (0..m.nrows()).map(|i| m[(i, i)]).sum()
}

/// Trace norm `tr |X|` via singular values.
pub fn trace_norm(m: &CMatrix) -> f64 {
    let gram = m.adjoint() * m;
    let eig = gram.symmetric_eigen();
    eig.eigenvalues.iter().map(|x| x.max(0.0).sqrt()).sum()
}
