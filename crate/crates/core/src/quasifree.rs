//! Generating functions for quasi-free fermionic systems evaluated on the
//! one-particle space through determinant identities, plus the momentum-
//! space and closed-form large-time limits for exchange models.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{
    expm_hermitian, gauss_legendre, logdet_id_plus, CMatrix, GeneralMatrix, HermitianMatrix,
    QuadratureRule,
};

/// Which part of the one-particle space a basis direction belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockOwner {
    Reservoir(usize),
    SmallSystem,
}

/// A quasi-free fermionic system at the one-particle level.
///
/// `h0` is the uncoupled Hamiltonian, block-diagonal with respect to the
/// reservoir projectors (plus an optional small-system projector); the
/// coupled Hamiltonian is `h = h0 + lambda v`. The reservoir energy
/// observables are `e_j = P_j h0 P_j`.
///
/// On construction the block eigenbasis of `h0` is computed once: in that
/// basis every `exp(c . e)` is diagonal, and the deformed evolution
/// satisfies `e^{it h_alpha} = e^{alpha.e} e^{ith} e^{-alpha.e}` because
/// `h0` commutes with `alpha.e`. All generating functions reduce to a few
/// dense products with diagonal scalings.
#[derive(Debug, Clone)]
pub struct QuasiFreeSystem {
    pub dim: usize,
    pub ell: usize,
    pub h0: HermitianMatrix,
    pub v: HermitianMatrix,
    pub lambda: f64,
    pub beta: DVector<f64>,
    /// unitary whose columns are the block eigenbasis of h0
    basis: CMatrix,
    /// h0 eigenvalue per basis column
    eps: DVector<f64>,
    /// owner per basis column
    owners: Vec<BlockOwner>,
    /// coupled Hamiltonian expressed in the block eigenbasis
    h_in_basis: HermitianMatrix,
}

impl QuasiFreeSystem {
    /// Builds the system from one-particle data. `projectors[j]` is the
    /// orthogonal projector onto reservoir j; `small_system` is the
    /// optional projector onto the remaining small-system directions.
    pub fn new(
        h0: HermitianMatrix,
        v: HermitianMatrix,
        lambda: f64,
        projectors: Vec<CMatrix>,
        small_system: Option<CMatrix>,
        beta: DVector<f64>,
    ) -> Result<Self> {
        let dim = h0.dim();
        let ell = projectors.len();
        if v.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.dim(),
            });
        }
        if beta.len() != ell {
            return Err(Error::DimensionMismatch {
                expected: ell,
                actual: beta.len(),
            });
        }
        let mut all: Vec<(BlockOwner, &CMatrix)> = projectors
            .iter()
            .enumerate()
            .map(|(j, p)| (BlockOwner::Reservoir(j), p))
            .collect();
        if let Some(p) = &small_system {
            all.push((BlockOwner::SmallSystem, p));
        }
        // Projector invariants: idempotent, mutually orthogonal, complete,
        // and commuting with h0 (so the e_j are well-defined blocks).
        let id = CMatrix::identity(dim, dim);
        let mut sum = CMatrix::zeros(dim, dim);
        for (_, p) in &all {
            let dev = max_abs(&(*p * *p - *p));
            if dev > 1e-12 {
                return Err(Error::Precondition(format!(
                    "projector not idempotent (deviation {dev:e})"
                )));
            }
            let comm = p.as_slice();
            let _ = comm;
            let c = *p * h0.as_matrix() - h0.as_matrix() * *p;
            let cdev = max_abs(&c);
            if cdev > 1e-10 {
                return Err(Error::Precondition(format!(
                    "projector does not commute with h0 (deviation {cdev:e})"
                )));
            }
            sum += *p;
        }
        for i in 0..all.len() {
            for j in (i + 1)..all.len() {
                let dev = max_abs(&(all[i].1 * all[j].1));
                if dev > 1e-12 {
                    return Err(Error::Precondition(format!(
                        "projectors {i} and {j} are not orthogonal (deviation {dev:e})"
                    )));
                }
            }
        }
        if max_abs(&(sum - id)) > 1e-12 {
            return Err(Error::Precondition(
                "projectors do not sum to the identity".into(),
            ));
        }
        // Block eigenbasis: for each projector, an orthonormal range basis
        // rotated to diagonalize the restriction of h0.
        let mut basis = CMatrix::zeros(dim, dim);
        let mut eps = DVector::zeros(dim);
        let mut owners = Vec::with_capacity(dim);
        let mut col = 0usize;
        for (owner, p) in &all {
            let (pvals, pvecs) =
                crate::numerics::herm_eig(&HermitianMatrix::new((*p).clone())?)?;
            let range: Vec<usize> = (0..dim).filter(|&i| pvals[i] > 0.5).collect();
            let r = range.len();
            if r == 0 {
                continue;
            }
            let mut q = CMatrix::zeros(dim, r);
            for (c, &i) in range.iter().enumerate() {
                q.set_column(c, &pvecs.column(i));
            }
            let restricted = HermitianMatrix::new(q.adjoint() * h0.as_matrix() * &q)?;
            let (rv, rw) = crate::numerics::herm_eig(&restricted)?;
            let rotated = q * rw;
            for c in 0..r {
                basis.set_column(col, &rotated.column(c));
                eps[col] = rv[c];
                owners.push(*owner);
                col += 1;
            }
        }
        if col != dim {
            return Err(Error::Precondition(
                "projector ranges do not span the space".into(),
            ));
        }
        let mut h = h0.as_matrix().clone();
        h += v.as_matrix() * Complex64::new(lambda, 0.0);
        let h_in_basis = HermitianMatrix::new(basis.adjoint() * &h * &basis)?;
        Ok(Self {
            dim,
            ell,
            h0,
            v,
            lambda,
            beta,
            basis,
            eps,
            owners,
            h_in_basis,
        })
    }

    /// Convenience constructor for coordinate partitions: `owners[i]` is
    /// the owner of coordinate direction i.
    pub fn from_coordinate_partition(
        h0: HermitianMatrix,
        v: HermitianMatrix,
        lambda: f64,
        owners: &[BlockOwner],
        ell: usize,
        beta: DVector<f64>,
    ) -> Result<Self> {
        let dim = h0.dim();
        if owners.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: owners.len(),
            });
        }
        let proj = |o: BlockOwner| -> CMatrix {
            CMatrix::from_fn(dim, dim, |i, j| {
                if i == j && owners[i] == o {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
        };
        let projectors: Vec<CMatrix> = (0..ell).map(|j| proj(BlockOwner::Reservoir(j))).collect();
        let small = if owners.iter().any(|o| *o == BlockOwner::SmallSystem) {
            Some(proj(BlockOwner::SmallSystem))
        } else {
            None
        };
        Self::new(h0, v, lambda, projectors, small, beta)
    }

    pub fn owners(&self) -> &[BlockOwner] {
        &self.owners
    }

    pub fn eps(&self) -> &DVector<f64> {
        &self.eps
    }

    pub fn basis(&self) -> &CMatrix {
        &self.basis
    }

    /// `gamma . e` per basis direction (zero on the small-system block).
    fn gamma_dot_e(&self, gamma: &[Complex64]) -> Result<DVector<Complex64>> {
        if gamma.len() != self.ell {
            return Err(Error::DimensionMismatch {
                expected: self.ell,
                actual: gamma.len(),
            });
        }
        Ok(DVector::from_fn(self.dim, |i, _| match self.owners[i] {
            BlockOwner::Reservoir(j) => gamma[j] * self.eps[i],
            BlockOwner::SmallSystem => Complex64::new(0.0, 0.0),
        }))
    }

    /// One-particle norm of the coupled Hamiltonian.
    pub fn h_norm(&self) -> f64 {
        self.h_in_basis.operator_norm()
    }
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `log chi_t(alpha)` through the one-particle determinant identity
/// `chi_t = det(id + e^{-beta.e} e^{alpha.e} U_t e^{-alpha.e} U_t*) / det(id + e^{-beta.e})`
/// with `U_t = e^{ith}`, all in the block eigenbasis.
pub fn log_chi_quasifree(
    sys: &QuasiFreeSystem,
    t: f64,
    alpha: &[Complex64],
) -> Result<Complex64> {
    let da = sys.gamma_dot_e(alpha)?;
    let beta_c: Vec<Complex64> = sys.beta.iter().map(|&b| Complex64::new(b, 0.0)).collect();
    let db = sys.gamma_dot_e(&beta_c)?;
    let max_re = da
        .iter()
        .map(|z| z.re.abs())
        .chain(db.iter().map(|z| z.re.abs()))
        .fold(0.0, f64::max);
    if max_re > 350.0 {
        return Err(Error::Overflow {
            context: "log_chi_quasifree: exponent magnitude too large".into(),
            magnitude: max_re,
        });
    }
    let u = expm_hermitian(&sys.h_in_basis, Complex64::new(0.0, t))?;
    let um = u.as_matrix();
    // M = diag(e^{-beta.e}) diag(e^{+alpha.e}) U diag(e^{-alpha.e}) U*
    let mut m = um.clone();
    for c in 0..sys.dim {
        let f = (-da[c]).exp();
        for r in 0..sys.dim {
            m[(r, c)] *= f;
        }
    }
    let mut m = m * um.adjoint();
    for r in 0..sys.dim {
        let f = (da[r] - db[r]).exp();
        for c in 0..sys.dim {
            m[(r, c)] *= f;
        }
    }
    let num = logdet_id_plus(&GeneralMatrix::new(m)?)?;
    let den: f64 = db
        .iter()
        .map(|z| {
            // beta.e is real
            let x = -z.re;
            if x > 0.0 {
                x + (1.0 + (-x).exp()).ln()
            } else {
                (1.0 + x.exp()).ln()
            }
        })
        .sum();
    Ok(num - Complex64::new(den, 0.0))
}

/// `chi_t(alpha)` for real alpha; the determinant phase must vanish modulo
/// full turns, otherwise the evaluation is rejected as ill-conditioned.
pub fn chi_quasifree(sys: &QuasiFreeSystem, t: f64, alpha: &[f64]) -> Result<f64> {
    let ac: Vec<Complex64> = alpha.iter().map(|&a| Complex64::new(a, 0.0)).collect();
    let lc = log_chi_quasifree(sys, t, &ac)?;
    let tau = 2.0 * std::f64::consts::PI;
    let residual = (lc.im / tau - (lc.im / tau).round()) * tau;
    if residual.abs() > 1e-8 * lc.re.abs().max(1.0) {
        return Err(Error::PhaseResidual { phase: residual });
    }
    Ok(lc.re.exp())
}

/// Closed-form large-time CGF of the two-reservoir exchange chain:
/// `(1/2pi) int_0^2 log[cosh(u(b1-a1+a2)/2) cosh(u(a1+b2-a2)/2) /
/// (cosh(b1 u/2) cosh(b2 u/2))] du`.
pub fn chi_plus_xy_closed_form(
    beta: (f64, f64),
    alpha: (f64, f64),
    quad_n: usize,
) -> Result<f64> {
    if quad_n < 8 {
        return Err(Error::InvalidArgument(
            "chi_plus_xy_closed_form: quad_n >= 8 required".into(),
        ));
    }
    let (b1, b2) = beta;
    let (a1, a2) = alpha;
    let q = gauss_legendre(quad_n, 0.0, 2.0)?;
    let log_cosh = |x: f64| x.abs() - std::f64::consts::LN_2 + (1.0 + (-2.0 * x.abs()).exp()).ln();
    let val = q.integrate(|u| {
        log_cosh(0.5 * u * (b1 - a1 + a2)) + log_cosh(0.5 * u * (a1 + b2 - a2))
            - log_cosh(0.5 * u * b1)
            - log_cosh(0.5 * u * b2)
    });
    Ok(val / (2.0 * std::f64::consts::PI))
}

/// Momentum-space CGF specification: inverse temperatures, a scattering
/// matrix per momentum, and a quadrature rule on `[0, pi]` for the
/// dispersion `eps(xi) = 1 - cos(xi)`.
pub struct MomentumCGFSpec {
    pub beta: DVector<f64>,
    pub scattering: Box<dyn Fn(f64) -> CMatrix + Sync>,
    pub quadrature: QuadratureRule,
}

impl MomentumCGFSpec {
    pub fn new(
        beta: DVector<f64>,
        scattering: Box<dyn Fn(f64) -> CMatrix + Sync>,
        quad_n: usize,
    ) -> Result<Self> {
        let quadrature = gauss_legendre(quad_n, 0.0, std::f64::consts::PI)?;
        let ell = beta.len();
        for &xi in quadrature.nodes.iter() {
            let s = (scattering)(xi);
            if s.nrows() != ell || s.ncols() != ell {
                return Err(Error::DimensionMismatch {
                    expected: ell,
                    actual: s.nrows(),
                });
            }
            let dev = max_abs(&(s.adjoint() * &s - CMatrix::identity(ell, ell)));
            if dev > 1e-10 {
                return Err(Error::Precondition(format!(
                    "scattering matrix not unitary at xi = {xi} (deviation {dev:e})"
                )));
            }
        }
        Ok(Self {
            beta,
            scattering,
            quadrature,
        })
    }
}

/// The swap scattering matrix of the two-sided exchange chain:
/// off-diagonal exchange times a momentum-dependent phase (the phase drops
/// out of every determinant formed here).
pub fn xy_swap_scattering(j_sign: f64, m: i32) -> Box<dyn Fn(f64) -> CMatrix + Sync> {
    Box::new(move |xi: f64| {
        let phase = Complex64::new(0.0, -2.0 * j_sign.signum() * m as f64 * xi).exp();
        let mut s = CMatrix::zeros(2, 2);
        s[(0, 1)] = phase;
        s[(1, 0)] = phase;
        s
    })
}

/// Momentum-space CGF
/// `(1/2pi) int_0^pi log[det(id + S* e^{-K(beta-alpha)} S e^{-K(alpha)}) /
/// det(id + e^{-K(beta)})] eps'(xi) dxi` with `K(gamma, xi) = diag(-gamma_j eps(xi))`.
pub fn chi_plus_momentum(spec: &MomentumCGFSpec, alpha: &[f64]) -> Result<f64> {
    let ell = spec.beta.len();
    if alpha.len() != ell {
        return Err(Error::DimensionMismatch {
            expected: ell,
            actual: alpha.len(),
        });
    }
    let mut total = 0.0;
    for (&xi, &w) in spec.quadrature.nodes.iter().zip(spec.quadrature.weights.iter()) {
        let eps = 1.0 - xi.cos();
        let deps = xi.sin();
        let s = (spec.scattering)(xi);
        // e^{-K(gamma)} = diag(e^{+gamma_j eps})
        let dg = |g: &dyn Fn(usize) -> f64| {
            CMatrix::from_fn(ell, ell, |i, j| {
                if i == j {
                    Complex64::new((g(i) * eps).exp(), 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
        };
        let da = dg(&|j| alpha[j]);
        let dba = dg(&|j| spec.beta[j] - alpha[j]);
        let db = dg(&|j| spec.beta[j]);
        let num = (CMatrix::identity(ell, ell) + s.adjoint() * dba * &s * da).determinant();
        let den = (CMatrix::identity(ell, ell) + db).determinant();
        let ratio = num.re / den.re;
        if !(ratio > 0.0) || num.im.abs() > 1e-10 * num.norm() {
            return Err(Error::NonPositiveDeterminant { xi });
        }
        total += w * ratio.ln() * deps;
    }
    Ok(total / (2.0 * std::f64::consts::PI))
}

/// One point of a finite-time CGF trajectory.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub log_chi_over_t: f64,
}

/// A `(1/t) log chi_t` trajectory with convergence and recurrence
/// diagnostics.
#[derive(Debug, Clone)]
pub struct FiniteTimeTrajectory {
    pub points: Vec<TrajectoryPoint>,
    /// last two entries differ by less than the convergence tolerance
    pub converged: bool,
    /// the one-particle dimension exceeds the heuristic 4 t ||h|| guard,
    /// so Poincare recurrences should not pollute the largest time
    pub recurrence_guard_ok: bool,
}

pub const TOL_CONV_DEFAULT: f64 = 1e-2;

/// Evaluates `(1/t) log chi_t(alpha)` along an ascending list of times.
pub fn chi_plus_finite_time(
    sys: &QuasiFreeSystem,
    alpha: &[f64],
    t_list: &[f64],
    tol_conv: f64,
) -> Result<FiniteTimeTrajectory> {
    if t_list.is_empty() {
        return Err(Error::Precondition("chi_plus_finite_time: empty t list".into()));
    }
    let ac: Vec<Complex64> = alpha.iter().map(|&a| Complex64::new(a, 0.0)).collect();
    let mut points = Vec::with_capacity(t_list.len());
    for &t in t_list {
        let lc = log_chi_quasifree(sys, t, &ac)?;
        points.push(TrajectoryPoint {
            t,
            log_chi_over_t: lc.re / t,
        });
    }
    let converged = points.len() >= 2 && {
        let a = points[points.len() - 2].log_chi_over_t;
        let b = points[points.len() - 1].log_chi_over_t;
        (a - b).abs() < tol_conv
    };
    let t_max = t_list.iter().cloned().fold(0.0, f64::max);
    let recurrence_guard_ok = sys.dim as f64 >= 4.0 * t_max * sys.h_norm() / std::f64::consts::PI;
    Ok(FiniteTimeTrajectory {
        points,
        converged,
        recurrence_guard_ok,
    })
}
