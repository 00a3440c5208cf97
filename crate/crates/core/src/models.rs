//! Builders for the concrete systems studied here: the electronic
//! black-box (dot-plus-leads) model, the XY spin chain in both its spin and
//! Jordan-Wigner representations, the spin-fermion model, and generic
//! two-part 1-D spin lattices. Also the bridge lifting a quasi-free system
//! to its exact many-body representation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::confined::ConfinedMultisystem;
use crate::error::{Error, Result};
use crate::fock::{self, ModeOwner, ModeSet};
use crate::numerics::{CMatrix, HermitianMatrix};
use crate::quasifree::{BlockOwner, QuasiFreeSystem};

/// Hard cap on spin-representation sites (dense 2^n matrices).
pub const SPIN_SITE_CAP: usize = 12;

// ---------------------------------------------------------------------------
// joint diagonalization of commuting real symmetric matrices

/// Simultaneously diagonalizes a family of commuting real symmetric
/// matrices. Returns the orthogonal basis and the diagonal of each matrix
/// in that basis.
///
/// Restricting to real inputs keeps the returned basis real, so couplings
/// rotated into it stay real whenever they were — the witness used by the
/// time-reversal-invariance check.
pub fn joint_diagonalize_real(
    mats: &[DMatrix<f64>],
) -> Result<(DMatrix<f64>, Vec<DVector<f64>>)> {
    if mats.is_empty() {
        return Err(Error::InvalidArgument("no matrices to diagonalize".into()));
    }
    let n = mats[0].nrows();
    for m in mats {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: m.nrows(),
            });
        }
    }
    let scale = mats
        .iter()
        .flat_map(|m| m.iter())
        .map(|x| x.abs())
        .fold(0.0f64, f64::max)
        .max(1.0);
    let q = jd_recurse(mats, 1e-6 * scale);
    // Verify commutativity by checking that every matrix is diagonal in
    // the common basis, then read the diagonals off.
    let mut diags = Vec::with_capacity(mats.len());
    for m in mats {
        let r = q.transpose() * m * &q;
        let mut off = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off = off.max(r[(i, j)].abs());
                }
            }
        }
        if off > 1e-6 * scale {
            return Err(Error::NonCommutingParts { norm: off });
        }
        diags.push(DVector::from_fn(n, |i, _| r[(i, i)]));
    }
    Ok((q, diags))
}

fn jd_recurse(mats: &[DMatrix<f64>], tol: f64) -> DMatrix<f64> {
    let n = mats[0].nrows();
    let eig = mats[0].clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut q = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        q.set_column(c, &eig.eigenvectors.column(i));
    }
    if mats.len() == 1 {
        return q;
    }
    // Within each degenerate eigenspace of the first matrix, recurse on
    // the restrictions of the remaining ones.
    let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut start = 0usize;
    while start < n {
        let mut end = start + 1;
        while end < n && (vals[end] - vals[end - 1]).abs() <= tol {
            end += 1;
        }
        let r = end - start;
        if r > 1 {
            let sub = q.columns(start, r).into_owned();
            let rest: Vec<DMatrix<f64>> = mats[1..]
                .iter()
                .map(|m| sub.transpose() * m * &sub)
                .collect();
            let qs = jd_recurse(&rest, tol);
            let rotated = sub * qs;
            for c in 0..r {
                q.set_column(start + c, &rotated.column(c));
            }
        }
        start = end;
    }
    q
}

fn real_part_checked(m: &CMatrix, what: &str) -> Result<DMatrix<f64>> {
    let max_im = m.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if max_im > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "{what}: entries have imaginary parts up to {max_im:e}; only real couplings are supported by the joint diagonalization"
        )));
    }
    Ok(m.map(|z| z.re))
}

// ---------------------------------------------------------------------------
// Pauli helpers on a chain of qubits (site 0 is the slowest-varying factor)

fn pauli(i: usize) -> DMatrix<f64> {
    match i {
        1 => DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        3 => DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
        _ => DMatrix::identity(2, 2),
    }
}

/// sigma^y as a real matrix times i: y = i * ym, ym = [[0,-1],[1,0]]
fn pauli_y_over_i() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])
}

/// Embeds a two-site operator acting on sites (x, x+1) of an n-site chain.
fn embed_two_site(n: usize, x: usize, op: &DMatrix<f64>) -> DMatrix<f64> {
    let left = DMatrix::<f64>::identity(1 << x, 1 << x);
    let right_dim = 1 << (n - x - 2);
    let right = DMatrix::<f64>::identity(right_dim, right_dim);
    left.kronecker(op).kronecker(&right)
}

/// Embeds a single-site operator at site x of an n-site chain.
fn embed_one_site(n: usize, x: usize, op: &DMatrix<f64>) -> DMatrix<f64> {
    let left = DMatrix::<f64>::identity(1 << x, 1 << x);
    let right_dim = 1 << (n - x - 1);
    let right = DMatrix::<f64>::identity(right_dim, right_dim);
    left.kronecker(op).kronecker(&right)
}

/// The exchange bond `sigma^1 sigma^1 + sigma^2 sigma^2` on two sites
/// (real: the two imaginary factors of sigma^2 cancel).
pub fn exchange_bond() -> DMatrix<f64> {
    let xx = pauli(1).kronecker(&pauli(1));
    let ym = pauli_y_over_i();
    // sigma^2 (x) sigma^2 = (i ym) (x) (i ym) = - ym (x) ym
    let yy = -(ym.kronecker(&ym));
    xx + yy
}

// ---------------------------------------------------------------------------
// EBB model

/// The dot-plus-leads model at the one-particle level: a single dot level
/// `eps0` coupled with strength `lambda` to the first site of `ell`
/// identical leads, each a length-`L` discrete Dirichlet Laplacian `-Δ/2`
/// (diagonal 1, off-diagonal -1/2, spectrum in (0, 2)).
pub fn build_ebb(
    l_sites: usize,
    ell: usize,
    lambda: f64,
    eps0: f64,
    beta: DVector<f64>,
) -> Result<QuasiFreeSystem> {
    if l_sites < 1 {
        return Err(Error::Precondition("build_ebb: L >= 1 required".into()));
    }
    if ell < 2 {
        return Err(Error::Precondition("build_ebb: at least 2 leads required".into()));
    }
    let dim = 1 + ell * l_sites;
    let mut h0 = CMatrix::zeros(dim, dim);
    h0[(0, 0)] = Complex64::new(eps0, 0.0);
    let mut owners = vec![BlockOwner::SmallSystem];
    for lead in 0..ell {
        let off = 1 + lead * l_sites;
        for s in 0..l_sites {
            h0[(off + s, off + s)] = Complex64::new(1.0, 0.0);
            if s + 1 < l_sites {
                h0[(off + s, off + s + 1)] = Complex64::new(-0.5, 0.0);
                h0[(off + s + 1, off + s)] = Complex64::new(-0.5, 0.0);
            }
            owners.push(BlockOwner::Reservoir(lead));
        }
    }
    let mut v = CMatrix::zeros(dim, dim);
    for lead in 0..ell {
        let first = 1 + lead * l_sites;
        v[(0, first)] = Complex64::new(1.0, 0.0);
        v[(first, 0)] = Complex64::new(1.0, 0.0);
    }
    QuasiFreeSystem::from_coordinate_partition(
        HermitianMatrix::new(h0)?,
        HermitianMatrix::new(v)?,
        lambda,
        &owners,
        ell,
        beta,
    )
}

// ---------------------------------------------------------------------------
// XY chain

/// Both representations of the open XY chain on sites `-L..=L`: the spin
/// picture (only when the chain fits the dense cap) and the one-particle
/// Jordan-Wigner picture.
///
/// The center `[-M, M]` is the small system; `[-L, -M-1]` and `[M+1, L]`
/// are the two reservoirs. Bonds carry `-(J/4)(s1 s1 + s2 s2)`, sites
/// `-(lambda_field/2) s3`; the two boundary bonds form the coupling. In
/// the one-particle picture this is the tridiagonal matrix with diagonal
/// `lambda_field` and off-diagonal `-J/2` (the additive constant from the
/// transformation is dropped; flux statistics are insensitive to it).
pub fn build_xy(
    l_half: usize,
    m_half: usize,
    j: f64,
    lambda_field: f64,
    beta: DVector<f64>,
) -> Result<(Option<ConfinedMultisystem>, QuasiFreeSystem)> {
    if m_half >= l_half {
        return Err(Error::Precondition("build_xy: L > M required".into()));
    }
    if beta.len() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            actual: beta.len(),
        });
    }
    let n = 2 * l_half + 1; // sites indexed 0..n, site i <-> position i - L
    let left_end = l_half - m_half - 1; // last site of the left reservoir
    let small_end = l_half + m_half; // last site of the small system

    // --- one-particle picture ---
    let mut h0 = CMatrix::zeros(n, n);
    let mut v = CMatrix::zeros(n, n);
    let mut owners = Vec::with_capacity(n);
    for i in 0..n {
        h0[(i, i)] = Complex64::new(lambda_field, 0.0);
        owners.push(if i <= left_end {
            BlockOwner::Reservoir(0)
        } else if i <= small_end {
            BlockOwner::SmallSystem
        } else {
            BlockOwner::Reservoir(1)
        });
    }
    let hop = Complex64::new(-j / 2.0, 0.0);
    for i in 0..n - 1 {
        let crossing = i == left_end || i == small_end;
        let target = if crossing { &mut v } else { &mut h0 };
        target[(i, i + 1)] = hop;
        target[(i + 1, i)] = hop;
    }
    let jw = QuasiFreeSystem::from_coordinate_partition(
        HermitianMatrix::new(h0)?,
        HermitianMatrix::new(v)?,
        1.0,
        &owners,
        2,
        beta.clone(),
    )?;

    // --- spin picture ---
    let spin = if n <= SPIN_SITE_CAP {
        let dim = 1usize << n;
        let mut h_left = DMatrix::<f64>::zeros(dim, dim);
        let mut h_small = DMatrix::<f64>::zeros(dim, dim);
        let mut h_right = DMatrix::<f64>::zeros(dim, dim);
        let mut v_spin = DMatrix::<f64>::zeros(dim, dim);
        let bond = exchange_bond() * (-j / 4.0);
        let field = pauli(3) * (-lambda_field / 2.0);
        for i in 0..n {
            let part = if i <= left_end {
                &mut h_left
            } else if i <= small_end {
                &mut h_small
            } else {
                &mut h_right
            };
            *part += embed_one_site(n, i, &field);
        }
        for i in 0..n - 1 {
            let term = embed_two_site(n, i, &bond);
            if i == left_end || i == small_end {
                v_spin += term;
            } else if i < left_end {
                h_left += term;
            } else if i < small_end {
                h_small += term;
            } else {
                h_right += term;
            }
        }
        let (q, diags) = joint_diagonalize_real(&[h_left, h_right, h_small])?;
        let v_rot = q.transpose() * v_spin * &q;
        let v_herm = HermitianMatrix::from_real(&v_rot)?;
        let sys = ConfinedMultisystem::new(
            vec![diags[0].clone(), diags[1].clone()],
            v_herm,
            beta,
            "xy-spin",
        )?
        .with_small_system(diags[2].clone())?;
        Some(sys)
    } else {
        None
    };
    Ok((spin, jw))
}

// ---------------------------------------------------------------------------
// spin-fermion model

/// Default spin-fermion reservoir data: `n` modes uniformly on `(0, 4]`
/// with form factor `v(x) = sqrt(x) e^{-x/2}`.
pub fn default_spin_fermion_grid(n: usize) -> (DVector<f64>, DVector<f64>) {
    let grid = DVector::from_fn(n, |k, _| 4.0 * (k + 1) as f64 / n as f64);
    let ff = grid.map(|x: f64| x.sqrt() * (-x / 2.0).exp());
    (grid, ff)
}

/// A two-level system (`H_S = sigma^3`) linearly coupled to `ell`
/// finite fermionic reservoirs through field operators:
/// `V = lambda sum_j sigma^1 (x) phi_j(v_j)`.
///
/// Delivered as a confined system in the reduced description: the measured
/// energies are the reservoir ones, and `H_S` rides along as the attached
/// small-system diagonal (used both in the Hamiltonian and by the
/// full-picture generating function).
pub fn build_spin_fermion(
    energy_grids: &[DVector<f64>],
    form_factors: &[DVector<f64>],
    lambda: f64,
    beta: DVector<f64>,
) -> Result<ConfinedMultisystem> {
    let ell = energy_grids.len();
    if form_factors.len() != ell || beta.len() != ell {
        return Err(Error::DimensionMismatch {
            expected: ell,
            actual: form_factors.len().min(beta.len()),
        });
    }
    let mut owners = Vec::new();
    for (j, g) in energy_grids.iter().enumerate() {
        if g.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Precondition(
                "build_spin_fermion: mode energies must be positive".into(),
            ));
        }
        if form_factors[j].len() != g.len() {
            return Err(Error::DimensionMismatch {
                expected: g.len(),
                actual: form_factors[j].len(),
            });
        }
        owners.extend(std::iter::repeat(ModeOwner::Reservoir(j)).take(g.len()));
    }
    let modes = ModeSet::new(owners)?;
    let fdim = modes.dim();
    let dim = 2 * fdim;

    // Reservoir energies: diagonal occupation sums, equal on both qubit
    // branches. Basis index = s * fdim + b with s the qubit bit.
    let mut energies = Vec::with_capacity(ell);
    for (j, g) in energy_grids.iter().enumerate() {
        let mode_ids = modes.modes_of(ModeOwner::Reservoir(j));
        let mut eps_full = DVector::zeros(modes.n_modes());
        for (local, &k) in mode_ids.iter().enumerate() {
            eps_full[k] = g[local];
        }
        let diag = fock::number_diagonal(&modes, &eps_full)?;
        energies.push(DVector::from_fn(dim, |i, _| diag[i % fdim]));
    }
    // H_S = sigma^3 acting on the qubit: +1 on s = 0, -1 on s = 1.
    let hs = DVector::from_fn(dim, |i, _| if i < fdim { 1.0 } else { -1.0 });

    // V = lambda sum_j sigma^1 (x) phi_j(v_j)
    let mut phi_total = CMatrix::zeros(fdim, fdim);
    for (j, ff) in form_factors.iter().enumerate() {
        let mode_ids = modes.modes_of(ModeOwner::Reservoir(j));
        let mut vvec = DVector::from_element(modes.n_modes(), Complex64::new(0.0, 0.0));
        for (local, &k) in mode_ids.iter().enumerate() {
            vvec[k] = Complex64::new(ff[local], 0.0);
        }
        phi_total += fock::field_op(&modes, &vvec)?.into_matrix();
    }
    let mut v = CMatrix::zeros(dim, dim);
    for r in 0..fdim {
        for c in 0..fdim {
            let val = phi_total[(r, c)] * lambda;
            v[(r, fdim + c)] = val;
            v[(fdim + r, c)] = val;
        }
    }
    ConfinedMultisystem::new(energies, HermitianMatrix::new(v)?, beta, "spin-fermion")?
        .with_small_system(hs)
}

// ---------------------------------------------------------------------------
// generic two-part 1-D spin lattice

/// A 1-D chain of qubits cut into a left part `0..=boundary` and a right
/// part, with a translation-invariant two-site interaction block `s_local`
/// on every bond. The single crossing bond, scaled by `j_boundary`, is the
/// coupling; everything is delivered in the joint eigenbasis of the two
/// part Hamiltonians.
pub fn build_spin_lattice_1d(
    n_sites: usize,
    boundary: usize,
    s_local: &HermitianMatrix,
    j_boundary: f64,
    beta: DVector<f64>,
) -> Result<ConfinedMultisystem> {
    if n_sites > SPIN_SITE_CAP {
        return Err(Error::Precondition(format!(
            "build_spin_lattice_1d: n_sites {n_sites} exceeds the cap {SPIN_SITE_CAP}"
        )));
    }
    if boundary + 1 >= n_sites {
        return Err(Error::Precondition(
            "build_spin_lattice_1d: boundary must leave at least one site on the right".into(),
        ));
    }
    if s_local.dim() != 4 {
        return Err(Error::InvalidArgument(
            "build_spin_lattice_1d: s_local must be a two-site (4x4) block".into(),
        ));
    }
    let s_real = real_part_checked(s_local.as_matrix(), "build_spin_lattice_1d")?;
    let dim = 1usize << n_sites;
    let mut h1 = DMatrix::<f64>::zeros(dim, dim);
    let mut h2 = DMatrix::<f64>::zeros(dim, dim);
    let mut v = DMatrix::<f64>::zeros(dim, dim);
    for x in 0..n_sites - 1 {
        let term = embed_two_site(n_sites, x, &s_real);
        if x + 1 <= boundary {
            h1 += term;
        } else if x > boundary {
            h2 += term;
        } else {
            v += term * j_boundary;
        }
    }
    // Disjoint supports guarantee commutation; verify numerically anyway.
    let comm = &h1 * &h2 - &h2 * &h1;
    let cnorm = comm.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if cnorm > 1e-10 {
        return Err(Error::NonCommutingParts { norm: cnorm });
    }
    let (q, diags) = joint_diagonalize_real(&[h1, h2])?;
    let v_rot = q.transpose() * v * &q;
    ConfinedMultisystem::new(
        vec![diags[0].clone(), diags[1].clone()],
        HermitianMatrix::from_real(&v_rot)?,
        beta,
        "spin-lattice-1d",
    )
}

// ---------------------------------------------------------------------------
// quasi-free -> many-body bridge

/// Lifts a quasi-free system to its exact many-body confined
/// representation on the 2^dim Fock space: reservoir energies become
/// occupation sums of the block eigenvalues and the off-diagonal part of
/// the one-particle Hamiltonian is second-quantized into the interaction.
pub fn fock_representation(sys: &QuasiFreeSystem) -> Result<ConfinedMultisystem> {
    let owners: Vec<ModeOwner> = sys
        .owners()
        .iter()
        .map(|o| match o {
            BlockOwner::Reservoir(j) => ModeOwner::Reservoir(*j),
            BlockOwner::SmallSystem => ModeOwner::SmallSystem,
        })
        .collect();
    let modes = ModeSet::new(owners)?;
    let fdim = modes.dim();
    let n = sys.dim;
    let eps = sys.eps();
    let mut energies = Vec::with_capacity(sys.ell);
    for j in 0..sys.ell {
        let mut eps_j = DVector::zeros(n);
        for k in modes.modes_of(ModeOwner::Reservoir(j)) {
            eps_j[k] = eps[k];
        }
        energies.push(fock::number_diagonal(&modes, &eps_j)?);
    }
    let mut eps_small = DVector::zeros(n);
    let small_modes = modes.modes_of(ModeOwner::SmallSystem);
    for &k in &small_modes {
        eps_small[k] = eps[k];
    }
    let hs = fock::number_diagonal(&modes, &eps_small)?;
    // Coupling: the one-particle Hamiltonian in the block eigenbasis minus
    // its diagonal, lifted to the Fock space.
    let h_basis = sys.basis().adjoint() * {
        let mut h = sys.h0.as_matrix().clone();
        h += sys.v.as_matrix() * Complex64::new(sys.lambda, 0.0);
        h
    } * sys.basis();
    let mut coupling = h_basis;
    for i in 0..n {
        coupling[(i, i)] -= Complex64::new(eps[i], 0.0);
    }
    let v_many = fock::second_quantize(&modes, &HermitianMatrix::new(coupling)?)?;
    let mut built = ConfinedMultisystem::new(
        energies,
        v_many,
        sys.beta.clone(),
        "fock-representation",
    )?;
    if !small_modes.is_empty() {
        let dim_check = 1usize << n;
        debug_assert_eq!(hs.len(), dim_check);
        built = built.with_small_system(hs)?;
    }
    let _ = fdim;
    Ok(built)
}
