//! Fermionic second quantization on the full 2^n occupation basis:
//! Jordan-Wigner creation operators, one-body operator lifts, and field
//! operators. Used for exact many-body cross-checks of the determinant
//! formulas.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{CMatrix, GeneralMatrix, HermitianMatrix};

/// Hard cap on the number of modes (dense matrices scale as 4^n in memory).
pub const MODE_CAP: usize = 14;

/// Assignment of each fermionic mode to a reservoir (or the small system).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeOwner {
    Reservoir(usize),
    SmallSystem,
}

/// A set of fermionic modes with a reservoir partition.
///
/// Occupation-basis convention: mode 0 is the fastest-varying bit of the
/// basis index, and Jordan-Wigner sign strings act on modes with smaller
/// index.
#[derive(Debug, Clone)]
pub struct ModeSet {
    pub owners: Vec<ModeOwner>,
}

impl ModeSet {
    pub fn new(owners: Vec<ModeOwner>) -> Result<Self> {
        let n = owners.len();
        if n > MODE_CAP {
            let dim = 1usize << n;
            return Err(Error::FockCapExceeded {
                modes: n,
                dim,
                mem_mb: dim * dim * 16 / (1024 * 1024),
                cap: MODE_CAP,
            });
        }
        Ok(Self { owners })
    }

    /// All modes owned by a single reservoir (index 0).
    pub fn single_reservoir(n: usize) -> Result<Self> {
        Self::new(vec![ModeOwner::Reservoir(0); n])
    }

    pub fn n_modes(&self) -> usize {
        self.owners.len()
    }

    pub fn dim(&self) -> usize {
        1 << self.owners.len()
    }

    pub fn modes_of(&self, owner: ModeOwner) -> Vec<usize> {
        self.owners
            .iter()
            .enumerate()
            .filter(|(_, o)| **o == owner)
            .map(|(i, _)| i)
            .collect()
    }
}

/// The creation operator `a*_k` in the occupation basis, with the
/// Jordan-Wigner string `(-1)^{n_0 + ... + n_{k-1}}` supplying the signs.
pub fn creation_op(modes: &ModeSet, k: usize) -> Result<GeneralMatrix> {
    let n = modes.n_modes();
    if k >= n {
        return Err(Error::InvalidArgument(format!(
            "creation_op: mode {k} out of range (n_modes = {n})"
        )));
    }
    let dim = modes.dim();
    let mut m = CMatrix::zeros(dim, dim);
    for basis in 0..dim {
        if basis & (1 << k) != 0 {
            continue; // already occupied
        }
        let target = basis | (1 << k);
        let parity = (basis & ((1 << k) - 1)).count_ones();
        let sign = if parity % 2 == 0 { 1.0 } else { -1.0 };
        m[(target, basis)] = Complex64::new(sign, 0.0);
    }
    GeneralMatrix::new(m)
}

/// The annihilation operator `a_k` (adjoint of `creation_op`).
pub fn annihilation_op(modes: &ModeSet, k: usize) -> Result<GeneralMatrix> {
    let c = creation_op(modes, k)?;
    GeneralMatrix::new(c.as_matrix().adjoint())
}

/// Lift of a one-particle operator to the Fock space:
/// `dGamma(h) = sum_{km} h_km a*_k a_m`, built entrywise.
///
/// `<basis'| a*_k a_m |basis>` is nonzero only when `basis` has mode m
/// occupied and (k == m or mode k empty); the sign is the product of the
/// two Jordan-Wigner strings evaluated in sequence.
pub fn second_quantize(modes: &ModeSet, h: &HermitianMatrix) -> Result<HermitianMatrix> {
    let n = modes.n_modes();
    if h.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: h.dim(),
        });
    }
    let dim = modes.dim();
    let hm = h.as_matrix();
    let mut out = CMatrix::zeros(dim, dim);
    for basis in 0..dim {
        for m in 0..n {
            if basis & (1 << m) == 0 {
                continue;
            }
            // apply a_m: sign from modes below m, clear bit m
            let s1 = (basis & ((1 << m) - 1)).count_ones();
            let mid = basis & !(1 << m);
            for k in 0..n {
                if mid & (1 << k) != 0 {
                    continue;
                }
                let hkm = hm[(k, m)];
                if hkm.norm() == 0.0 {
                    continue;
                }
                let s2 = (mid & ((1 << k) - 1)).count_ones();
                let target = mid | (1 << k);
                let sign = if (s1 + s2) % 2 == 0 { 1.0 } else { -1.0 };
                out[(target, basis)] += hkm * sign;
            }
        }
    }
    HermitianMatrix::new(out)
}

/// The self-adjoint field operator `(a*(v) + a(v)) / sqrt(2)` with
/// `a*(v) = sum_k v_k a*_k`.
pub fn field_op(modes: &ModeSet, v: &DVector<Complex64>) -> Result<HermitianMatrix> {
    let n = modes.n_modes();
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: v.len(),
        });
    }
    let dim = modes.dim();
    let mut m = CMatrix::zeros(dim, dim);
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    for k in 0..n {
        if v[k].norm() == 0.0 {
            continue;
        }
        let c = creation_op(modes, k)?;
        m += c.as_matrix() * (v[k] * inv_sqrt2);
        m += c.as_matrix().adjoint() * (v[k].conj() * inv_sqrt2);
    }
    HermitianMatrix::new(m)
}

/// Diagonal of `dGamma(diag(eps))` in the occupation basis: entry `b` is
/// the sum of `eps_k` over occupied modes of `b`.
pub fn number_diagonal(modes: &ModeSet, eps: &DVector<f64>) -> Result<DVector<f64>> {
    let n = modes.n_modes();
    if eps.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: eps.len(),
        });
    }
    let dim = modes.dim();
    Ok(DVector::from_fn(dim, |b, _| {
        (0..n)
            .filter(|k| b & (1 << k) != 0)
            .map(|k| eps[k])
            .sum()
    }))
}
