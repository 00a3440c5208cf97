//! Large-time thermodynamics built from a cumulant generating function:
//! rate functions via Legendre transforms on grids, fluctuation-symmetry
//! diagnostics, central-limit covariance, kinetic coefficients, and the
//! fluctuation-dissipation/Onsager checks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::central_diff;

/// Effective infinity for rate-function values: finite grids never produce
/// a literal infinity, so anything above this is reported as capped.
pub const RATE_CAP: f64 = 1e6;

/// A rectangular grid of CGF samples: `axes[j]` is the list of
/// alpha-coordinates along axis j, `values` is row-major with the last
/// axis fastest.
#[derive(Debug, Clone)]
pub struct CGFGrid {
    pub axes: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub label: String,
}

impl CGFGrid {
    /// Samples `cgf` on the Cartesian product of the axes.
    pub fn sample<F: Fn(&[f64]) -> f64>(
        axes: Vec<Vec<f64>>,
        cgf: F,
        label: impl Into<String>,
    ) -> Result<Self> {
        if axes.is_empty() || axes.iter().any(|a| a.is_empty()) {
            return Err(Error::InvalidArgument("CGFGrid: empty axis".into()));
        }
        let n: usize = axes.iter().map(|a| a.len()).product();
        let mut values = Vec::with_capacity(n);
        let mut point = vec![0.0; axes.len()];
        let mut idx = vec![0usize; axes.len()];
        loop {
            for (j, &k) in idx.iter().enumerate() {
                point[j] = axes[j][k];
            }
            let v = cgf(&point);
            if !v.is_finite() {
                return Err(Error::NonFinite);
            }
            values.push(v);
            // odometer, last axis fastest
            let mut j = axes.len();
            loop {
                if j == 0 {
                    return Ok(Self {
                        axes,
                        values,
                        label: label.into(),
                    });
                }
                j -= 1;
                idx[j] += 1;
                if idx[j] < axes[j].len() {
                    break;
                }
                idx[j] = 0;
            }
        }
    }

    /// Uniform symmetric axis `[-extent, extent]` with `n` points per axis.
    pub fn uniform_axes(ell: usize, extent: f64, n: usize) -> Vec<Vec<f64>> {
        let axis: Vec<f64> = (0..n)
            .map(|k| -extent + 2.0 * extent * k as f64 / (n - 1) as f64)
            .collect();
        vec![axis; ell]
    }

    pub fn ell(&self) -> usize {
        self.axes.len()
    }

    fn strides(&self) -> Vec<usize> {
        let ell = self.axes.len();
        let mut s = vec![1usize; ell];
        for j in (0..ell - 1).rev() {
            s[j] = s[j + 1] * self.axes[j + 1].len();
        }
        s
    }

    fn flat(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(self.strides().iter())
            .map(|(&i, &s)| i * s)
            .sum()
    }

    fn point(&self, idx: &[usize]) -> DVector<f64> {
        DVector::from_iterator(
            self.axes.len(),
            idx.iter().enumerate().map(|(j, &k)| self.axes[j][k]),
        )
    }
}

/// Rate-function samples: `I(s)` per grid point with the effective-infinity
/// cap and the exposed-point diagnostic (interior maximizer whose local CGF
/// gradient matches `-s`).
#[derive(Debug, Clone)]
pub struct RateFunctionGrid {
    pub s_points: Vec<DVector<f64>>,
    pub i_values: Vec<f64>,
    pub exposed: Vec<bool>,
    pub cap: f64,
}

/// Legendre transform of a CGF grid: `I(s) = max over grid alpha of
/// -(alpha.s + chi(alpha))`, capped at `RATE_CAP`.
pub fn legendre_transform(
    cgf: &CGFGrid,
    s_points: &[DVector<f64>],
) -> Result<RateFunctionGrid> {
    let ell = cgf.ell();
    if cgf.values.is_empty() {
        return Err(Error::InvalidArgument("legendre_transform: empty grid".into()));
    }
    let sizes: Vec<usize> = cgf.axes.iter().map(|a| a.len()).collect();
    let mut i_values = Vec::with_capacity(s_points.len());
    let mut exposed = Vec::with_capacity(s_points.len());
    for s in s_points {
        if s.len() != ell {
            return Err(Error::DimensionMismatch {
                expected: ell,
                actual: s.len(),
            });
        }
        let mut best = f64::NEG_INFINITY;
        let mut best_idx = vec![0usize; ell];
        let mut idx = vec![0usize; ell];
        'grid: loop {
            let alpha = cgf.point(&idx);
            let val = -(alpha.dot(s) + cgf.values[cgf.flat(&idx)]);
            if val > best {
                best = val;
                best_idx = idx.clone();
            }
            let mut j = ell;
            loop {
                if j == 0 {
                    break 'grid;
                }
                j -= 1;
                idx[j] += 1;
                if idx[j] < sizes[j] {
                    break;
                }
                idx[j] = 0;
            }
        }
        // Exposed when the maximizer is interior and the centered-difference
        // gradient of the CGF there matches -s within the grid resolution.
        let interior = best_idx
            .iter()
            .zip(sizes.iter())
            .all(|(&i, &n)| i > 0 && i + 1 < n);
        let mut grad_ok = interior;
        if interior {
            for j in 0..ell {
                let mut lo = best_idx.clone();
                let mut hi = best_idx.clone();
                lo[j] -= 1;
                hi[j] += 1;
                let dx = cgf.axes[j][hi[j]] - cgf.axes[j][lo[j]];
                let g = (cgf.values[cgf.flat(&hi)] - cgf.values[cgf.flat(&lo)]) / dx;
                // resolution: the CGF slope changes by at most the local
                // curvature across one cell; accept a one-cell mismatch
                let cell = dx / 2.0;
                let curvature = ((cgf.values[cgf.flat(&hi)] - 2.0 * best
                    + cgf.values[cgf.flat(&lo)])
                    / (cell * cell))
                    .abs();
                let tol = (curvature * cell).max(1e-6) * 2.0 + cell;
                if (g + s[j]).abs() > tol {
                    grad_ok = false;
                }
            }
        }
        i_values.push(best.min(RATE_CAP));
        exposed.push(grad_ok);
    }
    Ok(RateFunctionGrid {
        s_points: s_points.to_vec(),
        i_values,
        exposed,
        cap: RATE_CAP,
    })
}

/// Outcome of the rate-function symmetry diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct RateSymmetryReport {
    /// max over finite mirror pairs of |I(s) - I(-s) + beta.s|
    pub max_asymmetry: f64,
    /// min over grid points of I(s) - theta0 |s.1|
    pub min_conservation_margin: f64,
    pub finite_pairs: usize,
}

/// Checks the fluctuation symmetry `I(s) = I(-s) - beta.s` over mirror
/// pairs with both values finite, and the conservation lower bound
/// `I(s) >= theta0 |s.1|`.
pub fn check_rate_symmetries(
    rate: &RateFunctionGrid,
    beta: &DVector<f64>,
    theta0: f64,
) -> RateSymmetryReport {
    let mut max_asymmetry = 0.0f64;
    let mut finite_pairs = 0usize;
    let mut min_margin = f64::INFINITY;
    for (k, s) in rate.s_points.iter().enumerate() {
        let i_s = rate.i_values[k];
        if i_s < rate.cap {
            let mirror = rate
                .s_points
                .iter()
                .position(|q| (q + s).amax() < 1e-12)
                .map(|m| rate.i_values[m]);
            if let Some(i_ms) = mirror {
                if i_ms < rate.cap {
                    finite_pairs += 1;
                    max_asymmetry = max_asymmetry.max((i_s - i_ms + beta.dot(s)).abs());
                }
            }
        }
        let s1: f64 = s.iter().sum();
        min_margin = min_margin.min(i_s - theta0 * s1.abs());
    }
    RateSymmetryReport {
        max_asymmetry,
        min_conservation_margin: min_margin,
        finite_pairs,
    }
}

/// A derivative-based quantity together with its Richardson error
/// indicator.
#[derive(Debug, Clone)]
pub struct DerivativeReport<T> {
    pub value: T,
    pub error_estimate: f64,
}

/// Mean fluxes from the CGF: `<Phi_j> = -d chi / d alpha_j` at 0.
pub fn mean_fluxes<F: Fn(&[f64]) -> f64>(
    cgf: F,
    ell: usize,
    h: f64,
) -> Result<DerivativeReport<DVector<f64>>> {
    let origin = vec![0.0; ell];
    let mut value = DVector::zeros(ell);
    let mut err = 0.0f64;
    for j in 0..ell {
        let mut dir = vec![0.0; ell];
        dir[j] = 1.0;
        let d = central_diff(&cgf, &origin, &dir, 1, h)?;
        value[j] = -d.value;
        err = err.max(d.error_estimate);
    }
    Ok(DerivativeReport {
        value,
        error_estimate: err,
    })
}

/// CLT covariance from the CGF Hessian at 0: diagonal entries by pure
/// second differences, off-diagonal by polarization, symmetrized.
///
/// Errors out when an eigenvalue is negative beyond `1e-6 * trace` (a sign
/// of step-size noise, not of the underlying object).
pub fn clt_covariance<F: Fn(&[f64]) -> f64>(
    cgf: F,
    ell: usize,
    h: f64,
) -> Result<DerivativeReport<DMatrix<f64>>> {
    let origin = vec![0.0; ell];
    let mut d = DMatrix::zeros(ell, ell);
    let mut err = 0.0f64;
    let mut second = |dir: &[f64]| -> Result<f64> {
        let est = central_diff(&cgf, &origin, dir, 2, h)?;
        err = err.max(est.error_estimate);
        Ok(est.value)
    };
    let mut pures = vec![0.0; ell];
    for (j, p) in pures.iter_mut().enumerate() {
        let mut dir = vec![0.0; ell];
        dir[j] = 1.0;
        *p = second(&dir)?;
    }
    for j in 0..ell {
        d[(j, j)] = pures[j];
        for k in (j + 1)..ell {
            let mut dir = vec![0.0; ell];
            dir[j] = 1.0;
            dir[k] = 1.0;
            let mixed = 0.5 * (second(&dir)? - pures[j] - pures[k]);
            d[(j, k)] = mixed;
            d[(k, j)] = mixed;
        }
    }
    let trace: f64 = (0..ell).map(|j| d[(j, j)]).sum();
    let eig = d.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -1e-6 * trace.abs().max(1e-300) {
        return Err(Error::Precondition(format!(
            "clt_covariance: negative eigenvalue {min_eig:e} beyond tolerance (trace {trace:e}); adjust the step size"
        )));
    }
    Ok(DerivativeReport {
        value: d,
        error_estimate: err,
    })
}

/// Kinetic coefficients from a temperature-parametrized CGF family:
/// `L_jk = -d^2 chi(beta_eq 1 + zeta, alpha) / d zeta_j d alpha_k` at 0,
/// by a four-point mixed difference.
pub fn kinetic_coefficients<F: Fn(&[f64], &[f64]) -> f64>(
    cgf_family: F,
    beta_eq: f64,
    ell: usize,
    h_zeta: f64,
    h_alpha: f64,
) -> Result<DerivativeReport<DMatrix<f64>>> {
    let eval = |zeta: &[f64], alpha: &[f64]| -> f64 {
        let beta: Vec<f64> = zeta.iter().map(|z| beta_eq + z).collect();
        cgf_family(&beta, alpha)
    };
    let mixed = |j: usize, k: usize, hz: f64, ha: f64| -> Result<f64> {
        let mut val = 0.0;
        for (sz, sa, sign) in [
            (1.0, 1.0, 1.0),
            (1.0, -1.0, -1.0),
            (-1.0, 1.0, -1.0),
            (-1.0, -1.0, 1.0),
        ] {
            let mut zeta = vec![0.0; ell];
            let mut alpha = vec![0.0; ell];
            zeta[j] = sz * hz;
            alpha[k] = sa * ha;
            let v = eval(&zeta, &alpha);
            if !v.is_finite() {
                return Err(Error::NonFinite);
            }
            val += sign * v;
        }
        Ok(-val / (4.0 * hz * ha))
    };
    let mut l = DMatrix::zeros(ell, ell);
    let mut err = 0.0f64;
    for j in 0..ell {
        for k in 0..ell {
            let coarse = mixed(j, k, h_zeta, h_alpha)?;
            let fine = mixed(j, k, h_zeta / 2.0, h_alpha / 2.0)?;
            l[(j, k)] = fine;
            err = err.max((fine - coarse).abs());
        }
    }
    Ok(DerivativeReport {
        value: l,
        error_estimate: err,
    })
}

/// Outcome of the fluctuation-dissipation / reciprocity comparison.
#[derive(Debug, Clone, Copy)]
pub struct OnsagerReport {
    /// max |2 L_jk - D_jk|
    pub max_fdt_deviation: f64,
    /// max |L_jk - L_kj|
    pub max_reciprocity_deviation: f64,
}

/// Compares kinetic coefficients against the equilibrium covariance:
/// `2L = D` and `L = L^T`.
pub fn check_onsager_fdt(l: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<OnsagerReport> {
    if l.nrows() != d.nrows() || l.ncols() != d.ncols() {
        return Err(Error::DimensionMismatch {
            expected: l.nrows(),
            actual: d.nrows(),
        });
    }
    let mut fdt = 0.0f64;
    let mut rec = 0.0f64;
    for j in 0..l.nrows() {
        for k in 0..l.ncols() {
            fdt = fdt.max((2.0 * l[(j, k)] - d[(j, k)]).abs());
            rec = rec.max((l[(j, k)] - l[(k, j)]).abs());
        }
    }
    Ok(OnsagerReport {
        max_fdt_deviation: fdt,
        max_reciprocity_deviation: rec,
    })
}

/// Max over the grid of `|chi(alpha + theta 1) - chi(alpha)|` for
/// traceless grid points — the translation symmetry of conservative CGFs.
pub fn check_translation_symmetry<F: Fn(&[f64]) -> f64>(
    cgf: F,
    alpha_grid: &[Vec<f64>],
    theta_list: &[f64],
) -> Result<f64> {
    let mut worst = 0.0f64;
    for alpha in alpha_grid {
        let tracesum: f64 = alpha.iter().sum();
        if tracesum.abs() > 1e-10 {
            return Err(Error::Precondition(format!(
                "check_translation_symmetry: alpha.1 = {tracesum:e} is not 0"
            )));
        }
        let base = cgf(alpha);
        for &theta in theta_list {
            let shifted: Vec<f64> = alpha.iter().map(|a| a + theta).collect();
            worst = worst.max((cgf(&shifted) - base).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    use crate::quasifree::chi_plus_xy_closed_form;

    fn xy_cgf(beta: (f64, f64)) -> impl Fn(&[f64]) -> f64 {
        move |a: &[f64]| chi_plus_xy_closed_form(beta, (a[0], a[1]), 64).unwrap()
    }

    fn line_points(n: usize, extent: f64) -> Vec<DVector<f64>> {
        (0..n)
            .map(|k| {
                let s = -extent + 2.0 * extent * k as f64 / (n - 1) as f64;
                DVector::from_vec(vec![s, -s])
            })
            .collect()
    }

    #[test]
    fn quadratic_duality() {
        let c = 0.7;
        let axes = CGFGrid::uniform_axes(2, 3.0, 121);
        let grid = CGFGrid::sample(axes, |a| c * (a[0] * a[0] + a[1] * a[1]), "quad").unwrap();
        let s_points: Vec<DVector<f64>> = vec![
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![0.5, -0.3]),
            DVector::from_vec(vec![-1.0, 0.8]),
        ];
        let rate = legendre_transform(&grid, &s_points).unwrap();
        for (k, s) in s_points.iter().enumerate() {
            let expected = s.norm_squared() / (4.0 * c);
            assert!(
                (rate.i_values[k] - expected).abs() < 1e-2,
                "I({s:?}) = {} vs {expected}",
                rate.i_values[k]
            );
            assert!(rate.exposed[k]);
        }
    }

    #[test]
    fn rate_minimum_at_mean_flux() {
        let cgf = xy_cgf((1.0, 2.0));
        let mean = mean_fluxes(&cgf, 2, 1e-3).unwrap().value;
        let axes = CGFGrid::uniform_axes(2, 1.0, 41);
        let grid = CGFGrid::sample(axes, &cgf, "xy").unwrap();
        let rate = legendre_transform(&grid, &[mean.clone()]).unwrap();
        assert!(
            rate.i_values[0].abs() < 1e-3,
            "I(mean) = {}",
            rate.i_values[0]
        );
    }

    #[test]
    fn xy_rate_finite_on_conservation_line_capped_off_line() {
        let cgf = xy_cgf((1.0, 2.0));
        // wide theta span: axes reach far along the 1-direction
        let axes = CGFGrid::uniform_axes(2, 40.0, 161);
        let grid = CGFGrid::sample(axes, &cgf, "xy-wide").unwrap();
        let mut on_line = line_points(5, 0.3);
        let off_line = vec![
            DVector::from_vec(vec![0.5, 0.5]),
            DVector::from_vec(vec![-0.4, 0.0]),
        ];
        let rate_on = legendre_transform(&grid, &on_line).unwrap();
        for v in &rate_on.i_values {
            assert!(*v < 100.0, "on-line value {v} unexpectedly large");
        }
        let rate_off = legendre_transform(&grid, &off_line).unwrap();
        for v in &rate_off.i_values {
            assert!(*v > 10.0, "off-line value {v} unexpectedly small");
        }
        on_line.clear();
    }

    #[test]
    fn rate_symmetry_xy() {
        let beta = DVector::from_vec(vec![1.0, 2.0]);
        let cgf = xy_cgf((1.0, 2.0));
        let axes = CGFGrid::uniform_axes(2, 2.5, 201);
        let grid = CGFGrid::sample(axes, &cgf, "xy").unwrap();
        let s_points = line_points(21, 0.2);
        let rate = legendre_transform(&grid, &s_points).unwrap();
        let rep = check_rate_symmetries(&rate, &beta, 2.5);
        assert!(rep.finite_pairs > 10);
        assert!(rep.max_asymmetry < 1e-3, "asymmetry {}", rep.max_asymmetry);
        assert!(
            rep.min_conservation_margin > -1e-6,
            "margin {}",
            rep.min_conservation_margin
        );
    }

    #[test]
    fn rate_symmetry_trivial_beta_zero() {
        let axes = CGFGrid::uniform_axes(1, 2.0, 81);
        let grid = CGFGrid::sample(axes, |a| a[0] * a[0], "sym").unwrap();
        let s_points: Vec<DVector<f64>> = (0..9)
            .map(|k| DVector::from_vec(vec![-0.8 + 0.2 * k as f64]))
            .collect();
        let rate = legendre_transform(&grid, &s_points).unwrap();
        let rep = check_rate_symmetries(&rate, &DVector::from_vec(vec![0.0]), 0.0);
        assert!(rep.max_asymmetry < 1e-10);
    }

    #[test]
    fn monotone_grid_property() {
        let cgf = xy_cgf((1.0, 2.0));
        let small = CGFGrid::sample(CGFGrid::uniform_axes(2, 0.5, 21), &cgf, "s").unwrap();
        let large = CGFGrid::sample(CGFGrid::uniform_axes(2, 2.0, 81), &cgf, "l").unwrap();
        let s_points = line_points(9, 0.3);
        let r_small = legendre_transform(&small, &s_points).unwrap();
        let r_large = legendre_transform(&large, &s_points).unwrap();
        for k in 0..s_points.len() {
            assert!(r_large.i_values[k] >= r_small.i_values[k] - 1e-12);
        }
    }

    #[test]
    fn mean_fluxes_equilibrium_and_conservation() {
        let eq = xy_cgf((1.5, 1.5));
        let m = mean_fluxes(&eq, 2, 1e-3).unwrap();
        assert!(m.value.amax() < 1e-8, "equilibrium fluxes {:?}", m.value);
        let neq = xy_cgf((1.0, 2.0));
        let m = mean_fluxes(&neq, 2, 1e-3).unwrap();
        assert!((m.value[0] + m.value[1]).abs() < 1e-8);
        assert!(m.value[0].abs() > 1e-3, "nonequilibrium flux should be nonzero");
        // hot reservoir (smaller beta) loses energy on average
        assert!(m.value[0] < 0.0, "flux out of the hot reservoir: {:?}", m.value);
    }

    #[test]
    fn clt_covariance_xy() {
        let cgf = xy_cgf((1.0, 2.0));
        let d = clt_covariance(&cgf, 2, 1e-3).unwrap().value;
        assert_relative_eq!(d[(0, 1)], d[(1, 0)], epsilon = 1e-12);
        let row0 = d[(0, 0)] + d[(0, 1)];
        let row1 = d[(1, 0)] + d[(1, 1)];
        assert!(row0.abs() < 1e-6 * d.trace().abs());
        assert!(row1.abs() < 1e-6 * d.trace().abs());
        let eig = d.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&x| x > -1e-6 * d.trace()));
    }

    #[test]
    fn clt_covariance_trivial_zero() {
        let d = clt_covariance(|_| 0.0, 2, 1e-3).unwrap().value;
        assert!(d.amax() < 1e-12);
    }

    #[test]
    fn kinetic_coefficients_xy() {
        let family = |beta: &[f64], alpha: &[f64]| {
            chi_plus_xy_closed_form((beta[0], beta[1]), (alpha[0], alpha[1]), 64).unwrap()
        };
        let l = kinetic_coefficients(family, 1.0, 2, 1e-3, 1e-3).unwrap().value;
        assert!((l[(0, 1)] - l[(1, 0)]).abs() < 1e-5, "{l:?}");
        for j in 0..2 {
            let row: f64 = (0..2).map(|k| l[(j, k)]).sum();
            assert!(row.abs() < 1e-5, "row {j} sum {row}");
        }
    }

    #[test]
    fn onsager_fdt_xy_equilibrium() {
        let family = |beta: &[f64], alpha: &[f64]| {
            chi_plus_xy_closed_form((beta[0], beta[1]), (alpha[0], alpha[1]), 64).unwrap()
        };
        let l = kinetic_coefficients(family, 1.0, 2, 1e-3, 1e-3).unwrap().value;
        let d = clt_covariance(xy_cgf((1.0, 1.0)), 2, 1e-3).unwrap().value;
        let rep = check_onsager_fdt(&l, &d).unwrap();
        assert!(rep.max_fdt_deviation < 1e-3, "{rep:?}");
        assert!(rep.max_reciprocity_deviation < 1e-3);
    }

    #[test]
    fn onsager_report_zero_and_negative_control() {
        let z = DMatrix::zeros(2, 2);
        let rep = check_onsager_fdt(&z, &z).unwrap();
        assert_eq!(rep.max_fdt_deviation, 0.0);
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let rep = check_onsager_fdt(&asym, &z).unwrap();
        assert!(rep.max_reciprocity_deviation > 1.0);
    }

    #[test]
    fn kinetic_decoupled_is_zero() {
        let l = kinetic_coefficients(|_, _| 0.0, 1.0, 2, 1e-3, 1e-3)
            .unwrap()
            .value;
        assert!(l.amax() < 1e-12);
    }

    #[test]
    fn translation_symmetry_checks() {
        let dev = check_translation_symmetry(|_| 1.0, &[vec![0.3, -0.3]], &[0.5, -2.0]).unwrap();
        assert_eq!(dev, 0.0);
        let cgf = xy_cgf((1.0, 2.0));
        let grid: Vec<Vec<f64>> = (0..5)
            .map(|k| {
                let a = -0.4 + 0.2 * k as f64;
                vec![a, -a]
            })
            .collect();
        let dev = check_translation_symmetry(&cgf, &grid, &[0.5, -0.5, 2.0]).unwrap();
        assert!(dev < 1e-12);
    }

    #[test]
    fn chernoff_upper_bound_exact_small_chain() {
        // Exact finite system: the probability of a flux ball never beats
        // the Legendre bound computed from the same finite-time CGF.
        use crate::confined::{chi_trace_real, ttm_distribution};
        use crate::models::build_xy;
        let (spin, _) = build_xy(2, 0, 1.0, 1.0, DVector::from_vec(vec![1.0, 2.0])).unwrap();
        let sys = spin.unwrap();
        for &t in &[5.0, 10.0] {
            let dist = ttm_distribution(&sys, t).unwrap();
            let cgf = |a: &[f64]| chi_trace_real(&sys, t, a).unwrap().ln() / t;
            let axes = CGFGrid::uniform_axes(2, 1.5, 31);
            let mut alpha_values = Vec::new();
            for &a0 in &axes[0] {
                for &a1 in &axes[1] {
                    alpha_values.push(([a0, a1], cgf(&[a0, a1])));
                }
            }
            let samples = [
                (DVector::from_vec(vec![0.0, 0.0]), 0.3),
                (DVector::from_vec(vec![0.2, -0.2]), 0.2),
                (DVector::from_vec(vec![-0.5, 0.5]), 0.25),
                (DVector::from_vec(vec![0.8, -0.8]), 0.15),
                (DVector::from_vec(vec![0.1, 0.1]), 0.1),
            ];
            for (s0, eps) in &samples {
                let prob: f64 = dist
                    .atoms
                    .iter()
                    .filter(|(phi, _)| (phi - s0).norm() <= *eps)
                    .map(|(_, p)| p)
                    .sum();
                if prob <= 0.0 {
                    continue;
                }
                // -inf over the ball of the grid-restricted Legendre
                // function: min over grid alpha of chi(alpha) + sup_{s in
                // ball} alpha.s, with the ball supremum exact (Cauchy-
                // Schwarz), so the Markov-inequality bound holds at any
                // finite t.
                let mut bound = f64::INFINITY;
                for ([a0, a1], chi) in &alpha_values {
                    let dot = a0 * s0[0] + a1 * s0[1];
                    let norm = (a0 * a0 + a1 * a1).sqrt();
                    bound = bound.min(chi + dot + eps * norm);
                }
                let lhs = prob.ln() / t;
                assert!(
                    lhs <= bound + 1e-6,
                    "t={t} s0={s0:?}: {lhs} > {bound}"
                );
            }
        }
    }
}
