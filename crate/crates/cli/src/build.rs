//! Turns a validated model configuration into concrete systems.

use heatflux::confined::ConfinedMultisystem;
use heatflux::models;
use heatflux::numerics::{CMatrix, HermitianMatrix};
use heatflux::quasifree::QuasiFreeSystem;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Deserialize;

use crate::config::{ExperimentConfig, ModelConfig};

pub struct BuiltModel {
    pub confined: Option<ConfinedMultisystem>,
    pub quasifree: Option<QuasiFreeSystem>,
    /// The infinite-volume closed-form CGF applies (xy at unit couplings).
    pub xy_closed_form: bool,
}

impl BuiltModel {
    pub fn confined(&self) -> Result<&ConfinedMultisystem, String> {
        self.confined.as_ref().ok_or_else(|| {
            "this task needs the many-body representation, which is unavailable at this size"
                .to_string()
        })
    }
}

#[derive(Deserialize)]
struct CustomMatrixFile {
    energies: Vec<Vec<f64>>,
    interaction_re: Vec<Vec<f64>>,
    #[serde(default)]
    interaction_im: Option<Vec<Vec<f64>>>,
}

pub fn build(config: &ExperimentConfig) -> Result<BuiltModel, String> {
    let beta = DVector::from_vec(config.beta.clone());
    match &config.model {
        ModelConfig::Xy {
            l_half,
            m_half,
            j,
            lambda_field,
        } => {
            let (confined, quasifree) =
                models::build_xy(*l_half, *m_half, *j, *lambda_field, beta)
                    .map_err(|e| e.to_string())?;
            let xy_closed_form =
                (*j - 1.0).abs() < 1e-12 && (*lambda_field - 1.0).abs() < 1e-12;
            Ok(BuiltModel {
                confined,
                quasifree: Some(quasifree),
                xy_closed_form,
            })
        }
        ModelConfig::Ebb {
            l_sites,
            ell,
            lambda,
            eps0,
        } => {
            let qf = models::build_ebb(*l_sites, *ell, *lambda, *eps0, beta)
                .map_err(|e| e.to_string())?;
            let confined = if 1 + ell * l_sites <= heatflux::fock::MODE_CAP {
                Some(models::fock_representation(&qf).map_err(|e| e.to_string())?)
            } else {
                None
            };
            Ok(BuiltModel {
                confined,
                quasifree: Some(qf),
                xy_closed_form: false,
            })
        }
        ModelConfig::SpinFermion {
            lambda,
            grid_points,
        } => {
            let (grid, form) = models::default_spin_fermion_grid(*grid_points);
            let sys = models::build_spin_fermion(
                &[grid.clone(), grid],
                &[form.clone(), form],
                *lambda,
                beta,
            )
            .map_err(|e| e.to_string())?;
            Ok(BuiltModel {
                confined: Some(sys),
                quasifree: None,
                xy_closed_form: false,
            })
        }
        ModelConfig::SpinLattice {
            n_sites,
            boundary,
            j_boundary,
            bond,
        } => {
            let block = match bond {
                Some(entries) => DMatrix::from_row_slice(4, 4, entries),
                None => models::exchange_bond(),
            };
            let block = HermitianMatrix::from_real(&block).map_err(|e| e.to_string())?;
            let sys =
                models::build_spin_lattice_1d(*n_sites, *boundary, &block, *j_boundary, beta)
                    .map_err(|e| e.to_string())?;
            Ok(BuiltModel {
                confined: Some(sys),
                quasifree: None,
                xy_closed_form: false,
            })
        }
        ModelConfig::Custom { path } => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {path}: {e}"))?;
            let file: CustomMatrixFile =
                serde_json::from_str(&text).map_err(|e| format!("{path}: {e}"))?;
            let dim = file
                .energies
                .first()
                .ok_or_else(|| format!("{path}: at least one reservoir required"))?
                .len();
            let energies: Vec<DVector<f64>> = file
                .energies
                .iter()
                .map(|e| DVector::from_vec(e.clone()))
                .collect();
            let re = &file.interaction_re;
            if re.len() != dim || re.iter().any(|r| r.len() != dim) {
                return Err(format!("{path}: interaction_re must be {dim}x{dim}"));
            }
            let im = file.interaction_im.as_ref();
            if let Some(im) = im {
                if im.len() != dim || im.iter().any(|r| r.len() != dim) {
                    return Err(format!("{path}: interaction_im must be {dim}x{dim}"));
                }
            }
            let v = CMatrix::from_fn(dim, dim, |r, c| {
                Complex64::new(re[r][c], im.map_or(0.0, |m| m[r][c]))
            });
            let v = HermitianMatrix::new(v).map_err(|e| e.to_string())?;
            let sys = ConfinedMultisystem::new(energies, v, beta, "custom")
                .map_err(|e| e.to_string())?;
            Ok(BuiltModel {
                confined: Some(sys),
                quasifree: None,
                xy_closed_form: false,
            })
        }
    }
}
