//! Declarative experiment configuration: schema, invariant validation, and
//! resource estimates.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Distribution,
    Cgf,
    SymmetrySuite,
    BoundsSuite,
    Asymptotics,
    Sample,
    LinearResponse,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Task::Distribution => "distribution",
            Task::Cgf => "cgf",
            Task::SymmetrySuite => "symmetry_suite",
            Task::BoundsSuite => "bounds_suite",
            Task::Asymptotics => "asymptotics",
            Task::Sample => "sample",
            Task::LinearResponse => "linear_response",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// Per-axis rectangular grid specification; every axis must be symmetric
/// around 0 with an odd point count so that 0 itself is a grid node.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub count: Vec<usize>,
}

impl GridSpec {
    pub fn axes(&self) -> Vec<Vec<f64>> {
        self.min
            .iter()
            .zip(self.max.iter())
            .zip(self.count.iter())
            .map(|((&lo, &hi), &n)| {
                (0..n)
                    .map(|k| lo + (hi - lo) * k as f64 / (n - 1).max(1) as f64)
                    .collect()
            })
            .collect()
    }

    pub fn n_points(&self) -> usize {
        self.count.iter().product()
    }

    fn check(&self, name: &str, ell: usize, errors: &mut Vec<String>) {
        if self.min.len() != ell || self.max.len() != ell || self.count.len() != ell {
            errors.push(format!(
                "{name}: min/max/count must all have length {ell} (got {}/{}/{})",
                self.min.len(),
                self.max.len(),
                self.count.len()
            ));
            return;
        }
        for j in 0..ell {
            if self.count[j] < 3 || self.count[j] % 2 == 0 {
                errors.push(format!(
                    "{name}.count[{j}] = {} must be odd and >= 3 so the grid contains 0",
                    self.count[j]
                ));
            }
            if (self.min[j] + self.max[j]).abs() > 1e-12 || !(self.max[j] > 0.0) {
                errors.push(format!(
                    "{name} axis {j}: [{}, {}] must be symmetric around 0",
                    self.min[j], self.max[j]
                ));
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Anisotropy-free XY spin chain cut into two reservoirs around a
    /// small central segment; spin representation available for small
    /// chains, one-particle representation always.
    Xy {
        l_half: usize,
        #[serde(default)]
        m_half: usize,
        #[serde(default = "one")]
        j: f64,
        #[serde(default = "one")]
        lambda_field: f64,
    },
    /// Electronic black-box: a single-level dot exchange-coupled to
    /// finite tight-binding leads (one-particle representation).
    Ebb {
        l_sites: usize,
        ell: usize,
        lambda: f64,
        #[serde(default = "one")]
        eps0: f64,
    },
    /// Qubit coupled to discretized positive-energy fermionic reservoirs.
    SpinFermion {
        lambda: f64,
        #[serde(default = "four")]
        grid_points: usize,
    },
    /// Generic 1-D two-part qubit lattice with a translation-invariant
    /// bond; `bond` is an optional 4x4 real block, row-major (defaults to
    /// the exchange bond).
    SpinLattice {
        n_sites: usize,
        boundary: usize,
        #[serde(default = "one")]
        j_boundary: f64,
        #[serde(default)]
        bond: Option<Vec<f64>>,
    },
    /// Confined multisystem loaded from a JSON matrix file with fields
    /// `energies` (list of diagonal vectors, one per reservoir) and
    /// `interaction_re` / optional `interaction_im` (dense row-major).
    Custom { path: String },
}

fn one() -> f64 {
    1.0
}

fn four() -> usize {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub beta: Vec<f64>,
    pub tasks: Vec<Task>,
    #[serde(default)]
    pub t_list: Vec<f64>,
    #[serde(default)]
    pub alpha_grid: Option<GridSpec>,
    /// Optional rate-function sample grid; derived from the CGF gradient
    /// range when absent.
    #[serde(default)]
    pub s_grid: Option<GridSpec>,
    #[serde(default)]
    pub theta_list: Vec<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_sample_size")]
    pub sample_size: usize,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub format: OutputFormat,
}

fn default_sample_size() -> usize {
    100_000
}

/// Validation outcome: hard errors plus human-oriented size estimates.
#[derive(Debug)]
pub struct Diagnostics {
    pub errors: Vec<String>,
    pub estimates: Vec<String>,
}

impl ExperimentConfig {
    pub fn from_path(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn ell(&self) -> usize {
        self.beta.len()
    }

    fn needs_alpha_grid(&self) -> bool {
        self.tasks.iter().any(|t| {
            matches!(
                t,
                Task::Cgf
                    | Task::SymmetrySuite
                    | Task::BoundsSuite
                    | Task::Asymptotics
                    | Task::LinearResponse
            )
        })
    }

    fn needs_t_list(&self) -> bool {
        self.tasks.iter().any(|t| {
            matches!(
                t,
                Task::Distribution
                    | Task::Cgf
                    | Task::SymmetrySuite
                    | Task::BoundsSuite
                    | Task::Sample
            )
        })
    }

    pub fn validate(&self) -> Diagnostics {
        let mut errors = Vec::new();
        let mut estimates = Vec::new();
        let ell = self.ell();

        if self.tasks.is_empty() {
            errors.push("tasks: at least one task required".into());
        }
        if ell == 0 {
            errors.push("beta: at least one reservoir required".into());
        }
        if self.tasks.contains(&Task::Sample) && self.seed.is_none() {
            errors.push("seed: required when the `sample` task is enabled".into());
        }
        if self.needs_t_list() && self.t_list.is_empty() {
            errors.push(format!(
                "t_list: required by tasks {:?}",
                self.tasks
                    .iter()
                    .filter(|t| matches!(
                        t,
                        Task::Distribution
                            | Task::Cgf
                            | Task::SymmetrySuite
                            | Task::BoundsSuite
                            | Task::Sample
                    ))
                    .map(|t| t.to_string())
                    .collect::<Vec<_>>()
            ));
        }
        if self.t_list.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
            errors.push("t_list: entries must be finite and > 0".into());
        }
        match &self.alpha_grid {
            Some(g) => g.check("alpha_grid", ell, &mut errors),
            None => {
                if self.needs_alpha_grid() {
                    errors.push("alpha_grid: required by the enabled tasks".into());
                }
            }
        }
        if let Some(g) = &self.s_grid {
            g.check("s_grid", ell, &mut errors);
        }

        match &self.model {
            ModelConfig::Xy {
                l_half,
                m_half,
                j,
                lambda_field,
            } => {
                if ell != 2 {
                    errors.push(format!("beta: xy model has 2 reservoirs, got {ell}"));
                }
                if *m_half >= *l_half {
                    errors.push("model: xy requires m_half < l_half".into());
                }
                let n_sites = 2 * l_half + 1;
                let one_particle_mem = n_sites * n_sites * 16 / 1024;
                estimates.push(format!(
                    "xy: {n_sites} sites; one-particle matrices {n_sites}x{n_sites} (~{one_particle_mem} KiB)"
                ));
                if n_sites <= heatflux::models::SPIN_SITE_CAP {
                    let dim = 1usize << n_sites;
                    estimates.push(format!(
                        "xy: spin representation dimension {dim} (~{} MiB per dense matrix)",
                        dim * dim * 16 / (1024 * 1024)
                    ));
                } else {
                    estimates.push(format!(
                        "xy: {n_sites} sites exceeds the {}-site spin cap; one-particle path only (distribution/sample/bounds unavailable)",
                        heatflux::models::SPIN_SITE_CAP
                    ));
                }
                let closed_form = (*j - 1.0).abs() < 1e-12 && (*lambda_field - 1.0).abs() < 1e-12;
                if !closed_form
                    && self
                        .tasks
                        .iter()
                        .any(|t| matches!(t, Task::Asymptotics | Task::LinearResponse))
                {
                    errors.push(
                        "model: asymptotics/linear_response need the closed-form normalization j = lambda_field = 1"
                            .into(),
                    );
                }
            }
            ModelConfig::Ebb {
                l_sites,
                ell: leads,
                lambda,
                ..
            } => {
                if *leads != ell {
                    errors.push(format!("beta: ebb has {leads} leads, got beta length {ell}"));
                }
                if !lambda.is_finite() {
                    errors.push("model: lambda must be finite".into());
                }
                let modes = 1 + leads * l_sites;
                estimates.push(format!("ebb: {modes} one-particle modes"));
                let needs_fock = self.tasks.iter().any(|t| {
                    matches!(
                        t,
                        Task::Distribution | Task::Sample | Task::SymmetrySuite | Task::BoundsSuite
                    )
                });
                if modes > heatflux::fock::MODE_CAP {
                    if needs_fock {
                        errors.push(format!(
                            "model: tasks needing the many-body representation require 1 + {leads}*{l_sites} = {modes} <= {} modes (dimension 2^{modes} = {:.2e} exceeds the cap)",
                            heatflux::fock::MODE_CAP,
                            2f64.powi(modes as i32)
                        ));
                    }
                } else {
                    let dim = 1usize << modes;
                    estimates.push(format!(
                        "ebb: many-body dimension {dim} (~{} MiB per dense matrix)",
                        dim * dim * 16 / (1024 * 1024)
                    ));
                }
                self.reject_asymptotic_tasks(&mut errors);
            }
            ModelConfig::SpinFermion {
                grid_points,
                lambda,
            } => {
                if ell != 2 {
                    errors.push(format!("beta: spin_fermion has 2 reservoirs, got {ell}"));
                }
                if !lambda.is_finite() {
                    errors.push("model: lambda must be finite".into());
                }
                let modes = 2 * grid_points;
                if modes > heatflux::fock::MODE_CAP {
                    errors.push(format!(
                        "model: 2*{grid_points} = {modes} fermionic modes exceed the cap {}",
                        heatflux::fock::MODE_CAP
                    ));
                } else {
                    let dim = 2 * (1usize << modes);
                    estimates.push(format!("spin_fermion: total dimension {dim}"));
                }
                self.reject_asymptotic_tasks(&mut errors);
            }
            ModelConfig::SpinLattice {
                n_sites,
                boundary,
                bond,
                ..
            } => {
                if ell != 2 {
                    errors.push(format!("beta: spin_lattice has 2 reservoirs, got {ell}"));
                }
                if *n_sites > heatflux::models::SPIN_SITE_CAP {
                    errors.push(format!(
                        "model: n_sites {n_sites} exceeds the {}-site cap (dimension 2^{n_sites})",
                        heatflux::models::SPIN_SITE_CAP
                    ));
                } else {
                    estimates.push(format!("spin_lattice: dimension {}", 1usize << n_sites));
                }
                if boundary + 1 >= *n_sites {
                    errors.push("model: boundary must leave at least one site on the right".into());
                }
                if let Some(b) = bond {
                    if b.len() != 16 {
                        errors.push(format!(
                            "model: bond must be a row-major 4x4 block (16 entries, got {})",
                            b.len()
                        ));
                    }
                }
                self.reject_asymptotic_tasks(&mut errors);
            }
            ModelConfig::Custom { path } => {
                if !std::path::Path::new(path).exists() {
                    errors.push(format!("model: matrix file {path} not found"));
                }
                self.reject_asymptotic_tasks(&mut errors);
            }
        }

        if let Some(g) = &self.alpha_grid {
            if g.min.len() == ell {
                estimates.push(format!(
                    "alpha_grid: {} points x {} times",
                    g.n_points(),
                    self.t_list.len().max(1)
                ));
            }
        }
        Diagnostics { errors, estimates }
    }

    fn reject_asymptotic_tasks(&self, errors: &mut Vec<String>) {
        for t in &self.tasks {
            if matches!(t, Task::Asymptotics | Task::LinearResponse) {
                errors.push(format!(
                    "tasks: `{t}` requires an asymptotic CGF (xy closed form); this model only offers finite-time quantities"
                ));
            }
        }
    }
}
