//! Scenario configuration: a declarative TOML file binding rates,
//! fission law, scaling ladder, initial condition, grid and metric
//! settings to a runnable study.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fission::FissionLaw;
use crate::pde::coeffs::{kernel_check, FissionKernel, LimitCoefficients};
use crate::pde::grid::DensityGrid;
use crate::pde::scheme::SplitOrder;
use crate::population::{Composition, Population};
use crate::rates::{rate_bounds_check, BoundsReport, CoefForm, DeclaredBounds, RateSpec, ScaledRate};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config schema violation: {0}")]
    Schema(String),
    #[error("scaling ladder must increase strictly in both n and m")]
    LadderNotIncreasing,
    #[error("initial condition has nonpositive mass")]
    InitialMassNonpositive,
    #[error("horizon must be positive")]
    HorizonNonpositive,
    #[error("declared rate bound violated: {0}")]
    BoundViolation(String),
    #[error("kernel identities violated: moment defect {0}")]
    KernelViolation(f64),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StudyMode {
    /// Empirical-measure comparison: group counts scale with `m`,
    /// extinction is `eps_hat(i/n) / m`.
    #[default]
    Measure,
    /// Step-density comparison: group counts scale with `m n^l`,
    /// extinction is `eps_hat(i/n) / (m n^l)`.
    Density,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiModel {
    /// `phi(i) = phi_limit(i/n)`
    LimitForm,
    /// `phi(i) = prod_k (i_k + 1) exp(-|i|/n) / n^l`
    SplitUniform,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Rung {
    pub n: u64,
    pub m: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatesSection {
    pub beta: Vec<CoefForm>,
    pub delta: Vec<CoefForm>,
    pub mu: Vec<CoefForm>,
    pub phi: CoefForm,
    pub epsilon: CoefForm,
    pub phi_model: PhiModel,
    pub bounds: DeclaredBounds,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    GaussianBump { center: Vec<f64>, sigma: f64, mass: f64 },
    UniformBox { lo: Vec<f64>, hi: Vec<f64>, mass: f64 },
    Atoms { atoms: Vec<AtomSpec> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AtomSpec {
    pub comp: Vec<u64>,
    pub count: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PdeSection {
    pub u_max: f64,
    pub cells: usize,
    pub dt: f64,
    #[serde(default = "default_mass_floor")]
    pub mass_floor: f64,
    #[serde(default)]
    pub split_order: SplitOrder,
    /// Largest tolerated mass outflow through the truncation boundary.
    #[serde(default = "default_escape_alarm")]
    pub escape_alarm: f64,
}

fn default_mass_floor() -> f64 {
    1e-9
}

fn default_escape_alarm() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsSection {
    #[serde(default = "default_bank_seed")]
    pub bank_seed: u64,
    #[serde(default = "default_bank_size")]
    pub bank_size: usize,
}

fn default_bank_seed() -> u64 {
    7
}
fn default_bank_size() -> usize {
    512
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self { bank_seed: default_bank_seed(), bank_size: default_bank_size() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicasSection {
    pub count: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub censor_extinct: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsSection {
    #[serde(default = "default_diag_replicas")]
    pub replicas: usize,
}

fn default_diag_replicas() -> usize {
    200
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self { replicas: default_diag_replicas() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSection {
    pub ell: usize,
    pub horizon: f64,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LadderSection {
    pub rungs: Vec<Rung>,
    #[serde(default = "default_modes")]
    pub modes: Vec<StudyMode>,
}

fn default_modes() -> Vec<StudyMode> {
    vec![StudyMode::Measure]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: String,
}

fn default_out_dir() -> String {
    "out".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: default_out_dir() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub scenario: ScenarioSection,
    pub rates: RatesSection,
    pub fission: FissionSection,
    pub kernel: FissionKernel,
    pub ladder: LadderSection,
    pub replicas: ReplicasSection,
    pub initial: InitialCondition,
    pub pde: PdeSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub output: OutputSection,
    /// Hex digest of the config file bytes; filled on load.
    #[serde(skip)]
    pub hash: String,
}

fn schema_version() -> u32 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FissionSection {
    pub law: String,
}

impl ScenarioConfig {
    pub fn law(&self) -> Result<FissionLaw, ConfigError> {
        FissionLaw::from_name(&self.fission.law)
            .map_err(|e| ConfigError::Schema(e.to_string()))
    }

    /// Model-level rates for one rung of the ladder.
    pub fn rates_for(&self, rung: Rung, mode: StudyMode) -> RateSpec {
        let ell = self.scenario.ell;
        let n = rung.n;
        let lf = |coef: &CoefForm| ScaledRate::LimitForm { coef: coef.clone(), n, denom: 1.0 };
        let eps_denom = match mode {
            StudyMode::Measure => rung.m as f64,
            StudyMode::Density => rung.m as f64 * (n as f64).powi(ell as i32),
        };
        let phi = match self.rates.phi_model {
            PhiModel::LimitForm => lf(&self.rates.phi),
            PhiModel::SplitUniform => ScaledRate::SplitUniformPhi { n },
        };
        RateSpec::new(
            ell,
            self.rates.beta.iter().map(lf).collect(),
            self.rates.delta.iter().map(lf).collect(),
            self.rates.mu.iter().map(lf).collect(),
            phi,
            ScaledRate::LimitForm { coef: self.rates.epsilon.clone(), n, denom: eps_denom },
        )
    }

    /// Group-count scale of a rung under the given mode.
    pub fn group_scale(&self, rung: Rung, mode: StudyMode) -> u64 {
        match mode {
            StudyMode::Measure => rung.m,
            StudyMode::Density => {
                rung.m * rung.n.pow(self.scenario.ell as u32)
            }
        }
    }

    pub fn limit_coefficients(&self) -> LimitCoefficients {
        LimitCoefficients {
            ell: self.scenario.ell,
            beta: self.rates.beta.clone(),
            delta: self.rates.delta.clone(),
            mu: self.rates.mu.clone(),
            phi: self.rates.phi.clone(),
            epsilon: self.rates.epsilon.clone(),
            kernel: self.kernel.clone(),
        }
    }

    /// The initial density on the PDE grid, or `None` for explicit-atom
    /// initial conditions.
    pub fn initial_density(&self) -> Option<DensityGrid> {
        let h = self.pde.u_max / self.pde.cells as f64;
        let dims = vec![self.pde.cells; self.scenario.ell];
        match &self.initial {
            InitialCondition::GaussianBump { center, sigma, mass } => {
                let mut grid = DensityGrid::from_fn(h, dims, |u| {
                    let d2: f64 = u
                        .iter()
                        .zip(center)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (-0.5 * d2 / (sigma * sigma)).exp()
                });
                let current = grid.mass();
                grid.scale(mass / current);
                Some(grid)
            }
            InitialCondition::UniformBox { lo, hi, mass } => {
                let mut grid = DensityGrid::from_fn(h, dims, |u| {
                    if u.iter().zip(lo).all(|(a, b)| a >= b) && u.iter().zip(hi).all(|(a, b)| a < b)
                    {
                        1.0
                    } else {
                        0.0
                    }
                });
                let current = grid.mass();
                grid.scale(mass / current);
                Some(grid)
            }
            InitialCondition::Atoms { .. } => None,
        }
    }

    /// Initial population for one rung: sampled from the density, or
    /// the explicit atom list.
    pub fn initial_population(
        &self,
        rung: Rung,
        mode: StudyMode,
        seed: u64,
    ) -> Result<Population, crate::init::InitError> {
        match &self.initial {
            InitialCondition::Atoms { atoms } => {
                let mut pop = Population::new(self.scenario.ell);
                for a in atoms {
                    pop.insert(Composition::new(a.comp.clone()), a.count);
                }
                Ok(pop)
            }
            _ => {
                let density = self.initial_density().expect("density init");
                crate::init::sample_initial_population(
                    &density,
                    rung.n,
                    self.group_scale(rung, mode),
                    seed,
                )
            }
        }
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        if self.scenario.snapshot_times.is_empty() {
            let t = self.scenario.horizon;
            (0..=4).map(|j| t * j as f64 / 4.0).collect()
        } else {
            self.scenario.snapshot_times.clone()
        }
    }

    /// Validate beyond schema: ladder order, masses, declared rate
    /// bounds on the lattice box, and the kernel identities.
    pub fn validate(&self) -> Result<ValidationReport, ConfigError> {
        let ell = self.scenario.ell;
        if self.scenario.horizon <= 0.0 {
            return Err(ConfigError::HorizonNonpositive);
        }
        if ell == 0 {
            return Err(ConfigError::Schema("ell must be at least 1".into()));
        }
        for section in [&self.rates.beta, &self.rates.delta, &self.rates.mu] {
            if section.len() != ell {
                return Err(ConfigError::Schema(format!(
                    "per-type rate lists must have length {ell}"
                )));
            }
        }
        self.law()?;
        for w in self.ladder.rungs.windows(2) {
            if w[1].n <= w[0].n || w[1].m <= w[0].m {
                return Err(ConfigError::LadderNotIncreasing);
            }
        }
        if self.ladder.rungs.is_empty() {
            return Err(ConfigError::Schema("ladder needs at least one rung".into()));
        }
        match &self.initial {
            InitialCondition::Atoms { atoms } => {
                if atoms.is_empty() || atoms.iter().all(|a| a.count == 0) {
                    return Err(ConfigError::InitialMassNonpositive);
                }
                for a in atoms {
                    if a.comp.len() != ell {
                        return Err(ConfigError::Schema("atom arity mismatch".into()));
                    }
                    if a.comp.iter().all(|&c| c == 0) {
                        return Err(ConfigError::Schema(
                            "atom at the zero composition".into(),
                        ));
                    }
                }
            }
            InitialCondition::GaussianBump { center, mass, .. } => {
                if *mass <= 0.0 {
                    return Err(ConfigError::InitialMassNonpositive);
                }
                if center.len() != ell {
                    return Err(ConfigError::Schema("initial center arity mismatch".into()));
                }
            }
            InitialCondition::UniformBox { lo, hi, mass } => {
                if *mass <= 0.0 {
                    return Err(ConfigError::InitialMassNonpositive);
                }
                if lo.len() != ell || hi.len() != ell {
                    return Err(ConfigError::Schema("initial box arity mismatch".into()));
                }
            }
        }

        // Rate bounds on the lattice box implied by the grid and the
        // largest rung.
        let n_max = self.ladder.rungs.iter().map(|r| r.n).max().unwrap();
        let lattice_hi = (self.pde.u_max * n_max as f64).ceil() as u64;
        // keep the scan tractable in higher dimensions
        let lattice_hi = if ell >= 2 { lattice_hi.min(200) } else { lattice_hi };
        let mut worst: Option<BoundsReport> = None;
        for &rung in &self.ladder.rungs {
            for &mode in &self.ladder.modes {
                let rates = self.rates_for(rung, mode);
                let report = rate_bounds_check(
                    &rates,
                    &vec![lattice_hi.min(rung.n * self.pde.u_max.ceil() as u64 + 1); ell],
                    self.group_scale(rung, mode) as f64,
                    &self.rates.bounds,
                );
                if !report.passed() {
                    return Err(ConfigError::BoundViolation(format!(
                        "rung (n={}, m={}): {:?}",
                        rung.n, rung.m, report.violations[0]
                    )));
                }
                worst = Some(report);
            }
        }

        // Kernel identities on a coarse grid. A `none` kernel carries
        // no fission source for the limit equation, so there is
        // nothing to check (simulation-only scenarios may still have a
        // positive model-level fission rate).
        let coeffs = self.limit_coefficients();
        let mut kernel_moment_defect = 0.0;
        if !matches!(self.kernel, FissionKernel::None) {
            let parents: Vec<Vec<f64>> = (1..=40)
                .map(|j| vec![self.pde.u_max * j as f64 / 40.0; ell])
                .collect();
            let kc = kernel_check(&coeffs, &parents, 32);
            if kc.max_moment_defect > 1e-3 || kc.max_mass_excess > 1e-3 {
                return Err(ConfigError::KernelViolation(kc.max_moment_defect));
            }
            kernel_moment_defect = kc.max_moment_defect;
        }

        // Numerical check of the rescaled-rate convergence hypotheses,
        // pointwise on a finite grid (the resolution is reported, no
        // uniformity claim).
        let law = self.law()?;
        let rate_convergence = self
            .ladder
            .rungs
            .iter()
            .map(|&rung| {
                crate::scale::rate_convergence_defect(
                    &self.rates_for(rung, StudyMode::Measure),
                    &law,
                    &coeffs,
                    crate::scale::ScalingParams::new(rung.n, rung.m),
                    self.pde.u_max,
                    200,
                )
            })
            .collect();

        Ok(ValidationReport {
            bounds: worst.expect("at least one rung"),
            kernel_moment_defect,
            rate_convergence,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub bounds: BoundsReport,
    pub kernel_moment_defect: f64,
    pub rate_convergence: Vec<crate::scale::RateConvergenceDefect>,
}

/// Parse, hash and validate a config file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let bytes = std::fs::read(path)?;
    load_config_bytes(&bytes)
}

pub fn load_config_bytes(bytes: &[u8]) -> Result<ScenarioConfig, ConfigError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| ConfigError::Schema(e.to_string()))?;
    let mut config: ScenarioConfig =
        toml::from_str(text).map_err(|e| ConfigError::Schema(e.to_string()))?;
    config.hash = crate::report::sha256_hex(bytes);
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const MINIMAL: &str = r#"
[scenario]
ell = 1
horizon = 1.0

[rates]
beta = [{ form = "constant", value = 0.5 }]
delta = [{ form = "constant", value = 0.4 }]
mu = [{ form = "constant", value = 0.0 }]
phi = { form = "constant", value = 0.0 }
epsilon = { form = "constant", value = 0.0 }
phi_model = "limit_form"
bounds = { per_capita = 500.0, fission = 1.0, extinction = 1.0 }

[fission]
law = "nonproper_only"

[kernel]
kind = "none"

[ladder]
rungs = [{ n = 1, m = 1 }]

[replicas]
count = 2
base_seed = 1

[initial]
kind = "atoms"
atoms = [{ comp = [2], count = 10 }]

[pde]
u_max = 4.0
cells = 64
dt = 0.01
"#;

    #[test]
    fn minimal_config_loads() {
        let config = load_config_bytes(MINIMAL.as_bytes()).unwrap();
        assert_eq!(config.scenario.ell, 1);
        assert!(!config.hash.is_empty());
        assert_eq!(config.snapshot_times(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn non_increasing_ladder_is_rejected() {
        let text = MINIMAL.replace(
            "rungs = [{ n = 1, m = 1 }]",
            "rungs = [{ n = 20, m = 100 }, { n = 10, m = 400 }]",
        );
        assert!(matches!(
            load_config_bytes(text.as_bytes()),
            Err(ConfigError::LadderNotIncreasing)
        ));
    }

    #[test]
    fn bound_violation_is_rejected() {
        let text = MINIMAL
            .replace(
                "beta = [{ form = \"constant\", value = 0.5 }]",
                "beta = [{ form = \"coord\", k = 0, scale = 1.0 }]",
            )
            .replace("per_capita = 500.0", "per_capita = 5.0");
        assert!(matches!(
            load_config_bytes(text.as_bytes()),
            Err(ConfigError::BoundViolation(_))
        ));
    }

    #[test]
    fn schema_violation_is_distinct() {
        let text = MINIMAL.replace("law = \"nonproper_only\"", "law = \"no_such_law\"");
        assert!(matches!(load_config_bytes(text.as_bytes()), Err(ConfigError::Schema(_))));
        let text = MINIMAL.replace("form = \"constant\", value = 0.5", "form = \"mystery\"");
        assert!(matches!(load_config_bytes(text.as_bytes()), Err(ConfigError::Schema(_))));
    }

    #[test]
    fn zero_mass_initial_is_rejected() {
        let text = MINIMAL.replace(
            "atoms = [{ comp = [2], count = 10 }]",
            "atoms = [{ comp = [2], count = 0 }]",
        );
        assert!(matches!(
            load_config_bytes(text.as_bytes()),
            Err(ConfigError::InitialMassNonpositive)
        ));
    }
}
