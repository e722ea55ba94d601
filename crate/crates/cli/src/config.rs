//! Experiment configuration: one TOML file, sections by dotted keys.
//!
//! Every key is optional; omitted keys take the defaults below.
//!
//! ```toml
//! seed = 1
//!
//! [mesh]
//! radius = 1.0
//! nr = 32
//! nth = 64
//!
//! [coefficients]
//! preset = "drifted"   # identity | radial_scalar | anisotropic | drifted | random_smooth
//! strength = 0.5       # drifted
//! a0 = 1.0             # radial_scalar
//! a1 = 0.5             # radial_scalar
//! seed = 7             # random_smooth
//!
//! [time]
//! t_start = 0.0
//! t0 = 0.3
//! t_end = 3.3
//! steps = 200          # even, steps on [t0, t_end]
//! scheme = "trapezoidal"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wentzell_core::carleman::SweepConfig;
use wentzell_core::coefficients::{Preset, ProblemCoefficients};
use wentzell_core::geometry::DiskMesh;
use wentzell_core::inverse::{BasisConfig, KnownFactor, RandomSourceSpec, ReconstructionConfig, StabilityConfig};
use wentzell_core::region::Region;
use wentzell_core::solver::{Scheme, Window};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mesh: MeshSection,
    pub coefficients: CoefficientSection,
    pub time: TimeSection,
    pub forward: ForwardSection,
    pub convergence: ConvergenceSection,
    pub carleman: CarlemanSection,
    pub sources: RandomSourceSpec,
    pub inverse: InverseSection,
    pub stability: StabilitySection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            mesh: MeshSection::default(),
            coefficients: CoefficientSection::default(),
            time: TimeSection::default(),
            forward: ForwardSection::default(),
            convergence: ConvergenceSection::default(),
            carleman: CarlemanSection::default(),
            sources: RandomSourceSpec::default(),
            inverse: InverseSection::default(),
            stability: StabilitySection::default(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    pub radius: f64,
    pub nr: usize,
    pub nth: usize,
}

impl Default for MeshSection {
    fn default() -> Self {
        Self {
            radius: 1.0,
            nr: 32,
            nth: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoefficientSection {
    pub preset: String,
    pub strength: f64,
    pub a0: f64,
    pub a1: f64,
    pub seed: u64,
}

impl Default for CoefficientSection {
    fn default() -> Self {
        Self {
            preset: "drifted".into(),
            strength: 0.5,
            a0: 1.0,
            a1: 0.5,
            seed: 7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    pub t_start: f64,
    pub t0: f64,
    pub t_end: f64,
    pub steps: usize,
    pub scheme: Scheme,
}

impl Default for TimeSection {
    fn default() -> Self {
        let w = Window::default();
        Self {
            t_start: w.t_start,
            t0: w.t0,
            t_end: w.t_end,
            steps: w.steps,
            scheme: Scheme::Trapezoidal,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    Zero,
    /// `(R² − r²)(1 + r cos θ)` in the bulk; its trace is zero.
    Bump,
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardSection {
    pub initial: InitialState,
    /// Drive with a random admissible source.
    pub random_source: bool,
    /// Write a snapshot every this many steps (0: final state only).
    pub snapshot_every: usize,
}

impl Default for ForwardSection {
    fn default() -> Self {
        Self {
            initial: InitialState::Bump,
            random_source: true,
            snapshot_every: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceSection {
    pub levels: usize,
    pub temporal_steps: usize,
    pub temporal_t_end: f64,
    pub spatial_nr: usize,
    pub spatial_nth: usize,
    pub spatial_steps: usize,
    pub spatial_t_end: f64,
}

impl Default for ConvergenceSection {
    fn default() -> Self {
        Self {
            levels: 3,
            temporal_steps: 25,
            temporal_t_end: 1.0,
            spatial_nr: 16,
            spatial_nth: 32,
            spatial_steps: 400,
            spatial_t_end: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarlemanSection {
    pub lambda: f64,
    pub s_grid: Vec<f64>,
    pub omega: Region,
    pub omega_prime_radius: f64,
    pub ensemble: usize,
    pub supplied_lz: bool,
}

impl Default for CarlemanSection {
    fn default() -> Self {
        let d = SweepConfig::default();
        Self {
            lambda: d.lambda,
            s_grid: d.s_grid,
            omega: d.omega,
            omega_prime_radius: d.omega_prime_radius,
            ensemble: d.ensemble,
            supplied_lz: d.supplied_lz,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InverseSection {
    pub omega: Region,
    pub basis: BasisConfig,
    pub epsilon: f64,
    pub noise_levels: Vec<f64>,
    pub epsilon_grid: Vec<f64>,
    pub r: KnownFactor,
    pub r_tilde: KnownFactor,
}

impl Default for InverseSection {
    fn default() -> Self {
        let d = ReconstructionConfig::default();
        Self {
            omega: Region::default(),
            basis: d.basis,
            epsilon: d.epsilon,
            noise_levels: d.noise_levels,
            epsilon_grid: d.epsilon_grid,
            r: d.r,
            r_tilde: d.r_tilde,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    pub ensemble: usize,
    pub pairs: usize,
    pub scale: f64,
    /// Repeat the experiment with 2× refined mesh and time step.
    pub refinement_check: bool,
}

impl Default for StabilitySection {
    fn default() -> Self {
        let d = StabilityConfig::default();
        Self {
            ensemble: d.ensemble,
            pairs: d.pairs,
            scale: d.scale,
            refinement_check: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

fn invalid(key: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        key: key.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            // serde reports unknown fields as "unknown field `x`"
            let key = message
                .split('`')
                .nth(1)
                .filter(|_| message.starts_with("unknown field"))
                .unwrap_or("")
                .to_string();
            CliError::Config { key, message }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    /// Checks every section; errors name the offending key.
    pub fn validate(&self) -> Result<(), CliError> {
        let m = self.mesh()?;
        self.coefficients_on(&m)?;
        self.window()?;
        self.inverse
            .omega
            .mask(&m)
            .map_err(|e| invalid("inverse.omega", e.to_string()))?;
        self.carleman
            .omega
            .mask(&m)
            .map_err(|e| invalid("carleman.omega", e.to_string()))?;
        invalid_if(!(self.carleman.lambda > 0.0), "carleman.lambda", "must be positive")?;
        invalid_if(
            self.carleman.s_grid.is_empty() || self.carleman.s_grid.iter().any(|s| !(*s >= 1.0)),
            "carleman.s_grid",
            "need a nonempty list of values >= 1",
        )?;
        invalid_if(
            !(self.carleman.omega_prime_radius > 0.0)
                || self.carleman.omega_prime_radius >= self.carleman.omega.outer_radius(),
            "carleman.omega_prime_radius",
            "need 0 < omega_prime_radius < outer radius of carleman.omega",
        )?;
        invalid_if(self.carleman.ensemble == 0, "carleman.ensemble", "must be at least 1")?;
        self.sources
            .validate()
            .map_err(|e| invalid("sources", e.to_string()))?;
        invalid_if(
            !(self.inverse.epsilon > 0.0),
            "inverse.epsilon",
            "must be positive",
        )?;
        invalid_if(
            self.inverse.noise_levels.iter().any(|d| !(*d >= 0.0)),
            "inverse.noise_levels",
            "noise levels must be nonnegative",
        )?;
        invalid_if(
            self.inverse.epsilon_grid.iter().any(|e| !(*e > 0.0)),
            "inverse.epsilon_grid",
            "values must be positive",
        )?;
        invalid_if(
            self.stability.ensemble + self.stability.pairs < 2,
            "stability.ensemble",
            "need at least two samples",
        )?;
        invalid_if(
            !(self.stability.scale > 0.0 && self.stability.scale.is_finite()),
            "stability.scale",
            "must be positive",
        )?;
        invalid_if(self.convergence.levels < 2, "convergence.levels", "need at least 2")?;
        invalid_if(
            self.convergence.temporal_steps == 0 || self.convergence.spatial_steps == 0,
            "convergence.temporal_steps",
            "step counts must be positive",
        )?;
        Ok(())
    }

    pub fn mesh(&self) -> Result<DiskMesh, CliError> {
        DiskMesh::new(self.mesh.radius, self.mesh.nr, self.mesh.nth).map_err(|e| invalid("mesh", e.to_string()))
    }

    pub fn coefficients_preset(&self) -> Result<Preset, CliError> {
        let c = &self.coefficients;
        let params = [
            ("strength".to_string(), c.strength),
            ("a0".to_string(), c.a0),
            ("a1".to_string(), c.a1),
            ("seed".to_string(), c.seed as f64),
        ];
        Preset::parse(&c.preset, &params).map_err(|e| invalid("coefficients.preset", e.to_string()))
    }

    pub fn coefficients_on(&self, mesh: &DiskMesh) -> Result<ProblemCoefficients, CliError> {
        let c = self
            .coefficients_preset()?
            .build(mesh)
            .map_err(|e| invalid("coefficients", e.to_string()))?;
        c.validate(mesh).map_err(|e| invalid("coefficients", e.to_string()))?;
        Ok(c)
    }

    pub fn coefficients(&self) -> Result<ProblemCoefficients, CliError> {
        self.coefficients_on(&self.mesh()?)
    }

    pub fn window(&self) -> Result<Window, CliError> {
        let t = &self.time;
        let w = Window::new(t.t_start, t.t0, t.t_end, t.steps).map_err(|e| {
            let key = match &e {
                wentzell_core::error::Error::InvalidParameter { name, .. } => name.to_string(),
                _ => "time".into(),
            };
            invalid(&key, e.to_string())
        })?;
        w.grid().map_err(|e| invalid("time", e.to_string()))?;
        Ok(w)
    }

    pub fn sweep_config(&self) -> Result<SweepConfig, CliError> {
        Ok(SweepConfig {
            window: self.window()?,
            scheme: self.time.scheme,
            lambda: self.carleman.lambda,
            s_grid: self.carleman.s_grid.clone(),
            omega: self.carleman.omega,
            omega_prime_radius: self.carleman.omega_prime_radius,
            ensemble: self.carleman.ensemble,
            seed: self.seed,
            sources: self.sources,
            supplied_lz: self.carleman.supplied_lz,
        })
    }

    pub fn reconstruction_config(&self) -> ReconstructionConfig {
        ReconstructionConfig {
            basis: self.inverse.basis,
            epsilon: self.inverse.epsilon,
            noise_levels: self.inverse.noise_levels.clone(),
            epsilon_grid: self.inverse.epsilon_grid.clone(),
            r: self.inverse.r,
            r_tilde: self.inverse.r_tilde,
            seed: self.seed,
        }
    }

    pub fn stability_config(&self) -> StabilityConfig {
        StabilityConfig {
            ensemble: self.stability.ensemble,
            pairs: self.stability.pairs,
            seed: self.seed,
            sources: self.sources,
            scale: self.stability.scale,
            check_scaling: true,
        }
    }
}

fn invalid_if(cond: bool, key: &str, message: &str) -> Result<(), CliError> {
    if cond {
        Err(invalid(key, message))
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn dotted_keys() {
        let c = ExperimentConfig::from_toml("mesh.nr = 8\nmesh.nth = 16\ntime.scheme = \"implicit_euler\"\ninverse.omega = { shape = \"disk\", radius = 0.4 }\n").unwrap();
        assert_eq!(c.mesh.nr, 8);
        assert_eq!(c.time.scheme, Scheme::ImplicitEuler);
        assert_eq!(c.inverse.omega, Region::Disk { radius: 0.4 });
    }

    fn key_of(text: &str) -> String {
        match ExperimentConfig::from_toml(text) {
            Err(CliError::Config { key, .. }) => key,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_keys() {
        assert_eq!(key_of("[mesh]\nbogus = 1\n"), "bogus");
        assert_eq!(key_of("time.steps = 201\n"), "time.steps");
        assert_eq!(key_of("time.t0 = 0.3001\n"), "time.t0");
        assert_eq!(key_of("coefficients.preset = \"nope\"\n"), "coefficients.preset");
        assert_eq!(key_of("inverse.epsilon = 0.0\n"), "inverse.epsilon");
        assert_eq!(key_of("inverse.omega = { shape = \"disk\", radius = 1.5 }\n"), "inverse.omega");
        assert_eq!(key_of("carleman.omega_prime_radius = 0.5\n"), "carleman.omega_prime_radius");
    }
}
