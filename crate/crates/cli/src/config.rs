//! Scenario configuration files (TOML, schema version 1).
//!
//! ```toml
//! version = 1
//! kind = "sticky"
//! seed = 7
//!
//! [time]
//! t_final = 2.0
//! dt = 1e-3
//!
//! [sticky]
//! particles = 16
//! interaction = { type = "quadratic", kappa = 1.0 }
//! modulus = 1.0
//! ```
//!
//! Exactly one of the `[newton]`, `[vlasov]`, `[sticky]`, `[elasto]`
//! sections must be present and it must match `kind`. Unknown keys are
//! rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use semiflow::galerkin::{EnergySpec, YoungSpec};
use semiflow::jeans_vlasov::{InitialDistribution, InteractionSpec};
use semiflow::sticky::V0Profile;
use semiflow::{IntegratorConfig, Scheme};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Newton,
    Vlasov,
    Sticky,
    Elasto,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Newton => "newton",
            Self::Vlasov => "vlasov",
            Self::Sticky => "sticky",
            Self::Elasto => "elasto",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    pub kind: ScenarioKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub time: TimeSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub newton: Option<NewtonSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vlasov: Option<VlasovSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sticky: Option<StickySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elasto: Option<ElastoSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_final: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Defaults to velocity-verlet for particle systems and rk4 otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<Scheme>,
    /// Defaults to 10 for vlasov runs and 1 otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_stride: Option<usize>,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_dt() -> f64 {
    1e-3
}

fn default_max_steps() -> usize {
    10_000_000
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Relative to the config file. `run --out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Slack for inequality checks.
    pub check: f64,
    /// Agreement of particle runs with closed-form flows.
    pub oracle: f64,
    /// Agreement of mode coefficients with closed-form linear waves.
    pub mode_oracle: f64,
    /// Energy identities of Galerkin runs.
    pub energy: f64,
    /// Residuals that vanish up to rounding.
    pub rounding: f64,
    pub eps_event: f64,
    pub eps_merge: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { check: 1e-8, oracle: 1e-6, mode_oracle: 1e-8, energy: 1e-6, rounding: 1e-10, eps_event: 1e-10, eps_merge: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum NewtonPotentialSpec {
    Free,
    /// `Σ (k/2)|x_i|²`.
    Harmonic { stiffness: f64 },
    /// `½ Σ m_i m_j W(x_i − x_j)`.
    Pair {
        interaction: InteractionSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        modulus: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewtonSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialDistribution>,
    /// Phase-space measure CSV (`w,x1..xd,v1..vd`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_file: Option<PathBuf>,
    pub potential: NewtonPotentialSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VlasovSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialDistribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_file: Option<PathBuf>,
    pub interaction: InteractionSpec,
    /// Raises the declared semiconvexity modulus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulus: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StickySection {
    /// Seeded random data with this many particles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles: Option<usize>,
    /// Explicit increasing positions; excludes `particles`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocities: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<V0Profile>,
    /// Equal masses summing to one when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masses: Option<Vec<f64>>,
    #[serde(default = "zero_interaction")]
    pub interaction: InteractionSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulus: Option<f64>,
    /// Times at which the entropy and QSPP checks are evaluated; entries
    /// past `t_final` are ignored.
    #[serde(default = "default_check_times")]
    pub check_times: Vec<f64>,
}

fn zero_interaction() -> InteractionSpec {
    InteractionSpec::Zero
}

fn default_check_times() -> Vec<f64> {
    vec![0.1, 0.5, 1.0, 2.0]
}

/// Initial displacement or velocity field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Zero,
    /// `amplitude · Π x_i(ℓ_i − x_i) · direction`.
    Bump { amplitude: f64, direction: Vec<f64> },
    /// `amplitude · φ_mode · e_component`.
    Mode { mode: usize, component: usize, amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElastoSection {
    pub lengths: Vec<f64>,
    pub modes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quad_order: Option<usize>,
    pub energy: EnergySpec,
    #[serde(default)]
    pub mu: f64,
    /// Bump along the first axis when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub displacement: Option<FieldSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<FieldSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub young: Option<YoungSpec>,
}

/// A validated configuration with file references made absolute.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub base_dir: PathBuf,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::config(e.to_string()))
    }

    pub fn integrator(&self) -> IntegratorConfig {
        let default_scheme = match self.kind {
            ScenarioKind::Newton | ScenarioKind::Vlasov => Scheme::VelocityVerlet,
            ScenarioKind::Sticky | ScenarioKind::Elasto => Scheme::Rk4,
        };
        let default_stride = if self.kind == ScenarioKind::Vlasov { 10 } else { 1 };
        IntegratorConfig {
            dt: self.time.dt,
            scheme: self.time.scheme.unwrap_or(default_scheme),
            max_steps: self.time.max_steps,
            output_stride: self.time.output_stride.unwrap_or(default_stride),
        }
    }

    /// Checks everything that does not require building the scenario.
    pub fn validate(&self, base_dir: &Path) -> CliResult<()> {
        if self.version != SCHEMA_VERSION {
            return Err(CliError::config(format!("unsupported schema version {} (expected {SCHEMA_VERSION})", self.version)));
        }
        let t = self.time.t_final;
        if !(t > 0.0 && t.is_finite()) {
            return Err(CliError::config(format!("time.t_final must be positive, got {t}")));
        }
        let tol = &self.tolerances;
        for (name, v) in [
            ("check", tol.check),
            ("oracle", tol.oracle),
            ("mode_oracle", tol.mode_oracle),
            ("energy", tol.energy),
            ("rounding", tol.rounding),
            ("eps_event", tol.eps_event),
            ("eps_merge", tol.eps_merge),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::config(format!("tolerances.{name} must be positive, got {v}")));
            }
        }
        self.integrator().grid(t).map_err(|e| CliError::config(e.to_string()))?;
        let present = [
            (ScenarioKind::Newton, self.newton.is_some()),
            (ScenarioKind::Vlasov, self.vlasov.is_some()),
            (ScenarioKind::Sticky, self.sticky.is_some()),
            (ScenarioKind::Elasto, self.elasto.is_some()),
        ];
        for (kind, here) in present {
            if kind == self.kind && !here {
                return Err(CliError::config(format!("kind = \"{}\" needs a [{}] section", kind.as_str(), kind.as_str())));
            }
            if kind != self.kind && here {
                return Err(CliError::config(format!("section [{}] does not belong to kind = \"{}\"", kind.as_str(), self.kind.as_str())));
            }
        }
        let files = match (&self.newton, &self.vlasov) {
            (Some(s), _) => vec![(&s.initial, &s.initial_file)],
            (_, Some(s)) => vec![(&s.initial, &s.initial_file)],
            _ => vec![],
        };
        for (initial, file) in files {
            match (initial, file) {
                (Some(_), Some(_)) => return Err(CliError::config("give either `initial` or `initial_file`, not both")),
                (None, None) => return Err(CliError::config("initial data missing: set `initial` or `initial_file`")),
                (None, Some(p)) => {
                    let full = base_dir.join(p);
                    if !full.is_file() {
                        return Err(CliError::config(format!("initial_file {} does not exist", full.display())));
                    }
                }
                _ => {}
            }
        }
        if let Some(s) = &self.sticky {
            match (&s.positions, s.particles) {
                (Some(_), Some(_)) => return Err(CliError::config("give either sticky.positions or sticky.particles")),
                (None, None) => return Err(CliError::config("sticky needs `positions` or `particles`")),
                (Some(_), None) if s.velocities.is_some() == s.profile.is_some() => {
                    return Err(CliError::config("explicit sticky data needs exactly one of `velocities` or `profile`"))
                }
                (None, Some(_)) if s.velocities.is_some() || s.profile.is_some() || s.masses.is_some() => {
                    return Err(CliError::config("seeded sticky data takes no velocities, profile or masses"))
                }
                _ => {}
            }
            if s.check_times.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
                return Err(CliError::config("sticky.check_times must be positive"));
            }
        }
        if let Some(e) = &self.elasto {
            if !(e.mu >= 0.0 && e.mu.is_finite()) {
                return Err(CliError::config(format!("elasto.mu must be >= 0, got {}", e.mu)));
            }
        }
        Ok(())
    }
}

impl Scenario {
    /// Reads, parses and validates a config file.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_config(ScenarioConfig::from_toml(&text)?, base_dir)
    }

    pub fn from_config(mut config: ScenarioConfig, base_dir: PathBuf) -> CliResult<Self> {
        config.validate(&base_dir)?;
        let absolutize = |p: &mut Option<PathBuf>| -> CliResult<()> {
            if let Some(path) = p {
                let full = base_dir.join(&*path);
                *path = full.canonicalize().map_err(|e| CliError::io(full, e))?;
            }
            Ok(())
        };
        if let Some(s) = &mut config.newton {
            absolutize(&mut s.initial_file)?;
        }
        if let Some(s) = &mut config.vlasov {
            absolutize(&mut s.initial_file)?;
        }
        Ok(Self { config, base_dir })
    }

    /// Output directory from the config, relative to the config file.
    pub fn default_output_dir(&self) -> PathBuf {
        match &self.config.output.dir {
            Some(d) => self.base_dir.join(d),
            None => self.base_dir.join(format!("{}_out", self.config.name.as_deref().unwrap_or(self.config.kind.as_str()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const STICKY: &str = r#"
version = 1
kind = "sticky"
[time]
t_final = 2.0
[sticky]
positions = [-1.0, 1.0]
velocities = [1.0, -1.0]
"#;

    #[test]
    fn parses_minimal_sticky() {
        let c = ScenarioConfig::from_toml(STICKY).unwrap();
        c.validate(Path::new(".")).unwrap();
        assert_eq!(c.integrator().scheme, Scheme::Rk4);
        assert_eq!(c.sticky.unwrap().check_times, vec![0.1, 0.5, 1.0, 2.0]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ScenarioConfig::from_toml(&format!("{STICKY}\nbogus = 1\n")).is_err());
        assert!(ScenarioConfig::from_toml(&STICKY.replace("t_final = 2.0", "t_final = 2.0\nstep = 3")).is_err());
        for bad in [STICKY.replace("version = 1", "version = 2"), STICKY.replace("2.0", "-1.0"), STICKY.replace("kind = \"sticky\"", "kind = \"newton\"")] {
            let c = ScenarioConfig::from_toml(&bad).unwrap();
            assert!(c.validate(Path::new(".")).is_err());
        }
        let mut c = ScenarioConfig::from_toml(STICKY).unwrap();
        c.tolerances.check = 0.0;
        assert!(c.validate(Path::new(".")).is_err());
    }

    #[test]
    fn missing_initial_file_is_rejected() {
        let text = r#"
version = 1
kind = "vlasov"
[time]
t_final = 1.0
[vlasov]
initial_file = "does-not-exist.csv"
interaction = { type = "zero" }
"#;
        let c = ScenarioConfig::from_toml(text).unwrap();
        assert!(c.validate(Path::new(".")).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let c = ScenarioConfig::from_toml(STICKY).unwrap();
        let back: ScenarioConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
