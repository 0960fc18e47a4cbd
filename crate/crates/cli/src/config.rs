//! Run configuration: parsing, defaults and validation.
//!
//! The config is TOML. Sections whose defaults depend on the grid dimension or
//! the interaction class (`[trap]`, `[solver]`) are merged key by key onto the
//! resolved defaults, so the echoed config always lists every value used.

use std::path::{Path, PathBuf};

use qls_core::model::{BuiltinNonlinearity, InteractionClass, MetricModel};
use qls_core::nontrap::TrapConfig;
use qls_core::sample::{gaussian, random_field};
use qls_core::solver::SolverConfig;
use qls_core::spectral::{Field, GridSpec};
use qls_core::C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// A configuration the run refuses before doing any numerics.
#[derive(Debug)]
pub struct SchemaError(pub String);

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config rejected: {}", self.0)
    }
}

impl std::error::Error for SchemaError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Analyze,
    Solve,
    Verify,
    Sweep,
}

/// Initial data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Zero,
    /// `amp·exp(−|x−center|²/width²)·e^{iω·x}` in every component.
    Gaussian {
        amp: f64,
        #[serde(default)]
        center: [f64; 2],
        width: f64,
        #[serde(default)]
        omega: [f64; 2],
    },
    /// Random Fourier coefficients with `(1+|ξ|²)^{-decay/2}` decay, scaled to `L²` norm `amp`.
    Random {
        amp: f64,
        decay: f64,
    },
}

impl DataSpec {
    pub fn build(&self, spec: &GridSpec, m: usize, seed: u64) -> Field {
        match *self {
            DataSpec::Zero => Field::zeros(*spec, m),
            DataSpec::Gaussian { amp, center, width, omega } => {
                let g = gaussian(spec, amp, center, width, omega);
                Field::new(*spec, vec![g.comp(0).to_vec(); m]).expect("shape")
            }
            DataSpec::Random { amp, decay } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                random_field(spec, m, decay, &mut rng).scaled(C64::new(amp, 0.0))
            }
        }
    }

    fn validate(&self) -> Result<(), SchemaError> {
        let ok = match *self {
            DataSpec::Zero => true,
            DataSpec::Gaussian { amp, width, .. } => amp.is_finite() && width > 0.0,
            DataSpec::Random { amp, decay } => amp.is_finite() && decay >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(SchemaError(format!("invalid data parameters {self:?}")))
        }
    }
}

/// Background metric for `analyze`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Background {
    /// `g(u₀)` sampled on the grid.
    FromData,
    Flat,
    /// `(1 + A exp(−(|x| − r0)²/w²)) I`.
    Ring {
        amplitude: f64,
        r0: f64,
        width: f64,
    },
    /// `(1 + A exp(−|x − center|²/w²)) I`.
    Bump {
        amplitude: f64,
        #[serde(default)]
        center: [f64; 2],
        width: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub background: Background,
    /// Fixed `R`; searched from the exterior norms when absent.
    pub radius: Option<f64>,
    pub escape_check: bool,
    /// Write every traced ray to `rays.csv`.
    pub dump_rays: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { background: Background::FromData, radius: None, escape_check: true, dump_rays: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Continuous dependence: data `u₀ + δ φ`.
    pub deltas: Vec<f64>,
    pub perturbation: DataSpec,
    /// Final times for the local energy sweep.
    pub t_values: Vec<f64>,
    /// Points per axis for the resolution sweep.
    pub resolutions: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            deltas: vec![1e-2, 1e-3, 1e-4],
            perturbation: DataSpec::Gaussian { amp: 1.0, center: [1.0, 0.0], width: 1.0, omega: [-0.5, 0.0] },
            t_values: vec![],
            resolutions: vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub json: bool,
    pub csv: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), json: true, csv: true }
    }
}

/// Fully resolved configuration; this is what the report echoes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub mode: Mode,
    pub seed: u64,
    pub grid: GridSpec,
    pub nonlinearity: BuiltinNonlinearity,
    pub data: DataSpec,
    pub analysis: AnalysisConfig,
    pub trap: TrapConfig,
    pub solver: SolverConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

/// Raw file layout before defaults are resolved.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: u32,
    #[serde(default = "default_mode")]
    mode: Mode,
    #[serde(default)]
    seed: u64,
    grid: GridSpec,
    #[serde(default = "default_nonlinearity")]
    nonlinearity: BuiltinNonlinearity,
    #[serde(default = "default_data")]
    data: DataSpec,
    #[serde(default)]
    analysis: AnalysisConfig,
    trap: Option<toml::Value>,
    solver: Option<toml::Value>,
    #[serde(default)]
    sweep: SweepConfig,
    #[serde(default)]
    output: OutputConfig,
}

fn default_mode() -> Mode {
    Mode::Solve
}

fn default_nonlinearity() -> BuiltinNonlinearity {
    BuiltinNonlinearity { m: 1, metric: MetricModel::Flat, forcing: vec![], class: InteractionClass::Quadratic, c0: 0.5 }
}

fn default_data() -> DataSpec {
    DataSpec::Zero
}

/// Overlay `user` on the serialized defaults, rejecting keys the defaults lack.
fn merge_onto<T: Serialize + DeserializeOwned>(defaults: &T, user: Option<toml::Value>, section: &str) -> Result<T, SchemaError> {
    let mut base = toml::Value::try_from(defaults).map_err(|e| SchemaError(format!("[{section}]: {e}")))?;
    if let Some(u) = user {
        overlay(&mut base, u, section)?;
    }
    base.try_into().map_err(|e| SchemaError(format!("[{section}]: {e}")))
}

fn overlay(base: &mut toml::Value, user: toml::Value, path: &str) -> Result<(), SchemaError> {
    match (base, user) {
        (toml::Value::Table(b), toml::Value::Table(u)) => {
            for (k, v) in u {
                let key = format!("{path}.{k}");
                match b.get_mut(&k) {
                    Some(slot @ toml::Value::Table(_)) => overlay(slot, v, &key)?,
                    Some(slot) => *slot = v,
                    None => return Err(SchemaError(format!("unknown key `{key}`"))),
                }
            }
            Ok(())
        }
        (_, _) => Err(SchemaError(format!("`{path}` must be a table"))),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, SchemaError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| SchemaError(e.to_string()))?;
        if raw.schema_version != SCHEMA_VERSION {
            return Err(SchemaError(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", raw.schema_version)));
        }
        let grid = GridSpec::new(raw.grid.dim, raw.grid.n, raw.grid.box_exp).map_err(|e| SchemaError(e.to_string()))?;
        let solver_defaults = match raw.nonlinearity.class {
            InteractionClass::Quadratic => SolverConfig::for_dim(grid.dim),
            InteractionClass::Cubic => SolverConfig::cubic(grid.dim),
        };
        let solver: SolverConfig = merge_onto(&solver_defaults, raw.solver, "solver")?;
        // The trap analysis measures data in the solver's s0 unless told otherwise.
        let trap_defaults = TrapConfig { s0: solver.s0, ..TrapConfig::for_dim(grid.dim) };
        let trap: TrapConfig = merge_onto(&trap_defaults, raw.trap, "trap")?;
        let cfg = RunConfig {
            schema_version: raw.schema_version,
            mode: raw.mode,
            seed: raw.seed,
            grid,
            nonlinearity: raw.nonlinearity,
            data: raw.data,
            analysis: raw.analysis,
            trap,
            solver,
            sweep: raw.sweep,
            output: raw.output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
        Ok(Self::from_toml(&text)?)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        let wrap = |e: qls_core::Error| SchemaError(e.to_string());
        self.nonlinearity.validate().map_err(wrap)?;
        self.data.validate()?;
        self.sweep.perturbation.validate()?;
        self.trap.validate(self.grid.dim).map_err(wrap)?;
        self.solver.validate(self.grid.dim, self.nonlinearity.class).map_err(wrap)?;
        if let Some(r) = self.analysis.radius {
            if !(r > 0.0) {
                return Err(SchemaError("analysis.radius must be positive".into()));
            }
        }
        if self.sweep.deltas.iter().any(|d| !d.is_finite() || *d == 0.0) {
            return Err(SchemaError("sweep.deltas must be finite and nonzero".into()));
        }
        if self.sweep.t_values.iter().any(|t| !(*t > 0.0)) {
            return Err(SchemaError("sweep.t_values must be positive".into()));
        }
        for &n in &self.sweep.resolutions {
            GridSpec::new(self.grid.dim, n, self.grid.box_exp).map_err(wrap)?;
        }
        Ok(())
    }

    pub fn initial_data(&self) -> Field {
        self.data.build(&self.grid, self.nonlinearity.m, self.seed)
    }
}
