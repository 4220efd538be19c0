//! Run configuration, read from one TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DriverError;
use crate::solver::{plane_wave, PlaneWave, WaveKind};
use crate::equations::Material;
use crate::source_receiver::{MomentRate, PointSource};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Preprocess,
    Run,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Clustered local time stepping.
    Lts,
    /// Every element steps with the smallest time step.
    Gts,
}

/// Either a fixed `lambda` or `"optimize"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaMode {
    Fixed(f64),
    Named(LambdaName),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaName {
    Optimize,
}

impl LambdaMode {
    pub const OPTIMIZE: LambdaMode = LambdaMode::Named(LambdaName::Optimize);

    pub fn parse(s: &str) -> Result<Self, DriverError> {
        if s.eq_ignore_ascii_case("optimize") {
            return Ok(Self::OPTIMIZE);
        }
        s.parse().map(LambdaMode::Fixed).map_err(|_| DriverError::Config(format!("lambda must be a number or \"optimize\", got {s:?}")))
    }
}

/// Source time function of the moment rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TimeFunction {
    /// Ricker wavelet with peak frequency `frequency` centered at `delay`.
    Ricker { frequency: f64, delay: f64 },
    /// Gaussian `exp(-((t - delay) / width)^2)`.
    Gaussian { width: f64, delay: f64 },
    /// Constant rate over `[0, duration]`.
    Constant { value: f64, duration: f64 },
    /// Uniform samples, linear in between.
    Samples { dt: f64, values: Vec<f64> },
}

impl TimeFunction {
    /// Piecewise-linear moment rate resolving the function up to `t_end`.
    pub fn moment_rate(&self, t_end: f64) -> Result<MomentRate, DriverError> {
        const N: usize = 4001;
        let dt = t_end / (N - 1) as f64;
        let rate = match *self {
            TimeFunction::Ricker { frequency, delay } => MomentRate::sampled(dt, N, |t| {
                let a = (std::f64::consts::PI * frequency * (t - delay)).powi(2);
                (1.0 - 2.0 * a) * (-a).exp()
            }),
            TimeFunction::Gaussian { width, delay } => MomentRate::sampled(dt, N, |t| (-((t - delay) / width).powi(2)).exp()),
            TimeFunction::Constant { value, duration } => MomentRate::constant(value, duration),
            TimeFunction::Samples { dt, ref values } => MomentRate::new(dt, values.clone())?,
        };
        Ok(rate)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub location: [f64; 3],
    /// `(Mxx, Myy, Mzz, Mxy, Myz, Mxz)`.
    pub moment: [f64; 6],
    pub time_function: TimeFunction,
    /// Amplitude per fused slot; empty means 1.
    #[serde(default)]
    pub slot_scale: Vec<f64>,
}

impl SourceConfig {
    pub fn point_source(&self, t_end: f64) -> Result<PointSource, DriverError> {
        Ok(PointSource {
            location: self.location,
            moment: self.moment,
            rate: self.time_function.moment_rate(t_end)?,
            slot_scale: self.slot_scale.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReceiverConfig {
    pub location: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveName {
    P,
    S,
}

/// Initial state, identical in every fused slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialCondition {
    /// Constant quantities `(sxx, syy, szz, sxy, syz, sxz, u, v, w)`.
    Constant { values: [f64; 9] },
    /// `r sin(k (n . x - c t))` in the given material.
    PlaneWave {
        direction: [f64; 3],
        wave: WaveName,
        #[serde(default)]
        polarization: [f64; 3],
        wavenumber: f64,
        material: MaterialConfig,
    },
    /// Plane wave eigenvector under a Gaussian envelope around `center`.
    Pulse {
        center: [f64; 3],
        width: f64,
        direction: [f64; 3],
        wave: WaveName,
        #[serde(default)]
        polarization: [f64; 3],
        material: MaterialConfig,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialConfig {
    pub rho: f64,
    pub vp: f64,
    pub vs: f64,
}

impl InitialCondition {
    /// Evaluator `x -> q(x, 0)`.
    pub fn evaluator(&self) -> Result<Box<dyn Fn([f64; 3]) -> [f64; 9] + Send + Sync>, DriverError> {
        let wave = |dir: [f64; 3], w: WaveName, pol: [f64; 3], m: &MaterialConfig| -> Result<PlaneWave, DriverError> {
            let mat = Material::elastic(m.rho, m.vp, m.vs).map_err(|e| DriverError::Config(format!("initial condition: {e}")))?;
            let kind = match w {
                WaveName::P => WaveKind::P,
                WaveName::S => WaveKind::S,
            };
            Ok(plane_wave(&mat, dir, kind, pol))
        };
        Ok(match self {
            InitialCondition::Constant { values } => {
                let v = *values;
                Box::new(move |_| v)
            }
            InitialCondition::PlaneWave { direction, wave: w, polarization, wavenumber, material } => {
                let pw = wave(*direction, *w, *polarization, material)?;
                let k = *wavenumber;
                Box::new(move |x| pw.at(k, x, 0.0))
            }
            InitialCondition::Pulse { center, width, direction, wave: w, polarization, material } => {
                let pw = wave(*direction, *w, *polarization, material)?;
                let (c, s) = (*center, *width);
                Box::new(move |x| {
                    let d2: f64 = (0..3).map(|i| (x[i] - c[i]).powi(2)).sum();
                    let a = (-d2 / (s * s)).exp();
                    pw.r.map(|r| r * a)
                })
            }
        })
    }
}

fn default_cfl() -> f64 {
    0.9
}
fn default_samples() -> usize {
    100
}
fn default_one() -> usize {
    1
}
fn default_center_frequency() -> f64 {
    1.0
}
fn default_lambda() -> LambdaMode {
    LambdaMode::Fixed(1.0)
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// MSH 4.1 ASCII mesh.
    pub mesh: PathBuf,
    /// Per-element material CSV.
    pub materials: PathBuf,
    /// All outputs go below this directory.
    pub output: PathBuf,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    pub order: usize,
    /// 32 or 64.
    pub precision: u32,
    #[serde(default)]
    pub mechanisms: usize,
    #[serde(default = "default_center_frequency")]
    pub center_frequency: f64,
    #[serde(default = "default_one")]
    pub clusters: usize,
    #[serde(default = "default_lambda")]
    pub lambda: LambdaMode,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    #[serde(default = "default_one")]
    pub partitions: usize,
    /// Fused simulations per run.
    #[serde(default = "default_one")]
    pub width: usize,
    pub t_end: f64,
    /// Receiver samples over `[0, t_end]` (plus the initial one).
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Intra-partition element parallelism.
    #[serde(default = "default_true")]
    pub threads: bool,
    #[serde(default)]
    pub initial: Option<InitialCondition>,
    #[serde(default)]
    pub sources: Vec<SourceConfig>,
    #[serde(default)]
    pub receivers: Vec<ReceiverConfig>,
}

fn default_mode() -> Mode {
    Mode::Both
}

fn default_scheme() -> Scheme {
    Scheme::Lts
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, DriverError> {
        toml::from_str(text).map_err(|e| DriverError::Config(e.to_string()))
    }

    pub fn from_table(table: toml::Table) -> Result<Self, DriverError> {
        table.try_into().map_err(|e: toml::de::Error| DriverError::Config(e.to_string()))
    }

    /// Reads `path` as a table, with relative paths resolved against its
    /// directory, for callers that patch keys before deserializing.
    pub fn load_table(path: &Path) -> Result<toml::Table, DriverError> {
        let text = std::fs::read_to_string(path).map_err(|source| DriverError::io(path, source))?;
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| DriverError::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for key in ["mesh", "materials", "output"] {
            if let Some(toml::Value::String(s)) = table.get_mut(key) {
                if Path::new(s.as_str()).is_relative() {
                    *s = base.join(&*s).display().to_string();
                }
            }
        }
        Ok(table)
    }

    /// Reads `path`; relative paths inside are taken relative to its directory.
    pub fn load(path: &Path) -> Result<Self, DriverError> {
        Self::from_table(Self::load_table(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        let fail = |m: String| Err(DriverError::Config(m));
        if !(1..=5).contains(&self.order) {
            return fail(format!("order {} outside [1, 5]", self.order));
        }
        if self.precision != 32 && self.precision != 64 {
            return fail(format!("precision must be 32 or 64, got {}", self.precision));
        }
        if self.width == 0 || self.partitions == 0 || self.clusters == 0 || self.samples == 0 {
            return fail("width, partitions, clusters and samples must be at least 1".into());
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return fail(format!("t_end must be positive, got {}", self.t_end));
        }
        if !(self.cfl > 0.0) {
            return fail(format!("cfl must be positive, got {}", self.cfl));
        }
        if let LambdaMode::Fixed(l) = self.lambda {
            if !(l > 0.5 && l <= 1.0) {
                return fail(format!("lambda {l} outside (0.5, 1]"));
            }
        }
        if self.mechanisms > 0 && !(self.center_frequency > 0.0) {
            return fail("anelastic runs need a positive center frequency".into());
        }
        for (i, s) in self.sources.iter().enumerate() {
            if !s.slot_scale.is_empty() && s.slot_scale.len() != self.width {
                return fail(format!("source {i} has {} slot scales for width {}", s.slot_scale.len(), self.width));
            }
        }
        Ok(())
    }
}
