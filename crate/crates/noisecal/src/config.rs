//! Run configuration: one JSON document with the sections `system`,
//! `parameterization`, `supervisory`, `optimizer` and `simulation`. Every
//! field has a default, so `{}` describes the reference experiment.

use std::fmt;
use std::path::Path;

use noisecal_core::{CalibrationConfig, CovParam, GradientMode, LossWeights, Mat};
use serde::{Deserialize, Serialize};

use crate::sim::{NoiseSpec, Profile, SimConfig, STATE_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ParamKind {
    Isotropic,
    Diagonal,
    Cholesky,
}

impl ParamKind {
    pub const ALL: [ParamKind; 3] = [
        ParamKind::Isotropic,
        ParamKind::Diagonal,
        ParamKind::Cholesky,
    ];

    pub fn build(self, meas_dim: usize, fixed_q: Mat) -> noisecal_core::Result<CovParam> {
        match self {
            ParamKind::Isotropic => CovParam::isotropic(meas_dim, fixed_q),
            ParamKind::Diagonal => CovParam::diagonal(meas_dim, fixed_q),
            ParamKind::Cholesky => CovParam::cholesky(meas_dim, fixed_q),
        }
    }

    /// Forward mode for the small maps, reverse for Cholesky.
    pub fn default_mode(self) -> Mode {
        match self {
            ParamKind::Isotropic | ParamKind::Diagonal => Mode::Forward,
            ParamKind::Cholesky => Mode::Reverse,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamKind::Isotropic => "isotropic",
            ParamKind::Diagonal => "diagonal",
            ParamKind::Cholesky => "cholesky",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Forward,
    Reverse,
}

impl From<Mode> for GradientMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Forward => GradientMode::Forward,
            Mode::Reverse => GradientMode::Reverse,
        }
    }
}

impl Mode {
    pub fn tag(self) -> &'static str {
        match self {
            Mode::Forward => "F",
            Mode::Reverse => "R",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Full,
    PrimaryOnly,
}

impl LossKind {
    pub fn weights(self) -> LossWeights {
        match self {
            LossKind::Full => LossWeights::FULL,
            LossKind::PrimaryOnly => LossWeights::PRIMARY_ONLY,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Full => "full",
            LossKind::PrimaryOnly => "primary-only",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub dt: f64,
    /// Process noise variance, `Q = qI`.
    pub q: f64,
    /// Initial covariance `P₀ = p0_scale · I`.
    pub p0_scale: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            dt: 1.0,
            q: 0.01,
            p0_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamConfig {
    pub kind: ParamKind,
    /// Defaults to the kind's preferred mode.
    pub mode: Option<Mode>,
    pub loss: LossKind,
}

impl Default for ParamConfig {
    fn default() -> Self {
        ParamConfig {
            kind: ParamKind::Cholesky,
            mode: None,
            loss: LossKind::Full,
        }
    }
}

impl ParamConfig {
    pub fn mode(&self) -> Mode {
        self.mode.unwrap_or(self.kind.default_mode())
    }
}

/// Two supervision densities: the default one and a sparser one used for
/// the fewer-measurement comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisoryConfig {
    pub alpha: f64,
    pub downsample: usize,
    pub threshold: f64,
    pub sparse_downsample: usize,
    pub sparse_threshold: f64,
}

impl Default for SupervisoryConfig {
    fn default() -> Self {
        SupervisoryConfig {
            alpha: 0.01,
            downsample: 5,
            threshold: 3.0,
            sparse_downsample: 7,
            sparse_threshold: 2.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub itermax: usize,
    pub eta0: f64,
    pub line_search: bool,
    pub grad_tol: f64,
    pub max_backtracks: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let c = CalibrationConfig::default();
        OptimizerConfig {
            itermax: c.itermax,
            eta0: c.eta0,
            line_search: c.line_search,
            grad_tol: c.grad_tol,
            max_backtracks: c.max_backtracks,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_calib: usize,
    pub n_test: usize,
    pub r_true: NoiseSpec,
    pub profile: Profile,
    pub trials: usize,
    pub seed: u64,
    /// Monte-Carlo worker threads.
    pub workers: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let s = SimConfig::default();
        SimulationConfig {
            n_calib: s.n_calib,
            n_test: s.n_test,
            r_true: s.r_true,
            profile: s.profile,
            trials: s.trials,
            seed: s.seed,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub system: SystemConfig,
    pub parameterization: ParamConfig,
    pub supervisory: SupervisoryConfig,
    pub optimizer: OptimizerConfig,
    pub simulation: SimulationConfig,
}

#[derive(Debug)]
pub enum ConfigError {
    Io(std::io::Error),
    /// Parse failure with its line and column.
    Parse(serde_json::Error),
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "cannot read config: {e}"),
            ConfigError::Parse(e) => write!(f, "config: {e}"),
            ConfigError::Invalid(msg) => write!(f, "invalid config: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = serde_json::from_str(text).map_err(ConfigError::Parse)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Config::from_json(&std::fs::read_to_string(path).map_err(ConfigError::Io)?)
    }

    /// The file at `path`, or the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, ConfigError> {
        path.map_or_else(|| Ok(Config::default()), Config::load)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: &str| Err(ConfigError::Invalid(msg.into()));
        if !(self.system.p0_scale > 0.0) {
            return invalid("system.p0_scale must be positive");
        }
        if self.supervisory.sparse_downsample == 0 || !(self.supervisory.sparse_threshold > 0.0) {
            return invalid("supervisory.sparse_downsample and sparse_threshold must be positive");
        }
        if self.simulation.workers == 0 {
            return invalid("simulation.workers must be at least 1");
        }
        self.calibration()
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("optimizer: {e}")))?;
        self.sim().validate().map_err(ConfigError::Invalid)
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            n_calib: self.simulation.n_calib,
            n_test: self.simulation.n_test,
            dt: self.system.dt,
            q: self.system.q,
            alpha: self.supervisory.alpha,
            r_true: self.simulation.r_true.clone(),
            downsample: self.supervisory.downsample,
            threshold: self.supervisory.threshold,
            trials: self.simulation.trials,
            seed: self.simulation.seed,
            profile: self.simulation.profile.clone(),
        }
    }

    pub fn calibration(&self) -> CalibrationConfig {
        let o = &self.optimizer;
        CalibrationConfig {
            mode: self.parameterization.mode().into(),
            itermax: o.itermax,
            eta0: o.eta0,
            line_search: o.line_search,
            grad_tol: o.grad_tol,
            loss_weights: self.parameterization.loss.weights(),
            max_backtracks: o.max_backtracks,
        }
    }

    pub fn fixed_q(&self) -> Mat {
        Mat::identity(STATE_DIM, STATE_DIM) * self.system.q
    }

    pub fn param(&self) -> CovParam {
        self.parameterization
            .kind
            .build(3, self.fixed_q())
            .expect("built-in kinds are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(Config::from_json("{}").unwrap(), Config::default());
    }

    #[test]
    fn defaults_match_the_reference_experiment() {
        let c = Config::default();
        assert_eq!(
            (
                c.simulation.n_calib,
                c.simulation.n_test,
                c.simulation.trials
            ),
            (100, 600, 100)
        );
        assert_eq!(
            (c.system.dt, c.system.q, c.supervisory.alpha),
            (1.0, 0.01, 0.01)
        );
        assert_eq!(c.parameterization.mode(), Mode::Reverse);
        assert_eq!(c.calibration(), CalibrationConfig::default());
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let c = Config::from_json(
            r#"{"parameterization": {"kind": "diagonal"}, "optimizer": {"itermax": 5}}"#,
        )
        .unwrap();
        assert_eq!(c.parameterization.mode(), Mode::Forward);
        assert_eq!(c.optimizer.itermax, 5);
        assert_eq!(c.optimizer.eta0, 0.1);
    }

    #[test]
    fn errors_carry_location() {
        let err = Config::from_json("{\n  \"optimizer\": {\"itermx\": 5}\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("itermx"), "{msg}");
        assert!(matches!(
            Config::from_json(r#"{"optimizer": {"itermax": 0}}"#),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            Config::from_json(r#"{"system": {"q": -1}}"#),
            Err(ConfigError::Invalid(_))
        ));
    }
}
