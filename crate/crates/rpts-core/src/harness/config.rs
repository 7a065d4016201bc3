//! Experiment configuration: a TOML file naming the environment, the
//! algorithm, and the run protocol.
//!
//! Scalar keys come first, then the `[env]`, `[rpts]` and `[record]` tables;
//! the field order below keeps serialization valid TOML. Everything except
//! `env`, `algorithm`, `horizon` and `base_seed` has a default.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bandit::{EnvironmentSpec, GenerationMethod};
use crate::error::{Error, Result};
use crate::samplers::RptsConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    TsBeta,
    TsKalman,
    Pts,
    Rpts,
    CtxPts,
    CtxRpts,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::TsBeta => "ts_beta",
            Algorithm::TsKalman => "ts_kalman",
            Algorithm::Pts => "pts",
            Algorithm::Rpts => "rpts",
            Algorithm::CtxPts => "ctx_pts",
            Algorithm::CtxRpts => "ctx_rpts",
        }
    }

    /// Maintains a single particle system over the whole parameter space.
    pub fn is_particle(self) -> bool {
        matches!(self, Algorithm::Pts | Algorithm::Rpts)
    }

    /// Runs on the contextual netslice environment with per-block particles.
    pub fn is_contextual(self) -> bool {
        matches!(self, Algorithm::CtxPts | Algorithm::CtxRpts)
    }

    /// Maintains an exact conjugate posterior instead of particles.
    pub fn is_exact(self) -> bool {
        matches!(self, Algorithm::TsBeta | Algorithm::TsKalman)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which per-run artifacts get recorded and written.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecordFlags {
    /// Normalized log weights, downsampled every `record_stride` steps.
    pub log_weights: bool,
    /// Running frequency of arm-0 plays, same sampling times.
    pub arm_frequency: bool,
    /// Initial and final particles, final weights, and running-average
    /// weights (per-block final snapshot for contextual algorithms).
    pub particle_snapshots: bool,
    pub record_stride: u64,
}

impl Default for RecordFlags {
    fn default() -> Self {
        RecordFlags {
            log_weights: false,
            arm_frequency: false,
            particle_snapshots: false,
            record_stride: 10,
        }
    }
}

impl RecordFlags {
    pub fn any(self) -> bool {
        self.log_weights || self.arm_frequency || self.particle_snapshots
    }
}

fn default_particles() -> usize {
    100
}

fn default_runs() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    /// Particle count N; per block for contextual algorithms, ignored by the
    /// exact samplers.
    #[serde(default = "default_particles")]
    pub particles: usize,
    pub horizon: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub generation: GenerationMethod,
    /// Written as a run directory when set: aggregate regret CSV, per-run
    /// summary, and whatever `record` asks for.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Fixed initial particles (CSV, one particle per row) instead of random
    /// generation; every run starts from the same set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles_file: Option<PathBuf>,
    pub env: EnvironmentSpec,
    #[serde(default)]
    pub rpts: RptsConfig,
    #[serde(default)]
    pub record: RecordFlags,
}

impl ExperimentConfig {
    /// Minimal valid configuration; callers override fields as needed.
    pub fn new(env: EnvironmentSpec, algorithm: Algorithm, horizon: u64) -> Self {
        ExperimentConfig {
            algorithm,
            particles: default_particles(),
            horizon,
            runs: default_runs(),
            base_seed: 0,
            generation: GenerationMethod::default(),
            output_dir: None,
            particles_file: None,
            env,
            rpts: RptsConfig::default(),
            record: RecordFlags::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if self.runs == 0 {
            return Err(Error::InvalidConfig("runs must be at least 1".into()));
        }
        if self.record.record_stride == 0 {
            return Err(Error::InvalidConfig(
                "record_stride must be at least 1".into(),
            ));
        }

        let env_kind = self.env.name();
        match (self.algorithm, &self.env) {
            (Algorithm::TsBeta, EnvironmentSpec::Bernoulli { .. }) => {}
            (Algorithm::TsBeta, _) => {
                return Err(Error::InvalidConfig(format!(
                    "algorithm ts_beta requires a bernoulli environment, got {env_kind}"
                )));
            }
            (Algorithm::TsKalman, EnvironmentSpec::Linear { .. }) => {}
            (Algorithm::TsKalman, _) => {
                return Err(Error::InvalidConfig(format!(
                    "algorithm ts_kalman requires a linear environment, got {env_kind}"
                )));
            }
            (Algorithm::Pts | Algorithm::Rpts, EnvironmentSpec::NetSlice { .. }) => {
                return Err(Error::InvalidConfig(format!(
                    "algorithm {} is context-free; the netslice environment needs ctx_pts or ctx_rpts",
                    self.algorithm
                )));
            }
            (Algorithm::Pts | Algorithm::Rpts, _) => {}
            (Algorithm::CtxPts | Algorithm::CtxRpts, EnvironmentSpec::NetSlice { .. }) => {}
            (Algorithm::CtxPts | Algorithm::CtxRpts, _) => {
                return Err(Error::InvalidConfig(format!(
                    "algorithm {} requires the netslice environment, got {env_kind}",
                    self.algorithm
                )));
            }
        }

        if !self.algorithm.is_exact() {
            if self.particles == 0 {
                return Err(Error::InvalidConfig(
                    "particle algorithms need particles >= 1".into(),
                ));
            }
            if self.generation == GenerationMethod::CoordinateWise {
                let two_arm = matches!(&self.env, EnvironmentSpec::Bernoulli { theta_star } if theta_star.len() == 2);
                let side = (self.particles as f64).sqrt().round() as usize;
                if !two_arm || side * side != self.particles {
                    return Err(Error::InvalidConfig(
                        "coordinate-wise generation needs a two-arm bernoulli environment and a perfect-square particle count".into(),
                    ));
                }
            }
        }
        if matches!(self.algorithm, Algorithm::Rpts | Algorithm::CtxRpts) {
            self.rpts.validate_for(self.particles)?;
        }

        if self.algorithm.is_exact() && self.record.any() {
            return Err(Error::InvalidConfig(format!(
                "algorithm {} keeps an exact posterior, not particles; disable the record flags",
                self.algorithm
            )));
        }
        if self.algorithm.is_contextual() && (self.record.log_weights || self.record.arm_frequency)
        {
            return Err(Error::InvalidConfig(format!(
                "algorithm {} holds one particle system per block; only particle_snapshots recording is supported",
                self.algorithm
            )));
        }
        if self.record.arm_frequency && !matches!(&self.env, EnvironmentSpec::Bernoulli { .. }) {
            return Err(Error::InvalidConfig(format!(
                "arm_frequency recording tracks arm plays and requires a bernoulli environment, got {env_kind}"
            )));
        }
        if self.particles_file.is_some() && self.algorithm.is_contextual() {
            return Err(Error::InvalidConfig(
                "fixed initial particles are not supported for contextual algorithms".into(),
            ));
        }
        if self.particles_file.is_some() && self.algorithm.is_exact() {
            return Err(Error::InvalidConfig(format!(
                "algorithm {} does not use particles; remove particles_file",
                self.algorithm
            )));
        }
        Ok(())
    }
}

/// Reads and validates a TOML experiment configuration.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let cfg: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Serializes a configuration back to TOML (the resolved form written into
/// run directories).
pub fn config_to_toml(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string_pretty(cfg).map_err(|e| Error::Config(format!("serializing config: {e}")))
}
