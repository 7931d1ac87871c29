//! Experiment configuration file.
//!
//! A TOML document whose tables mirror [`ExperimentConfig`]. Any key left
//! out keeps its default, so an empty file is the default configuration.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ball::{BallConfig, BallMode, BallSensorConfig};
use crate::control::{CascadeConfig, TeleopRates};
use crate::error::{Error, Result};
use crate::experiments::{default_impulses, DisturbTiming, Impulse};
use crate::geometry::WorkspaceLimits;
use crate::learnkin::{TrainParams, DEFAULT_RANDOM_POSES};
use crate::plant::PlantConfig;
use crate::rig::RigConfig;
use crate::sysid::{ScanOptions, SweepSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSettings {
    pub letters: String,
    pub trials: usize,
    pub object: BallConfig,
    pub cascade: CascadeConfig,
}

impl Default for TraceSettings {
    fn default() -> Self {
        Self {
            letters: "HELLOWORLD".into(),
            trials: 5,
            object: BallConfig::puck(),
            cascade: CascadeConfig::puck(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbSettings {
    pub impulses: Vec<Impulse>,
    pub timing: DisturbTiming,
    pub object: BallConfig,
    pub cascade: CascadeConfig,
}

impl Default for DisturbSettings {
    fn default() -> Self {
        Self {
            impulses: default_impulses(),
            timing: DisturbTiming::default(),
            object: BallConfig::default(),
            cascade: CascadeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnSettings {
    pub random_poses: usize,
    /// Held-out poses for evaluation.
    pub eval_poses: usize,
    pub train: TrainParams,
}

impl Default for LearnSettings {
    fn default() -> Self {
        Self {
            random_poses: DEFAULT_RANDOM_POSES,
            eval_poses: 100,
            train: TrainParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServeSettings {
    /// Hz
    pub telemetry_rate: f64,
    /// Hz
    pub command_rate: f64,
    /// Commander lease lifetime without traffic, s.
    pub lease_timeout: f64,
    /// Telemetry frames buffered per viewer before frames are dropped.
    pub viewer_buffer: usize,
    /// Simulated seconds per wall-clock second.
    pub time_scale: f64,
    pub teleop_rates: TeleopRates,
    /// Integral gain of the teleop pose trim, 1/s. Zero runs rigid IK open loop.
    pub trim_gain: f64,
    /// Trim bound per axis: metres for x, y, z and degrees for angles.
    pub trim_limit: [f64; 2],
    pub object: BallConfig,
    pub cascade: CascadeConfig,
}

impl Default for ServeSettings {
    fn default() -> Self {
        Self {
            telemetry_rate: 30.0,
            command_rate: 100.0,
            lease_timeout: 5.0,
            viewer_buffer: 8,
            time_scale: 1.0,
            teleop_rates: TeleopRates::default(),
            trim_gain: 5.0,
            trim_limit: [0.03, 10.0],
            object: BallConfig::default(),
            cascade: CascadeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub plant: PlantConfig,
    pub limits: WorkspaceLimits,
    pub sensor: BallSensorConfig,
    pub trace: TraceSettings,
    pub disturb: DisturbSettings,
    pub sweep: SweepSpec,
    pub scan: ScanOptions,
    pub learn: LearnSettings,
    pub serve: ServeSettings,
}

impl ExperimentConfig {
    /// Parse a (possibly partial) TOML document over the defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut merged = toml::Table::try_from(Self::default()).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        merge(&mut merged, user, "")?;
        let config: Self = merged.try_into().map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.sweep.validate()?;
        self.trace.cascade.validate()?;
        self.disturb.cascade.validate()?;
        self.serve.cascade.validate()?;
        self.learn.train.validate()?;
        if self.trace.object.mode != BallMode::FrictionPuck {
            return Err(Error::InvalidConfig("trace.object must be a friction puck".into()));
        }
        if self.disturb.object.mode != BallMode::RollingBall {
            return Err(Error::InvalidConfig("disturb.object must be a rolling ball".into()));
        }
        if self.trace.trials == 0 {
            return Err(Error::InvalidConfig("trace.trials must be at least 1".into()));
        }
        let s = &self.serve;
        if !(s.telemetry_rate > 0.0 && s.command_rate > 0.0 && s.lease_timeout > 0.0 && s.viewer_buffer > 0 && s.time_scale > 0.0) {
            return Err(Error::InvalidConfig("serve rates, lease timeout, buffer and time scale must be positive".into()));
        }
        if !(s.trim_gain >= 0.0 && s.trim_limit.iter().all(|l| *l >= 0.0)) {
            return Err(Error::InvalidConfig("serve trim gain and limits must be non-negative".into()));
        }
        Ok(())
    }

    pub fn trace_rig(&self) -> RigConfig {
        self.rig(&self.trace.object, &self.trace.cascade)
    }

    pub fn disturb_rig(&self) -> RigConfig {
        self.rig(&self.disturb.object, &self.disturb.cascade)
    }

    pub fn serve_rig(&self) -> RigConfig {
        self.rig(&self.serve.object, &self.serve.cascade)
    }

    fn rig(&self, object: &BallConfig, cascade: &CascadeConfig) -> RigConfig {
        RigConfig {
            plant: self.plant.clone(),
            ball: object.clone(),
            sensor: self.sensor,
            cascade: cascade.clone(),
        }
    }
}

fn merge(base: &mut toml::Table, user: toml::Table, path: &str) -> Result<()> {
    for (key, value) in user {
        let full = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        match (base.get_mut(&key), value) {
            (None, _) => return Err(Error::InvalidConfig(format!("unknown key `{full}`"))),
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u, &full)?,
            (Some(slot), v) => *slot = v,
        }
    }
    Ok(())
}
