//! Cascaded ball controller, waypoint scheduling and teleoperation mapping.
//!
//! The outer loop turns position error into a desired velocity, the inner
//! loop turns velocity error into plate tilt. Pitch drives x and roll drives
//! y; a positive pitch accelerates the ball toward +x and a positive roll
//! toward -y.

mod letters;
mod pid;
mod teleop;

pub use letters::{letter_path, resample, LETTER_HEIGHT, MAX_WAYPOINTS, MIN_WAYPOINTS, SUPPORTED_LETTERS};
pub use pid::{pid_step, PidGains, PidState};
pub use teleop::{teleop_map, RateLimiter, TeleopRates};

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::ball::SensorSample;
use crate::error::{Error, Result};
use crate::geometry::{pose_to_joints, JointVector, PlatformGeometry, Pose6};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    /// Position error (m) to desired velocity (m/s).
    pub outer: PidGains,
    /// Velocity error (m/s) to tilt (rad).
    pub inner: PidGains,
    /// Hz
    pub control_rate: f64,
    /// rad
    pub max_tilt: f64,
    /// m
    pub z_setpoint: f64,
    /// s
    pub waypoint_dwell: f64,
    /// Low-pass cutoff of the finite-difference velocity estimate, Hz.
    pub velocity_filter_cutoff: f64,
    /// A sample older than this many control periods counts as stale.
    pub stale_periods: f64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            outer: PidGains {
                kp: 1.2,
                ki: 0.1,
                kd: 0.0,
                integral_limit: 0.02,
                derivative_filter_cutoff: 5.0,
                output_limit: 0.15,
            },
            inner: PidGains {
                kp: 0.35,
                ki: 0.15,
                kd: 0.0,
                integral_limit: 0.05,
                derivative_filter_cutoff: 5.0,
                output_limit: 12.0_f64.to_radians(),
            },
            control_rate: 45.0,
            max_tilt: 12.0_f64.to_radians(),
            z_setpoint: 0.28,
            waypoint_dwell: 8.0,
            velocity_filter_cutoff: 6.0,
            stale_periods: 3.0,
        }
    }
}

impl CascadeConfig {
    /// Gains for the sliding puck. Static friction holds it until the tilt
    /// passes `atan(mu_s)`, so the inner loop integrates fast and may hold
    /// most of the tilt range.
    pub fn puck() -> Self {
        let base = Self::default();
        Self {
            outer: PidGains {
                kp: 2.0,
                ki: 0.0,
                integral_limit: 0.0,
                output_limit: 0.1,
                ..base.outer
            },
            inner: PidGains {
                kp: 3.0,
                ki: 2.0,
                integral_limit: 0.2,
                ..base.inner
            },
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.outer.is_valid() || !self.inner.is_valid() {
            return Err(Error::InvalidConfig("PID gains out of range".into()));
        }
        if !(self.control_rate > 0.0 && self.control_rate <= 100.0) {
            return Err(Error::InvalidConfig("control rate must lie in (0, 100] Hz".into()));
        }
        if !(self.max_tilt > 0.0 && self.max_tilt < 0.5) {
            return Err(Error::InvalidConfig("max tilt must lie in (0, 0.5) rad".into()));
        }
        if self.waypoint_dwell <= 0.0 || self.velocity_filter_cutoff <= 0.0 {
            return Err(Error::InvalidConfig("dwell and filter cutoff must be positive".into()));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        1.0 / self.control_rate
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlFlags {
    /// No fresh sensor sample; the previous command was held.
    pub stale: bool,
    /// Rigid IK clamped at least one joint.
    pub ik_saturated: bool,
    /// The tilt request exceeded `max_tilt`.
    pub tilt_clamped: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CascadeState {
    pub outer: [PidState; 2],
    pub inner: [PidState; 2],
    pub last_sample: Option<SensorSample>,
    /// Filtered velocity estimate, m/s.
    pub velocity: [f64; 2],
    pub desired_velocity: [f64; 2],
    pub roll: f64,
    pub pitch: f64,
    pub last_command: Option<JointVector>,
    pub flags: ControlFlags,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub joints: JointVector,
    pub roll: f64,
    pub pitch: f64,
    pub flags: ControlFlags,
}

/// One control tick at time `t` toward `waypoint`, using the newest
/// delivered sample `sensor` (if any arrived since the previous tick).
pub fn cascade_step(
    config: &CascadeConfig,
    geometry: &PlatformGeometry,
    waypoint: [f64; 2],
    sensor: Option<SensorSample>,
    state: &mut CascadeState,
    t: f64,
) -> ControlOutput {
    let dt = config.period();
    if let Some(s) = sensor {
        match state.last_sample {
            Some(prev) if s.timestamp > prev.timestamp => {
                let h = s.timestamp - prev.timestamp;
                let raw = [(s.x - prev.x) / h, (s.y - prev.y) / h];
                let alpha = h / (h + 1.0 / (TAU * config.velocity_filter_cutoff));
                for i in 0..2 {
                    state.velocity[i] += alpha * (raw[i] - state.velocity[i]);
                }
                state.last_sample = Some(s);
            }
            Some(_) => {}
            None => state.last_sample = Some(s),
        }
    }
    let level = || pose_to_joints(&Pose6::new(0.0, 0.0, config.z_setpoint, 0.0, 0.0, 0.0), geometry);
    let fresh = state
        .last_sample
        .is_some_and(|s| t - s.timestamp <= config.stale_periods * dt + 1e-9);
    if !fresh {
        let joints = state.last_command.unwrap_or_else(level);
        state.flags = ControlFlags {
            stale: true,
            ..state.flags
        };
        return ControlOutput {
            joints,
            roll: state.roll,
            pitch: state.pitch,
            flags: state.flags,
        };
    }
    let s = state.last_sample.expect("fresh implies a sample");
    let pos = [s.x, s.y];
    let mut u = [0.0; 2];
    for i in 0..2 {
        let (v, o) = pid_step(&config.outer, waypoint[i], pos[i], &state.outer[i], dt);
        state.outer[i] = o;
        state.desired_velocity[i] = v;
        let (a, n) = pid_step(&config.inner, v, state.velocity[i], &state.inner[i], dt);
        state.inner[i] = n;
        u[i] = a;
    }
    let pitch_req = u[0];
    let roll_req = -u[1];
    let pitch = pitch_req.clamp(-config.max_tilt, config.max_tilt);
    let roll = roll_req.clamp(-config.max_tilt, config.max_tilt);
    let pose = Pose6::new(0.0, 0.0, config.z_setpoint, roll, pitch, 0.0);
    let joints = pose_to_joints(&pose, geometry);
    state.flags = ControlFlags {
        stale: false,
        ik_saturated: joints.any_saturated(),
        tilt_clamped: pitch != pitch_req
            || roll != roll_req
            || state.inner.iter().any(|s| s.saturated),
    };
    state.roll = roll;
    state.pitch = pitch;
    state.last_command = Some(joints);
    ControlOutput {
        joints,
        roll,
        pitch,
        flags: state.flags,
    }
}

/// Waypoint active at time `t`: `path[floor(t / dwell)]`, holding the last.
pub fn waypoint_sequencer(path: &[[f64; 2]], t: f64, dwell: f64) -> Result<[f64; 2]> {
    if path.is_empty() {
        return Err(Error::EmptyPath);
    }
    let idx = if t <= 0.0 { 0 } else { (t / dwell).floor() as usize };
    Ok(path[idx.min(path.len() - 1)])
}
