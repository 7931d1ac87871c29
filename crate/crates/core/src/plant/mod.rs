//! Simulated soft platform.
//!
//! Each servo follows a second-order response with transport delay. Servo
//! angles map to HSA extension through a mildly nonlinear curve, the plate
//! settles at the equilibrium of six compliant struts, a payload sags it,
//! and band-pass modes ring on top of the rotational axes.

mod compliance;
mod config;
mod modal;

pub use compliance::{ComplianceModel, Equilibrium};
pub use config::{ModalPeak, PlantConfig, PoseSensorConfig, StrutCompliance};
pub use modal::{ModalBank, ModeState};

use std::collections::VecDeque;
use std::f64::consts::TAU;

use nalgebra::Complex;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{strut_vectors, JointVector, Pose6, NEUTRAL_HEIGHT, STRUT_COUNT};

pub const GRAVITY: f64 = 9.81;

/// Rotational axis of the plate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Roll,
    Pitch,
    Yaw,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Roll, Axis::Pitch, Axis::Yaw];

    pub fn index(self) -> usize {
        match self {
            Axis::Roll => 0,
            Axis::Pitch => 1,
            Axis::Yaw => 2,
        }
    }

    /// Index into [`Pose6::to_array`].
    pub fn pose_index(self) -> usize {
        3 + self.index()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LoadFeasibility {
    Full,
    Partial,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucklingReport {
    pub feasibility: LoadFeasibility,
    /// Fraction of joint-space volume still reachable.
    pub usable_volume: f64,
    /// Per-joint upper limit in degrees implied by `usable_volume`.
    pub joint_upper_limit: f64,
}

/// Load feasibility for `payload_mass` kg.
///
/// Between the working and maximum loads the usable joint-space volume
/// falls linearly to `partial_volume_fraction`; each joint keeps the
/// sixth root of that fraction of its range.
pub fn check_load(payload_mass: f64, config: &PlantConfig) -> BucklingReport {
    let [lo, hi] = config.geometry.joint_limits;
    if payload_mass <= config.working_load {
        BucklingReport {
            feasibility: LoadFeasibility::Full,
            usable_volume: 1.0,
            joint_upper_limit: hi,
        }
    } else if payload_mass <= config.max_load {
        let frac = (payload_mass - config.working_load) / (config.max_load - config.working_load);
        let usable_volume = 1.0 - (1.0 - config.partial_volume_fraction) * frac;
        BucklingReport {
            feasibility: LoadFeasibility::Partial,
            usable_volume,
            joint_upper_limit: lo + (hi - lo) * usable_volume.powf(1.0 / STRUT_COUNT as f64),
        }
    } else {
        BucklingReport {
            feasibility: LoadFeasibility::Infeasible,
            usable_volume: 0.0,
            joint_upper_limit: lo,
        }
    }
}

pub fn check_buckling(state: &PlantState, config: &PlantConfig) -> BucklingReport {
    check_load(state.payload_mass, config)
}

/// Mean angle between the struts and the vertical at `pose`.
pub fn mean_strut_tilt(pose: &Pose6, config: &PlantConfig) -> f64 {
    let v = strut_vectors(pose, &config.geometry);
    v.iter().map(|s| (s.z / s.norm()).clamp(-1.0, 1.0).acos()).sum::<f64>() / STRUT_COUNT as f64
}

/// Static sag of the plate under `payload_mass`:
/// `z -= m g / (6 k cos(tilt))`.
pub fn apply_load_sag(pose: &Pose6, payload_mass: f64, config: &PlantConfig) -> Pose6 {
    if payload_mass == 0.0 {
        return *pose;
    }
    let tilt = mean_strut_tilt(pose, config);
    let sag = payload_mass * GRAVITY / (STRUT_COUNT as f64 * config.strut_stiffness * tilt.cos());
    Pose6 {
        z: pose.z - sag,
        ..*pose
    }
}

#[derive(Debug, Clone)]
pub struct PlantState {
    step_count: u64,
    pub commanded: JointVector,
    /// Servo angles, degrees.
    pub actual: [f64; STRUT_COUNT],
    /// Servo angular rates, degrees/s.
    pub servo_rate: [f64; STRUT_COUNT],
    /// HSA extension rates, m/s.
    pub extension_rate: [f64; STRUT_COUNT],
    /// Equilibrium pose of the unloaded struts for the current servo angles.
    pub quasi_static: Pose6,
    /// True plate pose: quasi-static pose, sag and modal motion.
    pub pose: Pose6,
    /// Modal states per rotational axis, indexed by [`Axis::index`].
    pub modal: [Vec<ModeState>; 3],
    pub payload_mass: f64,
    /// Set for struts held back by the load limit.
    pub buckled: [bool; STRUT_COUNT],
    rest: [f64; STRUT_COUNT],
    tilt: f64,
    /// Equilibrium change over the last solve, for warm starts.
    drift: [f64; 6],
    pending: VecDeque<[f64; STRUT_COUNT]>,
    history: VecDeque<(f64, Pose6)>,
    dt: f64,
}

impl PlantState {
    pub fn time(&self) -> f64 {
        self.step_count as f64 * self.dt
    }

    pub fn steps(&self) -> u64 {
        self.step_count
    }

    pub fn any_buckled(&self) -> bool {
        self.buckled.iter().any(|&b| b)
    }

    /// True pose at simulated time `t`, taken from the recorded history
    /// (the most recent step not after `t`).
    pub fn pose_at(&self, t: f64) -> Pose6 {
        let eps = 0.5 * self.dt;
        let idx = self.history.partition_point(|(ti, _)| *ti <= t + eps);
        if idx == 0 {
            self.history.front().map(|h| h.1).unwrap_or(self.pose)
        } else {
            self.history[idx - 1].1
        }
    }
}

/// Column names matching [`trace_row`].
pub const TRACE_HEADER: [&str; 19] = [
    "t", "cmd1", "cmd2", "cmd3", "cmd4", "cmd5", "cmd6", "act1", "act2", "act3", "act4", "act5",
    "act6", "x", "y", "z", "roll_deg", "pitch_deg", "yaw_deg",
];

/// Time, commanded joints, actual joints and pose (degrees) for CSV export.
pub fn trace_row(state: &PlantState) -> [f64; 19] {
    let mut row = [0.0; 19];
    row[0] = state.time();
    row[1..7].copy_from_slice(&state.commanded.angles);
    row[7..13].copy_from_slice(&state.actual);
    row[13..19].copy_from_slice(&state.pose.to_external());
    row
}

/// Outcome of [`Plant::settle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SettleOutcome {
    /// Simulated seconds spent.
    pub elapsed: f64,
    pub short_circuited: bool,
}

#[derive(Debug, Clone)]
pub struct Plant {
    config: PlantConfig,
    compliance: ComplianceModel,
    modes: [ModalBank; 3],
    deadtime_steps: usize,
}

impl Plant {
    pub fn new(config: PlantConfig) -> Result<Self> {
        config.validate()?;
        let dt = config.dt();
        let compliance = ComplianceModel::new(&config.geometry, config.compliance);
        let modes = [
            ModalBank::new(&config.modal_peaks, 1.0, dt),
            ModalBank::new(&config.modal_peaks, config.pitch_frequency_scale, dt),
            ModalBank::new(&config.modal_peaks, 1.0, dt),
        ];
        let deadtime_steps = (config.servo_deadtime / dt).round() as usize;
        Ok(Self {
            config,
            compliance,
            modes,
            deadtime_steps,
        })
    }

    pub fn config(&self) -> &PlantConfig {
        &self.config
    }

    pub fn dt(&self) -> f64 {
        self.config.dt()
    }

    pub fn compliance(&self) -> &ComplianceModel {
        &self.compliance
    }

    /// HSA extension at servo angle `deg`.
    pub fn extension(&self, deg: f64) -> f64 {
        let [lo, hi] = self.config.geometry.joint_limits;
        let u = (deg - lo) / (hi - lo);
        let k = self.config.extension_nonlinearity;
        self.config.hsa_stroke * (u + k * u * (1.0 - u))
    }

    /// d(extension)/d(angle), metres per degree.
    pub fn extension_slope(&self, deg: f64) -> f64 {
        let [lo, hi] = self.config.geometry.joint_limits;
        let u = (deg - lo) / (hi - lo);
        let k = self.config.extension_nonlinearity;
        self.config.hsa_stroke * (1.0 + k * (1.0 - 2.0 * u)) / (hi - lo)
    }

    pub fn rest_lengths(&self, joints: &[f64; STRUT_COUNT]) -> [f64; STRUT_COUNT] {
        joints.map(|a| self.config.geometry.neutral_strut_length + self.extension(a))
    }

    fn effective_upper_limit(&self, payload_mass: f64) -> f64 {
        check_load(payload_mass, &self.config).joint_upper_limit
    }

    /// Plant at rest with every servo at zero and `payload_mass` on the plate.
    pub fn initial_state(&self, payload_mass: f64) -> PlantState {
        let zeros = [self.config.geometry.joint_limits[0]; STRUT_COUNT];
        let rest = self.rest_lengths(&zeros);
        let guess = Pose6::new(0.0, 0.0, NEUTRAL_HEIGHT, 0.0, 0.0, 0.0);
        let qs = self.compliance.equilibrium(&rest, &guess).pose;
        let pose = apply_load_sag(&qs, payload_mass, &self.config);
        let modal = std::array::from_fn(|i| {
            self.modes[i].initial_state(qs.to_array()[3 + i])
        });
        let dt = self.dt();
        let mut history = VecDeque::new();
        history.push_back((0.0, pose));
        PlantState {
            step_count: 0,
            commanded: JointVector::new(zeros),
            actual: zeros,
            servo_rate: [0.0; STRUT_COUNT],
            extension_rate: [0.0; STRUT_COUNT],
            quasi_static: qs,
            pose,
            modal,
            payload_mass,
            buckled: [false; STRUT_COUNT],
            rest,
            tilt: mean_strut_tilt(&qs, &self.config),
            drift: [0.0; 6],
            pending: VecDeque::with_capacity(self.deadtime_steps + 1),
            history,
            dt,
        }
    }

    /// Advance one `1 / sim_rate` step toward `command`.
    pub fn step(&self, state: &mut PlantState, command: &JointVector) {
        let cfg = &self.config;
        let dt = self.dt();
        let [lo, hi] = cfg.geometry.joint_limits;
        let report = check_load(state.payload_mass, cfg);
        let upper = report.joint_upper_limit;
        let infeasible = report.feasibility == LoadFeasibility::Infeasible;

        let mut cmd = JointVector::clamped(command.angles, [lo, hi]);
        for n in 0..STRUT_COUNT {
            state.buckled[n] = infeasible;
            if cmd.angles[n] > upper {
                cmd.angles[n] = upper;
                state.buckled[n] = true;
            }
        }
        state.commanded = cmd;
        state.pending.push_back(cmd.angles);
        let target = if state.pending.len() > self.deadtime_steps {
            state.pending.pop_front().unwrap_or(cmd.angles)
        } else {
            *state.pending.front().unwrap_or(&cmd.angles)
        };

        let w = TAU * cfg.servo_natural_freq;
        let z = cfg.servo_damping;
        let mut rate = [0.0; STRUT_COUNT];
        let mut ext_rate = [0.0; STRUT_COUNT];
        let mut slope = [0.0; STRUT_COUNT];
        for n in 0..STRUT_COUNT {
            let th = state.actual[n];
            let acc = w * w * (target[n] - th) - 2.0 * z * w * state.servo_rate[n];
            rate[n] = state.servo_rate[n] + acc * dt;
            slope[n] = self.extension_slope(th);
            ext_rate[n] = (slope[n] * rate[n]).clamp(-cfg.max_strut_rate, cfg.max_strut_rate);
        }
        // Common-mode cap: the plate cannot heave faster than the loaded
        // speed limit.
        let heave_cap = (cfg.max_platform_speed - cfg.speed_load_slope * state.payload_mass).max(0.0)
            * state.tilt.cos();
        let mean = ext_rate.iter().sum::<f64>() / STRUT_COUNT as f64;
        if mean.abs() > heave_cap {
            let excess = mean - heave_cap.copysign(mean);
            for e in ext_rate.iter_mut() {
                *e -= excess;
            }
        }
        for n in 0..STRUT_COUNT {
            let mut r = ext_rate[n] / slope[n];
            if infeasible && r > 0.0 {
                r = 0.0;
            }
            let mut th = state.actual[n] + r * dt;
            let top = if infeasible { state.actual[n].max(lo) } else { hi };
            if th > top {
                th = top;
                r = 0.0;
            } else if th < lo {
                th = lo;
                r = 0.0;
            }
            state.actual[n] = th;
            state.servo_rate[n] = r;
            state.extension_rate[n] = r * slope[n];
        }

        let rest = self.rest_lengths(&state.actual);
        if rest != state.rest {
            let before = state.quasi_static.to_array();
            let guess = Pose6::from_array(std::array::from_fn(|i| before[i] + state.drift[i]));
            state.quasi_static = self.compliance.equilibrium(&rest, &guess).pose;
            let after = state.quasi_static.to_array();
            state.drift = std::array::from_fn(|i| after[i] - before[i]);
            state.rest = rest;
            state.tilt = mean_strut_tilt(&state.quasi_static, cfg);
        } else {
            state.drift = [0.0; 6];
        }
        let sagged = apply_load_sag(&state.quasi_static, state.payload_mass, cfg);
        let q = state.quasi_static.to_array();
        let mut p = sagged.to_array();
        for axis in Axis::ALL {
            let i = axis.index();
            p[3 + i] = q[3 + i] + self.modes[i].step(&mut state.modal[i], q[3 + i]);
        }
        state.pose = Pose6::from_array(p);
        state.step_count += 1;

        let t = state.time();
        state.history.push_back((t, state.pose));
        let keep = cfg.sensor.latency + 2.0 / cfg.sensor.rate + 2.0 * dt;
        while state.history.len() > 2 && state.history[1].0 < t - keep {
            state.history.pop_front();
        }
    }

    /// IMU reading: the pose captured at the latest sensor tick no later
    /// than `t - latency`, plus Gaussian noise.
    pub fn measured_pose<R: Rng + ?Sized>(&self, state: &PlantState, rng: &mut R) -> Pose6 {
        let s = &self.config.sensor;
        let t = state.time() - s.latency;
        let tick = (t * s.rate + 1e-9).floor() / s.rate;
        let mut p = state.pose_at(tick).to_array();
        if s.noise_translation > 0.0 {
            let n = Normal::new(0.0, s.noise_translation).expect("finite sigma");
            for v in p.iter_mut().take(3) {
                *v += n.sample(rng);
            }
        }
        if s.noise_rotation_deg > 0.0 {
            let n = Normal::new(0.0, s.noise_rotation_deg.to_radians()).expect("finite sigma");
            for v in p.iter_mut().skip(3) {
                *v += n.sample(rng);
            }
        }
        Pose6::from_array(p)
    }

    /// Hold `command` until the pose stops changing or `max_time` elapses.
    ///
    /// Settled means the pose moved less than `1e-5` (metres or degrees) per
    /// step for `0.2 s` with every servo within `0.01` degrees of its
    /// target.
    pub fn settle(
        &self,
        state: &mut PlantState,
        command: &JointVector,
        max_time: f64,
        short_circuit: bool,
    ) -> SettleOutcome {
        let dt = self.dt();
        let max_steps = (max_time / dt).round() as u64;
        let quiet_needed = (0.2 / dt).round() as u64;
        let mut quiet = 0;
        let mut prev = state.pose.to_external();
        for k in 0..max_steps {
            self.step(state, command);
            if !short_circuit {
                continue;
            }
            let now = state.pose.to_external();
            let moved = now
                .iter()
                .zip(prev.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            prev = now;
            let servo_done = state
                .actual
                .iter()
                .zip(state.commanded.angles.iter())
                .all(|(a, c)| (a - c).abs() < 0.01);
            if moved < 1e-5 && servo_done {
                quiet += 1;
                if quiet >= quiet_needed {
                    return SettleOutcome {
                        elapsed: (k + 1) as f64 * dt,
                        short_circuited: true,
                    };
                }
            } else {
                quiet = 0;
            }
        }
        SettleOutcome {
            elapsed: max_steps as f64 * dt,
            short_circuited: false,
        }
    }

    /// The pose the plant settles to under `joints` and `payload_mass`,
    /// computed directly from the strut equilibrium.
    pub fn settle_static(&self, joints: &JointVector, payload_mass: f64) -> Pose6 {
        let [lo, hi] = self.config.geometry.joint_limits;
        let upper = self.effective_upper_limit(payload_mass).min(hi);
        let angles = joints.angles.map(|a| a.clamp(lo, upper.max(lo)));
        let angles = if check_load(payload_mass, &self.config).feasibility
            == LoadFeasibility::Infeasible
        {
            [lo; STRUT_COUNT]
        } else {
            angles
        };
        let rest = self.rest_lengths(&angles);
        let guess = Pose6::new(0.0, 0.0, NEUTRAL_HEIGHT, 0.0, 0.0, 0.0);
        let qs = self.compliance.equilibrium(&rest, &guess).pose;
        apply_load_sag(&qs, payload_mass, &self.config)
    }

    /// Small-signal response of one rotational axis to a sinusoidal servo
    /// command at `f` Hz: deadtime, servo and modes in closed form.
    pub fn analytic_response(&self, axis: Axis, f: f64) -> Complex<f64> {
        let cfg = &self.config;
        let s = Complex::new(0.0, TAU * f);
        let w = TAU * cfg.servo_natural_freq;
        let z = cfg.servo_damping;
        let servo = Complex::from(w * w) / (s * s + s * (2.0 * z * w) + w * w);
        let scale = if axis == Axis::Pitch {
            cfg.pitch_frequency_scale
        } else {
            1.0
        };
        let mut modal = Complex::new(1.0, 0.0);
        for m in &cfg.modal_peaks {
            let wk = TAU * m.frequency * scale;
            let bp = s * (2.0 * m.damping * wk) / (s * s + s * (2.0 * m.damping * wk) + wk * wk);
            modal += bp * m.gain;
        }
        let delay = (-s * (self.deadtime_steps as f64 * self.dt())).exp();
        delay * servo * modal
    }
}
