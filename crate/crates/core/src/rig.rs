//! Closed loop of plant, object, camera and cascade controller on the
//! simulated clock.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ball::{ball_step, BallConfig, BallSensor, BallSensorConfig, BallState, SensorSample};
use crate::control::{cascade_step, CascadeConfig, CascadeState, ControlFlags};
use crate::error::Result;
use crate::geometry::{pose_to_joints, JointVector, Pose6};
use crate::plant::{Plant, PlantConfig, PlantState};

/// Everything the closed loop needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigConfig {
    pub plant: PlantConfig,
    pub ball: BallConfig,
    pub sensor: BallSensorConfig,
    pub cascade: CascadeConfig,
}

/// One control tick of the closed loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    /// Newest delivered camera sample.
    pub measured: Option<SensorSample>,
    pub waypoint: [f64; 2],
    /// Commanded tilt, rad.
    pub roll_cmd: f64,
    pub pitch_cmd: f64,
    /// Actual plate tilt, rad.
    pub roll: f64,
    pub pitch: f64,
    pub at_fence: bool,
    pub flags: ControlFlags,
}

pub const RIG_HEADER: [&str; 17] = [
    "t", "x", "y", "vx", "vy", "measured_x", "measured_y", "waypoint_x", "waypoint_y", "roll_cmd_deg",
    "pitch_cmd_deg", "roll_deg", "pitch_deg", "at_fence", "stale", "ik_saturated", "tilt_clamped",
];

impl RigSample {
    /// CSV fields matching [`RIG_HEADER`]; missing measurements are empty.
    pub fn csv_row(&self) -> Vec<String> {
        let f = |v: f64| format!("{v:.9}");
        let b = |v: bool| u8::from(v).to_string();
        let (mx, my) = match self.measured {
            Some(s) => (f(s.x), f(s.y)),
            None => (String::new(), String::new()),
        };
        vec![
            format!("{:.6}", self.t),
            f(self.x),
            f(self.y),
            f(self.vx),
            f(self.vy),
            mx,
            my,
            f(self.waypoint[0]),
            f(self.waypoint[1]),
            f(self.roll_cmd.to_degrees()),
            f(self.pitch_cmd.to_degrees()),
            f(self.roll.to_degrees()),
            f(self.pitch.to_degrees()),
            b(self.at_fence),
            b(self.flags.stale),
            b(self.flags.ik_saturated),
            b(self.flags.tilt_clamped),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct Rig {
    plant: Plant,
    config: RigConfig,
    pub plant_state: PlantState,
    pub ball: BallState,
    sensor: BallSensor,
    pub control: CascadeState,
    rng: ChaCha8Rng,
    command: JointVector,
    control_ticks: u64,
    last_sample: Option<SensorSample>,
    last_output: (f64, f64, ControlFlags),
}

impl Rig {
    /// Plant settled level at the controller's height with the object at
    /// rest at `start`.
    pub fn new(config: RigConfig, start: [f64; 2], seed: u64) -> Result<Self> {
        config.cascade.validate()?;
        let plant = Plant::new(config.plant.clone())?;
        let level = pose_to_joints(
            &Pose6::new(0.0, 0.0, config.cascade.z_setpoint, 0.0, 0.0, 0.0),
            &config.plant.geometry,
        );
        let mut plant_state = plant.initial_state(config.ball.mass);
        plant.settle(&mut plant_state, &level, 3.0, true);
        let t0 = plant_state.time();
        let mut rig = Self {
            ball: BallState::at_rest(start[0], start[1], &config.ball),
            sensor: BallSensor::new(config.sensor),
            control: CascadeState::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            command: level,
            control_ticks: 0,
            last_sample: None,
            last_output: (0.0, 0.0, ControlFlags::default()),
            plant,
            config,
            plant_state,
        };
        rig.control_ticks = (t0 * rig.config.cascade.control_rate).ceil() as u64;
        Ok(rig)
    }

    pub fn config(&self) -> &RigConfig {
        &self.config
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn time(&self) -> f64 {
        self.plant_state.time()
    }

    /// Joint command currently applied.
    pub fn command(&self) -> &JointVector {
        &self.command
    }

    /// Newest delivered camera sample.
    pub fn measured(&self) -> Option<SensorSample> {
        self.last_sample
    }

    /// Flags of the most recent control tick.
    pub fn flags(&self) -> ControlFlags {
        self.last_output.2
    }

    /// Forget controller history, e.g. after open-loop driving.
    pub fn reset_control(&mut self) {
        self.control = CascadeState::default();
        self.last_output = (0.0, 0.0, ControlFlags::default());
        self.control_ticks = (self.time() * self.config.cascade.control_rate).ceil() as u64;
    }

    /// Advance one simulation step with the plate driven directly by
    /// `command`; the controller is bypassed.
    pub fn step_open_loop(&mut self, command: JointVector) {
        let t = self.time();
        if let Some(s) = self.sensor.update(&self.ball, &mut self.rng, t) {
            self.last_sample = Some(s);
        }
        self.command = command;
        self.advance();
    }

    fn advance(&mut self) {
        self.plant.step(&mut self.plant_state, &self.command);
        let dt = self.plant.dt();
        self.ball = ball_step(&self.ball, &self.plant_state.pose, dt, &self.config.ball);
    }

    /// Instantaneous velocity change of the object.
    pub fn kick(&mut self, dv: [f64; 2]) {
        self.ball.vx += dv[0];
        self.ball.vy += dv[1];
    }

    /// Advance one simulation step. Returns a sample when a control tick
    /// fired during the step.
    pub fn step(&mut self, waypoint: [f64; 2]) -> Option<RigSample> {
        let t = self.time();
        if let Some(s) = self.sensor.update(&self.ball, &mut self.rng, t) {
            self.last_sample = Some(s);
        }
        let period = self.config.cascade.period();
        let mut fired = false;
        if self.control_ticks as f64 * period <= t + 1e-9 {
            let fresh = self.last_sample.filter(|s| self.control.last_sample.is_none_or(|p| s.timestamp > p.timestamp));
            let out = cascade_step(
                &self.config.cascade,
                &self.config.plant.geometry,
                waypoint,
                fresh,
                &mut self.control,
                t,
            );
            self.command = out.joints;
            self.last_output = (out.roll, out.pitch, out.flags);
            self.control_ticks += 1;
            fired = true;
        }
        self.advance();
        fired.then(|| RigSample {
            t,
            x: self.ball.x,
            y: self.ball.y,
            vx: self.ball.vx,
            vy: self.ball.vy,
            measured: self.last_sample,
            waypoint,
            roll_cmd: self.last_output.0,
            pitch_cmd: self.last_output.1,
            roll: self.plant_state.pose.roll,
            pitch: self.plant_state.pose.pitch,
            at_fence: self.ball.at_fence,
            flags: self.last_output.2,
        })
    }
}
