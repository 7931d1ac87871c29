//! Ball or puck on the tilted plate, with a hexagonal fence and a camera
//! model.
//!
//! The object lives in the plate frame `U`. Gravity seen from the plate is
//! `R^T (0, 0, -g)`, whose in-plane part is `(g sin(pitch), -g sin(roll) cos(pitch))`
//! and is independent of yaw. A rolling solid sphere gets `5/7` of it.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::Pose6;
use crate::plant::GRAVITY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BallMode {
    RollingBall,
    FrictionPuck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallConfig {
    pub mode: BallMode,
    /// m
    pub radius: f64,
    /// kg
    pub mass: f64,
    /// Viscous rolling resistance, 1/s.
    pub rolling_resistance: f64,
    pub static_friction: f64,
    pub kinetic_friction: f64,
    pub restitution: f64,
    /// Apothem of the hexagonal fence, m.
    pub fence_apothem: f64,
}

impl Default for BallConfig {
    fn default() -> Self {
        Self {
            mode: BallMode::RollingBall,
            radius: 0.01905,
            mass: 0.05,
            rolling_resistance: 0.05,
            static_friction: 0.15,
            kinetic_friction: 0.10,
            restitution: 0.3,
            fence_apothem: 0.15,
        }
    }
}

impl BallConfig {
    pub fn puck() -> Self {
        Self {
            mode: BallMode::FrictionPuck,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub mode: BallMode,
    pub radius: f64,
    pub mass: f64,
    /// Set while the object is pressed against the fence.
    pub at_fence: bool,
}

impl BallState {
    pub fn at_rest(x: f64, y: f64, config: &BallConfig) -> Self {
        Self {
            x,
            y,
            vx: 0.0,
            vy: 0.0,
            mode: config.mode,
            radius: config.radius,
            mass: config.mass,
            at_fence: false,
        }
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.mass * (self.vx * self.vx + self.vy * self.vy)
    }
}

/// Outward unit normals of the fence edges. Vertices sit at 0, 60, ...
/// degrees so the edge normals point at 30, 90, ... degrees.
pub fn fence_normals() -> [[f64; 2]; 6] {
    std::array::from_fn(|k| {
        let a = PI / 6.0 + k as f64 * PI / 3.0;
        [a.cos(), a.sin()]
    })
}

/// Whether `(x, y)` lies inside the hexagon of apothem `apothem`.
pub fn inside_fence(x: f64, y: f64, apothem: f64) -> bool {
    fence_normals().iter().all(|n| x * n[0] + y * n[1] <= apothem)
}

/// In-plane gravity acceleration and normal component in frame `U`.
fn gravity_in_plate(pose: &Pose6) -> ([f64; 2], f64) {
    let (sr, cr) = pose.roll.sin_cos();
    let (sp, cp) = pose.pitch.sin_cos();
    ([GRAVITY * sp, -GRAVITY * sr * cp], GRAVITY * cp * cr)
}

/// Advance the object by `dt` on a plate at `pose`.
pub fn ball_step(ball: &BallState, pose: &Pose6, dt: f64, config: &BallConfig) -> BallState {
    let (g, gn) = gravity_in_plate(pose);
    let mut b = *ball;
    match ball.mode {
        BallMode::RollingBall => {
            let k = 5.0 / 7.0;
            let c = config.rolling_resistance;
            b.vx += (k * g[0] - c * b.vx) * dt;
            b.vy += (k * g[1] - c * b.vy) * dt;
        }
        BallMode::FrictionPuck => {
            let speed = b.speed();
            let drive = g[0].hypot(g[1]);
            if speed == 0.0 {
                if drive > config.static_friction * gn {
                    let f = config.kinetic_friction * gn / drive;
                    b.vx += g[0] * (1.0 - f) * dt;
                    b.vy += g[1] * (1.0 - f) * dt;
                }
            } else {
                let fk = config.kinetic_friction * gn;
                let ax = g[0] - fk * b.vx / speed;
                let ay = g[1] - fk * b.vy / speed;
                let nvx = b.vx + ax * dt;
                let nvy = b.vy + ay * dt;
                // Friction cannot reverse the motion within a step.
                if nvx * b.vx + nvy * b.vy <= 0.0 && drive <= config.static_friction * gn {
                    b.vx = 0.0;
                    b.vy = 0.0;
                } else {
                    b.vx = nvx;
                    b.vy = nvy;
                }
            }
        }
    }
    b.x += b.vx * dt;
    b.y += b.vy * dt;

    let limit = config.fence_apothem - ball.radius;
    b.at_fence = false;
    for n in fence_normals() {
        let d = b.x * n[0] + b.y * n[1];
        if d > limit {
            b.x -= (d - limit) * n[0];
            b.y -= (d - limit) * n[1];
            let vn = b.vx * n[0] + b.vy * n[1];
            if vn > 0.0 {
                b.vx -= (1.0 + config.restitution) * vn * n[0];
                b.vy -= (1.0 + config.restitution) * vn * n[1];
            }
            b.at_fence = true;
        }
    }
    b
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSample {
    pub x: f64,
    pub y: f64,
    /// Capture time, s.
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallSensorConfig {
    /// Hz
    pub rate: f64,
    pub window: usize,
    /// Per-detection noise, m.
    pub noise: f64,
    /// s
    pub latency: f64,
}

impl Default for BallSensorConfig {
    fn default() -> Self {
        Self {
            rate: 45.0,
            window: 4,
            noise: 0.001,
            latency: 0.008,
        }
    }
}

/// Camera model: noisy detections averaged over a sliding window and
/// delivered after a fixed latency.
#[derive(Debug, Clone)]
pub struct BallSensor {
    config: BallSensorConfig,
    raw: VecDeque<[f64; 2]>,
    in_flight: VecDeque<SensorSample>,
    next_tick: u64,
}

impl BallSensor {
    pub fn new(config: BallSensorConfig) -> Self {
        Self {
            config,
            raw: VecDeque::with_capacity(config.window),
            in_flight: VecDeque::new(),
            next_tick: 0,
        }
    }

    pub fn config(&self) -> &BallSensorConfig {
        &self.config
    }

    /// Capture one detection at time `t` and return the published average.
    pub fn sense_ball<R: Rng + ?Sized>(&mut self, ball: &BallState, rng: &mut R, t: f64) -> SensorSample {
        let mut p = [ball.x, ball.y];
        if self.config.noise > 0.0 {
            let n = Normal::new(0.0, self.config.noise).expect("finite sigma");
            p[0] += n.sample(rng);
            p[1] += n.sample(rng);
        }
        if self.raw.len() == self.config.window.max(1) {
            self.raw.pop_front();
        }
        self.raw.push_back(p);
        let k = self.raw.len() as f64;
        let (sx, sy) = self.raw.iter().fold((0.0, 0.0), |a, v| (a.0 + v[0], a.1 + v[1]));
        SensorSample {
            x: sx / k,
            y: sy / k,
            timestamp: t,
        }
    }

    /// Run the sensing clock up to `t`: capture on every tick reached and
    /// return the newest sample whose latency has elapsed, if any.
    pub fn update<R: Rng + ?Sized>(&mut self, ball: &BallState, rng: &mut R, t: f64) -> Option<SensorSample> {
        let period = 1.0 / self.config.rate;
        while self.next_tick as f64 * period <= t + 1e-9 {
            let tick = self.next_tick as f64 * period;
            let s = self.sense_ball(ball, rng, tick);
            self.in_flight.push_back(s);
            self.next_tick += 1;
        }
        let mut out = None;
        while let Some(front) = self.in_flight.front() {
            if front.timestamp + self.config.latency <= t + 1e-9 {
                out = self.in_flight.pop_front();
            } else {
                break;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const DT: f64 = 1e-3;

    #[test]
    fn level_plate_at_rest_stays_put() {
        let c = BallConfig::default();
        let b = BallState::at_rest(0.02, -0.01, &c);
        let n = ball_step(&b, &Pose6::new(0.0, 0.0, 0.27, 0.0, 0.0, 0.0), DT, &c);
        assert_eq!(n, b);
    }

    #[test]
    fn constant_pitch_matches_uniform_acceleration() {
        let c = BallConfig {
            rolling_resistance: 0.0,
            ..Default::default()
        };
        let pitch = 5.0_f64.to_radians();
        let pose = Pose6::new(0.0, 0.0, 0.27, 0.0, pitch, 0.0);
        let mut b = BallState::at_rest(-0.1, 0.0, &c);
        let a = 5.0 / 7.0 * GRAVITY * pitch.sin();
        let steps = 300;
        for _ in 0..steps {
            b = ball_step(&b, &pose, DT, &c);
        }
        let t = steps as f64 * DT;
        // Semi-implicit Euler overshoots the exact parabola by a t dt / 2.
        assert_abs_diff_eq!(b.x + 0.1, 0.5 * a * t * t, epsilon = a * t * DT);
        assert_abs_diff_eq!(b.vx, a * t, epsilon = 1e-12);
        assert_eq!(b.y, 0.0);
    }

    #[test]
    fn positive_roll_pushes_toward_negative_y() {
        let c = BallConfig::default();
        let pose = Pose6::new(0.0, 0.0, 0.27, 0.1, 0.0, 0.0);
        let b = ball_step(&BallState::at_rest(0.0, 0.0, &c), &pose, DT, &c);
        assert!(b.vy < 0.0);
    }

    #[test]
    fn puck_holds_below_friction_angle() {
        let c = BallConfig::puck();
        let tilt = c.static_friction.atan() * 0.95;
        let pose = Pose6::new(0.0, 0.0, 0.27, tilt * 0.6, tilt * 0.8, 0.3);
        let mut b = BallState::at_rest(0.01, 0.02, &c);
        for _ in 0..2000 {
            b = ball_step(&b, &pose, DT, &c);
        }
        assert_eq!((b.x, b.y, b.vx, b.vy), (0.01, 0.02, 0.0, 0.0));
    }

    #[test]
    fn puck_slides_above_friction_angle_and_stops_when_level() {
        let c = BallConfig::puck();
        let pose = Pose6::new(0.0, 0.0, 0.27, 0.0, 0.2, 0.0);
        let mut b = BallState::at_rest(-0.05, 0.0, &c);
        for _ in 0..100 {
            b = ball_step(&b, &pose, DT, &c);
        }
        assert!(b.vx > 0.0);
        let level = Pose6::new(0.0, 0.0, 0.27, 0.0, 0.0, 0.0);
        for _ in 0..2000 {
            b = ball_step(&b, &level, DT, &c);
        }
        assert_eq!(b.speed(), 0.0);
    }

    #[test]
    fn yaw_does_not_accelerate() {
        let c = BallConfig::default();
        let b = BallState::at_rest(0.0, 0.0, &c);
        for yaw in [-2.0, -0.5, 0.7, 3.0] {
            let n = ball_step(&b, &Pose6::new(0.0, 0.0, 0.27, 0.0, 0.0, yaw), DT, &c);
            assert_eq!(n.speed(), 0.0);
        }
        let tilted = Pose6::new(0.0, 0.0, 0.27, 0.05, -0.07, 0.0);
        let a = ball_step(&b, &tilted, DT, &c);
        let r = ball_step(&b, &Pose6 { yaw: 1.2, ..tilted }, DT, &c);
        assert_eq!(a, r);
    }

    #[test]
    fn energy_non_increasing_on_level_plate() {
        for c in [BallConfig::default(), BallConfig::puck()] {
            let mut b = BallState {
                vx: 0.4,
                vy: -0.25,
                ..BallState::at_rest(0.0, 0.0, &c)
            };
            let level = Pose6::new(0.0, 0.0, 0.27, 0.0, 0.0, 0.0);
            let mut e = b.kinetic_energy();
            for _ in 0..5000 {
                b = ball_step(&b, &level, DT, &c);
                assert!(b.kinetic_energy() <= e + 1e-15);
                e = b.kinetic_energy();
            }
        }
    }

    #[test]
    fn fence_contains_and_reflects() {
        let c = BallConfig::default();
        let mut b = BallState {
            vx: 2.0,
            vy: 0.3,
            ..BallState::at_rest(0.0, 0.0, &c)
        };
        let level = Pose6::new(0.0, 0.0, 0.27, 0.0, 0.0, 0.0);
        let mut bounced = false;
        for _ in 0..3000 {
            b = ball_step(&b, &level, DT, &c);
            assert!(inside_fence(b.x, b.y, c.fence_apothem - c.radius + 1e-12));
            bounced |= b.at_fence;
        }
        assert!(bounced);
    }

    #[test]
    fn stationary_noiseless_sensor_is_exact() {
        let mut s = BallSensor::new(BallSensorConfig {
            noise: 0.0,
            ..Default::default()
        });
        let c = BallConfig::default();
        let b = BallState::at_rest(0.03, -0.04, &c);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for k in 0..10 {
            let m = s.sense_ball(&b, &mut rng, k as f64 / 45.0);
            assert_eq!((m.x, m.y), (0.03, -0.04));
        }
    }

    #[test]
    fn moving_average_lags_one_and_a_half_periods() {
        let mut s = BallSensor::new(BallSensorConfig {
            noise: 0.0,
            ..Default::default()
        });
        let c = BallConfig::default();
        let v = 0.09;
        let period = 1.0 / 45.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut last = None;
        for k in 0..12 {
            let t = k as f64 * period;
            let b = BallState {
                vx: v,
                ..BallState::at_rest(v * t, 0.0, &c)
            };
            last = Some((t, s.sense_ball(&b, &mut rng, t)));
        }
        let (t, m) = last.unwrap();
        assert_abs_diff_eq!(m.x, v * (t - 1.5 * period), epsilon = 1e-15);
    }

    #[test]
    fn averaged_noise_variance_is_quarter() {
        let sigma = 0.001;
        let mut s = BallSensor::new(BallSensorConfig::default());
        let c = BallConfig::default();
        let b = BallState::at_rest(0.0, 0.0, &c);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // Every fourth sample uses a disjoint window, so they are independent.
        let mut xs = Vec::new();
        for k in 0..80_000 {
            let m = s.sense_ball(&b, &mut rng, k as f64 / 45.0);
            if k % 4 == 3 {
                xs.push(m.x);
            }
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let want = sigma * sigma / 4.0;
        assert!((var / want - 1.0).abs() < 0.05, "{var} vs {want}");
    }

    #[test]
    fn samples_arrive_after_latency() {
        let mut s = BallSensor::new(BallSensorConfig {
            noise: 0.0,
            ..Default::default()
        });
        let c = BallConfig::default();
        let b = BallState::at_rest(0.01, 0.0, &c);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(s.update(&b, &mut rng, 0.0).is_none());
        assert!(s.update(&b, &mut rng, 0.007).is_none());
        let m = s.update(&b, &mut rng, 0.008).unwrap();
        assert_eq!(m.timestamp, 0.0);
        assert!(s.update(&b, &mut rng, 0.02).is_none());
        let m = s.update(&b, &mut rng, 1.0 / 45.0 + 0.008).unwrap();
        assert_abs_diff_eq!(m.timestamp, 1.0 / 45.0, epsilon = 1e-15);
    }
}
