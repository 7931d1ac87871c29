use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Bound on the magnitude of the integral term `ki * integral(e)`.
    pub integral_limit: f64,
    /// Hz
    pub derivative_filter_cutoff: f64,
    pub output_limit: f64,
}

impl PidGains {
    pub fn proportional(kp: f64) -> Self {
        Self {
            kp,
            ki: 0.0,
            kd: 0.0,
            integral_limit: f64::INFINITY,
            derivative_filter_cutoff: 10.0,
            output_limit: f64::INFINITY,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.kp, self.ki, self.kd].iter().all(|g| g.is_finite())
            && self.output_limit > 0.0
            && self.integral_limit >= 0.0
            && self.derivative_filter_cutoff > 0.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PidState {
    /// Integral term `ki * integral(e)`, already clamped.
    pub integral: f64,
    pub derivative: f64,
    pub prev_error: Option<f64>,
    pub saturated: bool,
}

/// One PID update.
///
/// Conditional integration: the integral only accumulates while the output
/// is unsaturated or the error would drive it back from the limit.
pub fn pid_step(
    gains: &PidGains,
    setpoint: f64,
    measurement: f64,
    state: &PidState,
    dt: f64,
) -> (f64, PidState) {
    let e = setpoint - measurement;
    let mut s = *state;
    let raw_d = match state.prev_error {
        Some(prev) => (e - prev) / dt,
        None => 0.0,
    };
    let tau = 1.0 / (TAU * gains.derivative_filter_cutoff);
    let alpha = dt / (dt + tau);
    s.derivative += alpha * (raw_d - s.derivative);
    s.prev_error = Some(e);

    let p = gains.kp * e;
    let d = gains.kd * s.derivative;
    let trial_i = (s.integral + gains.ki * e * dt).clamp(-gains.integral_limit, gains.integral_limit);
    let unclamped = p + trial_i + d;
    let saturating = unclamped.abs() > gains.output_limit;
    if !saturating || e.signum() != unclamped.signum() {
        s.integral = trial_i;
    }
    let out = p + s.integral + d;
    s.saturated = out.abs() > gains.output_limit;
    (out.clamp(-gains.output_limit, gains.output_limit), s)
}
