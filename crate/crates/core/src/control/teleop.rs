use serde::{Deserialize, Serialize};

use crate::geometry::{Pose6, WorkspaceLimits};

/// Map six stick axes in `[-1, 1]` onto the workspace bounds: `-1` is the
/// minimum, `+1` the maximum and `0` the midpoint. Out-of-range axes are
/// clamped.
pub fn teleop_map(axes: &[f64; 6], limits: &WorkspaceLimits) -> Pose6 {
    let c = limits.center();
    let s = limits.span();
    let v = std::array::from_fn(|i| {
        let a = if axes[i].is_finite() { axes[i].clamp(-1.0, 1.0) } else { 0.0 };
        c[i] + 0.5 * s[i] * a
    });
    Pose6::from_external(v)
}

/// Slew-rate limit on teleop targets, per axis in external units per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeleopRates {
    /// m/s
    pub translation: f64,
    /// deg/s
    pub rotation: f64,
}

impl Default for TeleopRates {
    fn default() -> Self {
        Self {
            translation: 0.1,
            rotation: 60.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RateLimiter {
    rates: TeleopRates,
    current: [f64; 6],
}

impl RateLimiter {
    pub fn new(start: Pose6, rates: TeleopRates) -> Self {
        Self {
            rates,
            current: start.to_external(),
        }
    }

    pub fn current(&self) -> Pose6 {
        Pose6::from_external(self.current)
    }

    /// Move toward `target` by at most one `dt` of travel per axis.
    pub fn step(&mut self, target: &Pose6, dt: f64) -> Pose6 {
        let t = target.to_external();
        for i in 0..6 {
            let cap = if i < 3 { self.rates.translation } else { self.rates.rotation } * dt;
            self.current[i] += (t[i] - self.current[i]).clamp(-cap, cap);
        }
        self.current()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn neutral_stick_is_workspace_centre() {
        let l = WorkspaceLimits::default();
        let p = teleop_map(&[0.0; 6], &l).to_external();
        let c = l.center();
        for i in 0..6 {
            assert_abs_diff_eq!(p[i], c[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn full_z_reaches_maximum() {
        let p = teleop_map(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.0], &WorkspaceLimits::default());
        assert_abs_diff_eq!(p.z, 0.316, epsilon = 1e-12);
    }

    #[test]
    fn negative_roll_reaches_minimum() {
        let p = teleop_map(&[0.0, 0.0, 0.0, -1.0, 0.0, 0.0], &WorkspaceLimits::default());
        assert_abs_diff_eq!(p.roll.to_degrees(), -15.5, epsilon = 1e-12);
    }

    #[test]
    fn axes_are_clamped() {
        let l = WorkspaceLimits::default();
        let a = teleop_map(&[5.0, -7.0, f64::NAN, 1.0, 1.0, 1.0], &l);
        assert_abs_diff_eq!(a.x, 0.06, epsilon = 1e-12);
        assert_abs_diff_eq!(a.y, -0.056, epsilon = 1e-12);
        assert_abs_diff_eq!(a.z, l.center()[2], epsilon = 1e-12);
    }

    #[test]
    fn limiter_caps_speed() {
        let l = WorkspaceLimits::default();
        let mut r = RateLimiter::new(l.center_pose(), TeleopRates::default());
        let target = teleop_map(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.0], &l);
        let dt = 0.01;
        let mut prev = r.current();
        for _ in 0..100 {
            let p = r.step(&target, dt);
            assert!((p.z - prev.z).abs() <= 0.1 * dt + 1e-15);
            prev = p;
        }
        assert_abs_diff_eq!(prev.z, 0.316, epsilon = 1e-12);
    }
}
