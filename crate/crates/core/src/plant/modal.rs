use std::f64::consts::TAU;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::config::ModalPeak;

/// One band-pass mode `g 2 zeta w s / (s^2 + 2 zeta w s + w^2)` driven by a
/// quasi-static angle `q`.
///
/// State `(u, v)` with `u` the modal angle and `v = u' - b q`,
/// `b = 2 zeta w g`, so the input enters without differentiating `q`:
/// `u' = v + b q`, `v' = -2 zeta w (v + b q) - w^2 u`.
/// Discretized exactly for an input held over each step.
#[derive(Debug, Clone, Copy)]
pub struct ModeDiscretization {
    phi: Matrix2<f64>,
    gamma: Vector2<f64>,
    omega: f64,
    b: f64,
}

impl ModeDiscretization {
    pub fn new(peak: &ModalPeak, frequency_scale: f64, dt: f64) -> Self {
        let w = TAU * peak.frequency * frequency_scale;
        let z = peak.damping;
        let b = 2.0 * z * w * peak.gain;
        let a = Matrix2::new(0.0, 1.0, -w * w, -2.0 * z * w);
        let bin = Vector2::new(b, -2.0 * z * w * b);
        let phi = (a * dt).exp();
        // A is invertible for w > 0.
        let ainv = a.try_inverse().expect("modal frequency must be positive");
        let gamma = ainv * (phi - Matrix2::identity()) * bin;
        Self {
            phi,
            gamma,
            omega: w,
            b,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeState {
    pub u: f64,
    pub v: f64,
}

/// Modes acting on one rotational axis.
#[derive(Debug, Clone)]
pub struct ModalBank {
    modes: Vec<ModeDiscretization>,
}

impl ModalBank {
    pub fn new(peaks: &[ModalPeak], frequency_scale: f64, dt: f64) -> Self {
        Self {
            modes: peaks
                .iter()
                .map(|p| ModeDiscretization::new(p, frequency_scale, dt))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn initial_state(&self, q: f64) -> Vec<ModeState> {
        self.modes.iter().map(|m| ModeState { u: 0.0, v: -m.b * q }).collect()
    }

    /// Advance every mode by one step with input `q`; returns the summed
    /// modal angle.
    pub fn step(&self, states: &mut [ModeState], q: f64) -> f64 {
        let mut total = 0.0;
        for (m, s) in self.modes.iter().zip(states.iter_mut()) {
            let x = m.phi * Vector2::new(s.u, s.v) + m.gamma * q;
            s.u = x[0];
            s.v = x[1];
            total += s.u;
        }
        total
    }

    /// Mechanical energy `(u'^2 + w^2 u^2) / 2` summed over the modes.
    pub fn energy(&self, states: &[ModeState], q: f64) -> f64 {
        self.modes
            .iter()
            .zip(states)
            .map(|(m, s)| {
                let du = s.v + m.b * q;
                0.5 * (du * du + m.omega * m.omega * s.u * s.u)
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constant_input_leaves_rest_state_at_rest() {
        let bank = ModalBank::new(&[ModalPeak::new(6.0, 0.06, 0.3)], 1.0, 1e-3);
        let mut s = bank.initial_state(0.2);
        for _ in 0..1000 {
            assert_abs_diff_eq!(bank.step(&mut s, 0.2), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn energy_non_increasing_under_constant_input() {
        let bank = ModalBank::new(
            &[ModalPeak::new(4.0, 0.062, 0.3), ModalPeak::new(20.0, 0.03, 1.2)],
            1.0,
            1e-3,
        );
        let mut s = vec![ModeState { u: 0.01, v: 0.3 }, ModeState { u: -0.02, v: 0.1 }];
        let mut prev = bank.energy(&s, 0.1);
        for _ in 0..5000 {
            bank.step(&mut s, 0.1);
            let e = bank.energy(&s, 0.1);
            assert!(e <= prev * (1.0 + 1e-12), "{e} > {prev}");
            prev = e;
        }
    }

    #[test]
    fn steady_state_gain_at_mode_frequency() {
        // The band-pass peaks at exactly `gain` at its centre frequency.
        let peak = ModalPeak::new(9.0, 0.062, 0.4);
        let dt = 1e-4;
        let bank = ModalBank::new(&[peak], 1.0, dt);
        let mut s = bank.initial_state(0.0);
        let mut amp: f64 = 0.0;
        let n = (20.0 / dt) as usize;
        for i in 0..n {
            let t = i as f64 * dt;
            let u = bank.step(&mut s, (TAU * 9.0 * t).sin());
            if t > 15.0 {
                amp = amp.max(u.abs());
            }
        }
        assert_abs_diff_eq!(amp, 0.4, epsilon = 2e-3);
    }
}
