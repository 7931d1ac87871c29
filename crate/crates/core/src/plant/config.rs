use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PlatformGeometry;

/// One resonant mode of the upper plate about a rotational axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalPeak {
    /// Hz
    pub frequency: f64,
    pub damping: f64,
    /// Peak band-pass gain relative to the quasi-static motion.
    pub gain: f64,
}

impl ModalPeak {
    pub const fn new(frequency: f64, damping: f64, gain: f64) -> Self {
        Self {
            frequency,
            damping,
            gain,
        }
    }
}

/// Stiffness of the compliant strut model used to find the quasi-static pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrutCompliance {
    /// Axial stiffness per strut, N/m.
    pub axial: f64,
    /// Bending rigidity EI of each strut treated as a beam clamped at the
    /// servo, N m^2.
    pub bending_rigidity: f64,
    /// Torsional stiffness of a strut about its own axis, N m / rad.
    pub torsion: f64,
    /// Rotational stiffness of the coupler joining a strut to the plate,
    /// N m / rad.
    pub coupler: f64,
}

impl Default for StrutCompliance {
    fn default() -> Self {
        Self {
            axial: 4000.0,
            bending_rigidity: 1.5,
            torsion: 2.5,
            coupler: 8.0,
        }
    }
}

/// Measurement model of the platform IMU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSensorConfig {
    /// Hz
    pub rate: f64,
    /// Combined command and measurement latency, s.
    pub latency: f64,
    /// Translation noise standard deviation, m.
    pub noise_translation: f64,
    /// Orientation noise standard deviation, degrees.
    pub noise_rotation_deg: f64,
}

impl Default for PoseSensorConfig {
    fn default() -> Self {
        Self {
            rate: 100.0,
            latency: 0.008,
            noise_translation: 0.0002,
            noise_rotation_deg: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    /// Nominal geometry; the rigid model and the plant share anchor positions.
    pub geometry: PlatformGeometry,
    /// Hz
    pub servo_natural_freq: f64,
    pub servo_damping: f64,
    /// Transport delay between a command and the servo reacting, s.
    pub servo_deadtime: f64,
    /// Real extension of an HSA at the upper joint limit, m.
    pub hsa_stroke: f64,
    /// Curvature of the extension curve `e(u) = stroke (u + k u (1 - u))`.
    pub extension_nonlinearity: f64,
    pub compliance: StrutCompliance,
    /// Axial stiffness used by the payload sag model, N/m per strut.
    pub strut_stiffness: f64,
    /// Roll modes; yaw reuses this set.
    pub modal_peaks: Vec<ModalPeak>,
    /// Pitch modes are the roll modes with frequencies scaled by this factor.
    pub pitch_frequency_scale: f64,
    /// Peak unloaded vertical speed, m/s.
    pub max_platform_speed: f64,
    /// Loss of vertical speed per kg of payload, m/s/kg.
    pub speed_load_slope: f64,
    /// Cap on any single strut's extension rate, m/s.
    pub max_strut_rate: f64,
    /// kg
    pub working_load: f64,
    /// kg
    pub max_load: f64,
    /// Fraction of joint-space volume still usable at `max_load`.
    pub partial_volume_fraction: f64,
    /// Hz
    pub sim_rate: f64,
    pub sensor: PoseSensorConfig,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            geometry: PlatformGeometry::default(),
            servo_natural_freq: 12.1,
            servo_damping: 0.47,
            servo_deadtime: 0.015,
            hsa_stroke: 0.075,
            extension_nonlinearity: 0.15,
            compliance: StrutCompliance::default(),
            strut_stiffness: 4000.0,
            modal_peaks: vec![
                ModalPeak::new(4.0, 0.062, 0.325),
                ModalPeak::new(6.0, 0.062, 0.338),
                ModalPeak::new(9.0, 0.062, 0.293),
                ModalPeak::new(20.0, 0.030, 1.21),
            ],
            pitch_frequency_scale: 0.94,
            max_platform_speed: 0.1,
            speed_load_slope: 0.005,
            max_strut_rate: 0.6,
            working_load: 2.0,
            max_load: 3.5,
            partial_volume_fraction: 0.5,
            sim_rate: 1000.0,
            sensor: PoseSensorConfig::default(),
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let highest = self
            .modal_peaks
            .iter()
            .map(|m| m.frequency)
            .fold(self.servo_natural_freq, f64::max);
        if self.sim_rate < 20.0 * highest {
            return Err(Error::InvalidConfig(format!(
                "sim_rate {} Hz is below 20x the highest modal frequency {highest} Hz",
                self.sim_rate
            )));
        }
        if !(self.working_load < self.max_load) {
            return Err(Error::InvalidConfig(
                "working load must be below the maximum load".into(),
            ));
        }
        if self.servo_natural_freq <= 0.0 || self.servo_damping <= 0.0 || self.servo_deadtime < 0.0 {
            return Err(Error::InvalidConfig("servo parameters out of range".into()));
        }
        if self.hsa_stroke <= 0.0 || self.strut_stiffness <= 0.0 {
            return Err(Error::InvalidConfig("stroke and stiffness must be positive".into()));
        }
        let c = &self.compliance;
        if c.axial <= 0.0 || c.bending_rigidity < 0.0 || c.torsion < 0.0 || c.coupler < 0.0 {
            return Err(Error::InvalidConfig("compliance parameters out of range".into()));
        }
        if self
            .modal_peaks
            .iter()
            .any(|m| m.frequency <= 0.0 || m.damping <= 0.0 || !m.gain.is_finite())
        {
            return Err(Error::InvalidConfig("modal peaks out of range".into()));
        }
        if !(0.0..=1.0).contains(&self.partial_volume_fraction) {
            return Err(Error::InvalidConfig(
                "partial volume fraction must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sim_rate
    }

    /// A plant whose quasi-static pose matches the rigid model exactly: stroke
    /// equal to the nominal extension, linear extension, no modes, bending
    /// and torsion stiffness negligible next to the axial springs.
    pub fn rigid(geometry: PlatformGeometry) -> Self {
        Self {
            hsa_stroke: geometry.max_extension,
            geometry,
            extension_nonlinearity: 0.0,
            compliance: StrutCompliance {
                axial: 1e9,
                bending_rigidity: 0.0,
                torsion: 0.0,
                coupler: 0.0,
            },
            modal_peaks: Vec::new(),
            ..Self::default()
        }
    }
}
