//! Frames, transforms and rigid Stewart kinematics.
//!
//! Orientation convention, used everywhere in the crate: extrinsic
//! roll-pitch-yaw, i.e. rotate about the fixed X axis by `roll`, then the
//! fixed Y axis by `pitch`, then the fixed Z axis by `yaw`:
//! `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.
//!
//! Frame `L` sits at the centre of the lower (base) plate with +Z pointing
//! up, frame `U` at the centre of the upper plate. A [`Pose6`] is the pose
//! of `U` expressed in `L`.

mod fk;
mod limits;

pub use fk::{forward_kinematics, FkOptions, FkSolution};
pub use limits::WorkspaceLimits;

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix4, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STRUT_COUNT: usize = 6;

/// Height of the upper plate above the lower plate with every strut at its
/// neutral (zero-extension) length.
pub const NEUTRAL_HEIGHT: f64 = 0.253;

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    a - TAU * ((a - PI) / TAU).ceil()
}

/// 6-DoF pose of the upper plate in the lower plate frame.
///
/// Translations in metres, angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose6 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Pose6 {
    pub const fn new(x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            z,
            roll,
            pitch,
            yaw,
        }
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.x, self.y, self.z, self.roll, self.pitch, self.yaw]
    }

    /// Translation in metres and orientation in degrees, the layout used by
    /// every external table.
    pub fn to_external(self) -> [f64; 6] {
        [
            self.x,
            self.y,
            self.z,
            self.roll.to_degrees(),
            self.pitch.to_degrees(),
            self.yaw.to_degrees(),
        ]
    }

    pub fn from_external(v: [f64; 6]) -> Self {
        Self::new(
            v[0],
            v[1],
            v[2],
            v[3].to_radians(),
            v[4].to_radians(),
            v[5].to_radians(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_euler_angles(self.roll, self.pitch, self.yaw)
    }

    /// Same pose with every angle wrapped into `(-pi, pi]`.
    pub fn wrapped(self) -> Self {
        Self {
            roll: wrap_angle(self.roll),
            pitch: wrap_angle(self.pitch),
            yaw: wrap_angle(self.yaw),
            ..self
        }
    }
}

/// Homogeneous transform `T(x, y, z, roll, pitch, yaw)`.
pub fn pose_to_transform(pose: &Pose6) -> Result<Matrix4<f64>> {
    if !pose.is_finite() {
        return Err(Error::NonFinite("pose"));
    }
    let mut t = pose.rotation().to_homogeneous();
    t[(0, 3)] = pose.x;
    t[(1, 3)] = pose.y;
    t[(2, 3)] = pose.z;
    Ok(t)
}

/// Inverse of [`pose_to_transform`] for poses with `|pitch| < pi/2`.
pub fn transform_to_pose(t: &Matrix4<f64>) -> Result<Pose6> {
    if t.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("transform"));
    }
    let pitch = (-t[(2, 0)]).clamp(-1.0, 1.0).asin();
    let roll = t[(2, 1)].atan2(t[(2, 2)]);
    let yaw = t[(1, 0)].atan2(t[(0, 0)]);
    Ok(Pose6::new(t[(0, 3)], t[(1, 3)], t[(2, 3)], roll, pitch, yaw).wrapped())
}

/// How the upper strut ends are laid out relative to the lower ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorLayout {
    /// Upper anchor pairs straddle the corners of the upper triangle, which
    /// is rotated 60 degrees from the lower one. Strut `n` runs from the
    /// lower anchor at `theta_n` to the upper anchor at
    /// `theta_n + (-1)^n (60 deg - 2 theta_o)`, giving the crossed hexapod
    /// pattern with an inward slant of roughly ten degrees.
    #[default]
    Mirrored,
    /// Upper anchors share the lower anchor angles. All six strut lines then
    /// meet at a single point on the Z axis, which leaves three rotational
    /// degrees of freedom unconstrained to first order.
    Coincident,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformGeometry {
    /// Radius of the upper anchor circle, metres.
    pub upper_radius: f64,
    /// Radius of the lower anchor circle, metres.
    pub lower_radius: f64,
    /// Angle between each anchor and its corner, radians.
    pub corner_offset: f64,
    pub anchor_layout: AnchorLayout,
    /// Strut length at zero servo rotation, metres.
    pub neutral_strut_length: f64,
    /// Strut extension per radian of servo rotation, metres.
    pub servo_gain: f64,
    /// Servo angle limits, degrees.
    pub joint_limits: [f64; 2],
    /// Extension at the upper joint limit, metres.
    pub max_extension: f64,
}

impl Default for PlatformGeometry {
    fn default() -> Self {
        let max_extension = 0.050;
        let mut g = Self {
            upper_radius: 0.076,
            lower_radius: 0.0875,
            corner_offset: 15.5_f64.to_radians(),
            anchor_layout: AnchorLayout::Mirrored,
            neutral_strut_length: 0.0,
            servo_gain: max_extension / 270.0_f64.to_radians(),
            joint_limits: [0.0, 270.0],
            max_extension,
        };
        g.neutral_strut_length = g.strut_length_at_height(NEUTRAL_HEIGHT);
        g
    }
}

impl PlatformGeometry {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.upper_radius,
            self.lower_radius,
            self.corner_offset,
            self.neutral_strut_length,
            self.servo_gain,
            self.joint_limits[0],
            self.joint_limits[1],
            self.max_extension,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("geometry"));
        }
        if self.upper_radius <= 0.0 || self.lower_radius <= 0.0 {
            return Err(Error::InvalidConfig("radii must be positive".into()));
        }
        if !(self.corner_offset > 0.0 && self.corner_offset < PI / 3.0) {
            return Err(Error::InvalidConfig(
                "corner offset must lie in (0, 60) degrees".into(),
            ));
        }
        if self.joint_limits[0] >= self.joint_limits[1] {
            return Err(Error::InvalidConfig("joint limits must be increasing".into()));
        }
        if self.neutral_strut_length <= 0.0 || self.servo_gain <= 0.0 || self.max_extension <= 0.0 {
            return Err(Error::InvalidConfig(
                "strut length, servo gain and extension must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Length every strut must have for a level plate at height `z` centred
    /// over the base.
    pub fn strut_length_at_height(&self, z: f64) -> f64 {
        inverse_kinematics(&Pose6::new(0.0, 0.0, z, 0.0, 0.0, 0.0), self).0[0]
    }

    /// Upper anchor angles, radians.
    pub fn upper_anchor_angles(&self) -> [f64; STRUT_COUNT] {
        let lower = strut_anchor_angles(self);
        let mut out = lower;
        if self.anchor_layout == AnchorLayout::Mirrored {
            for (n, a) in out.iter_mut().enumerate() {
                let s = alternating_sign(n + 1);
                *a = (*a + s * (PI / 3.0 - 2.0 * self.corner_offset)).rem_euclid(TAU);
            }
        }
        out
    }
}

fn alternating_sign(n: usize) -> f64 {
    if n % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Lower anchor angles `theta_n = (-1)^n theta_o + (2 pi / 3) floor(n / 2)`
/// for `n = 1..=6`, wrapped into `[0, 2 pi)`.
pub fn strut_anchor_angles(geometry: &PlatformGeometry) -> [f64; STRUT_COUNT] {
    let mut out = [0.0; STRUT_COUNT];
    for (i, a) in out.iter_mut().enumerate() {
        let n = i + 1;
        let raw = alternating_sign(n) * geometry.corner_offset + TAU / 3.0 * (n / 2) as f64;
        *a = raw.rem_euclid(TAU);
    }
    out
}

/// Strut end points: lower anchors in frame `L`, upper anchors in frame `U`.
pub fn strut_anchors(
    geometry: &PlatformGeometry,
) -> ([Vector3<f64>; STRUT_COUNT], [Vector3<f64>; STRUT_COUNT]) {
    let lower_angles = strut_anchor_angles(geometry);
    let upper_angles = geometry.upper_anchor_angles();
    let lower = lower_angles.map(|a| {
        Vector3::new(
            geometry.lower_radius * a.cos(),
            geometry.lower_radius * a.sin(),
            0.0,
        )
    });
    let upper = upper_angles.map(|a| {
        Vector3::new(
            geometry.upper_radius * a.cos(),
            geometry.upper_radius * a.sin(),
            0.0,
        )
    });
    (lower, upper)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrutLengths(pub [f64; STRUT_COUNT]);

impl StrutLengths {
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Servo angles in degrees, with a per-joint flag set when the value was
/// clamped to the joint limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointVector {
    pub angles: [f64; STRUT_COUNT],
    pub saturated: [bool; STRUT_COUNT],
}

impl JointVector {
    pub fn new(angles: [f64; STRUT_COUNT]) -> Self {
        Self {
            angles,
            saturated: [false; STRUT_COUNT],
        }
    }

    /// Clamp into `limits`, recording which joints were saturated.
    pub fn clamped(angles: [f64; STRUT_COUNT], limits: [f64; 2]) -> Self {
        let mut out = Self::new(angles);
        for (a, s) in out.angles.iter_mut().zip(out.saturated.iter_mut()) {
            if *a < limits[0] {
                *a = limits[0];
                *s = true;
            } else if *a > limits[1] {
                *a = limits[1];
                *s = true;
            }
        }
        out
    }

    pub fn any_saturated(&self) -> bool {
        self.saturated.iter().any(|&s| s)
    }
}

/// Strut vectors (lower anchor to upper anchor) in frame `L` for `pose`.
pub fn strut_vectors(pose: &Pose6, geometry: &PlatformGeometry) -> [Vector3<f64>; STRUT_COUNT] {
    let (lower, upper) = strut_anchors(geometry);
    strut_vectors_with(pose, &lower, &upper)
}

pub(crate) fn strut_vectors_with(
    pose: &Pose6,
    lower: &[Vector3<f64>; STRUT_COUNT],
    upper: &[Vector3<f64>; STRUT_COUNT],
) -> [Vector3<f64>; STRUT_COUNT] {
    let r = pose.rotation();
    let p = pose.translation();
    std::array::from_fn(|n| p + r * upper[n] - lower[n])
}

/// Closed-form rigid inverse kinematics: the length of every strut for `pose`.
pub fn inverse_kinematics(pose: &Pose6, geometry: &PlatformGeometry) -> StrutLengths {
    StrutLengths(strut_vectors(pose, geometry).map(|s| s.norm()))
}

/// Rigid strut lengths to servo angles, clamped to the joint limits.
pub fn lengths_to_joints(lengths: &StrutLengths, geometry: &PlatformGeometry) -> JointVector {
    let raw = lengths
        .0
        .map(|l| ((l - geometry.neutral_strut_length) / geometry.servo_gain).to_degrees());
    JointVector::clamped(raw, geometry.joint_limits)
}

/// Servo angles to the rigid-model strut lengths (no clamping).
pub fn joints_to_lengths(joints: &JointVector, geometry: &PlatformGeometry) -> StrutLengths {
    StrutLengths(
        joints
            .angles
            .map(|a| geometry.neutral_strut_length + geometry.servo_gain * a.to_radians()),
    )
}

/// Rigid model pose to servo command.
pub fn pose_to_joints(pose: &Pose6, geometry: &PlatformGeometry) -> JointVector {
    lengths_to_joints(&inverse_kinematics(pose, geometry), geometry)
}
