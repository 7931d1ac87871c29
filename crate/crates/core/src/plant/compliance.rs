use nalgebra::{Matrix3, Matrix6, Rotation3, SMatrix, SVector, UnitQuaternion, Vector3, Vector6};

use super::config::StrutCompliance;
use crate::geometry::{strut_anchors, PlatformGeometry, Pose6, STRUT_COUNT, NEUTRAL_HEIGHT};

const RESIDUALS: usize = 11 * STRUT_COUNT;
/// Step size (m, rad) at which the solvers stop.
const TOLERANCE: f64 = 1e-9;

/// Quasi-static equilibrium of the upper plate on six compliant struts.
///
/// Each strut is an axial spring of rest length `rest_n` plus a beam clamped
/// at the servo and joined to the plate by a compliant coupler. The pose
/// minimizes the summed elastic energy, written as a least-squares problem:
///
/// * axial: `ka (|s| - rest)^2`
/// * bending, with `c = EI / L^3`, lateral offset `d` of the strut tip from
///   its neutral axis `a` and tip rotation `t = w x a`:
///   `6c |d - L t / 2|^2 + c L^2 |t|^2 / 2`
/// * coupler rotation `kr |t|^2` and strut torsion `kt (w . a)^2`
///
/// where `w` is the rotation vector of the plate.
#[derive(Debug, Clone)]
pub struct ComplianceModel {
    lower: [Vector3<f64>; STRUT_COUNT],
    upper: [Vector3<f64>; STRUT_COUNT],
    axes: [Vector3<f64>; STRUT_COUNT],
    stiffness: StrutCompliance,
}

#[derive(Debug, Clone, Copy)]
pub struct Equilibrium {
    pub pose: Pose6,
    pub iterations: usize,
}

impl ComplianceModel {
    pub fn new(geometry: &PlatformGeometry, stiffness: StrutCompliance) -> Self {
        let (lower, upper) = strut_anchors(geometry);
        let axes = std::array::from_fn(|n| {
            (upper[n] + Vector3::new(0.0, 0.0, NEUTRAL_HEIGHT) - lower[n]).normalize()
        });
        Self {
            lower,
            upper,
            axes,
            stiffness,
        }
    }

    /// Strut axis directions at the neutral pose, frame `L`.
    pub fn neutral_axes(&self) -> &[Vector3<f64>; STRUT_COUNT] {
        &self.axes
    }

    fn residuals(&self, p: &Vector6<f64>, rest: &[f64; STRUT_COUNT]) -> SVector<f64, RESIDUALS> {
        let (rot, w) = rotation_and_vector(p);
        let trans = Vector3::new(p[0], p[1], p[2]);
        let k = &self.stiffness;
        let sa = k.axial.sqrt();
        let skt = k.torsion.sqrt();
        let skr = k.coupler.sqrt();
        let mut r = SVector::<f64, RESIDUALS>::zeros();
        for n in 0..STRUT_COUNT {
            let s = trans + rot * self.upper[n] - self.lower[n];
            let a = self.axes[n];
            let len = rest[n];
            let c = k.bending_rigidity / (len * len * len);
            let d = s - a * s.dot(&a);
            let t = w.cross(&a);
            let base = 11 * n;
            r[base] = sa * (s.norm() - len);
            let b1 = (d - t * (len / 2.0)) * (6.0 * c).sqrt();
            let b2 = t * (len * (0.5 * c).sqrt());
            let cr = t * skr;
            for i in 0..3 {
                r[base + 1 + i] = b1[i];
                r[base + 4 + i] = b2[i];
                r[base + 7 + i] = cr[i];
            }
            r[base + 10] = skt * w.dot(&a);
        }
        r
    }

    /// Elastic energy (half the squared residual norm) at `pose`.
    pub fn energy(&self, pose: &Pose6, rest: &[f64; STRUT_COUNT]) -> f64 {
        0.5 * self
            .residuals(&Vector6::from(pose.to_array()), rest)
            .norm_squared()
    }

    /// Analytic Jacobian, transposed (one row per pose coordinate).
    fn jacobian(&self, p: &Vector6<f64>, rest: &[f64; STRUT_COUNT]) -> SMatrix<f64, 6, RESIDUALS> {
        let (cb, sb) = (p[4].cos(), p[4].sin());
        let (cy, sy) = (p[5].cos(), p[5].sin());
        let (rot, w) = rotation_and_vector(p);
        // Spatial angular velocity per unit rate of roll, pitch and yaw.
        let omega = [
            Vector3::new(cy * cb, sy * cb, -sb),
            Vector3::new(-sy, cy, 0.0),
            Vector3::z(),
        ];
        let dw_domega = log_jacobian_inverse(&w);
        let dw: [Vector3<f64>; 3] = std::array::from_fn(|k| dw_domega * omega[k]);
        let trans = Vector3::new(p[0], p[1], p[2]);
        let k = &self.stiffness;
        let sa = k.axial.sqrt();
        let skt = k.torsion.sqrt();
        let skr = k.coupler.sqrt();
        let mut jt = SMatrix::<f64, 6, RESIDUALS>::zeros();
        for n in 0..STRUT_COUNT {
            let ru = rot * self.upper[n];
            let s = trans + ru - self.lower[n];
            let unit = s / s.norm();
            let a = self.axes[n];
            let len = rest[n];
            let c = k.bending_rigidity / (len * len * len);
            let (k1, k2) = ((6.0 * c).sqrt(), len * (0.5 * c).sqrt());
            let base = 11 * n;
            for j in 0..6 {
                let (ds, dwj) = if j < 3 {
                    let mut e = Vector3::zeros();
                    e[j] = 1.0;
                    (e, Vector3::zeros())
                } else {
                    (omega[j - 3].cross(&ru), dw[j - 3])
                };
                let dd = ds - a * ds.dot(&a);
                let dt = dwj.cross(&a);
                jt[(j, base)] = sa * unit.dot(&ds);
                for i in 0..3 {
                    jt[(j, base + 1 + i)] = k1 * (dd[i] - dt[i] * (len / 2.0));
                    jt[(j, base + 4 + i)] = k2 * dt[i];
                    jt[(j, base + 7 + i)] = skr * dt[i];
                }
                jt[(j, base + 10)] = skt * dwj.dot(&a);
            }
        }
        jt
    }

    /// Gauss-Newton from `guess`, stopping once a step falls below `1e-9`.
    pub fn equilibrium(&self, rest: &[f64; STRUT_COUNT], guess: &Pose6) -> Equilibrium {
        let mut p = Vector6::from(guess.to_array());
        let mut r = self.residuals(&p, rest);
        let mut iterations = 0;
        while iterations < 50 {
            iterations += 1;
            let jt = self.jacobian(&p, rest);
            let jtj: Matrix6<f64> = jt * jt.transpose();
            let Some(chol) = jtj.cholesky() else {
                break;
            };
            let mut step = chol.solve(&(jt * r));
            let cost = r.norm_squared();
            // Halve the step until the energy does not increase.
            let mut accepted = false;
            for _ in 0..30 {
                let cand = p - step;
                let rc = self.residuals(&cand, rest);
                if rc.norm_squared() <= cost {
                    p = cand;
                    r = rc;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted || step.norm() < TOLERANCE {
                break;
            }
        }
        Equilibrium {
            pose: Pose6::from_array(p.into()),
            iterations,
        }
    }
}

/// Plate rotation and its rotation vector, accurate near the identity.
fn rotation_and_vector(p: &Vector6<f64>) -> (Rotation3<f64>, Vector3<f64>) {
    let q = UnitQuaternion::from_euler_angles(p[3], p[4], p[5]);
    let (qw, v) = if q.w < 0.0 { (-q.w, -q.imag()) } else { (q.w, q.imag()) };
    let sn = v.norm();
    let scale = if sn < 1e-12 { 2.0 / qw } else { 2.0 * sn.atan2(qw) / sn };
    (q.to_rotation_matrix(), v * scale)
}

/// Derivative of the rotation vector `w = log(R)` with respect to a
/// spatial angular velocity.
fn log_jacobian_inverse(w: &Vector3<f64>) -> Matrix3<f64> {
    let th = w.norm();
    let k = w.cross_matrix();
    let coef = if th < 1e-4 {
        1.0 / 12.0 + th * th / 720.0
    } else {
        1.0 / (th * th) - (1.0 + th.cos()) / (2.0 * th * th.sin())
    };
    Matrix3::identity() - k * 0.5 + k * k * coef
}
