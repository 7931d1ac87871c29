use nalgebra::{Matrix6, Vector6};

use super::{
    joints_to_lengths, strut_anchors, strut_vectors_with, JointVector, PlatformGeometry, Pose6,
};
use crate::error::{Error, Result};

/// Damped Gauss-Newton (Levenberg) settings for [`forward_kinematics`].
#[derive(Debug, Clone, Copy)]
pub struct FkOptions {
    pub max_iterations: usize,
    pub initial_damping: f64,
    /// Central-difference step for the numerical Jacobian.
    pub jacobian_step: f64,
    /// Residual norm, metres, below which the solve counts as converged.
    pub tolerance: f64,
}

impl Default for FkOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_damping: 1e-3,
            jacobian_step: 1e-6,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FkSolution {
    pub pose: Pose6,
    /// Euclidean norm of the strut length residual, metres.
    pub residual: f64,
    pub iterations: usize,
}

/// Numerical forward kinematics: the pose whose rigid strut lengths match the
/// servo command, found from `initial_guess`.
pub fn forward_kinematics(
    joints: &JointVector,
    geometry: &PlatformGeometry,
    initial_guess: &Pose6,
    options: &FkOptions,
) -> Result<FkSolution> {
    if !initial_guess.is_finite() || joints.angles.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("forward kinematics input"));
    }
    let target = joints_to_lengths(joints, geometry).0;
    let (lower, upper) = strut_anchors(geometry);

    let residual = |p: &Vector6<f64>| -> Vector6<f64> {
        let v = strut_vectors_with(&Pose6::from_array((*p).into()), &lower, &upper);
        Vector6::from_fn(|n, _| v[n].norm() - target[n])
    };

    let mut p = Vector6::from(initial_guess.to_array());
    let mut r = residual(&p);
    let mut cost = r.norm_squared();
    let mut lambda = options.initial_damping;
    let mut iterations = 0;
    // Stop refining once the residual sits at round-off level.
    let floor = 1e-15;

    while iterations < options.max_iterations && cost.sqrt() > floor {
        iterations += 1;
        let h = options.jacobian_step;
        let mut jac = Matrix6::<f64>::zeros();
        for k in 0..6 {
            let mut hi = p;
            let mut lo = p;
            hi[k] += h;
            lo[k] -= h;
            let col = (residual(&hi) - residual(&lo)) / (2.0 * h);
            jac.set_column(k, &col);
        }
        let jt = jac.transpose();
        let jtj = jt * jac;
        let g = jt * r;
        let mut improved = false;
        while !improved && lambda < 1e12 {
            let a = jtj + Matrix6::identity() * lambda;
            let Some(step) = a.cholesky().map(|c| c.solve(&g)) else {
                lambda *= 10.0;
                continue;
            };
            let cand = p - step;
            let rc = residual(&cand);
            let cc = rc.norm_squared();
            if cc.is_finite() && cc < cost {
                p = cand;
                r = rc;
                let small_step = step.norm() < 1e-15;
                cost = cc;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if small_step {
                    break;
                }
            } else {
                lambda *= 10.0;
            }
        }
        if !improved {
            break;
        }
    }

    let pose = Pose6::from_array(p.into()).wrapped();
    let res = cost.sqrt();
    if res < options.tolerance {
        Ok(FkSolution {
            pose,
            residual: res,
            iterations,
        })
    } else {
        Err(Error::FkNotConverged {
            best: pose,
            residual: res,
            iterations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{inverse_kinematics, lengths_to_joints, NEUTRAL_HEIGHT};
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_joints_sit_at_neutral_height() {
        let g = PlatformGeometry::default();
        let j = JointVector::new([0.0; 6]);
        let guess = Pose6::new(0.0, 0.0, 0.27, 0.0, 0.0, 0.0);
        let s = forward_kinematics(&j, &g, &guess, &FkOptions::default()).unwrap();
        assert_abs_diff_eq!(s.pose.z, NEUTRAL_HEIGHT, epsilon = 1e-9);
    }

    #[test]
    fn equal_joints_give_level_centred_pose() {
        let g = PlatformGeometry::default();
        let j = JointVector::new([135.0; 6]);
        let guess = Pose6::new(0.005, -0.004, 0.27, 0.02, -0.03, 0.01);
        let s = forward_kinematics(&j, &g, &guess, &FkOptions::default()).unwrap();
        assert_abs_diff_eq!(s.pose.x, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.pose.y, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.pose.roll, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.pose.pitch, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.pose.yaw, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn recovers_pose_from_perturbed_guess() {
        let g = PlatformGeometry::default();
        let p0 = Pose6::new(0.012, -0.008, 0.275, 0.05, -0.04, 0.03);
        let j = lengths_to_joints(&inverse_kinematics(&p0, &g), &g);
        assert!(!j.any_saturated());
        let d = 5.0_f64.to_radians();
        let guess = Pose6::new(p0.x + 0.01, p0.y - 0.01, p0.z + 0.01, p0.roll + d, p0.pitch - d, p0.yaw + d);
        let s = forward_kinematics(&j, &g, &guess, &FkOptions::default()).unwrap();
        for (a, b) in s.pose.to_array().iter().zip(p0.to_array()).take(3) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-6);
        }
        for (a, b) in s.pose.to_array().iter().zip(p0.to_array()).skip(3) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-5);
        }
    }

    #[test]
    fn reports_non_convergence() {
        let g = PlatformGeometry::default();
        let j = JointVector::new([200.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let opts = FkOptions {
            max_iterations: 1,
            ..Default::default()
        };
        let guess = Pose6::new(0.0, 0.0, 0.2, 0.0, 0.0, 0.0);
        match forward_kinematics(&j, &g, &guess, &opts) {
            Err(Error::FkNotConverged { residual, .. }) => assert!(residual > 1e-8),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
