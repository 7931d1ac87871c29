use serde::{Deserialize, Serialize};

use super::Pose6;

/// Axis-aligned workspace bounds in external units: metres for x, y, z and
/// degrees for roll, pitch, yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceLimits {
    pub min: [f64; 6],
    pub max: [f64; 6],
}

impl Default for WorkspaceLimits {
    /// Bounds measured on the hardware build.
    fn default() -> Self {
        Self {
            min: [-0.06, -0.056, 0.237, -15.5, -18.2, -14.8],
            max: [0.06, 0.061, 0.316, 18.6, 16.0, 14.4],
        }
    }
}

impl WorkspaceLimits {
    pub fn center(&self) -> [f64; 6] {
        std::array::from_fn(|i| 0.5 * (self.min[i] + self.max[i]))
    }

    pub fn span(&self) -> [f64; 6] {
        std::array::from_fn(|i| self.max[i] - self.min[i])
    }

    pub fn center_pose(&self) -> Pose6 {
        Pose6::from_external(self.center())
    }

    /// Whether `pose` lies inside the bounds.
    pub fn contains(&self, pose: &Pose6) -> bool {
        let p = pose.to_external();
        (0..6).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}
