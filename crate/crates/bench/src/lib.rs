//! Fixtures shared by the benchmarks.

use stewart_core::{Pose6, WorkspaceLimits};

/// `n` poses spread over the workspace bounds by a golden-ratio sequence.
pub fn spread_poses(n: usize, limits: &WorkspaceLimits) -> Vec<Pose6> {
    const STEPS: [f64; 6] = [0.618_034, 0.414_214, 0.732_051, 0.236_068, 0.302_776, 0.645_751];
    (1..=n)
        .map(|k| {
            Pose6::from_external(std::array::from_fn(|i| {
                let u = (k as f64 * STEPS[i]).fract();
                limits.min[i] + u * (limits.max[i] - limits.min[i])
            }))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poses_stay_inside_the_bounds() {
        let l = WorkspaceLimits::default();
        assert!(spread_poses(200, &l).iter().all(|p| l.contains(p)));
    }
}
