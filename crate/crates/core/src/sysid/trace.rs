use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceError {
    /// Mean over unflagged waypoints, cm^2.
    pub mse_cm2: f64,
    /// Mean squared distance per waypoint, cm^2; `None` when flagged.
    pub per_waypoint: Vec<Option<f64>>,
    /// Waypoints whose scoring window has a gap longer than 1 s.
    pub flagged: Vec<usize>,
}

/// Squared distance to each waypoint averaged over the last quarter of its
/// dwell window, then averaged over waypoints. Waypoint `i` is active on
/// `[start + i dwell, start + (i + 1) dwell)`.
pub fn trace_mse(trajectory: &[TrajectoryPoint], waypoints: &[[f64; 2]], dwell: f64, start: f64) -> Result<TraceError> {
    if waypoints.is_empty() {
        return Err(Error::EmptyPath);
    }
    let max_gap = 1.0;
    let mut per_waypoint = Vec::with_capacity(waypoints.len());
    let mut flagged = Vec::new();
    for (i, w) in waypoints.iter().enumerate() {
        let lo = start + (i as f64 + 0.75) * dwell;
        let hi = start + (i as f64 + 1.0) * dwell;
        let pts: Vec<&TrajectoryPoint> = trajectory.iter().filter(|p| p.t >= lo && p.t < hi).collect();
        let gap = match (pts.first(), pts.last()) {
            (Some(a), Some(b)) => {
                let inner = pts.windows(2).map(|w| w[1].t - w[0].t).fold(0.0, f64::max);
                inner.max(a.t - lo).max(hi - b.t)
            }
            _ => f64::INFINITY,
        };
        if gap > max_gap {
            flagged.push(i);
            per_waypoint.push(None);
            continue;
        }
        let m = pts
            .iter()
            .map(|p| (p.x - w[0]).powi(2) + (p.y - w[1]).powi(2))
            .sum::<f64>()
            / pts.len() as f64;
        per_waypoint.push(Some(m * 1e4));
    }
    let scored: Vec<f64> = per_waypoint.iter().flatten().copied().collect();
    let mse_cm2 = if scored.is_empty() {
        f64::NAN
    } else {
        scored.iter().sum::<f64>() / scored.len() as f64
    };
    Ok(TraceError {
        mse_cm2,
        per_waypoint,
        flagged,
    })
}
