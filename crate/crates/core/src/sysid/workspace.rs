use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::hull::ConvexHull;
use crate::error::{Error, Result};
use crate::geometry::{JointVector, Pose6, STRUT_COUNT};
use crate::plant::Plant;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceSample {
    pub joints: JointVector,
    pub pose: Pose6,
    /// The load limit held at least one strut back.
    pub buckled: bool,
    /// Simulated settle time, s.
    pub settle_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    /// Joint increment, degrees.
    pub increment: f64,
    /// Dwell per pose, s.
    pub settle_time: f64,
    /// Stop dwelling once the plate is still.
    pub short_circuit: bool,
    /// kg
    pub payload: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            increment: 90.0,
            settle_time: 3.0,
            short_circuit: true,
            payload: 0.0,
        }
    }
}

/// Every joint vector on the grid `lo, lo + increment, ..., hi`.
pub fn joint_grid(increment: f64, limits: [f64; 2]) -> Result<Vec<[f64; STRUT_COUNT]>> {
    let span = limits[1] - limits[0];
    let steps = span / increment;
    if !(increment > 0.0) || (steps - steps.round()).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "increment {increment} does not divide the joint range {span}"
        )));
    }
    let levels = steps.round() as usize + 1;
    let total = levels.pow(STRUT_COUNT as u32);
    let mut out = Vec::with_capacity(total);
    for mut code in 0..total {
        let mut v = [0.0; STRUT_COUNT];
        for a in v.iter_mut() {
            *a = limits[0] + increment * (code % levels) as f64;
            code /= levels;
        }
        out.push(v);
    }
    Ok(out)
}

/// Shuffled raster over the joint grid. Each pose starts from a fresh copy
/// of the neutral plant, is held for `settle_time` (or until still) and
/// recorded in visit order.
pub fn workspace_scan(plant: &Plant, options: &ScanOptions, shuffle_seed: u64) -> Result<Vec<WorkspaceSample>> {
    let mut grid = joint_grid(options.increment, plant.config().geometry.joint_limits)?;
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    grid.shuffle(&mut rng);
    let neutral = plant.initial_state(options.payload);
    Ok(grid
        .into_iter()
        .map(|angles| {
            let joints = JointVector::new(angles);
            let mut state = neutral.clone();
            let outcome = plant.settle(&mut state, &joints, options.settle_time, options.short_circuit);
            WorkspaceSample {
                joints,
                pose: state.pose,
                buckled: state.any_buckled(),
                settle_time: outcome.elapsed,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullSummary {
    pub degenerate: bool,
    pub vertices: usize,
    pub faces: usize,
    pub volume: f64,
}

impl From<&ConvexHull> for HullSummary {
    fn from(h: &ConvexHull) -> Self {
        Self {
            degenerate: h.degenerate,
            vertices: h.vertices().len(),
            faces: h.faces.len(),
            volume: h.volume(),
        }
    }
}

/// Per-axis extrema in external units (m, degrees) plus position and
/// orientation hulls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceExtents {
    pub min: [f64; 6],
    pub max: [f64; 6],
    pub total: [f64; 6],
    pub samples_used: usize,
    pub position_hull: HullSummary,
    pub orientation_hull: HullSummary,
}

fn usable(samples: &[WorkspaceSample]) -> Vec<[f64; 6]> {
    samples
        .iter()
        .filter(|s| !s.buckled)
        .map(|s| s.pose.to_external())
        .collect()
}

pub fn position_hull(samples: &[WorkspaceSample]) -> ConvexHull {
    let pts: Vec<[f64; 3]> = usable(samples).iter().map(|p| [p[0], p[1], p[2]]).collect();
    ConvexHull::build(&pts)
}

pub fn workspace_extents(samples: &[WorkspaceSample]) -> Result<WorkspaceExtents> {
    let poses = usable(samples);
    if poses.is_empty() {
        return Err(Error::TooFewSamples { have: 0, need: 1 });
    }
    let mut min = [f64::INFINITY; 6];
    let mut max = [f64::NEG_INFINITY; 6];
    for p in &poses {
        for i in 0..6 {
            min[i] = min[i].min(p[i]);
            max[i] = max[i].max(p[i]);
        }
    }
    let total = std::array::from_fn(|i| max[i] - min[i]);
    let pos: Vec<[f64; 3]> = poses.iter().map(|p| [p[0], p[1], p[2]]).collect();
    let rot: Vec<[f64; 3]> = poses.iter().map(|p| [p[3], p[4], p[5]]).collect();
    Ok(WorkspaceExtents {
        min,
        max,
        total,
        samples_used: poses.len(),
        position_hull: HullSummary::from(&ConvexHull::build(&pos)),
        orientation_hull: HullSummary::from(&ConvexHull::build(&rot)),
    })
}

/// Pearson correlation of the six pose axes; `None` where an axis has zero
/// variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix(pub [[Option<f64>; 6]; 6]);

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.0[i][j]
    }
}

pub fn correlation_matrix(samples: &[WorkspaceSample]) -> Result<CorrelationMatrix> {
    let poses = usable(samples);
    correlation_of(&poses)
}

pub fn correlation_of(rows: &[[f64; 6]]) -> Result<CorrelationMatrix> {
    if rows.len() < 3 {
        return Err(Error::TooFewSamples {
            have: rows.len(),
            need: 3,
        });
    }
    let n = rows.len() as f64;
    let mean: [f64; 6] = std::array::from_fn(|i| rows.iter().map(|r| r[i]).sum::<f64>() / n);
    let mut cov = [[0.0; 6]; 6];
    for r in rows {
        for i in 0..6 {
            for j in i..6 {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    let scale: [f64; 6] = std::array::from_fn(|i| cov[i][i].sqrt());
    let tiny: [bool; 6] = std::array::from_fn(|i| {
        let m = rows.iter().map(|r| r[i].abs()).fold(0.0, f64::max);
        scale[i] <= 1e-12 * m.max(1e-300) * n.sqrt()
    });
    let mut out = [[None; 6]; 6];
    for i in 0..6 {
        for j in 0..6 {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            if tiny[a] || tiny[b] {
                continue;
            }
            out[i][j] = Some(if i == j {
                1.0
            } else {
                (cov[a][b] / (scale[a] * scale[b])).clamp(-1.0, 1.0)
            });
        }
    }
    Ok(CorrelationMatrix(out))
}
