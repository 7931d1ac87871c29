//! Frequency response, workspace statistics and tracing error.

mod bode;
mod hull;
mod trace;
mod workspace;

pub use bode::{
    amplitude_envelope, analyse_sweep, bode_magnitude, crossing_frequency, generate_sweep, phase_delay,
    record_sweep, run_bode, unwrap_phases, BodePoint, BodeResult, PassThrough, PlantSweep,
    SecondOrderSystem, SegmentFailure, SegmentRecord, SweepSchedule, SweepSegment, SweepSpec,
    SweepTarget,
};
pub use hull::ConvexHull;
pub use trace::{trace_mse, TraceError, TrajectoryPoint};
pub use workspace::{
    correlation_matrix, correlation_of, joint_grid, position_hull, workspace_extents, workspace_scan,
    CorrelationMatrix, HullSummary, ScanOptions, WorkspaceExtents, WorkspaceSample,
};
