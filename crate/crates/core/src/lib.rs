pub mod ball;
pub mod config;
pub mod control;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod learnkin;
pub mod plant;
pub mod rig;
pub mod sysid;

pub use ball::{BallConfig, BallMode, BallState, SensorSample};
pub use config::ExperimentConfig;
pub use control::{CascadeConfig, PidGains};
pub use error::{Error, Result};
pub use geometry::{JointVector, PlatformGeometry, Pose6, StrutLengths, WorkspaceLimits};
pub use plant::{Plant, PlantConfig, PlantState};
