//! Offline 3D multi-object tracking from camera-LiDAR detections.
//!
//! The pipeline has three stages. Point-level 2D-3D fusion selects the 3D
//! detections worth tracking ([`fusion2d3d`]). A Kalman tracker runs over the
//! sequence forward and backward in time ([`tracker`]). The two trajectory
//! sets are then fused at fragment level ([`bifuse`]) and each trajectory is
//! refined by interpolation, size averaging and GP smoothing ([`refine`]).

pub mod assign;
pub mod bifuse;
pub mod config;
pub mod error;
pub mod eval;
pub mod fusion2d3d;
pub mod geom3d;
pub mod kittio;
pub mod pipeline;
pub mod refine;
pub mod scenario;
pub mod synth;
pub mod tracker;
pub mod trajectory;

pub use error::{Error, Result};
pub use geom3d::{Box3D, CameraModel, PointCloud};
pub use scenario::{Detection, FrameData, ScenarioBundle};
pub use trajectory::{DetKey, Observation, Trajectory, TrajectorySet};
