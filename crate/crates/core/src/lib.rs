//! Change detection for path-repeating robots.
//!
//! A map point cloud (accumulated on the taught pass) and a live scan are
//! rendered into the same virtual pinhole camera. Point prompts are picked
//! where the two disagree, both images are segmented from the same prompts,
//! and live masks without a sufficiently overlapping map mask are reported
//! as changes after a 3D check. Every rendered pixel keeps its source point,
//! so changed masks map straight back to 3D points.
//!
//! Geometry, rendering, prompting, detection and the baselines are generic
//! over [`Real`] (`f32` or `f64`); the aliases below fix the scalar type.
//! The simulator, evaluation harness and pipeline run in `f64`.

pub mod baseline;
pub mod config;
pub mod dataset;
pub mod detect;
pub mod geom;
pub mod io;
pub mod pipeline;
pub mod prompt;
pub mod render;
pub mod scalar;
pub mod segment;
pub mod simeval;
pub mod spatial;

pub use scalar::Real;

pub type Vec3F32 = geom::Vec3<f32>;
pub type Vec3F64 = geom::Vec3<f64>;
pub type PoseF32 = geom::Pose<f32>;
pub type PoseF64 = geom::Pose<f64>;
pub type PointCloudF32 = geom::PointCloud<f32>;
pub type PointCloudF64 = geom::PointCloud<f64>;
pub type CameraIntrinsicsF32 = render::CameraIntrinsics<f32>;
pub type CameraIntrinsicsF64 = render::CameraIntrinsics<f64>;
pub type RenderedViewF32 = render::RenderedView<f32>;
pub type RenderedViewF64 = render::RenderedView<f64>;
pub type CorridorF64 = detect::Corridor<f64>;
pub type ChangeCandidateF64 = detect::ChangeCandidate<f64>;
pub type ObstacleQueueF64 = detect::ObstacleQueue<f64>;
