//! Synthetic teach/repeat benchmark and the evaluation harness.

pub mod benchmark;
pub mod metrics;
pub mod presets;
pub mod scene;
pub mod sensor;

pub use benchmark::{make_benchmark, Benchmark, CameraSpec, SceneSpec, TrajectorySpec};
pub use metrics::{MetricsReport, PixelCounts, Rates};
pub use scene::{Ground, Scene, SceneObject, Shape};
pub use sensor::{build_submap, simulate_scan, SensorModel};
