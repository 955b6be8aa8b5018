//! Canned scenes used by the examples, tests and documentation.

use super::benchmark::{CameraSpec, SceneSpec, TrajectorySpec};
use super::scene::{Ground, SceneObject, Shape};
use super::sensor::SensorModel;

pub const STANDARD_SEED: u64 = 2024;

fn obj(instance_id: u32, shape: Shape, x: f64, y: f64, yaw: f64, reflectivity: f64) -> SceneObject {
    SceneObject { instance_id, shape, position: [x, y, 0.0], yaw, reflectivity }
}

fn traffic_cone() -> Shape {
    Shape::Cone { bottom_radius: 0.25, top_radius: 0.04, height: 0.9 }
}

fn crate_box() -> Shape {
    Shape::Box { size: [0.6, 0.6, 0.8] }
}

fn mannequin() -> Shape {
    Shape::Cylinder { radius: 0.22, height: 1.7 }
}

/// Static scene: two buildings, four trees, a barrier, and teach-time
/// duplicates of each injected object class placed near the path.
pub fn standard_objects() -> Vec<SceneObject> {
    vec![
        obj(1, Shape::Box { size: [10.0, 2.0, 4.0] }, 13.0, 8.0, 0.0, 0.35),
        obj(2, Shape::Box { size: [8.0, 2.5, 3.0] }, 25.0, -8.0, 0.1, 0.4),
        obj(3, Shape::Cylinder { radius: 0.25, height: 3.0 }, 6.0, -4.5, 0.0, 0.3),
        obj(4, Shape::Cylinder { radius: 0.3, height: 3.5 }, 14.0, -5.0, 0.0, 0.3),
        obj(5, Shape::Cylinder { radius: 0.25, height: 3.0 }, 20.0, 5.5, 0.0, 0.3),
        obj(6, Shape::Cylinder { radius: 0.3, height: 3.0 }, 9.0, 4.5, 0.0, 0.3),
        obj(7, Shape::Box { size: [3.0, 0.3, 1.0] }, 28.0, 3.0, 0.2, 0.5),
        // duplicates of the injected classes
        obj(11, traffic_cone(), 7.0, 2.8, 0.0, 0.9),
        obj(12, crate_box(), 17.0, -3.0, 0.3, 0.6),
        obj(13, mannequin(), 23.5, 4.0, 0.0, 0.8),
    ]
}

/// Three objects absent during teaching: a cone and a crate inside the
/// corridor, a standing figure just outside it.
pub fn standard_changes() -> Vec<SceneObject> {
    vec![
        obj(101, traffic_cone(), 13.5, 0.3, 0.0, 0.9),
        obj(102, crate_box(), 18.0, -1.0, 0.4, 0.6),
        obj(103, mannequin(), 20.5, 3.2, 0.0, 0.8),
    ]
}

pub fn standard_scene() -> SceneSpec {
    SceneSpec {
        ground: Ground::default(),
        objects: standard_objects(),
        changes: standard_changes(),
        sensor: SensorModel::default(),
        camera: CameraSpec::default(),
    }
}

pub fn standard_trajectory() -> TrajectorySpec {
    TrajectorySpec {
        waypoints: vec![[0.0, 0.0], [16.0, 0.0], [30.0, 2.0]],
        sensor_height: 1.0,
        teach_spacing: 1.0,
        repeat_start: 0.5,
        repeat_spacing: 1.0,
        repeat_frames: 10,
        lateral_offset: 0.5,
        lateral_period: 20.0,
        yaw_offset_deg: 2.0,
        ..TrajectorySpec::default()
    }
}

/// Standard layout with a quarter of the rays and three frames.
pub fn small_scene() -> SceneSpec {
    SceneSpec { sensor: SensorModel { n_beams: 64, azimuth_steps: 512, ..SensorModel::default() }, ..standard_scene() }
}

pub fn small_trajectory() -> TrajectorySpec {
    TrajectorySpec { repeat_frames: 3, repeat_spacing: 3.0, repeat_start: 3.5, ..standard_trajectory() }
}

/// Standard scene with the changes removed.
pub fn static_only(spec: &SceneSpec) -> SceneSpec {
    SceneSpec { changes: Vec::new(), ..spec.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        standard_scene().validate().unwrap();
        standard_trajectory().validate().unwrap();
        small_scene().validate().unwrap();
        small_trajectory().validate().unwrap();
    }

    #[test]
    fn changes_have_teach_time_duplicates() {
        let objs = standard_objects();
        for c in standard_changes() {
            assert!(objs.iter().any(|o| o.shape == c.shape));
        }
    }
}
