//! Teach/repeat benchmark generation.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scene::{Ground, Scene, SceneError, SceneObject};
use super::sensor::{accumulate_submap, scan_seed, simulate_scan, SensorError, SensorModel};
use crate::detect::Corridor;
use crate::geom::{Mat3, PointCloud, Pose, Vec3};
use crate::io::quantize_like_ply;
use crate::render::{render_view_from, CameraIntrinsics, RenderError, RenderedView};
use crate::segment::BinaryMask;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("injected object {0} reuses a static instance id")]
    InjectedId(u32),
    #[error("trajectory: {0}")]
    Trajectory(String),
}

/// Virtual camera: image size, fields of view and mounting in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSpec {
    pub width: usize,
    pub height: usize,
    pub fov_h_deg: f64,
    pub fov_v_deg: f64,
    /// Camera origin in the sensor frame.
    pub position: [f64; 3],
    pub yaw_deg: f64,
    /// Positive looks down.
    pub pitch_deg: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self { width: 256, height: 128, fov_h_deg: 90.0, fov_v_deg: 45.0, position: [0.0; 3], yaw_deg: 0.0, pitch_deg: 0.0 }
    }
}

impl CameraSpec {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics, RenderError> {
        CameraIntrinsics::from_fov(self.width, self.height, self.fov_h_deg.to_radians(), self.fov_v_deg.to_radians())
    }

    /// Maps sensor coordinates (x forward, y left, z up) to camera
    /// coordinates (z forward, x right, y down).
    pub fn camera_from_sensor(&self) -> Pose {
        let axes = Mat3::from_rows([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]]);
        let axes = Pose::from_rotation_translation(axes, Vec3::zero()).expect("axis permutation is a rotation");
        let p = self.position;
        let mount = Pose::from_xyz_rpy(p[0], p[1], p[2], 0.0, self.pitch_deg.to_radians(), self.yaw_deg.to_radians());
        axes * mount.inverse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizationNoise {
    pub translation: f64,
    pub yaw_deg: f64,
}

impl Default for LocalizationNoise {
    fn default() -> Self {
        Self { translation: 0.02, yaw_deg: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySpec {
    /// Ground-plane polyline of the taught path.
    pub waypoints: Vec<[f64; 2]>,
    pub sensor_height: f64,
    pub teach_spacing: f64,
    /// Arc length of the first repeat frame.
    pub repeat_start: f64,
    pub repeat_spacing: f64,
    pub repeat_frames: usize,
    /// Left offset of the repeat pass from the taught path.
    pub lateral_offset: f64,
    /// Period of a sinusoidal lateral offset; zero keeps it constant.
    pub lateral_period: f64,
    pub yaw_offset_deg: f64,
    /// Teach scans on either side of the matched vertex that form its submap.
    pub submap_half_window: usize,
    pub localization_noise: LocalizationNoise,
    pub corridor_half_width: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            waypoints: vec![[0.0, 0.0], [30.0, 0.0]],
            sensor_height: 1.0,
            teach_spacing: 1.0,
            repeat_start: 0.5,
            repeat_spacing: 2.0,
            repeat_frames: 10,
            lateral_offset: 0.4,
            lateral_period: 0.0,
            yaw_offset_deg: 2.0,
            submap_half_window: 2,
            localization_noise: LocalizationNoise::default(),
            corridor_half_width: 2.0,
        }
    }
}

impl TrajectorySpec {
    pub fn length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).sum()
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let err = |m: &str| Err(BenchError::Trajectory(m.to_string()));
        if self.waypoints.len() < 2 {
            return err("need at least two waypoints");
        }
        if self.waypoints.windows(2).any(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]) <= 0.0) {
            return err("repeated waypoint");
        }
        if !(self.teach_spacing > 0.0 && self.repeat_spacing > 0.0 && self.sensor_height > 0.0 && self.corridor_half_width > 0.0) {
            return err("spacings, sensor height and corridor half width must be positive");
        }
        if self.repeat_frames == 0 {
            return err("need at least one repeat frame");
        }
        let last = self.repeat_start + self.repeat_spacing * (self.repeat_frames - 1) as f64;
        if self.repeat_start < 0.0 || last > self.length() + 1e-9 {
            return err("repeat frames run past the path");
        }
        if !(self.localization_noise.translation >= 0.0 && self.localization_noise.yaw_deg >= 0.0) {
            return err("noise must be non-negative");
        }
        Ok(())
    }

    /// Point and heading at arc length `s`, clamped to the path.
    pub fn sample(&self, s: f64) -> ([f64; 2], f64) {
        let mut rest = s.max(0.0);
        for (n, w) in self.waypoints.windows(2).enumerate() {
            let (dx, dy) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
            let len = dx.hypot(dy);
            if rest <= len || n + 2 == self.waypoints.len() {
                let f = (rest / len).min(1.0);
                return ([w[0][0] + f * dx, w[0][1] + f * dy], dy.atan2(dx));
            }
            rest -= len;
        }
        unreachable!("validated polyline")
    }

    pub fn teach_poses(&self) -> Vec<Pose> {
        let n = (self.length() / self.teach_spacing + 1e-9).floor() as usize + 1;
        (0..n)
            .map(|i| {
                let (p, yaw) = self.sample(i as f64 * self.teach_spacing);
                Pose::from_xyz_yaw(p[0], p[1], 0.0, yaw)
            })
            .collect()
    }

    pub fn lateral_at(&self, s: f64) -> f64 {
        if self.lateral_period > 0.0 {
            self.lateral_offset * (std::f64::consts::TAU * s / self.lateral_period).sin()
        } else {
            self.lateral_offset
        }
    }

    pub fn repeat_poses_true(&self) -> Vec<Pose> {
        (0..self.repeat_frames)
            .map(|k| {
                let s = self.repeat_start + k as f64 * self.repeat_spacing;
                let (p, yaw) = self.sample(s);
                let off = self.lateral_at(s);
                let (x, y) = (p[0] - off * yaw.sin(), p[1] + off * yaw.cos());
                Pose::from_xyz_yaw(x, y, 0.0, yaw + self.yaw_offset_deg.to_radians())
            })
            .collect()
    }

    pub fn vehicle_from_sensor(&self) -> Pose {
        Pose::from_translation(0.0, 0.0, self.sensor_height)
    }

    pub fn corridor(&self) -> Corridor {
        let path = self.waypoints.iter().map(|w| Vec3::new(w[0], w[1], 0.0)).collect();
        Corridor::new(path, self.corridor_half_width).expect("validated trajectory")
    }
}

/// Everything needed to generate a benchmark apart from the trajectory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default)]
    pub ground: Ground,
    /// Present on both passes.
    #[serde(default)]
    pub objects: Vec<SceneObject>,
    /// Present on the repeat pass only.
    #[serde(default)]
    pub changes: Vec<SceneObject>,
    #[serde(default)]
    pub sensor: SensorModel,
    #[serde(default)]
    pub camera: CameraSpec,
}

impl SceneSpec {
    pub fn static_scene(&self) -> Scene {
        Scene { ground: self.ground, objects: self.objects.clone() }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let statics: BTreeSet<u32> = self.objects.iter().map(|o| o.instance_id).collect();
        if let Some(o) = self.changes.iter().find(|o| statics.contains(&o.instance_id)) {
            return Err(BenchError::InjectedId(o.instance_id));
        }
        self.static_scene().with_objects(&self.changes).validate()?;
        self.sensor.validate()?;
        self.camera.intrinsics()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub spec: SceneSpec,
    pub trajectory: TrajectorySpec,
    pub seed: u64,
    /// World from vehicle at each teach vertex.
    pub teach_poses: Vec<Pose>,
    /// Teach scans in the sensor frame, rounded to the on-disk precision.
    pub teach_scans: Vec<PointCloud>,
    /// Localization estimates of the repeat poses.
    pub repeat_poses: Vec<Pose>,
    /// Live scans in the sensor frame.
    pub live_scans: Vec<PointCloud>,
    /// Teach vertex each repeat frame localizes against.
    pub frame_teach_index: Vec<usize>,
    pub gt_masks: Vec<BinaryMask>,
    pub corridor: Corridor,
}

impl Benchmark {
    pub fn frames(&self) -> usize {
        self.live_scans.len()
    }

    pub fn vehicle_from_sensor(&self) -> Pose {
        self.trajectory.vehicle_from_sensor()
    }

    pub fn injected_ids(&self) -> BTreeSet<u32> {
        self.spec.changes.iter().map(|o| o.instance_id).collect()
    }

    /// Teach scans in the window around vertex `center`, in its vehicle frame.
    pub fn submap_at(&self, center: usize) -> PointCloud {
        let w = self.trajectory.submap_half_window;
        let lo = center.saturating_sub(w);
        let hi = (center + w).min(self.teach_poses.len() - 1);
        accumulate_submap((lo..=hi).map(|j| (&self.teach_scans[j], &self.teach_poses[j])), &self.teach_poses[center], &self.vehicle_from_sensor())
    }

    pub fn submap(&self, frame: usize) -> PointCloud {
        self.submap_at(self.frame_teach_index[frame])
    }

    /// Transform from the submap frame of `frame` into the live vehicle frame.
    pub fn vehicle_from_map(&self, frame: usize) -> Pose {
        self.repeat_poses[frame].inverse() * self.teach_poses[self.frame_teach_index[frame]]
    }
}

/// Nearest teach vertex to each pose, ties to the lower index.
pub fn match_teach_vertices(teach: &[Pose], repeat: &[Pose]) -> Vec<usize> {
    repeat
        .iter()
        .map(|r| {
            let p = r.translation();
            let mut best = (f64::INFINITY, 0);
            for (i, t) in teach.iter().enumerate() {
                let d = t.translation().distance_squared(&p);
                if d < best.0 {
                    best = (d, i);
                }
            }
            best.1
        })
        .collect()
}

/// Renders the live scan and marks measured pixels whose point belongs to `ids`.
pub fn gt_mask(view: &RenderedView, live: &PointCloud, ids: &BTreeSet<u32>) -> BinaryMask {
    let bits = view
        .point_index
        .iter()
        .enumerate()
        .map(|(i, j)| match j {
            Some(j) if view.is_measured(i) => live.points[*j as usize].instance_id.is_some_and(|id| ids.contains(&id)),
            _ => false,
        })
        .collect();
    BinaryMask::from_bits(view.width, view.height, bits)
}

/// One mask per non-ground instance among the measured pixels.
pub fn instance_masks(view: &RenderedView, live: &PointCloud) -> BTreeMap<u32, BinaryMask> {
    let mut out: BTreeMap<u32, BinaryMask> = BTreeMap::new();
    for (i, j) in view.point_index.iter().enumerate() {
        let Some(j) = j else { continue };
        if !view.is_measured(i) {
            continue;
        }
        if let Some(id) = live.points[*j as usize].instance_id.filter(|id| *id != 0) {
            out.entry(id).or_insert_with(|| BinaryMask::empty(view.width, view.height)).bits[i] = true;
        }
    }
    out
}

pub fn render_live(camera: &CameraSpec, live: &PointCloud) -> Result<RenderedView, RenderError> {
    Ok(render_view_from(live, &camera.intrinsics()?, &camera.camera_from_sensor()))
}

pub fn make_benchmark(spec: &SceneSpec, trajectory: &TrajectorySpec, seed: u64) -> Result<Benchmark, BenchError> {
    spec.validate()?;
    trajectory.validate()?;
    let t_vs = trajectory.vehicle_from_sensor();
    let teach_scene = spec.static_scene();
    let repeat_scene = teach_scene.with_objects(&spec.changes);
    let teach_poses = trajectory.teach_poses();
    let truth = trajectory.repeat_poses_true();

    let teach_scans: Vec<PointCloud> = teach_poses
        .par_iter()
        .enumerate()
        .map(|(i, p)| quantize_like_ply(&simulate_scan(&teach_scene, &(*p * t_vs), &spec.sensor, scan_seed(seed, 0, i))))
        .collect();
    let live_scans: Vec<PointCloud> = truth
        .par_iter()
        .enumerate()
        .map(|(k, p)| quantize_like_ply(&simulate_scan(&repeat_scene, &(*p * t_vs), &spec.sensor, scan_seed(seed, 1, k))))
        .collect();

    let noise = trajectory.localization_noise;
    let repeat_poses: Vec<Pose> = truth
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let mut rng = ChaCha8Rng::seed_from_u64(scan_seed(seed, 2, k));
            let mut draw = |sigma: f64| if sigma > 0.0 { Normal::new(0.0, sigma).expect("sigma > 0").sample(&mut rng) } else { 0.0 };
            let (dx, dy, dyaw) = (draw(noise.translation), draw(noise.translation), draw(noise.yaw_deg.to_radians()));
            *p * Pose::from_xyz_yaw(dx, dy, 0.0, dyaw)
        })
        .collect();
    let frame_teach_index = match_teach_vertices(&teach_poses, &repeat_poses);

    let ids: BTreeSet<u32> = spec.changes.iter().map(|o| o.instance_id).collect();
    let gt_masks = live_scans
        .iter()
        .map(|live| Ok(gt_mask(&render_live(&spec.camera, live)?, live, &ids)))
        .collect::<Result<Vec<_>, RenderError>>()?;

    Ok(Benchmark {
        spec: spec.clone(),
        trajectory: trajectory.clone(),
        seed,
        teach_poses,
        teach_scans,
        repeat_poses,
        live_scans,
        frame_teach_index,
        gt_masks,
        corridor: trajectory.corridor(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simeval::scene::Shape;

    fn cone(id: u32, x: f64, y: f64) -> SceneObject {
        SceneObject {
            instance_id: id,
            shape: Shape::Cone { bottom_radius: 0.25, top_radius: 0.03, height: 0.8 },
            position: [x, y, 0.0],
            yaw: 0.0,
            reflectivity: 0.9,
        }
    }

    fn tiny_spec(changes: Vec<SceneObject>, objects: Vec<SceneObject>) -> SceneSpec {
        SceneSpec {
            ground: Ground::default(),
            objects,
            changes,
            sensor: SensorModel { n_beams: 64, azimuth_steps: 512, ..SensorModel::default() },
            camera: CameraSpec::default(),
        }
    }

    fn tiny_traj() -> TrajectorySpec {
        TrajectorySpec { waypoints: vec![[0.0, 0.0], [10.0, 0.0]], repeat_frames: 2, repeat_spacing: 2.0, repeat_start: 0.2, ..TrajectorySpec::default() }
    }

    #[test]
    fn camera_axes() {
        let t = CameraSpec::default().camera_from_sensor();
        // sensor forward/left/up become camera +z/-x/-y
        assert!((t.transform_point(&Vec3::new(1.0, 0.0, 0.0)) - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        assert!((t.transform_point(&Vec3::new(0.0, 1.0, 0.0)) - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((t.transform_point(&Vec3::new(0.0, 0.0, 1.0)) - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
        let down = CameraSpec { pitch_deg: 10.0, ..CameraSpec::default() }.camera_from_sensor();
        // a point on the tilted axis sits on the optical axis
        let axis = Vec3::new(10f64.to_radians().cos(), 0.0, -10f64.to_radians().sin());
        let c = down.transform_point(&axis);
        assert!(c.x.abs() < 1e-12 && c.y.abs() < 1e-12 && c.z > 0.0);
    }

    #[test]
    fn trajectory_sampling() {
        let t = TrajectorySpec { waypoints: vec![[0.0, 0.0], [4.0, 0.0], [4.0, 3.0]], ..TrajectorySpec::default() };
        assert_eq!(t.length(), 7.0);
        let (p, yaw) = t.sample(5.0);
        assert!((p[0] - 4.0).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12);
        assert!((yaw - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert_eq!(t.teach_poses().len(), 8);
        let bad = TrajectorySpec { repeat_frames: 100, ..t };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn lateral_offset_moves_left() {
        let t = TrajectorySpec { yaw_offset_deg: 0.0, ..TrajectorySpec::default() };
        let p = t.repeat_poses_true()[0];
        assert!((p.translation().y - 0.4).abs() < 1e-12);
        assert!((p.translation().x - 0.5).abs() < 1e-12);
    }

    #[test]
    fn injected_ids_must_be_new() {
        let spec = tiny_spec(vec![cone(5, 5.0, 0.0)], vec![cone(5, 6.0, 3.0)]);
        assert!(matches!(make_benchmark(&spec, &tiny_traj(), 1), Err(BenchError::InjectedId(5))));
    }

    #[test]
    fn no_changes_no_ground_truth() {
        let spec = tiny_spec(vec![], vec![cone(1, 6.0, 0.5)]);
        let b = make_benchmark(&spec, &tiny_traj(), 3).unwrap();
        assert_eq!(b.frames(), 2);
        assert!(b.gt_masks.iter().all(|m| m.is_empty()));
    }

    #[test]
    fn gt_marks_exactly_injected_returns_and_skips_duplicates() {
        let spec = tiny_spec(vec![cone(101, 6.0, 0.3)], vec![cone(1, 6.0, -1.5)]);
        let b = make_benchmark(&spec, &tiny_traj(), 3).unwrap();
        let view = render_live(&b.spec.camera, &b.live_scans[0]).unwrap();
        let gt = &b.gt_masks[0];
        assert!(!gt.is_empty());
        for i in 0..view.len() {
            let id = view.point_index[i].filter(|_| view.is_measured(i)).and_then(|j| b.live_scans[0].points[j as usize].instance_id);
            assert_eq!(gt.bits[i], id == Some(101));
        }
        let inst = instance_masks(&view, &b.live_scans[0]);
        assert!(inst.contains_key(&1));
        assert!(inst[&1].bits.iter().zip(&gt.bits).all(|(a, g)| !(*a && *g)));
        // teach scans never see the injected cone
        assert!(b.teach_scans.iter().flat_map(|s| &s.points).all(|p| p.instance_id != Some(101)));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let spec = tiny_spec(vec![cone(101, 6.0, 0.3)], vec![]);
        let a = make_benchmark(&spec, &tiny_traj(), 8).unwrap();
        let b = make_benchmark(&spec, &tiny_traj(), 8).unwrap();
        assert_eq!(a, b);
        let c = make_benchmark(&spec, &tiny_traj(), 9).unwrap();
        assert_ne!(a.live_scans, c.live_scans);
    }

    #[test]
    fn submap_window_and_matching() {
        let spec = tiny_spec(vec![], vec![]);
        let b = make_benchmark(&spec, &tiny_traj(), 2).unwrap();
        assert_eq!(b.frame_teach_index, vec![0, 2]);
        let m = b.submap(0);
        let expected: usize = (0..=2).map(|j| b.teach_scans[j].len()).sum();
        assert_eq!(m.len(), expected);
    }
}
