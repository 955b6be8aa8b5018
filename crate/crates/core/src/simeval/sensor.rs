//! Spinning multi-beam LiDAR model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scene::Scene;
use crate::geom::{LidarPoint, PointCloud, Pose, Vec3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SensorError {
    #[error("need at least 2 beams, got {0}")]
    Beams(usize),
    #[error("need at least 4 azimuth steps, got {0}")]
    Azimuth(usize),
    #[error("invalid sensor parameter: {0}")]
    Parameter(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorModel {
    pub n_beams: usize,
    pub fov_v_deg: f64,
    pub azimuth_steps: usize,
    pub min_range: f64,
    pub max_range: f64,
    pub range_noise: f64,
    /// Reference range of the inverse-square falloff.
    pub r0: f64,
    /// Scale applied to returned intensities.
    pub intensity_gain: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            n_beams: 128,
            fov_v_deg: 45.0,
            azimuth_steps: 1024,
            min_range: 0.3,
            max_range: 60.0,
            range_noise: 0.01,
            r0: 1.0,
            intensity_gain: 1000.0,
        }
    }
}

impl SensorModel {
    pub fn validate(&self) -> Result<(), SensorError> {
        if self.n_beams < 2 {
            return Err(SensorError::Beams(self.n_beams));
        }
        if self.azimuth_steps < 4 {
            return Err(SensorError::Azimuth(self.azimuth_steps));
        }
        if !(self.fov_v_deg > 0.0 && self.fov_v_deg < 180.0) {
            return Err(SensorError::Parameter("fov_v_deg"));
        }
        if !(self.min_range >= 0.0 && self.max_range > self.min_range && self.max_range.is_finite()) {
            return Err(SensorError::Parameter("range limits"));
        }
        if !(self.range_noise >= 0.0 && self.range_noise.is_finite()) {
            return Err(SensorError::Parameter("range_noise"));
        }
        if !(self.r0 > 0.0 && self.intensity_gain > 0.0) {
            return Err(SensorError::Parameter("intensity model"));
        }
        Ok(())
    }

    /// Elevation of `beam`, from the top of the field of view down.
    pub fn elevation(&self, beam: usize) -> f64 {
        let half = self.fov_v_deg.to_radians() / 2.0;
        half - 2.0 * half * beam as f64 / (self.n_beams - 1) as f64
    }

    pub fn azimuth(&self, step: usize) -> f64 {
        std::f64::consts::TAU * step as f64 / self.azimuth_steps as f64
    }

    /// Unit ray in the sensor frame (x forward, y left, z up).
    pub fn ray(&self, beam: usize, step: usize) -> Vec3 {
        let (el, az) = (self.elevation(beam), self.azimuth(step));
        Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    }

    pub fn intensity(&self, reflectivity: f64, cos_incidence: f64, range: f64) -> f64 {
        let r = self.r0 / range;
        self.intensity_gain * reflectivity * cos_incidence.clamp(0.0, 1.0) * r * r
    }
}

/// One revolution from `world_from_sensor`, returned in the sensor frame.
///
/// Points are ordered by beam then azimuth. Each beam draws its noise from
/// its own ChaCha stream, so the result does not depend on thread count.
pub fn simulate_scan(scene: &Scene, world_from_sensor: &Pose, model: &SensorModel, seed: u64) -> PointCloud {
    let origin = world_from_sensor.translation();
    let noise = Normal::new(0.0, model.range_noise).expect("validated noise");
    let beams: Vec<Vec<LidarPoint>> = (0..model.n_beams)
        .into_par_iter()
        .map(|beam| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(beam as u64);
            let mut out = Vec::new();
            for step in 0..model.azimuth_steps {
                let ds = model.ray(beam, step);
                let dw = world_from_sensor.rotate(&ds);
                let eps: f64 = if model.range_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                let Some(hit) = scene.cast(&origin, &dw, model.min_range, model.max_range) else { continue };
                let range = (hit.t + eps).max(model.min_range);
                let cos = -hit.normal.dot(&dw);
                let intensity = model.intensity(hit.reflectivity, cos, range);
                out.push(LidarPoint::new(ds.x * range, ds.y * range, ds.z * range, intensity).with_instance(hit.instance_id));
            }
            out
        })
        .collect();
    PointCloud::from_points(beams.into_iter().flatten().collect(), "sensor")
}

/// Accumulates scans taken at `world_from_vehicle[j]` for `j` in `window`,
/// expressed in the vehicle frame of `world_from_vehicle[center]`.
pub fn accumulate_submap<'a>(
    scans: impl IntoIterator<Item = (&'a PointCloud, &'a Pose)>,
    world_from_center: &Pose,
    vehicle_from_sensor: &Pose,
) -> PointCloud {
    let center_from_world = world_from_center.inverse();
    let mut map = PointCloud::new("map");
    for (scan, world_from_vehicle) in scans {
        let t = center_from_world * *world_from_vehicle * *vehicle_from_sensor;
        map.extend_from(&t.transform_cloud(scan));
    }
    map
}

/// Simulates the teach scans in `window` and accumulates them about `center`.
pub fn build_submap(
    scene: &Scene,
    world_from_vehicle: &[Pose],
    center: usize,
    window: std::ops::RangeInclusive<usize>,
    vehicle_from_sensor: &Pose,
    model: &SensorModel,
    seed: u64,
) -> PointCloud {
    let scans: Vec<(PointCloud, Pose)> = window
        .filter(|j| *j < world_from_vehicle.len())
        .map(|j| {
            let pose = world_from_vehicle[j];
            (simulate_scan(scene, &(pose * *vehicle_from_sensor), model, scan_seed(seed, 0, j)), pose)
        })
        .collect();
    accumulate_submap(scans.iter().map(|(s, p)| (s, p)), &world_from_vehicle[center], vehicle_from_sensor)
}

/// Seed for scan `index` of `pass` (0 teach, 1 repeat).
pub fn scan_seed(seed: u64, pass: u64, index: usize) -> u64 {
    // splitmix64 finalizer over the packed triple
    let mut z = seed ^ (pass << 56) ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
