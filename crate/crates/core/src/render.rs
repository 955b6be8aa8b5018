//! Virtual camera views of point clouds.
//!
//! Clouds are z-buffered into a pinhole (or equirectangular) image that keeps,
//! per pixel, the index of the source point. That index is what lets a 2D
//! mask be turned back into 3D points without any depth guessing.

use std::io::Cursor;
use std::path::Path;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{PointCloud, Pose, Vec3};
use crate::scalar::Real;

/// Near culling plane in meters.
pub const Z_MIN: f64 = 0.1;

/// Percentile of valid intensities used to normalize the value channel.
pub const INTENSITY_PERCENTILE: f64 = 0.98;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("field of view {0} rad outside (0, pi)")]
    InvalidFov(f64),
    #[error("image size {0}x{1} too small (need at least 2x2)")]
    InvalidSize(usize, usize),
    #[error("view dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("image encoding: {0}")]
    Image(#[from] image::ImageError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Ideal centred pinhole camera. The optical axis is camera +z, image rows
/// grow with +y and columns with +x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics<T = f64> {
    pub fu: T,
    pub fv: T,
    pub cu: T,
    pub cv: T,
    pub width: usize,
    pub height: usize,
    pub fov_h: T,
    pub fov_v: T,
}

impl<T: Real> CameraIntrinsics<T> {
    /// Focal lengths chosen so the image spans the requested fields of view.
    pub fn from_fov(width: usize, height: usize, fov_h: T, fov_v: T) -> Result<Self, RenderError> {
        if width == 0 || height == 0 {
            return Err(RenderError::InvalidSize(width, height));
        }
        for fov in [fov_h, fov_v] {
            if !(fov > T::zero() && fov < T::lit(std::f64::consts::PI)) {
                return Err(RenderError::InvalidFov(fov.as_f64()));
            }
        }
        let two = T::lit(2.0);
        let w = T::lit(width as f64);
        let h = T::lit(height as f64);
        // tan(x/2) as sin(x) / (1 + cos(x)), exact at 90 degrees
        let half_tan = |fov: T| fov.sin() / (T::one() + fov.cos());
        Ok(Self {
            fu: w / (two * half_tan(fov_h)),
            fv: h / (two * half_tan(fov_v)),
            cu: w / two,
            cv: h / two,
            width,
            height,
            fov_h,
            fov_v,
        })
    }

    /// Continuous image coordinates, or `None` behind the near plane.
    pub fn project_continuous(&self, p: &Vec3<T>) -> Option<(T, T)> {
        if !(p.z > T::lit(Z_MIN)) {
            return None;
        }
        Some((self.fu * p.x / p.z + self.cu, self.fv * p.y / p.z + self.cv))
    }

    /// Integer pixel `(u, v)` by flooring the continuous coordinates.
    pub fn project(&self, p: &Vec3<T>) -> Option<(usize, usize)> {
        let (u, v) = self.project_continuous(p)?;
        pixel_in_bounds(u, v, self.width, self.height)
    }
}

#[inline]
fn pixel_in_bounds<T: Real>(u: T, v: T, width: usize, height: usize) -> Option<(usize, usize)> {
    let w = T::lit(width as f64);
    let h = T::lit(height as f64);
    if u >= T::zero() && u < w && v >= T::zero() && v < h {
        let (ui, vi) = (u.floor().to_usize()?, v.floor().to_usize()?);
        if ui < width && vi < height {
            return Some((ui, vi));
        }
    }
    None
}

/// Image where columns are linear in azimuth `atan2(x, z)` and rows linear in
/// elevation `asin(y / |p|)`, both centred on the optical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquirectModel<T = f64> {
    pub width: usize,
    pub height: usize,
    pub fov_h: T,
    pub fov_v: T,
}

impl<T: Real> EquirectModel<T> {
    pub fn new(width: usize, height: usize, fov_h: T, fov_v: T) -> Result<Self, RenderError> {
        if width == 0 || height == 0 {
            return Err(RenderError::InvalidSize(width, height));
        }
        let tau = T::lit(std::f64::consts::TAU);
        if !(fov_h > T::zero() && fov_h <= tau) {
            return Err(RenderError::InvalidFov(fov_h.as_f64()));
        }
        if !(fov_v > T::zero() && fov_v < T::lit(std::f64::consts::PI)) {
            return Err(RenderError::InvalidFov(fov_v.as_f64()));
        }
        Ok(Self { width, height, fov_h, fov_v })
    }

    pub fn angles(p: &Vec3<T>) -> Option<(T, T)> {
        let r = p.norm();
        if !(r > T::lit(Z_MIN)) {
            return None;
        }
        Some((p.x.atan2(p.z), (p.y / r).asin()))
    }

    pub fn project(&self, p: &Vec3<T>) -> Option<(usize, usize)> {
        let (az, el) = Self::angles(p)?;
        let half = T::lit(0.5);
        let w = T::lit(self.width as f64);
        let mut u = (az / self.fov_h + half) * w;
        if self.fov_h >= T::lit(std::f64::consts::TAU) && u >= w {
            u = u - w;
        }
        let v = (el / self.fov_v + half) * T::lit(self.height as f64);
        pixel_in_bounds(u, v, self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection<T = f64> {
    Pinhole(CameraIntrinsics<T>),
    Equirect(EquirectModel<T>),
}

impl<T: Real> Projection<T> {
    pub fn project(&self, p: &Vec3<T>) -> Option<(usize, usize)> {
        match self {
            Projection::Pinhole(k) => k.project(p),
            Projection::Equirect(e) => e.project(p),
        }
    }

    /// Quantity the z-buffer minimizes: camera z for pinhole, range for equirect.
    pub fn depth(&self, p: &Vec3<T>) -> T {
        match self {
            Projection::Pinhole(_) => p.z,
            Projection::Equirect(_) => p.norm(),
        }
    }

    pub fn size(&self) -> (usize, usize) {
        match self {
            Projection::Pinhole(k) => (k.width, k.height),
            Projection::Equirect(e) => (e.width, e.height),
        }
    }
}

/// Per-pixel result of rendering a cloud. All arrays are row-major `H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView<T = f64> {
    pub width: usize,
    pub height: usize,
    /// Camera-frame z (pinhole) or range (equirect) of the retained point;
    /// the neighbour mean for interpolated pixels; zero when invalid.
    pub depth: Vec<T>,
    pub intensity: Vec<T>,
    pub valid: Vec<bool>,
    pub point_index: Vec<Option<u32>>,
    pub interpolated: Vec<bool>,
    pub projection: Projection<T>,
    /// Transform from the source cloud's frame into the camera frame.
    pub camera_from_source: Pose<T>,
}

impl<T: Real> RenderedView<T> {
    pub fn empty(projection: Projection<T>) -> Self {
        let (width, height) = projection.size();
        let n = width * height;
        Self {
            width,
            height,
            depth: vec![T::zero(); n],
            intensity: vec![T::zero(); n],
            valid: vec![false; n],
            point_index: vec![None; n],
            interpolated: vec![false; n],
            projection,
            camera_from_source: Pose::identity(),
        }
    }

    #[inline]
    pub fn idx(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixel holds a real measurement (valid and not filled in).
    #[inline]
    pub fn is_measured(&self, i: usize) -> bool {
        self.valid[i] && !self.interpolated[i]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn measured_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_measured(i)).count()
    }

    pub fn same_size(&self, o: &Self) -> Result<(), RenderError> {
        if self.width != o.width || self.height != o.height {
            return Err(RenderError::DimensionMismatch(self.width, self.height, o.width, o.height));
        }
        Ok(())
    }

    /// Source point indices of all measured pixels, in pixel order.
    pub fn retained_points(&self) -> Vec<usize> {
        self.point_index.iter().flatten().map(|&i| i as usize).collect()
    }
}

/// Bins every point into the image, keeping the smallest depth per pixel.
/// Exact depth ties keep the lower point index.
fn rasterize<T: Real>(cloud: &PointCloud<T>, projection: Projection<T>) -> RenderedView<T> {
    let mut view = RenderedView::empty(projection);
    for (j, p) in cloud.points.iter().enumerate() {
        let Some((u, v)) = projection.project(&p.position) else { continue };
        let i = view.idx(u, v);
        let d = projection.depth(&p.position);
        if !view.valid[i] || d < view.depth[i] {
            view.valid[i] = true;
            view.depth[i] = d;
            view.intensity[i] = p.intensity;
            view.point_index[i] = Some(j as u32);
        }
    }
    view
}

/// Renders a cloud already expressed in the camera frame.
pub fn render_view<T: Real>(cloud: &PointCloud<T>, k: &CameraIntrinsics<T>) -> RenderedView<T> {
    rasterize(cloud, Projection::Pinhole(*k))
}

/// Transforms `cloud` by `camera_from_source` and renders it, recording the pose.
pub fn render_view_from<T: Real>(cloud: &PointCloud<T>, k: &CameraIntrinsics<T>, camera_from_source: &Pose<T>) -> RenderedView<T> {
    let cam = camera_from_source.transform_cloud_into(cloud, "camera");
    let mut view = render_view(&cam, k);
    view.camera_from_source = *camera_from_source;
    view
}

pub fn render_equirect<T: Real>(cloud: &PointCloud<T>, model: &EquirectModel<T>) -> RenderedView<T> {
    rasterize(cloud, Projection::Equirect(*model))
}

/// Fills each invalid pixel that has at least one valid 8-neighbour with the
/// mean depth and intensity of those neighbours. Single pass: neighbours are
/// read from the input validity map only.
pub fn interpolate_gaps<T: Real>(view: &RenderedView<T>) -> RenderedView<T> {
    let mut out = view.clone();
    let (w, h) = (view.width as isize, view.height as isize);
    for v in 0..h {
        for u in 0..w {
            let i = (v * w + u) as usize;
            if view.valid[i] {
                continue;
            }
            let mut n = 0usize;
            let mut sum_d = T::zero();
            let mut sum_i = T::zero();
            for dv in -1..=1 {
                for du in -1..=1 {
                    if du == 0 && dv == 0 {
                        continue;
                    }
                    let (nu, nv) = (u + du, v + dv);
                    if nu < 0 || nv < 0 || nu >= w || nv >= h {
                        continue;
                    }
                    let j = (nv * w + nu) as usize;
                    if view.valid[j] {
                        n += 1;
                        sum_d += view.depth[j];
                        sum_i += view.intensity[j];
                    }
                }
            }
            if n > 0 {
                let inv = T::one() / T::lit(n as f64);
                out.valid[i] = true;
                out.interpolated[i] = true;
                out.depth[i] = sum_d * inv;
                out.intensity[i] = sum_i * inv;
                out.point_index[i] = None;
            }
        }
    }
    out
}

/// Nearest-rank 98th percentile over the measured pixels of all `views`,
/// floored at 1.0.
pub fn intensity_scale<T: Real>(views: &[&RenderedView<T>]) -> T {
    let mut vals: Vec<T> = views
        .iter()
        .flat_map(|v| (0..v.len()).filter(|&i| v.is_measured(i)).map(|i| v.intensity[i]))
        .collect();
    if vals.is_empty() {
        return T::one();
    }
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let rank = ((INTENSITY_PERCENTILE * vals.len() as f64).ceil() as usize).clamp(1, vals.len());
    vals[rank - 1].max(T::one())
}

/// 8-bit HSV image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HsvImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl HsvImage {
    pub fn get(&self, u: usize, v: usize) -> [u8; 3] {
        self.pixels[v * self.width + u]
    }

    pub fn value(&self, i: usize) -> u8 {
        self.pixels[i][2]
    }

    /// Standard hue-sector conversion with the hue byte spread over [0, 360).
    pub fn to_rgb(&self) -> image::RgbImage {
        let mut img = image::RgbImage::new(self.width as u32, self.height as u32);
        for (i, px) in self.pixels.iter().enumerate() {
            let (u, v) = ((i % self.width) as u32, (i / self.width) as u32);
            img.put_pixel(u, v, image::Rgb(hsv_to_rgb(px[0], px[1], px[2])));
        }
        img
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, RenderError> {
        let mut buf = Cursor::new(Vec::new());
        self.to_rgb().write_to(&mut buf, image::ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RenderError> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }
}

pub fn hsv_to_rgb(h: u8, s: u8, v: u8) -> [u8; 3] {
    let hue = h as f64 * 360.0 / 256.0;
    let s = s as f64 / 255.0;
    let v = v as f64 / 255.0;
    let c = v * s;
    let hp = hue / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |f: f64| ((f + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

#[inline]
fn unit_byte(x: f64) -> u8 {
    (255.0 * x.clamp(0.0, 1.0)).round() as u8
}

/// Hue from depth over `[0, max_range]`, constant saturation, value from
/// intensity divided by `intensity_scale`.
pub fn colorize_with_scale<T: Real>(view: &RenderedView<T>, max_range: T, intensity_scale: T) -> HsvImage {
    let pixels = (0..view.len())
        .map(|i| {
            if !view.valid[i] {
                return [0, 0, 0];
            }
            let hue = unit_byte((view.depth[i] / max_range).as_f64());
            let val = unit_byte((view.intensity[i] / intensity_scale).as_f64());
            [hue, 255, val]
        })
        .collect();
    HsvImage { width: view.width, height: view.height, pixels }
}

/// Colorizes with the intensity scale taken from this view alone.
pub fn colorize<T: Real>(view: &RenderedView<T>, max_range: T) -> HsvImage {
    colorize_with_scale(view, max_range, intensity_scale(&[view]))
}

/// Source point of a pixel; `None` for empty or interpolated pixels.
///
/// Panics if the pixel is out of bounds.
pub fn back_project<T: Real>(view: &RenderedView<T>, u: usize, v: usize) -> Option<usize> {
    assert!(u < view.width && v < view.height, "pixel ({u}, {v}) outside {}x{} view", view.width, view.height);
    view.point_index[view.idx(u, v)].map(|i| i as usize)
}

/// Debug dump of a view. Per-pixel arrays are base64 little-endian `f32`;
/// `point_index` uses -1 for "none".
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewSidecar {
    pub width: usize,
    pub height: usize,
    pub projection: String,
    pub camera_from_source: [f64; 12],
    pub depth: String,
    pub intensity: String,
    pub valid: String,
    pub interpolated: String,
    pub point_index: String,
}

fn b64_f32(vals: impl Iterator<Item = f32>) -> String {
    let bytes: Vec<u8> = vals.flat_map(|v| v.to_le_bytes()).collect();
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn decode_f32_array(s: &str) -> Option<Vec<f32>> {
    let bytes = base64::engine::general_purpose::STANDARD.decode(s).ok()?;
    if bytes.len() % 4 != 0 {
        return None;
    }
    Some(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

impl<T: Real> RenderedView<T> {
    pub fn sidecar(&self) -> ViewSidecar {
        let flag = |b: &bool| if *b { 1.0f32 } else { 0.0 };
        ViewSidecar {
            width: self.width,
            height: self.height,
            projection: match self.projection {
                Projection::Pinhole(_) => "pinhole".into(),
                Projection::Equirect(_) => "equirect".into(),
            },
            camera_from_source: self.camera_from_source.to_rows_3x4().map(|v| v.as_f64()),
            depth: b64_f32(self.depth.iter().map(|v| v.as_f64() as f32)),
            intensity: b64_f32(self.intensity.iter().map(|v| v.as_f64() as f32)),
            valid: b64_f32(self.valid.iter().map(flag)),
            interpolated: b64_f32(self.interpolated.iter().map(flag)),
            point_index: b64_f32(self.point_index.iter().map(|p| p.map_or(-1.0, |i| i as f32))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::LidarPoint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn deg(d: f64) -> f64 {
        d.to_radians()
    }

    fn paper_camera() -> CameraIntrinsics {
        CameraIntrinsics::from_fov(256, 128, deg(90.0), deg(45.0)).unwrap()
    }

    #[test]
    fn intrinsics_examples() {
        let k = paper_camera();
        assert_eq!(k.fu, 128.0);
        assert_eq!(k.cu, 128.0);
        assert_eq!(k.cv, 64.0);
        assert!((k.fv - 154.51).abs() < 0.01);
        let k2 = CameraIntrinsics::from_fov(2, 2, deg(90.0), deg(90.0)).unwrap();
        assert!((k2.fu - 1.0).abs() < 1e-12);
    }

    #[test]
    fn focal_length_matches_tangent_form() {
        for d in 1..180 {
            let f = deg(d as f64);
            let k = CameraIntrinsics::from_fov(100, 100, f, f).unwrap();
            let expected = 100.0 / (2.0 * (f / 2.0).tan());
            assert!((k.fu - expected).abs() <= 1e-12 * expected, "{d} deg");
        }
    }

    #[test]
    fn intrinsics_reject_bad_inputs() {
        assert!(matches!(CameraIntrinsics::from_fov(256, 128, 0.0, 1.0), Err(RenderError::InvalidFov(_))));
        assert!(matches!(
            CameraIntrinsics::from_fov(256, 128, 1.0, std::f64::consts::PI),
            Err(RenderError::InvalidFov(_))
        ));
        assert!(matches!(CameraIntrinsics::from_fov(0, 128, 1.0, 1.0), Err(RenderError::InvalidSize(0, 128))));
    }

    #[test]
    fn projection_examples() {
        let k = paper_camera();
        assert_eq!(k.project(&Vec3::new(0.0, 0.0, 10.0)), Some((128, 64)));
        assert_eq!(k.project_continuous(&Vec3::new(0.5, 0.0, 1.0)), Some((192.0, 64.0)));
        assert_eq!(k.project(&Vec3::new(0.5, 0.0, 1.0)), Some((192, 64)));
        assert_eq!(k.project(&Vec3::new(1.0, 1.0, -2.0)), None);
        assert_eq!(k.project(&Vec3::new(0.0, 0.0, 0.05)), None);
        // Right edge of the image is exclusive.
        assert_eq!(k.project(&Vec3::new(1.0, 0.0, 1.0)), None);
    }

    fn cloud(pts: &[(f64, f64, f64, f64)]) -> PointCloud {
        PointCloud::from_points(pts.iter().map(|&(x, y, z, i)| LidarPoint::new(x, y, z, i)).collect(), "camera")
    }

    #[test]
    fn render_single_and_occluded_points() {
        let k = paper_camera();
        let v = render_view(&cloud(&[(0.0, 0.0, 5.0, 1.0)]), &k);
        assert_eq!(v.valid_count(), 1);
        let i = v.idx(128, 64);
        assert_eq!(v.depth[i], 5.0);

        let v = render_view(&cloud(&[(0.0, 0.0, 10.0, 1.0), (0.0, 0.0, 5.0, 2.0)]), &k);
        assert_eq!(v.valid_count(), 1);
        assert_eq!(v.depth[i], 5.0);
        assert_eq!(v.point_index[i], Some(1));
        assert_eq!(v.intensity[i], 2.0);

        // equal depth keeps the lower index
        let v = render_view(&cloud(&[(0.0, 0.0, 5.0, 1.0), (0.0, 0.0, 5.0, 2.0)]), &k);
        assert_eq!(v.point_index[i], Some(0));

        let v = render_view(&PointCloud::<f64>::new("camera"), &k);
        assert_eq!(v.valid_count(), 0);
    }

    #[test]
    fn interpolation_examples() {
        let k = CameraIntrinsics::from_fov(3, 3, deg(90.0), deg(90.0)).unwrap();
        let mut v = RenderedView::empty(Projection::Pinhole(k));
        for i in 0..9 {
            if i != 4 {
                v.valid[i] = true;
                v.depth[i] = 5.0;
                v.intensity[i] = 10.0;
                v.point_index[i] = Some(i as u32);
            }
        }
        let filled = interpolate_gaps(&v);
        assert!(filled.valid[4] && filled.interpolated[4]);
        assert_eq!((filled.depth[4], filled.intensity[4]), (5.0, 10.0));
        assert_eq!(filled.point_index[4], None);
        assert_eq!(interpolate_gaps(&filled), filled);

        let lonely = RenderedView::<f64>::empty(Projection::Pinhole(k));
        assert_eq!(interpolate_gaps(&lonely).valid_count(), 0);
    }

    #[test]
    fn interpolation_is_single_pass() {
        let k = CameraIntrinsics::from_fov(5, 2, deg(90.0), deg(90.0)).unwrap();
        let mut v = RenderedView::empty(Projection::Pinhole(k));
        v.valid[0] = true;
        v.depth[0] = 2.0;
        v.point_index[0] = Some(0);
        let f = interpolate_gaps(&v);
        // only the direct neighbours of pixel 0 get filled
        assert_eq!(f.valid, vec![true, true, false, false, false, true, true, false, false, false]);
    }

    #[test]
    fn colorize_examples() {
        let k = CameraIntrinsics::from_fov(4, 2, deg(90.0), deg(90.0)).unwrap();
        let mut v = RenderedView::empty(Projection::Pinhole(k));
        for (i, d) in [0.0, 30.0, 15.0, 45.0].into_iter().enumerate() {
            v.valid[i] = true;
            v.depth[i] = d;
            v.intensity[i] = 2.0;
            v.point_index[i] = Some(i as u32);
        }
        let img = colorize_with_scale(&v, 30.0, 4.0);
        assert_eq!(img.pixels[0], [0, 255, 128]);
        assert_eq!(img.pixels[1][0], 255);
        assert!((img.pixels[2][0] as i32 - 128).abs() <= 1);
        assert_eq!(img.pixels[3][0], 255);
        assert_eq!(img.pixels[5], [0, 0, 0]);
    }

    #[test]
    fn intensity_scale_percentile_and_floor() {
        let k = CameraIntrinsics::from_fov(10, 10, deg(90.0), deg(90.0)).unwrap();
        let mut v = RenderedView::empty(Projection::Pinhole(k));
        for i in 0..100 {
            v.valid[i] = true;
            v.intensity[i] = (i + 1) as f64;
            v.point_index[i] = Some(i as u32);
        }
        assert_eq!(intensity_scale(&[&v]), 98.0);
        for i in 0..100 {
            v.intensity[i] = 0.01;
        }
        assert_eq!(intensity_scale(&[&v]), 1.0);
    }

    #[test]
    fn hsv_conversion_primaries() {
        assert_eq!(hsv_to_rgb(0, 255, 255), [255, 0, 0]);
        assert_eq!(hsv_to_rgb(0, 0, 0), [0, 0, 0]);
        // 120 degrees is byte 85.33; the nearest byte lands close to pure green
        let g = hsv_to_rgb(85, 255, 255);
        assert!(g[1] == 255 && g[0] < 5 && g[2] == 0);
    }

    #[test]
    fn back_project_roundtrip_random() {
        let k = paper_camera();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<_> = (0..5000)
            .map(|_| (rng.gen_range(-20.0..20.0), rng.gen_range(-10.0..10.0), rng.gen_range(-5.0..30.0), 1.0))
            .collect();
        let c = cloud(&pts);
        let v = interpolate_gaps(&render_view(&c, &k));
        for vv in 0..v.height {
            for uu in 0..v.width {
                if let Some(j) = back_project(&v, uu, vv) {
                    assert_eq!(k.project(&c.points[j].position), Some((uu, vv)));
                } else if v.valid[v.idx(uu, vv)] {
                    assert!(v.interpolated[v.idx(uu, vv)]);
                }
            }
        }
    }

    #[test]
    #[should_panic]
    fn back_project_out_of_bounds_panics() {
        let v = RenderedView::<f64>::empty(Projection::Pinhole(paper_camera()));
        back_project(&v, 256, 0);
    }

    #[test]
    fn equirect_examples() {
        let m = EquirectModel::new(360, 90, deg(360.0), deg(45.0)).unwrap();
        assert_eq!(m.project(&Vec3::new(0.0, 0.0, 5.0)), Some((180, 45)));
        let a = m.project(&Vec3::new(deg(10.5f64).sin(), 0.0, deg(10.5f64).cos())).unwrap();
        let b = m.project(&Vec3::new(deg(20.5f64).sin(), 0.0, deg(20.5f64).cos())).unwrap();
        assert_eq!(b.0 - a.0, a.0 - 180);
        // behind the camera is still in view for a full revolution
        assert!(m.project(&Vec3::new(0.0, 0.0, -5.0)).is_some());
        let v = render_equirect(&cloud(&[(0.0, 0.0, 5.0, 1.0), (0.0, 0.0, 3.0, 1.0)]), &m);
        assert_eq!(v.valid_count(), 1);
        assert_eq!(v.depth[v.idx(180, 45)], 3.0);
    }

    #[test]
    fn equirect_bins_match_angle_oracle() {
        let m = EquirectModel::new(512, 64, deg(180.0), deg(45.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let p: Vec3<f64> = Vec3::new(rng.gen_range(-10.0..10.0), rng.gen_range(-4.0..4.0), rng.gen_range(-10.0..10.0));
            let az = p.x.atan2(p.z).to_degrees();
            let el = (p.y / p.norm()).asin().to_degrees();
            let col = ((az + 90.0) / 180.0 * 512.0).floor();
            let row = ((el + 22.5) / 45.0 * 64.0).floor();
            let expected = if (0.0..512.0).contains(&col) && (0.0..64.0).contains(&row) {
                Some((col as usize, row as usize))
            } else {
                None
            };
            assert_eq!(m.project(&p), expected, "point {p:?}");
        }
    }

    #[test]
    fn sidecar_encodes_arrays() {
        let v = render_view(&cloud(&[(0.0, 0.0, 5.0, 1.5)]), &paper_camera());
        let s = v.sidecar();
        let depth = decode_f32_array(&s.depth).unwrap();
        assert_eq!(depth.len(), 256 * 128);
        assert_eq!(depth[v.idx(128, 64)], 5.0);
        let idx = decode_f32_array(&s.point_index).unwrap();
        assert_eq!(idx[0], -1.0);
        assert_eq!(idx[v.idx(128, 64)], 0.0);
    }

    #[test]
    fn renders_in_f32() {
        let k = CameraIntrinsics::<f32>::from_fov(256, 128, 90f32.to_radians(), 45f32.to_radians()).unwrap();
        let c = PointCloud::from_points(vec![LidarPoint::new(0.0f32, 0.0, 4.0, 1.0)], "camera");
        let v = render_view(&c, &k);
        assert_eq!(back_project(&v, 128, 64), Some(0));
    }
}
