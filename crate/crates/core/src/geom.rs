//! Rigid-body poses, small fixed-size linear algebra and point clouds.
//!
//! Frame convention: a pose `T_ab` maps coordinates expressed in frame `b`
//! into frame `a`, so `T_ac = T_ab * T_bc`.

use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("rotation is not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("rotation has non-positive determinant {0}")]
    Reflection(f64),
    #[error("bottom row of homogeneous matrix must be [0 0 0 1]")]
    BadBottomRow,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("negative intensity {0}")]
    NegativeIntensity(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3<T = f64> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn dot(&self, o: &Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(&self, o: &Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(&self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(&self) -> T {
        self.norm_squared().sqrt()
    }

    #[inline]
    pub fn distance_squared(&self, o: &Self) -> T {
        (*self - *o).norm_squared()
    }

    #[inline]
    pub fn distance(&self, o: &Self) -> T {
        self.distance_squared(o).sqrt()
    }

    pub fn normalized(&self) -> Self {
        *self * (T::one() / self.norm())
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn component_min(&self, o: &Self) -> Self {
        Self::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn component_max(&self, o: &Self) -> Self {
        Self::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn to_array(&self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn cast<U: Real>(&self) -> Vec3<U> {
        Vec3::new(
            U::lit(self.x.as_f64()),
            U::lit(self.y.as_f64()),
            U::lit(self.z.as_f64()),
        )
    }
}

impl<T: Real> Index<usize> for Vec3<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3<T = f64> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> Mat3<T> {
    pub fn from_rows(m: [[T; 3]; 3]) -> Self {
        Self { m }
    }

    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self::from_rows([[o, z, z], [z, o, z], [z, z, o]])
    }

    pub fn rot_x(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self::from_rows([[o, z, z], [z, c, -s], [z, s, c]])
    }

    pub fn rot_y(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self::from_rows([[c, z, s], [z, o, z], [-s, z, c]])
    }

    pub fn rot_z(angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let (o, z) = (T::one(), T::zero());
        Self::from_rows([[c, -s, z], [s, c, z], [z, z, o]])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.m;
        Self::from_rows([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn determinant(&self) -> T {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.determinant();
        if det == T::zero() || !det.is_finite() {
            return None;
        }
        let m = &self.m;
        let inv = T::one() / det;
        let c = |a: usize, b: usize, c: usize, d: usize| m[a][b] * m[c][d];
        Some(Self::from_rows([
            [
                (c(1, 1, 2, 2) - c(1, 2, 2, 1)) * inv,
                (c(0, 2, 2, 1) - c(0, 1, 2, 2)) * inv,
                (c(0, 1, 1, 2) - c(0, 2, 1, 1)) * inv,
            ],
            [
                (c(1, 2, 2, 0) - c(1, 0, 2, 2)) * inv,
                (c(0, 0, 2, 2) - c(0, 2, 2, 0)) * inv,
                (c(0, 2, 1, 0) - c(0, 0, 1, 2)) * inv,
            ],
            [
                (c(1, 0, 2, 1) - c(1, 1, 2, 0)) * inv,
                (c(0, 1, 2, 0) - c(0, 0, 2, 1)) * inv,
                (c(0, 0, 1, 1) - c(0, 1, 1, 0)) * inv,
            ],
        ]))
    }

    pub fn mul_vec(&self, v: &Vec3<T>) -> Vec3<T> {
        let m = &self.m;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        let mut d = T::zero();
        for r in 0..3 {
            for c in 0..3 {
                d = d.max((self.m[r][c] - o.m[r][c]).abs());
            }
        }
        d
    }

    fn scale(&self, s: T) -> Self {
        let mut out = *self;
        for row in out.m.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        out
    }

    fn add_mat(&self, o: &Self) -> Self {
        let mut out = *self;
        for r in 0..3 {
            for c in 0..3 {
                out.m[r][c] += o.m[r][c];
            }
        }
        out
    }

    /// Orthonormal factor of the polar decomposition, by Newton iteration
    /// `R <- (R + R^-T) / 2`. Input must be non-singular.
    pub fn polar_rotation(&self) -> Option<Self> {
        let mut r = *self;
        for _ in 0..32 {
            let inv_t = r.inverse()?.transpose();
            let next = r.add_mat(&inv_t).scale(T::lit(0.5));
            let delta = next.max_abs_diff(&r);
            r = next;
            if delta <= T::epsilon() * T::lit(4.0) {
                break;
            }
        }
        Some(r)
    }

    /// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
    ///
    /// Returns eigenvalues in ascending order with matching unit eigenvectors.
    pub fn symmetric_eigen(&self) -> ([T; 3], [Vec3<T>; 3]) {
        let mut a = self.m;
        let mut v = Mat3::<T>::identity().m;
        for _ in 0..64 {
            let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
            if off <= T::epsilon() * T::epsilon() {
                break;
            }
            for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
                if a[p][q].abs() <= T::min_positive_value() {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (T::lit(2.0) * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..3 {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..3 {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
        let mut order = [0usize, 1, 2];
        order.sort_by(|&i, &j| a[i][i].partial_cmp(&a[j][j]).unwrap_or(std::cmp::Ordering::Equal));
        let vals = order.map(|i| a[i][i]);
        let vecs = order.map(|i| Vec3::new(v[0][i], v[1][i], v[2][i]));
        (vals, vecs)
    }
}

impl<T: Real> Mul for Mat3<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut out = [[T::zero(); 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.m[r][0] * o.m[0][c] + self.m[r][1] * o.m[1][c] + self.m[r][2] * o.m[2][c];
            }
        }
        Self::from_rows(out)
    }
}

/// Rigid transform in SE(3).
///
/// Only constructed through validated constructors, so the rotation block is
/// always orthonormal with positive determinant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T = f64> {
    rotation: Mat3<T>,
    translation: Vec3<T>,
}

impl<T: Real> Default for Pose<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Pose<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zero(),
        }
    }

    pub fn from_translation(x: T, y: T, z: T) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::new(x, y, z),
        }
    }

    pub fn rot_x(angle: T) -> Self {
        Self { rotation: Mat3::rot_x(angle), translation: Vec3::zero() }
    }

    pub fn rot_y(angle: T) -> Self {
        Self { rotation: Mat3::rot_y(angle), translation: Vec3::zero() }
    }

    pub fn rot_z(angle: T) -> Self {
        Self { rotation: Mat3::rot_z(angle), translation: Vec3::zero() }
    }

    /// Planar pose: yaw about +z then translation.
    pub fn from_xyz_yaw(x: T, y: T, z: T, yaw: T) -> Self {
        Self {
            rotation: Mat3::rot_z(yaw),
            translation: Vec3::new(x, y, z),
        }
    }

    /// Roll-pitch-yaw (applied as `Rz(yaw) * Ry(pitch) * Rx(roll)`).
    pub fn from_xyz_rpy(x: T, y: T, z: T, roll: T, pitch: T, yaw: T) -> Self {
        Self {
            rotation: Mat3::rot_z(yaw) * Mat3::rot_y(pitch) * Mat3::rot_x(roll),
            translation: Vec3::new(x, y, z),
        }
    }

    /// Validates `rotation` within the scalar's rotation tolerance and then
    /// snaps it onto SO(3) with a polar decomposition.
    pub fn from_rotation_translation(rotation: Mat3<T>, translation: Vec3<T>) -> Result<Self, GeomError> {
        if rotation.m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeomError::NonFinite("rotation"));
        }
        if !translation.is_finite() {
            return Err(GeomError::NonFinite("translation"));
        }
        let dev = (rotation.transpose() * rotation).max_abs_diff(&Mat3::identity());
        if dev > T::rotation_tolerance() {
            return Err(GeomError::NotOrthonormal(dev.as_f64()));
        }
        let det = rotation.determinant();
        if det <= T::zero() {
            return Err(GeomError::Reflection(det.as_f64()));
        }
        let rotation = rotation
            .polar_rotation()
            .ok_or(GeomError::NotOrthonormal(dev.as_f64()))?;
        Ok(Self { rotation, translation })
    }

    /// Row-major 3x4 `[R | t]`.
    pub fn from_rows_3x4(v: &[T; 12]) -> Result<Self, GeomError> {
        let rotation = Mat3::from_rows([[v[0], v[1], v[2]], [v[4], v[5], v[6]], [v[8], v[9], v[10]]]);
        Self::from_rotation_translation(rotation, Vec3::new(v[3], v[7], v[11]))
    }

    /// Row-major 4x4 homogeneous matrix.
    pub fn from_matrix_4x4(v: &[T; 16]) -> Result<Self, GeomError> {
        let (z, o) = (T::zero(), T::one());
        if v[12] != z || v[13] != z || v[14] != z || v[15] != o {
            return Err(GeomError::BadBottomRow);
        }
        let mut rows = [T::zero(); 12];
        rows.copy_from_slice(&v[..12]);
        Self::from_rows_3x4(&rows)
    }

    pub fn rotation(&self) -> &Mat3<T> {
        &self.rotation
    }

    pub fn translation(&self) -> Vec3<T> {
        self.translation
    }

    pub fn to_rows_3x4(&self) -> [T; 12] {
        let r = &self.rotation.m;
        let t = &self.translation;
        [
            r[0][0], r[0][1], r[0][2], t.x, r[1][0], r[1][1], r[1][2], t.y, r[2][0], r[2][1], r[2][2], t.z,
        ]
    }

    pub fn matrix(&self) -> [[T; 4]; 4] {
        let v = self.to_rows_3x4();
        let (z, o) = (T::zero(), T::one());
        [
            [v[0], v[1], v[2], v[3]],
            [v[4], v[5], v[6], v[7]],
            [v[8], v[9], v[10], v[11]],
            [z, z, z, o],
        ]
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation.mul_vec(&other.translation) + self.translation,
        }
    }

    /// `[R^T, -R^T t]`
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -rt.mul_vec(&self.translation),
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(p) + self.translation
    }

    #[inline]
    pub fn rotate(&self, v: &Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(v)
    }

    pub fn transform_cloud(&self, cloud: &PointCloud<T>) -> PointCloud<T> {
        self.transform_cloud_into(cloud, cloud.frame.clone())
    }

    pub fn transform_cloud_into(&self, cloud: &PointCloud<T>, frame: impl Into<String>) -> PointCloud<T> {
        PointCloud {
            points: cloud
                .points
                .iter()
                .map(|p| LidarPoint {
                    position: self.transform_point(&p.position),
                    ..*p
                })
                .collect(),
            frame: frame.into(),
        }
    }

    /// Largest absolute entry difference of the 3x4 blocks.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.to_rows_3x4()
            .iter()
            .zip(other.to_rows_3x4().iter())
            .fold(T::zero(), |acc, (a, b)| acc.max((*a - *b).abs()))
    }

    /// Planar heading of the x axis.
    pub fn yaw(&self) -> T {
        self.rotation.m[1][0].atan2(self.rotation.m[0][0])
    }

    pub fn cast<U: Real>(&self) -> Pose<U> {
        let v = self.to_rows_3x4().map(|x| U::lit(x.as_f64()));
        let rotation = Mat3::from_rows([[v[0], v[1], v[2]], [v[4], v[5], v[6]], [v[8], v[9], v[10]]]);
        Pose {
            rotation: rotation.polar_rotation().unwrap_or(rotation),
            translation: Vec3::new(v[3], v[7], v[11]),
        }
    }
}

impl<T: Real> Mul for Pose<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        self.compose(&o)
    }
}

impl<T: Real> Mul<Vec3<T>> for Pose<T> {
    type Output = Vec3<T>;
    fn mul(self, p: Vec3<T>) -> Vec3<T> {
        self.transform_point(&p)
    }
}

/// Free-function form of [`Pose::compose`].
pub fn compose<T: Real>(a: &Pose<T>, b: &Pose<T>) -> Pose<T> {
    a.compose(b)
}

pub fn invert<T: Real>(t: &Pose<T>) -> Pose<T> {
    t.inverse()
}

pub fn transform_cloud<T: Real>(t: &Pose<T>, cloud: &PointCloud<T>) -> PointCloud<T> {
    t.transform_cloud(cloud)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint<T = f64> {
    pub position: Vec3<T>,
    pub intensity: T,
    /// Ground-truth object label; only present in simulated data.
    pub instance_id: Option<u32>,
}

impl<T: Real> LidarPoint<T> {
    pub fn try_new(position: Vec3<T>, intensity: T, instance_id: Option<u32>) -> Result<Self, GeomError> {
        if !position.is_finite() {
            return Err(GeomError::NonFinite("point position"));
        }
        if !intensity.is_finite() {
            return Err(GeomError::NonFinite("intensity"));
        }
        if intensity < T::zero() {
            return Err(GeomError::NegativeIntensity(intensity.as_f64()));
        }
        Ok(Self { position, intensity, instance_id })
    }

    /// Panics on non-finite coordinates or negative intensity.
    pub fn new(x: T, y: T, z: T, intensity: T) -> Self {
        Self::try_new(Vec3::new(x, y, z), intensity, None).expect("valid lidar point")
    }

    pub fn with_instance(mut self, id: u32) -> Self {
        self.instance_id = Some(id);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud<T = f64> {
    pub points: Vec<LidarPoint<T>>,
    pub frame: String,
}

impl<T: Real> PointCloud<T> {
    pub fn new(frame: impl Into<String>) -> Self {
        Self { points: Vec::new(), frame: frame.into() }
    }

    pub fn from_points(points: Vec<LidarPoint<T>>, frame: impl Into<String>) -> Self {
        Self { points, frame: frame.into() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3<T>> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn push(&mut self, p: LidarPoint<T>) {
        self.points.push(p);
    }

    pub fn extend_from(&mut self, other: &PointCloud<T>) {
        self.points.extend_from_slice(&other.points);
    }

    pub fn cast<U: Real>(&self) -> PointCloud<U> {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| LidarPoint {
                    position: p.position.cast(),
                    intensity: U::lit(p.intensity.as_f64()),
                    instance_id: p.instance_id,
                })
                .collect(),
            frame: self.frame.clone(),
        }
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb<T = f64> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Real> Aabb<T> {
    pub fn from_point(p: Vec3<T>) -> Self {
        Self { min: p, max: p }
    }

    pub fn from_points<'a>(mut pts: impl Iterator<Item = &'a Vec3<T>>) -> Option<Self> {
        let first = *pts.next()?;
        Some(pts.fold(Self::from_point(first), |b, p| b.expanded(p)))
    }

    pub fn expanded(&self, p: &Vec3<T>) -> Self {
        Self { min: self.min.component_min(p), max: self.max.component_max(p) }
    }

    pub fn union(&self, o: &Self) -> Self {
        Self { min: self.min.component_min(&o.min), max: self.max.component_max(&o.max) }
    }

    pub fn contains(&self, p: &Vec3<T>) -> bool {
        p.x >= self.min.x
            && p.y >= self.min.y
            && p.z >= self.min.z
            && p.x <= self.max.x
            && p.y <= self.max.y
            && p.z <= self.max.z
    }

    pub fn inflated(&self, margin: T) -> Self {
        let m = Vec3::new(margin, margin, margin);
        Self { min: self.min - m, max: self.max + m }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn matmul4(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for r in 0..4 {
            for c in 0..4 {
                out[r][c] = (0..4).map(|k| a[r][k] * b[k][c]).sum();
            }
        }
        out
    }

    #[test]
    fn compose_identity_and_inverse() {
        let t = Pose::from_xyz_rpy(1.0, -2.0, 0.5, 0.1, -0.3, 2.0);
        assert_eq!(Pose::identity().compose(&t), t);
        let i = t.compose(&t.inverse());
        assert!(i.max_abs_diff(&Pose::identity()) < 1e-9);
    }

    #[test]
    fn compose_translations_matches_matrix_product() {
        let a = Pose::from_translation(1.0, 0.0, 0.0);
        let b = Pose::from_translation(0.0, 2.0, 0.0);
        let expected = matmul4(&a.matrix(), &b.matrix());
        assert_eq!(a.compose(&b).matrix(), expected);
        assert_eq!(a * b, Pose::from_translation(1.0, 2.0, 0.0));
    }

    #[test]
    fn inverse_cases() {
        assert_eq!(Pose::<f64>::identity().inverse(), Pose::identity());
        assert_eq!(
            Pose::from_translation(3.0, 0.0, 0.0).inverse(),
            Pose::from_translation(-3.0, -0.0, -0.0)
        );
        let p = Pose::rot_z(FRAC_PI_2).inverse() * Vec3::new(1.0, 0.0, 0.0);
        assert!((p - Vec3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn transform_cloud_examples() {
        let mut c = PointCloud::new("s");
        c.push(LidarPoint::new(1.0, 1.0, 1.0, 7.0).with_instance(3));
        assert_eq!(Pose::identity().transform_cloud(&c), c);
        let moved = Pose::from_translation(0.0, 0.0, 5.0).transform_cloud(&c);
        assert_eq!(moved.points[0].position, Vec3::new(1.0, 1.0, 6.0));
        assert_eq!(moved.points[0].instance_id, Some(3));

        let mut c = PointCloud::new("s");
        c.push(LidarPoint::new(1.0, 0.0, 0.0, 4.0));
        let r = Pose::rot_z(FRAC_PI_2).transform_cloud(&c);
        assert!((r.points[0].position - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
        assert_eq!(r.points[0].intensity, 4.0);
    }

    #[test]
    fn rejects_non_rotations() {
        let bad = [2.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        assert!(matches!(Pose::from_rows_3x4(&bad), Err(GeomError::NotOrthonormal(_))));
        let mirror = [-1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        assert!(matches!(Pose::from_rows_3x4(&mirror), Err(GeomError::Reflection(_))));
        let mut m16 = [0.0; 16];
        m16[0] = 1.0;
        m16[5] = 1.0;
        m16[10] = 1.0;
        assert_eq!(Pose::from_matrix_4x4(&m16), Err(GeomError::BadBottomRow));
        m16[15] = 1.0;
        assert_eq!(Pose::from_matrix_4x4(&m16).unwrap(), Pose::identity());
    }

    #[test]
    fn noisy_rotation_is_reorthonormalized() {
        let mut rows = Pose::rot_z(0.7f64).to_rows_3x4();
        rows[0] += 4e-7;
        rows[5] -= 3e-7;
        let p = Pose::from_rows_3x4(&rows).unwrap();
        let r = p.rotation();
        assert!((r.transpose() * *r).max_abs_diff(&Mat3::identity()) < 1e-12);
        assert!(r.determinant() > 0.0);
    }

    #[test]
    fn f32_pose_roundtrip() {
        let t = Pose::<f32>::from_xyz_rpy(1.0, 2.0, 3.0, 0.2, 0.1, -1.0);
        let p = Vec3::new(0.5f32, -0.25, 4.0);
        let back = t.inverse() * (t * p);
        assert!((back - p).norm() < 1e-5);
    }

    #[test]
    fn symmetric_eigen_of_diagonal_and_plane() {
        let m: Mat3<f64> = Mat3::from_rows([[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]]);
        let (vals, vecs) = m.symmetric_eigen();
        assert_eq!(vals, [1.0, 2.0, 3.0]);
        assert!((vecs[0].y.abs() - 1.0).abs() < 1e-12);

        let r: Mat3<f64> = Mat3::rot_x(0.4) * Mat3::rot_z(1.1);
        let d = Mat3::from_rows([[5.0, 0.0, 0.0], [0.0, 0.01, 0.0], [0.0, 0.0, 2.0]]);
        let m = r * d * r.transpose();
        let (vals, vecs) = m.symmetric_eigen();
        assert!((vals[0] - 0.01).abs() < 1e-10);
        let expected = r.mul_vec(&Vec3::new(0.0, 1.0, 0.0));
        assert!((vecs[0].dot(&expected).abs() - 1.0).abs() < 1e-10);
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            -50.0..50.0f64,
            -50.0..50.0f64,
            -50.0..50.0f64,
            -3.1..3.1f64,
            -1.5..1.5f64,
            -3.1..3.1f64,
        )
            .prop_map(|(x, y, z, r, p, w)| Pose::from_xyz_rpy(x, y, z, r, p, w))
    }

    fn arb_point() -> impl Strategy<Value = Vec3> {
        (-100.0..100.0f64, -100.0..100.0f64, -100.0..100.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn inverse_roundtrips_points(t in arb_pose(), p in arb_point()) {
            let back = t.inverse() * (t * p);
            prop_assert!((back - p).norm() < 1e-6);
        }

        #[test]
        fn transform_preserves_distances(t in arb_pose(), a in arb_point(), b in arb_point()) {
            let d0 = a.distance(&b);
            let d1 = (t * a).distance(&(t * b));
            prop_assert!((d0 - d1).abs() < 1e-6);
        }

        #[test]
        fn composed_pose_stays_rigid(a in arb_pose(), b in arb_pose()) {
            let c = a * b;
            let r = c.rotation();
            prop_assert!((r.transpose() * *r).max_abs_diff(&Mat3::identity()) < 1e-9);
            prop_assert!(r.determinant() > 0.0);
            prop_assert_eq!(c.matrix()[3], [0.0, 0.0, 0.0, 1.0]);
        }
    }
}
