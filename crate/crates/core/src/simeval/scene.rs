//! Primitive scenes and analytic ray intersection.

use serde::{Deserialize, Serialize};

use crate::geom::{Mat3, Vec3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("instance id {0} is used more than once")]
    DuplicateId(u32),
    #[error("instance id 0 is reserved for the ground")]
    ReservedId,
    #[error("object {0}: reflectivity {1} outside [0, 1]")]
    Reflectivity(u32, f64),
    #[error("object {0}: dimensions must be positive and finite")]
    Dimensions(u32),
    #[error("ground: {0}")]
    Ground(String),
}

/// Primitive in its own frame: centred on the z axis, base on `z = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Box { size: [f64; 3] },
    Cylinder { radius: f64, height: f64 },
    /// Frustum narrowing from `bottom_radius` to `top_radius`.
    Cone { bottom_radius: f64, top_radius: f64, height: f64 },
}

impl Shape {
    fn is_valid(&self) -> bool {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        match *self {
            Shape::Box { size } => size.iter().all(|s| pos(*s)),
            Shape::Cylinder { radius, height } => pos(radius) && pos(height),
            Shape::Cone { bottom_radius, top_radius, height } => {
                pos(bottom_radius) && top_radius.is_finite() && top_radius >= 0.0 && pos(height)
            }
        }
    }

    /// Distance from a local point to the nearest face, measured along that
    /// face's defining coordinate; infinite when the point lies beside every face.
    pub fn surface_residual(&self, p: &Vec3) -> f64 {
        let (r0, r1, h) = match *self {
            Shape::Box { size } => {
                let half = [size[0] / 2.0, size[1] / 2.0];
                let inside_xy = |a: usize| {
                    let c = [p.x, p.y];
                    c[a].abs() <= half[a] + 1e-12
                };
                let mut best = f64::INFINITY;
                if inside_xy(0) && inside_xy(1) {
                    best = best.min(p.z.abs()).min((p.z - size[2]).abs());
                }
                if (0.0..=size[2]).contains(&p.z) {
                    if inside_xy(1) {
                        best = best.min((p.x.abs() - half[0]).abs());
                    }
                    if inside_xy(0) {
                        best = best.min((p.y.abs() - half[1]).abs());
                    }
                }
                return best;
            }
            Shape::Cylinder { radius, height } => (radius, radius, height),
            Shape::Cone { bottom_radius, top_radius, height } => (bottom_radius, top_radius, height),
        };
        let rho = p.x.hypot(p.y);
        let mut best = f64::INFINITY;
        if (0.0..=h).contains(&p.z) {
            best = best.min((rho - (r0 + (r1 - r0) * p.z / h)).abs());
        }
        if rho <= r0 + 1e-12 {
            best = best.min(p.z.abs());
        }
        if rho <= r1 + 1e-12 {
            best = best.min((p.z - h).abs());
        }
        best
    }

    /// Local point strictly inside the solid.
    pub fn contains(&self, p: &Vec3) -> bool {
        match *self {
            Shape::Box { size } => p.x.abs() < size[0] / 2.0 && p.y.abs() < size[1] / 2.0 && p.z > 0.0 && p.z < size[2],
            Shape::Cylinder { radius, height } => p.z > 0.0 && p.z < height && p.x.hypot(p.y) < radius,
            Shape::Cone { bottom_radius, top_radius, height } => {
                p.z > 0.0 && p.z < height && p.x.hypot(p.y) < bottom_radius + (top_radius - bottom_radius) * p.z / height
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub instance_id: u32,
    pub shape: Shape,
    /// World position of the base centre.
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
    pub reflectivity: f64,
}

impl SceneObject {
    fn rotation(&self) -> Mat3 {
        Mat3::rot_z(self.yaw)
    }

    fn origin(&self) -> Vec3 {
        Vec3::new(self.position[0], self.position[1], self.position[2])
    }

    /// World point expressed in the object frame.
    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        self.rotation().transpose().mul_vec(&(*p - self.origin()))
    }

    /// Nearest intersection with `t > t_min`, returning distance and world normal.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3, t_min: f64) -> Option<(f64, Vec3)> {
        let rt = self.rotation().transpose();
        let o = rt.mul_vec(&(*origin - self.origin()));
        let d = rt.mul_vec(dir);
        let (t, n) = match self.shape {
            Shape::Box { size } => ray_box(&o, &d, size, t_min)?,
            Shape::Cylinder { radius, height } => ray_frustum(&o, &d, radius, radius, height, t_min)?,
            Shape::Cone { bottom_radius, top_radius, height } => ray_frustum(&o, &d, bottom_radius, top_radius, height, t_min)?,
        };
        Some((t, self.rotation().mul_vec(&n)))
    }
}

fn ray_box(o: &Vec3, d: &Vec3, size: [f64; 3], t_min: f64) -> Option<(f64, Vec3)> {
    let lo = [-size[0] / 2.0, -size[1] / 2.0, 0.0];
    let hi = [size[0] / 2.0, size[1] / 2.0, size[2]];
    let (o, d) = (o.to_array(), d.to_array());
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut near_axis = 0;
    let mut far_axis = 0;
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if o[a] < lo[a] || o[a] > hi[a] {
                return None;
            }
            continue;
        }
        let (mut t0, mut t1) = ((lo[a] - o[a]) / d[a], (hi[a] - o[a]) / d[a]);
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_near {
            t_near = t0;
            near_axis = a;
        }
        if t1 < t_far {
            t_far = t1;
            far_axis = a;
        }
    }
    if t_near > t_far {
        return None;
    }
    let (t, axis) = if t_near > t_min {
        (t_near, near_axis)
    } else if t_far > t_min {
        (t_far, far_axis)
    } else {
        return None;
    };
    let mut n = [0.0; 3];
    n[axis] = if d[axis] > 0.0 { -1.0 } else { 1.0 };
    Some((t, Vec3::new(n[0], n[1], n[2])))
}

/// Frustum with radius `r0` at `z = 0` and `r1` at `z = h`; a cylinder when equal.
fn ray_frustum(o: &Vec3, d: &Vec3, r0: f64, r1: f64, h: f64, t_min: f64) -> Option<(f64, Vec3)> {
    let s = (r1 - r0) / h;
    let mut best: Option<(f64, Vec3)> = None;
    let mut offer = |t: f64, n: Vec3| {
        if t > t_min && best.map_or(true, |(b, _)| t < b) {
            best = Some((t, n));
        }
    };
    // side: x^2 + y^2 = (r0 + s z)^2
    let rz = r0 + s * o.z;
    let a = d.x * d.x + d.y * d.y - s * s * d.z * d.z;
    let b = 2.0 * (o.x * d.x + o.y * d.y - s * rz * d.z);
    let c = o.x * o.x + o.y * o.y - rz * rz;
    let mut roots = Vec::with_capacity(2);
    if a.abs() > 1e-15 {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            let q = if b >= 0.0 { -0.5 * (b + sq) } else { -0.5 * (b - sq) };
            roots.push(q / a);
            if q != 0.0 {
                roots.push(c / q);
            }
        }
    } else if b.abs() > 1e-15 {
        roots.push(-c / b);
    }
    for t in roots {
        let p = *o + *d * t;
        if p.z >= 0.0 && p.z <= h && r0 + s * p.z >= 0.0 {
            let n = Vec3::new(p.x, p.y, -s * (r0 + s * p.z));
            if n.norm() > 0.0 {
                offer(t, n.normalized());
            }
        }
    }
    for (z, r, nz) in [(0.0, r0, -1.0), (h, r1, 1.0)] {
        if d.z.abs() > 1e-15 {
            let t = (z - o.z) / d.z;
            let p = *o + *d * t;
            if p.x * p.x + p.y * p.y <= r * r {
                offer(t, Vec3::new(0.0, 0.0, nz));
            }
        }
    }
    best
}

/// Rough ground `z = g(x, y)` with `|g| <= amplitude`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ground {
    pub amplitude: f64,
    pub wavelength: f64,
    pub reflectivity: f64,
}

impl Default for Ground {
    fn default() -> Self {
        Self { amplitude: 0.05, wavelength: 2.0, reflectivity: 0.2 }
    }
}

impl Ground {
    fn k(&self) -> f64 {
        std::f64::consts::TAU / self.wavelength
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let k = self.k();
        0.5 * self.amplitude * ((k * x + 0.3).sin() * (0.8 * k * y).cos() + (1.7 * k * y + 1.1).sin() * (1.3 * k * x).cos())
    }

    pub fn normal(&self, x: f64, y: f64) -> Vec3 {
        if self.amplitude == 0.0 {
            return Vec3::new(0.0, 0.0, 1.0);
        }
        let k = self.k();
        let a = 0.5 * self.amplitude;
        let gx = a * (k * (k * x + 0.3).cos() * (0.8 * k * y).cos() - 1.3 * k * (1.7 * k * y + 1.1).sin() * (1.3 * k * x).sin());
        let gy = a * (-0.8 * k * (k * x + 0.3).sin() * (0.8 * k * y).sin() + 1.7 * k * (1.7 * k * y + 1.1).cos() * (1.3 * k * x).cos());
        Vec3::new(-gx, -gy, 1.0).normalized()
    }

    /// First crossing of the ray below the surface within `(t_min, t_max]`.
    pub fn intersect(&self, o: &Vec3, d: &Vec3, t_min: f64, t_max: f64) -> Option<f64> {
        let f = |t: f64| o.z + t * d.z - self.height(o.x + t * d.x, o.y + t * d.y);
        if self.amplitude == 0.0 {
            if d.z.abs() < 1e-15 {
                return None;
            }
            let t = -o.z / d.z;
            return (t > t_min && t <= t_max).then_some(t);
        }
        let a = self.amplitude;
        if d.z >= 0.0 && o.z > a {
            return None;
        }
        // bracket the band |z| <= a along the ray
        let (mut lo, mut hi) = if d.z.abs() < 1e-15 {
            (t_min, t_max)
        } else {
            let (t1, t2) = ((a - o.z) / d.z, (-a - o.z) / d.z);
            (t1.min(t2).max(t_min), t1.max(t2).min(t_max))
        };
        if lo > hi {
            return None;
        }
        if f(lo) <= 0.0 {
            return (lo > t_min).then_some(lo);
        }
        let horiz = d.x.hypot(d.y).max(1e-12);
        let step = (self.wavelength / 32.0) / horiz;
        let mut t = lo;
        let mut found = false;
        while t < hi {
            let next = (t + step).min(hi);
            if f(next) <= 0.0 {
                lo = t;
                hi = next;
                found = true;
                break;
            }
            t = next;
        }
        if !found {
            return None;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 {
                break;
            }
        }
        Some(0.5 * (lo + hi))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    #[serde(default)]
    pub ground: Ground,
    #[serde(default)]
    pub objects: Vec<SceneObject>,
}

/// Closest surface along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub normal: Vec3,
    pub reflectivity: f64,
    /// Zero for the ground.
    pub instance_id: u32,
}

impl Scene {
    pub fn validate(&self) -> Result<(), SceneError> {
        let g = &self.ground;
        if !(g.amplitude >= 0.0 && g.amplitude.is_finite()) {
            return Err(SceneError::Ground(format!("amplitude {}", g.amplitude)));
        }
        if !(g.wavelength > 0.0 && g.wavelength.is_finite()) {
            return Err(SceneError::Ground(format!("wavelength {}", g.wavelength)));
        }
        if !(0.0..=1.0).contains(&g.reflectivity) {
            return Err(SceneError::Ground(format!("reflectivity {}", g.reflectivity)));
        }
        let mut seen = std::collections::BTreeSet::new();
        for o in &self.objects {
            if o.instance_id == 0 {
                return Err(SceneError::ReservedId);
            }
            if !seen.insert(o.instance_id) {
                return Err(SceneError::DuplicateId(o.instance_id));
            }
            if !(0.0..=1.0).contains(&o.reflectivity) {
                return Err(SceneError::Reflectivity(o.instance_id, o.reflectivity));
            }
            if !o.shape.is_valid() || !o.position.iter().all(|v| v.is_finite()) || !o.yaw.is_finite() {
                return Err(SceneError::Dimensions(o.instance_id));
            }
        }
        Ok(())
    }

    /// Scene with extra objects added.
    pub fn with_objects(&self, extra: &[SceneObject]) -> Scene {
        let mut s = self.clone();
        s.objects.extend_from_slice(extra);
        s
    }

    pub fn cast(&self, origin: &Vec3, dir: &Vec3, t_min: f64, t_max: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for o in &self.objects {
            if let Some((t, normal)) = o.intersect(origin, dir, t_min) {
                if t <= t_max && best.map_or(true, |b| t < b.t) {
                    best = Some(Hit { t, normal, reflectivity: o.reflectivity, instance_id: o.instance_id });
                }
            }
        }
        let limit = best.map_or(t_max, |b| b.t);
        if let Some(t) = self.ground.intersect(origin, dir, t_min, limit) {
            if best.map_or(true, |b| t < b.t) {
                let p = *origin + *dir * t;
                best = Some(Hit { t, normal: self.ground.normal(p.x, p.y), reflectivity: self.ground.reflectivity, instance_id: 0 });
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cone(id: u32, x: f64, y: f64) -> SceneObject {
        SceneObject {
            instance_id: id,
            shape: Shape::Cone { bottom_radius: 0.2, top_radius: 0.03, height: 0.7 },
            position: [x, y, 0.0],
            yaw: 0.0,
            reflectivity: 0.9,
        }
    }

    #[test]
    fn box_hit_front_face() {
        let b = SceneObject { instance_id: 3, shape: Shape::Box { size: [1.0, 1.0, 1.0] }, position: [5.5, 0.0, 0.0], yaw: 0.0, reflectivity: 0.5 };
        let (t, n) = b.intersect(&Vec3::new(0.0, 0.0, 0.5), &Vec3::new(1.0, 0.0, 0.0), 0.0).unwrap();
        assert!((t - 5.0).abs() < 1e-12);
        assert_eq!(n, Vec3::new(-1.0, 0.0, 0.0));
        assert!(b.intersect(&Vec3::new(0.0, 0.0, 1.5), &Vec3::new(1.0, 0.0, 0.0), 0.0).is_none());
    }

    #[test]
    fn rotated_box_uses_yaw() {
        let b = SceneObject {
            instance_id: 1,
            shape: Shape::Box { size: [2.0, 0.2, 1.0] },
            position: [5.0, 0.0, 0.0],
            yaw: std::f64::consts::FRAC_PI_2,
            reflectivity: 0.5,
        };
        // long side now spans y, so a ray along x hits the 0.2 m face
        let (t, _) = b.intersect(&Vec3::new(0.0, 0.0, 0.5), &Vec3::new(1.0, 0.0, 0.0), 0.0).unwrap();
        assert!((t - 4.9).abs() < 1e-12);
        assert!(b.intersect(&Vec3::new(0.0, 0.9, 0.5), &Vec3::new(1.0, 0.0, 0.0), 0.0).is_some());
    }

    #[test]
    fn cylinder_and_cone_side_hits() {
        let c = SceneObject { instance_id: 1, shape: Shape::Cylinder { radius: 0.5, height: 2.0 }, position: [10.0, 0.0, 0.0], yaw: 0.0, reflectivity: 0.5 };
        let (t, n) = c.intersect(&Vec3::new(0.0, 0.0, 1.0), &Vec3::new(1.0, 0.0, 0.0), 0.0).unwrap();
        assert!((t - 9.5).abs() < 1e-12);
        assert!((n - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
        let k = cone(2, 10.0, 0.0);
        let (t, _) = k.intersect(&Vec3::new(0.0, 0.0, 0.35), &Vec3::new(1.0, 0.0, 0.0), 0.0).unwrap();
        // radius at mid height is (0.2 + 0.03) / 2
        assert!((t - (10.0 - 0.115)).abs() < 1e-12);
        // above the tip: miss
        assert!(k.intersect(&Vec3::new(0.0, 0.0, 0.8), &Vec3::new(1.0, 0.0, 0.0), 0.0).is_none());
    }

    #[test]
    fn top_cap_from_above() {
        let c = SceneObject { instance_id: 1, shape: Shape::Cylinder { radius: 0.5, height: 2.0 }, position: [0.0, 0.0, 0.0], yaw: 0.0, reflectivity: 0.5 };
        let (t, n) = c.intersect(&Vec3::new(0.1, 0.0, 5.0), &Vec3::new(0.0, 0.0, -1.0), 0.0).unwrap();
        assert!((t - 3.0).abs() < 1e-12);
        assert_eq!(n, Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn flat_ground_hit() {
        let g = Ground { amplitude: 0.0, ..Ground::default() };
        let d = Vec3::new(1.0, 0.0, -1.0).normalized();
        let t = g.intersect(&Vec3::new(0.0, 0.0, 1.0), &d, 0.0, 100.0).unwrap();
        assert!((t - 2f64.sqrt()).abs() < 1e-12);
        assert!(g.intersect(&Vec3::new(0.0, 0.0, 1.0), &Vec3::new(1.0, 0.0, 0.0), 0.0, 100.0).is_none());
    }

    #[test]
    fn validation() {
        let mut s = Scene { ground: Ground::default(), objects: vec![cone(1, 5.0, 0.0), cone(1, 6.0, 0.0)] };
        assert_eq!(s.validate(), Err(SceneError::DuplicateId(1)));
        s.objects[1].instance_id = 0;
        assert_eq!(s.validate(), Err(SceneError::ReservedId));
        s.objects[1].instance_id = 2;
        s.objects[1].reflectivity = 1.5;
        assert!(matches!(s.validate(), Err(SceneError::Reflectivity(2, _))));
        s.objects[1].reflectivity = 0.5;
        assert!(s.validate().is_ok());
    }

    #[test]
    fn shape_json_is_tagged() {
        let j = serde_json::to_string(&Shape::Box { size: [1.0, 2.0, 3.0] }).unwrap();
        assert_eq!(j, r#"{"kind":"box","size":[1.0,2.0,3.0]}"#);
    }

    fn arb_dir() -> impl Strategy<Value = Vec3> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-degenerate", |(x, y, z)| x * x + y * y + z * z > 0.01)
            .prop_map(|(x, y, z)| Vec3::new(x, y, z).normalized())
    }

    proptest! {
        #[test]
        fn hits_lie_on_primitive_surfaces(
            kind in 0..3usize,
            yaw in -3.0..3.0f64,
            d in arb_dir(),
            ox in -6.0..6.0f64, oy in -6.0..6.0f64, oz in 0.2..3.0f64,
        ) {
            let shape = match kind {
                0 => Shape::Box { size: [1.0, 0.6, 1.4] },
                1 => Shape::Cylinder { radius: 0.4, height: 1.8 },
                _ => Shape::Cone { bottom_radius: 0.5, top_radius: 0.1, height: 1.2 },
            };
            let obj = SceneObject { instance_id: 1, shape, position: [0.3, -0.2, 0.0], yaw, reflectivity: 0.5 };
            let o = Vec3::new(ox, oy, oz);
            if !shape.contains(&obj.to_local(&o)) {
                if let Some((t, n)) = obj.intersect(&o, &d, 0.0) {
                    let local = obj.to_local(&(o + d * t));
                    prop_assert!(shape.surface_residual(&local).abs() < 1e-9);
                    prop_assert!((n.norm() - 1.0).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn ground_hits_lie_on_surface(ax in -1.0..1.0f64, ay in -1.0..1.0f64, dz in -1.0..-0.05f64, oz in 0.5..2.0f64) {
            let g = Ground::default();
            let d = Vec3::new(ax, ay, dz).normalized();
            let o = Vec3::new(1.0, 2.0, oz);
            if let Some(t) = g.intersect(&o, &d, 0.0, 200.0) {
                let p = o + d * t;
                prop_assert!((p.z - g.height(p.x, p.y)).abs() < 1e-9);
                // no earlier crossing along a fine march
                let mut s = 0.0;
                while s < t - 1e-6 {
                    let q = o + d * s;
                    prop_assert!(q.z >= g.height(q.x, q.y) - 1e-9);
                    s += 0.005;
                }
            }
        }
    }
}
