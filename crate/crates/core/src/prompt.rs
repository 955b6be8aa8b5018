//! Point prompts for the segmenter.
//!
//! Two generators: local maxima of the live/map pixel difference, and the
//! projected centroids of the largest clusters of live points that have no
//! nearby map point.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{PointCloud, Vec3};
use crate::render::{Projection, RenderedView};
use crate::scalar::Real;
use crate::spatial::KdTree;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("view dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptSource {
    PixelDiff,
    ComponentCentroid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub u: usize,
    pub v: usize,
    pub strength: f64,
    pub source: PromptSource,
}

/// Channel weights of the difference norm. Range is in meters, intensity is
/// normalized to [0, 1] first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffWeights<T = f64> {
    pub range: T,
    pub intensity: T,
}

impl<T: Real> Default for DiffWeights<T> {
    fn default() -> Self {
        Self { range: T::one(), intensity: T::one() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceMap<T = f64> {
    pub width: usize,
    pub height: usize,
    pub values: Vec<T>,
    /// Pixel valid in both input views.
    pub valid: Vec<bool>,
}

impl<T: Real> DifferenceMap<T> {
    pub fn get(&self, u: usize, v: usize) -> T {
        self.values[v * self.width + u]
    }
}

/// `sqrt(w_r * dz^2 + w_i * di^2)` on pixels valid in both views, zero elsewhere.
pub fn difference_map<T: Real>(
    live: &RenderedView<T>,
    map: &RenderedView<T>,
    weights: DiffWeights<T>,
    intensity_scale: T,
) -> Result<DifferenceMap<T>, PromptError> {
    if live.width != map.width || live.height != map.height {
        return Err(PromptError::DimensionMismatch(live.width, live.height, map.width, map.height));
    }
    let norm = |x: T| (x / intensity_scale).max(T::zero()).min(T::one());
    let mut values = vec![T::zero(); live.len()];
    let mut valid = vec![false; live.len()];
    for i in 0..live.len() {
        if live.valid[i] && map.valid[i] {
            let dr = live.depth[i] - map.depth[i];
            let di = norm(live.intensity[i]) - norm(map.intensity[i]);
            values[i] = (weights.range * dr * dr + weights.intensity * di * di).sqrt();
            valid[i] = true;
        }
    }
    Ok(DifferenceMap { width: live.width, height: live.height, values, valid })
}

/// Greedy selection of the strongest strict 8-neighbourhood maxima above
/// `noise_floor`, each at least `min_dist` pixels from those already taken.
/// Equal values are ordered row-major.
pub fn top_k_maxima<T: Real>(d: &DifferenceMap<T>, k: usize, min_dist: f64, noise_floor: T) -> Vec<Prompt> {
    let (w, h) = (d.width as isize, d.height as isize);
    let mut candidates: Vec<(T, usize, usize)> = Vec::new();
    for v in 0..h {
        for u in 0..w {
            let c = d.values[(v * w + u) as usize];
            if !(c > noise_floor) {
                continue;
            }
            let mut is_max = true;
            'nb: for dv in -1..=1 {
                for du in -1..=1 {
                    if du == 0 && dv == 0 {
                        continue;
                    }
                    let (nu, nv) = (u + du, v + dv);
                    if nu < 0 || nv < 0 || nu >= w || nv >= h {
                        continue;
                    }
                    if d.values[(nv * w + nu) as usize] >= c {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                candidates.push((c, u as usize, v as usize));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then((a.2, a.1).cmp(&(b.2, b.1)))
    });
    let min_d2 = min_dist * min_dist;
    let mut out: Vec<Prompt> = Vec::new();
    for (val, u, v) in candidates {
        if out.len() >= k {
            break;
        }
        let far = out.iter().all(|p| {
            let du = p.u as f64 - u as f64;
            let dv = p.v as f64 - v as f64;
            du * du + dv * dv >= min_d2
        });
        if far {
            out.push(Prompt { u, v, strength: val.as_f64(), source: PromptSource::PixelDiff });
        }
    }
    out
}

/// Flags query points whose nearest indexed point is farther than `threshold`.
/// An empty index flags everything.
pub fn nn_flags_indexed<T: Real>(queries: &[Vec3<T>], index: &KdTree<T>, threshold: T) -> Vec<bool> {
    queries.iter().map(|q| !index.any_within(q, threshold)).collect()
}

pub fn nn_change_flags<T: Real>(live: &PointCloud<T>, map: &PointCloud<T>, threshold: T) -> Vec<bool> {
    let index = KdTree::new(map.positions());
    nn_flags_indexed(&live.positions(), &index, threshold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component3D<T = f64> {
    /// Indices into the live cloud, ascending.
    pub members: Vec<usize>,
    pub centroid: Vec3<T>,
}

impl<T: Real> Component3D<T> {
    pub fn cardinality(&self) -> usize {
        self.members.len()
    }
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), rank: vec![0; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Single-linkage clusters of `points` (pairs of live index and position):
/// two points are connected when within `radius`. Sorted by size descending,
/// then by smallest member index.
pub fn connected_components<T: Real>(points: &[(usize, Vec3<T>)], radius: T) -> Vec<Component3D<T>> {
    if points.is_empty() {
        return Vec::new();
    }
    let tree = KdTree::new(points.iter().map(|p| p.1).collect());
    let mut sets = DisjointSet::new(points.len());
    for (i, (_, p)) in points.iter().enumerate() {
        for j in tree.within_radius(p, radius) {
            if j > i {
                sets.union(i, j);
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..points.len() {
        let root = sets.find(i);
        groups.entry(root).or_default().push(i);
    }
    let mut comps: Vec<Component3D<T>> = groups
        .into_values()
        .map(|local| {
            let sum = local.iter().fold(Vec3::zero(), |acc, &i| acc + points[i].1);
            let centroid = sum * (T::one() / T::lit(local.len() as f64));
            let mut members: Vec<usize> = local.iter().map(|&i| points[i].0).collect();
            members.sort_unstable();
            Component3D { members, centroid }
        })
        .collect();
    comps.sort_by(|a, b| b.cardinality().cmp(&a.cardinality()).then(a.members[0].cmp(&b.members[0])));
    comps
}

/// Projects the centroids of the `k` largest components into the live view.
///
/// `live_camera` is the live cloud in the camera frame, indexed like the
/// component members. When the centroid's pixel is not valid, the prompt
/// snaps to the member pixel closest to the centroid projection (or to the
/// member nearest the centroid in 3D when the centroid is behind the camera).
/// Components with no member in view are skipped without consuming a slot.
pub fn components_to_prompts<T: Real>(
    comps: &[Component3D<T>],
    k: usize,
    live_camera: &PointCloud<T>,
    live_view: &RenderedView<T>,
) -> Vec<Prompt> {
    let mut out = Vec::new();
    for comp in comps {
        if out.len() >= k {
            break;
        }
        let strength = comp.cardinality() as f64;
        let pixel = if let Some((u, v)) = live_view.projection.project(&comp.centroid).filter(|&(u, v)| live_view.valid[live_view.idx(u, v)]) {
            Some((u, v))
        } else {
            nearest_member_pixel(comp, live_camera, live_view)
        };
        if let Some((u, v)) = pixel {
            out.push(Prompt { u, v, strength, source: PromptSource::ComponentCentroid });
        }
    }
    out
}

fn nearest_member_pixel<T: Real>(comp: &Component3D<T>, cloud: &PointCloud<T>, view: &RenderedView<T>) -> Option<(usize, usize)> {
    let centroid_px = match view.projection {
        Projection::Pinhole(k) => k.project_continuous(&comp.centroid),
        Projection::Equirect(_) => None,
    };
    let mut best: Option<(f64, (usize, usize))> = None;
    for &m in &comp.members {
        let p = cloud.points[m].position;
        let Some((u, v)) = view.projection.project(&p) else { continue };
        if !view.valid[view.idx(u, v)] {
            continue;
        }
        let score = match centroid_px {
            Some((cu, cv)) => {
                let du = u as f64 + 0.5 - cu.as_f64();
                let dv = v as f64 + 0.5 - cv.as_f64();
                du * du + dv * dv
            }
            None => p.distance_squared(&comp.centroid).as_f64(),
        };
        if best.map_or(true, |(b, _)| score < b) {
            best = Some((score, (u, v)));
        }
    }
    best.map(|(_, px)| px)
}
