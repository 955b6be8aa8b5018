//! Mask comparison and 3D change recovery.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Aabb, PointCloud, Pose, Vec3};
use crate::render::RenderedView;
use crate::scalar::Real;
use crate::segment::{BinaryMask, MaskSet};
use crate::spatial::KdTree;

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("cannot summarize an empty point set")]
    EmptyPoints,
    #[error("corridor needs at least two vertices and a positive half width")]
    InvalidCorridor,
}

/// `|b1 AND b2| / |b1 OR b2|`, zero when both masks are empty.
pub fn mask_iou(b1: &BinaryMask, b2: &BinaryMask) -> Result<f64, DetectError> {
    if !b1.same_size(b2) {
        return Err(DetectError::DimensionMismatch(b1.width, b1.height, b2.width, b2.height));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (a, b) in b1.bits.iter().zip(&b2.bits) {
        inter += (*a && *b) as usize;
        union += (*a || *b) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChangePoint<T = f64> {
    /// Index into the live scan.
    pub index: usize,
    pub position: Vec3<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChangeCandidate<T = f64> {
    /// Position of the live mask within its mask set.
    pub mask_index: usize,
    pub live_mask: BinaryMask,
    pub best_map_iou: f64,
    pub verified_3d: bool,
    pub points: Vec<ChangePoint<T>>,
    pub centroid: Option<Vec3<T>>,
    pub aabb: Option<Aabb<T>>,
    pub in_corridor: bool,
}

/// Emits a candidate for every non-empty live mask whose best IoU against
/// all map masks is strictly below `threshold`.
pub fn classify_changes<T: Real>(live: &MaskSet, map: &MaskSet, threshold: f64) -> Result<Vec<ChangeCandidate<T>>, DetectError> {
    let mut out = Vec::new();
    for (mask_index, lm) in live.masks.iter().enumerate() {
        if lm.is_empty() {
            continue;
        }
        let mut best = 0.0f64;
        for mm in &map.masks {
            best = best.max(mask_iou(lm, mm)?);
        }
        if best < threshold {
            out.push(ChangeCandidate {
                mask_index,
                live_mask: lm.clone(),
                best_map_iou: best,
                verified_3d: false,
                points: Vec::new(),
                centroid: None,
                aabb: None,
                in_corridor: false,
            });
        }
    }
    Ok(out)
}

/// Live points behind the measured pixels of `mask`, in pixel order.
///
/// `live_cloud` must be indexed like the cloud the view was rendered from;
/// positions are reported in whatever frame `live_cloud` is expressed in.
pub fn mask_points<T: Real>(mask: &BinaryMask, live_view: &RenderedView<T>, live_cloud: &PointCloud<T>) -> Vec<ChangePoint<T>> {
    mask.bits
        .iter()
        .enumerate()
        .filter(|(i, on)| **on && live_view.is_measured(*i))
        .filter_map(|(i, _)| live_view.point_index[i])
        .map(|j| ChangePoint { index: j as usize, position: live_cloud.points[j as usize].position })
        .collect()
}

/// Back-projects the candidate's mask and refreshes its centroid and box.
pub fn changed_points<T: Real>(c: &mut ChangeCandidate<T>, live_view: &RenderedView<T>, live_cloud: &PointCloud<T>) -> Result<(), DetectError> {
    if c.live_mask.width != live_view.width || c.live_mask.height != live_view.height {
        return Err(DetectError::DimensionMismatch(c.live_mask.width, c.live_mask.height, live_view.width, live_view.height));
    }
    c.points = mask_points(&c.live_mask, live_view, live_cloud);
    match summarize(&c.points) {
        Ok((centroid, aabb)) => {
            c.centroid = Some(centroid);
            c.aabb = Some(aabb);
        }
        Err(_) => {
            c.centroid = None;
            c.aabb = None;
        }
    }
    Ok(())
}

/// Fraction of `points` whose nearest map point is farther than `tau`.
pub fn novel_fraction<T: Real>(points: &[Vec3<T>], map_index: &KdTree<T>, tau: T) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let novel = points.iter().filter(|p| !map_index.any_within(p, tau)).count();
    novel as f64 / points.len() as f64
}

/// True when at least `rho` of the candidate's points are farther than `tau`
/// from the map. Points and the index must share a frame. A candidate with
/// no 3D points does not verify.
pub fn verify_3d_indexed<T: Real>(c: &ChangeCandidate<T>, map_index: &KdTree<T>, tau: T, rho: f64) -> bool {
    if c.points.is_empty() {
        return false;
    }
    let pts: Vec<Vec3<T>> = c.points.iter().map(|p| p.position).collect();
    novel_fraction(&pts, map_index, tau) >= rho
}

pub fn verify_3d<T: Real>(c: &ChangeCandidate<T>, map_cloud: &PointCloud<T>, tau: T, rho: f64) -> bool {
    verify_3d_indexed(c, &KdTree::new(map_cloud.positions()), tau, rho)
}

/// Mean and componentwise bounds.
pub fn summarize<T: Real>(points: &[ChangePoint<T>]) -> Result<(Vec3<T>, Aabb<T>), DetectError> {
    let aabb = Aabb::from_points(points.iter().map(|p| &p.position)).ok_or(DetectError::EmptyPoints)?;
    let sum = points.iter().fold(Vec3::zero(), |acc, p| acc + p.position);
    Ok((sum * (T::one() / T::lit(points.len() as f64)), aabb))
}

/// Lateral band around the taught path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corridor<T = f64> {
    pub path: Vec<Vec3<T>>,
    pub half_width: T,
}

impl<T: Real> Corridor<T> {
    pub fn new(path: Vec<Vec3<T>>, half_width: T) -> Result<Self, DetectError> {
        if path.len() < 2 || !(half_width > T::zero()) {
            return Err(DetectError::InvalidCorridor);
        }
        Ok(Self { path, half_width })
    }

    /// Smallest x-y distance from `p` to any path segment.
    pub fn horizontal_distance(&self, p: &Vec3<T>) -> T {
        self.path
            .windows(2)
            .map(|s| point_segment_distance_xy(p, &s[0], &s[1]))
            .fold(T::infinity(), T::min)
    }

    pub fn contains(&self, p: &Vec3<T>) -> bool {
        self.horizontal_distance(p) <= self.half_width
    }

    pub fn transformed(&self, t: &Pose<T>) -> Self {
        Self { path: self.path.iter().map(|p| t.transform_point(p)).collect(), half_width: self.half_width }
    }
}

pub fn point_segment_distance_xy<T: Real>(p: &Vec3<T>, a: &Vec3<T>, b: &Vec3<T>) -> T {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let (px, py) = (p.x - a.x, p.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > T::zero() { ((px * dx + py * dy) / len2).max(T::zero()).min(T::one()) } else { T::zero() };
    let (ex, ey) = (px - t * dx, py - t * dy);
    (ex * ex + ey * ey).sqrt()
}

/// Splits points into those inside and outside the corridor, keeping order.
pub fn corridor_filter<T: Real>(points: &[Vec3<T>], corridor: &Corridor<T>) -> (Vec<Vec3<T>>, Vec<Vec3<T>>) {
    points.iter().copied().partition(|p| corridor.contains(p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueEntry<T = f64> {
    pub centroid: Vec3<T>,
    pub aabb: Aabb<T>,
    pub last_seen_frame: usize,
    pub hit_count: usize,
}

/// Recently detected changes, kept for a few frames so obstacles persist
/// while they are briefly out of view or missed.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleQueue<T = f64> {
    pub entries: Vec<QueueEntry<T>>,
    pub capacity: usize,
    pub ttl_frames: usize,
    pub merge_radius: T,
}

impl<T: Real> ObstacleQueue<T> {
    pub fn new(capacity: usize, ttl_frames: usize, merge_radius: T) -> Self {
        Self { entries: Vec::new(), capacity, ttl_frames, merge_radius }
    }

    /// Candidates must already carry a centroid and box (see [`changed_points`]);
    /// ones without are ignored.
    pub fn update(&mut self, candidates: &[ChangeCandidate<T>], frame: usize) {
        for c in candidates {
            let (Some(centroid), Some(aabb)) = (c.centroid, c.aabb) else { continue };
            let nearest = self
                .entries
                .iter()
                .enumerate()
                .map(|(i, e)| (i, e.centroid.distance(&centroid)))
                .filter(|(_, d)| *d <= self.merge_radius)
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
            match nearest {
                Some((i, _)) => {
                    let e = &mut self.entries[i];
                    e.hit_count += 1;
                    let w = T::one() / T::lit(e.hit_count as f64);
                    e.centroid = e.centroid + (centroid - e.centroid) * w;
                    e.aabb = e.aabb.union(&aabb);
                    e.last_seen_frame = frame;
                }
                None => self.entries.push(QueueEntry { centroid, aabb, last_seen_frame: frame, hit_count: 1 }),
            }
        }
        let ttl = self.ttl_frames;
        self.entries.retain(|e| frame.saturating_sub(e.last_seen_frame) <= ttl);
        while self.entries.len() > self.capacity {
            // oldest first; among equals the earliest inserted
            let (i, _) = self
                .entries
                .iter()
                .enumerate()
                .min_by_key(|(_, e)| e.last_seen_frame)
                .expect("non-empty queue");
            self.entries.remove(i);
        }
    }

    pub fn snapshot(&self) -> Vec<QueueEntry<T>> {
        self.entries.clone()
    }
}
