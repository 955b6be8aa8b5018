//! Static kd-tree over 3D points.
//!
//! The tree is stored implicitly: the points are permuted so that every
//! sub-range is split at its median, and the split axis of each median slot
//! is recorded alongside.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geom::Vec3;
use crate::scalar::Real;

const LEAF_SIZE: usize = 8;

pub struct KdTree<T: Real = f64> {
    points: Vec<Vec3<T>>,
    /// Points in tree order.
    slots: Vec<Vec3<T>>,
    /// Original index of each slot.
    order: Vec<u32>,
    /// Split axis for the median slot of each internal range.
    axis: Vec<u8>,
}

struct HeapItem<T> {
    dist_sq: T,
    index: u32,
}

impl<T: Real> PartialEq for HeapItem<T> {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl<T: Real> Eq for HeapItem<T> {}
impl<T: Real> PartialOrd for HeapItem<T> {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl<T: Real> Ord for HeapItem<T> {
    fn cmp(&self, o: &Self) -> Ordering {
        self.dist_sq
            .partial_cmp(&o.dist_sq)
            .unwrap_or(Ordering::Equal)
            .then(self.index.cmp(&o.index))
    }
}

impl<T: Real> KdTree<T> {
    pub fn new(points: Vec<Vec3<T>>) -> Self {
        assert!(points.len() < u32::MAX as usize, "too many points for kd-tree");
        let mut items: Vec<(Vec3<T>, u32)> = points.iter().enumerate().map(|(i, p)| (*p, i as u32)).collect();
        let mut axis = vec![0u8; points.len()];
        build(&mut items, &mut axis, 0);
        let (slots, order) = items.into_iter().unzip();
        Self { points, slots, order, axis }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &Vec3<T> {
        &self.points[i]
    }

    /// Nearest point as `(index, squared distance)`. Ties resolve to the lower index.
    pub fn nearest(&self, q: &Vec3<T>) -> Option<(usize, T)> {
        self.k_nearest(q, 1).into_iter().next()
    }

    /// Up to `k` nearest points sorted by ascending distance (then index).
    pub fn k_nearest(&self, q: &Vec3<T>, k: usize) -> Vec<(usize, T)> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(q, k, 0, self.order.len(), &mut heap);
        let mut out: Vec<_> = heap.into_iter().map(|h| (h.index as usize, h.dist_sq)).collect();
        out.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
        out
    }

    fn knn_rec(&self, q: &Vec3<T>, k: usize, lo: usize, hi: usize, heap: &mut BinaryHeap<HeapItem<T>>) {
        if hi - lo <= LEAF_SIZE {
            for s in lo..hi {
                let d = self.slots[s].distance_squared(q);
                push_bounded(heap, k, HeapItem { dist_sq: d, index: self.order[s] });
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let ax = self.axis[mid] as usize;
        let p = &self.slots[mid];
        push_bounded(heap, k, HeapItem { dist_sq: p.distance_squared(q), index: self.order[mid] });
        let diff = q[ax] - p[ax];
        let (first, second) = if diff <= T::zero() { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.knn_rec(q, k, first.0, first.1, heap);
        let worst = if heap.len() < k { T::infinity() } else { heap.peek().map_or(T::infinity(), |h| h.dist_sq) };
        if diff * diff <= worst {
            self.knn_rec(q, k, second.0, second.1, heap);
        }
    }

    /// Indices of all points with distance `<= radius`, ascending.
    pub fn within_radius(&self, q: &Vec3<T>, radius: T) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            self.radius_rec(q, radius * radius, 0, self.order.len(), &mut |i| {
                out.push(i);
                true
            });
        }
        out.sort_unstable();
        out
    }

    /// True if any point lies within `radius` (inclusive).
    pub fn any_within(&self, q: &Vec3<T>, radius: T) -> bool {
        let mut found = false;
        if !self.points.is_empty() {
            self.radius_rec(q, radius * radius, 0, self.order.len(), &mut |_| {
                found = true;
                false
            });
        }
        found
    }

    /// Visits points within the radius; the visitor returns `false` to stop.
    fn radius_rec(&self, q: &Vec3<T>, r2: T, lo: usize, hi: usize, visit: &mut dyn FnMut(usize) -> bool) -> bool {
        if hi - lo <= LEAF_SIZE {
            for s in lo..hi {
                if self.slots[s].distance_squared(q) <= r2 && !visit(self.order[s] as usize) {
                    return false;
                }
            }
            return true;
        }
        let mid = lo + (hi - lo) / 2;
        let ax = self.axis[mid] as usize;
        let p = &self.slots[mid];
        if p.distance_squared(q) <= r2 && !visit(self.order[mid] as usize) {
            return false;
        }
        let diff = q[ax] - p[ax];
        if diff <= T::zero() || diff * diff <= r2 {
            if !self.radius_rec(q, r2, lo, mid, visit) {
                return false;
            }
        }
        if diff >= T::zero() || diff * diff <= r2 {
            if !self.radius_rec(q, r2, mid + 1, hi, visit) {
                return false;
            }
        }
        true
    }
}

fn push_bounded<T: Real>(heap: &mut BinaryHeap<HeapItem<T>>, k: usize, item: HeapItem<T>) {
    if heap.len() < k {
        heap.push(item);
    } else if let Some(top) = heap.peek() {
        if item < *top {
            heap.pop();
            heap.push(item);
        }
    }
}

fn build<T: Real>(items: &mut [(Vec3<T>, u32)], axis: &mut [u8], offset: usize) {
    let n = items.len();
    if n <= LEAF_SIZE {
        return;
    }
    let mut lo = items[0].0;
    let mut hi = lo;
    for (p, _) in items.iter() {
        lo = lo.component_min(p);
        hi = hi.component_max(p);
    }
    let spread = hi - lo;
    let ax = if spread.x >= spread.y && spread.x >= spread.z {
        0
    } else if spread.y >= spread.z {
        1
    } else {
        2
    };
    let mid = n / 2;
    items.select_nth_unstable_by(mid, |a, b| a.0[ax].partial_cmp(&b.0[ax]).unwrap_or(Ordering::Equal));
    axis[offset + mid] = ax as u8;
    let (left, rest) = items.split_at_mut(mid);
    build(left, axis, offset);
    build(&mut rest[1..], axis, offset + mid + 1);
}
