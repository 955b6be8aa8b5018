//! Pixel metrics, corridor restriction, instance matching and reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detect::{mask_iou, Corridor};
use crate::geom::{PointCloud, Pose};
use crate::render::RenderedView;
use crate::segment::BinaryMask;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("mask sizes differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("no frames to report")]
    NoFrames,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PixelCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
}

impl PixelCounts {
    pub fn add(&mut self, o: &PixelCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }

    /// IoU is 1 when both masks are empty, precision 1 without predictions,
    /// recall 1 without ground truth.
    pub fn rates(&self) -> Rates {
        let ratio = |num: u64, den: u64| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        Rates {
            iou: ratio(self.tp, self.tp + self.fp + self.fn_),
            precision: ratio(self.tp, self.tp + self.fp),
            recall: ratio(self.tp, self.tp + self.fn_),
        }
    }
}

fn check(pred: &BinaryMask, gt: &BinaryMask) -> Result<(), MetricsError> {
    if !pred.same_size(gt) {
        return Err(MetricsError::DimensionMismatch(pred.width, pred.height, gt.width, gt.height));
    }
    Ok(())
}

/// Counts over pixels where `eligible` holds.
pub fn counts_where(pred: &BinaryMask, gt: &BinaryMask, eligible: impl Fn(usize) -> bool) -> Result<PixelCounts, MetricsError> {
    check(pred, gt)?;
    let mut c = PixelCounts::default();
    for (i, (p, g)) in pred.bits.iter().zip(&gt.bits).enumerate() {
        if !eligible(i) {
            continue;
        }
        match (*p, *g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            _ => {}
        }
    }
    Ok(c)
}

pub fn pixel_counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<PixelCounts, MetricsError> {
    counts_where(pred, gt, |_| true)
}

pub fn pixel_metrics(pred: &BinaryMask, gt: &BinaryMask) -> Result<Rates, MetricsError> {
    Ok(pixel_counts(pred, gt)?.rates())
}

/// Measured pixels whose source point, mapped by `world_from_source`, lies
/// inside the corridor.
pub fn corridor_pixels(view: &RenderedView, cloud: &PointCloud, world_from_source: &Pose, corridor: &Corridor) -> Vec<bool> {
    (0..view.len())
        .map(|i| match view.point_index[i] {
            Some(j) if view.is_measured(i) => corridor.contains(&world_from_source.transform_point(&cloud.points[j as usize].position)),
            _ => false,
        })
        .collect()
}

pub fn corridor_counts(pred: &BinaryMask, gt: &BinaryMask, inside: &[bool]) -> Result<PixelCounts, MetricsError> {
    counts_where(pred, gt, |i| inside[i])
}

pub fn corridor_metrics(
    pred: &BinaryMask,
    gt: &BinaryMask,
    view: &RenderedView,
    cloud: &PointCloud,
    world_from_source: &Pose,
    corridor: &Corridor,
) -> Result<Rates, MetricsError> {
    let inside = corridor_pixels(view, cloud, world_from_source, corridor);
    Ok(corridor_counts(pred, gt, &inside)?.rates())
}

/// Assigns each prediction the ground-truth instance of highest IoU; ties
/// go to the lower id, and zero overlap leaves it unassigned.
pub fn instance_match(preds: &[BinaryMask], gt: &BTreeMap<u32, BinaryMask>) -> Result<Vec<Option<u32>>, MetricsError> {
    preds
        .iter()
        .map(|p| {
            let mut best: Option<(f64, u32)> = None;
            for (id, g) in gt {
                check(p, g)?;
                let iou = mask_iou(p, g).expect("checked dimensions");
                if iou > 0.0 && best.map_or(true, |(b, _)| iou > b) {
                    best = Some((iou, *id));
                }
            }
            Ok(best.map(|(_, id)| id))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub mean_ms: f64,
    /// Sample standard deviation; zero for a single frame.
    pub std_ms: f64,
    pub n: usize,
}

impl TimingStats {
    pub fn from_samples(xs: &[f64]) -> TimingStats {
        let n = xs.len();
        if n == 0 {
            return TimingStats { mean_ms: 0.0, std_ms: 0.0, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
        TimingStats { mean_ms: mean, std_ms: std, n }
    }
}

/// Per-frame outcome of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEval {
    pub full: PixelCounts,
    pub corridor: PixelCounts,
    pub timing_ms: f64,
    pub stages_ms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub full_fov: Rates,
    pub corridor: Rates,
    pub full_counts: PixelCounts,
    pub corridor_counts: PixelCounts,
    pub run_time: TimingStats,
    pub stages: BTreeMap<String, TimingStats>,
}

impl MethodReport {
    pub fn from_frames(method: &str, frames: &[FrameEval]) -> Result<MethodReport, MetricsError> {
        if frames.is_empty() {
            return Err(MetricsError::NoFrames);
        }
        let mut full = PixelCounts::default();
        let mut corridor = PixelCounts::default();
        let mut stage_samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for f in frames {
            full.add(&f.full);
            corridor.add(&f.corridor);
            for (k, v) in &f.stages_ms {
                stage_samples.entry(k.clone()).or_default().push(*v);
            }
        }
        let times: Vec<f64> = frames.iter().map(|f| f.timing_ms).collect();
        Ok(MethodReport {
            method: method.to_string(),
            full_fov: full.rates(),
            corridor: corridor.rates(),
            full_counts: full,
            corridor_counts: corridor,
            run_time: TimingStats::from_samples(&times),
            stages: stage_samples.into_iter().map(|(k, v)| (k, TimingStats::from_samples(&v))).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Pixel counts are summed over frames before rates are taken.
    pub averaging: String,
    pub frames: usize,
    pub methods: Vec<MethodReport>,
}

impl MetricsReport {
    pub fn new(frames: usize, methods: Vec<MethodReport>) -> MetricsReport {
        MetricsReport { averaging: "micro".to_string(), frames, methods }
    }

    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table: full field of view, corridor filtered, run time.
    pub fn table(&self) -> String {
        let pct = |v: f64| format!("{:.1}%", 100.0 * v);
        let name_w = self.methods.iter().map(|m| m.method.len()).max().unwrap_or(6).max(6);
        let mut s = String::new();
        let _ = writeln!(s, "micro-averaged pixel metrics over {} frames", self.frames);
        let _ = writeln!(
            s,
            "{:<name_w$} | {:^26} | {:^26} | {:>16}",
            "",
            "Full Field of View",
            "Corridor Filtered",
            ""
        );
        let _ = writeln!(
            s,
            "{:<name_w$} | {:>8}{:>10}{:>8} | {:>8}{:>10}{:>8} | {:>16}",
            "Method", "IoU", "Precision", "Recall", "IoU", "Precision", "Recall", "Run Time (ms)"
        );
        let _ = writeln!(s, "{}", "-".repeat(name_w + 77));
        for m in &self.methods {
            let _ = writeln!(
                s,
                "{:<name_w$} | {:>8}{:>10}{:>8} | {:>8}{:>10}{:>8} | {:>16}",
                m.method,
                pct(m.full_fov.iou),
                pct(m.full_fov.precision),
                pct(m.full_fov.recall),
                pct(m.corridor.iou),
                pct(m.corridor.precision),
                pct(m.corridor.recall),
                format!("{:.1} ± {:.1}", m.run_time.mean_ms, m.run_time.std_ms)
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{LidarPoint, Vec3};
    use crate::render::{render_view, CameraIntrinsics};
    use proptest::prelude::*;

    fn mask(w: usize, h: usize, on: &[usize]) -> BinaryMask {
        let mut m = BinaryMask::empty(w, h);
        for &i in on {
            m.bits[i] = true;
        }
        m
    }

    #[test]
    fn pixel_metric_examples() {
        let gt = mask(4, 1, &[0, 1]);
        assert_eq!(pixel_metrics(&gt, &gt).unwrap(), Rates { iou: 1.0, precision: 1.0, recall: 1.0 });
        assert_eq!(pixel_metrics(&mask(4, 1, &[]), &gt).unwrap(), Rates { iou: 0.0, precision: 1.0, recall: 0.0 });
        assert_eq!(pixel_metrics(&mask(4, 1, &[0]), &gt).unwrap(), Rates { iou: 0.5, precision: 1.0, recall: 0.5 });
        let empty = mask(4, 1, &[]);
        assert_eq!(pixel_metrics(&empty, &empty).unwrap().iou, 1.0);
        assert!(pixel_metrics(&mask(2, 2, &[]), &gt).is_err());
    }

    #[test]
    fn micro_average_sums_counts() {
        let a = FrameEval { full: PixelCounts { tp: 2, fp: 1, fn_: 0 }, corridor: PixelCounts::default(), timing_ms: 10.0, stages_ms: BTreeMap::new() };
        let b = FrameEval { full: PixelCounts { tp: 0, fp: 0, fn_: 3 }, corridor: PixelCounts::default(), timing_ms: 14.0, stages_ms: BTreeMap::new() };
        let r = MethodReport::from_frames("m", &[a.clone(), b.clone()]).unwrap();
        assert_eq!(r.full_counts, PixelCounts { tp: 2, fp: 1, fn_: 3 });
        assert!((r.full_fov.iou - 2.0 / 6.0).abs() < 1e-12);
        assert!((r.full_fov.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.full_fov.recall - 0.4).abs() < 1e-12);
        assert_eq!(r.run_time.mean_ms, 12.0);
        assert!((r.run_time.std_ms - 8f64.sqrt()).abs() < 1e-12);
        let single = MethodReport::from_frames("m", &[a.clone()]).unwrap();
        assert_eq!(single.full_fov, a.full.rates());
        assert_eq!(single.run_time.std_ms, 0.0);
        assert_eq!(MethodReport::from_frames("m", &[]), Err(MetricsError::NoFrames));
    }

    #[test]
    fn timing_std_matches_two_pass() {
        let xs = [3.0, 7.5, 1.25, 9.0, 4.0];
        let mean = xs.iter().sum::<f64>() / 5.0;
        let two_pass = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0).sqrt();
        let t = TimingStats::from_samples(&xs);
        assert!((t.std_ms - two_pass).abs() < 1e-12);
    }

    #[test]
    fn instance_matching() {
        let mut gt = BTreeMap::new();
        gt.insert(1, mask(4, 2, &[0, 1, 2]));
        gt.insert(2, mask(4, 2, &[4, 5, 6, 7]));
        assert_eq!(instance_match(&[mask(4, 2, &[0, 1, 2])], &gt).unwrap(), vec![Some(1)]);
        assert_eq!(instance_match(&[mask(4, 2, &[3])], &gt).unwrap(), vec![None]);
        // crossed overlaps: each candidate touches both instances
        let preds = [mask(4, 2, &[0, 1, 4]), mask(4, 2, &[2, 5, 6, 7])];
        let table: Vec<Vec<f64>> = preds.iter().map(|p| gt.values().map(|g| mask_iou(p, g).unwrap()).collect()).collect();
        let oracle: Vec<Option<u32>> = table
            .iter()
            .map(|row| if row[0] >= row[1] { Some(1) } else { Some(2) })
            .collect();
        assert_eq!(instance_match(&preds, &gt).unwrap(), oracle);
        assert_eq!(oracle, vec![Some(1), Some(2)]);
    }

    fn corridor_fixture() -> (RenderedView, PointCloud) {
        let k = CameraIntrinsics::from_fov(16, 8, 1.2, 0.8).unwrap();
        let mut pts = Vec::new();
        for v in 0..8 {
            for u in 0..16 {
                let z = 5.0;
                let x = (u as f64 + 0.5 - 8.0) / k.fu * z;
                let y = (v as f64 + 0.5 - 4.0) / k.fv * z;
                pts.push(LidarPoint::new(x, y, z, 1.0));
            }
        }
        let cloud = PointCloud::from_points(pts, "camera");
        (render_view(&cloud, &k), cloud)
    }

    #[test]
    fn corridor_examples() {
        let (view, cloud) = corridor_fixture();
        let id = Pose::identity();
        let wide = Corridor::new(vec![Vec3::new(-100.0, 0.0, 0.0), Vec3::new(100.0, 0.0, 0.0)], 1000.0).unwrap();
        let gt = mask(16, 8, &[1, 2, 3, 40, 41]);
        let pred = mask(16, 8, &[2, 3, 4, 41, 90]);
        assert_eq!(corridor_metrics(&pred, &gt, &view, &cloud, &id, &wide).unwrap(), pixel_metrics(&pred, &gt).unwrap());
        let far = Corridor::new(vec![Vec3::new(500.0, 0.0, 0.0), Vec3::new(600.0, 0.0, 0.0)], 1.0).unwrap();
        assert_eq!(corridor_metrics(&pred, &gt, &view, &cloud, &id, &far).unwrap(), Rates { iou: 1.0, precision: 1.0, recall: 1.0 });
    }

    proptest! {
        #[test]
        fn corridor_counts_match_brute_force(
            bits in proptest::collection::vec((any::<bool>(), any::<bool>()), 128),
            half in 0.2..3.0f64,
            x0 in -3.0..3.0f64,
        ) {
            let (view, cloud) = corridor_fixture();
            let pred = BinaryMask::from_bits(16, 8, bits.iter().map(|b| b.0).collect());
            let gt = BinaryMask::from_bits(16, 8, bits.iter().map(|b| b.1).collect());
            // path along camera z through x = x0; horizontal plane is x-y in
            // the corridor frame, so rotate camera coordinates accordingly
            let world_from_cam = Pose::rot_x(std::f64::consts::FRAC_PI_2);
            let corridor = Corridor::new(vec![Vec3::new(x0, -10.0, 0.0), Vec3::new(x0, 10.0, 0.0)], half).unwrap();
            let got = corridor_metrics(&pred, &gt, &view, &cloud, &world_from_cam, &corridor).unwrap();
            let mut c = PixelCounts::default();
            for i in 0..128 {
                let j = view.point_index[i].unwrap() as usize;
                let w = world_from_cam.transform_point(&cloud.points[j].position);
                if (w.x - x0).abs() <= half && w.y.abs() <= 10.0 {
                    match (pred.bits[i], gt.bits[i]) {
                        (true, true) => c.tp += 1,
                        (true, false) => c.fp += 1,
                        (false, true) => c.fn_ += 1,
                        _ => {}
                    }
                }
            }
            prop_assert_eq!(got, c.rates());
        }

        #[test]
        fn micro_average_is_order_invariant(counts in proptest::collection::vec((0..50u64, 0..50u64, 0..50u64), 1..8)) {
            let frames: Vec<FrameEval> = counts
                .iter()
                .map(|&(tp, fp, fn_)| FrameEval { full: PixelCounts { tp, fp, fn_ }, corridor: PixelCounts { tp: fp, fp: tp, fn_ }, timing_ms: tp as f64, stages_ms: BTreeMap::new() })
                .collect();
            let mut rev = frames.clone();
            rev.reverse();
            let a = MethodReport::from_frames("m", &frames).unwrap();
            let b = MethodReport::from_frames("m", &rev).unwrap();
            prop_assert_eq!(a.full_counts, b.full_counts);
            prop_assert_eq!(a.full_fov, b.full_fov);
            prop_assert_eq!(a.corridor, b.corridor);
            let r = a.full_fov;
            prop_assert!((0.0..=1.0).contains(&r.iou) && (0.0..=1.0).contains(&r.precision) && (0.0..=1.0).contains(&r.recall));
        }
    }
}
