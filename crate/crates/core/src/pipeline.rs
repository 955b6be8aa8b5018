//! Per-frame change detection, the benchmark runner and the command entry points.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::baseline::{geometric_flags_indexed, pixel_diff_baseline, BaselineOutput};
use crate::config::{ConfigError, PipelineConfig, PromptMethod, SegmenterBackend};
use crate::dataset::{read_benchmark, read_mask, read_meta, to_json_pretty, write_benchmark, DatasetError};
use crate::detect::{changed_points, classify_changes, summarize, verify_3d_indexed, ChangeCandidate, Corridor, DetectError, ObstacleQueue};
use crate::geom::{Aabb, LidarPoint, PointCloud, Pose, Vec3};
use crate::io::{write_ply, IoError};
use crate::prompt::{components_to_prompts, connected_components, difference_map, nn_flags_indexed, top_k_maxima, DiffWeights, Prompt, PromptError};
use crate::render::{colorize_with_scale, intensity_scale, interpolate_gaps, render_equirect, render_view_from, CameraIntrinsics, EquirectModel, HsvImage, RenderError, RenderedView};
use crate::segment::{BinaryMask, BridgeClient, MaskSet, ReferenceSegmenter, SegmentError, Segmenter};
use crate::simeval::benchmark::{instance_masks, BenchError};
use crate::simeval::metrics::{corridor_counts, corridor_pixels, instance_match, pixel_counts, FrameEval, MethodReport, MetricsError};
use crate::simeval::{make_benchmark, Benchmark, CameraSpec, MetricsReport, SceneSpec, TrajectorySpec};
use crate::spatial::KdTree;

/// Extra margin around the live points when cropping the map for neighbour queries.
const MAP_CROP_MARGIN: f64 = 1.0;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

impl PipelineError {
    /// Configuration and usage problems versus failures while running.
    pub fn is_usage(&self) -> bool {
        matches!(self, PipelineError::Config(_) | PipelineError::Usage(_))
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| PipelineError::File { path: parent.display().to_string(), source })?;
    }
    fs::write(path, bytes).map_err(|source| PipelineError::File { path: path.display().to_string(), source })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    PixelBaseline,
    Diff3dBaseline,
    LasersamPixelPrompts,
    Lasersam3dPrompts,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::PixelBaseline, Method::Diff3dBaseline, Method::LasersamPixelPrompts, Method::Lasersam3dPrompts];

    pub fn name(&self) -> &'static str {
        match self {
            Method::PixelBaseline => "pixel_baseline",
            Method::Diff3dBaseline => "diff3d_baseline",
            Method::LasersamPixelPrompts => "lasersam_pixel_prompts",
            Method::Lasersam3dPrompts => "lasersam_3d_prompts",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s.trim())
    }

    /// Comma-separated list; `all` selects every method.
    pub fn parse_list(s: &str) -> Result<Vec<Method>, PipelineError> {
        if s.trim() == "all" {
            return Ok(Method::ALL.to_vec());
        }
        let mut out = Vec::new();
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            let m = Method::parse(part).ok_or_else(|| PipelineError::Usage(format!("unknown method `{}`", part.trim())))?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(PipelineError::Usage("no methods selected".into()));
        }
        Ok(out)
    }
}

/// Sensor, vehicle and virtual camera frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rig {
    pub intrinsics: CameraIntrinsics,
    pub camera_from_sensor: Pose,
    pub vehicle_from_sensor: Pose,
}

impl Rig {
    pub fn new(camera: &CameraSpec, vehicle_from_sensor: Pose) -> Result<Rig, RenderError> {
        Ok(Rig { intrinsics: camera.intrinsics()?, camera_from_sensor: camera.camera_from_sensor(), vehicle_from_sensor })
    }

    /// `T_cv`: vehicle frame into the camera.
    pub fn camera_from_vehicle(&self) -> Pose {
        self.camera_from_sensor * self.vehicle_from_sensor.inverse()
    }
}

/// One repeat frame: the submap in its teach-vertex frame and the live
/// scan in the sensor frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameInput<'a> {
    pub frame: usize,
    pub map: &'a PointCloud,
    pub live: &'a PointCloud,
    pub vehicle_from_map: Pose,
    pub world_from_vehicle: Pose,
}

/// Both clouds in the camera frame, their views and images.
#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub frame: usize,
    pub live_cam: PointCloud,
    pub map_cam: PointCloud,
    pub live_view: RenderedView,
    pub map_view: RenderedView,
    pub live_image: HsvImage,
    pub map_image: HsvImage,
    pub intensity_scale: f64,
    pub world_from_camera: Pose,
    pub render_ms: f64,
}

pub fn render_frame(cfg: &PipelineConfig, rig: &Rig, input: &FrameInput) -> RenderedFrame {
    let start = Instant::now();
    let camera_from_map = rig.camera_from_vehicle() * input.vehicle_from_map;
    let live_cam = rig.camera_from_sensor.transform_cloud_into(input.live, "camera");
    let map_cam = camera_from_map.transform_cloud_into(input.map, "camera");
    let mut live_view = render_view_from(input.live, &rig.intrinsics, &rig.camera_from_sensor);
    let mut map_view = render_view_from(input.map, &rig.intrinsics, &camera_from_map);
    if cfg.render.interpolate {
        live_view = interpolate_gaps(&live_view);
        map_view = interpolate_gaps(&map_view);
    }
    let scale = intensity_scale(&[&live_view, &map_view]);
    let live_image = colorize_with_scale(&live_view, cfg.render.max_range, scale);
    let map_image = colorize_with_scale(&map_view, cfg.render.max_range, scale);
    RenderedFrame {
        frame: input.frame,
        live_cam,
        map_cam,
        live_view,
        map_view,
        live_image,
        map_image,
        intensity_scale: scale,
        world_from_camera: input.world_from_vehicle * rig.camera_from_vehicle().inverse(),
        render_ms: ms(start.elapsed()),
    }
}

/// Positions of the live points behind measured pixels, with their indices.
pub fn retained_live(rf: &RenderedFrame) -> Vec<(usize, Vec3)> {
    rf.live_view.retained_points().into_iter().map(|j| (j, rf.live_cam.points[j].position)).collect()
}

/// Map index restricted to points that can lie within `margin` of a query:
/// the queries' bounding box and viewing wedge (`|x| <= t z`, `|y| <= t z`),
/// each grown by the margin. Exact for neighbour queries of radius up to
/// the margin.
pub fn cropped_map_index(map_cam: &PointCloud, queries: &[(usize, Vec3)], margin: f64) -> KdTree {
    let Some(bbox) = Aabb::from_points(queries.iter().map(|(_, p)| p)) else { return KdTree::new(Vec::new()) };
    let bbox = bbox.inflated(margin);
    let (mut th, mut tv) = (0.0f64, 0.0f64);
    let wedge = queries.iter().all(|(_, q)| q.z > 0.0);
    if wedge {
        for (_, q) in queries {
            th = th.max(q.x.abs() / q.z);
            tv = tv.max(q.y.abs() / q.z);
        }
    }
    let (mh, mv) = (margin * (1.0 + th * th).sqrt(), margin * (1.0 + tv * tv).sqrt());
    let keep = |p: &Vec3| bbox.contains(p) && (!wedge || (p.x.abs() - th * p.z <= mh && p.y.abs() - tv * p.z <= mv));
    KdTree::new(map_cam.points.iter().map(|p| p.position).filter(keep).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub render: f64,
    pub prompt: f64,
    pub segment: f64,
    pub detect: f64,
    pub total: f64,
}

impl StageTimings {
    pub fn non_segmentation(&self) -> f64 {
        self.render + self.prompt + self.detect
    }

    pub fn as_map(&self) -> BTreeMap<String, f64> {
        [("render", self.render), ("prompt", self.prompt), ("segment", self.segment), ("detect", self.detect)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }
}

/// Result of prompting, segmenting and classifying one rendered frame.
#[derive(Debug, Clone)]
pub struct Detection {
    pub frame: usize,
    pub prompts: Vec<Prompt>,
    pub live_masks: MaskSet,
    pub map_masks: MaskSet,
    /// Every mask that failed to match the map; points in the world frame.
    /// `in_corridor` is set when a point farther than the verification
    /// distance from the map lies inside the corridor.
    pub candidates: Vec<ChangeCandidate>,
    /// Measured live pixels covered by a verified candidate.
    pub changed_mask: BinaryMask,
    pub timings: StageTimings,
}

impl Detection {
    pub fn verified(&self) -> impl Iterator<Item = &ChangeCandidate> {
        self.candidates.iter().filter(|c| c.verified_3d)
    }
}

pub fn make_prompts(cfg: &PipelineConfig, rf: &RenderedFrame, method: PromptMethod, index: &mut Option<KdTree>) -> Result<Vec<Prompt>, PipelineError> {
    let p = &cfg.prompting;
    Ok(match method {
        PromptMethod::PixelDiff => {
            let weights = DiffWeights { range: p.range_weight, intensity: p.intensity_weight };
            let d = difference_map(&rf.live_view, &rf.map_view, weights, rf.intensity_scale)?;
            top_k_maxima(&d, p.k, p.min_dist, p.noise_floor)
        }
        PromptMethod::Diff3d => {
            let live = retained_live(rf);
            let tree = index.get_or_insert_with(|| cropped_map_index(&rf.map_cam, &live, MAP_CROP_MARGIN));
            let queries: Vec<Vec3> = live.iter().map(|(_, q)| *q).collect();
            let flags = nn_flags_indexed(&queries, tree, p.nn_threshold);
            let flagged: Vec<(usize, Vec3)> = live.into_iter().zip(flags).filter(|(_, f)| *f).map(|(x, _)| x).collect();
            let mut comps = connected_components(&flagged, p.cluster_radius);
            comps.retain(|c| c.cardinality() >= p.min_cluster_points);
            components_to_prompts(&comps, p.k, &rf.live_cam, &rf.live_view)
        }
    })
}

/// Prompts, segments both images, classifies, verifies in 3D and moves the
/// surviving candidates into the world frame.
pub fn detect_frame(
    cfg: &PipelineConfig,
    rf: &RenderedFrame,
    method: PromptMethod,
    segmenter: &mut dyn Segmenter<f64>,
    corridor: &Corridor,
) -> Result<Detection, PipelineError> {
    let t_prompt = Instant::now();
    let mut index = None;
    let prompts = make_prompts(cfg, rf, method, &mut index)?;
    let prompt_ms = ms(t_prompt.elapsed());

    let t_seg = Instant::now();
    let live_masks = segmenter.segment(&rf.live_image, &rf.live_view, &prompts)?;
    let map_masks = segmenter.segment(&rf.map_image, &rf.map_view, &prompts)?;
    let segment_ms = ms(t_seg.elapsed());

    let t_det = Instant::now();
    let d = &cfg.detection;
    let mut candidates: Vec<ChangeCandidate> = classify_changes(&live_masks, &map_masks, d.iou_threshold)?;
    let mut changed_mask = BinaryMask::empty(rf.live_view.width, rf.live_view.height);
    if !candidates.is_empty() {
        let tree = index.get_or_insert_with(|| cropped_map_index(&rf.map_cam, &retained_live(rf), MAP_CROP_MARGIN));
        for c in &mut candidates {
            changed_points(c, &rf.live_view, &rf.live_cam)?;
            c.verified_3d = verify_3d_indexed(c, tree, d.verify_tau, d.verify_rho);
            let novel: Vec<bool> = c.points.iter().map(|p| !tree.any_within(&p.position, d.verify_tau)).collect();
            for p in &mut c.points {
                p.position = rf.world_from_camera.transform_point(&p.position);
            }
            if let Ok((centroid, aabb)) = summarize(&c.points) {
                c.centroid = Some(centroid);
                c.aabb = Some(aabb);
            }
            c.in_corridor = c.points.iter().zip(&novel).any(|(p, n)| *n && corridor.contains(&p.position));
            if c.verified_3d {
                for (i, on) in c.live_mask.bits.iter().enumerate() {
                    if *on && rf.live_view.is_measured(i) {
                        changed_mask.bits[i] = true;
                    }
                }
            }
        }
    }
    let detect_ms = ms(t_det.elapsed());
    let timings = StageTimings {
        render: rf.render_ms,
        prompt: prompt_ms,
        segment: segment_ms,
        detect: detect_ms,
        total: rf.render_ms + prompt_ms + segment_ms + detect_ms,
    };
    Ok(Detection { frame: rf.frame, prompts, live_masks, map_masks, candidates, changed_mask, timings })
}

/// Pixel baseline restricted to measured live pixels.
pub fn pixel_baseline_mask(cfg: &PipelineConfig, rf: &RenderedFrame) -> Result<BinaryMask, PipelineError> {
    let p = &cfg.prompting;
    let weights = DiffWeights { range: p.range_weight, intensity: p.intensity_weight };
    let r = pixel_diff_baseline(&rf.live_view, &rf.map_view, cfg.baselines.pixel_threshold, weights, rf.intensity_scale)?;
    let BaselineOutput::Mask(mut m) = r.output else { unreachable!("pixel baseline yields a mask") };
    m.retain(|i| rf.live_view.is_measured(i));
    Ok(m)
}

/// Live pixels whose point the roughness-adaptive 3D baseline flags.
pub fn diff3d_baseline_mask(cfg: &PipelineConfig, rf: &RenderedFrame) -> BinaryMask {
    let live = retained_live(rf);
    let tree = cropped_map_index(&rf.map_cam, &live, MAP_CROP_MARGIN);
    let queries: Vec<Vec3> = live.iter().map(|(_, q)| *q).collect();
    let flags = geometric_flags_indexed(&queries, &tree, &cfg.baselines.roughness());
    let flagged: BTreeSet<usize> = live.iter().zip(flags).filter(|(_, f)| *f).map(|((j, _), _)| *j).collect();
    let bits = rf.live_view.point_index.iter().enumerate().map(|(i, j)| rf.live_view.is_measured(i) && j.is_some_and(|j| flagged.contains(&(j as usize)))).collect();
    BinaryMask::from_bits(rf.live_view.width, rf.live_view.height, bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxReport {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub iou: f64,
    pub verified: bool,
    pub centroid: Option<[f64; 3]>,
    pub aabb: Option<BoxReport>,
    pub n_points: usize,
    pub in_corridor: bool,
}

/// Per-frame output; positions are in the world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeReport {
    pub frame: usize,
    pub candidates: Vec<CandidateReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<StageTimings>,
}

impl ChangeReport {
    pub fn from_detection(d: &Detection, with_timing: bool) -> ChangeReport {
        let candidates = d
            .candidates
            .iter()
            .map(|c| CandidateReport {
                iou: c.best_map_iou,
                verified: c.verified_3d,
                centroid: c.centroid.map(|p| p.to_array()),
                aabb: c.aabb.map(|b| BoxReport { min: b.min.to_array(), max: b.max.to_array() }),
                n_points: c.points.len(),
                in_corridor: c.in_corridor,
            })
            .collect();
        ChangeReport { frame: d.frame, candidates, timing_ms: with_timing.then_some(d.timings) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueReport {
    pub centroid: [f64; 3],
    pub aabb: BoxReport,
    pub last_seen_frame: usize,
    pub hit_count: usize,
}

pub fn queue_report(q: &ObstacleQueue) -> Vec<QueueReport> {
    q.snapshot()
        .iter()
        .map(|e| QueueReport {
            centroid: e.centroid.to_array(),
            aabb: BoxReport { min: e.aabb.min.to_array(), max: e.aabb.max.to_array() },
            last_seen_frame: e.last_seen_frame,
            hit_count: e.hit_count,
        })
        .collect()
}

pub fn make_segmenter(cfg: &PipelineConfig) -> Result<Box<dyn Segmenter<f64>>, PipelineError> {
    let s = &cfg.segmenter;
    Ok(match s.backend {
        SegmenterBackend::Reference => Box::new(ReferenceSegmenter { tau_range: s.tau_range, tau_intensity: s.tau_intensity }),
        SegmenterBackend::Bridge => {
            let endpoint = cfg.endpoint().ok_or_else(|| {
                PipelineError::Usage(format!("the bridge segmenter needs an endpoint (config, --endpoint or {})", crate::config::ENDPOINT_ENV))
            })?;
            let client = BridgeClient::new(endpoint, Duration::from_millis(s.timeout_ms), s.retries);
            client.health()?;
            Box::new(client)
        }
    })
}

/// Frames of a benchmark under a given configuration.
pub struct BenchmarkFrames<'a> {
    pub bench: &'a Benchmark,
    pub rig: Rig,
    pub corridor: Corridor,
}

impl<'a> BenchmarkFrames<'a> {
    pub fn new(bench: &'a Benchmark, cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let rig = Rig::new(&cfg.camera, bench.vehicle_from_sensor())?;
        let mut corridor = bench.corridor.clone();
        if let Some(w) = cfg.corridor.half_width {
            corridor.half_width = w;
        }
        Ok(Self { bench, rig, corridor })
    }

    pub fn len(&self) -> usize {
        self.bench.frames()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Renders frame `k`.
    pub fn render(&self, cfg: &PipelineConfig, k: usize) -> RenderedFrame {
        let map = self.bench.submap(k);
        let input = FrameInput {
            frame: k,
            map: &map,
            live: &self.bench.live_scans[k],
            vehicle_from_map: self.bench.vehicle_from_map(k),
            world_from_vehicle: self.bench.repeat_poses[k],
        };
        render_frame(cfg, &self.rig, &input)
    }
}

/// Runs the detector over every frame in order, updating the obstacle queue.
pub fn detect_benchmark(
    bench: &Benchmark,
    cfg: &PipelineConfig,
    segmenter: &mut dyn Segmenter<f64>,
) -> Result<(Vec<(RenderedFrame, Detection)>, ObstacleQueue), PipelineError> {
    let frames = BenchmarkFrames::new(bench, cfg)?;
    let d = &cfg.detection;
    let mut queue = ObstacleQueue::new(d.capacity, d.ttl_frames, d.merge_radius);
    let mut out = Vec::with_capacity(frames.len());
    for k in 0..frames.len() {
        let start = Instant::now();
        let rf = frames.render(cfg, k);
        let mut det = detect_frame(cfg, &rf, cfg.prompting.method, segmenter, &frames.corridor)?;
        let t_queue = Instant::now();
        let verified: Vec<ChangeCandidate> = det.verified().cloned().collect();
        queue.update(&verified, k);
        det.timings.detect += ms(t_queue.elapsed());
        det.timings.total = det.timings.render + det.timings.prompt + det.timings.segment + det.timings.detect;
        let _ = start;
        out.push((rf, det));
    }
    Ok((out, queue))
}

fn overlay(image: &HsvImage, mask: &BinaryMask) -> image::RgbImage {
    let mut rgb = image.to_rgb();
    for (i, on) in mask.bits.iter().enumerate() {
        if *on {
            let (u, v) = ((i % mask.width) as u32, (i / mask.width) as u32);
            rgb.put_pixel(u, v, image::Rgb([255, 0, 255]));
        }
    }
    rgb
}

fn save_rgb(img: &image::RgbImage, path: &Path) -> Result<(), PipelineError> {
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png).map_err(RenderError::Image)?;
    write_file(path, &bytes)
}

fn save_hsv(img: &HsvImage, path: &Path) -> Result<(), PipelineError> {
    write_file(path, &img.encode_png()?)
}

/// `detect`: per-frame reports (without timings, so reruns are byte
/// identical), `timing.json`, the final obstacle queue, and optionally
/// images and changed points.
pub fn run_detect(dataset: &Path, out: &Path, cfg: &PipelineConfig) -> Result<Vec<ChangeReport>, PipelineError> {
    let bench = read_benchmark(dataset)?;
    check_camera(&bench, cfg)?;
    let mut segmenter = make_segmenter(cfg)?;
    let (frames, queue) = detect_benchmark(&bench, cfg, segmenter.as_mut())?;
    let mut reports = Vec::new();
    let mut timings = Vec::new();
    for (rf, det) in &frames {
        let report = ChangeReport::from_detection(det, false);
        write_file(&out.join("reports").join(format!("frame_{:04}.json", det.frame)), to_json_pretty(&report).as_bytes())?;
        timings.push(ChangeReport { timing_ms: Some(det.timings), candidates: Vec::new(), frame: det.frame });
        if cfg.output.save_images {
            let dir = out.join("images");
            save_hsv(&rf.live_image, &dir.join(format!("frame_{:04}_live.png", det.frame)))?;
            save_hsv(&rf.map_image, &dir.join(format!("frame_{:04}_map.png", det.frame)))?;
            save_rgb(&overlay(&rf.live_image, &det.changed_mask), &dir.join(format!("frame_{:04}_changes.png", det.frame)))?;
        }
        if cfg.output.save_points {
            let live = &bench.live_scans[det.frame];
            let mut cloud = PointCloud::new("world");
            for c in det.verified() {
                for p in &c.points {
                    let src = &live.points[p.index];
                    cloud.push(LidarPoint { position: p.position, intensity: src.intensity, instance_id: src.instance_id });
                }
            }
            let dir = out.join("points");
            fs::create_dir_all(&dir).map_err(|source| PipelineError::File { path: dir.display().to_string(), source })?;
            write_ply(&dir.join(format!("frame_{:04}.ply", det.frame)), &cloud)?;
        }
        reports.push(report);
    }
    let timing_json: Vec<serde_json::Value> = timings.iter().map(|t| serde_json::json!({ "frame": t.frame, "timing_ms": t.timing_ms })).collect();
    write_file(&out.join("timing.json"), to_json_pretty(&timing_json).as_bytes())?;
    write_file(&out.join("queue.json"), to_json_pretty(&queue_report(&queue)).as_bytes())?;
    Ok(reports)
}

/// Loads the configuration file (defaults when absent) and applies the
/// overrides. Without a `[camera]` table or `camera.*` override the camera
/// is taken from the dataset.
pub fn resolve_config<S: AsRef<str>>(config: Option<&Path>, overrides: &[S], dataset: Option<&Path>) -> Result<PipelineConfig, PipelineError> {
    let (mut cfg, has_camera) = match config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
            let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
            (PipelineConfig::from_toml(&text)?, raw.contains_key("camera"))
        }
        None => (PipelineConfig::default(), false),
    };
    let has_camera = has_camera || overrides.iter().any(|o| o.as_ref().trim_start().starts_with("camera."));
    if let (false, Some(dir)) = (has_camera, dataset) {
        cfg.camera = read_meta(dir)?.scene.camera;
    }
    Ok(cfg.with_overrides(overrides)?)
}

fn check_camera(bench: &Benchmark, cfg: &PipelineConfig) -> Result<(), PipelineError> {
    if bench.spec.camera != cfg.camera {
        return Err(PipelineError::Usage(
            "the configured camera differs from the one the ground truth was rendered with; copy the dataset's camera into [camera]".into(),
        ));
    }
    Ok(())
}

/// Per-frame outcome of every evaluated method.
#[derive(Debug, Clone)]
pub struct BenchFrame {
    pub frame: usize,
    pub gt: BinaryMask,
    pub instances: BTreeMap<u32, BinaryMask>,
    pub predictions: BTreeMap<Method, BinaryMask>,
    pub evals: BTreeMap<Method, FrameEval>,
    /// Ground-truth instance matched by each verified candidate.
    pub matches: BTreeMap<Method, Vec<Option<u32>>>,
    pub detections: BTreeMap<Method, Detection>,
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub report: MetricsReport,
    pub frames: Vec<BenchFrame>,
}

/// Runs each method on every frame and scores it against the ground truth,
/// on the full view and within the corridor.
pub fn evaluate_benchmark(
    bench: &Benchmark,
    cfg: &PipelineConfig,
    methods: &[Method],
    segmenter: &mut dyn Segmenter<f64>,
) -> Result<BenchOutcome, PipelineError> {
    check_camera(bench, cfg)?;
    let frames = BenchmarkFrames::new(bench, cfg)?;
    let ids = bench.injected_ids();
    let world_from_sensor: Vec<Pose> = bench.repeat_poses.iter().map(|p| *p * bench.vehicle_from_sensor()).collect();
    let mut out = Vec::with_capacity(frames.len());
    for k in 0..frames.len() {
        let rf = frames.render(cfg, k);
        let live = &bench.live_scans[k];
        let gt = bench.gt_masks[k].clone();
        let inside = corridor_pixels(&rf.live_view, live, &world_from_sensor[k], &frames.corridor);
        let instances: BTreeMap<u32, BinaryMask> = instance_masks(&rf.live_view, live).into_iter().filter(|(id, _)| ids.contains(id)).collect();
        let mut bf = BenchFrame {
            frame: k,
            gt,
            instances,
            predictions: BTreeMap::new(),
            evals: BTreeMap::new(),
            matches: BTreeMap::new(),
            detections: BTreeMap::new(),
        };
        for &m in methods {
            let t = Instant::now();
            let (pred, stages) = match m {
                Method::PixelBaseline => {
                    let mask = pixel_baseline_mask(cfg, &rf)?;
                    let mut st = BTreeMap::new();
                    st.insert("render".to_string(), rf.render_ms);
                    st.insert("detect".to_string(), ms(t.elapsed()));
                    (mask, st)
                }
                Method::Diff3dBaseline => {
                    let mask = diff3d_baseline_mask(cfg, &rf);
                    let mut st = BTreeMap::new();
                    st.insert("render".to_string(), rf.render_ms);
                    st.insert("detect".to_string(), ms(t.elapsed()));
                    (mask, st)
                }
                Method::LasersamPixelPrompts | Method::Lasersam3dPrompts => {
                    let pm = if m == Method::LasersamPixelPrompts { PromptMethod::PixelDiff } else { PromptMethod::Diff3d };
                    let det = detect_frame(cfg, &rf, pm, segmenter, &frames.corridor)?;
                    let verified: Vec<BinaryMask> = det.verified().map(|c| c.live_mask.clone()).collect();
                    bf.matches.insert(m, instance_match(&verified, &bf.instances)?);
                    let mask = det.changed_mask.clone();
                    let st = det.timings.as_map();
                    bf.detections.insert(m, det);
                    (mask, st)
                }
            };
            let total: f64 = stages.values().sum();
            let full = pixel_counts(&pred, &bf.gt)?;
            let corridor = corridor_counts(&pred, &bf.gt, &inside)?;
            bf.evals.insert(m, FrameEval { full, corridor, timing_ms: total, stages_ms: stages });
            bf.predictions.insert(m, pred);
        }
        out.push(bf);
    }
    let mut reports = Vec::new();
    for &m in methods {
        let evals: Vec<FrameEval> = out.iter().map(|f| f.evals[&m].clone()).collect();
        reports.push(MethodReport::from_frames(m.name(), &evals)?);
    }
    Ok(BenchOutcome { report: MetricsReport::new(out.len(), reports), frames: out })
}

/// `bench`: writes `metrics.json` and `metrics.txt`.
pub fn run_bench(dataset: &Path, out: &Path, cfg: &PipelineConfig, methods: &[Method]) -> Result<MetricsReport, PipelineError> {
    let bench = read_benchmark(dataset)?;
    let mut segmenter = make_segmenter(cfg)?;
    let outcome = evaluate_benchmark(&bench, cfg, methods, segmenter.as_mut())?;
    write_file(&out.join("metrics.json"), outcome.report.to_json().as_bytes())?;
    write_file(&out.join("metrics.txt"), outcome.report.table().as_bytes())?;
    if cfg.output.save_images {
        for f in &outcome.frames {
            for (m, pred) in &f.predictions {
                let rf_image = colorize_mask(pred, &f.gt);
                save_rgb(&rf_image, &out.join("images").join(format!("frame_{:04}_{}.png", f.frame, m.name())))?;
            }
        }
    }
    Ok(outcome.report)
}

/// Green true positives, red false positives, blue misses.
fn colorize_mask(pred: &BinaryMask, gt: &BinaryMask) -> image::RgbImage {
    let mut img = image::RgbImage::new(pred.width as u32, pred.height as u32);
    for (i, (p, g)) in pred.bits.iter().zip(&gt.bits).enumerate() {
        let c = match (*p, *g) {
            (true, true) => [0, 200, 0],
            (true, false) => [220, 0, 0],
            (false, true) => [0, 0, 220],
            _ => [0, 0, 0],
        };
        img.put_pixel((i % pred.width) as u32, (i / pred.width) as u32, image::Rgb(c));
    }
    img
}

/// `simulate`: generates and writes a benchmark.
pub fn run_simulate(scene: &SceneSpec, trajectory: &TrajectorySpec, seed: u64, out: &Path) -> Result<Benchmark, PipelineError> {
    let b = make_benchmark(scene, trajectory, seed)?;
    write_benchmark(&b, out)?;
    Ok(b)
}

/// `render`: live, map and equirectangular images of one frame with JSON sidecars.
pub fn run_render(dataset: &Path, frame: usize, out: &Path, cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let bench = read_benchmark(dataset)?;
    if frame >= bench.frames() {
        return Err(PipelineError::Usage(format!("frame {frame} out of range (dataset has {})", bench.frames())));
    }
    let frames = BenchmarkFrames::new(&bench, cfg)?;
    let rf = frames.render(cfg, frame);
    save_hsv(&rf.live_image, &out.join("live.png"))?;
    save_hsv(&rf.map_image, &out.join("map.png"))?;
    write_file(&out.join("live.json"), to_json_pretty(&rf.live_view.sidecar()).as_bytes())?;
    write_file(&out.join("map.json"), to_json_pretty(&rf.map_view.sidecar()).as_bytes())?;
    let eq = EquirectModel::new(1024, 128, std::f64::consts::TAU, cfg.camera.fov_v_deg.to_radians())?;
    let mut view = render_equirect(&rf.live_cam, &eq);
    view.camera_from_source = frames.rig.camera_from_sensor;
    if cfg.render.interpolate {
        view = interpolate_gaps(&view);
    }
    let scale = intensity_scale(&[&view]);
    save_hsv(&colorize_with_scale(&view, cfg.render.max_range, scale), &out.join("live_equirect.png"))?;
    Ok(())
}

/// `eval`: scores `masks/mask_NNNN.png` against the dataset ground truth.
pub fn run_eval(dataset: &Path, masks: &Path, cfg: &PipelineConfig) -> Result<MetricsReport, PipelineError> {
    let bench = read_benchmark(dataset)?;
    check_camera(&bench, cfg)?;
    let frames = BenchmarkFrames::new(&bench, cfg)?;
    let mut evals = Vec::new();
    for k in 0..frames.len() {
        let rf = frames.render(cfg, k);
        let pred = read_mask(&masks.join(format!("mask_{k:04}.png")))?;
        let world_from_sensor = bench.repeat_poses[k] * bench.vehicle_from_sensor();
        let inside = corridor_pixels(&rf.live_view, &bench.live_scans[k], &world_from_sensor, &frames.corridor);
        evals.push(FrameEval {
            full: pixel_counts(&pred, &bench.gt_masks[k])?,
            corridor: corridor_counts(&pred, &bench.gt_masks[k], &inside)?,
            timing_ms: 0.0,
            stages_ms: BTreeMap::new(),
        });
    }
    Ok(MetricsReport::new(evals.len(), vec![MethodReport::from_frames("external", &evals)?]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simeval::presets;
    use crate::simeval::SensorModel;

    fn tiny() -> Benchmark {
        let spec = SceneSpec { sensor: SensorModel { n_beams: 32, azimuth_steps: 256, ..SensorModel::default() }, ..presets::standard_scene() };
        let traj = TrajectorySpec { repeat_frames: 2, repeat_spacing: 4.0, repeat_start: 4.0, ..presets::standard_trajectory() };
        make_benchmark(&spec, &traj, 1).unwrap()
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()), Some(m));
        }
        assert_eq!(Method::parse_list("all").unwrap().len(), 4);
        assert_eq!(Method::parse_list("pixel_baseline, lasersam_3d_prompts").unwrap(), vec![Method::PixelBaseline, Method::Lasersam3dPrompts]);
        assert!(Method::parse_list("nope").is_err());
    }

    #[test]
    fn identical_clouds_give_no_changes() {
        let b = tiny();
        let cfg = PipelineConfig::default();
        let rig = Rig::new(&cfg.camera, b.vehicle_from_sensor()).unwrap();
        let live = &b.live_scans[0];
        // the live scan rendered as its own map
        let input = FrameInput { frame: 0, map: live, live, vehicle_from_map: b.vehicle_from_sensor(), world_from_vehicle: b.repeat_poses[0] };
        let rf = render_frame(&cfg, &rig, &input);
        assert_eq!(rf.live_view.depth, rf.map_view.depth);
        let mut seg = ReferenceSegmenter::default();
        for method in [PromptMethod::PixelDiff, PromptMethod::Diff3d] {
            let det = detect_frame(&cfg, &rf, method, &mut seg, &b.corridor).unwrap();
            assert!(det.prompts.is_empty());
            assert!(det.changed_mask.is_empty());
        }
        assert!(pixel_baseline_mask(&cfg, &rf).unwrap().is_empty());
        assert!(diff3d_baseline_mask(&cfg, &rf).is_empty());
    }

    #[test]
    fn timings_add_up() {
        let b = tiny();
        let cfg = PipelineConfig::default();
        let (frames, _) = detect_benchmark(&b, &cfg, &mut ReferenceSegmenter::default()).unwrap();
        for (_, d) in &frames {
            let t = d.timings;
            let sum = t.render + t.prompt + t.segment + t.detect;
            assert!((sum - t.total).abs() <= 0.05 * t.total.max(1e-9));
        }
    }

    #[test]
    fn cropped_index_is_exact_within_margin() {
        let b = tiny();
        let cfg = PipelineConfig::default();
        let frames = BenchmarkFrames::new(&b, &cfg).unwrap();
        let rf = frames.render(&cfg, 0);
        let live = retained_live(&rf);
        let crop = cropped_map_index(&rf.map_cam, &live, MAP_CROP_MARGIN);
        let full = KdTree::new(rf.map_cam.positions());
        for (_, q) in live.iter().step_by(37) {
            assert_eq!(crop.any_within(q, 0.3), full.any_within(q, 0.3));
        }
    }

    #[test]
    fn camera_must_match_dataset() {
        let b = tiny();
        let cfg = PipelineConfig::default().with_overrides(&["camera.width=128"]).unwrap();
        let err = evaluate_benchmark(&b, &cfg, &[Method::PixelBaseline], &mut ReferenceSegmenter::default()).unwrap_err();
        assert!(err.is_usage());
    }
}
