//! On-disk benchmark layout.
//!
//! ```text
//! scene.json          generation inputs, seed, frame to teach-vertex matching
//! poses_teach.txt     world from vehicle, one 3x4 row-major pose per line
//! poses_repeat.txt    localization estimates for the repeat frames
//! teach/scan_NNNN.ply teach scans, sensor frame
//! live/scan_NNNN.ply  repeat scans, sensor frame
//! gt/mask_NNNN.png    changed pixels (255) in the benchmark camera
//! corridor.json       taught path and half width, world frame
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detect::Corridor;
use crate::io::{read_ply, read_poses, write_ply, write_poses, IoError};
use crate::render::RenderError;
use crate::segment::BinaryMask;
use crate::simeval::{Benchmark, SceneSpec, TrajectorySpec};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("{path}: {msg}")]
    Json { path: String, msg: String },
    #[error("{path}: {source}")]
    Mask { path: String, source: RenderError },
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneMeta {
    pub scene: SceneSpec,
    pub trajectory: TrajectorySpec,
    pub seed: u64,
    pub frame_teach_index: Vec<usize>,
}

pub fn teach_scan_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("teach").join(format!("scan_{i:04}.ply"))
}

pub fn live_scan_path(dir: &Path, k: usize) -> PathBuf {
    dir.join("live").join(format!("scan_{k:04}.ply"))
}

pub fn gt_mask_path(dir: &Path, k: usize) -> PathBuf {
    dir.join("gt").join(format!("mask_{k:04}.png"))
}

fn create_dir(p: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(p).map_err(|source| DatasetError::File { path: p.display().to_string(), source })
}

fn write_bytes(p: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    fs::write(p, bytes).map_err(|source| DatasetError::File { path: p.display().to_string(), source })
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(p).map_err(|source| DatasetError::File { path: p.display().to_string(), source })?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Json { path: p.display().to_string(), msg: e.to_string() })
}

pub fn to_json_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

pub fn write_benchmark(b: &Benchmark, dir: &Path) -> Result<(), DatasetError> {
    for sub in ["teach", "live", "gt"] {
        create_dir(&dir.join(sub))?;
    }
    let meta = SceneMeta { scene: b.spec.clone(), trajectory: b.trajectory.clone(), seed: b.seed, frame_teach_index: b.frame_teach_index.clone() };
    write_bytes(&dir.join("scene.json"), to_json_pretty(&meta).as_bytes())?;
    write_bytes(&dir.join("corridor.json"), to_json_pretty(&b.corridor).as_bytes())?;
    write_poses(&dir.join("poses_teach.txt"), &b.teach_poses)?;
    write_poses(&dir.join("poses_repeat.txt"), &b.repeat_poses)?;
    for (i, s) in b.teach_scans.iter().enumerate() {
        write_ply(&teach_scan_path(dir, i), s)?;
    }
    for (k, s) in b.live_scans.iter().enumerate() {
        write_ply(&live_scan_path(dir, k), s)?;
    }
    for (k, m) in b.gt_masks.iter().enumerate() {
        let p = gt_mask_path(dir, k);
        let png = m.to_png().map_err(|source| DatasetError::Mask { path: p.display().to_string(), source })?;
        write_bytes(&p, &png)?;
    }
    Ok(())
}

pub fn read_mask(p: &Path) -> Result<BinaryMask, DatasetError> {
    let bytes = fs::read(p).map_err(|source| DatasetError::File { path: p.display().to_string(), source })?;
    BinaryMask::from_png(&bytes).map_err(|source| DatasetError::Mask { path: p.display().to_string(), source })
}

pub fn read_meta(dir: &Path) -> Result<SceneMeta, DatasetError> {
    read_json(&dir.join("scene.json"))
}

pub fn read_benchmark(dir: &Path) -> Result<Benchmark, DatasetError> {
    let meta = read_meta(dir)?;
    let corridor: Corridor = read_json(&dir.join("corridor.json"))?;
    let teach_poses = read_poses(&dir.join("poses_teach.txt"))?;
    let repeat_poses = read_poses(&dir.join("poses_repeat.txt"))?;
    let frames = repeat_poses.len();
    if meta.frame_teach_index.len() != frames {
        return Err(DatasetError::Inconsistent(format!("{} repeat poses but {} frame matches", frames, meta.frame_teach_index.len())));
    }
    if let Some(&i) = meta.frame_teach_index.iter().find(|&&i| i >= teach_poses.len()) {
        return Err(DatasetError::Inconsistent(format!("teach vertex {i} out of range")));
    }
    let teach_scans = (0..teach_poses.len()).map(|i| read_ply(&teach_scan_path(dir, i))).collect::<Result<Vec<_>, _>>()?;
    let live_scans = (0..frames).map(|k| read_ply(&live_scan_path(dir, k))).collect::<Result<Vec<_>, _>>()?;
    let gt_masks = (0..frames).map(|k| read_mask(&gt_mask_path(dir, k))).collect::<Result<Vec<_>, _>>()?;
    let cam = meta.scene.camera;
    if let Some(m) = gt_masks.iter().find(|m| m.width != cam.width || m.height != cam.height) {
        return Err(DatasetError::Inconsistent(format!("mask is {}x{}, camera is {}x{}", m.width, m.height, cam.width, cam.height)));
    }
    Ok(Benchmark {
        spec: meta.scene,
        trajectory: meta.trajectory,
        seed: meta.seed,
        teach_poses,
        teach_scans,
        repeat_poses,
        live_scans,
        frame_teach_index: meta.frame_teach_index,
        gt_masks,
        corridor,
    })
}
