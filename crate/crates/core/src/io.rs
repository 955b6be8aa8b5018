//! Text formats for poses and point clouds.
//!
//! Poses: one per line, 12 whitespace-separated numbers forming the row-major
//! 3x4 block `[R | t]` (meters). Blank lines and `#` comments are skipped.
//!
//! Clouds: ASCII PLY with float `x y z intensity` and an optional
//! `uint instance_id`. Points without a label are written as
//! [`UNLABELED_INSTANCE`]. The frame label travels in a `comment frame <name>`
//! header line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::geom::{GeomError, LidarPoint, PointCloud, Pose, Vec3};
use crate::scalar::Real;

pub const UNLABELED_INSTANCE: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Pose {
        line: usize,
        #[source]
        source: GeomError,
    },
}

fn parse_err(line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse { line, msg: msg.into() }
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::File { path: path.display().to_string(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(|source| IoError::File { path: path.display().to_string(), source })
}

pub fn format_poses<T: Real>(poses: &[Pose<T>]) -> String {
    let mut out = String::new();
    for p in poses {
        let row: Vec<String> = p.to_rows_3x4().iter().map(|v| format!("{:.9}", v.as_f64())).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_poses<T: Real>(text: &str) -> Result<Vec<Pose<T>>, IoError> {
    let mut poses = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| parse_err(i + 1, e.to_string())))
            .collect::<Result<_, _>>()?;
        if vals.len() != 12 {
            return Err(parse_err(i + 1, format!("expected 12 numbers, found {}", vals.len())));
        }
        let mut rows = [T::zero(); 12];
        for (d, s) in rows.iter_mut().zip(vals) {
            *d = T::lit(s);
        }
        poses.push(Pose::from_rows_3x4(&rows).map_err(|source| IoError::Pose { line: i + 1, source })?);
    }
    Ok(poses)
}

pub fn read_poses<T: Real>(path: &Path) -> Result<Vec<Pose<T>>, IoError> {
    parse_poses(&read_text(path)?)
}

pub fn write_poses<T: Real>(path: &Path, poses: &[Pose<T>]) -> Result<(), IoError> {
    write_text(path, &format_poses(poses))
}

pub fn format_ply<T: Real>(cloud: &PointCloud<T>) -> String {
    let labeled = cloud.points.iter().any(|p| p.instance_id.is_some());
    let mut out = String::with_capacity(64 + cloud.len() * 40);
    out.push_str("ply\nformat ascii 1.0\n");
    if !cloud.frame.is_empty() {
        let _ = writeln!(out, "comment frame {}", cloud.frame);
    }
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str("property float x\nproperty float y\nproperty float z\nproperty float intensity\n");
    if labeled {
        out.push_str("property uint instance_id\n");
    }
    out.push_str("end_header\n");
    for p in &cloud.points {
        let q = p.position;
        let _ = write!(
            out,
            "{:.5} {:.5} {:.5} {:.6}",
            q.x.as_f64(),
            q.y.as_f64(),
            q.z.as_f64(),
            p.intensity.as_f64()
        );
        if labeled {
            let _ = write!(out, " {}", p.instance_id.unwrap_or(UNLABELED_INSTANCE));
        }
        out.push('\n');
    }
    out
}

/// Rounds coordinates and intensities exactly as `format_ply` writes them,
/// so a written cloud reads back equal to the returned one.
pub fn quantize_like_ply(cloud: &PointCloud<f64>) -> PointCloud<f64> {
    let q = |v: f64, digits: usize| format!("{v:.digits$}").parse::<f64>().expect("formatted float parses");
    let mut out = cloud.clone();
    for p in &mut out.points {
        p.position = Vec3::new(q(p.position.x, 5), q(p.position.y, 5), q(p.position.z, 5));
        p.intensity = q(p.intensity, 6);
    }
    out
}

pub fn parse_ply<T: Real>(text: &str) -> Result<PointCloud<T>, IoError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(1, "missing ply magic")),
    }
    let mut frame = String::new();
    let mut count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    loop {
        let (i, line) = lines.next().ok_or_else(|| parse_err(0, "unterminated header"))?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(parse_err(i + 1, "only ascii PLY is supported"));
                }
            }
            Some("comment") => {
                if tok.next() == Some("frame") {
                    frame = tok.collect::<Vec<_>>().join(" ");
                }
            }
            Some("element") => {
                let name = tok.next().unwrap_or_default();
                let n: usize = tok
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| parse_err(i + 1, "bad element count"))?;
                in_vertex = name == "vertex";
                if in_vertex {
                    count = Some(n);
                } else if n > 0 {
                    return Err(parse_err(i + 1, format!("unsupported element {name}")));
                }
            }
            Some("property") => {
                if in_vertex {
                    let kind = tok.next().unwrap_or_default();
                    if kind == "list" {
                        return Err(parse_err(i + 1, "list properties unsupported"));
                    }
                    props.push(tok.next().unwrap_or_default().to_string());
                }
            }
            Some("end_header") => break,
            Some("obj_info") | None => {}
            Some(other) => return Err(parse_err(i + 1, format!("unknown header keyword {other}"))),
        }
    }
    let col = |name: &str| props.iter().position(|p| p == name);
    let (cx, cy, cz) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(parse_err(0, "missing x/y/z properties")),
    };
    let ci = col("intensity");
    let cid = col("instance_id");
    let count = count.ok_or_else(|| parse_err(0, "missing vertex element"))?;
    let mut points = Vec::with_capacity(count);
    let mut vals = Vec::with_capacity(props.len());
    for (i, line) in lines {
        if points.len() == count {
            break;
        }
        if line.trim().is_empty() {
            continue;
        }
        vals.clear();
        for t in line.split_whitespace() {
            vals.push(t.parse::<f64>().map_err(|e| parse_err(i + 1, e.to_string()))?);
        }
        if vals.len() < props.len() {
            return Err(parse_err(i + 1, "short vertex row"));
        }
        let pos = Vec3::new(T::lit(vals[cx]), T::lit(vals[cy]), T::lit(vals[cz]));
        let intensity = T::lit(ci.map_or(0.0, |c| vals[c]));
        let id = cid.map(|c| vals[c] as u32).filter(|&v| v != UNLABELED_INSTANCE);
        let p = LidarPoint::try_new(pos, intensity, id).map_err(|e| parse_err(i + 1, e.to_string()))?;
        points.push(p);
    }
    if points.len() != count {
        return Err(parse_err(0, format!("expected {count} vertices, found {}", points.len())));
    }
    Ok(PointCloud { points, frame })
}

pub fn read_ply<T: Real>(path: &Path) -> Result<PointCloud<T>, IoError> {
    parse_ply(&read_text(path)?)
}

pub fn write_ply<T: Real>(path: &Path, cloud: &PointCloud<T>) -> Result<(), IoError> {
    write_text(path, &format_ply(cloud))
}
