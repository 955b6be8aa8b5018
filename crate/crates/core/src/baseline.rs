//! Comparison detectors: thresholded pixel difference, and nearest-neighbour
//! distance against a locally adaptive roughness threshold.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::geom::{Mat3, PointCloud, Vec3};
use crate::prompt::{difference_map, DiffWeights, PromptError};
use crate::render::RenderedView;
use crate::scalar::Real;
use crate::segment::BinaryMask;
use crate::spatial::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    PixelDifference,
    Geometric3d,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BaselineOutput {
    Mask(BinaryMask),
    PointFlags(Vec<bool>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub method: BaselineMethod,
    pub output: BaselineOutput,
    pub timing_ms: f64,
}

/// Marks pixels whose live/map difference norm exceeds `threshold`.
pub fn pixel_diff_baseline<T: Real>(
    live: &RenderedView<T>,
    map: &RenderedView<T>,
    threshold: T,
    weights: DiffWeights<T>,
    intensity_scale: T,
) -> Result<BaselineResult, PromptError> {
    let start = Instant::now();
    let d = difference_map(live, map, weights, intensity_scale)?;
    let bits = d.values.iter().map(|v| *v > threshold).collect();
    Ok(BaselineResult {
        method: BaselineMethod::PixelDifference,
        output: BaselineOutput::Mask(BinaryMask::from_bits(d.width, d.height, bits)),
        timing_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoughnessParams {
    pub k_nn: usize,
    pub alpha: f64,
    pub tau_min: f64,
}

impl Default for RoughnessParams {
    fn default() -> Self {
        Self { k_nn: 16, alpha: 3.0, tau_min: 0.2 }
    }
}

/// Mean and standard deviation of the absolute residuals of `pts` to their
/// least-squares plane.
pub fn plane_roughness<T: Real>(pts: &[Vec3<T>]) -> (T, T) {
    let n = T::lit(pts.len() as f64);
    let mean = pts.iter().fold(Vec3::zero(), |a, p| a + *p) * (T::one() / n);
    let mut cov = [[T::zero(); 3]; 3];
    for p in pts {
        let d = (*p - mean).to_array();
        for r in 0..3 {
            for c in 0..3 {
                cov[r][c] += d[r] * d[c];
            }
        }
    }
    let (_, vecs) = Mat3::from_rows(cov).symmetric_eigen();
    let normal = vecs[0];
    let res: Vec<T> = pts.iter().map(|p| (*p - mean).dot(&normal).abs()).collect();
    let mu = res.iter().copied().sum::<T>() / n;
    let var = res.iter().map(|r| (*r - mu) * (*r - mu)).sum::<T>() / n;
    (mu, var.sqrt())
}

/// Per-query flags against a prebuilt map index.
pub fn geometric_flags_indexed<T: Real>(queries: &[Vec3<T>], map: &KdTree<T>, params: &RoughnessParams) -> Vec<bool> {
    let tau_min = T::lit(params.tau_min);
    let alpha = T::lit(params.alpha);
    let adaptive = params.k_nn >= 3 && map.len() >= params.k_nn;
    queries
        .iter()
        .map(|q| {
            if !adaptive {
                return !map.any_within(q, tau_min);
            }
            let nn = map.k_nearest(q, params.k_nn);
            let nearest = nn[0].1.sqrt();
            if nearest <= tau_min {
                return false;
            }
            let pts: Vec<Vec3<T>> = nn.iter().map(|(i, _)| *map.point(*i)).collect();
            let (mu, sigma) = plane_roughness(&pts);
            nearest > tau_min.max(mu + alpha * sigma)
        })
        .collect()
}

/// Flags a live point when its nearest map distance exceeds
/// `max(tau_min, mu + alpha * sigma)` of its `k_nn` map neighbours. Maps with
/// fewer than `k_nn` points fall back to the fixed `tau_min`.
pub fn geometric_3d_baseline<T: Real>(live: &PointCloud<T>, map: &PointCloud<T>, params: &RoughnessParams) -> BaselineResult {
    let start = Instant::now();
    let index = KdTree::new(map.positions());
    let flags = geometric_flags_indexed(&live.positions(), &index, params);
    BaselineResult {
        method: BaselineMethod::Geometric3d,
        output: BaselineOutput::PointFlags(flags),
        timing_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}
