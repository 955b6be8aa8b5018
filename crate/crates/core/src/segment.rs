//! Prompted segmentation.
//!
//! Every backend returns exactly one mask per prompt, and any mask that does
//! not contain its own prompt pixel is replaced by an empty mask.

use std::collections::VecDeque;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::Prompt;
use crate::render::{HsvImage, RenderError, RenderedView};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("segmentation backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("malformed segmentation response: {0}")]
    MalformedResponse(String),
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
    pub prompt: Option<Prompt>,
}

impl BinaryMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height], prompt: None }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "mask size mismatch");
        Self { width, height, bits, prompt: None }
    }

    pub fn with_prompt(mut self, prompt: Prompt) -> Self {
        self.prompt = Some(prompt);
        self
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, on: bool) {
        let w = self.width;
        self.bits[v * w + u] = on;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn same_size(&self, o: &Self) -> bool {
        self.width == o.width && self.height == o.height
    }

    /// In-place OR.
    pub fn union_with(&mut self, o: &Self) {
        assert!(self.same_size(o), "mask size mismatch");
        for (a, b) in self.bits.iter_mut().zip(&o.bits) {
            *a |= *b;
        }
    }

    /// Keeps only bits where `keep(i)` is true.
    pub fn retain(&mut self, mut keep: impl FnMut(usize) -> bool) {
        for (i, b) in self.bits.iter_mut().enumerate() {
            *b = *b && keep(i);
        }
    }

    pub fn to_png(&self) -> Result<Vec<u8>, RenderError> {
        let img = image::GrayImage::from_fn(self.width as u32, self.height as u32, |u, v| {
            image::Luma([if self.get(u as usize, v as usize) { 255 } else { 0 }])
        });
        let mut buf = std::io::Cursor::new(Vec::new());
        img.write_to(&mut buf, image::ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    /// Any non-zero pixel is set.
    pub fn from_png(bytes: &[u8]) -> Result<Self, RenderError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Ok(Self::from_bits(w, h, img.pixels().map(|p| p.0[0] > 0).collect()))
    }
}

/// Masks index-aligned with the prompts that produced them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaskSet {
    pub masks: Vec<BinaryMask>,
}

impl MaskSet {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Replaces masks that do not cover their prompt pixel with empty masks.
pub fn enforce_containment(masks: Vec<BinaryMask>, prompts: &[Prompt]) -> MaskSet {
    let masks = masks
        .into_iter()
        .zip(prompts)
        .map(|(m, p)| {
            let inside = p.u < m.width && p.v < m.height && m.get(p.u, p.v);
            let m = if inside { m } else { BinaryMask::empty(m.width, m.height) };
            m.with_prompt(*p)
        })
        .collect();
    MaskSet { masks }
}

pub trait Segmenter<T: Real>: Send {
    fn segment(&mut self, image: &HsvImage, view: &RenderedView<T>, prompts: &[Prompt]) -> Result<MaskSet, SegmentError>;

    fn name(&self) -> &str;
}

/// Deterministic region grower used when no model service is available.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSegmenter {
    /// Maximum depth step between adjacent pixels, meters.
    pub tau_range: f64,
    /// Maximum value-channel step between adjacent pixels, as a fraction of 255.
    pub tau_intensity: f64,
}

impl Default for ReferenceSegmenter {
    fn default() -> Self {
        Self { tau_range: 0.3, tau_intensity: 0.1 }
    }
}

/// 4-connected flood fill from the prompt. A neighbour joins when it is valid
/// and both its depth and value steps from the current pixel are within
/// tolerance. A prompt on an invalid pixel yields an empty mask.
pub fn reference_segment<T: Real>(
    image: &HsvImage,
    view: &RenderedView<T>,
    prompt: &Prompt,
    tau_range: f64,
    tau_intensity: f64,
) -> BinaryMask {
    let (w, h) = (view.width, view.height);
    let mut mask = BinaryMask::empty(w, h);
    if prompt.u >= w || prompt.v >= h {
        return mask;
    }
    let seed = prompt.v * w + prompt.u;
    if !view.valid[seed] {
        return mask;
    }
    let tau_r = T::lit(tau_range);
    let tau_v = tau_intensity * 255.0;
    let mut queue = VecDeque::from([seed]);
    mask.bits[seed] = true;
    while let Some(i) = queue.pop_front() {
        let (u, v) = (i % w, i / w);
        let mut try_join = |j: usize| {
            if mask.bits[j] || !view.valid[j] {
                return;
            }
            let dr = (view.depth[i] - view.depth[j]).abs();
            let dv = (image.value(i) as f64 - image.value(j) as f64).abs();
            if dr <= tau_r && dv <= tau_v {
                mask.bits[j] = true;
                queue.push_back(j);
            }
        };
        if u > 0 {
            try_join(i - 1);
        }
        if u + 1 < w {
            try_join(i + 1);
        }
        if v > 0 {
            try_join(i - w);
        }
        if v + 1 < h {
            try_join(i + w);
        }
    }
    mask
}

impl<T: Real> Segmenter<T> for ReferenceSegmenter {
    fn segment(&mut self, image: &HsvImage, view: &RenderedView<T>, prompts: &[Prompt]) -> Result<MaskSet, SegmentError> {
        let masks = prompts
            .iter()
            .map(|p| reference_segment(image, view, p, self.tau_range, self.tau_intensity))
            .collect();
        Ok(enforce_containment(masks, prompts))
    }

    fn name(&self) -> &str {
        "reference"
    }
}

/// Row-major run lengths, alternating and starting with a run of zeros
/// (which may have length 0).
pub fn rle_encode(bits: &[bool]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &b in bits {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

pub fn rle_decode(runs: &[u32], height: usize, width: usize) -> Result<Vec<bool>, SegmentError> {
    let total: u64 = runs.iter().map(|&r| r as u64).sum();
    if total != (height * width) as u64 {
        return Err(SegmentError::MalformedResponse(format!(
            "run lengths sum to {total}, expected {}",
            height * width
        )));
    }
    let mut bits = Vec::with_capacity(height * width);
    for (k, &r) in runs.iter().enumerate() {
        bits.extend(std::iter::repeat(k % 2 == 1).take(r as usize));
    }
    Ok(bits)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PromptPoint {
    pub u: i64,
    pub v: i64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SegmentRequest {
    pub image_png: String,
    pub prompts: Vec<PromptPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RleMask {
    pub rle: Vec<u32>,
    pub height: usize,
    pub width: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SegmentResponse {
    pub masks: Vec<RleMask>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HealthResponse {
    pub status: String,
    pub model: String,
}

impl SegmentRequest {
    pub fn new(image: &HsvImage, prompts: &[Prompt]) -> Result<Self, SegmentError> {
        Ok(Self {
            image_png: base64::engine::general_purpose::STANDARD.encode(image.encode_png()?),
            prompts: prompts.iter().map(|p| PromptPoint { u: p.u as i64, v: p.v as i64 }).collect(),
        })
    }
}

/// Validates a bridge response against the request and decodes its masks.
pub fn decode_response(resp: &SegmentResponse, width: usize, height: usize, prompts: &[Prompt]) -> Result<MaskSet, SegmentError> {
    if resp.masks.len() != prompts.len() {
        return Err(SegmentError::MalformedResponse(format!(
            "{} masks for {} prompts",
            resp.masks.len(),
            prompts.len()
        )));
    }
    let mut masks = Vec::with_capacity(resp.masks.len());
    for m in &resp.masks {
        if m.width != width || m.height != height {
            return Err(SegmentError::MalformedResponse(format!(
                "mask is {}x{}, image is {width}x{height}",
                m.width, m.height
            )));
        }
        masks.push(BinaryMask::from_bits(width, height, rle_decode(&m.rle, height, width)?));
    }
    Ok(enforce_containment(masks, prompts))
}

/// HTTP client for an external segmentation service. One request in flight
/// per client.
pub struct BridgeClient {
    endpoint: String,
    agent: ureq::Agent,
    retries: u32,
    backoff: Duration,
}

impl BridgeClient {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, retries: u32) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            retries,
            backoff: Duration::from_millis(200),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn call(&self, req: impl Fn() -> Result<ureq::Response, ureq::Error>) -> Result<String, SegmentError> {
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff * attempt);
            }
            match req() {
                Ok(resp) => {
                    return resp.into_string().map_err(|e| SegmentError::MalformedResponse(e.to_string()));
                }
                Err(ureq::Error::Status(code, resp)) if code < 500 => {
                    let body = resp.into_string().unwrap_or_default();
                    return Err(SegmentError::MalformedResponse(format!("HTTP {code}: {body}")));
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(SegmentError::BackendUnavailable(format!("{} after {} attempts: {last}", self.endpoint, self.retries + 1)))
    }

    pub fn health(&self) -> Result<HealthResponse, SegmentError> {
        let url = format!("{}/health", self.endpoint);
        let body = self.call(|| self.agent.get(&url).call())?;
        serde_json::from_str(&body).map_err(|e| SegmentError::MalformedResponse(e.to_string()))
    }

    pub fn bridge_segment(&self, image: &HsvImage, prompts: &[Prompt]) -> Result<MaskSet, SegmentError> {
        if prompts.is_empty() {
            return Ok(MaskSet::default());
        }
        let body = serde_json::to_string(&SegmentRequest::new(image, prompts)?)
            .map_err(|e| SegmentError::MalformedResponse(e.to_string()))?;
        let url = format!("{}/segment", self.endpoint);
        let text = self.call(|| self.agent.post(&url).set("Content-Type", "application/json").send_string(&body))?;
        let resp: SegmentResponse = serde_json::from_str(&text).map_err(|e| SegmentError::MalformedResponse(e.to_string()))?;
        decode_response(&resp, image.width, image.height, prompts)
    }
}

impl<T: Real> Segmenter<T> for BridgeClient {
    fn segment(&mut self, image: &HsvImage, _view: &RenderedView<T>, prompts: &[Prompt]) -> Result<MaskSet, SegmentError> {
        self.bridge_segment(image, prompts)
    }

    fn name(&self) -> &str {
        "bridge"
    }
}
