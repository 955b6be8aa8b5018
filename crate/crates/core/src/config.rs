//! Pipeline configuration: TOML file, validation and dotted overrides.

use serde::{Deserialize, Serialize};

use crate::baseline::RoughnessParams;
use crate::simeval::CameraSpec;

pub const ENDPOINT_ENV: &str = "LASERCHANGE_ENDPOINT";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid TOML: {0}")]
    Parse(String),
    #[error("override `{0}` must look like key=value")]
    Override(String),
    #[error("{field}: {msg}")]
    Invalid { field: &'static str, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMethod {
    PixelDiff,
    Diff3d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmenterBackend {
    Reference,
    Bridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Range mapped onto the full hue scale.
    pub max_range: f64,
    pub interpolate: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { max_range: 30.0, interpolate: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptConfig {
    pub method: PromptMethod,
    pub k: usize,
    pub min_dist: f64,
    pub noise_floor: f64,
    pub nn_threshold: f64,
    pub cluster_radius: f64,
    /// Smaller clusters of unmatched points are not prompted.
    pub min_cluster_points: usize,
    pub range_weight: f64,
    pub intensity_weight: f64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            method: PromptMethod::Diff3d,
            k: 5,
            min_dist: 16.0,
            noise_floor: 0.2,
            nn_threshold: 0.3,
            cluster_radius: 0.5,
            min_cluster_points: 10,
            range_weight: 1.0,
            intensity_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmenterConfig {
    pub backend: SegmenterBackend,
    pub endpoint: Option<String>,
    pub tau_range: f64,
    pub tau_intensity: f64,
    pub timeout_ms: u64,
    pub retries: u32,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self { backend: SegmenterBackend::Reference, endpoint: None, tau_range: 0.3, tau_intensity: 0.1, timeout_ms: 10_000, retries: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    pub iou_threshold: f64,
    pub verify_tau: f64,
    pub verify_rho: f64,
    pub merge_radius: f64,
    pub ttl_frames: usize,
    pub capacity: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self { iou_threshold: 0.5, verify_tau: 0.3, verify_rho: 0.5, merge_radius: 1.0, ttl_frames: 20, capacity: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorridorConfig {
    /// Replaces the dataset's corridor half width when set.
    pub half_width: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub pixel_threshold: f64,
    pub k_nn: usize,
    pub alpha: f64,
    pub tau_min: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        let r = RoughnessParams::default();
        Self { pixel_threshold: 1.0, k_nn: r.k_nn, alpha: r.alpha, tau_min: r.tau_min }
    }
}

impl BaselineConfig {
    pub fn roughness(&self) -> RoughnessParams {
        RoughnessParams { k_nn: self.k_nn, alpha: self.alpha, tau_min: self.tau_min }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub save_images: bool,
    pub save_points: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub camera: CameraSpec,
    pub render: RenderConfig,
    pub prompting: PromptConfig,
    pub segmenter: SegmenterConfig,
    pub detection: DetectionConfig,
    pub corridor: CorridorConfig,
    pub baselines: BaselineConfig,
    pub output: OutputConfig,
}

fn invalid(field: &'static str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, msg: msg.into() }
}

fn positive(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive, got {v}")))
    }
}

fn non_negative(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be >= 0, got {v}")))
    }
}

fn unit(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(field, format!("must lie in [0, 1], got {v}")))
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `section.key=value` overrides; values are parsed as TOML and
    /// fall back to plain strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        let mut doc = toml::Value::try_from(self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.to_string()))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Override(o.to_string()));
            }
            let value = parse_value(raw.trim());
            let mut node = &mut doc;
            let parts: Vec<&str> = key.split('.').collect();
            for (n, part) in parts.iter().enumerate() {
                let table = node.as_table_mut().ok_or_else(|| ConfigError::Override(o.to_string()))?;
                if n + 1 == parts.len() {
                    table.insert(part.to_string(), value.clone());
                    break;
                }
                node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
            }
        }
        let cfg: PipelineConfig = doc.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.camera;
        if c.width < 2 || c.height < 2 {
            return Err(invalid("camera", "width and height must be at least 2"));
        }
        for (f, v) in [("camera.fov_h_deg", c.fov_h_deg), ("camera.fov_v_deg", c.fov_v_deg)] {
            if !(v > 0.0 && v < 180.0) {
                return Err(invalid(f, format!("must lie in (0, 180), got {v}")));
            }
        }
        if !c.position.iter().chain([&c.yaw_deg, &c.pitch_deg]).all(|v| v.is_finite()) {
            return Err(invalid("camera", "mount must be finite"));
        }
        positive("render.max_range", self.render.max_range)?;
        let p = &self.prompting;
        if p.k == 0 {
            return Err(invalid("prompting.k", "must be at least 1"));
        }
        non_negative("prompting.min_dist", p.min_dist)?;
        non_negative("prompting.noise_floor", p.noise_floor)?;
        positive("prompting.nn_threshold", p.nn_threshold)?;
        positive("prompting.cluster_radius", p.cluster_radius)?;
        non_negative("prompting.range_weight", p.range_weight)?;
        non_negative("prompting.intensity_weight", p.intensity_weight)?;
        let s = &self.segmenter;
        non_negative("segmenter.tau_range", s.tau_range)?;
        unit("segmenter.tau_intensity", s.tau_intensity)?;
        if s.timeout_ms == 0 {
            return Err(invalid("segmenter.timeout_ms", "must be positive"));
        }
        let d = &self.detection;
        unit("detection.iou_threshold", d.iou_threshold)?;
        positive("detection.verify_tau", d.verify_tau)?;
        unit("detection.verify_rho", d.verify_rho)?;
        positive("detection.merge_radius", d.merge_radius)?;
        if d.capacity == 0 {
            return Err(invalid("detection.capacity", "must be at least 1"));
        }
        if let Some(w) = self.corridor.half_width {
            positive("corridor.half_width", w)?;
        }
        let b = &self.baselines;
        non_negative("baselines.pixel_threshold", b.pixel_threshold)?;
        if b.k_nn == 0 {
            return Err(invalid("baselines.k_nn", "must be at least 1"));
        }
        non_negative("baselines.alpha", b.alpha)?;
        non_negative("baselines.tau_min", b.tau_min)?;
        Ok(())
    }

    /// Bridge endpoint from the config, else the environment.
    pub fn endpoint(&self) -> Option<String> {
        self.segmenter.endpoint.clone().or_else(|| std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty()))
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(PipelineConfig::from_toml("").unwrap(), cfg);
        assert_eq!(cfg.prompting.k, 5);
        assert_eq!(cfg.detection.iou_threshold, 0.5);
        assert_eq!(cfg.render.max_range, 30.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(PipelineConfig::from_toml("[camera]\nwidht = 3\n"), Err(ConfigError::Parse(_))));
        assert!(matches!(PipelineConfig::from_toml("[nonsense]\n"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn ranges_checked() {
        assert!(matches!(PipelineConfig::from_toml("[detection]\niou_threshold = 1.5\n"), Err(ConfigError::Invalid { .. })));
        assert!(PipelineConfig::from_toml("[camera]\nfov_h_deg = 180.0\n").is_err());
        assert!(PipelineConfig::from_toml("[prompting]\nk = 0\n").is_err());
    }

    #[test]
    fn overrides() {
        let cfg = PipelineConfig::default()
            .with_overrides(&["prompting.method=pixel_diff", "prompting.k=3", "segmenter.endpoint=http://x:1", "corridor.half_width=3"])
            .unwrap();
        assert_eq!(cfg.prompting.method, PromptMethod::PixelDiff);
        assert_eq!(cfg.prompting.k, 3);
        assert_eq!(cfg.segmenter.endpoint.as_deref(), Some("http://x:1"));
        assert_eq!(cfg.corridor.half_width, Some(3.0));
        assert!(PipelineConfig::default().with_overrides(&["prompting.bogus=1"]).is_err());
        assert!(PipelineConfig::default().with_overrides(&["no_equals"]).is_err());
        assert!(PipelineConfig::default().with_overrides(&["prompting.k=-1"]).is_err());
    }
}
