use laserchange::config::PipelineConfig;
use laserchange::simeval::presets;
use laserchange::simeval::{SceneSpec, TrajectorySpec};
use std::path::PathBuf;

fn doc(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn example_config_is_the_default() {
    let cfg = PipelineConfig::from_toml(&doc("config.toml")).unwrap();
    assert_eq!(cfg, PipelineConfig::default());
}

#[test]
fn scene_files_match_presets() {
    let standard: SceneSpec = serde_json::from_str(&doc("scene_standard.json")).unwrap();
    assert_eq!(standard, presets::standard_scene());
    let small: SceneSpec = serde_json::from_str(&doc("scene_small.json")).unwrap();
    assert_eq!(small, presets::small_scene());
}

#[test]
fn trajectory_files_match_presets() {
    let standard: TrajectorySpec = serde_json::from_str(&doc("trajectory_standard.json")).unwrap();
    assert_eq!(standard, presets::standard_trajectory());
    let small: TrajectorySpec = serde_json::from_str(&doc("trajectory_small.json")).unwrap();
    assert_eq!(small, presets::small_trajectory());
}
