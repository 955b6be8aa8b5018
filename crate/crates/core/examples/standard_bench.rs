//! Runs all four methods on the standard simulated benchmark and prints the table.

use laserchange::config::PipelineConfig;
use laserchange::pipeline::{evaluate_benchmark, Method};
use laserchange::segment::ReferenceSegmenter;
use laserchange::simeval::{make_benchmark, presets};

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(presets::STANDARD_SEED);
    let t = std::time::Instant::now();
    let bench = make_benchmark(&presets::standard_scene(), &presets::standard_trajectory(), seed).expect("benchmark");
    eprintln!("simulated {} frames in {:.1} s", bench.frames(), t.elapsed().as_secs_f64());
    let cfg = PipelineConfig { camera: bench.spec.camera, ..PipelineConfig::default() };
    let out = evaluate_benchmark(&bench, &cfg, &Method::ALL, &mut ReferenceSegmenter::default()).expect("evaluate");
    print!("{}", out.report.table());
    for f in &out.frames {
        for (m, matches) in &f.matches {
            eprintln!("frame {} {}: gt ids {:?} matched {:?}", f.frame, m.name(), f.instances.keys().collect::<Vec<_>>(), matches);
        }
    }
}
