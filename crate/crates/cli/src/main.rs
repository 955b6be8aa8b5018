use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use laserchange::config::SegmenterBackend;
use laserchange::pipeline::{self, resolve_config, Method, PipelineError};
use laserchange::simeval::{presets, SceneSpec, TrajectorySpec};

#[derive(Parser)]
#[command(name = "laserchange", version, about = "LiDAR change detection for teach-and-repeat robots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic teach/repeat benchmark.
    Simulate {
        /// Scene spec (JSON); the standard scene when omitted.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Trajectory spec (JSON); the standard trajectory when omitted.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long, default_value_t = presets::STANDARD_SEED)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect changes on every repeat frame of a dataset.
    Detect {
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the changed points of each frame as PLY.
        #[arg(long)]
        save_points: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run and score the baselines and LaserSAM variants.
    Bench {
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated method names, or `all`.
        #[arg(long, default_value = "all")]
        methods: String,
        #[command(flatten)]
        common: Common,
    },
    /// Write the live, map and equirectangular images of one frame.
    Render {
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score externally produced masks (`mask_NNNN.png`) against the ground truth.
    Eval {
        dataset: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `section.key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, value_enum)]
    segmenter: Option<Backend>,
    /// Bridge URL; falls back to LASERCHANGE_ENDPOINT.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    save_images: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Reference,
    Bridge,
}

impl Common {
    fn config(&self, dataset: &Path) -> Result<laserchange::config::PipelineConfig, PipelineError> {
        let mut cfg = resolve_config(self.config.as_deref(), &self.overrides, Some(dataset))?;
        if let Some(b) = self.segmenter {
            cfg.segmenter.backend = match b {
                Backend::Reference => SegmenterBackend::Reference,
                Backend::Bridge => SegmenterBackend::Bridge,
            };
        }
        if let Some(e) = &self.endpoint {
            cfg.segmenter.endpoint = Some(e.clone());
        }
        cfg.output.save_images |= self.save_images;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_spec<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::File { path: path.display().to_string(), source })?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Usage(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Simulate { scene, trajectory, seed, out } => {
            let scene: SceneSpec = match scene {
                Some(p) => read_spec(&p)?,
                None => presets::standard_scene(),
            };
            let trajectory: TrajectorySpec = match trajectory {
                Some(p) => read_spec(&p)?,
                None => presets::standard_trajectory(),
            };
            scene.validate().map_err(|e| PipelineError::Usage(e.to_string()))?;
            trajectory.validate().map_err(|e| PipelineError::Usage(e.to_string()))?;
            let b = pipeline::run_simulate(&scene, &trajectory, seed, &out)?;
            println!("wrote {} teach scans and {} repeat frames to {}", b.teach_scans.len(), b.frames(), out.display());
        }
        Command::Detect { dataset, out, save_points, common } => {
            let mut cfg = common.config(&dataset)?;
            cfg.output.save_points |= save_points;
            let reports = pipeline::run_detect(&dataset, &out, &cfg)?;
            for r in &reports {
                let verified = r.candidates.iter().filter(|c| c.verified).count();
                let corridor = r.candidates.iter().filter(|c| c.verified && c.in_corridor).count();
                println!("frame {:4}: {verified} changes, {corridor} in corridor", r.frame);
            }
        }
        Command::Bench { dataset, out, methods, common } => {
            let cfg = common.config(&dataset)?;
            let methods = Method::parse_list(&methods)?;
            let report = pipeline::run_bench(&dataset, &out, &cfg, &methods)?;
            print!("{}", report.table());
        }
        Command::Render { dataset, frame, out, common } => {
            let cfg = common.config(&dataset)?;
            pipeline::run_render(&dataset, frame, &out, &cfg)?;
            println!("wrote frame {frame} images to {}", out.display());
        }
        Command::Eval { dataset, masks, out, common } => {
            let cfg = common.config(&dataset)?;
            let report = pipeline::run_eval(&dataset, &masks, &cfg)?;
            if let Some(out) = out {
                std::fs::create_dir_all(&out).map_err(|source| PipelineError::File { path: out.display().to_string(), source })?;
                let path = out.join("metrics.json");
                std::fs::write(&path, report.to_json()).map_err(|source| PipelineError::File { path: path.display().to_string(), source })?;
            }
            print!("{}", report.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
