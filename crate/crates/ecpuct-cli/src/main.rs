use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ecpuct_cli::commands::{
    cmd_compress, cmd_detect, cmd_features, cmd_pipeline, cmd_synth, Manifest,
};
use ecpuct_cli::config::{load_config, load_scene, PipelineConfig};

/// Coded-excitation induction thermography: synthesis, pulse compression,
/// defect enhancement and depth features.
#[derive(Debug, Parser)]
#[command(name = "ecpuct", version, about)]
struct Cli {
    /// TOML configuration file; omitted means built-in defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (default: current directory).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Noise seed; overrides the configuration.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Detector to run: kpca, lrs or both; overrides the configuration.
    #[arg(long, global = true, value_name = "NAME")]
    detector: Option<String>,

    /// Inspection mode: surface or subsurface; overrides the configuration.
    #[arg(long, global = true, value_name = "NAME")]
    mode: Option<String>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the configured scene and write raw thermogram cubes.
    Synth {
        /// Standalone scene file; overrides the [scene] section.
        scene: Option<PathBuf>,
        /// Write one cube per notch instead of one combined cube.
        #[arg(long)]
        split: bool,
    },
    /// Pulse-compress a raw cube into an impulse-response cube.
    Compress {
        /// Input cube (TCUBE).
        cube: PathBuf,
    },
    /// Run the configured detector(s) on a compressed cube.
    Detect {
        /// Input cube (TCUBE, pulse-compressed).
        cube: PathBuf,
    },
    /// Extract crossing-point depth features from compressed cubes.
    Features {
        /// Input cubes (TCUBE, pulse-compressed).
        #[arg(required = true)]
        cubes: Vec<PathBuf>,
        /// Known defect depths in metres, one per cube, comma separated;
        /// overrides depths recorded in sidecars.
        #[arg(long, value_delimiter = ',')]
        depths: Option<Vec<f64>>,
    },
    /// Run all four stages: synth, compress, detect, features.
    Pipeline {
        /// Standalone scene file; overrides the [scene] section.
        scene: Option<PathBuf>,
    },
}

fn apply_overrides(cfg: &mut PipelineConfig, cli: &Cli) {
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(detector) = &cli.detector {
        cfg.detector.choice = detector.clone();
    }
    if let Some(mode) = &cli.mode {
        cfg.run.mode = mode.clone();
    }
}

fn run(cli: &Cli) -> ecpuct::Result<()> {
    if let Some(threads) = cli.threads {
        // A second initialisation (e.g. in tests) is harmless; the pool
        // keeps its first size.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let mut cfg = load_config(cli.config.as_deref())?;
    apply_overrides(&mut cfg, cli);
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));

    match &cli.command {
        Command::Synth { scene, split } => {
            if let Some(path) = scene {
                cfg.scene = Some(load_scene(path)?);
            }
            let mut manifest = Manifest::new("synth");
            cmd_synth(&cfg, &out_dir, *split, &mut manifest)?;
            manifest.save(&out_dir)?;
        }
        Command::Compress { cube } => {
            let mut manifest = Manifest::new("compress");
            cmd_compress(&cfg, cube, &out_dir, &mut manifest)?;
            manifest.save(&out_dir)?;
        }
        Command::Detect { cube } => {
            let mut manifest = Manifest::new("detect");
            cmd_detect(&cfg, cube, &out_dir, &mut manifest)?;
            manifest.save(&out_dir)?;
        }
        Command::Features { cubes, depths } => {
            let mut manifest = Manifest::new("features");
            cmd_features(&cfg, cubes, depths.as_deref(), &out_dir, &mut manifest)?;
            manifest.save(&out_dir)?;
        }
        Command::Pipeline { scene } => {
            if let Some(path) = scene {
                cfg.scene = Some(load_scene(path)?);
            }
            let mut manifest = Manifest::new("pipeline");
            cmd_pipeline(&cfg, &out_dir, &mut manifest)?;
            manifest.save(&out_dir)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
