use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fls::bench;
use fls::io::{self, CloudFormat};
use fls::registration::FlsConfig;
use fls::transform::SimilarityTransform;

#[derive(Parser)]
#[command(name = "fls", about = "Correspondence-free point cloud registration", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register a source cloud onto a target cloud.
    Register(RegisterArgs),
    /// Run a benchmark experiment from a config file.
    Bench(BenchArgs),
    /// Sample a point cloud from a mesh surface.
    Sample(SampleArgs),
    /// Apply a random perturbation to a cloud, writing the ground truth alongside.
    Perturb(PerturbArgs),
}

#[derive(Args)]
struct RegisterArgs {
    source: PathBuf,
    target: PathBuf,
    /// Relative scale: `known:<s>` or `unknown` (estimated from TRIMs).
    #[arg(long, default_value = "known:1")]
    scale: String,
    /// Refine the FLS estimate with point-to-point ICP.
    #[arg(long)]
    refine_icp: bool,
    /// Maximum basis index per dimension.
    #[arg(long)]
    k: Option<usize>,
    /// Seed for TRIM subsampling when scale is unknown.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the result as JSON to this path instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    mesh: PathBuf,
    output: PathBuf,
    #[arg(long, default_value_t = 1024)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output format: xyz, ply-ascii or ply-binary.
    #[arg(long, default_value = "xyz")]
    format: String,
}

#[derive(Args)]
struct PerturbArgs {
    cloud: PathBuf,
    output: PathBuf,
    #[arg(long, num_args = 2, default_values_t = [0.0, 90.0])]
    rotation_range_deg: Vec<f64>,
    #[arg(long, num_args = 2, default_values_t = [1.0, 2.0])]
    translation_range: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, num_args = 2)]
    scale_range: Option<Vec<f64>>,
    #[arg(long)]
    shuffle: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "xyz")]
    format: String,
}

#[derive(Serialize)]
struct RegisterOutput {
    scale: f64,
    rotation: Vec<Vec<f64>>,
    translation: Vec<f64>,
    final_cost: f64,
    iterations: usize,
    converged: bool,
    wall_time_s: f64,
}

fn transform_json(t: &SimilarityTransform) -> (f64, Vec<Vec<f64>>, Vec<f64>) {
    let d = t.dim();
    let rotation = (0..d)
        .map(|r| (0..d).map(|c| t.rotation()[(r, c)]).collect())
        .collect();
    (t.scale(), rotation, t.translation().iter().copied().collect())
}

fn parse_format(name: &str) -> fls::Result<CloudFormat> {
    Ok(match name {
        "xyz" => CloudFormat::Xyz,
        "ply-ascii" => CloudFormat::PlyAscii,
        "ply-binary" => CloudFormat::PlyBinary,
        other => {
            return Err(fls::Error::Config(format!(
                "unknown format {other:?}; choose xyz, ply-ascii or ply-binary"
            )))
        }
    })
}

fn run_register(args: &RegisterArgs) -> fls::Result<()> {
    let source = io::load_cloud(&args.source, None)?;
    let target = io::load_cloud(&args.target, None)?;
    let mut config = FlsConfig::default();
    if let Some(k) = args.k {
        config.order = k;
    }
    config.scale.seed = args.seed;
    let init = SimilarityTransform::identity(source.dim());

    let result = if args.scale == "unknown" {
        fls::register_with_unknown_scale(&source, &target, &config, &init)?
    } else {
        let value = args
            .scale
            .strip_prefix("known:")
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| {
                fls::Error::Config(format!(
                    "--scale must be `known:<s>` or `unknown`, got {:?}",
                    args.scale
                ))
            })?;
        fls::register(&source, &target, &config, value, &init)?
    };
    let result = if args.refine_icp {
        fls::icp::refine(&source, &target, &result.transform, &Default::default())?
    } else {
        result
    };

    let (scale, rotation, translation) = transform_json(&result.transform);
    let out = RegisterOutput {
        scale,
        rotation,
        translation,
        final_cost: result.final_cost,
        iterations: result.iterations,
        converged: result.converged,
        wall_time_s: result.wall_time,
    };
    let json = serde_json::to_string_pretty(&out)
        .map_err(|e| fls::Error::Config(format!("serialization: {e}")))?;
    match &args.output {
        Some(path) => std::fs::write(path, json).map_err(|e| fls::Error::Io {
            path: path.display().to_string(),
            source: e,
        })?,
        None => println!("{json}"),
    }
    Ok(())
}

fn run_bench(args: &BenchArgs) -> fls::Result<()> {
    let config = bench::load_config(&args.config)?;
    let report = bench::run_experiment(&config)?;
    bench::write_artifacts(&report, &args.out_dir)?;
    for agg in &report.aggregates {
        println!(
            "{} sigma={}: {} trials, failure {:.1}%, exact {:.1}%, rot {:.3} deg, trans {:.4}",
            agg.method,
            agg.sigma,
            agg.trials,
            100.0 * agg.failure_rate,
            100.0 * agg.exact_rate,
            agg.mean_rot_err_deg,
            agg.mean_trans_err
        );
    }
    Ok(())
}

fn run_sample(args: &SampleArgs) -> fls::Result<()> {
    let mesh = io::load_mesh(&args.mesh)?;
    if mesh.dropped_degenerate > 0 {
        eprintln!("dropped {} degenerate faces", mesh.dropped_degenerate);
    }
    let cloud = io::sample_mesh(&mesh, args.points, args.seed)?;
    io::write_cloud(&cloud, &args.output, parse_format(&args.format)?)
}

fn run_perturb(args: &PerturbArgs) -> fls::Result<()> {
    let cloud = io::load_cloud(&args.cloud, None)?;
    let spec = bench::PerturbationSpec {
        rotation_range: (
            args.rotation_range_deg[0].to_radians(),
            args.rotation_range_deg[1].to_radians(),
        ),
        translation_range: (args.translation_range[0], args.translation_range[1]),
        noise_sigma: args.sigma,
        scale_range: args.scale_range.as_ref().map(|r| (r[0], r[1])),
        shuffle: args.shuffle,
    };
    let (out, truth) = bench::perturb(&cloud, &spec, args.seed)?;
    io::write_cloud(&out, &args.output, parse_format(&args.format)?)?;

    let (scale, rotation, translation) = transform_json(&truth);
    #[derive(Serialize)]
    struct GroundTruth {
        scale: f64,
        rotation: Vec<Vec<f64>>,
        translation: Vec<f64>,
        sigma: f64,
        seed: u64,
    }
    let sidecar = args.output.with_extension("gt.json");
    let json = serde_json::to_string_pretty(&GroundTruth {
        scale,
        rotation,
        translation,
        sigma: args.sigma,
        seed: args.seed,
    })
    .map_err(|e| fls::Error::Config(format!("serialization: {e}")))?;
    std::fs::write(&sidecar, json).map_err(|e| fls::Error::Io {
        path: sidecar.display().to_string(),
        source: e,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Register(args) => run_register(args),
        Command::Bench(args) => run_bench(args),
        Command::Sample(args) => run_sample(args),
        Command::Perturb(args) => run_perturb(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
