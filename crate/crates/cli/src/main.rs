use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use densiface::detect::PixelRect;
use densiface::pipeline::{run_eval, run_reconstruct, run_synth, PipelineConfig, RunOutput};
use densiface::rbf::Solver;
use densiface::Error;

/// Dense colored facial point clouds from a single RGB-D frame.
#[derive(Parser)]
#[command(name = "densiface", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reconstruct a dense face cloud from a depth/color frame pair.
    Reconstruct(RunArgs),
    /// Render a synthetic frame pair from a scene spec.
    Synth {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        intrinsics: PathBuf,
        /// Output directory for depth.pgm, color.ppm and scene.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a synthetic frame and score it against its scene.
    Eval(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Cg,
    Dense,
}

#[derive(Args)]
struct RunArgs {
    /// JSON pipeline config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    depth: Option<PathBuf>,
    #[arg(long)]
    color: Option<PathBuf>,
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    #[arg(long)]
    cascade: Option<PathBuf>,
    /// Face rect in depth pixels; skips detection.
    #[arg(long, value_name = "X,Y,W,H", value_parser = parse_rect)]
    face_bbox: Option<PixelRect>,
    /// Dense PLY output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metrics JSON output.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Scene spec of a synthetic frame, for the error report.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    upsample: Option<u32>,
    #[arg(long)]
    r0_mult: Option<f64>,
    #[arg(long)]
    mask_mult: Option<f64>,
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    checks: Option<usize>,
    /// Seed of the kd-forest and of k-means.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
}

fn parse_rect(s: &str) -> Result<PixelRect, String> {
    let parts: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [x, y, w, h] if w > 0 && h > 0 => Ok(PixelRect::new(x, y, w, h)),
        [_, _, _, _] => Err("width and height must be positive".into()),
        _ => Err(format!("expected x,y,w,h, got {} numbers", parts.len())),
    }
}

impl RunArgs {
    fn config(&self) -> Result<PipelineConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    Error::Io(std::io::Error::new(
                        e.kind(),
                        format!("{}: {e}", p.display()),
                    ))
                })?;
                PipelineConfig::from_json(&text)?
            }
            None => PipelineConfig::default(),
        };
        let paths = [
            (&self.depth, &mut cfg.depth),
            (&self.color, &mut cfg.color),
            (&self.intrinsics, &mut cfg.intrinsics),
            (&self.cascade, &mut cfg.cascade),
            (&self.out, &mut cfg.out),
            (&self.metrics, &mut cfg.metrics),
            (&self.scene, &mut cfg.scene),
        ];
        for (flag, slot) in paths {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        if self.face_bbox.is_some() {
            cfg.face_bbox = self.face_bbox;
        }
        if let Some(v) = self.upsample {
            cfg.rbf.upsample = v;
        }
        if let Some(v) = self.r0_mult {
            cfg.rbf.r0_multiplier = v;
        }
        if let Some(v) = self.mask_mult {
            cfg.rbf.mask_multiplier = v;
        }
        if let Some(v) = self.ridge {
            cfg.rbf.ridge = v;
        }
        if let Some(v) = self.trees {
            cfg.forest.trees = v;
        }
        if let Some(v) = self.checks {
            cfg.forest.max_checks = v;
        }
        if let Some(v) = self.seed {
            cfg.forest.rng_seed = v;
            cfg.kmeans.rng_seed = v;
        }
        if let Some(s) = self.solver {
            cfg.rbf.solver = match s {
                SolverArg::Cg => Solver::SparseCg,
                SolverArg::Dense => Solver::DenseExact,
            };
        }
        Ok(cfg)
    }
}

fn report(out: &RunOutput, metrics_path: Option<&Path>) {
    print!("{}", out.metrics.table());
    if metrics_path.is_none() {
        println!();
        print!("{}", out.metrics.to_json());
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Reconstruct(args) => {
            let cfg = args.config()?;
            let out = run_reconstruct(&cfg)?;
            report(&out, cfg.metrics.as_deref());
        }
        Command::Eval(args) => {
            let cfg = args.config()?;
            let out = run_eval(&cfg)?;
            report(&out, cfg.metrics.as_deref());
        }
        Command::Synth {
            scene,
            intrinsics,
            out,
        } => run_synth(&scene, &intrinsics, &out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DENSIFACE_LOG", "info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("densiface: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
