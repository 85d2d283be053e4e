use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};
use gsreg::batch::write_csv;
use gsreg::commands::{self, RenderKind, EXIT_OK, EXIT_USAGE};
use gsreg::transform::load_transform;
use gsreg::Error;
use serde_json::json;

#[derive(Parser)]
#[command(name = "gsreg", version, about = "Register and fuse Gaussian Splatting scenes")]
struct Cli {
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the similarity mapping scene B into scene A.
    Register {
        a: PathBuf,
        b: PathBuf,
        cams_a: PathBuf,
        cams_b: PathBuf,
        out: PathBuf,
        /// Stop after point-cloud registration.
        #[arg(long)]
        coarse_only: bool,
        /// Pipeline configuration JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Store the wall-clock time in the diagnostics (breaks byte-identical output).
        #[arg(long)]
        record_time: bool,
    },
    /// Move B into A's frame and merge the two models.
    Fuse {
        a: PathBuf,
        b: PathBuf,
        transform: PathBuf,
        out: PathBuf,
        #[arg(long)]
        cams_a: Option<PathBuf>,
        #[arg(long)]
        cams_b: Option<PathBuf>,
        /// Where to write the merged camera list.
        #[arg(long)]
        cams_out: Option<PathBuf>,
    },
    /// Render every camera of a model to PNG.
    #[command(group(ArgGroup::new("kind").required(true).args(["depth", "color"])))]
    Render {
        model: PathBuf,
        cams: PathBuf,
        outdir: PathBuf,
        /// 16-bit depth in millimeters.
        #[arg(long)]
        depth: bool,
        #[arg(long)]
        color: bool,
        #[arg(long, default_value_t = 256)]
        width: u32,
        #[arg(long, default_value_t = 256)]
        height: u32,
    },
    /// Compare an estimated transform with the ground truth.
    #[command(group(ArgGroup::new("input").required(true).args(["estimate", "batch"])))]
    Eval {
        #[arg(requires = "ground_truth")]
        estimate: Option<PathBuf>,
        ground_truth: Option<PathBuf>,
        /// Directory of scene folders holding transform.json and gt.json; prints CSV.
        #[arg(long, conflicts_with = "estimate")]
        batch: Option<PathBuf>,
    },
    /// Generate a synthetic scene pair with ground truth.
    Synth {
        outdir: PathBuf,
        /// Generator configuration JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Register { a, b, cams_a, cams_b, out, coarse_only, config, record_time } => {
            let cfg = commands::load_config(config.as_deref(), cli.seed)?;
            let scene_a = commands::load_scene(&a, Some(&cams_a))?;
            let scene_b = commands::load_scene(&b, Some(&cams_b))?;
            let r = commands::register(&scene_a, &scene_b, &cfg, coarse_only, record_time, &out)?;
            println!("{}", serde_json::to_string(&r.record).expect("transform serializes"));
            Ok(r.exit_code)
        }
        Command::Fuse { a, b, transform, out, cams_a, cams_b, cams_out } => {
            let scene_a = commands::load_scene(&a, cams_a.as_deref())?;
            let scene_b = commands::load_scene(&b, cams_b.as_deref())?;
            let x = load_transform(&transform)?;
            let merged = commands::fuse(&scene_a, &scene_b, &x, &out, cams_out.as_deref())?;
            println!("{}", json!({ "gaussians": merged.len(), "cameras": merged.cameras.len() }));
            Ok(EXIT_OK)
        }
        Command::Render { model, cams, outdir, depth, color: _, width, height } => {
            let scene = commands::load_scene(&model, Some(&cams))?;
            let kind = if depth { RenderKind::Depth } else { RenderKind::Color };
            let written = commands::render_views(&scene, kind, width, height, &outdir)?;
            println!("{}", json!({ "images": written.len() }));
            Ok(EXIT_OK)
        }
        Command::Eval { estimate, ground_truth, batch } => {
            if let Some(dir) = batch {
                let rows = commands::eval_batch(&dir)?;
                write_csv(&rows, std::io::stdout().lock())?;
            } else {
                let (est, gt) = (estimate.expect("clap enforces"), ground_truth.expect("clap enforces"));
                let m = commands::eval_pair(&est, &gt)?;
                println!("{}", serde_json::to_string(&m).expect("report serializes"));
            }
            Ok(EXIT_OK)
        }
        Command::Synth { outdir, config } => {
            let cfg = commands::load_synth_config(config.as_deref())?;
            commands::synth(cli.seed.unwrap_or(0), &cfg, &outdir)?;
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            let body = json!({ "error": e.kind(), "message": e.to_string() });
            let _ = writeln!(std::io::stderr(), "{body}");
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}
