//! Command-line front end: configuration presets, on-disk layout, manifests
//! and the `gen → render → train-teacher → train-seg → train-student →
//! reconstruct → evaluate` stages.

pub mod config;
mod error;
pub mod manifest;
pub mod stages;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{resolve, Overrides, Preset, RunConfig};
pub use error::CliError;
pub use stages::{run_stage, Layout};

/// Environment variable naming the output root when `--out` is absent.
pub const OUTPUT_ROOT_ENV: &str = "BIPLANAR_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

#[derive(Debug, Parser)]
#[command(name = "biplanar", version, about = "Bone surface reconstruction from two synthetic radiographs")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON file overlaid on the preset; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,

    /// Base seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Reconstruction lattice resolution.
    #[arg(long, global = true)]
    resolution: Option<usize>,

    /// Output root (default: $BIPLANAR_OUTPUT_ROOT or ./runs).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate phantom scenes and the dataset split.
    Gen,
    /// Render CT volumes, radiographs, masks and ground-truth meshes.
    Render,
    /// Train the CT teacher on labeled scenes.
    TrainTeacher,
    /// Train the bone segmenter on labeled radiographs.
    TrainSeg,
    /// Train the biplanar student with pseudo-labels and distillation.
    TrainStudent,
    /// Reconstruct bone meshes for the test scenes.
    Reconstruct,
    /// Score reconstructions against ground truth.
    Evaluate,
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Render => "render",
            Command::TrainTeacher => "train-teacher",
            Command::TrainSeg => "train-seg",
            Command::TrainStudent => "train-student",
            Command::Reconstruct => "reconstruct",
            Command::Evaluate => "evaluate",
        }
    }
}

fn report(err: &CliError) -> i32 {
    eprintln!("{}", err.to_json());
    err.exit_code()
}

/// Parses `args`, runs one stage and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{}", e.render());
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            return report(&CliError::Usage(first));
        }
    };
    let overrides = Overrides { preset: cli.preset, seed: cli.seed, resolution: cli.resolution };
    let cfg = match resolve(cli.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => return report(&e),
    };
    let root = cli
        .out
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT));
    let stage = cli.command.stage();
    match run_stage(stage, &Layout::new(root), &cfg) {
        Ok(m) => {
            println!(
                "{}",
                serde_json::json!({ "stage": stage, "status": "ok", "outputs": m.outputs.len(), "timings": m.timings })
            );
            0
        }
        Err(e) => report(&e),
    }
}
