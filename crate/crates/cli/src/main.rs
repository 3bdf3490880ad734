//! `rm3d`: scene generation, dataset export, sampling masks, evaluation and
//! diffusion sampling from the command line.
//!
//! Exit codes: 0 success, 2 validation or input failure, 3 `eval --assert`
//! threshold violation.

mod cmd;
mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "rm3d", version, about = "Volumetric radio-map synthesis toolkit")]
pub struct Cli {
    /// Flat key=value file; keys are long flag names. Flags given on the
    /// command line override file values; unknown keys are rejected.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Print the effective configuration as key=value lines and exit.
    #[arg(long = "print-config", global = true)]
    print_config: bool,
    /// Worker threads (default: RM3D_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a random urban scene and transmitter sites.
    Scene(cmd::scene::SceneArgs),
    /// Solve one transmitter's radio-map volume.
    Solve(cmd::dataset::SolveArgs),
    /// Solve every transmitter of a scene and write the dataset tree.
    Export(cmd::dataset::ExportArgs),
    /// Build a sparse sampling mask, optionally applying it to a volume.
    Mask(cmd::mask::MaskArgs),
    /// Compare a predicted volume with ground truth.
    Eval(cmd::eval::EvalArgs),
    /// Run a diffusion sampler and write the sample, timings and heatmaps.
    Diffuse(cmd::diffuse::DiffuseArgs),
}

#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn assertion(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Self::validation(e.to_string())
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, Failure> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("RM3D_THREADS") {
        Ok(v) if !v.trim().is_empty() => {
            v.trim().parse().map(Some).map_err(|_| Failure::validation(format!("RM3D_THREADS={v:?} is not a count")))
        }
        _ => Ok(None),
    }
}

fn run(args: Vec<OsString>) -> Result<(), Failure> {
    let root = Cli::command();
    let matches = config::resolve(root.clone(), args)?;
    let cli = Cli::from_arg_matches(&matches).map_err(|e| Failure::validation(e.to_string()))?;
    let rendered = config::render(&root, &matches);
    if cli.print_config {
        print!("{rendered}");
        return Ok(());
    }
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(Failure::validation("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Scene(a) => cmd::scene::run(&a, &rendered),
        Command::Solve(a) => cmd::dataset::solve(&a),
        Command::Export(a) => cmd::dataset::export(&a, &rendered),
        Command::Mask(a) => cmd::mask::run(&a),
        Command::Eval(a) => cmd::eval::run(&a),
        Command::Diffuse(a) => cmd::diffuse::run(&a, &rendered),
    }
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("rm3d: {f}");
            ExitCode::from(f.code)
        }
    }
}
