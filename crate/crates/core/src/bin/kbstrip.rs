use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use kbstrip::acceptance::run_all;
use kbstrip::config::{parse_config_in, ExperimentSpec, KEY_HELP};
use kbstrip::error::Error;
use kbstrip::experiment::{preset, run_experiment_in, RunOutcome, PRESETS};

#[derive(Parser, Debug)]
#[command(
    name = "kbstrip",
    version,
    about = "Pseudo-spectral simulator and energy-identity toolkit for the 2D Kawahara-Burgers equation on a strip",
    after_long_help = KEY_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output directory (defaults to the config's `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Seed for randomized property suites.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Only print failures.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Run a bundled preset by name.
    Preset { name: String },
    /// Run every config matching a glob, each into its own subdirectory.
    Sweep { pattern: String },
    /// Run the full acceptance suite.
    Check,
}

fn load(path: &Path) -> Result<ExperimentSpec, Error> {
    let text = std::fs::read_to_string(path)?;
    let base = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    parse_config_in(&text, base).map_err(|e| match e {
        Error::Parse { line, column, message } => Error::Parse {
            line,
            column,
            message: format!("{}: {message}", path.display()),
        },
        e => e,
    })
}

fn apply_seed(spec: &mut ExperimentSpec, seed: Option<u64>) {
    if let Some(s) = seed {
        spec.options.seed = s;
    }
}

fn report(outcome: &RunOutcome, quiet: bool) {
    if quiet && outcome.exit_code == 0 {
        return;
    }
    let status = if outcome.passed { "PASS" } else { "FAIL" };
    let err = outcome.report.get("error").and_then(|e| e.as_str()).unwrap_or("");
    println!(
        "{status} {} -> {} (exit {}){}",
        outcome.report["experiment"].as_str().unwrap_or("?"),
        outcome.out_dir.display(),
        outcome.exit_code,
        if err.is_empty() {
            String::new()
        } else {
            format!(": {err}")
        }
    );
}

fn run_one(spec: &ExperimentSpec, out: &Path, quiet: bool) -> i32 {
    match run_experiment_in(spec, out) {
        Ok(o) => {
            report(&o, quiet);
            o.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Run { config } => match load(config) {
            Ok(mut spec) => {
                apply_seed(&mut spec, cli.seed);
                let out = cli.out.clone().unwrap_or_else(|| spec.output_dir.clone());
                run_one(&spec, &out, cli.quiet)
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Command::Preset { name } => match preset(name) {
            Ok(mut spec) => {
                apply_seed(&mut spec, cli.seed);
                let out = cli.out.clone().unwrap_or_else(|| spec.output_dir.clone());
                run_one(&spec, &out, cli.quiet)
            }
            Err(e) => {
                eprintln!("error: {e}");
                let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                eprintln!("presets: {}", names.join(", "));
                e.exit_code()
            }
        },
        Command::Sweep { pattern } => sweep(pattern, cli.out.as_deref(), cli.seed, cli.quiet),
        Command::Check => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out/check"));
            match run_all(cli.seed.unwrap_or(0), &out, cli.quiet) {
                Ok(results) => {
                    if results.iter().all(|r| r.passed) {
                        0
                    } else {
                        1
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            }
        }
    };
    ExitCode::from(code as u8)
}

fn sweep(pattern: &str, out: Option<&Path>, seed: Option<u64>, quiet: bool) -> i32 {
    let paths: Vec<PathBuf> = match glob::glob(pattern) {
        Ok(paths) => paths.filter_map(|p| p.ok()).collect(),
        Err(e) => {
            eprintln!("error: invalid glob `{pattern}`: {e}");
            return 2;
        }
    };
    if paths.is_empty() {
        eprintln!("error: no config matches `{pattern}`");
        return 2;
    }
    let mut specs = Vec::with_capacity(paths.len());
    for p in &paths {
        match load(p) {
            Ok(mut spec) => {
                apply_seed(&mut spec, seed);
                specs.push((p.clone(), spec));
            }
            Err(e) => {
                eprintln!("error: {e}");
                return e.exit_code();
            }
        }
    }
    let root = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("out/sweep"));
    let codes: Vec<i32> = specs
        .par_iter()
        .map(|(path, spec)| {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            run_one(spec, &root.join(stem), quiet)
        })
        .collect();
    codes.into_iter().max().unwrap_or(0)
}
