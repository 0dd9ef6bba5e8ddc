use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hbs_cli::{execute, parse_config, run_batch, CliError, Mode};
use hbs_core::SystemRegistry;

/// Simulate and verify hybrid mechanical systems with symmetry.
#[derive(Parser)]
#[command(name = "hbs", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a configured hybrid run; writes trajectory CSV and a report.
    Run {
        config: PathBuf,
        /// Output directory for generated files.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Classify the configured guards as vertical / horizontal / neither.
    Classify {
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run the verification suite for the configured system and guards.
    /// Exit code 2 when any check fails.
    Verify {
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// List the built-in systems with their coordinates and parameters.
    ListSystems,
    /// Execute every *.toml config in a directory, concurrently. Each run
    /// uses the mode from its own config.
    Batch {
        dir: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn run_one(config: &Path, out: &Path, mode: Mode) -> Result<i32, CliError> {
    let text = fs::read_to_string(config).map_err(|e| CliError::Io {
        path: config.to_path_buf(),
        message: e.to_string(),
    })?;
    let cfg = parse_config(&text)?;
    let stem = config
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string());
    let outcome = execute(&cfg, out, &stem, Some(mode))?;
    for file in &outcome.files {
        println!("wrote {}", file.display());
    }
    Ok(outcome.exit_code)
}

fn list_systems() {
    for entry in SystemRegistry::entries() {
        println!("{} (dim {})", entry.name, entry.dim);
        println!("  coordinates: {}", entry.coords.join(", "));
        if entry.params.is_empty() {
            println!("  parameters: none");
        } else {
            let params: Vec<String> = entry
                .params
                .iter()
                .map(|(name, default)| format!("{name} = {default}"))
                .collect();
            println!("  parameters: {}", params.join(", "));
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("HBS_LOG")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out } => run_one(config, out, Mode::Run),
        Command::Classify { config, out } => run_one(config, out, Mode::Classify),
        Command::Verify { config, out } => run_one(config, out, Mode::Verify),
        Command::ListSystems => {
            list_systems();
            Ok(0)
        }
        Command::Batch { dir, out } => run_batch(dir, out),
    };
    match result {
        Ok(code) => ExitCode::from(u8::try_from(code).unwrap_or(1)),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
