//! Config-driven experiment runner: builds a model, executes the enabled
//! tasks, and writes machine-readable artifacts plus a run manifest.

mod build;
mod config;
mod tasks;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, OutputFormat};

#[derive(Parser)]
#[command(name = "heatflux", version, about = "Heat-flux statistics experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Overrides the config's output directory
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Worker-pool size for grid sweeps (default: HEATFLUX_WORKERS or all cores)
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides the config's RNG seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's artifact format
    #[arg(long, global = true, value_parser = parse_format)]
    format: Option<OutputFormat>,
}

#[derive(Subcommand)]
enum Command {
    /// Executes all enabled tasks and writes artifacts plus manifest.json
    Run { config: PathBuf },
    /// Checks the config's schema and invariants without computing
    Validate { config: PathBuf },
}

fn parse_format(s: &str) -> Result<OutputFormat, String> {
    match s {
        "csv" => Ok(OutputFormat::Csv),
        "json" => Ok(OutputFormat::Json),
        other => Err(format!("unknown format `{other}` (expected csv or json)")),
    }
}

fn load_and_override(path: &PathBuf, cli: &Cli) -> Result<ExperimentConfig, String> {
    let mut config = ExperimentConfig::from_path(path)?;
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    if let Some(format) = cli.format {
        config.format = format;
    }
    if let Some(dir) = &cli.output_dir {
        config.output_dir = Some(dir.display().to_string());
    }
    Ok(config)
}

fn init_worker_pool(workers: Option<usize>) {
    let n = workers.or_else(|| {
        std::env::var("HEATFLUX_WORKERS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = n {
        // a later duplicate initialization is harmless: the first pool wins
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Validate { config } => {
            let config = match load_and_override(config, &cli) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let diag = config.validate();
            for est in &diag.estimates {
                println!("estimate: {est}");
            }
            if diag.errors.is_empty() {
                println!("ok");
                ExitCode::SUCCESS
            } else {
                for err in &diag.errors {
                    eprintln!("error: {err}");
                }
                ExitCode::from(2)
            }
        }
        Command::Run { config } => {
            let config = match load_and_override(config, &cli) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let diag = config.validate();
            if !diag.errors.is_empty() {
                for err in &diag.errors {
                    eprintln!("error: {err}");
                }
                return ExitCode::from(2);
            }
            init_worker_pool(cli.workers);
            let out_dir = PathBuf::from(config.output_dir.clone().unwrap_or_else(|| ".".into()));
            if let Err(e) = std::fs::create_dir_all(&out_dir) {
                eprintln!("error: cannot create {}: {e}", out_dir.display());
                return ExitCode::from(2);
            }
            let model = match build::build(&config) {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let manifest = tasks::run_all(&config, &model, &out_dir);
            match tasks::write_manifest(&manifest, &out_dir) {
                Ok(path) => println!("manifest: {}", path.display()),
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            }
            for record in &manifest.tasks {
                let n_pass = record.checks.iter().filter(|c| c.pass).count();
                println!(
                    "task {}: {} ({n_pass}/{} checks pass, {:.2}s)",
                    record.task,
                    record.status,
                    record.checks.len(),
                    record.wall_time_s
                );
                if let Some(e) = &record.error {
                    eprintln!("  error: {e}");
                }
            }
            if manifest.all_checks_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}
