use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kseg::config::{parse_filters, ExperimentConfig};
use kseg::report::{flops_for_config, load_results, svg_report, text_report};
use kseg::runner::{eval_grid, gen_data, train_grid};
use kseg::{io, CliError, Result};

/// Spatial and k-space segmentation experiments on synthetic brain phantoms.
#[derive(Parser)]
#[command(name = "kseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate phantoms and the split manifest.
    GenData { config: PathBuf },
    /// Train every (filtered) grid entry and score it on the test split.
    Train {
        config: PathBuf,
        /// `key=value`; keys: arch, domain, pe, layers, width, config_id.
        #[arg(long = "filter", num_args = 1..)]
        filters: Vec<String>,
        /// Runs executed concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Re-evaluate saved checkpoints on the test split.
    Eval {
        config: PathBuf,
        #[arg(long = "filter", num_args = 1..)]
        filters: Vec<String>,
    },
    /// Analytic FLOPs and parameter counts for the grid.
    Flops {
        config: PathBuf,
        #[arg(long = "filter", num_args = 1..)]
        filters: Vec<String>,
    },
    /// Tables and an optional SVG chart from a results directory.
    Report {
        dir: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
}

fn selected(config: &Path, filters: &[String]) -> Result<(ExperimentConfig, Vec<kseg::config::GridEntry>)> {
    let cfg = ExperimentConfig::load(config)?;
    let entries = cfg.select(&parse_filters(filters)?)?;
    Ok((cfg, entries))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let manifest = gen_data(&cfg)?;
            println!("{}", manifest.display());
        }
        Command::Train { config, filters, jobs } => {
            if jobs == 0 {
                return Err(CliError::Config("--jobs must be at least 1".into()));
            }
            let (cfg, entries) = selected(&config, &filters)?;
            let statuses = train_grid(&cfg, &entries, jobs)?;
            let failed: Vec<_> = statuses.iter().filter(|s| !s.ok()).collect();
            for s in &statuses {
                println!("{} {}", s.config_id, s.status);
            }
            if !failed.is_empty() {
                eprintln!("{} of {} runs failed", failed.len(), statuses.len());
                return Err(CliError::Report(format!("{} runs failed", failed.len())));
            }
        }
        Command::Eval { config, filters } => {
            let (cfg, entries) = selected(&config, &filters)?;
            for r in eval_grid(&cfg, &entries)? {
                println!("{} macro dice {:.4}", r.config_id, r.macro_dice());
            }
        }
        Command::Flops { config, filters } => {
            let (cfg, entries) = selected(&config, &filters)?;
            print!("{}", flops_for_config(&cfg, &entries));
        }
        Command::Report { dir, svg } => {
            let results = load_results(&dir)?;
            let text = text_report(&results);
            let out = dir.join("report.txt");
            io::write_file(&out, text.as_bytes())?;
            print!("{text}");
            if let Some(path) = svg {
                io::write_file(&path, svg_report(&results).as_bytes())?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kseg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
