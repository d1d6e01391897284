mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use config::RunConfig;
use error::{CliError, CliResult};

/// Hyperspectral denoising toolkit: synthetic scenes, baselines, a 1-D U-Net and evaluation.
#[derive(Parser, Debug)]
#[command(name = "n2n4m", version)]
struct Cli {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the global seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Validate inputs and print what would happen without writing anything.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic clean scene with its wavelength grid and split manifest.
    Gen,
    /// Add instrument-like noise to the clean scene.
    Noise {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long = "out")]
        output: Option<PathBuf>,
    },
    /// Train the U-Net on noisy/target pairs.
    Train {
        /// Continue from the saved checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Denoise a dataset with sg, cotcat_like or n2n4m.
    Denoise {
        #[arg(long)]
        method: String,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long = "out")]
        output: Option<PathBuf>,
    },
    /// Score noisy and denoised test spectra against the clean scene.
    Eval {
        /// Comma-separated subset of noisy, sg, cotcat_like, n2n4m.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
    },
    /// Per-pixel band depth with threshold flags.
    Summary {
        #[arg(long)]
        param: String,
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long = "out")]
        output: Option<PathBuf>,
        /// Overrides the configured detection threshold.
        #[arg(long)]
        threshold: Option<f64>,
    },
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("cannot start thread pool: {e}")))?;
    }
    let mut cfg = load_config(&cli)?;
    let dry = cli.dry_run;
    match cli.command {
        Command::Gen => commands::gen(&cfg, dry),
        Command::Noise { input, output } => commands::noise(&cfg, input, output, dry),
        Command::Train { resume } => commands::train(&cfg, resume, dry),
        Command::Denoise { method, input, output } => commands::denoise(&cfg, &method, input, output, dry),
        Command::Eval { methods } => commands::eval(&cfg, methods, dry),
        Command::Summary { param, input, output, threshold } => {
            if let Some(t) = threshold {
                cfg.band_depth.threshold = t;
            }
            commands::summary(&cfg, &param, input, output, dry)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let line = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", CliError::config(line));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
