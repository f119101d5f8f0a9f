//! `lcdiff`: dataset synthesis, two-stage training, restoration, evaluation
//! and the analysis experiments, all driven by one TOML run configuration.

mod commands;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lcdiff::config::RunConfig;
use lcdiff::Error;

#[derive(Parser, Debug)]
#[command(name = "lcdiff", version, about = "Adverse-weather restoration with LCDN and a luminance-guided diffusion refiner")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Run configuration (TOML). Defaults are used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Parent directory for run outputs. LCDIFF_OUT takes precedence.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Compute device; only `cpu` exists.
    #[arg(long, global = true, default_value = "cpu")]
    pub device: String,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render clean scenes and their weather-degraded versions.
    Synth,
    /// Train the luminance/chrominance decomposition network.
    TrainLcdn {
        /// Training dataset manifest.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Train the diffusion refiner on top of a frozen LCDN.
    TrainLgdm {
        #[arg(long)]
        data: Option<PathBuf>,
        /// LCDN checkpoint directory.
        #[arg(long)]
        lcdn: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// Decay rate of the time-step weight.
        #[arg(long)]
        k: Option<f64>,
    },
    /// Restore one image or every degraded image of a dataset.
    Restore {
        /// A single degraded PNG.
        #[arg(long, conflicts_with = "data")]
        input: Option<PathBuf>,
        /// Dataset manifest; the held-out set of the latest run by default.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        lcdn: Option<PathBuf>,
        /// LGDM checkpoint directory (the EMA weights).
        #[arg(long)]
        lgdm: Option<PathBuf>,
        /// Starting step of reverse diffusion; 0 returns the LCDN output.
        #[arg(long)]
        tau: Option<usize>,
        /// DDIM steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Score restored images against the clean references.
    Eval {
        #[arg(long)]
        restored: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Luminance-swap study: clean-Y versus degraded-Y hybrids.
    SwapExp {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Sweep the time-step weight decay k.
    AblateK {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Held-out manifest used for scoring.
        #[arg(long)]
        heldout: Option<PathBuf>,
        #[arg(long)]
        lcdn: Option<PathBuf>,
        /// LGDM training steps per k.
        #[arg(long)]
        steps: Option<usize>,
        /// Comma-separated k values.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<f64>>,
    },
    /// Loss curves and metric bars from earlier runs.
    Plot {
        /// Run directories to read; the newest artifacts under --out by default.
        #[arg(long)]
        run: Vec<PathBuf>,
    },
}

/// Exit status for a failed command.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Missing(_) => 2,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        Error::Numeric { .. } | Error::NonFinite(_) => 3,
        _ => 1,
    }
}

fn load_config(g: &GlobalArgs) -> lcdiff::Result<RunConfig> {
    if g.device != "cpu" {
        return Err(Error::Config(format!("unknown device {:?}; only \"cpu\" is available", g.device)));
    }
    let cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(match g.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = load_config(&cli.global).and_then(|cfg| commands::run(&cli, cfg));
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
