use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fmm_cli::config::{parse_kernels, RunConfig};
use fmm_cli::pipeline;
use fmm_cli::CliError;
use fmm_core::kernels::KernelFamily;

#[derive(Parser, Debug)]
#[command(name = "fmm", version, about = "Functional movement model fitting and model averaging")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Args, Debug)]
struct Common {
    /// Flat key=value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Number of temporal knots.
    #[arg(long, global = true)]
    knots: Option<usize>,
    /// MCMC iterations per model.
    #[arg(long, global = true)]
    iters: Option<usize>,
    /// Comma-separated kernel families (BM, IBM, TU, TD, G).
    #[arg(long, global = true, value_parser = parse_kernels)]
    kernels: Option<Vec<KernelFamily>>,
    /// Directory holding a warp set (index.csv plus warp files).
    #[arg(long, global = true)]
    warp_dir: Option<PathBuf>,
    /// Fraction of interior observations removed in simulations.
    #[arg(long, global = true)]
    missing: Option<f64>,
    /// Also write the basis matrix of fitted models.
    #[arg(long, global = true)]
    dump_basis: bool,
    /// Telemetry CSV with columns time,x,y.
    #[arg(long, global = true)]
    track: Option<PathBuf>,
    /// Fit in the track's own units instead of standardizing.
    #[arg(long, global = true)]
    raw_units: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a telemetry track with known truth.
    Simulate {
        /// Deform time with the canonical warp.
        #[arg(long)]
        warped: bool,
        /// Number of observations before thinning.
        #[arg(long)]
        n_obs: Option<usize>,
    },
    /// Generate a candidate warp set.
    Warps {
        #[arg(long)]
        per_combo: Option<usize>,
        #[arg(long)]
        max_attempts: Option<usize>,
    },
    /// Fit one (kernel, warp) model.
    Fit {
        #[arg(long, value_parser = |s: &str| s.parse::<KernelFamily>().map_err(|e| e.to_string()))]
        kernel: KernelFamily,
        #[arg(long, default_value = "identity")]
        warp_id: String,
    },
    /// Fit all models, average them, then predict and diagnose.
    Bma {
        #[arg(long)]
        per_combo: Option<usize>,
        #[arg(long)]
        max_attempts: Option<usize>,
        /// Use only the first N warps of the set (identity first).
        #[arg(long)]
        max_warps: Option<usize>,
    },
    /// Draw posterior paths from a `bma` output directory or a fit file.
    Predict {
        #[arg(long)]
        bma_dir: Option<PathBuf>,
        #[arg(long)]
        fit: Option<PathBuf>,
    },
    /// Variograms of a track and, optionally, of path-draw residuals.
    Diagnose {
        /// Model-unit path draws at the observation times (paths_obs.csv).
        #[arg(long)]
        paths: Option<PathBuf>,
    },
}

fn build_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let c = &cli.common;
    let mut cfg = RunConfig::default();
    if let Some(p) = &c.config {
        cfg.apply_file(p)?;
    }
    if let Some(v) = &c.out {
        cfg.out = v.clone();
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.workers {
        cfg.workers = v;
    }
    if let Some(v) = c.knots {
        cfg.knots = v;
    }
    if let Some(v) = c.iters {
        cfg.iters = v;
    }
    if let Some(v) = &c.kernels {
        cfg.kernels = v.clone();
    }
    if let Some(v) = &c.warp_dir {
        cfg.warp_dir = Some(v.clone());
    }
    if let Some(v) = c.missing {
        cfg.missing = v;
    }
    if let Some(v) = &c.track {
        cfg.track = Some(v.clone());
    }
    cfg.dump_basis |= c.dump_basis;
    if c.raw_units {
        cfg.standardize = false;
    }
    match &cli.command {
        Command::Simulate { warped, n_obs } => {
            cfg.warped |= *warped;
            if let Some(n) = n_obs {
                cfg.n_obs = *n;
            }
        }
        Command::Warps { per_combo, max_attempts } => {
            cfg.per_combo = per_combo.unwrap_or(cfg.per_combo);
            cfg.max_attempts = max_attempts.unwrap_or(cfg.max_attempts);
        }
        Command::Bma {
            per_combo,
            max_attempts,
            max_warps,
        } => {
            cfg.per_combo = per_combo.unwrap_or(cfg.per_combo);
            cfg.max_attempts = max_attempts.unwrap_or(cfg.max_attempts);
            cfg.max_warps = max_warps.or(cfg.max_warps);
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = build_config(&cli)?;
    match &cli.command {
        Command::Simulate { .. } => {
            let files = pipeline::cmd_simulate(&cfg)?;
            println!("wrote {} files to {}", files.len(), cfg.out.display());
        }
        Command::Warps { .. } => {
            pipeline::cmd_warps(&cfg)?;
        }
        Command::Fit { kernel, warp_id } => {
            let path = pipeline::cmd_fit(&cfg, *kernel, warp_id)?;
            println!("wrote {}", path.display());
        }
        Command::Bma { .. } => {
            pipeline::cmd_bma(&cfg)?;
            println!("outputs and manifest written to {}", cfg.out.display());
        }
        Command::Predict { bma_dir, fit } => {
            let files = pipeline::cmd_predict(&cfg, bma_dir.as_deref(), fit.as_deref())?;
            println!("wrote {} files to {}", files.len(), cfg.out.display());
        }
        Command::Diagnose { paths } => {
            let files = pipeline::cmd_diagnose(&cfg, paths.as_deref())?;
            println!("wrote {} files to {}", files.len(), cfg.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
