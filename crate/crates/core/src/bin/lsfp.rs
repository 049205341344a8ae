use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use lsfp_core::hardware::{distortion_table_csv, MAX_BITS};
use lsfp_core::harness::{load_config, run_experiment, ExperimentConfig, ImpairmentLevel};

/// Simulate a hardware-impaired multi-cell massive MIMO downlink and compare
/// local precoding (SLP) with optimized large-scale fading precoding (LSFP).
#[derive(Parser, Debug)]
#[command(version)]
struct Cli {
    /// Configuration file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Impairment preset: ideal, low, moderate, high or severe.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo channel realizations for the SINR terms.
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Maximum MM iterations.
    #[arg(long)]
    mm_iters: Option<usize>,
    /// MM stopping tolerance on the fixed-point residual.
    #[arg(long)]
    mm_tol: Option<f64>,
    /// Small network (L=2, M=16, K=2, 500 samples) as the base configuration.
    #[arg(long)]
    desk: bool,
    /// Result CSV. Metadata and MM traces are written next to it.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Write the Lloyd-Max distortion table to PATH and exit.
    #[arg(long, value_name = "PATH")]
    distortion_table: Option<PathBuf>,
}

fn build_config(cli: &Cli) -> lsfp_core::Result<ExperimentConfig> {
    let mut cfg = match (&cli.config, cli.desk) {
        (Some(path), true) => {
            let text = std::fs::read_to_string(path)?;
            ExperimentConfig::desk().apply_text(&text, &path.display().to_string())?
        }
        (Some(path), false) => load_config(path)?,
        (None, true) => ExperimentConfig::desk(),
        (None, false) => ExperimentConfig::default(),
    };
    if let Some(p) = &cli.preset {
        cfg.hardware = ImpairmentLevel::preset(p)?;
    }
    if let Some(s) = cli.seed {
        cfg.system.seed = s;
    }
    if let Some(n) = cli.mc_samples {
        cfg.mc_samples = n;
    }
    if let Some(n) = cli.mm_iters {
        cfg.mm.max_iters = n;
    }
    if let Some(t) = cli.mm_tol {
        cfg.mm.eps = t;
    }
    if let Some(o) = &cli.output {
        cfg.output = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> lsfp_core::Result<()> {
    if let Some(path) = &cli.distortion_table {
        std::fs::write(path, distortion_table_csv(MAX_BITS)?)?;
        return Ok(());
    }
    let cfg = build_config(cli)?;
    let rows = run_experiment(&cfg)?;
    for r in &rows {
        println!("{:<5} {:<8} {:<9} sum SE {:8.4} bit/s/Hz  ({} MM iterations)", r.scheme, r.precoder, r.preset, r.sum_se, r.mm_iterations);
    }
    println!("wrote {}", cfg.output.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
