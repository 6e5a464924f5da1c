use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use noma_ad::config::{DetectorKind, ExperimentConfig};
use noma_ad::error::Error;
use noma_ad::experiment::{
    cmd_gen_data, cmd_sweep_activity, cmd_sweep_snr, cmd_table_metrics, cmd_threshold_analysis, cmd_train,
    write_effective_config, SweepRow, TrainOptions, CONVEXITY_TOL,
};

#[derive(Parser)]
#[command(name = "noma-ad", version, about = "Activity detection experiments for grant-free NOMA uplinks")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Comma-separated detectors: threshold, omp, amp, cnn, oracle.
    #[arg(long, global = true, value_delimiter = ',')]
    detectors: Option<Vec<DetectorKind>>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate frames and store decorrelated tensors with labels.
    GenData,
    /// Train the activity-detection network on the generated dataset.
    Train {
        /// Continue from the saved training state.
        #[arg(long)]
        resume: bool,
        /// Pause after this many epochs.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Metrics versus SNR.
    SweepSnr,
    /// Metrics versus the true activity rate.
    SweepActivity,
    /// Analytic versus simulated threshold-detector error rates.
    ThresholdAnalysis,
    /// Per-device precision, recall and F1.
    TableMetrics,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidParameter { .. } | Error::FingerprintMismatch { .. } => 2,
        Error::Divergence { .. } => 3,
        _ => 1,
    }
}

fn print_rows(rows: &[SweepRow]) {
    println!("{:>8} {:>6} {:>10} {:>10} {:>10} {:>8}", "gamma_db", "pa", "detector", "aer", "ber", "f1");
    for r in rows {
        let pa = r.pa.map_or("prior".to_owned(), |p| format!("{p}"));
        let ber = r.ber.map_or("n/a".to_owned(), |b| format!("{b:.3e}"));
        println!(
            "{:>8} {:>6} {:>10} {:>10.3e} {:>10} {:>8.4}",
            r.gamma_db, pa, r.detector, r.aer, ber, r.f1
        );
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let Common {
        config,
        seed,
        out,
        workers,
        detectors,
    } = cli.common;
    if let Some(n) = workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }
    let base = match &config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let cfg = base.with_overrides(seed, out, detectors)?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::Io {
        path: cfg.output_dir.clone(),
        source: e,
    })?;
    write_effective_config(&cfg)?;
    println!("config hash {}", cfg.config_hash());
    match cli.command {
        Command::GenData => {
            let s = cmd_gen_data(&cfg)?;
            println!(
                "{} samples in {} shards ({} generated, {} reused), {:.1} MiB",
                s.samples,
                s.shards,
                s.generated_shards,
                s.reused_shards,
                s.estimated_bytes as f64 / (1 << 20) as f64
            );
        }
        Command::Train { resume, stop_after } => {
            let s = cmd_train(&cfg, TrainOptions { resume, stop_after })?;
            println!(
                "{} epochs run, best epoch {}, {}",
                s.epochs_this_run,
                s.best_epoch,
                if s.completed { "finished" } else { "paused (rerun with --resume)" }
            );
            if let Some(a) = s.test_aer {
                println!("test AER {a:.5}");
            }
        }
        Command::SweepSnr => print_rows(&cmd_sweep_snr(&cfg)?),
        Command::SweepActivity => print_rows(&cmd_sweep_activity(&cfg)?),
        Command::ThresholdAnalysis => {
            let s = cmd_threshold_analysis(&cfg)?;
            for r in &s.reports {
                println!(
                    "K={} gamma={} dB: empirical {:.4e}, analytic {:.4e}, z {:+.2}, rel {:.3}",
                    r.devices,
                    r.snr_db,
                    r.pe_empirical,
                    r.pe_analytic,
                    r.z_score(),
                    r.relative_error()
                );
                if let (Some(p), Some(z)) = (r.pe_mixture, r.mixture_z_score()) {
                    println!("    exact interference mixture {p:.4e}, z {z:+.2}");
                }
            }
            let convex = s.draws.iter().filter(|d| d.min_second_diff >= -CONVEXITY_TOL).count();
            let worst_gap = s.draws.iter().map(|d| d.argmin_gap).fold(0.0, f64::max);
            println!(
                "{} of {} draws convex on the grid, largest closed-form gap {:.2e} mu",
                convex,
                s.draws.len(),
                worst_gap
            );
        }
        Command::TableMetrics => {
            let s = cmd_table_metrics(&cfg)?;
            println!("{:>10} {:>6} {:>8} {:>8} {:>8}", "detector", "device", "prec", "recall", "f1");
            for r in &s.rows {
                println!(
                    "{:>10} {:>6} {:>8.4} {:>8.4} {:>8.4}",
                    r.detector, r.device, r.precision, r.recall, r.f1
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
