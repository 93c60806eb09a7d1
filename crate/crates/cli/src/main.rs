use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use splitloc::config::{ConfigError, RunConfig};
use splitloc::link::{serve_rsu, vehicle_client, RsuConfig, VehicleOptions};
use splitloc::runner::{
    bandit_eval, read_report, recompute_summary, run_simulation, sweep_latency, write_outputs,
    RunError,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Latency-aware pose fusion with split-point selection.
#[derive(Parser)]
#[command(name = "splitloc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write report.json, trace.csv and events.csv.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fused-error distribution per constant latency.
    SweepLatency {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated latencies in ms.
        #[arg(long, value_delimiter = ',', default_values_t = [200.0, 1000.0, 5000.0, 25000.0])]
        buckets: Vec<f64>,
        /// Seeds 0..N.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convergence and readaptation of the split bandit over seeds.
    BanditEval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Rounds per readaptation block; defaults to the bandit window.
        #[arg(long)]
        block: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a report's summary and check it against its rows.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
    /// Serve split-inference requests.
    LiveRsu {
        #[arg(long)]
        listen: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the fusion loop in real time against an RSU.
    LiveVehicle {
        #[arg(long)]
        rsu: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(path: Option<&Path>) -> Result<RunConfig, ConfigError> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), value)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = run_simulation(&cfg)?;
            write_outputs(&report, &out)?;
            println!("{}", serde_json::to_string_pretty(&report.summary.totals)?);
            if let Some(r) = report.summary.reductions {
                println!("{}", serde_json::to_string_pretty(&r.rounded())?);
            }
        }
        Command::SweepLatency {
            config,
            buckets,
            seeds,
            out,
        } => {
            let cfg = load(config.as_deref())?;
            let seeds: Vec<u64> = (0..seeds).collect();
            let sweep = sweep_latency(&cfg, &buckets, &seeds)?;
            for b in &sweep.buckets {
                println!(
                    "{:>9.1} ms  median {:.4}  iqr [{:.4}, {:.4}]  vo {:.4}",
                    b.latency_ms, b.median, b.q1, b.q3, b.vo_median
                );
            }
            write_json(&out, &sweep)?;
        }
        Command::BanditEval {
            config,
            seeds,
            block,
            out,
        } => {
            let cfg = load(config.as_deref())?;
            let block = block.or(cfg.bandit.window_w.0).unwrap_or(200);
            let seeds: Vec<u64> = (0..seeds).collect();
            let eval = bandit_eval(&cfg, &seeds, block)?;
            if eval.degenerate_schedule {
                log::warn!("every segment has the same optimal split");
            }
            for s in &eval.seeds {
                println!(
                    "seed {:>3}  changes {:?}  delay {:?}  readapt {:?}",
                    s.seed, s.change_ticks, s.detection_delay_arrivals, s.readaptation_rounds
                );
            }
            write_json(&out, &eval)?;
        }
        Command::Report { input } => {
            let report = read_report(&input)?;
            let fresh = recompute_summary(&report);
            println!("{}", serde_json::to_string_pretty(&report.summary)?);
            if fresh != report.summary {
                bail!("summary does not match the recorded rows and events");
            }
        }
        Command::LiveRsu { listen, config } => {
            let cfg = load(config.as_deref())?;
            let rsu = RsuConfig::from_run_config(&cfg)?;
            info!("serving {} splits on {listen}", rsu.splits.len());
            serve_rsu(&listen, rsu)?;
        }
        Command::LiveVehicle { rsu, config, out } => {
            let cfg = load(config.as_deref())?;
            let run = vehicle_client(rsu.as_str(), &cfg, &VehicleOptions::default())?;
            write_outputs(&run.report, &out)?;
            write_json(&out.join("live_stats.json"), &run.stats)?;
            println!(
                "{} ticks, {} arrivals, max tick jitter {:.2} ms",
                run.report.rows.len(),
                run.report.summary.arrivals,
                run.stats.max_interval_jitter_ms
            );
        }
    }
    Ok(())
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.downcast_ref::<ConfigError>().is_some()
        || e.downcast_ref::<RunError>()
            .is_some_and(RunError::is_config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_config_error(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
