use std::collections::BTreeSet;
use std::net::Ipv4Addr;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Parser, Subcommand};

use ofprint::cli::{
    cmd_build_db, cmd_classify_capture, cmd_scan, BuildDbInvocation, CliError, ScanConfig,
    ScanInvocation, EXIT_ERROR,
};
use ofprint::fusion::Technique;
use ofprint::units::parse_duration;

#[derive(Parser)]
#[command(
    name = "ofprint",
    version,
    about = "Fingerprint the OpenFlow controller behind an SDN data plane"
)]
struct Cli {
    /// Signature database (default: $OFPRINT_DB, then the built-in set).
    #[arg(long, global = true)]
    db: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run fingerprinting techniques against a target and fuse the evidence.
    ///
    /// Exits 0 when the verdict is decided, 2 when undecided, 1 on error.
    Scan {
        /// Simulated target: <controller>[:default|noisy|minimal] or a scenario file.
        #[arg(long, conflicts_with = "live")]
        sim: Option<String>,
        /// Live interface to scan from (build with --features live).
        #[arg(long)]
        live: Option<String>,
        /// Probe destination for --live scans.
        #[arg(long)]
        target: Option<Ipv4Addr>,
        /// Simulation seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated subset of techniques: lldp,timeout,processing-time,arp.
        #[arg(long, value_delimiter = ',', conflicts_with = "all")]
        only: Vec<String>,
        /// Run every technique.
        #[arg(long)]
        all: bool,
        /// Write a JSON report (and a .trace.jsonl probe log) here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Baseline sample count.
        #[arg(long)]
        n: Option<u32>,
        /// Fingerprint (miss) sample count.
        #[arg(long)]
        m: Option<u32>,
        /// Wait increment, with unit suffix (e.g. 5ms).
        #[arg(long, value_parser = parse_duration_arg)]
        step: Option<Duration>,
        /// Gap between forced misses, with unit suffix (e.g. 11s).
        #[arg(long, value_parser = parse_duration_arg)]
        period: Option<Duration>,
        /// Wait beyond which the idle timeout counts as infinite.
        #[arg(long = "wait-cap", value_parser = parse_duration_arg)]
        wait_cap: Option<Duration>,
        /// Passive LLDP capture window.
        #[arg(long = "capture-window", value_parser = parse_duration_arg)]
        capture_window: Option<Duration>,
    },
    /// Measure processing times for known controllers and merge them into
    /// a database file.
    BuildDb {
        /// Scenario specs or files, one per controller to measure.
        #[arg(required = true)]
        targets: Vec<String>,
        /// Database file to write (merged with its current content).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Probe count per target.
        #[arg(long)]
        n: Option<u32>,
    },
    /// Classify a saved LLDP capture offline (lines of `<timestamp_us> <hex>`).
    ClassifyCapture { capture: PathBuf },
}

fn parse_duration_arg(s: &str) -> Result<Duration, String> {
    parse_duration(s)
}

fn parse_techniques(only: &[String], all: bool) -> Result<BTreeSet<Technique>, CliError> {
    if all || only.is_empty() {
        if !all && only.is_empty() {
            return Err(CliError::Usage(
                "select techniques with --all or --only <technique,...>".into(),
            ));
        }
        return Ok(Technique::SCAN_ORDER.into_iter().collect());
    }
    let mut set = BTreeSet::new();
    for name in only {
        set.insert(name.parse::<Technique>().map_err(CliError::Usage)?);
    }
    Ok(set)
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Scan {
            sim,
            live,
            target,
            seed,
            only,
            all,
            out,
            n,
            m,
            step,
            period,
            wait_cap,
            capture_window,
        } => {
            let mut config = ScanConfig {
                techniques: parse_techniques(&only, all)?,
                ..ScanConfig::default()
            };
            if let Some(n) = n {
                config.schedule.n = n;
            }
            if let Some(m) = m {
                config.schedule.m = m;
            }
            if let Some(step) = step {
                config.schedule.step = step;
            }
            if let Some(period) = period {
                config.schedule.period = Some(period);
            }
            if let Some(cap) = wait_cap {
                config.schedule.wait_cap = cap;
            }
            if let Some(window) = capture_window {
                config.capture_window = window;
            }
            cmd_scan(&ScanInvocation {
                db_path: cli.db,
                sim,
                live,
                live_target: target,
                seed,
                out,
                config,
            })
        }
        Command::BuildDb {
            targets,
            out,
            seed,
            n,
        } => cmd_build_db(&BuildDbInvocation {
            db_path: cli.db,
            targets,
            out,
            seed,
            n,
        }),
        Command::ClassifyCapture { capture } => {
            cmd_classify_capture(&capture, cli.db.as_deref())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("ofprint: {e}");
            EXIT_ERROR
        }
    };
    std::process::exit(code);
}
