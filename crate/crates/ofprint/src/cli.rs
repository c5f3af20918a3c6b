//! Scan orchestration and the three commands behind the binary: `scan`,
//! `build-db` and `classify-capture`.
//!
//! Exit codes are a stable contract for scripting: 0 decided, 2 undecided,
//! 1 error.

use std::collections::BTreeSet;
use std::io::BufReader;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::fusion::{
    combine, FingerprintVerdict, Technique, TechniqueEvidence, CONFIDENCE_ARP, CONFIDENCE_LLDP,
    CONFIDENCE_PROCESSING, CONFIDENCE_TIMEOUT, RYU_ADVISORY_WEIGHT,
};
use crate::packet::{classify_capture, detect_arp_rebroadcast, dump};
use crate::signatures::{match_timeouts, DbError, ProcessingTimeRecord, SignatureDb};
use crate::simnet::{run_scenario, ScenarioConfig, ScenarioError};
use crate::timing::{
    ProbeSchedule, ProbeTrace, TimeoutEstimate, TimingError, TimingOptions, TimingSession,
};
use crate::transport::{ProbeTarget, ProbeTransport, TransportError};
use crate::units::Timeout;
use crate::wire::{ETHERTYPE_BDDP, ETHERTYPE_LLDP};

/// Environment variable consulted for the database path when `--db` is
/// not given.
pub const DB_ENV: &str = "OFPRINT_DB";

pub const EXIT_DECIDED: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_UNDECIDED: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Db(#[from] DbError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Timing(#[from] TimingError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("capture file: {0}")]
    Dump(#[from] dump::DumpError),
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

/// `--db` flag, then `$OFPRINT_DB`, then the embedded default database.
pub fn resolve_db(path: Option<&Path>) -> Result<SignatureDb, CliError> {
    match path {
        Some(p) => Ok(SignatureDb::load(p)?),
        None => match std::env::var_os(DB_ENV) {
            Some(p) => Ok(SignatureDb::load(PathBuf::from(p))?),
            None => Ok(SignatureDb::shipped()),
        },
    }
}

/// Everything a scan needs besides the transport: which techniques to
/// run, probing schedule, and matching tolerances.
#[derive(Debug, Clone)]
pub struct ScanConfig {
    pub techniques: BTreeSet<Technique>,
    pub schedule: ProbeSchedule,
    pub options: TimingOptions,
    pub capture_window: Duration,
    pub timeout_tolerance: Duration,
    pub processing_tolerance_ms: f64,
    /// Address that must be unassigned on the target segment.
    pub arp_probe_ip: Ipv4Addr,
    pub arp_attempts: u32,
    pub arp_window: Duration,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            techniques: Technique::SCAN_ORDER.into_iter().collect(),
            schedule: ProbeSchedule::default(),
            options: TimingOptions::default(),
            capture_window: Duration::from_secs(60),
            timeout_tolerance: Duration::from_secs(1),
            processing_tolerance_ms: 1.0,
            arp_probe_ip: Ipv4Addr::new(10, 0, 0, 250),
            arp_attempts: 3,
            arp_window: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct MeasuredValues {
    pub baseline_rtt_avg_ms: Option<f64>,
    pub baseline_rtt_std_ms: Option<f64>,
    pub timeout_estimate: Option<TimeoutEstimate>,
    pub adjusted_processing_ms: Option<f64>,
    pub arp_rebroadcast: Option<bool>,
}

#[derive(Debug)]
pub struct ScanOutcome {
    pub verdict: FingerprintVerdict,
    pub measured: MeasuredValues,
    pub trace: ProbeTrace,
}

/// Run the enabled techniques in fixed order (passive capture first, to
/// minimize footprint before any probe is sent), then fuse the evidence.
pub fn scan(
    transport: &mut dyn ProbeTransport,
    target: ProbeTarget,
    db: &SignatureDb,
    cfg: &ScanConfig,
) -> Result<ScanOutcome, CliError> {
    if cfg.techniques.is_empty() {
        return Err(CliError::Usage("no techniques enabled".into()));
    }
    let mut evidence = Vec::new();
    let mut measured = MeasuredValues::default();
    let mut trace = ProbeTrace::default();

    if cfg.techniques.contains(&Technique::Lldp) {
        let frames =
            transport.capture_frames(&[ETHERTYPE_LLDP, ETHERTYPE_BDDP], cfg.capture_window)?;
        let classification = classify_capture(&frames, db.signatures());
        let mut ev = TechniqueEvidence::empty(Technique::Lldp, CONFIDENCE_LLDP);
        let count = classification.candidates.len();
        for id in &classification.candidates {
            let mut score = 1.0 / count as f64;
            if id.as_str() == "ryu" {
                score *= RYU_ADVISORY_WEIGHT;
                ev.notes
                    .push("ryu discovery profile is advisory; down-weighted".into());
            }
            ev.candidates.insert(id.clone(), Some(score));
        }
        if frames.is_empty() {
            ev.notes.push("no discovery frames captured".into());
        }
        for group in &classification.groups {
            if group.low_confidence {
                ev.notes.push(format!(
                    "group with {} observation(s) matched at low confidence",
                    group.observations
                ));
            }
            for note in &group.notes {
                ev.notes.push(note.clone());
            }
            for m in &group.candidates {
                for line in &m.rationale {
                    ev.notes.push(format!("{}: {line}", m.id));
                }
            }
        }
        evidence.push(ev);
    }

    let wants_timeout = cfg.techniques.contains(&Technique::Timeout);
    let wants_processing = cfg.techniques.contains(&Technique::ProcessingTime);
    if wants_timeout || wants_processing {
        let mut session = TimingSession::new(transport, target, cfg.schedule, cfg.options);
        let baseline = session.measure_baseline()?;
        measured.baseline_rtt_avg_ms = Some(baseline.rtt_avg_ms);
        measured.baseline_rtt_std_ms = Some(baseline.rtt_std_ms);

        let mut measured_idle = None;
        if wants_timeout {
            let mut estimate = session.infer_idle_timeout(&baseline)?;
            let hard = session.infer_hard_timeout(&baseline, &estimate)?;
            estimate.hard_timeout = Some(hard);
            measured_idle = Some(estimate.idle_timeout);
            let set = match_timeouts(&estimate, db.signatures(), cfg.timeout_tolerance);
            let ev = TechniqueEvidence::uniform(Technique::Timeout, CONFIDENCE_TIMEOUT, set)
                .with_note(format!(
                    "measured idle {} / hard {} ({} probes)",
                    estimate.idle_timeout, hard, estimate.iterations
                ));
            measured.timeout_estimate = Some(estimate);
            evidence.push(ev);
        }

        if wants_processing {
            let idle = match measured_idle {
                Some(idle) => idle,
                // Spoofed misses need no idle estimate; without spoofing
                // the period has to outwait the idle timeout, so measure it.
                None if session.target.spoof_source.is_some() => Timeout::Infinite,
                None => session.infer_idle_timeout(&baseline)?.idle_timeout,
            };
            let (adjusted, matches) = session.fingerprint_by_processing_time(
                &baseline,
                idle,
                db.signatures(),
                cfg.processing_tolerance_ms,
            )?;
            measured.adjusted_processing_ms = Some(adjusted);
            let mut ev =
                TechniqueEvidence::empty(Technique::ProcessingTime, CONFIDENCE_PROCESSING)
                    .with_note(format!("measured adjusted processing time {adjusted:.3} ms"));
            let count = matches.len();
            for m in &matches {
                ev.candidates.insert(m.id.clone(), Some(1.0 / count as f64));
                let flag = if m.ambiguous { " (ambiguous)" } else { "" };
                ev.notes
                    .push(format!("{}: distance {:.3} ms{flag}", m.id, m.distance_ms));
            }
            evidence.push(ev);
        }
        trace = std::mem::take(&mut session.trace);
    }

    if cfg.techniques.contains(&Technique::Arp) {
        let mut detected = false;
        for _ in 0..cfg.arp_attempts.max(1) {
            let (info, frames) = transport.send_arp_probe(cfg.arp_probe_ip, cfg.arp_window)?;
            if detect_arp_rebroadcast(&frames, &info, None) {
                detected = true;
                break;
            }
        }
        measured.arp_rebroadcast = Some(detected);
        let mut ev = TechniqueEvidence::empty(Technique::Arp, CONFIDENCE_ARP);
        if detected {
            let rebroadcasters = db
                .signatures()
                .iter()
                .filter(|s| s.arp_rebroadcast)
                .map(|s| s.id.clone());
            ev = TechniqueEvidence::uniform(Technique::Arp, CONFIDENCE_ARP, rebroadcasters)
                .with_note("duplicate ARP request observed".to_string());
        } else {
            ev.notes.push("no duplicate ARP request observed".into());
        }
        evidence.push(ev);
    }

    let verdict = combine(&evidence, db.signatures());
    Ok(ScanOutcome {
        verdict,
        measured,
        trace,
    })
}

#[derive(Debug, Serialize)]
pub struct ScanReport {
    pub version: u32,
    pub target: String,
    pub seed: Option<u64>,
    pub techniques: Vec<String>,
    pub measured: MeasuredValues,
    pub verdict: FingerprintVerdict,
}

#[derive(Debug, Clone)]
pub struct ScanInvocation {
    pub db_path: Option<PathBuf>,
    pub sim: Option<String>,
    pub live: Option<String>,
    pub live_target: Option<Ipv4Addr>,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub config: ScanConfig,
}

pub fn cmd_scan(inv: &ScanInvocation) -> Result<i32, CliError> {
    let db = resolve_db(inv.db_path.as_deref())?;
    let (outcome, label, seed) = match (&inv.sim, &inv.live) {
        (Some(spec), None) => {
            let config = ScenarioConfig::from_spec(spec, &db)?;
            let mut transport = run_scenario(&config, inv.seed, &db)?;
            let target = transport.default_target();
            let outcome = scan(&mut transport, target, &db, &inv.config)?;
            (outcome, config.name.clone(), Some(inv.seed))
        }
        (None, Some(iface)) => {
            let outcome = scan_live(iface, inv.live_target, &db, &inv.config)?;
            (outcome, format!("live:{iface}"), None)
        }
        _ => {
            return Err(CliError::Usage(
                "exactly one of --sim <scenario> or --live <iface> is required".into(),
            ))
        }
    };

    let report = ScanReport {
        version: 1,
        target: label,
        seed,
        techniques: inv
            .config
            .techniques
            .iter()
            .map(|t| t.to_string())
            .collect(),
        measured: outcome.measured,
        verdict: outcome.verdict,
    };

    if let Some(out) = &inv.out {
        let mut text =
            serde_json::to_string_pretty(&report).expect("report serialization");
        text.push('\n');
        std::fs::write(out, text).map_err(|source| CliError::Io {
            path: out.display().to_string(),
            source,
        })?;
        let trace_path = out.with_extension("trace.jsonl");
        std::fs::write(&trace_path, outcome.trace.to_jsonl()).map_err(|source| CliError::Io {
            path: trace_path.display().to_string(),
            source,
        })?;
    }

    print_verdict(&report.verdict);
    Ok(if report.verdict.decided {
        EXIT_DECIDED
    } else {
        EXIT_UNDECIDED
    })
}

#[cfg(feature = "live")]
fn scan_live(
    iface: &str,
    live_target: Option<Ipv4Addr>,
    db: &SignatureDb,
    cfg: &ScanConfig,
) -> Result<ScanOutcome, CliError> {
    let destination = live_target.ok_or_else(|| {
        CliError::Usage("--live scans need --target <ipv4> for the probe destination".into())
    })?;
    let mut transport = crate::live::LiveTransport::open(iface)?;
    scan(&mut transport, ProbeTarget::new(destination), db, cfg)
}

#[cfg(not(feature = "live"))]
fn scan_live(
    _iface: &str,
    _live_target: Option<Ipv4Addr>,
    _db: &SignatureDb,
    _cfg: &ScanConfig,
) -> Result<ScanOutcome, CliError> {
    Err(CliError::Usage(
        "this build has no live backend; rebuild with --features live".into(),
    ))
}

fn print_verdict(verdict: &FingerprintVerdict) {
    if verdict.ranking.is_empty() {
        println!("verdict: no informative evidence");
        return;
    }
    println!("ranking:");
    for (i, c) in verdict.ranking.iter().take(3).enumerate() {
        println!("  {}. {} (score {:.4})", i + 1, c.id, c.score);
    }
    if verdict.decided {
        println!("decided: {}", verdict.ranking[0].id);
    } else {
        println!("undecided between the top candidates");
    }
}

#[derive(Debug, Clone)]
pub struct BuildDbInvocation {
    pub db_path: Option<PathBuf>,
    pub targets: Vec<String>,
    pub out: PathBuf,
    pub seed: u64,
    pub n: Option<u32>,
}

/// Measure a processing-time record per target and merge the records into
/// the output database, which is created from the reference database when
/// it does not exist yet. Targets that fail are reported and skipped.
pub fn cmd_build_db(inv: &BuildDbInvocation) -> Result<i32, CliError> {
    let reference = resolve_db(inv.db_path.as_deref())?;
    let mut base = if inv.out.exists() {
        SignatureDb::load(&inv.out)?.signatures().to_vec()
    } else {
        reference.signatures().to_vec()
    };
    let mut failures: Vec<(String, String)> = Vec::new();
    for spec in &inv.targets {
        match build_one(spec, &reference, inv.seed, inv.n) {
            Ok((name, record)) => match base.iter_mut().find(|s| s.id.as_str() == name) {
                Some(sig) => {
                    sig.processing = record;
                    println!(
                        "build-db: {name}: t_p {:.3} ms, adjusted {:.3} ms",
                        record.t_p_ms, record.t_p_adjusted_ms
                    );
                }
                None => failures.push((
                    spec.clone(),
                    format!("no signature entry named {name:?} to update"),
                )),
            },
            Err(e) => failures.push((spec.clone(), e.to_string())),
        }
    }
    let db = SignatureDb::from_signatures(base)?;
    db.save(&inv.out)?;
    for (target, error) in &failures {
        eprintln!("build-db: {target}: {error}");
    }
    Ok(if failures.is_empty() {
        EXIT_DECIDED
    } else {
        EXIT_ERROR
    })
}

fn build_one(
    spec: &str,
    reference: &SignatureDb,
    seed: u64,
    n_override: Option<u32>,
) -> Result<(String, ProcessingTimeRecord), CliError> {
    let config = ScenarioConfig::from_spec(spec, reference)?;
    let name = config.controller_name().to_string();
    let mut transport = run_scenario(&config, seed, reference)?;
    let target = transport.default_target();
    let mut schedule = ProbeSchedule::default();
    if let Some(n) = n_override {
        schedule.n = n;
    }
    let mut session =
        TimingSession::new(&mut transport, target, schedule, TimingOptions::default());
    let baseline = session.measure_baseline()?;
    let idle = session.infer_idle_timeout(&baseline)?;
    let record = session.build_processing_time_record(&baseline, idle.idle_timeout)?;
    Ok((name, record))
}

/// Offline LLDP classification of a saved capture.
pub fn cmd_classify_capture(capture: &Path, db_path: Option<&Path>) -> Result<i32, CliError> {
    let db = resolve_db(db_path)?;
    let file = std::fs::File::open(capture).map_err(|source| CliError::Io {
        path: capture.display().to_string(),
        source,
    })?;
    let frames = dump::read_capture(BufReader::new(file))?;
    let result = classify_capture(&frames, db.signatures());
    for (index, error) in &result.frame_errors {
        eprintln!("classify-capture: frame {index}: {error}");
    }
    for group in &result.groups {
        println!(
            "group chassis={} port={}: {} observation(s){}",
            hex::encode(&group.group.chassis_id),
            hex::encode(&group.group.port_id),
            group.observations,
            if group.low_confidence {
                " [low confidence]"
            } else {
                ""
            }
        );
        if let Some(interval) = &group.interval {
            println!(
                "  interval: mean {:.3} s, std {:.3} s over {} gaps",
                interval.mean.as_secs_f64(),
                interval.std.as_secs_f64(),
                interval.count
            );
        }
        if let Some(gap) = group.single_gap_s {
            println!("  single gap: {gap:.3} s");
        }
        for note in &group.notes {
            println!("  note: {note}");
        }
        for m in &group.candidates {
            println!("  candidate: {}", m.id);
            for line in &m.rationale {
                println!("    - {line}");
            }
        }
    }
    let overall: Vec<String> = result.candidates.iter().map(|c| c.to_string()).collect();
    println!("candidates: {}", overall.join(", "));
    Ok(if result.candidates.len() == 1 {
        EXIT_DECIDED
    } else {
        EXIT_UNDECIDED
    })
}
