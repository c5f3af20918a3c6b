//! RTT-based inference: baseline measurement, idle/hard timeout recovery,
//! processing-time database construction and processing-time
//! fingerprinting, plus the flow-entry-presence decision rule that all of
//! them share.

use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::signatures::{
    match_processing_time, ControllerSignature, ProcessingMatch, ProcessingTimeRecord,
};
use crate::transport::{ProbeTarget, ProbeTransport, RttSample, TransportError};
use crate::units::{duration_from_millis, Timeout, Timestamp};

#[derive(Debug, Error)]
pub enum TimingError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("insufficient samples: {got} usable of {requested} requested (need {need})")]
    InsufficientSamples {
        got: usize,
        need: usize,
        requested: u32,
    },
    #[error("probe lost {attempts} times in a row")]
    ProbeLoss { attempts: u32 },
    #[error("inconsistent environment: presence flipped {flips} times")]
    InconsistentEnvironment { flips: u32 },
    #[error("period {period:?} does not exceed the idle timeout {idle:?}")]
    PeriodTooSmall { period: Duration, idle: Duration },
    #[error("cannot force table misses: no spoofable source and no finite idle timeout")]
    CannotForceMiss,
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

/// Probe counts and pacing for one scan session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSchedule {
    /// Baseline sample count.
    pub n: u32,
    /// Fingerprint (miss) sample count.
    pub m: u32,
    pub wait_initial: Duration,
    pub step: Duration,
    /// Give up and call the idle timeout infinite beyond this wait.
    pub wait_cap: Duration,
    /// Gap between forced misses; `None` derives idle + 1 s.
    pub period: Option<Duration>,
}

impl Default for ProbeSchedule {
    fn default() -> Self {
        ProbeSchedule {
            n: 100,
            m: 20,
            wait_initial: Duration::from_secs(1),
            step: Duration::from_millis(5),
            wait_cap: Duration::from_secs(360),
            period: None,
        }
    }
}

impl ProbeSchedule {
    pub fn validate(&self) -> Result<(), TimingError> {
        if self.step.is_zero() {
            return Err(TimingError::InvalidSchedule("step must be positive".into()));
        }
        if self.wait_cap <= self.wait_initial {
            return Err(TimingError::InvalidSchedule(
                "wait_cap must exceed wait_initial".into(),
            ));
        }
        if self.n < 3 {
            return Err(TimingError::InvalidSchedule(
                "baseline needs at least 3 samples".into(),
            ));
        }
        if self.m < 1 {
            return Err(TimingError::InvalidSchedule(
                "fingerprinting needs at least 1 sample".into(),
            ));
        }
        Ok(())
    }
}

/// Formalization of the "measured RTT is close to the baseline" test: the
/// entry is present if the probe lies within `k` baseline deviations, with
/// an absolute floor for jitter-free environments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresenceRule {
    pub k: f64,
    pub floor_ms: f64,
}

impl Default for PresenceRule {
    fn default() -> Self {
        PresenceRule {
            k: 4.0,
            floor_ms: 0.5,
        }
    }
}

/// Knobs that are policy rather than schedule: retry budget, confirmation
/// behavior, caps and refinement resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingOptions {
    pub presence: PresenceRule,
    /// A lost probe is retried this many times before the session errors.
    pub retries: u32,
    /// Presence may flip (miss later contradicted) at most this often.
    pub flip_budget: u32,
    /// Accumulated keep-alive time after which the hard timeout is called
    /// infinite.
    pub hard_cap: Duration,
    /// Binary-search refinement resolution; `None` disables refinement.
    pub resolution: Option<Duration>,
    pub baseline_gap: Duration,
    /// Keep-alive wait for hard-timeout measurement; `None` derives idle/2.
    pub keepalive: Option<Duration>,
    /// Gap between spoofed miss probes.
    pub miss_gap: Duration,
}

impl Default for TimingOptions {
    fn default() -> Self {
        TimingOptions {
            presence: PresenceRule::default(),
            retries: 3,
            flip_budget: 8,
            hard_cap: Duration::from_secs(120),
            resolution: Some(Duration::from_millis(1)),
            baseline_gap: Duration::from_millis(100),
            keepalive: None,
            miss_gap: Duration::from_secs(1),
        }
    }
}

/// Baseline RTT statistics with a matching flow entry installed.
#[derive(Debug, Clone, PartialEq)]
pub struct RttStats {
    pub samples: Vec<RttSample>,
    pub rtt_avg_ms: f64,
    pub rtt_std_ms: f64,
    /// Samples requested, lost ones included.
    pub n: u32,
}

impl RttStats {
    pub fn from_samples(samples: Vec<RttSample>, requested: u32) -> Result<Self, TimingError> {
        let usable: Vec<f64> = samples.iter().filter_map(|s| s.rtt_ms).collect();
        let need = 3usize.max((0.8 * requested as f64).ceil() as usize);
        if usable.len() < need {
            return Err(TimingError::InsufficientSamples {
                got: usable.len(),
                need,
                requested,
            });
        }
        let rtt_avg_ms = usable.iter().sum::<f64>() / usable.len() as f64;
        let var = usable
            .iter()
            .map(|r| (r - rtt_avg_ms).powi(2))
            .sum::<f64>()
            / (usable.len() - 1) as f64;
        Ok(RttStats {
            samples,
            rtt_avg_ms,
            rtt_std_ms: var.sqrt(),
            n: requested,
        })
    }
}

/// Flow entry still present? True iff the probe RTT is within the
/// baseline envelope.
pub fn entry_present(t_ping_ms: f64, baseline: &RttStats, rule: &PresenceRule) -> bool {
    let threshold = (rule.k * baseline.rtt_std_ms).max(rule.floor_ms);
    t_ping_ms <= baseline.rtt_avg_ms + threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeoutEstimate {
    #[serde(rename = "idle_timeout_s")]
    pub idle_timeout: Timeout,
    #[serde(rename = "hard_timeout_s")]
    pub hard_timeout: Option<Timeout>,
    pub iterations: u32,
    #[serde(serialize_with = "ser_secs")]
    pub resolution: Duration,
}

fn ser_secs<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Arm,
    Baseline,
    IdleTrial,
    Confirm,
    Refine,
    Keepalive,
    Miss,
}

/// One line per probe: what was waited, what came back, what was decided.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRecord {
    pub seq: u32,
    pub phase: Phase,
    pub wait_s: Option<f64>,
    pub rtt_ms: Option<f64>,
    pub present: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProbeTrace {
    records: Vec<ProbeRecord>,
}

impl ProbeTrace {
    pub fn records(&self) -> &[ProbeRecord] {
        &self.records
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("probe record serialization"));
            out.push('\n');
        }
        out
    }
}

/// One timing-inference session against one target. Owns pacing state so
/// that waits are measured from the moment the flow entry was (re)armed,
/// not from whenever the previous call returned.
pub struct TimingSession<'t> {
    transport: &'t mut dyn ProbeTransport,
    pub target: ProbeTarget,
    pub schedule: ProbeSchedule,
    pub options: TimingOptions,
    pub trace: ProbeTrace,
    seq: u32,
    /// Estimated moment the entry was last refreshed or installed.
    origin: Option<Timestamp>,
    /// True while no probe has hit since the entry was (re)installed.
    fresh_entry: bool,
    /// Best estimate of when the current entry was installed. The session
    /// installed it in the first place, so this stays meaningful even when
    /// the entry cannot be cycled.
    install_anchor: Option<Timestamp>,
}

/// Result of one presence trial, with the entry state it ran against.
/// A miss on an aged entry can be plain hard-timeout expiry; a miss on a
/// fresh entry that a confirmation then contradicts is real noise.
#[derive(Debug, Clone, Copy)]
struct TrialOutcome {
    present: bool,
    on_fresh_entry: bool,
    /// The probe needed retries. A lost attempt may still have reached the
    /// switch and reinstalled the entry, so timing anchored on the entry's
    /// install moment cannot be trusted across a lossy probe.
    lossy: bool,
}

impl<'t> TimingSession<'t> {
    pub fn new(
        transport: &'t mut dyn ProbeTransport,
        target: ProbeTarget,
        schedule: ProbeSchedule,
        options: TimingOptions,
    ) -> Self {
        TimingSession {
            transport,
            target,
            schedule,
            options,
            trace: ProbeTrace::default(),
            seq: 0,
            origin: None,
            fresh_entry: true,
            install_anchor: None,
        }
    }

    fn record(&mut self, phase: Phase, wait: Option<Duration>, sample: &RttSample, present: Option<bool>) {
        self.seq += 1;
        self.trace.records.push(ProbeRecord {
            seq: self.seq,
            phase,
            wait_s: wait.map(|w| w.as_secs_f64()),
            rtt_ms: sample.rtt_ms,
            present,
        });
    }

    fn send_raw(&mut self, spoof: bool) -> Result<RttSample, TimingError> {
        let target = if spoof { self.target } else { self.target.plain() };
        Ok(self.transport.send_probe(&target)?)
    }

    /// Send until a reply comes back, up to the retry budget. The flag
    /// reports whether any attempt was lost on the way.
    fn send_reliable(
        &mut self,
        spoof: bool,
        phase: Phase,
        wait: Option<Duration>,
    ) -> Result<(RttSample, bool), TimingError> {
        let attempts = 1 + self.options.retries;
        for attempt in 0..attempts {
            let sample = self.send_raw(spoof)?;
            self.record(phase, wait, &sample, None);
            if !sample.lost() {
                return Ok((sample, attempt > 0));
            }
        }
        Err(TimingError::ProbeLoss { attempts })
    }

    /// Send a probe, classify presence, and re-anchor the pacing origin.
    /// A hit refreshed the entry around the send; a miss reinstalled it
    /// one controller round later, which the measured excess estimates.
    fn trial(
        &mut self,
        wait: Duration,
        baseline: &RttStats,
        phase: Phase,
    ) -> Result<TrialOutcome, TimingError> {
        if let Some(origin) = self.origin {
            let due = origin + wait;
            let now = self.transport.now();
            if due > now {
                self.transport.wait(due - now);
            }
        }
        let (sample, lossy) = self.send_reliable(false, phase, Some(wait))?;
        let rtt = sample.rtt_ms.expect("send_reliable returns replies");
        let present = entry_present(rtt, baseline, &self.options.presence);
        if let Some(last) = self.trace.records.last_mut() {
            last.present = Some(present);
        }
        let excess = (rtt - baseline.rtt_avg_ms).max(0.0);
        self.origin = Some(if present {
            sample.sent_at
        } else {
            sample.sent_at + duration_from_millis(excess)
        });
        let on_fresh_entry = self.fresh_entry;
        self.fresh_entry = !present;
        if !present {
            self.install_anchor = self.origin;
        }
        Ok(TrialOutcome {
            present,
            on_fresh_entry,
            lossy,
        })
    }

    /// Install (or refresh) the flow entry and anchor pacing on it.
    /// Returns whether any probe on the way was lost.
    fn arm(&mut self, baseline: Option<&RttStats>) -> Result<bool, TimingError> {
        let (sample, lossy) = self.send_reliable(false, Phase::Arm, None)?;
        let rtt = sample.rtt_ms.expect("send_reliable returns replies");
        let excess = match baseline {
            Some(b) => (rtt - b.rtt_avg_ms).max(0.0),
            None => 0.0,
        };
        self.origin = Some(sample.sent_at + duration_from_millis(excess));
        // A miss means this very probe installed the entry; without a
        // baseline this is the session's first contact, so the table held
        // nothing matching either way.
        let installed_now = match baseline {
            Some(b) => !entry_present(rtt, b, &self.options.presence),
            None => true,
        };
        if installed_now {
            self.fresh_entry = true;
            self.install_anchor = self.origin;
        }
        Ok(lossy)
    }

    /// First probe installs the flow entry and is excluded from the
    /// statistics; the next `n` probes are summarized.
    pub fn measure_baseline(&mut self) -> Result<RttStats, TimingError> {
        self.schedule.validate()?;
        self.arm(None)?;
        let mut samples = Vec::with_capacity(self.schedule.n as usize);
        for _ in 0..self.schedule.n {
            self.transport.wait(self.options.baseline_gap);
            let sample = self.send_raw(false)?;
            self.record(Phase::Baseline, None, &sample, None);
            if !sample.lost() {
                self.origin = Some(sample.sent_at);
            }
            samples.push(sample);
        }
        RttStats::from_samples(samples, self.schedule.n)
    }

    /// Walk the inter-probe wait upward until the entry stops surviving
    /// it. A detected expiry is confirmed with a second independent trial
    /// at the same wait before it is believed; refinement then narrows the
    /// bracket by binary search.
    pub fn infer_idle_timeout(&mut self, baseline: &RttStats) -> Result<TimeoutEstimate, TimingError> {
        self.schedule.validate()?;
        let step = self.schedule.step;
        self.arm(Some(baseline))?;
        let mut wait = self.schedule.wait_initial;
        let mut iterations = 0u32;
        let mut flips = 0u32;
        // A contradicted miss on a fresh entry is genuine noise and counts
        // against the budget. A contradicted miss on an aged entry is what
        // hard-timeout expiry looks like from here, so the walk absorbs it.
        let budget = self.options.flip_budget;
        let note_flip = |flips: &mut u32, counted: bool| -> Result<(), TimingError> {
            if counted {
                *flips += 1;
                if *flips > budget {
                    return Err(TimingError::InconsistentEnvironment { flips: *flips });
                }
            }
            Ok(())
        };
        loop {
            if wait > self.schedule.wait_cap {
                return Ok(TimeoutEstimate {
                    idle_timeout: Timeout::Infinite,
                    hard_timeout: None,
                    iterations,
                    resolution: step,
                });
            }
            iterations += 1;
            let outcome = self.trial(wait, baseline, Phase::IdleTrial)?;
            if outcome.present {
                wait += step;
                continue;
            }
            // Candidate expiry. The miss itself reinstalled the entry, so
            // an immediate retrial at the same wait is independent.
            iterations += 1;
            if self.confirm_expiry(wait, baseline, &mut iterations)?.present {
                note_flip(&mut flips, outcome.on_fresh_entry)?;
                wait += step;
                continue;
            }
            let mut hi = wait;
            let mut resolution = step;
            if let Some(res) = self.options.resolution {
                if wait > self.schedule.wait_initial && res < step {
                    let mut lo = wait - step;
                    while hi - lo > res {
                        let mid = lo + (hi - lo) / 2;
                        iterations += 1;
                        let outcome = self.trial(mid, baseline, Phase::Refine)?;
                        if outcome.present {
                            lo = mid;
                            continue;
                        }
                        iterations += 1;
                        if self.confirm_expiry(mid, baseline, &mut iterations)?.present {
                            note_flip(&mut flips, outcome.on_fresh_entry)?;
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    resolution = hi - lo;
                }
            }
            return Ok(TimeoutEstimate {
                idle_timeout: Timeout::Finite(hi),
                hard_timeout: None,
                iterations,
                resolution,
            });
        }
    }

    /// A miss only counts as confirmed when the confirming probe ran
    /// clean: a retried probe waited longer than asked and can fake an
    /// expiry.
    fn confirm_expiry(
        &mut self,
        wait: Duration,
        baseline: &RttStats,
        iterations: &mut u32,
    ) -> Result<TrialOutcome, TimingError> {
        let mut outcome = self.trial(wait, baseline, Phase::Confirm)?;
        let mut attempts = 0;
        while !outcome.present && outcome.lossy && attempts < self.options.retries {
            attempts += 1;
            *iterations += 1;
            outcome = self.trial(wait, baseline, Phase::Confirm)?;
        }
        Ok(outcome)
    }

    /// Keep the entry busy with sub-idle probes and accumulate how long it
    /// survives anyway. Beyond the cap the hard timeout is called infinite.
    pub fn infer_hard_timeout(
        &mut self,
        baseline: &RttStats,
        idle: &TimeoutEstimate,
    ) -> Result<Timeout, TimingError> {
        let wait = match (self.options.keepalive, idle.idle_timeout) {
            (Some(w), _) => w,
            (None, Timeout::Finite(t)) => t / 2,
            (None, Timeout::Infinite) => Duration::from_secs(5),
        };
        if let Timeout::Finite(t) = idle.idle_timeout {
            if t <= self.schedule.step * 2 {
                return Err(TimingError::InvalidSchedule(format!(
                    "idle timeout {t:?} too small to keep alive reliably"
                )));
            }
            if wait >= t {
                return Err(TimingError::InvalidSchedule(format!(
                    "keep-alive wait {wait:?} must stay below the idle timeout {t:?}"
                )));
            }
        }
        // Pace so the whole round trip lands inside the window: the reply
        // rides its own flow entry, which expires on the same hard clock,
        // and a probe straddling the deadline would read as a miss one
        // keep-alive early.
        let pacing = wait
            .saturating_sub(duration_from_millis(baseline.rtt_avg_ms))
            .max(Duration::from_millis(1));
        // A lost probe may still have reached the switch and reset the
        // hard clock without us seeing it, so any lossy keep-alive voids
        // the accumulation and the measurement starts over.
        let mut restarts = 0u32;
        'measurement: loop {
            // The hard clock runs from installation, so measure against a
            // fresh entry: outwait a finite idle timeout and let the
            // arming probe reinstall. An infinite idle timeout cannot be
            // cycled; credit the time the entry has already survived.
            let mut accumulated = Duration::ZERO;
            let restartable = match idle.idle_timeout {
                Timeout::Finite(t) => {
                    self.transport.wait(t + Duration::from_secs(1));
                    self.arm(Some(baseline))?;
                    true
                }
                Timeout::Infinite => {
                    self.arm(Some(baseline))?;
                    if let Some(anchor) = self.install_anchor {
                        accumulated = self.transport.now() - anchor;
                    }
                    false
                }
            };
            loop {
                if accumulated >= self.options.hard_cap {
                    return Ok(Timeout::Infinite);
                }
                let outcome = self.trial(pacing, baseline, Phase::Keepalive)?;
                if outcome.lossy && restartable {
                    restarts += 1;
                    if restarts > 10 {
                        return Err(TimingError::InconsistentEnvironment { flips: restarts });
                    }
                    continue 'measurement;
                }
                if outcome.present {
                    accumulated += wait;
                } else {
                    return Ok(Timeout::Finite(accumulated));
                }
            }
        }
    }

    /// How the session can force table misses for processing-time probes.
    fn miss_probe_plan(&self, idle: Timeout, prefer_spoof: bool) -> Result<MissPlan, TimingError> {
        if prefer_spoof && self.target.spoof_source.is_some() {
            return Ok(MissPlan::Spoof);
        }
        match idle {
            Timeout::Finite(t) => {
                let period = self
                    .schedule
                    .period
                    .unwrap_or(t + Duration::from_secs(1));
                if period <= t {
                    return Err(TimingError::PeriodTooSmall { period, idle: t });
                }
                Ok(MissPlan::Period(period))
            }
            Timeout::Infinite => {
                if self.target.spoof_source.is_some() {
                    Ok(MissPlan::Spoof)
                } else {
                    Err(TimingError::CannotForceMiss)
                }
            }
        }
    }

    fn collect_miss_rtts(&mut self, plan: MissPlan, count: u32) -> Result<Vec<f64>, TimingError> {
        let mut rtts = Vec::with_capacity(count as usize);
        match plan {
            MissPlan::Spoof => {
                for _ in 0..count {
                    self.transport.wait(self.options.miss_gap);
                    let (sample, _) = self.send_reliable(true, Phase::Miss, None)?;
                    rtts.push(sample.rtt_ms.expect("send_reliable returns replies"));
                }
            }
            MissPlan::Period(period) => {
                self.arm(None)?;
                for _ in 0..count {
                    if let Some(origin) = self.origin {
                        let due = origin + period;
                        let now = self.transport.now();
                        if due > now {
                            self.transport.wait(due - now);
                        }
                    }
                    let (sample, _) = self.send_reliable(false, Phase::Miss, None)?;
                    let rtt = sample.rtt_ms.expect("send_reliable returns replies");
                    rtts.push(rtt);
                    self.origin = Some(sample.sent_at);
                }
            }
        }
        Ok(rtts)
    }

    /// Every probe is a table miss, so their mean carries one controller
    /// round trip; subtracting the hit baseline isolates it.
    pub fn build_processing_time_record(
        &mut self,
        baseline: &RttStats,
        idle: Timeout,
    ) -> Result<ProcessingTimeRecord, TimingError> {
        // The construction procedure prefers period-spaced misses; spoofing
        // is the fallback when the idle timeout cannot be outwaited.
        let plan = self.miss_probe_plan(idle, false)?;
        let rtts = self.collect_miss_rtts(plan, self.schedule.n)?;
        let t_pavg = rtts.iter().sum::<f64>() / rtts.len() as f64;
        let adjusted = (t_pavg - baseline.rtt_avg_ms).clamp(0.0, t_pavg);
        Ok(ProcessingTimeRecord::new(t_pavg, adjusted).expect("clamped to invariants"))
    }

    /// Measure the adjusted processing time with `m` forced misses and
    /// rank the database against it.
    pub fn fingerprint_by_processing_time(
        &mut self,
        baseline: &RttStats,
        idle: Timeout,
        db: &[ControllerSignature],
        tolerance_ms: f64,
    ) -> Result<(f64, Vec<ProcessingMatch>), TimingError> {
        let plan = self.miss_probe_plan(idle, true)?;
        let rtts = self.collect_miss_rtts(plan, self.schedule.m)?;
        let rtt_prime = rtts.iter().sum::<f64>() / rtts.len() as f64;
        let measured = (rtt_prime - baseline.rtt_avg_ms).max(0.0);
        Ok((measured, match_processing_time(measured, db, tolerance_ms)))
    }
}

enum MissPlan {
    Spoof,
    Period(Duration),
}
