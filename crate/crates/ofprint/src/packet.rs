//! Passive analysis of captured traffic: LLDP decoding, emission-interval
//! estimation, profile classification against the signature database, and
//! the ARP-rebroadcast detector.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::time::Duration;

use thiserror::Error;

use crate::signatures::{ControllerId, ControllerSignature, LldpProfile};
use crate::transport::{ArpProbeInfo, CapturedFrame};
use crate::units::Timestamp;
use crate::wire::{
    parse_ethernet, ArpPacket, MacAddr, TlvIter, ARP_OP_REQUEST, ETHERTYPE_ARP, ETHERTYPE_BDDP,
    ETHERTYPE_LLDP, TLV_CHASSIS_ID, TLV_END, TLV_PORT_ID, TLV_SYSTEM_DESCRIPTION, TLV_SYSTEM_NAME,
    TLV_TTL,
};

/// A 0x8942 broadcast counts as "following" an LLDP frame when it arrives
/// within this window from the same source.
pub const COMPANION_PAIRING_WINDOW: Duration = Duration::from_millis(100);

/// Interval agreement: within this fraction of the profile interval;
/// doubled for profiles whose interval is marked variable.
pub const INTERVAL_TOLERANCE_FRACTION: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PacketError {
    #[error("not an LLDP frame (ethertype {0:#06x})")]
    NotLldp(u16),
    #[error("malformed LLDP frame: {0}")]
    Malformed(String),
    #[error("missing mandatory {0} TLV")]
    MissingTlv(&'static str),
    #[error("LLDPDU has no End TLV")]
    NoEndTlv,
    #[error("insufficient observations: got {got}, need {need}")]
    InsufficientObservations { got: usize, need: usize },
}

/// One decoded discovery frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LldpObservation {
    pub received_at: Timestamp,
    pub chassis_id: Vec<u8>,
    pub port_id: Vec<u8>,
    pub ttl_s: u16,
    pub system_name: Option<String>,
    pub system_description: Option<String>,
    pub unknown_tlv_count: u32,
    /// Set by the capture correlator when a 0x8942 broadcast from the same
    /// source follows within the pairing window.
    pub followed_by_companion: bool,
}

impl LldpObservation {
    pub fn group_key(&self) -> GroupKey {
        GroupKey {
            chassis_id: self.chassis_id.clone(),
            port_id: self.port_id.clone(),
        }
    }
}

/// Frames are grouped per emitting (chassis, port) so multi-port floods
/// cannot pollute the period estimate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupKey {
    pub chassis_id: Vec<u8>,
    pub port_id: Vec<u8>,
}

pub fn parse_lldp(frame: &CapturedFrame) -> Result<LldpObservation, PacketError> {
    if frame.ethertype != ETHERTYPE_LLDP {
        return Err(PacketError::NotLldp(frame.ethertype));
    }
    let payload = frame.payload();
    let mut chassis_id = None;
    let mut port_id = None;
    let mut ttl_s = None;
    let mut system_name = None;
    let mut system_description = None;
    let mut unknown_tlv_count = 0u32;
    let mut iter = TlvIter::new(payload);
    for item in &mut iter {
        let (ty, value) = item.map_err(|e| PacketError::Malformed(e.to_string()))?;
        match ty {
            TLV_END => break,
            TLV_CHASSIS_ID => {
                if value.is_empty() {
                    return Err(PacketError::Malformed("empty Chassis ID".into()));
                }
                chassis_id.get_or_insert_with(|| value.to_vec());
            }
            TLV_PORT_ID => {
                if value.is_empty() {
                    return Err(PacketError::Malformed("empty Port ID".into()));
                }
                port_id.get_or_insert_with(|| value.to_vec());
            }
            TLV_TTL => {
                if value.len() < 2 {
                    return Err(PacketError::Malformed("short TTL".into()));
                }
                ttl_s.get_or_insert(u16::from_be_bytes([value[0], value[1]]));
            }
            TLV_SYSTEM_NAME => {
                system_name.get_or_insert_with(|| String::from_utf8_lossy(value).into_owned());
            }
            TLV_SYSTEM_DESCRIPTION => {
                system_description
                    .get_or_insert_with(|| String::from_utf8_lossy(value).into_owned());
            }
            _ => unknown_tlv_count += 1,
        }
    }
    if !iter.saw_end() {
        return Err(PacketError::NoEndTlv);
    }
    Ok(LldpObservation {
        received_at: frame.received_at,
        chassis_id: chassis_id.ok_or(PacketError::MissingTlv("Chassis ID"))?,
        port_id: port_id.ok_or(PacketError::MissingTlv("Port ID"))?,
        ttl_s: ttl_s.ok_or(PacketError::MissingTlv("TTL"))?,
        system_name,
        system_description,
        unknown_tlv_count,
        followed_by_companion: false,
    })
}

/// Decode every LLDP frame in a capture and pair companion broadcasts.
/// Returns the observations plus per-frame parse failures (frame index,
/// error), so offline classification can report bad frames without dying.
pub fn observations_from_capture(
    frames: &[CapturedFrame],
) -> (Vec<LldpObservation>, Vec<(usize, PacketError)>) {
    let mut observations: Vec<(MacAddr, LldpObservation)> = Vec::new();
    let mut errors = Vec::new();
    for (index, frame) in frames.iter().enumerate() {
        match frame.ethertype {
            ETHERTYPE_LLDP => match parse_lldp(frame) {
                Ok(obs) => observations.push((frame.src_mac(), obs)),
                Err(e) => errors.push((index, e)),
            },
            ETHERTYPE_BDDP => {
                if frame.dst_mac() != MacAddr::BROADCAST {
                    continue;
                }
                let src = frame.src_mac();
                let at = frame.received_at;
                // Flag the most recent unpaired LLDP frame from this source.
                for (obs_src, obs) in observations.iter_mut().rev() {
                    if *obs_src == src && !obs.followed_by_companion {
                        if at - obs.received_at <= COMPANION_PAIRING_WINDOW {
                            obs.followed_by_companion = true;
                        }
                        break;
                    }
                }
            }
            _ => {}
        }
    }
    (observations.into_iter().map(|(_, obs)| obs).collect(), errors)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalEstimate {
    pub mean: Duration,
    pub std: Duration,
    /// Number of gaps, one less than the observations.
    pub count: u32,
}

/// Mean and deviation of the inter-arrival gaps for one source group.
pub fn estimate_interval(
    observations: &[LldpObservation],
    group: &GroupKey,
) -> Result<IntervalEstimate, PacketError> {
    let mut times: Vec<Timestamp> = observations
        .iter()
        .filter(|o| &o.group_key() == group)
        .map(|o| o.received_at)
        .collect();
    times.sort_unstable();
    if times.len() < 3 {
        return Err(PacketError::InsufficientObservations {
            got: times.len(),
            need: 3,
        });
    }
    let gaps: Vec<f64> = times
        .windows(2)
        .map(|w| (w[1] - w[0]).as_secs_f64())
        .collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (gaps.len() - 1) as f64;
    Ok(IntervalEstimate {
        mean: Duration::from_secs_f64(mean),
        std: Duration::from_secs_f64(var.sqrt()),
        count: gaps.len() as u32,
    })
}

fn interval_compatible(mean_s: f64, profile: &LldpProfile, slack: f64) -> bool {
    let mut frac = INTERVAL_TOLERANCE_FRACTION;
    if profile.interval_variable {
        frac *= 2.0;
    }
    (mean_s - profile.interval_s).abs() <= profile.interval_s * frac * slack
}

/// Check every content constraint of a profile against one observation.
/// A profile describes the frame exactly: an absent pattern means the
/// frame must not carry that field.
fn content_check(obs: &LldpObservation, profile: &LldpProfile) -> Result<Vec<String>, String> {
    let mut satisfied = Vec::new();
    match (&profile.system_name_pattern, &obs.system_name) {
        (Some(p), Some(v)) if p.matches(v) => satisfied.push(format!("system name matches {:?}", p.as_str())),
        (Some(p), Some(v)) => return Err(format!("system name {v:?} does not match {:?}", p.as_str())),
        (Some(p), None) => return Err(format!("system name absent, expected {:?}", p.as_str())),
        (None, Some(v)) => return Err(format!("unexpected system name {v:?}")),
        (None, None) => {}
    }
    match (&profile.system_description_pattern, &obs.system_description) {
        (Some(p), Some(v)) if p.matches(v) => {
            satisfied.push(format!("system description matches {:?}", p.as_str()))
        }
        (Some(p), Some(v)) => {
            return Err(format!(
                "system description {v:?} does not match {:?}",
                p.as_str()
            ))
        }
        (Some(p), None) => return Err(format!("system description absent, expected {:?}", p.as_str())),
        (None, Some(v)) => return Err(format!("unexpected system description {v:?}")),
        (None, None) => {}
    }
    let expected_unknown = profile.unknown_tlv_count.unwrap_or(0);
    if obs.unknown_tlv_count != expected_unknown {
        return Err(format!(
            "{} unknown TLVs, expected {expected_unknown}",
            obs.unknown_tlv_count
        ));
    }
    if expected_unknown > 0 {
        satisfied.push(format!("{expected_unknown} unknown TLVs"));
    }
    match (profile.companion_ethertype, obs.followed_by_companion) {
        (Some(et), true) => satisfied.push(format!("followed by {et:#06x} companion broadcast")),
        (Some(et), false) => return Err(format!("companion {et:#06x} broadcast missing")),
        (None, true) => return Err("unexpected companion broadcast".into()),
        (None, false) => {}
    }
    Ok(satisfied)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LldpMatch {
    pub id: ControllerId,
    pub rationale: Vec<String>,
}

/// Full classification: interval agreement plus every content constraint.
pub fn classify_lldp(
    interval: &IntervalEstimate,
    sample: &LldpObservation,
    db: &[ControllerSignature],
) -> Vec<LldpMatch> {
    let mean_s = interval.mean.as_secs_f64();
    db.iter()
        .filter_map(|sig| {
            if !interval_compatible(mean_s, &sig.lldp, 1.0) {
                return None;
            }
            match content_check(sample, &sig.lldp) {
                Ok(mut rationale) => {
                    rationale.insert(
                        0,
                        format!(
                            "interval {:.3} s within tolerance of {} s",
                            mean_s, sig.lldp.interval_s
                        ),
                    );
                    Some(LldpMatch {
                        id: sig.id.clone(),
                        rationale,
                    })
                }
                Err(_) => None,
            }
        })
        .collect()
}

/// Content-only classification, for captures too short to estimate the
/// emission interval.
pub fn classify_content(sample: &LldpObservation, db: &[ControllerSignature]) -> Vec<LldpMatch> {
    db.iter()
        .filter_map(|sig| match content_check(sample, &sig.lldp) {
            Ok(mut rationale) => {
                rationale.insert(0, "content-only match".into());
                Some(LldpMatch {
                    id: sig.id.clone(),
                    rationale,
                })
            }
            Err(_) => None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub group: GroupKey,
    pub observations: usize,
    pub interval: Option<IntervalEstimate>,
    pub single_gap_s: Option<f64>,
    pub candidates: Vec<LldpMatch>,
    /// True when no full interval-plus-content match was possible.
    pub low_confidence: bool,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CaptureClassification {
    pub groups: Vec<GroupReport>,
    pub candidates: BTreeSet<ControllerId>,
    pub frame_errors: Vec<(usize, PacketError)>,
}

/// The whole passive pipeline over one capture: decode, pair companions,
/// group by source, estimate intervals where possible, classify.
///
/// Degraded inputs degrade gracefully: two observations fall back to the
/// single gap plus content, one observation to content alone, and a group
/// whose content matches nothing keeps its interval-compatible candidates
/// with the failed constraints spelled out.
pub fn classify_capture(frames: &[CapturedFrame], db: &[ControllerSignature]) -> CaptureClassification {
    let (observations, frame_errors) = observations_from_capture(frames);
    let mut by_group: BTreeMap<GroupKey, Vec<&LldpObservation>> = BTreeMap::new();
    for obs in &observations {
        by_group.entry(obs.group_key()).or_default().push(obs);
    }
    let mut result = CaptureClassification {
        frame_errors,
        ..Default::default()
    };
    for (group, members) in by_group {
        let representative = representative_observation(&members);
        let mut report = GroupReport {
            group: group.clone(),
            observations: members.len(),
            interval: None,
            single_gap_s: None,
            candidates: Vec::new(),
            low_confidence: false,
            notes: Vec::new(),
        };
        match members.len() {
            0 => unreachable!("groups are built from observations"),
            1 => {
                report.low_confidence = true;
                report
                    .notes
                    .push("single observation: content-only match attempted".into());
                report.candidates = classify_content(&representative, db);
            }
            2 => {
                let mut times = [members[0].received_at, members[1].received_at];
                times.sort_unstable();
                let gap = (times[1] - times[0]).as_secs_f64();
                report.single_gap_s = Some(gap);
                report.low_confidence = true;
                report
                    .notes
                    .push(format!("two observations: single gap of {gap:.3} s"));
                report.candidates = classify_content(&representative, db)
                    .into_iter()
                    .filter(|m| {
                        db.iter()
                            .find(|sig| sig.id == m.id)
                            .map(|sig| interval_compatible(gap, &sig.lldp, 2.0))
                            .unwrap_or(false)
                    })
                    .collect();
            }
            _ => {
                let interval = estimate_interval(&observations, &group)
                    .expect("three or more observations in group");
                report.interval = Some(interval);
                let strict = classify_lldp(&interval, &representative, db);
                if strict.is_empty() {
                    // Content contradicts every interval-compatible profile;
                    // fall back to the interval evidence and explain.
                    report.low_confidence = true;
                    let mean_s = interval.mean.as_secs_f64();
                    for sig in db {
                        if !interval_compatible(mean_s, &sig.lldp, 1.0) {
                            continue;
                        }
                        let rationale = match content_check(&representative, &sig.lldp) {
                            Ok(r) => r,
                            Err(failure) => {
                                report.notes.push(format!("{}: {failure}", sig.id));
                                vec![format!("interval match only ({failure})")]
                            }
                        };
                        report.candidates.push(LldpMatch {
                            id: sig.id.clone(),
                            rationale,
                        });
                    }
                } else {
                    report.candidates = strict;
                }
            }
        }
        for m in &report.candidates {
            result.candidates.insert(m.id.clone());
        }
        result.groups.push(report);
    }
    result
}

/// Collapse a group to its modal content, so a handful of dropped
/// companion frames cannot flip the classification.
fn representative_observation(members: &[&LldpObservation]) -> LldpObservation {
    fn mode<T: Ord + Clone>(values: impl Iterator<Item = T>) -> Option<T> {
        let mut counts: BTreeMap<T, usize> = BTreeMap::new();
        for v in values {
            *counts.entry(v).or_default() += 1;
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
            .map(|(v, _)| v)
    }
    let last = members.last().expect("non-empty group");
    let followed = members.iter().filter(|o| o.followed_by_companion).count();
    LldpObservation {
        received_at: last.received_at,
        chassis_id: last.chassis_id.clone(),
        port_id: last.port_id.clone(),
        ttl_s: mode(members.iter().map(|o| o.ttl_s)).unwrap_or(last.ttl_s),
        system_name: mode(members.iter().map(|o| o.system_name.clone())).unwrap_or(None),
        system_description: mode(members.iter().map(|o| o.system_description.clone()))
            .unwrap_or(None),
        unknown_tlv_count: mode(members.iter().map(|o| o.unknown_tlv_count)).unwrap_or(0),
        followed_by_companion: followed * 2 >= members.len(),
    }
}

/// Hydrogen detector: did anything repeat our ARP request from a source
/// MAC that is not ours (and, when known, is one of the switch's)?
pub fn detect_arp_rebroadcast(
    frames: &[CapturedFrame],
    sent_request: &ArpProbeInfo,
    switch_macs: Option<&BTreeSet<MacAddr>>,
) -> bool {
    frames.iter().any(|frame| {
        if frame.ethertype != ETHERTYPE_ARP {
            return false;
        }
        let Ok(view) = parse_ethernet(&frame.raw) else {
            return false;
        };
        let Ok(arp) = ArpPacket::decode(view.payload) else {
            return false;
        };
        arp.op == ARP_OP_REQUEST
            && arp.target_ip == sent_request.target_ip
            && view.src != sent_request.sender_mac
            && switch_macs.is_none_or(|macs| macs.contains(&view.src))
    })
}

/// Line-oriented capture persistence: `<timestamp_us> <hex frame>` per
/// line, so real captures can be classified offline.
pub mod dump {
    use super::*;

    #[derive(Debug, Error)]
    pub enum DumpError {
        #[error("line {line}: {message}")]
        Line { line: usize, message: String },
        #[error(transparent)]
        Io(#[from] std::io::Error),
    }

    pub fn write_capture<W: Write>(mut w: W, frames: &[CapturedFrame]) -> std::io::Result<()> {
        for frame in frames {
            writeln!(w, "{} {}", frame.received_at.as_micros(), hex::encode(&frame.raw))?;
        }
        Ok(())
    }

    pub fn read_capture<R: BufRead>(r: R) -> Result<Vec<CapturedFrame>, DumpError> {
        let mut frames = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let text = line.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            let bad = |message: String| DumpError::Line {
                line: lineno,
                message,
            };
            let (ts, hex_bytes) = text
                .split_once(char::is_whitespace)
                .ok_or_else(|| bad("expected '<timestamp_us> <hex bytes>'".into()))?;
            let micros: u64 = ts
                .parse()
                .map_err(|_| bad(format!("invalid timestamp {ts:?}")))?;
            let raw = hex::decode(hex_bytes.trim())
                .map_err(|e| bad(format!("invalid hex: {e}")))?;
            let frame = CapturedFrame::new(raw, Timestamp::from_micros(micros))
                .map_err(|e| bad(e.to_string()))?;
            frames.push(frame);
        }
        frames.sort_by_key(|f| f.received_at);
        Ok(frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signatures::SignatureDb;
    use crate::simnet::{run_scenario, NoiseProfile, ScenarioConfig};
    use crate::transport::ProbeTransport;
    use crate::units::Timestamp;
    use crate::wire::{build_ethernet, LldpFrameSpec, MacAddr};

    fn frame_from_spec(spec: &LldpFrameSpec, at_us: u64) -> CapturedFrame {
        let raw = build_ethernet(
            MacAddr::LLDP_MULTICAST,
            "0a:00:27:00:00:01".parse().unwrap(),
            ETHERTYPE_LLDP,
            &spec.encode(),
        );
        CapturedFrame::new(raw, Timestamp::from_micros(at_us)).unwrap()
    }

    fn basic_spec() -> LldpFrameSpec {
        LldpFrameSpec {
            chassis_id: vec![4, 0x0a, 0, 0x27, 0, 0, 1],
            port_id: vec![7, b'p', b'1'],
            ttl: 120,
            system_name: None,
            system_description: None,
            extra_tlvs: vec![],
        }
    }

    #[test]
    fn parse_reads_description() {
        let mut spec = basic_spec();
        spec.system_description = Some("dpid:00:11:22:33:44:55".into());
        let obs = parse_lldp(&frame_from_spec(&spec, 0)).unwrap();
        assert_eq!(obs.system_description.as_deref(), Some("dpid:00:11:22:33:44:55"));
        assert_eq!(obs.system_name, None);
        assert_eq!(obs.unknown_tlv_count, 0);
    }

    #[test]
    fn parse_reads_name_and_counts_unknowns() {
        let mut spec = basic_spec();
        spec.system_name = Some("openflow".into());
        let obs = parse_lldp(&frame_from_spec(&spec, 0)).unwrap();
        assert_eq!(obs.system_name.as_deref(), Some("openflow"));
        assert_eq!(obs.unknown_tlv_count, 0);
        assert_eq!(obs.ttl_s, 120);
    }

    #[test]
    fn parse_rejects_truncated_frame() {
        let spec = basic_spec();
        let mut frame = frame_from_spec(&spec, 0);
        frame.raw.truncate(frame.raw.len() - 3);
        match parse_lldp(&frame) {
            Err(PacketError::Malformed(_)) | Err(PacketError::NoEndTlv) => {}
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn parse_requires_mandatory_tlvs() {
        let mut payload = Vec::new();
        crate::wire::push_tlv(&mut payload, TLV_PORT_ID, b"\x07p1");
        crate::wire::push_tlv(&mut payload, TLV_TTL, &120u16.to_be_bytes());
        crate::wire::push_tlv(&mut payload, TLV_END, &[]);
        let raw = build_ethernet(
            MacAddr::LLDP_MULTICAST,
            "0a:00:27:00:00:01".parse().unwrap(),
            ETHERTYPE_LLDP,
            &payload,
        );
        let frame = CapturedFrame::new(raw, Timestamp::ZERO).unwrap();
        assert_eq!(parse_lldp(&frame), Err(PacketError::MissingTlv("Chassis ID")));
    }

    fn obs_at(times_s: &[f64]) -> Vec<LldpObservation> {
        times_s
            .iter()
            .map(|t| {
                let mut o = parse_lldp(&frame_from_spec(&basic_spec(), 0)).unwrap();
                o.received_at = Timestamp::from_nanos((t * 1e9).round() as u64);
                o
            })
            .collect()
    }

    #[test]
    fn interval_exact_periodicity() {
        let obs = obs_at(&[0.0, 5.0, 10.0, 15.0]);
        let est = estimate_interval(&obs, &obs[0].group_key()).unwrap();
        assert!((est.mean.as_secs_f64() - 5.0).abs() < 1e-9);
        assert_eq!(est.std, Duration::ZERO);
        assert_eq!(est.count, 3);
    }

    #[test]
    fn interval_hand_computed_gaps() {
        let obs = obs_at(&[0.0, 4.5, 10.0, 14.5]);
        let est = estimate_interval(&obs, &obs[0].group_key()).unwrap();
        assert!((est.mean.as_secs_f64() - 4.8333).abs() < 1e-3, "{:?}", est.mean);
        assert!((est.std.as_secs_f64() - 0.5774).abs() < 1e-3, "{:?}", est.std);
    }

    #[test]
    fn interval_needs_three_observations() {
        let obs = obs_at(&[0.0, 5.0]);
        assert_eq!(
            estimate_interval(&obs, &obs[0].group_key()),
            Err(PacketError::InsufficientObservations { got: 2, need: 3 })
        );
    }

    #[test]
    fn interval_invariant_under_shift() {
        let a = obs_at(&[0.0, 4.5, 10.0, 14.5]);
        let b = obs_at(&[100.0, 104.5, 110.0, 114.5]);
        let ea = estimate_interval(&a, &a[0].group_key()).unwrap();
        let eb = estimate_interval(&b, &b[0].group_key()).unwrap();
        assert_eq!(ea, eb);
    }

    #[test]
    fn interval_ignores_other_groups() {
        let mut obs = obs_at(&[0.0, 5.0, 10.0, 15.0]);
        let mut alien = obs_at(&[1.0, 2.0, 3.0])
            .into_iter()
            .map(|mut o| {
                o.port_id = vec![7, b'p', b'9'];
                o
            })
            .collect::<Vec<_>>();
        obs.append(&mut alien);
        let est = estimate_interval(&obs, &obs[0].group_key()).unwrap();
        assert!((est.mean.as_secs_f64() - 5.0).abs() < 1e-9);
    }

    fn est(mean_s: f64) -> IntervalEstimate {
        IntervalEstimate {
            mean: Duration::from_secs_f64(mean_s),
            std: Duration::ZERO,
            count: 5,
        }
    }

    #[test]
    fn classify_floodlight_by_companion() {
        let db = SignatureDb::shipped();
        let mut obs = parse_lldp(&frame_from_spec(&basic_spec(), 0)).unwrap();
        obs.followed_by_companion = true;
        let matches = classify_lldp(&est(15.0), &obs, db.signatures());
        let ids: Vec<&str> = matches.iter().map(|m| m.id.as_str()).collect();
        assert_eq!(ids, vec!["floodlight"]);
    }

    #[test]
    fn classify_beacon_by_unknown_tlvs() {
        let db = SignatureDb::shipped();
        let mut obs = parse_lldp(&frame_from_spec(&basic_spec(), 0)).unwrap();
        obs.unknown_tlv_count = 2;
        let matches = classify_lldp(&est(15.0), &obs, db.signatures());
        let ids: Vec<&str> = matches.iter().map(|m| m.id.as_str()).collect();
        assert_eq!(ids, vec!["beacon"]);
    }

    #[test]
    fn classify_hydrogen_by_interval_and_name() {
        let db = SignatureDb::shipped();
        let mut obs = parse_lldp(&frame_from_spec(&basic_spec(), 0)).unwrap();
        obs.system_name = Some("OF|aa:bb:cc:dd:ee:ff".into());
        let matches = classify_lldp(&est(300.0), &obs, db.signatures());
        let ids: Vec<&str> = matches.iter().map(|m| m.id.as_str()).collect();
        assert_eq!(ids, vec!["opendaylight-hydrogen"]);
    }

    #[test]
    fn round_trip_all_shipped_profiles() {
        let db = SignatureDb::shipped();
        let mac: MacAddr = "0a:00:27:00:00:01".parse().unwrap();
        for sig in db.signatures() {
            let model = crate::simnet::ControllerModel::from_signature(sig);
            let template = model.lldp.expect("shipped profiles all emit");
            let spec = template.frame_spec(mac, "p1");
            let obs = parse_lldp(&frame_from_spec(&spec, 0)).unwrap();
            assert_eq!(obs.system_name, spec.system_name, "{}", sig.id);
            assert_eq!(obs.system_description, spec.system_description, "{}", sig.id);
            assert_eq!(obs.unknown_tlv_count as usize, spec.extra_tlvs.len(), "{}", sig.id);
            // And the emitted content satisfies its own profile.
            let mut obs = obs;
            obs.followed_by_companion = sig.lldp.companion_ethertype.is_some();
            assert!(
                content_check(&obs, &sig.lldp).is_ok(),
                "{} frame fails its own profile",
                sig.id
            );
        }
    }

    #[test]
    fn capture_pipeline_identifies_each_controller() {
        let db = SignatureDb::shipped();
        for sig in db.signatures() {
            let config = ScenarioConfig::builtin(sig.id.as_str(), NoiseProfile::Default);
            let mut t = run_scenario(&config, 21, &db).unwrap();
            let frames = t
                .capture_frames(&[ETHERTYPE_LLDP, ETHERTYPE_BDDP], Duration::from_secs(600))
                .unwrap();
            let result = classify_capture(&frames, db.signatures());
            let ids: Vec<&str> = result.candidates.iter().map(|c| c.as_str()).collect();
            assert_eq!(ids, vec![sig.id.as_str()], "classifying {}", sig.id);
        }
    }

    #[test]
    fn stripped_companions_fall_back_to_interval_pair() {
        let db = SignatureDb::shipped();
        let config = ScenarioConfig::builtin("floodlight", NoiseProfile::Default);
        let mut t = run_scenario(&config, 22, &db).unwrap();
        let frames = t
            .capture_frames(&[ETHERTYPE_LLDP], Duration::from_secs(120))
            .unwrap();
        let result = classify_capture(&frames, db.signatures());
        let ids: Vec<&str> = result.candidates.iter().map(|c| c.as_str()).collect();
        assert_eq!(ids, vec!["beacon", "floodlight"]);
        let group = &result.groups[0];
        assert!(group.low_confidence);
        assert!(
            group.notes.iter().any(|n| n.contains("companion")),
            "fallback should mention the missing companion: {:?}",
            group.notes
        );
    }

    #[test]
    fn single_frame_content_only() {
        let db = SignatureDb::shipped();
        let mut spec = basic_spec();
        spec.system_name = Some("OF|0a:00:27:00:00:01".into());
        let frames = vec![frame_from_spec(&spec, 1000)];
        let result = classify_capture(&frames, db.signatures());
        let ids: Vec<&str> = result.candidates.iter().map(|c| c.as_str()).collect();
        assert_eq!(ids, vec!["opendaylight-hydrogen"]);
        assert!(result.groups[0].low_confidence);
    }

    #[test]
    fn arp_detector_spec_cases() {
        let db = SignatureDb::shipped();
        let unknown = std::net::Ipv4Addr::new(10, 0, 0, 250);
        for (controller, expected) in [("opendaylight-hydrogen", true), ("floodlight", false)] {
            let config = ScenarioConfig::builtin(controller, NoiseProfile::Default);
            let mut t = run_scenario(&config, 23, &db).unwrap();
            let (info, frames) = t.send_arp_probe(unknown, Duration::from_secs(1)).unwrap();
            assert_eq!(
                detect_arp_rebroadcast(&frames, &info, None),
                expected,
                "{controller}"
            );
        }
        let info = ArpProbeInfo {
            target_ip: unknown,
            sender_mac: "02:00:00:00:00:01".parse().unwrap(),
            sent_at: Timestamp::ZERO,
        };
        assert!(!detect_arp_rebroadcast(&[], &info, None));
    }

    #[test]
    fn arp_detector_honors_switch_mac_filter() {
        let db = SignatureDb::shipped();
        let config = ScenarioConfig::builtin("opendaylight-hydrogen", NoiseProfile::Default);
        let mut t = run_scenario(&config, 24, &db).unwrap();
        let (info, frames) = t
            .send_arp_probe(std::net::Ipv4Addr::new(10, 0, 0, 250), Duration::from_secs(1))
            .unwrap();
        let switch: MacAddr = "0a:00:27:00:00:01".parse().unwrap();
        let other: MacAddr = "02:00:00:00:00:09".parse().unwrap();
        let with_switch: BTreeSet<MacAddr> = [switch].into_iter().collect();
        let without: BTreeSet<MacAddr> = [other].into_iter().collect();
        assert!(detect_arp_rebroadcast(&frames, &info, Some(&with_switch)));
        assert!(!detect_arp_rebroadcast(&frames, &info, Some(&without)));
    }

    #[test]
    fn dump_round_trip_and_errors() {
        let db = SignatureDb::shipped();
        let config = ScenarioConfig::builtin("ryu", NoiseProfile::Default);
        let mut t = run_scenario(&config, 25, &db).unwrap();
        let frames = t
            .capture_frames(&[ETHERTYPE_LLDP], Duration::from_secs(10))
            .unwrap();
        let mut text = Vec::new();
        dump::write_capture(&mut text, &frames).unwrap();
        let back = dump::read_capture(&text[..]).unwrap();
        assert_eq!(frames.len(), back.len());
        for (a, b) in frames.iter().zip(&back) {
            assert_eq!(a.raw, b.raw);
            assert_eq!(a.received_at.as_micros(), b.received_at.as_micros());
        }

        let bad = "12 deadbeef\nnot-a-line\n";
        match dump::read_capture(bad.as_bytes()) {
            Err(dump::DumpError::Line { line, .. }) => assert_eq!(line, 1), // 12 deadbeef is too short
            other => panic!("expected line error, got {other:?}"),
        }
        let bad2 = format!("{}\nxyz {}\n", "0 ".to_owned() + &hex::encode(vec![0u8; 14]), hex::encode(vec![0u8; 14]));
        match dump::read_capture(bad2.as_bytes()) {
            Err(dump::DumpError::Line { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected line error, got {other:?}"),
        }
    }
}
