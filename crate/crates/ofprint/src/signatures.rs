//! Controller signature database: per-controller default timeouts,
//! processing times and discovery-frame profiles, plus the matching
//! primitives the active techniques feed their measurements into.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timing::TimeoutEstimate;
use crate::units::Timeout;

/// Distances closer than this are reported as ambiguous. Floodlight
/// (2.627 ms) and Beacon (2.370 ms) sit 0.257 ms apart, so they must
/// collide under this margin.
pub const AMBIGUITY_MARGIN_MS: f64 = 0.5;

pub const DEFAULT_DB: &str = include_str!("../data/default_signatures.json");

#[derive(Debug, Error)]
pub enum DbError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported database version {0} (expected 1)")]
    Version(u32),
    #[error("duplicate signature id {0:?}")]
    DuplicateId(String),
    #[error("invalid signature {id:?}: {reason}")]
    Invalid { id: String, reason: String },
}

/// Name of a controller build, unique within a database.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct ControllerId(String);

impl ControllerId {
    pub fn new(name: impl Into<String>) -> Result<Self, DbError> {
        let name = name.into();
        if name.is_empty() {
            return Err(DbError::Invalid {
                id: name,
                reason: "controller id must be non-empty".into(),
            });
        }
        Ok(ControllerId(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ControllerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for ControllerId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ControllerId::new(s).map_err(serde::de::Error::custom)
    }
}

impl FromStr for ControllerId {
    type Err = DbError;

    fn from_str(s: &str) -> Result<Self, DbError> {
        ControllerId::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeoutDefaults {
    pub idle: Timeout,
    pub hard: Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessingTimeRecord {
    /// Mean miss RTT on the minimal-latency build topology, milliseconds.
    pub t_p_ms: f64,
    /// `t_p` minus the hit-RTT baseline; the controller's own share.
    pub t_p_adjusted_ms: f64,
}

impl ProcessingTimeRecord {
    pub fn new(t_p_ms: f64, t_p_adjusted_ms: f64) -> Result<Self, String> {
        if !(t_p_ms >= 0.0 && t_p_adjusted_ms >= 0.0) {
            return Err(format!(
                "processing times must be non-negative (got {t_p_ms}, {t_p_adjusted_ms})"
            ));
        }
        if t_p_adjusted_ms > t_p_ms {
            return Err(format!(
                "adjusted time {t_p_adjusted_ms} ms exceeds raw time {t_p_ms} ms"
            ));
        }
        Ok(ProcessingTimeRecord {
            t_p_ms,
            t_p_adjusted_ms,
        })
    }
}

/// Literal text with optional `[MAC]` placeholders, each matching one
/// 6-octet MAC address in colon, dash or bare-hex form.
#[derive(Debug, Clone)]
pub struct Pattern {
    text: String,
    regex: Regex,
}

// The compiled regex is derived from the text.
impl PartialEq for Pattern {
    fn eq(&self, other: &Self) -> bool {
        self.text == other.text
    }
}
impl Eq for Pattern {}

const MAC_RE: &str = "(?:[0-9A-Fa-f]{2}(?::[0-9A-Fa-f]{2}){5}|[0-9A-Fa-f]{2}(?:-[0-9A-Fa-f]{2}){5}|[0-9A-Fa-f]{12})";

impl Pattern {
    pub fn new(text: impl Into<String>) -> Result<Self, String> {
        let text = text.into();
        if text.is_empty() {
            return Err("pattern must be non-empty".into());
        }
        let mut re = String::from("^");
        for (i, part) in text.split("[MAC]").enumerate() {
            if i > 0 {
                re.push_str(MAC_RE);
            }
            re.push_str(&regex::escape(part));
        }
        re.push('$');
        let regex = Regex::new(&re).map_err(|e| e.to_string())?;
        Ok(Pattern { text, regex })
    }

    pub fn matches(&self, value: &str) -> bool {
        self.regex.is_match(value)
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    /// Render the pattern into a concrete string for a given switch MAC.
    /// This is what the simulator's emitter stamps into frames.
    pub fn render(&self, mac: &crate::wire::MacAddr) -> String {
        self.text.replace("[MAC]", &mac.to_string())
    }
}

impl Serialize for Pattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.text)
    }
}

impl<'de> Deserialize<'de> for Pattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Pattern::new(s).map_err(serde::de::Error::custom)
    }
}

/// What a controller's discovery frames look like: emission interval plus
/// content constraints. Absent content fields are themselves signature
/// content: they assert the frame does *not* carry that field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LldpProfile {
    pub interval_s: f64,
    pub interval_variable: bool,
    pub system_name_pattern: Option<Pattern>,
    pub system_description_pattern: Option<Pattern>,
    pub companion_ethertype: Option<u16>,
    pub unknown_tlv_count: Option<u32>,
}

impl LldpProfile {
    pub fn interval(&self) -> Duration {
        Duration::from_secs_f64(self.interval_s)
    }

    fn validate(&self) -> Result<(), String> {
        if !self.interval_s.is_finite() || self.interval_s <= 0.0 {
            return Err(format!("lldp interval must be positive, got {}", self.interval_s));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSignature {
    pub id: ControllerId,
    pub timeouts: TimeoutDefaults,
    pub processing: ProcessingTimeRecord,
    pub lldp: LldpProfile,
    pub arp_rebroadcast: bool,
}

// File schema. Field names are the wire contract; unknown fields are
// rejected so stale or typoed databases fail loudly.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DbFile {
    version: u32,
    signatures: Vec<SignatureEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SignatureEntry {
    id: ControllerId,
    idle_timeout_s: Timeout,
    hard_timeout_s: Timeout,
    t_p_ms: f64,
    t_p_adjusted_ms: f64,
    lldp: LldpProfile,
    arp_rebroadcast: bool,
}

impl SignatureEntry {
    fn into_signature(self) -> Result<ControllerSignature, DbError> {
        let invalid = |reason: String| DbError::Invalid {
            id: self.id.to_string(),
            reason,
        };
        self.lldp.validate().map_err(invalid)?;
        let processing =
            ProcessingTimeRecord::new(self.t_p_ms, self.t_p_adjusted_ms).map_err(invalid)?;
        Ok(ControllerSignature {
            id: self.id,
            timeouts: TimeoutDefaults {
                idle: self.idle_timeout_s,
                hard: self.hard_timeout_s,
            },
            processing,
            lldp: self.lldp,
            arp_rebroadcast: self.arp_rebroadcast,
        })
    }

    fn from_signature(sig: &ControllerSignature) -> Self {
        SignatureEntry {
            id: sig.id.clone(),
            idle_timeout_s: sig.timeouts.idle,
            hard_timeout_s: sig.timeouts.hard,
            t_p_ms: sig.processing.t_p_ms,
            t_p_adjusted_ms: sig.processing.t_p_adjusted_ms,
            lldp: sig.lldp.clone(),
            arp_rebroadcast: sig.arp_rebroadcast,
        }
    }
}

/// An immutable, loaded signature set. Shared read-only across scan
/// sessions; changes go through an explicit save of a new document.
#[derive(Debug, Clone)]
pub struct SignatureDb {
    signatures: Vec<ControllerSignature>,
}

impl SignatureDb {
    pub fn from_signatures(signatures: Vec<ControllerSignature>) -> Result<Self, DbError> {
        let mut seen = BTreeSet::new();
        for sig in &signatures {
            if !seen.insert(sig.id.clone()) {
                return Err(DbError::DuplicateId(sig.id.to_string()));
            }
        }
        Ok(SignatureDb { signatures })
    }

    pub fn parse(text: &str) -> Result<Self, DbError> {
        let file: DbFile = serde_json::from_str(text).map_err(|e| DbError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if file.version != 1 {
            return Err(DbError::Version(file.version));
        }
        let signatures = file
            .signatures
            .into_iter()
            .map(SignatureEntry::into_signature)
            .collect::<Result<Vec<_>, _>>()?;
        SignatureDb::from_signatures(signatures)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DbError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| DbError::Io {
            path: path.display().to_string(),
            source,
        })?;
        SignatureDb::parse(&text)
    }

    pub fn to_json(&self) -> String {
        let file = DbFile {
            version: 1,
            signatures: self
                .signatures
                .iter()
                .map(SignatureEntry::from_signature)
                .collect(),
        };
        // Serialization of our own types cannot fail.
        serde_json::to_string_pretty(&file).expect("signature db serialization")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DbError> {
        let path = path.as_ref();
        let mut text = self.to_json();
        text.push('\n');
        std::fs::write(path, text).map_err(|source| DbError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// The database shipped with the toolkit: the five open-source
    /// controllers plus the Hydrogen build of OpenDaylight, which gets its
    /// own entry because its discovery and ARP behavior differ.
    pub fn shipped() -> Self {
        SignatureDb::parse(DEFAULT_DB).expect("embedded default database")
    }

    pub fn signatures(&self) -> &[ControllerSignature] {
        &self.signatures
    }

    pub fn get(&self, id: &ControllerId) -> Option<&ControllerSignature> {
        self.signatures.iter().find(|s| &s.id == id)
    }

    pub fn get_by_name(&self, name: &str) -> Option<&ControllerSignature> {
        self.signatures.iter().find(|s| s.id.as_str() == name)
    }

    pub fn len(&self) -> usize {
        self.signatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signatures.is_empty()
    }
}

/// Controllers whose default timeouts agree with a measured estimate,
/// field by field. INFINITE only ever matches INFINITE.
pub fn match_timeouts(
    estimate: &TimeoutEstimate,
    db: &[ControllerSignature],
    tolerance: Duration,
) -> BTreeSet<ControllerId> {
    db.iter()
        .filter(|sig| {
            if !estimate.idle_timeout.matches(sig.timeouts.idle, tolerance) {
                return false;
            }
            match estimate.hard_timeout {
                Some(hard) => hard.matches(sig.timeouts.hard, tolerance),
                // Hard timeout not measured: constrain on idle alone.
                None => true,
            }
        })
        .map(|sig| sig.id.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessingMatch {
    pub id: ControllerId,
    pub distance_ms: f64,
    pub ambiguous: bool,
}

/// Controllers whose adjusted processing time lies within `tolerance_ms`
/// of the measurement, closest first. Candidates closer than
/// [`AMBIGUITY_MARGIN_MS`] to each other are flagged ambiguous.
pub fn match_processing_time(
    measured_adjusted_ms: f64,
    db: &[ControllerSignature],
    tolerance_ms: f64,
) -> Vec<ProcessingMatch> {
    match_processing_time_with_margin(measured_adjusted_ms, db, tolerance_ms, AMBIGUITY_MARGIN_MS)
}

pub fn match_processing_time_with_margin(
    measured_adjusted_ms: f64,
    db: &[ControllerSignature],
    tolerance_ms: f64,
    margin_ms: f64,
) -> Vec<ProcessingMatch> {
    let mut matches: Vec<ProcessingMatch> = db
        .iter()
        .filter_map(|sig| {
            let distance = (sig.processing.t_p_adjusted_ms - measured_adjusted_ms).abs();
            (distance <= tolerance_ms).then(|| ProcessingMatch {
                id: sig.id.clone(),
                distance_ms: distance,
                ambiguous: false,
            })
        })
        .collect();
    matches.sort_by(|a, b| {
        a.distance_ms
            .total_cmp(&b.distance_ms)
            .then_with(|| a.id.cmp(&b.id))
    });
    for i in 0..matches.len() {
        for j in (i + 1)..matches.len() {
            if (matches[i].distance_ms - matches[j].distance_ms).abs() <= margin_ms {
                matches[i].ambiguous = true;
                matches[j].ambiguous = true;
            }
        }
    }
    matches
}
