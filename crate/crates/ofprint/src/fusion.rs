//! Evidence fusion: fold per-technique candidate sets into one ranked
//! verdict. The combination scheme is a documented heuristic: per-technique
//! multiplicative scores with a miss penalty, so a single noisy technique
//! cannot eliminate the true controller.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::signatures::{ControllerId, ControllerSignature};

/// A technique that produced an empty candidate set contributes nothing;
/// one that produced candidates multiplies every non-candidate by this.
pub const MISS_PENALTY: f64 = 0.05;

/// Decided when the top score is at least this multiple of the runner-up.
pub const DECISION_RATIO: f64 = 2.0;

// Engineering defaults, not fitted values.
pub const CONFIDENCE_LLDP: f64 = 1.0;
pub const CONFIDENCE_TIMEOUT: f64 = 0.9;
pub const CONFIDENCE_PROCESSING: f64 = 0.7;
pub const CONFIDENCE_ARP: f64 = 1.0;
/// Ryu's discovery module is not part of the controller core, so its LLDP
/// profile contributes at reduced weight.
pub const RYU_ADVISORY_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    Lldp,
    Timeout,
    ProcessingTime,
    Arp,
}

impl Technique {
    /// Fixed execution order for scans: passive capture before any active
    /// probing.
    pub const SCAN_ORDER: [Technique; 4] = [
        Technique::Lldp,
        Technique::Timeout,
        Technique::ProcessingTime,
        Technique::Arp,
    ];
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Technique::Lldp => "lldp",
            Technique::Timeout => "timeout",
            Technique::ProcessingTime => "processing-time",
            Technique::Arp => "arp",
        };
        f.write_str(name)
    }
}

impl FromStr for Technique {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lldp" => Ok(Technique::Lldp),
            "timeout" => Ok(Technique::Timeout),
            "processing-time" | "processing_time" => Ok(Technique::ProcessingTime),
            "arp" => Ok(Technique::Arp),
            other => Err(format!(
                "unknown technique {other:?} (expected lldp, timeout, processing-time or arp)"
            )),
        }
    }
}

/// What one technique concluded. Candidates may carry explicit scores in
/// [0, 1] (summing to at most 1); without scores the set is read as
/// uniform. An empty candidate set means the technique failed or was
/// uninformative.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TechniqueEvidence {
    pub technique: Technique,
    pub candidates: BTreeMap<ControllerId, Option<f64>>,
    pub confidence: f64,
    pub notes: Vec<String>,
}

impl TechniqueEvidence {
    pub fn empty(technique: Technique, confidence: f64) -> Self {
        TechniqueEvidence {
            technique,
            candidates: BTreeMap::new(),
            confidence,
            notes: Vec::new(),
        }
    }

    pub fn uniform<I>(technique: Technique, confidence: f64, ids: I) -> Self
    where
        I: IntoIterator<Item = ControllerId>,
    {
        TechniqueEvidence {
            technique,
            candidates: ids.into_iter().map(|id| (id, None)).collect(),
            confidence,
            notes: Vec::new(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    fn score_of(&self, id: &ControllerId) -> Option<f64> {
        let uniform = 1.0 / self.candidates.len() as f64;
        self.candidates
            .get(id)
            .map(|explicit| explicit.unwrap_or(uniform))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedCandidate {
    pub id: ControllerId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FingerprintVerdict {
    /// All database controllers, best first; empty when no technique was
    /// informative.
    pub ranking: Vec<RankedCandidate>,
    pub decided: bool,
    pub evidence: Vec<TechniqueEvidence>,
}

impl FingerprintVerdict {
    pub fn top(&self) -> Option<&RankedCandidate> {
        self.ranking.first()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CombineOptions {
    pub miss_penalty: f64,
    pub decision_ratio: f64,
}

impl Default for CombineOptions {
    fn default() -> Self {
        CombineOptions {
            miss_penalty: MISS_PENALTY,
            decision_ratio: DECISION_RATIO,
        }
    }
}

pub fn combine(evidence: &[TechniqueEvidence], db: &[ControllerSignature]) -> FingerprintVerdict {
    combine_with(evidence, db, CombineOptions::default())
}

/// Per-controller score: the product over informative techniques of the
/// technique's opinion, tempered by its confidence towards the uniform
/// baseline. ARP evidence, being (near-)certain when it fires, pins its
/// candidates to the top of the ranking.
pub fn combine_with(
    evidence: &[TechniqueEvidence],
    db: &[ControllerSignature],
    options: CombineOptions,
) -> FingerprintVerdict {
    let mut informative: Vec<&TechniqueEvidence> =
        evidence.iter().filter(|e| !e.candidates.is_empty()).collect();
    // Canonical fold order makes the result independent of the order the
    // evidence was gathered in, bit for bit.
    informative.sort_by(|a, b| {
        (a.technique, a.confidence.to_bits(), &a.candidates)
            .partial_cmp(&(b.technique, b.confidence.to_bits(), &b.candidates))
            .expect("total order over evidence keys")
    });

    if informative.is_empty() || db.is_empty() {
        return FingerprintVerdict {
            ranking: Vec::new(),
            decided: false,
            evidence: evidence.to_vec(),
        };
    }

    let baseline = 1.0 / db.len() as f64;
    let mut scores: Vec<RankedCandidate> = db
        .iter()
        .map(|sig| {
            let mut score = 1.0;
            for e in &informative {
                let opinion = e.score_of(&sig.id).unwrap_or(options.miss_penalty);
                score *= e.confidence * opinion + (1.0 - e.confidence) * baseline;
            }
            RankedCandidate {
                id: sig.id.clone(),
                score,
            }
        })
        .collect();

    let total: f64 = scores.iter().map(|c| c.score).sum();
    if total > 0.0 {
        for c in &mut scores {
            c.score /= total;
        }
    }
    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));

    // ARP evidence is binary: when it fired, its candidates rank first.
    let arp_pinned: Vec<&ControllerId> = informative
        .iter()
        .filter(|e| e.technique == Technique::Arp)
        .flat_map(|e| e.candidates.keys())
        .collect();
    if !arp_pinned.is_empty() {
        scores.sort_by_key(|c| !arp_pinned.contains(&&c.id));
    }

    let decided = match scores.as_slice() {
        [] => false,
        [_] => true,
        [first, second, ..] => first.score >= options.decision_ratio * second.score,
    };

    FingerprintVerdict {
        ranking: scores,
        decided,
        evidence: evidence.to_vec(),
    }
}
