//! Time primitives shared by the simulator, the transports and the
//! inference algorithms: monotonic timestamps, finite-or-infinite flow
//! timeouts, and suffixed duration parsing for the CLI.

use std::fmt;
use std::ops::{Add, Sub};
use std::time::Duration;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Monotonic timestamp in nanoseconds since session (or scenario) start.
///
/// The simulated backend produces these from its virtual clock, the live
/// backend from an `Instant` pinned when the transport is opened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_nanos(ns: u64) -> Self {
        Timestamp(ns)
    }

    pub fn from_micros(us: u64) -> Self {
        Timestamp(us.saturating_mul(1_000))
    }

    pub fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_micros(self) -> u64 {
        self.0 / 1_000
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    /// Duration since an earlier timestamp; saturates at zero.
    pub fn since(self, earlier: Timestamp) -> Duration {
        Duration::from_nanos(self.0.saturating_sub(earlier.0))
    }
}

impl Add<Duration> for Timestamp {
    type Output = Timestamp;

    fn add(self, rhs: Duration) -> Timestamp {
        Timestamp(self.0.saturating_add(rhs.as_nanos() as u64))
    }
}

impl Sub for Timestamp {
    type Output = Duration;

    fn sub(self, rhs: Timestamp) -> Duration {
        self.since(rhs)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.as_secs_f64())
    }
}

/// A flow timeout: either a finite duration or the OpenFlow wire value 0,
/// which means the entry is never removed.
///
/// Keeping the infinite case out of band means arithmetic on finite
/// timeouts never has to special-case a magic zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Timeout {
    Finite(Duration),
    Infinite,
}

impl Timeout {
    pub fn from_secs_f64(secs: f64) -> Timeout {
        Timeout::Finite(Duration::from_secs_f64(secs))
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Timeout::Infinite)
    }

    pub fn as_duration(self) -> Option<Duration> {
        match self {
            Timeout::Finite(d) => Some(d),
            Timeout::Infinite => None,
        }
    }

    /// Agreement within `tolerance`. INFINITE matches only INFINITE.
    pub fn matches(self, other: Timeout, tolerance: Duration) -> bool {
        match (self, other) {
            (Timeout::Infinite, Timeout::Infinite) => true,
            (Timeout::Finite(a), Timeout::Finite(b)) => {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                hi - lo <= tolerance
            }
            _ => false,
        }
    }
}

impl fmt::Display for Timeout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Timeout::Finite(d) => write!(f, "{:.3}s", d.as_secs_f64()),
            Timeout::Infinite => write!(f, "infinite"),
        }
    }
}

// On the wire (DB files, scenario files, reports) a timeout is a number of
// seconds or the string "infinite".
impl Serialize for Timeout {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Timeout::Finite(d) => serializer.serialize_f64(d.as_secs_f64()),
            Timeout::Infinite => serializer.serialize_str("infinite"),
        }
    }
}

impl<'de> Deserialize<'de> for Timeout {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct TimeoutVisitor;

        impl Visitor<'_> for TimeoutVisitor {
            type Value = Timeout;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number of seconds or the string \"infinite\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Timeout, E> {
                if !v.is_finite() || v <= 0.0 {
                    return Err(E::custom("finite timeout must be a positive number"));
                }
                Ok(Timeout::from_secs_f64(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Timeout, E> {
                self.visit_f64(v as f64)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Timeout, E> {
                self.visit_f64(v as f64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Timeout, E> {
                if v.eq_ignore_ascii_case("infinite") {
                    Ok(Timeout::Infinite)
                } else {
                    Err(E::custom(format!(
                        "expected \"infinite\" or a number, got {v:?}"
                    )))
                }
            }
        }

        deserializer.deserialize_any(TimeoutVisitor)
    }
}

pub fn millis(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub fn duration_from_millis(ms: f64) -> Duration {
    Duration::from_nanos((ms * 1e6).round().max(0.0) as u64)
}

/// Parse a duration with a mandatory unit suffix: `250us`, `5ms`, `10s`, `2m`.
///
/// A bare number is rejected so that callers can never confuse the paper-era
/// seconds/milliseconds ambiguity.
pub fn parse_duration(s: &str) -> Result<Duration, String> {
    let s = s.trim();
    let split = s
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .ok_or_else(|| format!("duration {s:?} is missing a unit suffix (us, ms, s, m)"))?;
    let (num, unit) = s.split_at(split);
    let value: f64 = num
        .parse()
        .map_err(|_| format!("invalid duration value {num:?}"))?;
    if !value.is_finite() || value < 0.0 {
        return Err(format!("duration value {num:?} out of range"));
    }
    let secs = match unit {
        "us" => value / 1e6,
        "ms" => value / 1e3,
        "s" => value,
        "m" => value * 60.0,
        other => return Err(format!("unknown duration unit {other:?}")),
    };
    Ok(Duration::from_secs_f64(secs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timeout_matching_rules() {
        let tol = Duration::from_secs(1);
        assert!(Timeout::Infinite.matches(Timeout::Infinite, tol));
        assert!(!Timeout::Infinite.matches(Timeout::from_secs_f64(600.0), tol));
        assert!(Timeout::from_secs_f64(10.0).matches(Timeout::from_secs_f64(10.4), tol));
        assert!(!Timeout::from_secs_f64(10.0).matches(Timeout::from_secs_f64(11.5), tol));
    }

    #[test]
    fn timeout_serde_forms() {
        let inf: Timeout = serde_json::from_str("\"infinite\"").unwrap();
        assert!(inf.is_infinite());
        let five: Timeout = serde_json::from_str("5").unwrap();
        assert_eq!(five, Timeout::from_secs_f64(5.0));
        assert!(serde_json::from_str::<Timeout>("0").is_err());
        assert!(serde_json::from_str::<Timeout>("\"forever\"").is_err());
        assert_eq!(serde_json::to_string(&inf).unwrap(), "\"infinite\"");
        assert_eq!(serde_json::to_string(&five).unwrap(), "5.0");
    }

    #[test]
    fn duration_suffix_required() {
        assert_eq!(parse_duration("5ms").unwrap(), Duration::from_millis(5));
        assert_eq!(parse_duration("10s").unwrap(), Duration::from_secs(10));
        assert_eq!(parse_duration("250us").unwrap(), Duration::from_micros(250));
        assert!(parse_duration("10").is_err());
        assert!(parse_duration("10h").is_err());
    }
}
