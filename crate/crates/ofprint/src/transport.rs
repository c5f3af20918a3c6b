//! The attacker's data-plane capabilities, abstracted: echo probes with
//! RTT measurement, miss-forcing probes, ARP probes, and promiscuous
//! observation of the local segment. Backed either by the deterministic
//! simulator or (behind the `live` feature) by raw sockets.

use std::net::Ipv4Addr;
use std::time::Duration;

use thiserror::Error;

use crate::units::Timestamp;
use crate::wire::{self, MacAddr};

/// Echo payload size, held constant across all measurements so payload
/// handling can never skew per-controller comparisons.
pub const PROBE_PAYLOAD_BYTES: usize = 56;

pub const DEFAULT_PROBE_TIMEOUT: Duration = Duration::from_secs(1);

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("transport is down: {0}")]
    Down(String),
    #[error("capture unsupported: {0}")]
    CaptureUnsupported(String),
    #[error("invalid probe target: {0}")]
    InvalidTarget(String),
    #[error(transparent)]
    Wire(#[from] wire::WireError),
}

/// Where a probe goes. A spoofed source turns the probe into a guaranteed
/// table miss: each send uses a fresh source alias so no installed flow
/// entry can match it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeTarget {
    pub destination: Ipv4Addr,
    pub spoof_source: Option<Ipv4Addr>,
}

impl ProbeTarget {
    pub fn new(destination: Ipv4Addr) -> Self {
        ProbeTarget {
            destination,
            spoof_source: None,
        }
    }

    pub fn with_spoof(destination: Ipv4Addr, spoof_base: Ipv4Addr) -> Self {
        ProbeTarget {
            destination,
            spoof_source: Some(spoof_base),
        }
    }

    /// The same destination, probed through the normal (non-spoofed) path.
    pub fn plain(&self) -> ProbeTarget {
        ProbeTarget::new(self.destination)
    }

    /// The same destination, forced to miss; requires a spoof base.
    pub fn miss(&self) -> Option<ProbeTarget> {
        self.spoof_source.map(|_| *self)
    }
}

/// One echo exchange. `rtt_ms` is present exactly when the reply arrived
/// before the probe timeout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RttSample {
    pub sequence: u32,
    pub sent_at: Timestamp,
    pub rtt_ms: Option<f64>,
}

impl RttSample {
    pub fn lost(&self) -> bool {
        self.rtt_ms.is_none()
    }
}

/// A raw Ethernet frame seen on the attacker's segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapturedFrame {
    pub raw: Vec<u8>,
    pub received_at: Timestamp,
    pub ethertype: u16,
}

impl CapturedFrame {
    pub fn new(raw: Vec<u8>, received_at: Timestamp) -> Result<Self, TransportError> {
        let view = wire::parse_ethernet(&raw)?;
        let ethertype = view.ethertype;
        Ok(CapturedFrame {
            raw,
            received_at,
            ethertype,
        })
    }

    pub fn src_mac(&self) -> MacAddr {
        wire::parse_ethernet(&self.raw).expect("validated at construction").src
    }

    pub fn dst_mac(&self) -> MacAddr {
        wire::parse_ethernet(&self.raw).expect("validated at construction").dst
    }

    pub fn payload(&self) -> &[u8] {
        &self.raw[wire::ETHERNET_HEADER_LEN..]
    }
}

/// Identifies the ARP request a probe sent, so the detector can tell
/// echoes of it apart from unrelated ARP traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArpProbeInfo {
    pub target_ip: Ipv4Addr,
    pub sender_mac: MacAddr,
    pub sent_at: Timestamp,
}

/// One transport handle is owned by one scan session at a time; timing
/// loops must not interleave probes on a single handle.
pub trait ProbeTransport {
    /// Monotonic session clock.
    fn now(&self) -> Timestamp;

    /// Idle for `d` (virtual time on the simulated backend).
    fn wait(&mut self, d: Duration);

    /// Send one echo probe and measure its round trip. Timeouts come back
    /// as lost samples, not errors; errors mean the transport itself broke.
    fn send_probe(&mut self, target: &ProbeTarget) -> Result<RttSample, TransportError>;

    /// Record frames whose ethertype is in `ethertypes` for the next
    /// `window` of time (half-open: a frame at exactly `now + window` is
    /// not included).
    fn capture_frames(
        &mut self,
        ethertypes: &[u16],
        window: Duration,
    ) -> Result<Vec<CapturedFrame>, TransportError>;

    /// Broadcast an ARP request for `unknown_ip` and return the ARP frames
    /// observed during `window`, excluding our own transmission.
    fn send_arp_probe(
        &mut self,
        unknown_ip: Ipv4Addr,
        window: Duration,
    ) -> Result<(ArpProbeInfo, Vec<CapturedFrame>), TransportError>;
}
