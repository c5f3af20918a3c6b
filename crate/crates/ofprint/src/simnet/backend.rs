//! [`ProbeTransport`] implementation backed by a [`SimNet`] instance.

use std::net::Ipv4Addr;
use std::time::Duration;

use super::engine::SimNet;
use crate::transport::{
    ArpProbeInfo, CapturedFrame, ProbeTarget, ProbeTransport, RttSample, TransportError,
    DEFAULT_PROBE_TIMEOUT,
};
use crate::units::{millis, Timestamp};

pub struct SimTransport {
    net: SimNet,
    probe_timeout: Duration,
    next_token: u64,
    spoof_counter: u32,
    next_sequence: u32,
}

impl SimTransport {
    pub fn new(net: SimNet) -> Self {
        SimTransport {
            net,
            probe_timeout: DEFAULT_PROBE_TIMEOUT,
            next_token: 1,
            spoof_counter: 0,
            next_sequence: 1,
        }
    }

    pub fn set_probe_timeout(&mut self, timeout: Duration) {
        self.probe_timeout = timeout;
    }

    pub fn net(&self) -> &SimNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut SimNet {
        &mut self.net
    }

    pub fn into_net(self) -> SimNet {
        self.net
    }

    /// The conventional target for this scenario: probe the second host,
    /// force misses via aliases in an unused range.
    pub fn default_target(&self) -> ProbeTarget {
        ProbeTarget::with_spoof(self.net.target_ip(), default_spoof_base(&self.net))
    }

    /// Each miss-forcing probe gets a fresh alias so no installed entry
    /// can match it.
    fn alias(&mut self, base: Ipv4Addr) -> Ipv4Addr {
        let alias = Ipv4Addr::from(u32::from(base).wrapping_add(self.spoof_counter));
        self.spoof_counter += 1;
        alias
    }
}

pub(crate) fn default_spoof_base(net: &SimNet) -> Ipv4Addr {
    // Attacker's address pushed into a distant /24 of the same space.
    let attacker = u32::from(net.attacker().ip);
    Ipv4Addr::from(attacker.wrapping_add(99 << 8))
}

impl ProbeTransport for SimTransport {
    fn now(&self) -> Timestamp {
        self.net.now()
    }

    fn wait(&mut self, d: Duration) {
        let until = self.net.now() + d;
        self.net.run_until(until);
    }

    fn send_probe(&mut self, target: &ProbeTarget) -> Result<RttSample, TransportError> {
        let attacker_ip = self.net.attacker().ip;
        let src = match target.spoof_source {
            Some(base) => {
                if base == attacker_ip {
                    return Err(TransportError::InvalidTarget(
                        "spoofed source equals the real source".into(),
                    ));
                }
                let alias = self.alias(base);
                if self.net.host_ips().any(|ip| ip == alias) {
                    return Err(TransportError::InvalidTarget(format!(
                        "spoof alias {alias} collides with a host address"
                    )));
                }
                alias
            }
            None => attacker_ip,
        };
        let token = self.next_token;
        self.next_token += 1;
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        let sent_at = self.net.now();
        self.net.send_echo(src, target.destination, token);
        let deadline = sent_at + self.probe_timeout;
        let arrival = self.net.run_until_echo(token, deadline);
        Ok(RttSample {
            sequence,
            sent_at,
            rtt_ms: arrival.map(|at| millis(at - sent_at)),
        })
    }

    fn capture_frames(
        &mut self,
        ethertypes: &[u16],
        window: Duration,
    ) -> Result<Vec<CapturedFrame>, TransportError> {
        self.net.set_capture(true);
        let end = self.net.now() + window;
        self.net.run_until(end);
        let mut frames = self.net.drain_captured();
        self.net.set_capture(false);
        frames.retain(|f| ethertypes.contains(&f.ethertype));
        Ok(frames)
    }

    fn send_arp_probe(
        &mut self,
        unknown_ip: Ipv4Addr,
        window: Duration,
    ) -> Result<(ArpProbeInfo, Vec<CapturedFrame>), TransportError> {
        self.net.set_capture(true);
        let info = self.net.send_arp_request(unknown_ip);
        let end = self.net.now() + window;
        self.net.run_until(end);
        let mut frames = self.net.drain_captured();
        self.net.set_capture(false);
        frames.retain(|f| f.ethertype == crate::wire::ETHERTYPE_ARP);
        Ok((info, frames))
    }
}
