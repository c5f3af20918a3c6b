//! Deterministic discrete-event core: a virtual clock, one OpenFlow-style
//! switch with a flow table, a reactive controller model, and the hosts on
//! its access ports. Every random draw comes from seeded generators, so an
//! event trace is a pure function of (config, seed).

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::net::Ipv4Addr;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{ControllerModel, LldpTemplate};
use super::{HostConfig, LinkModel};
use crate::transport::{ArpProbeInfo, CapturedFrame};
use crate::units::{Timeout, Timestamp};
use crate::wire::{
    build_ethernet, parse_ethernet, ArpPacket, MacAddr, ARP_OP_REPLY, ARP_OP_REQUEST,
    ETHERTYPE_ARP, ETHERTYPE_LLDP,
};

pub const ATTACKER: usize = 0;
pub const TARGET: usize = 1;
pub const BYSTANDER: usize = 2;

/// Gap between an LLDP frame and its broadcast companion frame, for
/// controllers that emit one.
const COMPANION_GAP: Duration = Duration::from_millis(1);

fn ns(d: Duration) -> u64 {
    d.as_nanos() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissReason {
    NoEntry,
    IdleExpired,
    HardExpired,
}

/// Timestamped event log. `SwitchHit` snapshots the entry state that
/// justified the forward, which is what the expiry audit checks.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceEvent {
    ProbeSent {
        at: Timestamp,
        src: Ipv4Addr,
        dst: Ipv4Addr,
        token: u64,
    },
    SwitchHit {
        at: Timestamp,
        src: Ipv4Addr,
        dst: Ipv4Addr,
        installed_at: Timestamp,
        last_hit: Timestamp,
        idle: Timeout,
        hard: Timeout,
    },
    SwitchMiss {
        at: Timestamp,
        src: Ipv4Addr,
        dst: Ipv4Addr,
        reason: MissReason,
    },
    FlowInstalled {
        at: Timestamp,
        src: Ipv4Addr,
        dst: Ipv4Addr,
    },
    EchoDelivered {
        at: Timestamp,
        host: usize,
        token: u64,
        reply: bool,
    },
    EchoDropped {
        at: Timestamp,
        token: u64,
    },
    FrameDelivered {
        at: Timestamp,
        host: usize,
        ethertype: u16,
    },
    FrameDropped {
        at: Timestamp,
        ethertype: u16,
    },
    LldpCycle {
        at: Timestamp,
        cycle: u64,
    },
    ArpPacketIn {
        at: Timestamp,
        target_ip: Ipv4Addr,
    },
    ArpRebroadcast {
        at: Timestamp,
    },
}

impl TraceEvent {
    pub fn at(&self) -> Timestamp {
        match self {
            TraceEvent::ProbeSent { at, .. }
            | TraceEvent::SwitchHit { at, .. }
            | TraceEvent::SwitchMiss { at, .. }
            | TraceEvent::FlowInstalled { at, .. }
            | TraceEvent::EchoDelivered { at, .. }
            | TraceEvent::EchoDropped { at, .. }
            | TraceEvent::FrameDelivered { at, .. }
            | TraceEvent::FrameDropped { at, .. }
            | TraceEvent::LldpCycle { at, .. }
            | TraceEvent::ArpPacketIn { at, .. }
            | TraceEvent::ArpRebroadcast { at } => *at,
        }
    }
}

/// No packet may be forwarded via an entry whose idle or hard deadline has
/// passed. Checked against the hit snapshots in a trace.
pub fn audit_flow_discipline(trace: &[TraceEvent]) -> Result<(), String> {
    for ev in trace {
        if let TraceEvent::SwitchHit {
            at,
            src,
            dst,
            installed_at,
            last_hit,
            idle,
            hard,
        } = ev
        {
            if let Timeout::Finite(h) = hard {
                if *at > *installed_at + *h {
                    return Err(format!(
                        "flow ({src} -> {dst}) used at {at} past hard deadline ({installed_at} + {h:?})"
                    ));
                }
            }
            if let Timeout::Finite(i) = idle {
                if *at > *last_hit + *i {
                    return Err(format!(
                        "flow ({src} -> {dst}) used at {at} past idle deadline ({last_hit} + {i:?})"
                    ));
                }
            }
        }
    }
    Ok(())
}

struct FlowEntry {
    installed_at: u64,
    last_hit: u64,
    idle: Timeout,
    hard: Timeout,
}

impl FlowEntry {
    fn miss_reason(&self, now: u64) -> Option<MissReason> {
        if let Timeout::Finite(h) = self.hard {
            if now > self.installed_at + ns(h) {
                return Some(MissReason::HardExpired);
            }
        }
        if let Timeout::Finite(i) = self.idle {
            if now > self.last_hit + ns(i) {
                return Some(MissReason::IdleExpired);
            }
        }
        None
    }
}

#[derive(Debug, Clone)]
struct EchoPkt {
    src: Ipv4Addr,
    dst: Ipv4Addr,
    token: u64,
    reply: bool,
}

enum Event {
    EchoAtSwitch { pkt: EchoPkt, remaining_ns: u64 },
    CtrlEchoDone { pkt: EchoPkt, remaining_ns: u64 },
    EchoDeliver { host: usize, pkt: EchoPkt },
    ArpAtSwitch { frame: Vec<u8> },
    CtrlArpRebroadcast { payload: Vec<u8> },
    FrameDeliver { host: usize, frame: Vec<u8> },
}

struct Scheduled {
    at: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(other.at, other.seq))
    }
}

struct LldpEmitter {
    template: LldpTemplate,
    next_at: u64,
    cycle: u64,
    // Dedicated stream so the discovery schedule is independent of how
    // much probe traffic ran in between.
    rng: ChaCha8Rng,
}

pub(crate) struct Host {
    pub ip: Ipv4Addr,
    pub mac: MacAddr,
}

pub struct SimNet {
    lat_ns: u64,
    jit_ns: u64,
    loss: f64,
    hosts: Vec<Host>,
    switch_mac: MacAddr,
    controller: ControllerModel,
    clock: u64,
    heap: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
    rng: ChaCha8Rng,
    flows: HashMap<(Ipv4Addr, Ipv4Addr), FlowEntry>,
    lldp: Option<LldpEmitter>,
    trace_on: bool,
    trace: Vec<TraceEvent>,
    capture_on: bool,
    captured: Vec<CapturedFrame>,
    bystander_rx: Vec<CapturedFrame>,
    echo_arrivals: HashMap<u64, u64>,
}

impl SimNet {
    pub(crate) fn new(
        link: &LinkModel,
        hosts: &[HostConfig],
        switch_mac: MacAddr,
        controller: ControllerModel,
        seed: u64,
    ) -> SimNet {
        let lldp = controller.lldp.clone().map(|template| LldpEmitter {
            template,
            next_at: 0,
            cycle: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x4c4c_4450),
        });
        SimNet {
            lat_ns: (link.one_way_latency_ms * 1e6).round() as u64,
            jit_ns: (link.jitter_ms * 1e6).round() as u64,
            loss: link.loss_rate,
            hosts: hosts.iter().map(|h| Host { ip: h.ip, mac: h.mac }).collect(),
            switch_mac,
            controller,
            clock: 0,
            heap: BinaryHeap::new(),
            seq: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            flows: HashMap::new(),
            lldp,
            trace_on: false,
            trace: Vec::new(),
            capture_on: false,
            captured: Vec::new(),
            bystander_rx: Vec::new(),
            echo_arrivals: HashMap::new(),
        }
    }

    pub fn now(&self) -> Timestamp {
        Timestamp::from_nanos(self.clock)
    }

    pub fn controller_name(&self) -> &str {
        &self.controller.name
    }

    pub(crate) fn attacker(&self) -> &Host {
        &self.hosts[ATTACKER]
    }

    pub(crate) fn target_ip(&self) -> Ipv4Addr {
        self.hosts[TARGET].ip
    }

    pub(crate) fn host_ips(&self) -> impl Iterator<Item = Ipv4Addr> + '_ {
        self.hosts.iter().map(|h| h.ip)
    }

    pub fn set_trace(&mut self, on: bool) {
        self.trace_on = on;
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    /// Frames a third (non-attacker, non-target) host saw. Recorded only
    /// while tracing is on.
    pub fn bystander_frames(&self) -> &[CapturedFrame] {
        &self.bystander_rx
    }

    pub(crate) fn set_capture(&mut self, on: bool) {
        self.capture_on = on;
        if on {
            self.captured.clear();
        }
    }

    pub(crate) fn drain_captured(&mut self) -> Vec<CapturedFrame> {
        std::mem::take(&mut self.captured)
    }

    fn push(&mut self, at: u64, event: Event) {
        let seq = self.seq;
        self.seq += 1;
        self.heap.push(Reverse(Scheduled { at, seq, event }));
    }

    fn record(&mut self, ev: TraceEvent) {
        if self.trace_on {
            self.trace.push(ev);
        }
    }

    fn lost(&mut self) -> bool {
        self.loss > 0.0 && self.rng.gen_bool(self.loss)
    }

    /// One-way host-to-host transit time: latency with symmetric uniform
    /// jitter applied once per leg.
    fn draw_leg(&mut self) -> u64 {
        if self.jit_ns == 0 {
            return self.lat_ns;
        }
        let j = self.jit_ns as i64;
        (self.lat_ns as i64 + self.rng.gen_range(-j..=j)) as u64
    }

    fn controller_delay(&mut self) -> u64 {
        let base = ns(self.controller.processing_delay);
        let jit = ns(self.controller.processing_jitter);
        if jit == 0 {
            return base;
        }
        let j = jit as i64;
        (base as i64 + self.rng.gen_range(-j..=j)).max(0) as u64
    }

    fn host_by_ip(&self, ip: Ipv4Addr) -> Option<usize> {
        self.hosts.iter().position(|h| h.ip == ip)
    }

    fn host_by_mac(&self, mac: MacAddr) -> Option<usize> {
        self.hosts.iter().position(|h| h.mac == mac)
    }

    /// Attacker sends one echo request. A lost leg simply never schedules
    /// the switch event; the caller observes a timeout.
    pub(crate) fn send_echo(&mut self, src: Ipv4Addr, dst: Ipv4Addr, token: u64) {
        let at = self.now();
        self.record(TraceEvent::ProbeSent {
            at,
            src,
            dst,
            token,
        });
        let pkt = EchoPkt {
            src,
            dst,
            token,
            reply: false,
        };
        self.forward_echo(pkt, self.clock);
    }

    fn forward_echo(&mut self, pkt: EchoPkt, from_ns: u64) {
        if self.lost() {
            let at = Timestamp::from_nanos(from_ns);
            self.record(TraceEvent::EchoDropped {
                at,
                token: pkt.token,
            });
            return;
        }
        let leg = self.draw_leg();
        self.push(
            from_ns + leg / 2,
            Event::EchoAtSwitch {
                pkt,
                remaining_ns: leg - leg / 2,
            },
        );
    }

    /// Attacker broadcasts an ARP request for `target_ip`.
    pub(crate) fn send_arp_request(&mut self, target_ip: Ipv4Addr) -> ArpProbeInfo {
        let attacker_mac = self.hosts[ATTACKER].mac;
        let attacker_ip = self.hosts[ATTACKER].ip;
        let arp = ArpPacket::request(attacker_mac, attacker_ip, target_ip);
        let frame = build_ethernet(
            MacAddr::BROADCAST,
            attacker_mac,
            ETHERTYPE_ARP,
            &arp.encode(),
        );
        if self.lost() {
            self.record(TraceEvent::FrameDropped {
                at: self.now(),
                ethertype: ETHERTYPE_ARP,
            });
        } else {
            let leg = self.draw_leg();
            self.push(self.clock + leg / 2, Event::ArpAtSwitch { frame });
        }
        ArpProbeInfo {
            target_ip,
            sender_mac: attacker_mac,
            sent_at: self.now(),
        }
    }

    /// Process every event strictly before `t`, leaving the clock at `t`.
    pub(crate) fn run_until(&mut self, t: Timestamp) {
        let t_ns = t.as_nanos();
        self.advance_lldp(t_ns);
        while let Some(Reverse(next)) = self.heap.peek() {
            if next.at >= t_ns {
                break;
            }
            let Reverse(s) = self.heap.pop().expect("peeked");
            self.clock = s.at;
            self.process(s.at, s.event);
        }
        self.clock = self.clock.max(t_ns);
    }

    /// Run until the reply for `token` reaches the attacker or the clock
    /// hits `deadline`, whichever is first.
    pub(crate) fn run_until_echo(&mut self, token: u64, deadline: Timestamp) -> Option<Timestamp> {
        let d_ns = deadline.as_nanos();
        self.advance_lldp(d_ns);
        loop {
            if let Some(at) = self.echo_arrivals.remove(&token) {
                return Some(Timestamp::from_nanos(at));
            }
            match self.heap.peek() {
                Some(Reverse(next)) if next.at < d_ns => {
                    let Reverse(s) = self.heap.pop().expect("peeked");
                    self.clock = s.at;
                    self.process(s.at, s.event);
                }
                _ => {
                    self.clock = self.clock.max(d_ns);
                    return None;
                }
            }
        }
    }

    /// Advance the discovery emitter past all cycles before `until_ns`.
    /// Cycles are materialized as deliverable frames only while someone is
    /// looking (capture or trace); otherwise only the schedule advances.
    fn advance_lldp(&mut self, until_ns: u64) {
        let Some(mut em) = self.lldp.take() else {
            return;
        };
        let materialize = self.capture_on || self.trace_on;
        while em.next_at < until_ns {
            let at = em.next_at;
            let cycle = em.cycle;
            em.cycle += 1;
            let base = ns(em.template.interval);
            let step = if em.template.interval_variable {
                let j = (base / 10) as i64;
                (base as i64 + em.rng.gen_range(-j..=j)).max(1) as u64
            } else {
                base.max(1)
            };
            em.next_at = at + step;
            if !materialize {
                continue;
            }
            self.record(TraceEvent::LldpCycle {
                at: Timestamp::from_nanos(at),
                cycle,
            });
            // Attacker-port discovery frame. Frames for the other ports
            // exist but never reach the attacker's segment.
            let spec = em.template.frame_spec(self.switch_mac, "p1");
            let payload = spec.encode();
            let lldp_frame = build_ethernet(
                MacAddr::LLDP_MULTICAST,
                self.switch_mac,
                ETHERTYPE_LLDP,
                &payload,
            );
            let lldp_lost = self.loss > 0.0 && em.rng.gen_bool(self.loss);
            let half = |rng: &mut ChaCha8Rng, lat: u64, jit: u64| {
                if jit == 0 {
                    lat / 2
                } else {
                    let j = jit as i64;
                    ((lat as i64 + rng.gen_range(-j..=j)) / 2).max(0) as u64
                }
            };
            if !lldp_lost {
                let d = half(&mut em.rng, self.lat_ns, self.jit_ns);
                self.push(
                    at + d,
                    Event::FrameDeliver {
                        host: ATTACKER,
                        frame: lldp_frame,
                    },
                );
            } else {
                self.record(TraceEvent::FrameDropped {
                    at: Timestamp::from_nanos(at),
                    ethertype: ETHERTYPE_LLDP,
                });
            }
            if let Some(ethertype) = em.template.companion_ethertype {
                let companion = build_ethernet(
                    MacAddr::BROADCAST,
                    self.switch_mac,
                    ethertype,
                    &payload,
                );
                let lost = self.loss > 0.0 && em.rng.gen_bool(self.loss);
                if !lost {
                    let d = half(&mut em.rng, self.lat_ns, self.jit_ns);
                    let when = at + ns(COMPANION_GAP) + d;
                    self.push(
                        when,
                        Event::FrameDeliver {
                            host: ATTACKER,
                            frame: companion.clone(),
                        },
                    );
                    if self.trace_on && self.hosts.len() > BYSTANDER {
                        self.push(
                            when,
                            Event::FrameDeliver {
                                host: BYSTANDER,
                                frame: companion,
                            },
                        );
                    }
                } else {
                    self.record(TraceEvent::FrameDropped {
                        at: Timestamp::from_nanos(at),
                        ethertype,
                    });
                }
            }
        }
        self.lldp = Some(em);
    }

    fn process(&mut self, at_ns: u64, event: Event) {
        let at = Timestamp::from_nanos(at_ns);
        match event {
            Event::EchoAtSwitch { pkt, remaining_ns } => {
                let key = (pkt.src, pkt.dst);
                let hit = match self.flows.get_mut(&key) {
                    Some(entry) => match entry.miss_reason(at_ns) {
                        None => {
                            let snapshot = TraceEvent::SwitchHit {
                                at,
                                src: pkt.src,
                                dst: pkt.dst,
                                installed_at: Timestamp::from_nanos(entry.installed_at),
                                last_hit: Timestamp::from_nanos(entry.last_hit),
                                idle: entry.idle,
                                hard: entry.hard,
                            };
                            entry.last_hit = at_ns;
                            self.record(snapshot);
                            true
                        }
                        Some(reason) => {
                            self.flows.remove(&key);
                            self.record(TraceEvent::SwitchMiss {
                                at,
                                src: pkt.src,
                                dst: pkt.dst,
                                reason,
                            });
                            false
                        }
                    },
                    None => {
                        self.record(TraceEvent::SwitchMiss {
                            at,
                            src: pkt.src,
                            dst: pkt.dst,
                            reason: MissReason::NoEntry,
                        });
                        false
                    }
                };
                if hit {
                    self.schedule_echo_delivery(pkt, at_ns + remaining_ns);
                } else {
                    let delay = self.controller_delay();
                    self.push(at_ns + delay, Event::CtrlEchoDone { pkt, remaining_ns });
                }
            }
            Event::CtrlEchoDone { pkt, remaining_ns } => {
                // Reactive install for both directions, then packet-out.
                for key in [(pkt.src, pkt.dst), (pkt.dst, pkt.src)] {
                    self.flows.insert(
                        key,
                        FlowEntry {
                            installed_at: at_ns,
                            last_hit: at_ns,
                            idle: self.controller.idle_timeout,
                            hard: self.controller.hard_timeout,
                        },
                    );
                    self.record(TraceEvent::FlowInstalled {
                        at,
                        src: key.0,
                        dst: key.1,
                    });
                }
                self.schedule_echo_delivery(pkt, at_ns + remaining_ns);
            }
            Event::EchoDeliver { host, pkt } => {
                self.record(TraceEvent::EchoDelivered {
                    at,
                    host,
                    token: pkt.token,
                    reply: pkt.reply,
                });
                if pkt.reply {
                    if host == ATTACKER {
                        self.echo_arrivals.insert(pkt.token, at_ns);
                    }
                } else {
                    // The destination end-host echoes back immediately; its
                    // processing time is assumed negligible.
                    let reply = EchoPkt {
                        src: pkt.dst,
                        dst: pkt.src,
                        token: pkt.token,
                        reply: true,
                    };
                    self.forward_echo(reply, at_ns);
                }
            }
            Event::ArpAtSwitch { frame } => {
                let view = parse_ethernet(&frame).expect("frames built internally");
                let src_mac = view.src;
                let arp = match ArpPacket::decode(view.payload) {
                    Ok(arp) => arp,
                    Err(_) => return,
                };
                let ingress = self.host_by_mac(src_mac);
                // Broadcast: flood to every port but the ingress one.
                for h in 0..self.hosts.len() {
                    if Some(h) == ingress {
                        continue;
                    }
                    if self.lost() {
                        self.record(TraceEvent::FrameDropped {
                            at,
                            ethertype: ETHERTYPE_ARP,
                        });
                        continue;
                    }
                    let d = self.draw_leg() / 2;
                    self.push(
                        at_ns + d,
                        Event::FrameDeliver {
                            host: h,
                            frame: frame.clone(),
                        },
                    );
                }
                if arp.op == ARP_OP_REQUEST && self.host_by_ip(arp.target_ip).is_none() {
                    // Unknown destination: the switch also escalates to the
                    // controller.
                    self.record(TraceEvent::ArpPacketIn {
                        at,
                        target_ip: arp.target_ip,
                    });
                    if self.controller.arp_rebroadcast {
                        let delay = self.controller_delay();
                        self.push(
                            at_ns + delay,
                            Event::CtrlArpRebroadcast {
                                payload: view.payload.to_vec(),
                            },
                        );
                    }
                }
            }
            Event::CtrlArpRebroadcast { payload } => {
                self.record(TraceEvent::ArpRebroadcast { at });
                let frame = build_ethernet(
                    MacAddr::BROADCAST,
                    self.switch_mac,
                    ETHERTYPE_ARP,
                    &payload,
                );
                // Switch-originated: goes out every port, the attacker's
                // included.
                for h in 0..self.hosts.len() {
                    if self.lost() {
                        self.record(TraceEvent::FrameDropped {
                            at,
                            ethertype: ETHERTYPE_ARP,
                        });
                        continue;
                    }
                    let d = self.draw_leg() / 2;
                    self.push(
                        at_ns + d,
                        Event::FrameDeliver {
                            host: h,
                            frame: frame.clone(),
                        },
                    );
                }
            }
            Event::FrameDeliver { host, frame } => {
                let ethertype = parse_ethernet(&frame).expect("frames built internally").ethertype;
                self.record(TraceEvent::FrameDelivered { at, host, ethertype });
                if host == ATTACKER && self.capture_on {
                    self.captured
                        .push(CapturedFrame::new(frame.clone(), at).expect("frames built internally"));
                } else if host == BYSTANDER && self.trace_on {
                    self.bystander_rx
                        .push(CapturedFrame::new(frame.clone(), at).expect("frames built internally"));
                }
                self.maybe_arp_reply(host, &frame, at_ns);
            }
        }
    }

    fn schedule_echo_delivery(&mut self, pkt: EchoPkt, when_ns: u64) {
        let host = if pkt.reply {
            // Replies go back to whoever sent the request; spoofed source
            // aliases still belong to the attacker's port.
            Some(ATTACKER)
        } else {
            self.host_by_ip(pkt.dst)
        };
        // An unreachable destination dies here and the probe times out.
        if let Some(host) = host {
            self.push(when_ns, Event::EchoDeliver { host, pkt });
        }
    }

    /// Hosts answer ARP requests for their own address with a unicast
    /// reply back through the switch.
    fn maybe_arp_reply(&mut self, host: usize, frame: &[u8], at_ns: u64) {
        let view = match parse_ethernet(frame) {
            Ok(v) => v,
            Err(_) => return,
        };
        if view.ethertype != ETHERTYPE_ARP {
            return;
        }
        let Ok(arp) = ArpPacket::decode(view.payload) else {
            return;
        };
        if arp.op != ARP_OP_REQUEST || self.hosts[host].ip != arp.target_ip {
            return;
        }
        let me = &self.hosts[host];
        let reply = ArpPacket {
            op: ARP_OP_REPLY,
            sender_mac: me.mac,
            sender_ip: me.ip,
            target_mac: arp.sender_mac,
            target_ip: arp.sender_ip,
        };
        let reply_frame = build_ethernet(arp.sender_mac, me.mac, ETHERTYPE_ARP, &reply.encode());
        let Some(dst_host) = self.host_by_mac(arp.sender_mac) else {
            return;
        };
        if self.lost() {
            self.record(TraceEvent::FrameDropped {
                at: Timestamp::from_nanos(at_ns),
                ethertype: ETHERTYPE_ARP,
            });
            return;
        }
        let d = self.draw_leg();
        self.push(
            at_ns + d,
            Event::FrameDeliver {
                host: dst_host,
                frame: reply_frame,
            },
        );
    }
}
