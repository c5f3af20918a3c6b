//! Raw-socket backend for scanning a real segment (Linux only). Needs
//! CAP_NET_RAW; the acceptance suite never touches this, all validated
//! behavior runs against the simulator.
//!
//! Probes are ICMP echo with a fixed 56-byte payload. Captures come from
//! an AF_PACKET socket in promiscuous mode, filtered by ethertype in
//! userspace. Spoofed-source probes build their own IPv4 header via
//! IP_HDRINCL; their replies are fished out of the promiscuous capture,
//! which works only when the segment floods them our way.

use std::net::Ipv4Addr;
use std::os::fd::{AsRawFd, FromRawFd, OwnedFd};
use std::time::{Duration, Instant};

use crate::transport::{
    ArpProbeInfo, CapturedFrame, ProbeTarget, ProbeTransport, RttSample, TransportError,
    DEFAULT_PROBE_TIMEOUT, PROBE_PAYLOAD_BYTES,
};
use crate::units::{millis, Timestamp};
use crate::wire::{build_ethernet, parse_ethernet, ArpPacket, MacAddr, ETHERTYPE_ARP};

const ICMP_ECHO_REQUEST: u8 = 8;
const ICMP_ECHO_REPLY: u8 = 0;

pub struct LiveTransport {
    icmp: OwnedFd,
    raw_ip: OwnedFd,
    packet: OwnedFd,
    ifindex: i32,
    mac: MacAddr,
    source_ip: Ipv4Addr,
    started: Instant,
    ident: u16,
    seq: u16,
    probe_timeout: Duration,
}

fn last_errno(context: &str) -> TransportError {
    let err = std::io::Error::last_os_error();
    match err.raw_os_error() {
        Some(libc::EPERM) | Some(libc::EACCES) => TransportError::CaptureUnsupported(format!(
            "{context}: {err} (CAP_NET_RAW required)"
        )),
        _ => TransportError::Down(format!("{context}: {err}")),
    }
}

fn checked_fd(fd: i32, context: &str) -> Result<OwnedFd, TransportError> {
    if fd < 0 {
        return Err(last_errno(context));
    }
    // Safety: the fd was just returned by socket() and is owned here.
    Ok(unsafe { OwnedFd::from_raw_fd(fd) })
}

/// RFC 1071 checksum over `data`.
fn inet_checksum(data: &[u8]) -> u16 {
    let mut sum = 0u32;
    for chunk in data.chunks(2) {
        let word = if chunk.len() == 2 {
            u16::from_be_bytes([chunk[0], chunk[1]])
        } else {
            u16::from_be_bytes([chunk[0], 0])
        };
        sum = sum.wrapping_add(word as u32);
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

fn icmp_echo(ident: u16, seq: u16) -> Vec<u8> {
    let mut packet = vec![0u8; 8 + PROBE_PAYLOAD_BYTES];
    packet[0] = ICMP_ECHO_REQUEST;
    packet[4..6].copy_from_slice(&ident.to_be_bytes());
    packet[6..8].copy_from_slice(&seq.to_be_bytes());
    for (i, byte) in packet[8..].iter_mut().enumerate() {
        *byte = i as u8;
    }
    let csum = inet_checksum(&packet);
    packet[2..4].copy_from_slice(&csum.to_be_bytes());
    packet
}

fn ipv4_header(src: Ipv4Addr, dst: Ipv4Addr, payload_len: usize) -> Vec<u8> {
    let total = 20 + payload_len;
    let mut h = vec![0u8; 20];
    h[0] = 0x45; // v4, ihl 5
    h[2..4].copy_from_slice(&(total as u16).to_be_bytes());
    h[8] = 64; // ttl
    h[9] = libc::IPPROTO_ICMP as u8;
    h[12..16].copy_from_slice(&src.octets());
    h[16..20].copy_from_slice(&dst.octets());
    let csum = inet_checksum(&h);
    h[10..12].copy_from_slice(&csum.to_be_bytes());
    h
}

impl LiveTransport {
    pub fn open(iface: &str) -> Result<Self, TransportError> {
        if iface.len() >= libc::IFNAMSIZ {
            return Err(TransportError::Down(format!(
                "interface name {iface:?} too long"
            )));
        }
        let icmp = checked_fd(
            unsafe { libc::socket(libc::AF_INET, libc::SOCK_RAW, libc::IPPROTO_ICMP) },
            "icmp socket",
        )?;
        let raw_ip = checked_fd(
            unsafe { libc::socket(libc::AF_INET, libc::SOCK_RAW, libc::IPPROTO_RAW) },
            "raw ip socket",
        )?;
        let one: libc::c_int = 1;
        if unsafe {
            libc::setsockopt(
                raw_ip.as_raw_fd(),
                libc::IPPROTO_IP,
                libc::IP_HDRINCL,
                &one as *const _ as *const libc::c_void,
                std::mem::size_of::<libc::c_int>() as libc::socklen_t,
            )
        } < 0
        {
            return Err(last_errno("IP_HDRINCL"));
        }
        let packet = checked_fd(
            unsafe {
                libc::socket(
                    libc::AF_PACKET,
                    libc::SOCK_RAW,
                    (libc::ETH_P_ALL as u16).to_be() as libc::c_int,
                )
            },
            "packet socket",
        )?;

        // Interface index, MAC and primary IPv4 address.
        let mut ifr: libc::ifreq = unsafe { std::mem::zeroed() };
        for (dst, src) in ifr.ifr_name.iter_mut().zip(iface.as_bytes()) {
            *dst = *src as libc::c_char;
        }
        if unsafe { libc::ioctl(packet.as_raw_fd(), libc::SIOCGIFINDEX, &mut ifr) } < 0 {
            return Err(last_errno("SIOCGIFINDEX"));
        }
        let ifindex = unsafe { ifr.ifr_ifru.ifru_ifindex };
        if unsafe { libc::ioctl(packet.as_raw_fd(), libc::SIOCGIFHWADDR, &mut ifr) } < 0 {
            return Err(last_errno("SIOCGIFHWADDR"));
        }
        let mut mac = [0u8; 6];
        for (dst, src) in mac
            .iter_mut()
            .zip(unsafe { ifr.ifr_ifru.ifru_hwaddr.sa_data }.iter())
        {
            *dst = *src as u8;
        }
        if unsafe { libc::ioctl(icmp.as_raw_fd(), libc::SIOCGIFADDR, &mut ifr) } < 0 {
            return Err(last_errno("SIOCGIFADDR"));
        }
        let source_ip = {
            let addr =
                unsafe { &*(&ifr.ifr_ifru.ifru_addr as *const _ as *const libc::sockaddr_in) };
            Ipv4Addr::from(u32::from_be(addr.sin_addr.s_addr))
        };

        // Bind the capture to the interface and go promiscuous.
        let mut sll: libc::sockaddr_ll = unsafe { std::mem::zeroed() };
        sll.sll_family = libc::AF_PACKET as u16;
        sll.sll_protocol = (libc::ETH_P_ALL as u16).to_be();
        sll.sll_ifindex = ifindex;
        if unsafe {
            libc::bind(
                packet.as_raw_fd(),
                &sll as *const _ as *const libc::sockaddr,
                std::mem::size_of::<libc::sockaddr_ll>() as libc::socklen_t,
            )
        } < 0
        {
            return Err(last_errno("bind packet socket"));
        }
        let mreq = libc::packet_mreq {
            mr_ifindex: ifindex,
            mr_type: libc::PACKET_MR_PROMISC as u16,
            mr_alen: 0,
            mr_address: [0; 8],
        };
        if unsafe {
            libc::setsockopt(
                packet.as_raw_fd(),
                libc::SOL_PACKET,
                libc::PACKET_ADD_MEMBERSHIP,
                &mreq as *const _ as *const libc::c_void,
                std::mem::size_of::<libc::packet_mreq>() as libc::socklen_t,
            )
        } < 0
        {
            return Err(last_errno("PACKET_ADD_MEMBERSHIP"));
        }

        Ok(LiveTransport {
            icmp,
            raw_ip,
            packet,
            ifindex,
            mac: MacAddr(mac),
            source_ip,
            started: Instant::now(),
            ident: (std::process::id() & 0xffff) as u16,
            seq: 0,
            probe_timeout: DEFAULT_PROBE_TIMEOUT,
        })
    }

    pub fn set_probe_timeout(&mut self, timeout: Duration) {
        self.probe_timeout = timeout;
    }

    fn timestamp(&self) -> Timestamp {
        Timestamp::from_nanos(self.started.elapsed().as_nanos() as u64)
    }

    fn poll_readable(fd: i32, timeout: Duration) -> bool {
        let mut pfd = libc::pollfd {
            fd,
            events: libc::POLLIN,
            revents: 0,
        };
        let ms = timeout.as_millis().min(i32::MAX as u128) as libc::c_int;
        unsafe { libc::poll(&mut pfd, 1, ms.max(0)) > 0 && (pfd.revents & libc::POLLIN) != 0 }
    }

    fn send_echo(&mut self, target: &ProbeTarget, seq: u16) -> Result<(), TransportError> {
        let icmp = icmp_echo(self.ident, seq);
        let dst = libc::sockaddr_in {
            sin_family: libc::AF_INET as libc::sa_family_t,
            sin_port: 0,
            sin_addr: libc::in_addr {
                s_addr: u32::from(target.destination).to_be(),
            },
            sin_zero: [0; 8],
        };
        let (fd, buf) = match target.spoof_source {
            None => (self.icmp.as_raw_fd(), icmp),
            Some(base) => {
                // Distinct alias per probe keeps every spoofed flow fresh.
                let alias = Ipv4Addr::from(u32::from(base).wrapping_add(seq as u32));
                let mut pkt = ipv4_header(alias, target.destination, icmp.len());
                pkt.extend_from_slice(&icmp);
                (self.raw_ip.as_raw_fd(), pkt)
            }
        };
        let sent = unsafe {
            libc::sendto(
                fd,
                buf.as_ptr() as *const libc::c_void,
                buf.len(),
                0,
                &dst as *const _ as *const libc::sockaddr,
                std::mem::size_of::<libc::sockaddr_in>() as libc::socklen_t,
            )
        };
        if sent < 0 {
            return Err(last_errno("sendto"));
        }
        Ok(())
    }

    /// Pull one frame off the capture socket, if any arrives in time.
    fn recv_frame(&self, timeout: Duration) -> Option<Vec<u8>> {
        if !Self::poll_readable(self.packet.as_raw_fd(), timeout) {
            return None;
        }
        let mut buf = vec![0u8; 65_536];
        let n = unsafe {
            libc::recv(
                self.packet.as_raw_fd(),
                buf.as_mut_ptr() as *mut libc::c_void,
                buf.len(),
                0,
            )
        };
        if n <= 0 {
            return None;
        }
        buf.truncate(n as usize);
        Some(buf)
    }

    /// Does this frame carry the echo reply we are waiting for?
    fn matches_reply(&self, frame: &[u8], seq: u16) -> bool {
        let Ok(view) = parse_ethernet(frame) else {
            return false;
        };
        if view.ethertype != crate::wire::ETHERTYPE_IPV4 || view.payload.len() < 28 {
            return false;
        }
        let ip = view.payload;
        if ip[9] != libc::IPPROTO_ICMP as u8 {
            return false;
        }
        let ihl = ((ip[0] & 0x0f) as usize) * 4;
        let Some(icmp) = ip.get(ihl..) else {
            return false;
        };
        icmp.len() >= 8
            && icmp[0] == ICMP_ECHO_REPLY
            && icmp[4..6] == self.ident.to_be_bytes()
            && icmp[6..8] == seq.to_be_bytes()
    }
}

impl ProbeTransport for LiveTransport {
    fn now(&self) -> Timestamp {
        self.timestamp()
    }

    fn wait(&mut self, d: Duration) {
        std::thread::sleep(d);
    }

    fn send_probe(&mut self, target: &ProbeTarget) -> Result<RttSample, TransportError> {
        if target.spoof_source == Some(self.source_ip) {
            return Err(TransportError::InvalidTarget(
                "spoofed source equals the real source".into(),
            ));
        }
        self.seq = self.seq.wrapping_add(1);
        let seq = self.seq;
        let sequence = seq as u32;
        let sent_at = self.timestamp();
        let sent_instant = Instant::now();
        self.send_echo(target, seq)?;
        let deadline = sent_instant + self.probe_timeout;
        // Replies to our own address arrive on the ICMP socket; spoofed
        // replies can only be seen on the promiscuous capture.
        loop {
            let now = Instant::now();
            if now >= deadline {
                return Ok(RttSample {
                    sequence,
                    sent_at,
                    rtt_ms: None,
                });
            }
            let budget = deadline - now;
            match target.spoof_source {
                None => {
                    if !Self::poll_readable(self.icmp.as_raw_fd(), budget) {
                        continue;
                    }
                    let mut buf = [0u8; 2048];
                    let n = unsafe {
                        libc::recv(
                            self.icmp.as_raw_fd(),
                            buf.as_mut_ptr() as *mut libc::c_void,
                            buf.len(),
                            0,
                        )
                    };
                    if n < 28 {
                        continue;
                    }
                    let ip = &buf[..n as usize];
                    let ihl = ((ip[0] & 0x0f) as usize) * 4;
                    let icmp = &ip[ihl..];
                    if icmp.len() >= 8
                        && icmp[0] == ICMP_ECHO_REPLY
                        && icmp[4..6] == self.ident.to_be_bytes()
                        && icmp[6..8] == seq.to_be_bytes()
                    {
                        return Ok(RttSample {
                            sequence,
                            sent_at,
                            rtt_ms: Some(millis(sent_instant.elapsed())),
                        });
                    }
                }
                Some(_) => {
                    let Some(frame) = self.recv_frame(budget) else {
                        continue;
                    };
                    if self.matches_reply(&frame, seq) {
                        return Ok(RttSample {
                            sequence,
                            sent_at,
                            rtt_ms: Some(millis(sent_instant.elapsed())),
                        });
                    }
                }
            }
        }
    }

    fn capture_frames(
        &mut self,
        ethertypes: &[u16],
        window: Duration,
    ) -> Result<Vec<CapturedFrame>, TransportError> {
        let end = Instant::now() + window;
        let mut frames = Vec::new();
        loop {
            let now = Instant::now();
            if now >= end {
                return Ok(frames);
            }
            let Some(raw) = self.recv_frame(end - now) else {
                continue;
            };
            let at = self.timestamp();
            if let Ok(view) = parse_ethernet(&raw) {
                if ethertypes.contains(&view.ethertype) && view.src != self.mac {
                    if let Ok(frame) = CapturedFrame::new(raw, at) {
                        frames.push(frame);
                    }
                }
            }
        }
    }

    fn send_arp_probe(
        &mut self,
        unknown_ip: Ipv4Addr,
        window: Duration,
    ) -> Result<(ArpProbeInfo, Vec<CapturedFrame>), TransportError> {
        let arp = ArpPacket::request(self.mac, self.source_ip, unknown_ip);
        let frame = build_ethernet(MacAddr::BROADCAST, self.mac, ETHERTYPE_ARP, &arp.encode());
        let mut sll: libc::sockaddr_ll = unsafe { std::mem::zeroed() };
        sll.sll_family = libc::AF_PACKET as u16;
        sll.sll_protocol = ETHERTYPE_ARP.to_be();
        sll.sll_ifindex = self.ifindex;
        sll.sll_halen = 6;
        sll.sll_addr[..6].copy_from_slice(&MacAddr::BROADCAST.0);
        let sent = unsafe {
            libc::sendto(
                self.packet.as_raw_fd(),
                frame.as_ptr() as *const libc::c_void,
                frame.len(),
                0,
                &sll as *const _ as *const libc::sockaddr,
                std::mem::size_of::<libc::sockaddr_ll>() as libc::socklen_t,
            )
        };
        if sent < 0 {
            return Err(last_errno("send arp"));
        }
        let info = ArpProbeInfo {
            target_ip: unknown_ip,
            sender_mac: self.mac,
            sent_at: self.timestamp(),
        };
        let frames = self.capture_frames(&[ETHERTYPE_ARP], window)?;
        Ok((info, frames))
    }
}
