//! Ethernet, ARP and LLDP wire formats: just enough to emit and decode
//! the discovery and ARP traffic the passive techniques look at.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const ETHERTYPE_ARP: u16 = 0x0806;
pub const ETHERTYPE_LLDP: u16 = 0x88CC;
/// The broadcast companion frame Floodlight emits after each LLDP packet.
pub const ETHERTYPE_BDDP: u16 = 0x8942;

pub const ETHERNET_HEADER_LEN: usize = 14;
pub const ARP_PAYLOAD_LEN: usize = 28;

// IEEE 802.1AB TLV types this toolkit recognizes. Everything else is
// counted as an "unknown" TLV.
pub const TLV_END: u8 = 0;
pub const TLV_CHASSIS_ID: u8 = 1;
pub const TLV_PORT_ID: u8 = 2;
pub const TLV_TTL: u8 = 3;
pub const TLV_SYSTEM_NAME: u8 = 5;
pub const TLV_SYSTEM_DESCRIPTION: u8 = 6;
pub const TLV_ORG_SPECIFIC: u8 = 127;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("frame too short: {got} bytes, need at least {need}")]
    TooShort { got: usize, need: usize },
    #[error("truncated TLV at offset {offset}")]
    TruncatedTlv { offset: usize },
    #[error("invalid MAC address {0:?}")]
    BadMac(String),
    #[error("not an ARP packet: {0}")]
    NotArp(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub const BROADCAST: MacAddr = MacAddr([0xff; 6]);
    /// 802.1AB nearest-bridge group address used as LLDP destination.
    pub const LLDP_MULTICAST: MacAddr = MacAddr([0x01, 0x80, 0xc2, 0x00, 0x00, 0x0e]);

    pub fn octets(&self) -> [u8; 6] {
        self.0
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            o[0], o[1], o[2], o[3], o[4], o[5]
        )
    }
}

impl FromStr for MacAddr {
    type Err = WireError;

    fn from_str(s: &str) -> Result<Self, WireError> {
        let parts: Vec<&str> = if s.contains(':') {
            s.split(':').collect()
        } else {
            s.split('-').collect()
        };
        if parts.len() != 6 {
            return Err(WireError::BadMac(s.to_string()));
        }
        let mut out = [0u8; 6];
        for (i, p) in parts.iter().enumerate() {
            out[i] = u8::from_str_radix(p, 16).map_err(|_| WireError::BadMac(s.to_string()))?;
        }
        Ok(MacAddr(out))
    }
}

impl Serialize for MacAddr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn build_ethernet(dst: MacAddr, src: MacAddr, ethertype: u16, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(ETHERNET_HEADER_LEN + payload.len());
    out.extend_from_slice(&dst.0);
    out.extend_from_slice(&src.0);
    out.extend_from_slice(&ethertype.to_be_bytes());
    out.extend_from_slice(payload);
    out
}

/// Borrowed view of an Ethernet frame's header fields.
#[derive(Debug, Clone, Copy)]
pub struct EthernetView<'a> {
    pub dst: MacAddr,
    pub src: MacAddr,
    pub ethertype: u16,
    pub payload: &'a [u8],
}

pub fn parse_ethernet(raw: &[u8]) -> Result<EthernetView<'_>, WireError> {
    if raw.len() < ETHERNET_HEADER_LEN {
        return Err(WireError::TooShort {
            got: raw.len(),
            need: ETHERNET_HEADER_LEN,
        });
    }
    let mut dst = [0u8; 6];
    let mut src = [0u8; 6];
    dst.copy_from_slice(&raw[0..6]);
    src.copy_from_slice(&raw[6..12]);
    Ok(EthernetView {
        dst: MacAddr(dst),
        src: MacAddr(src),
        ethertype: u16::from_be_bytes([raw[12], raw[13]]),
        payload: &raw[ETHERNET_HEADER_LEN..],
    })
}

pub const ARP_OP_REQUEST: u16 = 1;
pub const ARP_OP_REPLY: u16 = 2;

/// Ethernet/IPv4 ARP body (RFC 826), fixed htype/ptype/hlen/plen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArpPacket {
    pub op: u16,
    pub sender_mac: MacAddr,
    pub sender_ip: Ipv4Addr,
    pub target_mac: MacAddr,
    pub target_ip: Ipv4Addr,
}

impl ArpPacket {
    pub fn request(sender_mac: MacAddr, sender_ip: Ipv4Addr, target_ip: Ipv4Addr) -> Self {
        ArpPacket {
            op: ARP_OP_REQUEST,
            sender_mac,
            sender_ip,
            target_mac: MacAddr([0; 6]),
            target_ip,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(ARP_PAYLOAD_LEN);
        out.extend_from_slice(&1u16.to_be_bytes()); // htype: ethernet
        out.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes()); // ptype
        out.push(6); // hlen
        out.push(4); // plen
        out.extend_from_slice(&self.op.to_be_bytes());
        out.extend_from_slice(&self.sender_mac.0);
        out.extend_from_slice(&self.sender_ip.octets());
        out.extend_from_slice(&self.target_mac.0);
        out.extend_from_slice(&self.target_ip.octets());
        out
    }

    pub fn decode(payload: &[u8]) -> Result<ArpPacket, WireError> {
        if payload.len() < ARP_PAYLOAD_LEN {
            return Err(WireError::TooShort {
                got: payload.len(),
                need: ARP_PAYLOAD_LEN,
            });
        }
        let htype = u16::from_be_bytes([payload[0], payload[1]]);
        let ptype = u16::from_be_bytes([payload[2], payload[3]]);
        if htype != 1 || ptype != ETHERTYPE_IPV4 || payload[4] != 6 || payload[5] != 4 {
            return Err(WireError::NotArp(format!(
                "htype={htype} ptype={ptype:#06x} hlen={} plen={}",
                payload[4], payload[5]
            )));
        }
        let mac = |off: usize| {
            let mut m = [0u8; 6];
            m.copy_from_slice(&payload[off..off + 6]);
            MacAddr(m)
        };
        let ip = |off: usize| {
            Ipv4Addr::new(
                payload[off],
                payload[off + 1],
                payload[off + 2],
                payload[off + 3],
            )
        };
        Ok(ArpPacket {
            op: u16::from_be_bytes([payload[6], payload[7]]),
            sender_mac: mac(8),
            sender_ip: ip(14),
            target_mac: mac(18),
            target_ip: ip(24),
        })
    }
}

/// Push one TLV with the 7-bit type / 9-bit length header.
pub fn push_tlv(buf: &mut Vec<u8>, ty: u8, value: &[u8]) {
    debug_assert!(value.len() < 512, "TLV value exceeds 9-bit length");
    let header = ((ty as u16) << 9) | (value.len() as u16 & 0x01ff);
    buf.extend_from_slice(&header.to_be_bytes());
    buf.extend_from_slice(value);
}

/// Iterator over `(type, value)` pairs of an LLDPDU, stopping at the End
/// TLV. Yields an error item on truncation; absence of an End TLV is left
/// for the caller to notice via [`TlvIter::saw_end`].
pub struct TlvIter<'a> {
    buf: &'a [u8],
    offset: usize,
    done: bool,
    saw_end: bool,
}

impl<'a> TlvIter<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        TlvIter {
            buf,
            offset: 0,
            done: false,
            saw_end: false,
        }
    }

    pub fn saw_end(&self) -> bool {
        self.saw_end
    }
}

impl<'a> Iterator for TlvIter<'a> {
    type Item = Result<(u8, &'a [u8]), WireError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done || self.offset >= self.buf.len() {
            self.done = true;
            return None;
        }
        if self.offset + 2 > self.buf.len() {
            self.done = true;
            return Some(Err(WireError::TruncatedTlv {
                offset: self.offset,
            }));
        }
        let header = u16::from_be_bytes([self.buf[self.offset], self.buf[self.offset + 1]]);
        let ty = (header >> 9) as u8;
        let len = (header & 0x01ff) as usize;
        let start = self.offset + 2;
        if start + len > self.buf.len() {
            self.done = true;
            return Some(Err(WireError::TruncatedTlv {
                offset: self.offset,
            }));
        }
        self.offset = start + len;
        if ty == TLV_END {
            self.done = true;
            self.saw_end = true;
        }
        Some(Ok((ty, &self.buf[start..start + len])))
    }
}

/// The semantic content of one emitted LLDP frame. The simulator's
/// discovery emitter encodes these; the analyzer decodes them back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LldpFrameSpec {
    pub chassis_id: Vec<u8>,
    pub port_id: Vec<u8>,
    pub ttl: u16,
    pub system_name: Option<String>,
    pub system_description: Option<String>,
    /// Emitted verbatim after the well-known TLVs; the analyzer counts
    /// these as unknown.
    pub extra_tlvs: Vec<(u8, Vec<u8>)>,
}

impl LldpFrameSpec {
    /// TLV payload: chassis, port, ttl, optional name/description, extras, end.
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(64);
        push_tlv(&mut buf, TLV_CHASSIS_ID, &self.chassis_id);
        push_tlv(&mut buf, TLV_PORT_ID, &self.port_id);
        push_tlv(&mut buf, TLV_TTL, &self.ttl.to_be_bytes());
        if let Some(name) = &self.system_name {
            push_tlv(&mut buf, TLV_SYSTEM_NAME, name.as_bytes());
        }
        if let Some(desc) = &self.system_description {
            push_tlv(&mut buf, TLV_SYSTEM_DESCRIPTION, desc.as_bytes());
        }
        for (ty, value) in &self.extra_tlvs {
            push_tlv(&mut buf, *ty, value);
        }
        push_tlv(&mut buf, TLV_END, &[]);
        buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mac_round_trip() {
        let mac: MacAddr = "00:1b:21:3c:4d:5e".parse().unwrap();
        assert_eq!(mac.to_string(), "00:1b:21:3c:4d:5e");
        let dashed: MacAddr = "00-1B-21-3C-4D-5E".parse().unwrap();
        assert_eq!(mac, dashed);
        assert!("00:1b:21:3c:4d".parse::<MacAddr>().is_err());
    }

    #[test]
    fn ethernet_round_trip() {
        let frame = build_ethernet(
            MacAddr::BROADCAST,
            MacAddr([1, 2, 3, 4, 5, 6]),
            ETHERTYPE_ARP,
            &[0xaa, 0xbb],
        );
        let view = parse_ethernet(&frame).unwrap();
        assert_eq!(view.dst, MacAddr::BROADCAST);
        assert_eq!(view.src, MacAddr([1, 2, 3, 4, 5, 6]));
        assert_eq!(view.ethertype, ETHERTYPE_ARP);
        assert_eq!(view.payload, &[0xaa, 0xbb]);
        assert!(parse_ethernet(&frame[..10]).is_err());
    }

    #[test]
    fn arp_round_trip() {
        let req = ArpPacket::request(
            MacAddr([1, 2, 3, 4, 5, 6]),
            Ipv4Addr::new(10, 0, 0, 1),
            Ipv4Addr::new(10, 0, 0, 250),
        );
        let bytes = req.encode();
        assert_eq!(bytes.len(), ARP_PAYLOAD_LEN);
        assert_eq!(ArpPacket::decode(&bytes).unwrap(), req);
    }

    #[test]
    fn tlv_iteration_stops_at_end() {
        let spec = LldpFrameSpec {
            chassis_id: vec![4, 1, 2, 3, 4, 5, 6],
            port_id: vec![7, b'p', b'1'],
            ttl: 120,
            system_name: Some("openflow".into()),
            system_description: None,
            extra_tlvs: vec![(TLV_ORG_SPECIFIC, vec![0, 0x26, 0xe1, 1])],
        };
        let buf = spec.encode();
        let mut iter = TlvIter::new(&buf);
        let types: Vec<u8> = iter.by_ref().map(|r| r.unwrap().0).collect();
        assert_eq!(
            types,
            vec![
                TLV_CHASSIS_ID,
                TLV_PORT_ID,
                TLV_TTL,
                TLV_SYSTEM_NAME,
                TLV_ORG_SPECIFIC,
                TLV_END
            ]
        );
        assert!(iter.saw_end());
    }

    #[test]
    fn tlv_truncation_detected() {
        let spec = LldpFrameSpec {
            chassis_id: vec![4, 1, 2, 3, 4, 5, 6],
            port_id: vec![7, b'p', b'1'],
            ttl: 120,
            system_name: None,
            system_description: None,
            extra_tlvs: vec![],
        };
        let buf = spec.encode();
        let cut = &buf[..buf.len() - 3];
        let last = TlvIter::new(cut).last().unwrap();
        assert!(last.is_err());
    }
}
