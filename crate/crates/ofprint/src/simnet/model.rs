//! Behavioral controller models: everything the simulated control plane
//! needs to reproduce a controller's observable fingerprint surface.

use std::time::Duration;

use crate::signatures::ControllerSignature;
use crate::units::{duration_from_millis, Timeout};
use crate::wire::{LldpFrameSpec, MacAddr, TLV_ORG_SPECIFIC};

/// Ground truth for one simulated controller. `processing_delay` is the
/// controller's share of a miss RTT, the quantity the timing techniques
/// try to recover.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerModel {
    pub name: String,
    pub processing_delay: Duration,
    pub processing_jitter: Duration,
    pub idle_timeout: Timeout,
    pub hard_timeout: Timeout,
    pub lldp: Option<LldpTemplate>,
    pub arp_rebroadcast: bool,
}

/// Discovery-emission template. Name/description strings may contain a
/// `[MAC]` placeholder, stamped with the switch MAC at emission time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LldpTemplate {
    pub interval: Duration,
    pub interval_variable: bool,
    pub system_name: Option<String>,
    pub system_description: Option<String>,
    pub companion_ethertype: Option<u16>,
    pub unknown_tlv_count: u32,
}

impl LldpTemplate {
    pub fn frame_spec(&self, switch_mac: MacAddr, port: &str) -> LldpFrameSpec {
        let render = |template: &String| template.replace("[MAC]", &switch_mac.to_string());
        // Chassis ID subtype 4 (MAC address), Port ID subtype 7 (locally
        // assigned), as the common controllers emit them.
        let mut chassis_id = vec![4u8];
        chassis_id.extend_from_slice(&switch_mac.octets());
        let mut port_id = vec![7u8];
        port_id.extend_from_slice(port.as_bytes());
        LldpFrameSpec {
            chassis_id,
            port_id,
            ttl: 120,
            system_name: self.system_name.as_ref().map(render),
            system_description: self.system_description.as_ref().map(render),
            extra_tlvs: (0..self.unknown_tlv_count)
                .map(|i| (TLV_ORG_SPECIFIC, vec![0x00, 0x26, 0xe1, (i + 1) as u8]))
                .collect(),
        }
    }
}

impl ControllerModel {
    /// Replay a database signature as ground truth: the signature's
    /// adjusted processing time becomes the configured controller delay.
    pub fn from_signature(sig: &ControllerSignature) -> Self {
        ControllerModel {
            name: sig.id.to_string(),
            processing_delay: duration_from_millis(sig.processing.t_p_adjusted_ms),
            processing_jitter: Duration::ZERO,
            idle_timeout: sig.timeouts.idle,
            hard_timeout: sig.timeouts.hard,
            lldp: Some(LldpTemplate {
                interval: sig.lldp.interval(),
                interval_variable: sig.lldp.interval_variable,
                system_name: sig
                    .lldp
                    .system_name_pattern
                    .as_ref()
                    .map(|p| p.as_str().to_string()),
                system_description: sig
                    .lldp
                    .system_description_pattern
                    .as_ref()
                    .map(|p| p.as_str().to_string()),
                companion_ethertype: sig.lldp.companion_ethertype,
                unknown_tlv_count: sig.lldp.unknown_tlv_count.unwrap_or(0),
            }),
            arp_rebroadcast: sig.arp_rebroadcast,
        }
    }
}
