//! Identify which OpenFlow controller manages an SDN network, observed
//! entirely from the data plane.
//!
//! Four techniques feed one verdict: flow-timeout inference and
//! processing-time inference (active RTT timing), LLDP discovery-frame
//! analysis (passive), and an ARP-rebroadcast check that singles out the
//! Hydrogen build of OpenDaylight. A deterministic simulated control plane
//! ([`simnet`]) provides ground truth so every technique can be validated
//! at desk scale.

pub mod cli;
pub mod fusion;
pub mod packet;
pub mod signatures;
pub mod simnet;
pub mod timing;
pub mod transport;
pub mod units;
pub mod wire;

#[cfg(feature = "live")]
pub mod live;
