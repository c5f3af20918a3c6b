//! Deterministic simulation of a reactive OpenFlow data plane: one switch
//! with a flow table, a configurable controller model behind it, and the
//! hosts on its access ports. Runs on a virtual clock, so a five-minute
//! discovery cycle or a six-minute timeout sweep costs milliseconds of
//! wall time, and every run is a pure function of (config, seed).

mod backend;
mod engine;
mod model;

pub use backend::SimTransport;
pub use engine::{audit_flow_discipline, MissReason, SimNet, TraceEvent, ATTACKER, BYSTANDER, TARGET};
pub use model::{ControllerModel, LldpTemplate};

use std::net::Ipv4Addr;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signatures::{ControllerId, SignatureDb};
use crate::units::{duration_from_millis, Timeout};
use crate::wire::MacAddr;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown controller {0:?} (not in the signature database)")]
    UnknownController(String),
    #[error("unknown noise profile {0:?} (expected default, noisy or minimal)")]
    UnknownProfile(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Propagation model for the attacker-to-target path, applied once per
/// direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkModel {
    pub one_way_latency_ms: f64,
    pub jitter_ms: f64,
    pub loss_rate: f64,
}

impl LinkModel {
    fn validate(&self) -> Result<(), ScenarioError> {
        if !self.one_way_latency_ms.is_finite() || self.one_way_latency_ms <= 0.0 {
            return Err(ScenarioError::Invalid(format!(
                "link latency must be positive, got {}",
                self.one_way_latency_ms
            )));
        }
        if self.jitter_ms < 0.0 || self.jitter_ms >= self.one_way_latency_ms {
            return Err(ScenarioError::Invalid(format!(
                "jitter ({} ms) must be non-negative and below the latency ({} ms)",
                self.jitter_ms, self.one_way_latency_ms
            )));
        }
        if !(0.0..1.0).contains(&self.loss_rate) {
            return Err(ScenarioError::Invalid(format!(
                "loss rate must lie in [0, 1), got {}",
                self.loss_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostConfig {
    pub name: String,
    pub ip: Ipv4Addr,
    pub mac: MacAddr,
}

/// Either a reference into the signature database (optionally overriding
/// the timeouts under test) or a fully custom controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ControllerRef {
    Reference(ControllerReference),
    Custom(CustomControllerWrap),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerReference {
    pub id: ControllerId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idle_timeout_s: Option<Timeout>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hard_timeout_s: Option<Timeout>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub processing_delay_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomControllerWrap {
    pub custom: CustomController,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomController {
    pub name: String,
    pub processing_delay_ms: f64,
    #[serde(default)]
    pub processing_jitter_ms: f64,
    pub idle_timeout_s: Timeout,
    pub hard_timeout_s: Timeout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lldp: Option<LldpTemplateConfig>,
    #[serde(default)]
    pub arp_rebroadcast: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LldpTemplateConfig {
    pub interval_s: f64,
    #[serde(default)]
    pub interval_variable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub companion_ethertype: Option<u16>,
    #[serde(default)]
    pub unknown_tlv_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub name: String,
    pub link: LinkModel,
    /// Transit switches between the access switch and the rest of the
    /// path. Each hop only adds latency; a handful of them is enough for
    /// a large LAN and does not disturb the timing techniques.
    #[serde(default)]
    pub transit_hops: u32,
    #[serde(default = "default_hop_latency_ms")]
    pub transit_hop_latency_ms: f64,
    pub switch_macs: Vec<MacAddr>,
    pub hosts: Vec<HostConfig>,
    pub controller: ControllerRef,
}

fn default_version() -> u32 {
    1
}

fn default_hop_latency_ms() -> f64 {
    0.05
}

/// Noise presets for the built-in topology. The default assumes a quiet
/// LAN; `noisy` stresses the algorithms; `minimal` is the near-zero
/// propagation setup used when building the processing-time database.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseProfile {
    Default,
    Noisy,
    Minimal,
}

impl NoiseProfile {
    pub fn link(self) -> LinkModel {
        match self {
            NoiseProfile::Default => LinkModel {
                one_way_latency_ms: 1.0,
                jitter_ms: 0.2,
                loss_rate: 0.0,
            },
            NoiseProfile::Noisy => LinkModel {
                one_way_latency_ms: 2.0,
                jitter_ms: 1.0,
                loss_rate: 0.01,
            },
            NoiseProfile::Minimal => LinkModel {
                one_way_latency_ms: 0.4135,
                jitter_ms: 0.0,
                loss_rate: 0.0,
            },
        }
    }
}

impl FromStr for NoiseProfile {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, ScenarioError> {
        match s {
            "default" => Ok(NoiseProfile::Default),
            "noisy" => Ok(NoiseProfile::Noisy),
            "minimal" => Ok(NoiseProfile::Minimal),
            other => Err(ScenarioError::UnknownProfile(other.to_string())),
        }
    }
}

impl ScenarioConfig {
    /// The standard one-switch, three-host topology with a controller from
    /// the signature database.
    pub fn builtin(controller: &str, profile: NoiseProfile) -> ScenarioConfig {
        let profile_name = match profile {
            NoiseProfile::Default => "default",
            NoiseProfile::Noisy => "noisy",
            NoiseProfile::Minimal => "minimal",
        };
        ScenarioConfig {
            version: 1,
            name: format!("{controller}:{profile_name}"),
            link: profile.link(),
            transit_hops: 0,
            transit_hop_latency_ms: default_hop_latency_ms(),
            switch_macs: vec!["0a:00:27:00:00:01".parse().expect("static mac")],
            hosts: vec![
                HostConfig {
                    name: "attacker".into(),
                    ip: Ipv4Addr::new(10, 0, 0, 1),
                    mac: "02:00:00:00:00:01".parse().expect("static mac"),
                },
                HostConfig {
                    name: "target".into(),
                    ip: Ipv4Addr::new(10, 0, 0, 2),
                    mac: "02:00:00:00:00:02".parse().expect("static mac"),
                },
                HostConfig {
                    name: "bystander".into(),
                    ip: Ipv4Addr::new(10, 0, 0, 3),
                    mac: "02:00:00:00:00:03".parse().expect("static mac"),
                },
            ],
            controller: ControllerRef::Reference(ControllerReference {
                id: ControllerId::new(controller).expect("non-empty controller name"),
                idle_timeout_s: None,
                hard_timeout_s: None,
                processing_delay_ms: None,
            }),
        }
    }

    /// Resolve a `--sim` argument: a path to a scenario file, or
    /// `<controller>[:<profile>]` for a built-in topology.
    pub fn from_spec(spec: &str, db: &SignatureDb) -> Result<ScenarioConfig, ScenarioError> {
        if spec.ends_with(".json") || Path::new(spec).exists() {
            return ScenarioConfig::load(spec);
        }
        let (controller, profile) = match spec.split_once(':') {
            Some((c, p)) => (c, p.parse()?),
            None => (spec, NoiseProfile::Default),
        };
        if db.get_by_name(controller).is_none() {
            return Err(ScenarioError::UnknownController(controller.to_string()));
        }
        Ok(ScenarioConfig::builtin(controller, profile))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ScenarioConfig, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: ScenarioConfig =
            serde_json::from_str(&text).map_err(|e| ScenarioError::Parse {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        Ok(config)
    }

    pub fn with_idle_timeout(mut self, idle: Timeout) -> Self {
        match &mut self.controller {
            ControllerRef::Reference(r) => r.idle_timeout_s = Some(idle),
            ControllerRef::Custom(c) => c.custom.idle_timeout_s = idle,
        }
        self
    }

    pub fn with_hard_timeout(mut self, hard: Timeout) -> Self {
        match &mut self.controller {
            ControllerRef::Reference(r) => r.hard_timeout_s = Some(hard),
            ControllerRef::Custom(c) => c.custom.hard_timeout_s = hard,
        }
        self
    }

    pub fn with_link(mut self, link: LinkModel) -> Self {
        self.link = link;
        self
    }

    pub fn controller_name(&self) -> &str {
        match &self.controller {
            ControllerRef::Reference(r) => r.id.as_str(),
            ControllerRef::Custom(c) => &c.custom.name,
        }
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if self.version != 1 {
            return Err(ScenarioError::Invalid(format!(
                "unsupported scenario version {}",
                self.version
            )));
        }
        self.link.validate()?;
        if !self.transit_hop_latency_ms.is_finite() || self.transit_hop_latency_ms < 0.0 {
            return Err(ScenarioError::Invalid(format!(
                "transit hop latency must be non-negative, got {}",
                self.transit_hop_latency_ms
            )));
        }
        if self.hosts.len() < 2 {
            return Err(ScenarioError::Invalid(
                "a scenario needs at least an attacker and a target host".into(),
            ));
        }
        if self.switch_macs.is_empty() {
            return Err(ScenarioError::Invalid("no switch MACs configured".into()));
        }
        for (i, a) in self.hosts.iter().enumerate() {
            for b in &self.hosts[i + 1..] {
                if a.ip == b.ip {
                    return Err(ScenarioError::Invalid(format!(
                        "hosts {} and {} share address {}",
                        a.name, b.name, a.ip
                    )));
                }
            }
        }
        Ok(())
    }

    /// Materialize the controller model, resolving database references.
    pub fn resolve_controller(&self, db: &SignatureDb) -> Result<ControllerModel, ScenarioError> {
        match &self.controller {
            ControllerRef::Reference(r) => {
                let sig = db
                    .get(&r.id)
                    .ok_or_else(|| ScenarioError::UnknownController(r.id.to_string()))?;
                let mut model = ControllerModel::from_signature(sig);
                if let Some(idle) = r.idle_timeout_s {
                    model.idle_timeout = idle;
                }
                if let Some(hard) = r.hard_timeout_s {
                    model.hard_timeout = hard;
                }
                if let Some(delay) = r.processing_delay_ms {
                    model.processing_delay = duration_from_millis(delay);
                }
                Ok(model)
            }
            ControllerRef::Custom(wrap) => {
                let c = &wrap.custom;
                Ok(ControllerModel {
                    name: c.name.clone(),
                    processing_delay: duration_from_millis(c.processing_delay_ms),
                    processing_jitter: duration_from_millis(c.processing_jitter_ms),
                    idle_timeout: c.idle_timeout_s,
                    hard_timeout: c.hard_timeout_s,
                    lldp: c.lldp.as_ref().map(|l| LldpTemplate {
                        interval: Duration::from_secs_f64(l.interval_s),
                        interval_variable: l.interval_variable,
                        system_name: l.system_name.clone(),
                        system_description: l.system_description.clone(),
                        companion_ethertype: l.companion_ethertype,
                        unknown_tlv_count: l.unknown_tlv_count,
                    }),
                    arp_rebroadcast: c.arp_rebroadcast,
                })
            }
        }
    }
}

/// Build a simulated network for `config` and hand back a transport bound
/// to the attacker host.
pub fn run_scenario(
    config: &ScenarioConfig,
    seed: u64,
    db: &SignatureDb,
) -> Result<SimTransport, ScenarioError> {
    config.validate()?;
    let controller = config.resolve_controller(db)?;
    // Transit switches contribute a flat per-hop latency to the path.
    let mut link = config.link;
    link.one_way_latency_ms += config.transit_hops as f64 * config.transit_hop_latency_ms;
    let net = SimNet::new(
        &link,
        &config.hosts,
        config.switch_macs[0],
        controller,
        seed,
    );
    Ok(SimTransport::new(net))
}

#[cfg(test)]
mod tests;
