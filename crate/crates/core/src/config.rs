//! Daemon configuration (JSON). See `docs/config.md` for the schema.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cla::ClaAddress;
use crate::crc::CrcType;
use crate::eid::EndpointId;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid configuration at `{key}`: {message}")]
    Invalid { key: String, message: String },
}

pub(crate) fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CrcChoice {
    None,
    #[default]
    Crc16,
    Crc32c,
}

impl From<CrcChoice> for CrcType {
    fn from(c: CrcChoice) -> CrcType {
        match c {
            CrcChoice::None => CrcType::None,
            CrcChoice::Crc16 => CrcType::Crc16X25,
            CrcChoice::Crc32c => CrcType::Crc32C,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClaConfig {
    Mtcp {
        #[serde(default)]
        listen: Option<SocketAddr>,
        #[serde(default)]
        max_bundle_size: Option<u64>,
    },
    Loopback {
        #[serde(default)]
        delay_ms: u64,
        #[serde(default)]
        drop_probability: f64,
        #[serde(default)]
        max_bundle_size: Option<u64>,
    },
    Bibe {
        #[serde(default = "default_bibe_agent")]
        agent_id: String,
        #[serde(default = "default_lifetime")]
        outer_lifetime_ms: u64,
        #[serde(default)]
        max_outer_size: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageSection {
    pub path: PathBuf,
    #[serde(default = "default_quota")]
    pub quota: u64,
    #[serde(default = "default_storage_agent")]
    pub agent_id: String,
    #[serde(default = "default_sweep")]
    pub sweep_interval_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aap2Section {
    #[serde(default = "default_aap2_tcp")]
    pub tcp: Option<SocketAddr>,
    #[serde(default)]
    pub unix: Option<PathBuf>,
    #[serde(default = "default_keepalive")]
    pub keepalive_timeout_ms: u64,
    #[serde(default = "default_agent_queue")]
    pub outbound_queue: usize,
}

impl Default for Aap2Section {
    fn default() -> Self {
        Aap2Section {
            tcp: default_aap2_tcp(),
            unix: None,
            keepalive_timeout_ms: default_keepalive(),
            outbound_queue: default_agent_queue(),
        }
    }
}

/// A link brought up at start-up, as if requested with Link UP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticLink {
    pub node_id: String,
    pub cla_address: String,
    #[serde(default)]
    pub flags: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub node_id: String,
    #[serde(default)]
    pub admin_secret: Option<String>,
    #[serde(default)]
    pub aap2: Aap2Section,
    #[serde(default)]
    pub clas: Vec<ClaConfig>,
    #[serde(default)]
    pub storage: Option<StorageSection>,
    #[serde(default)]
    pub links: Vec<StaticLink>,
    #[serde(default = "default_true")]
    pub dispatch_cache: bool,
    #[serde(default = "default_bdm_timeout")]
    pub bdm_timeout_ms: u64,
    #[serde(default = "default_lifetime")]
    pub default_lifetime_ms: u64,
    #[serde(default = "default_hop_limit")]
    pub hop_limit: u64,
    #[serde(default)]
    pub crc: CrcChoice,
    #[serde(default = "default_link_queue")]
    pub link_queue_capacity: usize,
    #[serde(default = "default_max_adu")]
    pub max_adu_size: usize,
    #[serde(default)]
    pub fib_event_log: bool,
}

fn default_true() -> bool {
    true
}
fn default_bdm_timeout() -> u64 {
    2000
}
fn default_lifetime() -> u64 {
    86_400_000
}
fn default_hop_limit() -> u64 {
    32
}
fn default_link_queue() -> usize {
    256
}
fn default_agent_queue() -> usize {
    64
}
fn default_max_adu() -> usize {
    16 * 1024 * 1024
}
fn default_quota() -> u64 {
    crate::storage::DEFAULT_QUOTA
}
fn default_storage_agent() -> String {
    crate::storage::DEFAULT_AGENT_ID.to_string()
}
fn default_bibe_agent() -> String {
    crate::bibe::DEFAULT_AGENT_ID.to_string()
}
fn default_sweep() -> u64 {
    crate::storage::DEFAULT_SWEEP_INTERVAL_MS
}
fn default_aap2_tcp() -> Option<SocketAddr> {
    Some(crate::aap2::server::DEFAULT_TCP_LISTEN.parse().unwrap())
}
fn default_keepalive() -> u64 {
    30_000
}

impl Config {
    /// A configuration with defaults for everything but the node id.
    pub fn new(node_id: &str) -> Config {
        Config::from_json(&format!("{{\"node_id\": {}}}", serde_json::Value::from(node_id))).expect("minimal config")
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Config::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Config, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            invalid(if key.is_empty() { "." } else { &key }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let node = self.node_id()?;
        for (i, cla) in self.clas.iter().enumerate() {
            let key = format!("clas[{i}]");
            match cla {
                ClaConfig::Loopback { drop_probability, .. } if !(0.0..=1.0).contains(drop_probability) => {
                    return Err(invalid(&format!("{key}.drop_probability"), "must be within [0, 1]"));
                }
                ClaConfig::Bibe { agent_id, .. } => {
                    node.with_agent(agent_id)
                        .map_err(|e| invalid(&format!("{key}.agent_id"), e.to_string()))?;
                }
                _ => {}
            }
            let name = cla.name();
            if self.clas[..i].iter().any(|c| c.name() == name) {
                return Err(invalid(&key, format!("CLA {name:?} configured twice")));
            }
        }
        if let Some(s) = &self.storage {
            node.with_agent(&s.agent_id)
                .map_err(|e| invalid("storage.agent_id", e.to_string()))?;
        }
        for (i, l) in self.links.iter().enumerate() {
            EndpointId::parse_node_id(&l.node_id).map_err(|e| invalid(&format!("links[{i}].node_id"), e.to_string()))?;
            l.cla_address
                .parse::<ClaAddress>()
                .map_err(|e| invalid(&format!("links[{i}].cla_address"), e.to_string()))?;
        }
        Ok(())
    }

    pub fn node_id(&self) -> Result<EndpointId, ConfigError> {
        EndpointId::parse_node_id(&self.node_id).map_err(|e| invalid("node_id", e.to_string()))
    }
}

impl ClaConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ClaConfig::Mtcp { .. } => crate::cla::mtcp::CLA_NAME,
            ClaConfig::Loopback { .. } => crate::cla::loopback::CLA_NAME,
            ClaConfig::Bibe { .. } => crate::bibe::CLA_NAME,
        }
    }
}
