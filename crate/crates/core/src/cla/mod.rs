//! Convergence-layer adapter framework.
//!
//! A CLA supplies the CLA-specific functions (receive wire data, send a
//! serialized bundle, create and tear down links). The generic part in
//! [`link`] runs one RX and one TX task per link and talks to the bundle
//! processor only through its command queue.

pub mod link;
pub mod loopback;
pub mod mtcp;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, RwLock};

use async_trait::async_trait;
use thiserror::Error;

use crate::bpa::{BpaHandle, Origin};
use crate::bundle::Bundle;
use crate::clock::SharedClock;

pub use link::{LinkId, LinkState};

#[derive(Debug, Error)]
pub enum ClaError {
    #[error("a CLA named {0:?} is already registered")]
    DuplicateClaName(String),
    #[error("unknown CLA {0:?}")]
    UnknownCla(String),
    #[error("invalid CLA address {0:?}")]
    InvalidAddress(String),
    #[error("connection failed: {0}")]
    ConnectionFailed(String),
    /// Transmission of one bundle refused; the link stays up.
    #[error("bundle rejected: {0}")]
    Rejected(String),
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("frame of {size} octets exceeds limit of {max}")]
    FrameTooLarge { size: u64, max: u64 },
    #[error("link closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `<cla_name>:<detail>`, split at the first colon.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClaAddress {
    pub cla_name: String,
    pub detail: String,
}

impl ClaAddress {
    pub fn new(cla_name: impl Into<String>, detail: impl Into<String>) -> Self {
        ClaAddress {
            cla_name: cla_name.into(),
            detail: detail.into(),
        }
    }
}

impl FromStr for ClaAddress {
    type Err = ClaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some((name, detail)) if !name.is_empty() => Ok(ClaAddress::new(name, detail)),
            _ => Err(ClaError::InvalidAddress(s.to_string())),
        }
    }
}

impl fmt::Display for ClaAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.cla_name, self.detail)
    }
}

impl serde::Serialize for ClaAddress {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for ClaAddress {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Wire data handed up by a CLA's reception function.
#[derive(Debug)]
pub struct RxFrame {
    pub data: Vec<u8>,
    /// Overrides the default `Origin::Cla(<link address>)`.
    pub origin: Option<Origin>,
}

impl RxFrame {
    pub fn new(data: Vec<u8>) -> Self {
        RxFrame { data, origin: None }
    }
}

/// A serialized outbound bundle together with its in-memory form.
pub struct TxItem<'a> {
    pub bytes: &'a [u8],
    pub bundle: &'a Bundle,
    pub received_at: u64,
}

/// Reception function of one link.
#[async_trait]
pub trait ClaReceiver: Send {
    /// Next frame, or `None` once the peer closed the link.
    async fn recv(&mut self) -> Result<Option<RxFrame>, ClaError>;
}

/// Transmission function of one link.
#[async_trait]
pub trait ClaSender: Send {
    async fn send(&mut self, item: &TxItem<'_>) -> Result<(), ClaError>;

    async fn close(&mut self) {}
}

pub struct LinkHalves {
    pub rx: Box<dyn ClaReceiver>,
    pub tx: Box<dyn ClaSender>,
}

/// Handed to each CLA at start-up.
#[derive(Clone)]
pub struct ClaContext {
    pub bpa: BpaHandle,
    pub clock: SharedClock,
}

impl ClaContext {
    /// Announces a link the CLA accepted on its own (e.g. an inbound connection).
    pub async fn announce_incoming(&self, address: ClaAddress, halves: LinkHalves) {
        self.bpa.link_established(address, halves).await;
    }
}

/// The contract every convergence-layer adapter implements.
#[async_trait]
pub trait Cla: Send + Sync {
    fn name(&self) -> &str;

    /// Largest serialized bundle a link of this CLA carries; constant for the instance.
    fn max_bundle_size(&self) -> Option<u64>;

    /// Starts listeners or background tasks.
    async fn start(&self, _ctx: ClaContext) -> Result<(), ClaError> {
        Ok(())
    }

    async fn stop(&self) {}

    /// Creates a link to the CLA-specific `detail` address.
    async fn open_link(&self, detail: &str) -> Result<LinkHalves, ClaError>;
}

/// Name-indexed set of CLA instances.
#[derive(Clone, Default)]
pub struct ClaRegistry {
    inner: Arc<RwLock<HashMap<String, Arc<dyn Cla>>>>,
}

impl ClaRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, name: &str, cla: Arc<dyn Cla>) -> Result<(), ClaError> {
        let mut map = self.inner.write().unwrap();
        if map.contains_key(name) {
            return Err(ClaError::DuplicateClaName(name.to_string()));
        }
        map.insert(name.to_string(), cla);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn Cla>> {
        self.inner.read().unwrap().get(name).cloned()
    }

    /// Parses an address and checks its CLA is registered.
    pub fn resolve(&self, address: &str) -> Result<(ClaAddress, Arc<dyn Cla>), ClaError> {
        let addr: ClaAddress = address.parse()?;
        let cla = self
            .get(&addr.cla_name)
            .ok_or_else(|| ClaError::UnknownCla(addr.cla_name.clone()))?;
        Ok((addr, cla))
    }

    pub fn max_bundle_size(&self, name: &str) -> Option<u64> {
        self.get(name).and_then(|c| c.max_bundle_size())
    }

    pub fn all(&self) -> Vec<Arc<dyn Cla>> {
        self.inner.read().unwrap().values().cloned().collect()
    }
}
