//! The bundle processor: one serialized loop that owns registrations, the
//! FIB, the dispatch cache and all links. Everything else talks to it through
//! [`BpaHandle`].

pub mod processor;
pub mod registry;

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use tokio::sync::{mpsc, oneshot};

use crate::aap2::message::{BundleAdu, ConnectionConfig, LinkOp, Message, Response};
use crate::bundle::{Bundle, BundleError};
use crate::cla::{ClaAddress, ClaError, LinkHalves, LinkId};
use crate::dispatch::DispatchDecision;
use crate::eid::EndpointId;
use crate::fib::FibEntry;

pub use processor::{Processor, ProcessorConfig};
pub use registry::{Direction, Registry, RegistryError, Sink};

pub type ConnId = u64;

/// Where a bundle entered the node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Cla(ClaAddress),
    Agent(ConnId),
    Storage(String),
    /// Created inside the node (service replies, encapsulation).
    Local,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Cla(a) => write!(f, "cla {a}"),
            Origin::Agent(c) => write!(f, "agent connection {c}"),
            Origin::Storage(id) => write!(f, "storage {}", &id[..id.len().min(12)]),
            Origin::Local => f.write_str("local"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Retention(u8);

impl Retention {
    pub const AWAITING_DISPATCH: Retention = Retention(1);
    pub const IN_FLIGHT: Retention = Retention(2);
    pub const DELIVERED: Retention = Retention(4);

    pub fn contains(self, r: Retention) -> bool {
        self.0 & r.0 == r.0
    }

    pub fn set(&mut self, r: Retention, on: bool) {
        if on {
            self.0 |= r.0;
        } else {
            self.0 &= !r.0;
        }
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

#[derive(Debug, Clone)]
pub struct BundleDescriptor {
    pub bundle: Bundle,
    pub origin: Origin,
    pub received_at: u64,
    pub retention: Retention,
    /// Times the bundle went back to dispatch after a decision could not be applied.
    pub redispatched: u8,
    pub storage_failed: bool,
    /// Ingest events this descriptor stands for in the node accounting.
    /// Fragments after the first carry 0; a reassembled ADU carries the sum of its fragments.
    pub weight: u64,
}

impl BundleDescriptor {
    pub fn new(bundle: Bundle, origin: Origin, received_at: u64) -> Self {
        BundleDescriptor {
            bundle,
            origin,
            received_at,
            retention: Retention::default(),
            redispatched: 0,
            storage_failed: false,
            weight: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum DropReason {
    Expired,
    HopLimitExceeded,
    NoSuchEndpoint,
    NoRoute,
    DispatcherDrop,
    StorageFull,
}

impl DropReason {
    pub const ALL: [DropReason; 6] = [
        DropReason::Expired,
        DropReason::HopLimitExceeded,
        DropReason::NoSuchEndpoint,
        DropReason::NoRoute,
        DropReason::DispatcherDrop,
        DropReason::StorageFull,
    ];
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Immediate result of ingesting one bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestOutcome {
    DeliveredLocally,
    Dispatched,
    /// Buffered until the rest of the ADU arrives.
    AwaitingFragments,
    Dropped(DropReason),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct NodeStats {
    pub ingested: u64,
    /// Wire bundles consumed by local delivery (fragments count individually).
    pub delivered: u64,
    pub adus_delivered: u64,
    pub forwarded: u64,
    pub stored: u64,
    pub dropped: BTreeMap<DropReason, u64>,
    /// Bundles waiting on the BDM or on missing fragments.
    pub pending: u64,
    pub rx_rejected: u64,
    pub unsupported_version: u64,
    pub fragments_ingested: u64,
    pub dispatch_requests: u64,
    pub cache_hits: u64,
    pub bdm_timeouts: u64,
}

impl NodeStats {
    pub fn dropped_total(&self) -> u64 {
        self.dropped.values().sum()
    }

    pub fn dropped_for(&self, reason: DropReason) -> u64 {
        self.dropped.get(&reason).copied().unwrap_or(0)
    }

    /// ingested == delivered + forwarded + stored + dropped + pending.
    pub fn accounting_closes(&self) -> bool {
        self.ingested == self.delivered + self.forwarded + self.stored + self.dropped_total() + self.pending
    }
}

/// Context handed to a built-in endpoint service with each delivered bundle.
pub struct ServiceRequest<'a> {
    pub desc: &'a BundleDescriptor,
    /// The bundle came from a local agent connection holding granted authorization.
    pub authorized: bool,
    pub now: u64,
}

/// A built-in endpoint (storage commands, BIBE decapsulation). Bundles it
/// returns are ingested by the processor.
pub trait LocalService: Send {
    fn handle(&mut self, req: ServiceRequest<'_>) -> Vec<(Bundle, Origin)>;
}

/// Link UP request waiting for the CLA to connect.
pub struct LinkRequest {
    pub node_id: Option<EndpointId>,
    pub flags: u64,
    pub reply: Option<oneshot::Sender<Response>>,
}

pub enum Command {
    Ingest(BundleDescriptor),
    RxRejected(LinkId, BundleError),
    LinkEstablished {
        address: ClaAddress,
        halves: LinkHalves,
    },
    LinkOpenFailed {
        address: ClaAddress,
        error: ClaError,
    },
    LinkRxClosed(LinkId),
    LinkTxFinished(LinkId, Vec<BundleDescriptor>),
    TxRejected(LinkId, BundleDescriptor, String),
    Configure {
        conn: ConnId,
        config: ConnectionConfig,
        outbound: mpsc::Sender<Message>,
        reply: oneshot::Sender<Response>,
    },
    SendAdu {
        conn: ConnId,
        adu: BundleAdu,
        reply: oneshot::Sender<Response>,
    },
    LinkControl {
        conn: Option<ConnId>,
        op: LinkOp,
        node_id: EndpointId,
        cla_address: ClaAddress,
        flags: Option<u64>,
        reply: oneshot::Sender<Response>,
    },
    DispatchResponse {
        conn: ConnId,
        request_id: u64,
        decision: DispatchDecision,
    },
    Disconnect(ConnId),
    BdmTimeout(u64),
    Stats(oneshot::Sender<NodeStats>),
    FibSnapshot(oneshot::Sender<Vec<FibEntry>>),
    FibEvents(oneshot::Sender<(Vec<crate::fib::FibEvent>, Vec<FibEntry>)>),
    Shutdown(oneshot::Sender<()>),
}

/// Cloneable sender side of the processor's command queue.
#[derive(Clone)]
pub struct BpaHandle {
    tx: mpsc::Sender<Command>,
}

impl BpaHandle {
    pub fn new(tx: mpsc::Sender<Command>) -> Self {
        BpaHandle { tx }
    }

    pub async fn send(&self, cmd: Command) -> bool {
        self.tx.send(cmd).await.is_ok()
    }

    /// False once the processor has stopped.
    pub async fn ingest(&self, desc: BundleDescriptor) -> bool {
        self.send(Command::Ingest(desc)).await
    }

    pub async fn rx_rejected(&self, link: LinkId, err: BundleError) {
        self.send(Command::RxRejected(link, err)).await;
    }

    pub async fn link_rx_closed(&self, link: LinkId) {
        self.send(Command::LinkRxClosed(link)).await;
    }

    pub async fn tx_rejected(&self, link: LinkId, desc: BundleDescriptor, reason: String) {
        self.send(Command::TxRejected(link, desc, reason)).await;
    }

    pub async fn link_tx_finished(&self, link: LinkId, requeue: Vec<BundleDescriptor>) {
        self.send(Command::LinkTxFinished(link, requeue)).await;
    }

    pub async fn link_established(&self, address: ClaAddress, halves: LinkHalves) {
        self.send(Command::LinkEstablished { address, halves }).await;
    }

    async fn query<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Command) -> Option<T> {
        let (tx, rx) = oneshot::channel();
        if !self.send(make(tx)).await {
            return None;
        }
        rx.await.ok()
    }

    pub async fn stats(&self) -> Option<NodeStats> {
        self.query(Command::Stats).await
    }

    pub async fn fib(&self) -> Option<Vec<FibEntry>> {
        self.query(Command::FibSnapshot).await
    }

    /// Emitted FIB events (if the log is enabled) and the current entries.
    pub async fn fib_events(&self) -> Option<(Vec<crate::fib::FibEvent>, Vec<FibEntry>)> {
        self.query(Command::FibEvents).await
    }

    /// Link control without an agent connection (static configuration, tests).
    pub async fn link_control(
        &self,
        op: LinkOp,
        node_id: EndpointId,
        cla_address: ClaAddress,
        flags: Option<u64>,
    ) -> Response {
        self.query(|reply| Command::LinkControl {
            conn: None,
            op,
            node_id,
            cla_address,
            flags,
            reply,
        })
        .await
        .unwrap_or_else(|| Response::error("bundle processor stopped"))
    }

    pub async fn shutdown(&self) {
        let _ = self.query(Command::Shutdown).await;
    }

    pub fn is_closed(&self) -> bool {
        self.tx.is_closed()
    }
}
