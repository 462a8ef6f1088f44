//! The storage CLA. Its TX side persists bundles; its RX side hands recalled
//! bundles and command replies back to the node. A single actor task owns
//! the [`Store`].

use std::sync::Arc;

use async_trait::async_trait;
use tokio::sync::{mpsc, oneshot};

use super::command::{ReplyStatus, StorageCommand, StorageReply, Verb};
use super::filter::BundleFilter;
use super::{StorageError, Store, StoredRecord};
use crate::bpa::{LocalService, Origin, ServiceRequest};
use crate::bundle::{encode_bundle, Bundle};
use crate::cla::{Cla, ClaError, ClaReceiver, ClaSender, LinkHalves, RxFrame, TxItem};
use crate::clock::{CreationSequencer, SharedClock};
use crate::crc::CrcType;
use crate::eid::EndpointId;

pub const CLA_NAME: &str = "storage";
pub const DEFAULT_SWEEP_INTERVAL_MS: u64 = 10_000;
const OP_QUEUE: usize = 256;

enum Op {
    Persist {
        bytes: Vec<u8>,
        reply: oneshot::Sender<Result<String, StorageError>>,
    },
    Command {
        cmd: Result<StorageCommand, StorageReply>,
        reply_to: EndpointId,
        lifetime_ms: u64,
    },
    Query {
        filter: BundleFilter,
        reply: oneshot::Sender<Vec<StoredRecord>>,
    },
    Sweep(oneshot::Sender<u64>),
    Attach(mpsc::UnboundedSender<RxFrame>),
    Stop,
}

#[derive(Debug, Clone)]
pub struct StorageConfig {
    /// Endpoint that receives commands and signs replies.
    pub endpoint: EndpointId,
    pub crc_type: CrcType,
    pub sweep_interval_ms: u64,
}

/// Direct access to the storage actor (inspection, tests).
#[derive(Clone)]
pub struct StorageHandle {
    ops: mpsc::Sender<Op>,
}

impl StorageHandle {
    pub async fn query(&self, filter: BundleFilter) -> Vec<StoredRecord> {
        let (tx, rx) = oneshot::channel();
        if self.ops.send(Op::Query { filter, reply: tx }).await.is_err() {
            return Vec::new();
        }
        rx.await.unwrap_or_default()
    }

    pub async fn sweep(&self) -> u64 {
        let (tx, rx) = oneshot::channel();
        if self.ops.send(Op::Sweep(tx)).await.is_err() {
            return 0;
        }
        rx.await.unwrap_or(0)
    }
}

struct Actor {
    store: Store,
    cfg: StorageConfig,
    clock: SharedClock,
    sequencer: Arc<CreationSequencer>,
    outlet: Option<mpsc::UnboundedSender<RxFrame>>,
}

impl Actor {
    async fn run(mut self, mut ops: mpsc::Receiver<Op>) {
        let mut next_sweep = self.clock.now_ms() + self.cfg.sweep_interval_ms;
        loop {
            let sweep = self.clock.sleep_until(next_sweep);
            let op = tokio::select! {
                op = ops.recv() => op,
                _ = sweep => {
                    self.sweep();
                    next_sweep = self.clock.now_ms() + self.cfg.sweep_interval_ms;
                    continue;
                }
            };
            match op {
                None | Some(Op::Stop) => break,
                Some(Op::Persist { bytes, reply }) => {
                    let r = self.store.store(&bytes, self.clock.now_ms()).map(|(id, outcome)| {
                        if outcome.created {
                            log::info!("storage: stored {id} ({} octets)", bytes.len());
                        }
                        id
                    });
                    let _ = reply.send(r);
                }
                Some(Op::Command {
                    cmd,
                    reply_to,
                    lifetime_ms,
                }) => {
                    let reply = match cmd {
                        Ok(cmd) => self.execute(cmd),
                        Err(reply) => reply,
                    };
                    self.send_reply(reply, reply_to, lifetime_ms);
                }
                Some(Op::Query { filter, reply }) => {
                    let _ = reply.send(self.store.query(&filter));
                }
                Some(Op::Sweep(reply)) => {
                    let _ = reply.send(self.sweep());
                }
                Some(Op::Attach(outlet)) => self.outlet = Some(outlet),
            }
        }
        log::debug!("storage: actor for {} stopped", self.store.dir().display());
    }

    fn sweep(&mut self) -> u64 {
        match self.store.expire_sweep(self.clock.now_ms()) {
            Ok(n) => n,
            Err(e) => {
                log::error!("storage: sweep failed: {e}");
                0
            }
        }
    }

    fn execute(&mut self, cmd: StorageCommand) -> StorageReply {
        let failed = |e: StorageError| StorageReply::error(ReplyStatus::Failed, e.to_string());
        match cmd.verb {
            Verb::Query => StorageReply::records(self.store.query(&cmd.filter)),
            Verb::Delete => self.store.delete(&cmd.filter).map_or_else(failed, StorageReply::count),
            Verb::Recall => {
                let mut n = 0;
                for r in self.store.query(&cmd.filter) {
                    let data = match self.store.read(&r.storage_id) {
                        Ok(d) => d,
                        Err(e) => return failed(e),
                    };
                    if !self.push(data, Origin::Storage(r.storage_id.clone())) {
                        return StorageReply::error(ReplyStatus::Failed, "storage link is down");
                    }
                    n += 1;
                    if cmd.delete_after {
                        if let Err(e) = self.store.remove(&r.storage_id) {
                            return failed(e);
                        }
                    }
                }
                log::info!("storage: recalled {n} bundles");
                StorageReply::count(n)
            }
        }
    }

    fn push(&mut self, data: Vec<u8>, origin: Origin) -> bool {
        let frame = RxFrame {
            data,
            origin: Some(origin),
        };
        match &self.outlet {
            Some(o) if o.send(frame).is_ok() => true,
            _ => {
                self.outlet = None;
                false
            }
        }
    }

    fn send_reply(&mut self, reply: StorageReply, to: EndpointId, lifetime_ms: u64) {
        let now = self.clock.now_ms();
        let b = Bundle::new(
            self.cfg.endpoint.clone(),
            to.clone(),
            self.sequencer.next(now),
            lifetime_ms,
            reply.encode(),
            self.cfg.crc_type,
        );
        let Ok(bytes) = encode_bundle(&b) else {
            return;
        };
        if !self.push(bytes, Origin::Local) {
            log::warn!("storage: reply to {to} lost, storage link is down");
        }
    }
}

pub struct StorageCla {
    ops: mpsc::Sender<Op>,
}

impl StorageCla {
    /// Starts the actor owning `store`.
    pub fn spawn(
        store: Store,
        cfg: StorageConfig,
        clock: SharedClock,
        sequencer: Arc<CreationSequencer>,
    ) -> (StorageCla, StorageHandle) {
        let (tx, rx) = mpsc::channel(OP_QUEUE);
        let actor = Actor {
            store,
            cfg,
            clock,
            sequencer,
            outlet: None,
        };
        tokio::spawn(actor.run(rx));
        (StorageCla { ops: tx.clone() }, StorageHandle { ops: tx })
    }

    /// The built-in endpoint that accepts command bundles.
    pub fn service(&self, require_auth: bool) -> StorageService {
        StorageService {
            ops: self.ops.clone(),
            require_auth,
        }
    }
}

struct StorageReceiver {
    rx: mpsc::UnboundedReceiver<RxFrame>,
}

#[async_trait]
impl ClaReceiver for StorageReceiver {
    async fn recv(&mut self) -> Result<Option<RxFrame>, ClaError> {
        Ok(self.rx.recv().await)
    }
}

struct StorageSender {
    ops: mpsc::Sender<Op>,
}

#[async_trait]
impl ClaSender for StorageSender {
    async fn send(&mut self, item: &TxItem<'_>) -> Result<(), ClaError> {
        let (tx, rx) = oneshot::channel();
        self.ops
            .send(Op::Persist {
                bytes: item.bytes.to_vec(),
                reply: tx,
            })
            .await
            .map_err(|_| ClaError::Closed)?;
        match rx.await {
            Ok(Ok(_)) => Ok(()),
            Ok(Err(e)) => Err(ClaError::Rejected(e.to_string())),
            Err(_) => Err(ClaError::Closed),
        }
    }
}

#[async_trait]
impl Cla for StorageCla {
    fn name(&self) -> &str {
        CLA_NAME
    }

    fn max_bundle_size(&self) -> Option<u64> {
        None
    }

    async fn stop(&self) {
        let _ = self.ops.send(Op::Stop).await;
    }

    /// Every link reaches the same store; a new link takes over the RX side.
    async fn open_link(&self, _detail: &str) -> Result<LinkHalves, ClaError> {
        let (tx, rx) = mpsc::unbounded_channel();
        self.ops.send(Op::Attach(tx)).await.map_err(|_| ClaError::Closed)?;
        Ok(LinkHalves {
            rx: Box::new(StorageReceiver { rx }),
            tx: Box::new(StorageSender { ops: self.ops.clone() }),
        })
    }
}

/// Accepts command bundles addressed to the storage endpoint.
pub struct StorageService {
    ops: mpsc::Sender<Op>,
    require_auth: bool,
}

impl LocalService for StorageService {
    fn handle(&mut self, req: ServiceRequest<'_>) -> Vec<(Bundle, Origin)> {
        let b = &req.desc.bundle;
        let cmd = if self.require_auth && !req.authorized {
            Err(StorageReply::error(ReplyStatus::Unauthorized, "storage commands need an authorized agent"))
        } else {
            StorageCommand::decode(b.payload()).map_err(|e| StorageReply::error(ReplyStatus::Malformed, e.to_string()))
        };
        let op = Op::Command {
            cmd,
            reply_to: b.source.clone(),
            lifetime_ms: b.lifetime_ms,
        };
        if self.ops.try_send(op).is_err() {
            log::warn!("storage: command queue full, command from {} dropped", b.source);
        }
        Vec::new()
    }
}
