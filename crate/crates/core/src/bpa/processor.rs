//! The processing loop.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use tokio::sync::{mpsc, oneshot};

use super::registry::{Direction, Registry, RegistryError, Sink};
use super::{
    BpaHandle, BundleDescriptor, Command, ConnId, DropReason, IngestOutcome, LinkRequest, LocalService, NodeStats,
    Origin, Retention, ServiceRequest,
};
use crate::aap2::message::{
    Auth, AuthSet, BundleAdu, BundleMeta, ConnectionConfig, DispatchRequest, LinkMessage, LinkOp, Message, Response,
    Status,
};
use crate::bundle::{encode_bundle, expiry_time, Bundle, BundleError, CanonicalBlock, ProcFlags};
use crate::cla::link::{spawn_link, LinkTasks};
use crate::cla::{ClaAddress, ClaError, ClaRegistry, LinkHalves, LinkId, LinkState};
use crate::clock::{CreationSequencer, SharedClock};
use crate::crc::CrcType;
use crate::dispatch::{self, Action, DecisionSource, DispatchCache, DispatchDecision, Fallback};
use crate::eid::EndpointId;
use crate::fib::{Fib, FibEvent, FibFlags};
use crate::fragment::{fragment_bundle, missing_ranges, reassemble, FragmentKey};

const COMMAND_QUEUE: usize = 1024;
const MAX_REDISPATCH: u8 = 3;

#[derive(Debug, Clone)]
pub struct ProcessorConfig {
    pub node_id: EndpointId,
    pub admin_secret: Option<Vec<u8>>,
    pub dispatch_cache: bool,
    pub bdm_timeout_ms: u64,
    pub link_queue_capacity: usize,
    pub agent_queue_capacity: usize,
    /// Limit written into the hop-count block of locally created bundles.
    pub hop_limit: u64,
    pub default_lifetime_ms: u64,
    pub crc_type: CrcType,
    pub max_adu_size: usize,
    /// Link over which STORE decisions are carried out.
    pub storage_address: Option<ClaAddress>,
    pub fib_event_log: bool,
}

impl ProcessorConfig {
    pub fn new(node_id: EndpointId) -> Self {
        ProcessorConfig {
            node_id,
            admin_secret: None,
            dispatch_cache: true,
            bdm_timeout_ms: 2000,
            link_queue_capacity: 256,
            agent_queue_capacity: 64,
            hop_limit: 32,
            default_lifetime_ms: 86_400_000,
            crc_type: CrcType::Crc16X25,
            max_adu_size: 16 * 1024 * 1024,
            storage_address: None,
            fib_event_log: false,
        }
    }
}

struct LinkRecord {
    address: ClaAddress,
    state: LinkState,
    tasks: LinkTasks,
}

struct AgentConn {
    outbound: Option<mpsc::Sender<Message>>,
    direction: Direction,
    agent_id: Option<String>,
    auth: AuthSet,
}

struct PendingDispatch {
    destination_node: EndpointId,
    conn: ConnId,
    descs: Vec<BundleDescriptor>,
}

pub struct Processor {
    cfg: ProcessorConfig,
    clock: SharedClock,
    clas: ClaRegistry,
    handle: BpaHandle,
    rx: mpsc::Receiver<Command>,
    sequencer: Arc<CreationSequencer>,
    registry: Registry,
    services: HashMap<String, Box<dyn LocalService>>,
    conns: HashMap<ConnId, AgentConn>,
    fib: Fib,
    cache: DispatchCache,
    links: HashMap<LinkId, LinkRecord>,
    next_link: u64,
    pending_opens: HashMap<ClaAddress, Vec<LinkRequest>>,
    bdm: Option<ConnId>,
    pending: HashMap<u64, PendingDispatch>,
    pending_by_node: HashMap<EndpointId, u64>,
    next_request: u64,
    reassembly: HashMap<FragmentKey, Vec<BundleDescriptor>>,
    stats: NodeStats,
}

impl Processor {
    pub fn new(
        cfg: ProcessorConfig,
        clock: SharedClock,
        clas: ClaRegistry,
        sequencer: Arc<CreationSequencer>,
    ) -> (Processor, BpaHandle) {
        let (tx, rx) = mpsc::channel(COMMAND_QUEUE);
        let handle = BpaHandle::new(tx);
        let fib = if cfg.fib_event_log {
            Fib::with_event_log()
        } else {
            Fib::new()
        };
        let cache = DispatchCache::new(cfg.dispatch_cache);
        let p = Processor {
            cfg,
            clock,
            clas,
            handle: handle.clone(),
            rx,
            sequencer,
            registry: Registry::new(),
            services: HashMap::new(),
            conns: HashMap::new(),
            fib,
            cache,
            links: HashMap::new(),
            next_link: 1,
            pending_opens: HashMap::new(),
            bdm: None,
            pending: HashMap::new(),
            pending_by_node: HashMap::new(),
            next_request: 1,
            reassembly: HashMap::new(),
            stats: NodeStats::default(),
        };
        (p, handle)
    }

    pub fn local_node_id(&self) -> &EndpointId {
        &self.cfg.node_id
    }

    /// Serves `agent_id` on this node with a built-in service.
    pub fn add_service(&mut self, agent_id: &str, service: Box<dyn LocalService>) -> Result<(), RegistryError> {
        let secret: [u8; 16] = rand::random();
        self.registry.register(agent_id, Direction::Receiver, Sink::Service, &secret)?;
        self.services.insert(agent_id.to_string(), service);
        Ok(())
    }

    pub async fn run(mut self) {
        if let Some(addr) = self.cfg.storage_address.clone() {
            self.request_link(
                addr,
                LinkRequest {
                    node_id: None,
                    flags: 0,
                    reply: None,
                },
            );
        }
        while let Some(cmd) = self.rx.recv().await {
            if let Command::Shutdown(ack) = cmd {
                self.shutdown().await;
                let _ = ack.send(());
                break;
            }
            self.handle_command(cmd);
        }
        log::debug!("bundle processor for {} stopped", self.cfg.node_id);
    }

    async fn shutdown(&mut self) {
        log::info!("{}: shutting down", self.cfg.node_id);
        self.conns.clear();
        for cla in self.clas.all() {
            cla.stop().await;
        }
        let links: Vec<LinkRecord> = self.links.drain().map(|(_, l)| l).collect();
        for l in &links {
            l.tasks.cancel.cancel();
        }
        // TX tasks still close their CLA senders; their final reports are not processed.
        self.rx.close();
        for l in links {
            let _ = tokio::time::timeout(Duration::from_millis(500), l.tasks.tx_task).await;
            l.tasks.rx_task.abort();
        }
        let in_flight: u64 = self.reassembly.values().map(Vec::len).sum::<usize>() as u64;
        if in_flight > 0 {
            log::info!("{}: discarding {in_flight} buffered fragments", self.cfg.node_id);
        }
    }

    fn handle_command(&mut self, cmd: Command) {
        match cmd {
            Command::Ingest(desc) => {
                self.ingest(desc);
            }
            Command::RxRejected(link, err) => {
                self.stats.rx_rejected += 1;
                if matches!(err, BundleError::UnsupportedVersion(_)) {
                    self.stats.unsupported_version += 1;
                }
                log::warn!("{}: {link}: dropped received data: {err}", self.cfg.node_id);
            }
            Command::LinkEstablished { address, halves } => self.on_link_established(address, halves),
            Command::LinkOpenFailed { address, error } => {
                log::warn!("{}: link to {address} failed: {error}", self.cfg.node_id);
                for req in self.pending_opens.remove(&address).unwrap_or_default() {
                    if let Some(reply) = req.reply {
                        let _ = reply.send(Response::error(error.to_string()));
                    }
                }
            }
            Command::LinkRxClosed(id) => {
                if let Some(l) = self.links.get(&id) {
                    if l.state == LinkState::Active {
                        log::info!("{}: {id} ({}) closed by peer", self.cfg.node_id, l.address);
                    }
                }
                self.close_link(id);
            }
            Command::LinkTxFinished(id, requeue) => self.on_link_finished(id, requeue),
            Command::TxRejected(id, mut desc, reason) => {
                let address = self.links.get(&id).map(|l| l.address.clone());
                log::warn!("{}: {id}: transmission refused: {reason}", self.cfg.node_id);
                let to_storage = address.is_some() && address == self.cfg.storage_address;
                self.unaccount_enqueue(to_storage, desc.weight);
                if to_storage {
                    desc.storage_failed = true;
                    self.redispatch(desc);
                } else if desc.redispatched > 0 {
                    self.drop_bundle(desc, DropReason::DispatcherDrop);
                } else {
                    self.redispatch(desc);
                }
            }
            Command::Configure {
                conn,
                config,
                outbound,
                reply,
            } => {
                let resp = self.configure(conn, config, outbound);
                let _ = reply.send(resp);
                self.after_configure(conn);
            }
            Command::SendAdu { conn, adu, reply } => match self.bundle_from_adu(conn, adu) {
                Ok(bundle) => {
                    let _ = reply.send(Response::ok());
                    let now = self.clock.now_ms();
                    self.ingest(BundleDescriptor::new(bundle, Origin::Agent(conn), now));
                }
                Err(detail) => {
                    let _ = reply.send(Response::error(detail));
                }
            },
            Command::LinkControl {
                conn,
                op,
                node_id,
                cla_address,
                flags,
                reply,
            } => self.link_control(conn, op, node_id, cla_address, flags, reply),
            Command::DispatchResponse {
                conn,
                request_id,
                decision,
            } => self.on_dispatch_response(conn, request_id, decision),
            Command::Disconnect(conn) => self.disconnect(conn),
            Command::BdmTimeout(id) => {
                if let Some(p) = self.pending.remove(&id) {
                    self.pending_by_node.remove(&p.destination_node);
                    self.stats.bdm_timeouts += 1;
                    log::warn!(
                        "{}: dispatch request {id} for {} timed out",
                        self.cfg.node_id,
                        p.destination_node
                    );
                    for desc in p.descs {
                        self.leave_pending(&desc);
                        self.fallback(desc);
                    }
                }
            }
            Command::Stats(reply) => {
                let _ = reply.send(self.stats.clone());
            }
            Command::FibSnapshot(reply) => {
                let _ = reply.send(self.fib.entries());
            }
            Command::FibEvents(reply) => {
                let _ = reply.send((self.fib.events().to_vec(), self.fib.entries()));
            }
            Command::Shutdown(_) => unreachable!("handled in run"),
        }
    }

    // Ingest and delivery.

    fn ingest(&mut self, mut desc: BundleDescriptor) -> IngestOutcome {
        self.stats.ingested += desc.weight;
        if desc.bundle.is_fragment() {
            self.stats.fragments_ingested += 1;
        }
        let now = self.clock.now_ms();
        match expiry_time(&desc.bundle, desc.received_at) {
            Ok(t) if t > now => {}
            Ok(_) => return self.drop_bundle(desc, DropReason::Expired),
            Err(e) => {
                log::warn!("{}: cannot determine expiry: {e}", self.cfg.node_id);
                return self.drop_bundle(desc, DropReason::Expired);
            }
        }
        if matches!(desc.origin, Origin::Cla(_)) {
            if let Some((limit, count)) = desc.bundle.hop_count() {
                let count = count.saturating_add(1);
                desc.bundle.set_hop_count(limit, count);
                if count > limit {
                    return self.drop_bundle(desc, DropReason::HopLimitExceeded);
                }
            }
        }
        log::debug!(
            "{}: ingest {} -> {} ({}) from {}",
            self.cfg.node_id,
            desc.bundle.source,
            desc.bundle.destination,
            desc.bundle.creation,
            desc.origin
        );
        if desc.bundle.destination.same_node(&self.cfg.node_id) {
            self.deliver_local(desc)
        } else {
            self.dispatch(desc);
            IngestOutcome::Dispatched
        }
    }

    fn deliver_local(&mut self, desc: BundleDescriptor) -> IngestOutcome {
        if desc.bundle.is_fragment() {
            return self.buffer_fragment(desc);
        }
        let agent = desc.bundle.destination.agent_id().unwrap_or_default();
        match self.registry.receiver(&agent) {
            Some(Sink::Conn(conn)) => {
                let b = &desc.bundle;
                let msg = Message::BundleAdu(BundleAdu {
                    src: b.source.clone(),
                    dst: b.destination.clone(),
                    creation: b.creation,
                    payload: b.payload().to_vec(),
                    is_bibe: b.is_admin_record(),
                    lifetime_ms: Some(b.lifetime_ms),
                });
                if self.send_to_conn(conn, msg) {
                    self.count_delivered(&desc);
                    return IngestOutcome::DeliveredLocally;
                }
            }
            Some(Sink::Service) => {
                let authorized = match desc.origin {
                    Origin::Agent(c) => self.conns.get(&c).is_some_and(|c| !c.auth.is_empty()),
                    _ => false,
                };
                let now = self.clock.now_ms();
                let produced = match self.services.get_mut(&agent) {
                    Some(svc) => svc.handle(ServiceRequest {
                        desc: &desc,
                        authorized,
                        now,
                    }),
                    None => Vec::new(),
                };
                self.count_delivered(&desc);
                for (bundle, origin) in produced {
                    self.ingest(BundleDescriptor::new(bundle, origin, now));
                }
                return IngestOutcome::DeliveredLocally;
            }
            None => {}
        }
        if self.cfg.storage_address.is_some() && !desc.storage_failed {
            log::info!(
                "{}: no receiver for {}, storing",
                self.cfg.node_id,
                desc.bundle.destination
            );
            self.store(desc);
            IngestOutcome::Dispatched
        } else {
            self.drop_bundle(desc, DropReason::NoSuchEndpoint)
        }
    }

    fn count_delivered(&mut self, desc: &BundleDescriptor) {
        self.stats.delivered += desc.weight;
        self.stats.adus_delivered += 1;
        log::info!(
            "{}: delivered {} -> {} ({})",
            self.cfg.node_id,
            desc.bundle.source,
            desc.bundle.destination,
            desc.bundle.creation
        );
    }

    fn buffer_fragment(&mut self, desc: BundleDescriptor) -> IngestOutcome {
        let key = FragmentKey::of(&desc.bundle).expect("fragment without fragment fields");
        self.stats.pending += desc.weight;
        let parts = self.reassembly.entry(key.clone()).or_default();
        parts.push(desc);
        let refs: Vec<&Bundle> = {
            let mut v: Vec<&Bundle> = parts.iter().map(|d| &d.bundle).collect();
            v.sort_by_key(|b| b.fragment.map(|f| f.offset).unwrap_or(0));
            v
        };
        if !missing_ranges(&refs, key.total_adu_length).is_empty() {
            return IngestOutcome::AwaitingFragments;
        }
        let parts = self.reassembly.remove(&key).unwrap_or_default();
        let weight: u64 = parts.iter().map(|d| d.weight).sum();
        self.stats.pending -= weight;
        let bundles: Vec<Bundle> = parts.iter().map(|d| d.bundle.clone()).collect();
        match reassemble(&bundles) {
            Ok(whole) => {
                let first = &parts[0];
                let mut desc = BundleDescriptor::new(whole, first.origin.clone(), first.received_at);
                desc.weight = weight;
                self.deliver_local(desc)
            }
            Err(e) => {
                log::warn!("{}: reassembly failed: {e}", self.cfg.node_id);
                let mut first = parts.into_iter().next().expect("non-empty");
                first.weight = weight;
                self.drop_bundle(first, DropReason::DispatcherDrop)
            }
        }
    }

    fn drop_bundle(&mut self, desc: BundleDescriptor, reason: DropReason) -> IngestOutcome {
        *self.stats.dropped.entry(reason).or_default() += desc.weight;
        log::info!(
            "{}: dropped {} -> {} ({}): {reason}",
            self.cfg.node_id,
            desc.bundle.source,
            desc.bundle.destination,
            desc.bundle.creation
        );
        IngestOutcome::Dropped(reason)
    }

    // Dispatch.

    fn dispatch(&mut self, desc: BundleDescriptor) {
        let dest = desc.bundle.destination.clone();
        if let Some((decision, source)) = dispatch::resolve_static(&self.cache, &self.fib, &dest) {
            match source {
                DecisionSource::Cache => self.stats.cache_hits += 1,
                DecisionSource::Fib => self.cache.put(&dest, &decision, &self.fib, self.clock.now_ms()),
            }
            self.apply(desc, decision);
            return;
        }
        match self.bdm {
            Some(bdm) => self.ask_bdm(bdm, desc),
            None => self.fallback(desc),
        }
    }

    fn redispatch(&mut self, mut desc: BundleDescriptor) {
        desc.redispatched = desc.redispatched.saturating_add(1);
        desc.retention = Retention::default();
        if desc.redispatched > MAX_REDISPATCH {
            self.drop_bundle(desc, DropReason::DispatcherDrop);
        } else {
            self.dispatch(desc);
        }
    }

    fn ask_bdm(&mut self, bdm: ConnId, mut desc: BundleDescriptor) {
        let node = desc.bundle.destination.node_id();
        desc.retention.set(Retention::AWAITING_DISPATCH, true);
        if self.cache.is_enabled() {
            if let Some(p) = self.pending_by_node.get(&node).and_then(|id| self.pending.get_mut(id)) {
                self.stats.pending += desc.weight;
                p.descs.push(desc);
                return;
            }
        }
        let id = self.next_request;
        self.next_request += 1;
        let b = &desc.bundle;
        let size = encode_bundle(b).map(|v| v.len() as u64).unwrap_or(0);
        let msg = Message::DispatchRequest(DispatchRequest {
            request_id: id,
            meta: BundleMeta {
                src: b.source.clone(),
                dst: b.destination.clone(),
                creation: b.creation,
                size,
                lifetime_ms: b.lifetime_ms,
            },
        });
        if !self.send_to_conn(bdm, msg) {
            desc.retention.set(Retention::AWAITING_DISPATCH, false);
            self.fallback(desc);
            return;
        }
        self.stats.dispatch_requests += 1;
        self.stats.pending += desc.weight;
        if self.cache.is_enabled() {
            self.pending_by_node.insert(node.clone(), id);
        }
        self.pending.insert(
            id,
            PendingDispatch {
                destination_node: node,
                conn: bdm,
                descs: vec![desc],
            },
        );
        let deadline = self.clock.now_ms() + self.cfg.bdm_timeout_ms;
        let sleep = self.clock.sleep_until(deadline);
        let handle = self.handle.clone();
        tokio::spawn(async move {
            sleep.await;
            handle.send(Command::BdmTimeout(id)).await;
        });
    }

    fn leave_pending(&mut self, desc: &BundleDescriptor) {
        self.stats.pending -= desc.weight;
    }

    fn on_dispatch_response(&mut self, conn: ConnId, id: u64, decision: DispatchDecision) {
        match self.pending.get(&id) {
            Some(p) if p.conn == conn => {}
            _ => {
                log::warn!("{}: unexpected dispatch response {id}", self.cfg.node_id);
                return;
            }
        }
        let p = self.pending.remove(&id).expect("checked");
        self.pending_by_node.remove(&p.destination_node);
        let decision = match decision.validate() {
            Ok(()) => decision,
            Err(e) => {
                log::warn!("{}: invalid dispatch decision: {e}", self.cfg.node_id);
                DispatchDecision::drop(e)
            }
        };
        log::debug!("{}: BDM decided {decision} for {}", self.cfg.node_id, p.destination_node);
        self.cache
            .put(&p.destination_node, &decision, &self.fib, self.clock.now_ms());
        for mut desc in p.descs {
            self.leave_pending(&desc);
            desc.retention.set(Retention::AWAITING_DISPATCH, false);
            self.apply(desc, decision.clone());
        }
    }

    fn fallback(&mut self, desc: BundleDescriptor) {
        match dispatch::fallback(self.cfg.storage_address.is_some(), desc.storage_failed) {
            Fallback::Store => self.store(desc),
            Fallback::DropNoRoute => {
                self.drop_bundle(desc, DropReason::NoRoute);
            }
            Fallback::DropStorageFull => {
                self.drop_bundle(desc, DropReason::StorageFull);
            }
        }
    }

    fn apply(&mut self, desc: BundleDescriptor, decision: DispatchDecision) {
        match decision.action {
            Action::Forward => self.forward(desc, &decision),
            Action::Store => {
                if desc.storage_failed {
                    self.drop_bundle(desc, DropReason::StorageFull);
                } else if self.cfg.storage_address.is_none() {
                    self.fallback(desc);
                } else {
                    self.store(desc);
                }
            }
            Action::Drop => {
                log::info!("{}: dispatcher drop: {}", self.cfg.node_id, decision.reason);
                self.drop_bundle(desc, DropReason::DispatcherDrop);
            }
        }
    }

    fn active_link_for(&self, address: &ClaAddress) -> Option<LinkId> {
        self.fib
            .active_link(address)
            .filter(|id| self.links.get(id).is_some_and(|l| l.state == LinkState::Active))
    }

    fn forward(&mut self, desc: BundleDescriptor, decision: &DispatchDecision) {
        let hop = decision
            .next_hops
            .iter()
            .find_map(|h| self.active_link_for(&h.cla_address).map(|id| (id, h.cla_address.clone())));
        match hop {
            Some((link, address)) => self.enqueue(desc, link, &address, decision.max_fragment_payload, false),
            None if desc.redispatched == 0 => {
                log::info!("{}: no next hop of {decision} is up, dispatching again", self.cfg.node_id);
                self.redispatch(desc);
            }
            None => self.fallback(desc),
        }
    }

    fn store(&mut self, desc: BundleDescriptor) {
        let Some(address) = self.cfg.storage_address.clone() else {
            self.drop_bundle(desc, DropReason::NoRoute);
            return;
        };
        match self.active_link_for(&address) {
            Some(link) => self.enqueue(desc, link, &address, None, true),
            None => {
                log::warn!("{}: storage link is not up", self.cfg.node_id);
                self.drop_bundle(desc, DropReason::StorageFull);
            }
        }
    }

    fn enqueue(
        &mut self,
        mut desc: BundleDescriptor,
        link: LinkId,
        address: &ClaAddress,
        max_fragment: Option<u64>,
        to_storage: bool,
    ) {
        let cla_max = self.clas.max_bundle_size(&address.cla_name);
        let pieces = match dispatch::fragmentation_plan(&desc.bundle, max_fragment, cla_max) {
            Ok(None) => vec![desc.bundle.clone()],
            Ok(Some(m)) => match fragment_bundle(&desc.bundle, m) {
                Ok(p) => p,
                Err(e) => {
                    log::warn!("{}: cannot fragment for {address}: {e}", self.cfg.node_id);
                    self.drop_bundle(desc, DropReason::DispatcherDrop);
                    return;
                }
            },
            Err(e) => {
                log::warn!("{}: bundle does not fit {address}: {e}", self.cfg.node_id);
                self.drop_bundle(desc, DropReason::DispatcherDrop);
                return;
            }
        };
        let Some(record) = self.links.get(&link) else {
            self.redispatch(desc);
            return;
        };
        desc.retention.set(Retention::IN_FLIGHT, true);
        let n = pieces.len();
        let weight = desc.weight;
        for (i, piece) in pieces.into_iter().enumerate() {
            let d = BundleDescriptor {
                bundle: piece,
                weight: if i == 0 { weight } else { 0 },
                ..desc.clone()
            };
            match record.tasks.tx_queue.try_send(d) {
                Ok(()) => {}
                Err(mpsc::error::TrySendError::Full(_)) if i == 0 => {
                    log::warn!("{}: queue of {link} ({address}) is full", self.cfg.node_id);
                    self.drop_bundle(desc, DropReason::NoRoute);
                    return;
                }
                Err(mpsc::error::TrySendError::Closed(_)) if i == 0 => {
                    self.redispatch(desc);
                    return;
                }
                Err(_) => {
                    log::warn!("{}: lost fragment {i} of {n} on {link}", self.cfg.node_id);
                }
            }
        }
        if to_storage {
            self.stats.stored += weight;
        } else {
            self.stats.forwarded += weight;
        }
        log::debug!(
            "{}: enqueued {} -> {} on {link} ({address}){}",
            self.cfg.node_id,
            desc.bundle.source,
            desc.bundle.destination,
            if n > 1 { format!(" as {n} fragments") } else { String::new() }
        );
    }

    fn unaccount_enqueue(&mut self, to_storage: bool, weight: u64) {
        if to_storage {
            self.stats.stored -= weight;
        } else {
            self.stats.forwarded -= weight;
        }
    }

    // Links.

    fn request_link(&mut self, address: ClaAddress, req: LinkRequest) {
        let Some(cla) = self.clas.get(&address.cla_name) else {
            if let Some(reply) = req.reply {
                let _ = reply.send(Response::error(ClaError::UnknownCla(address.cla_name.clone()).to_string()));
            }
            return;
        };
        if let Some(waiters) = self.pending_opens.get_mut(&address) {
            waiters.push(req);
            return;
        }
        self.pending_opens.insert(address.clone(), vec![req]);
        let handle = self.handle.clone();
        tokio::spawn(async move {
            match cla.open_link(&address.detail).await {
                Ok(halves) => handle.send(Command::LinkEstablished { address, halves }).await,
                Err(error) => handle.send(Command::LinkOpenFailed { address, error }).await,
            };
        });
    }

    fn on_link_established(&mut self, address: ClaAddress, halves: LinkHalves) {
        let id = LinkId(self.next_link);
        self.next_link += 1;
        let tasks = spawn_link(
            id,
            address.clone(),
            halves,
            self.cfg.link_queue_capacity,
            self.handle.clone(),
            self.clock.clone(),
        );
        self.links.insert(
            id,
            LinkRecord {
                address: address.clone(),
                state: LinkState::Active,
                tasks,
            },
        );
        log::info!("{}: {id} up ({address})", self.cfg.node_id);
        for ev in self.fib.link_up(address.clone(), id) {
            self.fib_changed(ev);
        }
        for req in self.pending_opens.remove(&address).unwrap_or_default() {
            if let Some(node) = req.node_id {
                if let Some(ev) = self.fib.upsert(node, address.clone(), FibFlags(req.flags)) {
                    self.fib_changed(ev);
                }
            }
            if let Some(reply) = req.reply {
                let _ = reply.send(Response::ok());
            }
        }
    }

    /// Stops a link. Queued bundles come back through `LinkTxFinished`.
    fn close_link(&mut self, id: LinkId) {
        let Some(l) = self.links.get_mut(&id) else {
            return;
        };
        if l.state == LinkState::Active {
            l.state = LinkState::Closing;
        }
        l.tasks.cancel.cancel();
        let address = l.address.clone();
        self.cache.invalidate_address(&address);
        for ev in self.fib.link_down(&address, id) {
            self.fib_changed(ev);
        }
    }

    fn on_link_finished(&mut self, id: LinkId, requeue: Vec<BundleDescriptor>) {
        self.close_link(id);
        let Some(l) = self.links.remove(&id) else {
            return;
        };
        l.tasks.rx_task.abort();
        log::info!("{}: {id} down ({})", self.cfg.node_id, l.address);
        let to_storage = Some(&l.address) == self.cfg.storage_address.as_ref();
        if !requeue.is_empty() {
            log::info!(
                "{}: {} queued bundles of {id} go back to dispatch",
                self.cfg.node_id,
                requeue.len()
            );
        }
        for desc in requeue {
            self.unaccount_enqueue(to_storage, desc.weight);
            self.redispatch(desc);
        }
    }

    fn link_control(
        &mut self,
        conn: Option<ConnId>,
        op: LinkOp,
        node_id: EndpointId,
        address: ClaAddress,
        flags: Option<u64>,
        reply: oneshot::Sender<Response>,
    ) {
        if let Some(c) = conn {
            if !self
                .conns
                .get(&c)
                .is_some_and(|c| c.auth.contains(&Auth::LinkControl))
            {
                let _ = reply.send(Response::new(Status::Unauthorized, "LINK_CONTROL not granted"));
                return;
            }
        }
        match op {
            LinkOp::Up => {
                let flags = flags.unwrap_or(FibFlags::DIRECT.0);
                if self.active_link_for(&address).is_some() {
                    if let Some(ev) = self.fib.upsert(node_id, address, FibFlags(flags)) {
                        self.fib_changed(ev);
                    }
                    let _ = reply.send(Response::ok());
                    return;
                }
                self.request_link(
                    address,
                    LinkRequest {
                        node_id: Some(node_id),
                        flags,
                        reply: Some(reply),
                    },
                );
            }
            LinkOp::Down => {
                if let Some(ev) = self.fib.remove(&node_id, &address) {
                    self.fib_changed(ev);
                }
                if !self.fib.has_entries_for_address(&address) {
                    let ids: Vec<LinkId> = self
                        .links
                        .iter()
                        .filter(|(_, l)| l.address == address)
                        .map(|(id, _)| *id)
                        .collect();
                    for id in ids {
                        self.close_link(id);
                    }
                }
                let _ = reply.send(Response::ok());
            }
            LinkOp::NotifyUp | LinkOp::NotifyDown => {
                let _ = reply.send(Response::error("NOTIFY operations are issued by the daemon"));
            }
        }
    }

    fn fib_changed(&mut self, ev: FibEvent) {
        let msg = match &ev {
            FibEvent::Upsert(e) => {
                self.cache.invalidate_node(&e.node_id);
                LinkMessage {
                    op: LinkOp::NotifyUp,
                    node_id: e.node_id.clone(),
                    cla_address: e.cla_address.clone(),
                    flags: Some(e.flags.0),
                }
            }
            FibEvent::Remove { node_id, cla_address } => {
                self.cache.invalidate_node(node_id);
                LinkMessage {
                    op: LinkOp::NotifyDown,
                    node_id: node_id.clone(),
                    cla_address: cla_address.clone(),
                    flags: None,
                }
            }
        };
        let watchers: Vec<ConnId> = self
            .conns
            .iter()
            .filter(|(_, c)| c.outbound.is_some() && c.auth.contains(&Auth::LinkControl))
            .map(|(id, _)| *id)
            .collect();
        for w in watchers {
            self.send_to_conn(w, Message::Link(msg.clone()));
        }
    }

    // Agent connections.

    fn configure(&mut self, conn: ConnId, config: ConnectionConfig, outbound: mpsc::Sender<Message>) -> Response {
        let mut granted = AuthSet::new();
        if !config.auth.is_empty() {
            match &self.cfg.admin_secret {
                Some(secret) if *secret == config.admin_secret => granted = config.auth.clone(),
                _ => return Response::new(Status::Unauthorized, "admin secret missing or wrong"),
            }
            if granted.contains(&Auth::Dispatch) {
                if config.is_active {
                    return Response::error("DISPATCH requires a passive connection");
                }
                if self.bdm.is_some() {
                    return Response::new(Status::Occupied, "another dispatcher is attached");
                }
            }
        }
        let direction = if config.is_active {
            Direction::Sender
        } else {
            Direction::Receiver
        };
        let agent_id = if config.agent_id.is_empty() {
            None
        } else {
            if self.cfg.node_id.with_agent(&config.agent_id).is_err() {
                return Response::error(format!("invalid agent id {:?} for {}", config.agent_id, self.cfg.node_id));
            }
            match self
                .registry
                .register(&config.agent_id, direction, Sink::Conn(conn), &config.shared_secret)
            {
                Ok(()) => Some(config.agent_id.clone()),
                Err(RegistryError::Occupied(a)) => {
                    return Response::new(Status::Occupied, format!("endpoint {a:?} is occupied"))
                }
                Err(e) => return Response::error(e.to_string()),
            }
        };
        if granted.contains(&Auth::Dispatch) {
            self.bdm = Some(conn);
            log::info!("{}: dispatcher attached on connection {conn}", self.cfg.node_id);
        }
        self.conns.insert(
            conn,
            AgentConn {
                outbound: (!config.is_active).then_some(outbound),
                direction,
                agent_id,
                auth: granted,
            },
        );
        Response::ok()
    }

    /// Replays the FIB to a freshly authorized passive client; a Keepalive marks the end.
    fn after_configure(&mut self, conn: ConnId) {
        let wants = self
            .conns
            .get(&conn)
            .is_some_and(|c| c.outbound.is_some() && c.auth.contains(&Auth::LinkControl));
        if !wants {
            return;
        }
        for e in self.fib.entries() {
            let msg = Message::Link(LinkMessage {
                op: LinkOp::NotifyUp,
                node_id: e.node_id,
                cla_address: e.cla_address,
                flags: Some(e.flags.0),
            });
            if !self.send_to_conn(conn, msg) {
                return;
            }
        }
        self.send_to_conn(conn, Message::Keepalive);
    }

    fn bundle_from_adu(&mut self, conn: ConnId, adu: BundleAdu) -> Result<Bundle, String> {
        let c = self.conns.get(&conn).ok_or("connection is not configured")?;
        let agent = c.agent_id.clone().ok_or("connection has no registered endpoint")?;
        if adu.payload.len() > self.cfg.max_adu_size {
            return Err(format!(
                "ADU of {} octets exceeds limit of {}",
                adu.payload.len(),
                self.cfg.max_adu_size
            ));
        }
        let own = self.cfg.node_id.with_agent(&agent).map_err(|e| e.to_string())?;
        if !adu.src.is_null() && adu.src != own {
            return Err(format!("source {} is not the registered endpoint {own}", adu.src));
        }
        if adu.dst.is_null() {
            return Err("destination must not be dtn:none".into());
        }
        let creation = if adu.creation.dtn_time_ms == 0 {
            self.sequencer.next(self.clock.now_ms())
        } else {
            adu.creation
        };
        let crc = self.cfg.crc_type;
        let mut b = Bundle::new(
            own,
            adu.dst,
            creation,
            adu.lifetime_ms.unwrap_or(self.cfg.default_lifetime_ms),
            adu.payload,
            crc,
        );
        let n = b.next_block_number();
        b.push_extension(CanonicalBlock::hop_count(n, self.cfg.hop_limit, 0, crc));
        if adu.is_bibe {
            b.proc_flags.set(ProcFlags::ADU_IS_ADMIN_RECORD, true);
        }
        Ok(b)
    }

    /// Queues a message on a passive connection. Overflow closes the connection.
    fn send_to_conn(&mut self, conn: ConnId, msg: Message) -> bool {
        let Some(out) = self.conns.get(&conn).and_then(|c| c.outbound.clone()) else {
            return false;
        };
        match out.try_send(msg) {
            Ok(()) => true,
            Err(mpsc::error::TrySendError::Full(_)) => {
                log::warn!("{}: outbound queue of connection {conn} overflowed, closing it", self.cfg.node_id);
                self.disconnect(conn);
                false
            }
            Err(mpsc::error::TrySendError::Closed(_)) => {
                self.disconnect(conn);
                false
            }
        }
    }

    fn disconnect(&mut self, conn: ConnId) {
        let Some(c) = self.conns.remove(&conn) else {
            return;
        };
        if let Some(agent) = &c.agent_id {
            self.registry.unregister(agent, c.direction, Sink::Conn(conn));
        }
        if self.bdm == Some(conn) {
            self.bdm = None;
            log::info!("{}: dispatcher on connection {conn} detached", self.cfg.node_id);
            let ids: Vec<u64> = self
                .pending
                .iter()
                .filter(|(_, p)| p.conn == conn)
                .map(|(id, _)| *id)
                .collect();
            for id in ids {
                let p = self.pending.remove(&id).expect("listed");
                self.pending_by_node.remove(&p.destination_node);
                for desc in p.descs {
                    self.leave_pending(&desc);
                    self.fallback(desc);
                }
            }
        }
    }
}
