//! A complete node: bundle processor, configured CLAs, storage, BIBE and the
//! agent protocol listeners, assembled from a [`Config`].

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;
use tokio::task::JoinHandle;

use crate::aap2::{Aap2Server, LinkOp, ServerConfig, DEFAULT_MAX_FRAME};
use crate::bibe::{BibeCla, BibeConfig, BibeService};
use crate::bpa::{BpaHandle, NodeStats, Processor, ProcessorConfig};
use crate::cla::loopback::{LoopbackCla, LoopbackConfig};
use crate::cla::mtcp::{MtcpCla, MtcpConfig};
use crate::cla::{ClaAddress, ClaContext, ClaError, ClaRegistry};
use crate::clock::{CreationSequencer, SharedClock};
use crate::config::{ClaConfig, Config, ConfigError};
use crate::eid::EndpointId;
use crate::fib::FibEntry;
use crate::storage::{StorageCla, StorageConfig, StorageError, StorageHandle, Store};

/// CLA address STORE decisions are carried out over.
pub const STORAGE_LINK: &str = "storage:local";

#[derive(Debug, Error)]
pub enum NodeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("storage: {0}")]
    Storage(#[from] StorageError),
    #[error("CLA: {0}")]
    Cla(#[from] ClaError),
    #[error("agent listener: {0}")]
    Listen(#[from] std::io::Error),
    #[error("service endpoint: {0}")]
    Service(String),
}

pub struct Node {
    node_id: EndpointId,
    bpa: BpaHandle,
    server: Aap2Server,
    processor: JoinHandle<()>,
    mtcp: Option<Arc<MtcpCla>>,
    storage: Option<StorageHandle>,
    clock: SharedClock,
}

impl Node {
    pub async fn start(config: &Config, clock: SharedClock) -> Result<Node, NodeError> {
        let node_id = config.node_id()?;
        let sequencer = Arc::new(CreationSequencer::new());
        let clas = ClaRegistry::new();

        let mut pcfg = ProcessorConfig::new(node_id.clone());
        pcfg.admin_secret = config.admin_secret.as_ref().map(|s| s.as_bytes().to_vec());
        pcfg.dispatch_cache = config.dispatch_cache;
        pcfg.bdm_timeout_ms = config.bdm_timeout_ms;
        pcfg.link_queue_capacity = config.link_queue_capacity;
        pcfg.agent_queue_capacity = config.aap2.outbound_queue;
        pcfg.hop_limit = config.hop_limit;
        pcfg.default_lifetime_ms = config.default_lifetime_ms;
        pcfg.crc_type = config.crc.into();
        pcfg.max_adu_size = config.max_adu_size;
        pcfg.fib_event_log = config.fib_event_log;

        let mut mtcp = None;
        let mut services: Vec<(String, Box<dyn crate::bpa::LocalService>)> = Vec::new();
        for cla in &config.clas {
            match cla {
                ClaConfig::Mtcp { listen, max_bundle_size } => {
                    let m = Arc::new(MtcpCla::new(MtcpConfig {
                        listen: *listen,
                        max_bundle_size: *max_bundle_size,
                        ..MtcpConfig::default()
                    }));
                    clas.register(cla.name(), m.clone())?;
                    mtcp = Some(m);
                }
                ClaConfig::Loopback {
                    delay_ms,
                    drop_probability,
                    max_bundle_size,
                } => {
                    let l = LoopbackCla::new(
                        LoopbackConfig {
                            delay_ms: *delay_ms,
                            drop_probability: *drop_probability,
                            max_bundle_size: *max_bundle_size,
                        },
                        clock.clone(),
                    );
                    clas.register(cla.name(), Arc::new(l))?;
                }
                ClaConfig::Bibe {
                    agent_id,
                    outer_lifetime_ms,
                    max_outer_size,
                } => {
                    let endpoint = node_id
                        .with_agent(agent_id)
                        .map_err(|e| NodeError::Service(e.to_string()))?;
                    let b = BibeCla::new(
                        BibeConfig {
                            endpoint,
                            outer_lifetime_ms: *outer_lifetime_ms,
                            crc_type: pcfg.crc_type,
                            max_outer_size: *max_outer_size,
                        },
                        sequencer.clone(),
                    );
                    clas.register(cla.name(), Arc::new(b))?;
                    services.push((agent_id.clone(), Box::new(BibeService)));
                }
            }
        }

        let mut storage = None;
        if let Some(s) = &config.storage {
            let store = Store::open(&s.path, s.quota)?;
            log::info!("storage: {} bundles in {}", store.len(), s.path.display());
            let endpoint = node_id
                .with_agent(&s.agent_id)
                .map_err(|e| NodeError::Service(e.to_string()))?;
            let (cla, handle) = StorageCla::spawn(
                store,
                StorageConfig {
                    endpoint,
                    crc_type: pcfg.crc_type,
                    sweep_interval_ms: s.sweep_interval_ms,
                },
                clock.clone(),
                sequencer.clone(),
            );
            services.push((s.agent_id.clone(), Box::new(cla.service(config.admin_secret.is_some()))));
            clas.register(crate::storage::CLA_NAME, Arc::new(cla))?;
            pcfg.storage_address = Some(STORAGE_LINK.parse()?);
            storage = Some(handle);
        }

        let (mut processor, bpa) = Processor::new(pcfg, clock.clone(), clas.clone(), sequencer);
        for (agent, service) in services {
            processor
                .add_service(&agent, service)
                .map_err(|e| NodeError::Service(format!("{agent}: {e}")))?;
        }
        let ctx = ClaContext {
            bpa: bpa.clone(),
            clock: clock.clone(),
        };
        for cla in clas.all() {
            if let Err(e) = cla.start(ctx.clone()).await {
                for c in clas.all() {
                    c.stop().await;
                }
                return Err(e.into());
            }
        }
        let processor = tokio::spawn(processor.run());

        let server_cfg = ServerConfig {
            tcp: config.aap2.tcp,
            unix: config.aap2.unix.clone(),
            keepalive_timeout: Duration::from_millis(config.aap2.keepalive_timeout_ms),
            max_frame: DEFAULT_MAX_FRAME,
            outbound_queue: config.aap2.outbound_queue,
        };
        let server = match Aap2Server::start(server_cfg, node_id.clone(), bpa.clone()).await {
            Ok(s) => s,
            Err(e) => {
                bpa.shutdown().await;
                let _ = processor.await;
                return Err(e.into());
            }
        };

        for l in &config.links {
            let node = EndpointId::parse_node_id(&l.node_id).map_err(|e| crate::config::invalid("links.node_id", e.to_string()))?;
            let address: ClaAddress = l.cla_address.parse()?;
            let r = bpa.link_control(LinkOp::Up, node.clone(), address.clone(), l.flags).await;
            if let Err(e) = r.into_result() {
                log::warn!("link {node} via {address} not established: {e}");
            }
        }

        log::info!("node {node_id} ready");
        Ok(Node {
            node_id,
            bpa,
            server,
            processor,
            mtcp,
            storage,
            clock,
        })
    }

    pub fn node_id(&self) -> &EndpointId {
        &self.node_id
    }

    pub fn bpa(&self) -> &BpaHandle {
        &self.bpa
    }

    pub fn clock(&self) -> &SharedClock {
        &self.clock
    }

    /// Agent protocol TCP address, as `host:port`.
    pub fn aap2_addr(&self) -> Option<SocketAddr> {
        self.server.tcp_addr()
    }

    pub fn mtcp_addr(&self) -> Option<SocketAddr> {
        self.mtcp.as_ref().and_then(|m| m.local_addr())
    }

    pub fn storage(&self) -> Option<&StorageHandle> {
        self.storage.as_ref()
    }

    pub async fn stats(&self) -> NodeStats {
        self.bpa.stats().await.unwrap_or_default()
    }

    pub async fn fib(&self) -> Vec<FibEntry> {
        self.bpa.fib().await.unwrap_or_default()
    }

    /// Closes the agent listeners and connections, then stops the processor,
    /// its links and CLAs.
    pub async fn shutdown(self) {
        self.server.stop().await;
        self.bpa.shutdown().await;
        let _ = self.processor.await;
        log::info!("node {} stopped", self.node_id);
    }
}
