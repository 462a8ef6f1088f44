//! Bundle-in-Bundle Encapsulation as a CLA. A link `bibe:<eid>` wraps each
//! outgoing bundle into an outer bundle addressed to `<eid>` and hands the
//! outer bundle back to the node. Outer bundles delivered to the local BIBE
//! endpoint are unwrapped by [`BibeService`].

use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use thiserror::Error;
use tokio::sync::oneshot;

use crate::bpa::{BundleDescriptor, LocalService, Origin, ServiceRequest};
use crate::bundle::{decode_bundle, expiry_time, Bundle, BundleError, ProcFlags};
use crate::cbor::{CborError, Decoder, Encoder};
use crate::cla::{Cla, ClaAddress, ClaContext, ClaError, ClaReceiver, ClaSender, LinkHalves, RxFrame, TxItem};
use crate::clock::CreationSequencer;
use crate::crc::CrcType;
use crate::eid::EndpointId;

pub const CLA_NAME: &str = "bibe";
pub const DEFAULT_AGENT_ID: &str = "bibe";

#[derive(Debug, Error)]
pub enum BibeError {
    #[error("malformed BPDU: {0}")]
    MalformedBpdu(String),
    #[error("encapsulated bundle: {0}")]
    InnerDecodeFailed(#[from] BundleError),
    #[error("outer bundle of {size} octets exceeds {max}")]
    InnerTooLarge { size: u64, max: u64 },
}

impl From<CborError> for BibeError {
    fn from(e: CborError) -> Self {
        BibeError::MalformedBpdu(e.to_string())
    }
}

/// `[transmission_id, retransmission_time, encapsulated]` with custody fields fixed at 0.
pub fn encode_bpdu(inner: &[u8]) -> Vec<u8> {
    let mut e = Encoder::with_capacity(inner.len() + 12);
    e.array(3).uint(0).uint(0).bytes(inner);
    e.into_inner()
}

pub fn decode_bpdu(payload: &[u8]) -> Result<&[u8], BibeError> {
    let mut d = Decoder::new(payload);
    if d.definite_array()? != 3 {
        return Err(BibeError::MalformedBpdu("expected an array of three".into()));
    }
    let (tid, rtime) = (d.uint()?, d.uint()?);
    if tid != 0 || rtime != 0 {
        return Err(BibeError::MalformedBpdu("custody transfer is not supported".into()));
    }
    let inner = d.bytes()?;
    if !d.is_at_end() {
        return Err(BibeError::MalformedBpdu("trailing bytes".into()));
    }
    Ok(inner)
}

pub struct Encapsulation<'a> {
    pub source: &'a EndpointId,
    pub destination: &'a EndpointId,
    pub lifetime_ms: u64,
    pub crc_type: CrcType,
    pub now: u64,
}

/// Wraps the serialized `inner` bundle. The outer lifetime never exceeds what
/// is left of the inner one.
pub fn encapsulate(
    inner: &Bundle,
    inner_bytes: &[u8],
    inner_received_at: u64,
    creation: crate::bundle::CreationTimestamp,
    p: &Encapsulation<'_>,
) -> Result<Bundle, BibeError> {
    let remaining = expiry_time(inner, inner_received_at)?.saturating_sub(p.now);
    let mut outer = Bundle::new(
        p.source.clone(),
        p.destination.clone(),
        creation,
        p.lifetime_ms.min(remaining),
        encode_bpdu(inner_bytes),
        p.crc_type,
    );
    outer.proc_flags.set(ProcFlags::ADU_IS_ADMIN_RECORD, true);
    Ok(outer)
}

pub fn decapsulate(outer: &Bundle) -> Result<Bundle, BibeError> {
    let inner = decode_bpdu(outer.payload())?;
    Ok(decode_bundle(inner)?)
}

#[derive(Debug, Clone)]
pub struct BibeConfig {
    /// Source of outer bundles, normally `<node>/bibe`.
    pub endpoint: EndpointId,
    pub outer_lifetime_ms: u64,
    pub crc_type: CrcType,
    pub max_outer_size: Option<u64>,
}

pub struct BibeCla {
    cfg: BibeConfig,
    sequencer: Arc<CreationSequencer>,
    ctx: Mutex<Option<ClaContext>>,
}

impl BibeCla {
    pub fn new(cfg: BibeConfig, sequencer: Arc<CreationSequencer>) -> Self {
        BibeCla {
            cfg,
            sequencer,
            ctx: Mutex::new(None),
        }
    }
}

/// Nothing arrives on a BIBE link; reception ends when the link is closed.
struct BibeReceiver {
    closed: Option<oneshot::Receiver<()>>,
}

#[async_trait]
impl ClaReceiver for BibeReceiver {
    async fn recv(&mut self) -> Result<Option<RxFrame>, ClaError> {
        if let Some(c) = self.closed.take() {
            let _ = c.await;
        }
        Ok(None)
    }
}

struct BibeSender {
    destination: EndpointId,
    cfg: BibeConfig,
    sequencer: Arc<CreationSequencer>,
    ctx: ClaContext,
    _closed: oneshot::Sender<()>,
}

#[async_trait]
impl ClaSender for BibeSender {
    async fn send(&mut self, item: &TxItem<'_>) -> Result<(), ClaError> {
        let now = self.ctx.clock.now_ms();
        let p = Encapsulation {
            source: &self.cfg.endpoint,
            destination: &self.destination,
            lifetime_ms: self.cfg.outer_lifetime_ms,
            crc_type: self.cfg.crc_type,
            now,
        };
        let outer = encapsulate(item.bundle, item.bytes, item.received_at, self.sequencer.next(now), &p)
            .map_err(|e| ClaError::Rejected(e.to_string()))?;
        if let Some(max) = self.cfg.max_outer_size {
            let size = outer.encode().map_err(|e| ClaError::Rejected(e.to_string()))?.len() as u64;
            if size > max {
                return Err(ClaError::Rejected(BibeError::InnerTooLarge { size, max }.to_string()));
            }
        }
        log::debug!(
            "bibe: {} -> {} wrapped for {}",
            item.bundle.source,
            item.bundle.destination,
            self.destination
        );
        if self.ctx.bpa.ingest(BundleDescriptor::new(outer, Origin::Local, now)).await {
            Ok(())
        } else {
            Err(ClaError::Closed)
        }
    }
}

#[async_trait]
impl Cla for BibeCla {
    fn name(&self) -> &str {
        CLA_NAME
    }

    fn max_bundle_size(&self) -> Option<u64> {
        None
    }

    async fn start(&self, ctx: ClaContext) -> Result<(), ClaError> {
        *self.ctx.lock().unwrap() = Some(ctx);
        Ok(())
    }

    async fn open_link(&self, detail: &str) -> Result<LinkHalves, ClaError> {
        let destination: EndpointId = detail
            .parse()
            .map_err(|_| ClaError::InvalidAddress(format!("{CLA_NAME}:{detail}")))?;
        let ctx = self
            .ctx
            .lock()
            .unwrap()
            .clone()
            .ok_or_else(|| ClaError::ConnectionFailed("bibe CLA not started".into()))?;
        let (tx, rx) = oneshot::channel();
        Ok(LinkHalves {
            rx: Box::new(BibeReceiver { closed: Some(rx) }),
            tx: Box::new(BibeSender {
                destination,
                cfg: self.cfg.clone(),
                sequencer: self.sequencer.clone(),
                ctx,
                _closed: tx,
            }),
        })
    }
}

/// The local BIBE endpoint: unwraps outer bundles and re-ingests the inner one.
#[derive(Debug, Default)]
pub struct BibeService;

impl LocalService for BibeService {
    fn handle(&mut self, req: ServiceRequest<'_>) -> Vec<(Bundle, Origin)> {
        let outer = &req.desc.bundle;
        match decapsulate(outer) {
            Ok(inner) => {
                let from = ClaAddress::new(CLA_NAME, outer.source.to_string());
                vec![(inner, Origin::Cla(from))]
            }
            Err(e) => {
                log::warn!("bibe: outer bundle from {} discarded: {e}", outer.source);
                Vec::new()
            }
        }
    }
}
