//! Minimal TCP convergence layer: each bundle travels as one definite-length
//! CBOR byte string; the stream is those byte strings back to back. One
//! bidirectional connection per link.

use std::net::SocketAddr;
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use bytes::{Buf, Bytes, BytesMut};
use futures::{SinkExt, StreamExt};
use tokio::io::AsyncWriteExt;
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;
use tokio_util::codec::{Decoder, Encoder, FramedRead, FramedWrite};

use super::{Cla, ClaAddress, ClaContext, ClaError, ClaReceiver, ClaSender, LinkHalves, RxFrame, TxItem};
use crate::cbor::{write_head, MAJOR_BYTES};

pub const CLA_NAME: &str = "mtcp";
pub const DEFAULT_PORT: u16 = 4556;
pub const DEFAULT_MAX_FRAME: u64 = 16 * 1024 * 1024;

const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);

/// Frames one serialized bundle.
pub fn mtcp_frame(bundle_bytes: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(bundle_bytes.len() + 9);
    write_head(&mut out, MAJOR_BYTES, bundle_bytes.len() as u64);
    out.extend_from_slice(bundle_bytes);
    out
}

/// Streaming MTCP deframer.
#[derive(Debug, Clone)]
pub struct MtcpCodec {
    max_frame: u64,
}

impl MtcpCodec {
    pub fn new(max_frame: u64) -> Self {
        MtcpCodec { max_frame }
    }
}

impl Default for MtcpCodec {
    fn default() -> Self {
        MtcpCodec::new(DEFAULT_MAX_FRAME)
    }
}

impl Decoder for MtcpCodec {
    type Item = Vec<u8>;
    type Error = ClaError;

    fn decode(&mut self, src: &mut BytesMut) -> Result<Option<Vec<u8>>, ClaError> {
        let Some(&initial) = src.first() else {
            return Ok(None);
        };
        if initial >> 5 != MAJOR_BYTES {
            return Err(ClaError::MalformedFrame(format!(
                "expected CBOR byte string, got initial byte {initial:#04x}"
            )));
        }
        let (head_len, len) = match initial & 0x1F {
            n @ 0..=23 => (1usize, n as u64),
            n @ 24..=27 => {
                let extra = 1usize << (n - 24);
                if src.len() < 1 + extra {
                    return Ok(None);
                }
                let len = src[1..1 + extra]
                    .iter()
                    .fold(0u64, |acc, &b| (acc << 8) | b as u64);
                (1 + extra, len)
            }
            _ => {
                return Err(ClaError::MalformedFrame(
                    "indefinite or reserved byte string length".into(),
                ))
            }
        };
        if len > self.max_frame {
            return Err(ClaError::FrameTooLarge {
                size: len,
                max: self.max_frame,
            });
        }
        let total = head_len + len as usize;
        if src.len() < total {
            src.reserve(total - src.len());
            return Ok(None);
        }
        src.advance(head_len);
        Ok(Some(src.split_to(len as usize).to_vec()))
    }
}

impl Encoder<Bytes> for MtcpCodec {
    type Error = ClaError;

    fn encode(&mut self, item: Bytes, dst: &mut BytesMut) -> Result<(), ClaError> {
        let mut head = Vec::with_capacity(9);
        write_head(&mut head, MAJOR_BYTES, item.len() as u64);
        dst.extend_from_slice(&head);
        dst.extend_from_slice(&item);
        Ok(())
    }
}

struct MtcpReceiver {
    inner: FramedRead<OwnedReadHalf, MtcpCodec>,
}

#[async_trait]
impl ClaReceiver for MtcpReceiver {
    async fn recv(&mut self) -> Result<Option<RxFrame>, ClaError> {
        match self.inner.next().await {
            Some(Ok(data)) => Ok(Some(RxFrame::new(data))),
            Some(Err(e)) => Err(e),
            None => Ok(None),
        }
    }
}

struct MtcpSender {
    inner: FramedWrite<OwnedWriteHalf, MtcpCodec>,
    max_bundle_size: Option<u64>,
}

#[async_trait]
impl ClaSender for MtcpSender {
    async fn send(&mut self, item: &TxItem<'_>) -> Result<(), ClaError> {
        if let Some(max) = self.max_bundle_size {
            if item.bytes.len() as u64 > max {
                return Err(ClaError::Rejected(format!(
                    "{} octets exceed CLA maximum {max}",
                    item.bytes.len()
                )));
            }
        }
        self.inner.send(Bytes::copy_from_slice(item.bytes)).await
    }

    async fn close(&mut self) {
        let _ = self.inner.get_mut().shutdown().await;
    }
}

fn halves(stream: TcpStream, max_frame: u64, max_bundle_size: Option<u64>) -> LinkHalves {
    let _ = stream.set_nodelay(true);
    let (r, w) = stream.into_split();
    LinkHalves {
        rx: Box::new(MtcpReceiver {
            inner: FramedRead::new(r, MtcpCodec::new(max_frame)),
        }),
        tx: Box::new(MtcpSender {
            inner: FramedWrite::new(w, MtcpCodec::new(max_frame)),
            max_bundle_size,
        }),
    }
}

#[derive(Debug, Clone)]
pub struct MtcpConfig {
    pub listen: Option<SocketAddr>,
    pub max_bundle_size: Option<u64>,
    pub max_frame: u64,
}

impl Default for MtcpConfig {
    fn default() -> Self {
        MtcpConfig {
            listen: None,
            max_bundle_size: None,
            max_frame: DEFAULT_MAX_FRAME,
        }
    }
}

pub struct MtcpCla {
    config: MtcpConfig,
    bound: Mutex<Option<SocketAddr>>,
    acceptor: Mutex<Option<JoinHandle<()>>>,
}

impl MtcpCla {
    pub fn new(config: MtcpConfig) -> Self {
        MtcpCla {
            config,
            bound: Mutex::new(None),
            acceptor: Mutex::new(None),
        }
    }

    /// Address the listener actually bound to.
    pub fn local_addr(&self) -> Option<SocketAddr> {
        *self.bound.lock().unwrap()
    }
}

#[async_trait]
impl Cla for MtcpCla {
    fn name(&self) -> &str {
        CLA_NAME
    }

    fn max_bundle_size(&self) -> Option<u64> {
        Some(self.config.max_bundle_size.unwrap_or(self.config.max_frame))
    }

    async fn start(&self, ctx: ClaContext) -> Result<(), ClaError> {
        let Some(addr) = self.config.listen else {
            return Ok(());
        };
        let listener = TcpListener::bind(addr).await?;
        let local = listener.local_addr()?;
        *self.bound.lock().unwrap() = Some(local);
        log::info!("mtcp: listening on {local}");
        let max_frame = self.config.max_frame;
        let max_bundle = self.max_bundle_size();
        let task = tokio::spawn(async move {
            loop {
                match listener.accept().await {
                    Ok((stream, peer)) => {
                        log::info!("mtcp: accepted connection from {peer}");
                        ctx.announce_incoming(
                            ClaAddress::new(CLA_NAME, peer.to_string()),
                            halves(stream, max_frame, max_bundle),
                        )
                        .await;
                    }
                    Err(e) => {
                        log::warn!("mtcp: accept failed: {e}");
                        tokio::time::sleep(Duration::from_millis(100)).await;
                    }
                }
            }
        });
        *self.acceptor.lock().unwrap() = Some(task);
        Ok(())
    }

    async fn stop(&self) {
        if let Some(task) = self.acceptor.lock().unwrap().take() {
            task.abort();
        }
    }

    async fn open_link(&self, detail: &str) -> Result<LinkHalves, ClaError> {
        let stream = tokio::time::timeout(CONNECT_TIMEOUT, TcpStream::connect(detail))
            .await
            .map_err(|_| ClaError::ConnectionFailed(format!("{detail}: timed out")))?
            .map_err(|e| ClaError::ConnectionFailed(format!("{detail}: {e}")))?;
        Ok(halves(stream, self.config.max_frame, self.max_bundle_size()))
    }
}
