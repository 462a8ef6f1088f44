//! The daemon side of the agent protocol: one handler task per accepted
//! stream, talking to the bundle processor through its command queue.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use tokio::io::{AsyncRead, AsyncWrite};
use tokio::net::{TcpListener, UnixListener};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio::time::{sleep_until, Instant};
use tokio_util::codec::Framed;
use tokio_util::sync::CancellationToken;

use super::codec::{Aap2Codec, DEFAULT_MAX_FRAME};
use super::machine::{ConnectionState, Phase, Verdict};
use super::message::{Kind, LinkMessage, Message, Response, Status};
use crate::bpa::{BpaHandle, Command, ConnId};
use crate::eid::EndpointId;

pub const DEFAULT_TCP_LISTEN: &str = "127.0.0.1:4244";

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub tcp: Option<SocketAddr>,
    pub unix: Option<PathBuf>,
    /// Idle limit for the controlling side; the daemon sends Keepalives at half this interval.
    pub keepalive_timeout: Duration,
    pub max_frame: u32,
    pub outbound_queue: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            tcp: Some(DEFAULT_TCP_LISTEN.parse().unwrap()),
            unix: None,
            keepalive_timeout: Duration::from_secs(30),
            max_frame: DEFAULT_MAX_FRAME,
            outbound_queue: 64,
        }
    }
}

struct Shared {
    cfg: ServerConfig,
    node_id: EndpointId,
    bpa: BpaHandle,
    next_conn: AtomicU64,
    cancel: CancellationToken,
}

pub struct Aap2Server {
    tcp_addr: Option<SocketAddr>,
    unix_path: Option<PathBuf>,
    cancel: CancellationToken,
    tasks: Vec<JoinHandle<()>>,
}

impl Aap2Server {
    pub async fn start(cfg: ServerConfig, node_id: EndpointId, bpa: BpaHandle) -> std::io::Result<Aap2Server> {
        let cancel = CancellationToken::new();
        let shared = Arc::new(Shared {
            cfg: cfg.clone(),
            node_id,
            bpa,
            next_conn: AtomicU64::new(1),
            cancel: cancel.clone(),
        });
        let mut tasks = Vec::new();
        let mut tcp_addr = None;
        if let Some(addr) = cfg.tcp {
            let listener = TcpListener::bind(addr).await?;
            tcp_addr = Some(listener.local_addr()?);
            log::info!("aap2: listening on tcp {}", tcp_addr.unwrap());
            let shared = shared.clone();
            tasks.push(tokio::spawn(async move {
                loop {
                    let accepted = tokio::select! {
                        _ = shared.cancel.cancelled() => break,
                        a = listener.accept() => a,
                    };
                    match accepted {
                        Ok((stream, peer)) => {
                            let _ = stream.set_nodelay(true);
                            spawn_connection(shared.clone(), stream, peer.to_string());
                        }
                        Err(e) => log::warn!("aap2: accept failed: {e}"),
                    }
                }
            }));
        }
        if let Some(path) = &cfg.unix {
            if path.exists() {
                std::fs::remove_file(path)?;
            }
            let listener = UnixListener::bind(path)?;
            log::info!("aap2: listening on {}", path.display());
            let shared = shared.clone();
            tasks.push(tokio::spawn(async move {
                loop {
                    let accepted = tokio::select! {
                        _ = shared.cancel.cancelled() => break,
                        a = listener.accept() => a,
                    };
                    match accepted {
                        Ok((stream, _)) => spawn_connection(shared.clone(), stream, "local socket".into()),
                        Err(e) => log::warn!("aap2: accept failed: {e}"),
                    }
                }
            }));
        }
        Ok(Aap2Server {
            tcp_addr,
            unix_path: cfg.unix,
            cancel,
            tasks,
        })
    }

    pub fn tcp_addr(&self) -> Option<SocketAddr> {
        self.tcp_addr
    }

    /// Stops listening and closes every connection.
    pub async fn stop(self) {
        self.cancel.cancel();
        for t in self.tasks {
            let _ = t.await;
        }
        if let Some(p) = self.unix_path {
            let _ = std::fs::remove_file(p);
        }
    }
}

fn spawn_connection<S>(shared: Arc<Shared>, stream: S, peer: String)
where
    S: AsyncRead + AsyncWrite + Unpin + Send + 'static,
{
    let conn = shared.next_conn.fetch_add(1, Ordering::Relaxed);
    tokio::spawn(async move {
        log::debug!("aap2: connection {conn} from {peer}");
        let mut framed = Framed::new(stream, Aap2Codec::new(shared.cfg.max_frame));
        let cancel = shared.cancel.clone();
        tokio::select! {
            _ = cancel.cancelled() => {}
            r = serve_connection(&shared, conn, &mut framed) => {
                if let Err(e) = r {
                    log::debug!("aap2: connection {conn}: {e}");
                }
            }
        }
        shared.bpa.send(Command::Disconnect(conn)).await;
        log::debug!("aap2: connection {conn} closed");
    });
}

type Conn<S> = Framed<S, Aap2Codec>;

#[derive(Debug)]
enum End {
    PeerClosed,
    Violation(String),
    Idle,
    Io(String),
}

impl std::fmt::Display for End {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            End::PeerClosed => f.write_str("closed by peer"),
            End::Violation(s) => write!(f, "protocol violation: {s}"),
            End::Idle => f.write_str("keepalive timeout"),
            End::Io(s) => f.write_str(s),
        }
    }
}

async fn write<S: AsyncRead + AsyncWrite + Unpin>(framed: &mut Conn<S>, msg: Message) -> Result<(), End> {
    framed.send(msg).await.map_err(|e| End::Io(e.to_string()))
}

async fn read<S: AsyncRead + AsyncWrite + Unpin>(framed: &mut Conn<S>, limit: Duration) -> Result<Message, End> {
    match tokio::time::timeout(limit, framed.next()).await {
        Err(_) => Err(End::Idle),
        Ok(None) => Err(End::PeerClosed),
        Ok(Some(Err(e))) => Err(End::Io(e.to_string())),
        Ok(Some(Ok(m))) => Ok(m),
    }
}

/// Answers a rejected message and ends the connection.
async fn reject<S: AsyncRead + AsyncWrite + Unpin>(framed: &mut Conn<S>, verdict: Verdict, kind: Kind) -> End {
    let (status, detail) = match verdict {
        Verdict::Unauthorized => (Status::Unauthorized, format!("{} requires authorization", kind_name(kind))),
        _ => (Status::Error, format!("{} is not permitted here", kind_name(kind))),
    };
    let _ = write(framed, Message::Response(Response::new(status, detail.clone()))).await;
    End::Violation(detail)
}

fn kind_name(k: Kind) -> &'static str {
    match k {
        Kind::Welcome => "Welcome",
        Kind::ConnectionConfig => "ConnectionConfig",
        Kind::BundleAdu => "BundleADU",
        Kind::DispatchRequest => "DispatchRequest",
        Kind::DispatchResponse => "DispatchResponse",
        Kind::LinkUp => "Link UP",
        Kind::LinkDown => "Link DOWN",
        Kind::LinkNotifyUp => "Link NOTIFY_UP",
        Kind::LinkNotifyDown => "Link NOTIFY_DOWN",
        Kind::Keepalive => "Keepalive",
        Kind::Response => "Response",
    }
}

async fn query(bpa: &BpaHandle, make: impl FnOnce(oneshot::Sender<Response>) -> Command) -> Response {
    let (tx, rx) = oneshot::channel();
    if !bpa.send(make(tx)).await {
        return Response::error("node is shutting down");
    }
    rx.await.unwrap_or_else(|_| Response::error("node is shutting down"))
}

async fn serve_connection<S>(shared: &Shared, conn: ConnId, framed: &mut Conn<S>) -> Result<(), End>
where
    S: AsyncRead + AsyncWrite + Unpin,
{
    let timeout = shared.cfg.keepalive_timeout;
    write(
        framed,
        Message::Welcome {
            node_id: shared.node_id.clone(),
        },
    )
    .await?;
    let mut state = ConnectionState::new();
    let first = read(framed, timeout).await?;
    let verdict = state.verdict(first.kind());
    let Message::ConnectionConfig(config) = first else {
        return Err(reject(framed, verdict, first.kind()).await);
    };
    let (out_tx, out_rx) = mpsc::channel(shared.cfg.outbound_queue.max(1));
    let is_active = config.is_active;
    let agent = (!config.agent_id.is_empty()).then(|| config.agent_id.clone());
    let requested = config.auth.clone();
    let resp = query(&shared.bpa, |reply| Command::Configure {
        conn,
        config,
        outbound: out_tx,
        reply,
    })
    .await;
    let ok = resp.is_ok();
    write(framed, Message::Response(resp.clone())).await?;
    if !ok {
        return Err(End::Violation(format!("configuration refused: {}", resp.detail)));
    }
    state.configured(is_active, agent, requested);
    log::debug!(
        "aap2: connection {conn} configured {}",
        if is_active { "active" } else { "passive" }
    );
    if state.phase == Phase::ActiveClientControl {
        active_loop(shared, conn, framed, &mut state).await
    } else {
        passive_loop(shared, conn, framed, &mut state, out_rx).await
    }
}

/// The client issues calls; each is answered before the next is read.
async fn active_loop<S>(shared: &Shared, conn: ConnId, framed: &mut Conn<S>, state: &mut ConnectionState) -> Result<(), End>
where
    S: AsyncRead + AsyncWrite + Unpin,
{
    loop {
        let msg = read(framed, shared.cfg.keepalive_timeout).await?;
        let kind = msg.kind();
        let verdict = state.verdict(kind);
        if verdict != Verdict::Handle {
            state.close();
            return Err(reject(framed, verdict, kind).await);
        }
        let resp = match msg {
            Message::BundleAdu(adu) => query(&shared.bpa, |reply| Command::SendAdu { conn, adu, reply }).await,
            Message::Link(LinkMessage {
                op,
                node_id,
                cla_address,
                flags,
            }) => {
                query(&shared.bpa, |reply| Command::LinkControl {
                    conn: Some(conn),
                    op,
                    node_id,
                    cla_address,
                    flags,
                    reply,
                })
                .await
            }
            Message::Keepalive => Response::ok(),
            other => unreachable!("verdict accepted {:?}", other.kind()),
        };
        write(framed, Message::Response(resp)).await?;
    }
}

/// The daemon issues calls from the processor's outbound queue, one at a time.
async fn passive_loop<S>(
    shared: &Shared,
    conn: ConnId,
    framed: &mut Conn<S>,
    state: &mut ConnectionState,
    mut outbound: mpsc::Receiver<Message>,
) -> Result<(), End>
where
    S: AsyncRead + AsyncWrite + Unpin,
{
    let timeout = shared.cfg.keepalive_timeout;
    let idle = timeout / 2;
    let mut next_keepalive = Instant::now() + idle;
    let mut answer_by: Option<Instant> = None;
    loop {
        let waiting = state.outstanding.is_some();
        tokio::select! {
            msg = outbound.recv(), if !waiting => {
                // The processor dropped the queue: the connection was closed on its side.
                let Some(msg) = msg else { return Ok(()) };
                if !state.issue(msg.kind()) {
                    log::warn!("aap2: connection {conn}: not issuing {}", kind_name(msg.kind()));
                    continue;
                }
                write(framed, msg).await?;
                answer_by = Some(Instant::now() + timeout);
            }
            _ = sleep_until(next_keepalive), if !waiting => {
                state.issue(Kind::Keepalive);
                write(framed, Message::Keepalive).await?;
                answer_by = Some(Instant::now() + timeout);
            }
            _ = sleep_until(answer_by.unwrap_or_else(Instant::now)), if waiting => {
                log::warn!("aap2: connection {conn}: call not answered in time");
                return Err(End::Idle);
            }
            incoming = framed.next() => {
                let msg = match incoming {
                    None => return Err(End::PeerClosed),
                    Some(Err(e)) => return Err(End::Io(e.to_string())),
                    Some(Ok(m)) => m,
                };
                let kind = msg.kind();
                let verdict = state.verdict(kind);
                if verdict != Verdict::Handle {
                    state.close();
                    return Err(reject(framed, verdict, kind).await);
                }
                let call = state.answered();
                answer_by = None;
                next_keepalive = Instant::now() + idle;
                match msg {
                    Message::Response(r) => {
                        if !r.is_ok() {
                            log::info!("aap2: connection {conn}: {} answered {:?}: {}", kind_name(call.unwrap()), r.status, r.detail);
                        }
                    }
                    Message::DispatchResponse(d) => {
                        shared
                            .bpa
                            .send(Command::DispatchResponse {
                                conn,
                                request_id: d.request_id,
                                decision: d.decision,
                            })
                            .await;
                    }
                    other => unreachable!("verdict accepted {:?}", other.kind()),
                }
            }
        }
    }
}
