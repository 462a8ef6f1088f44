//! Client side of the agent protocol, used by the command-line tools, the
//! harness and tests.

use std::time::Duration;

use futures::{SinkExt, StreamExt};
use tokio::io::{AsyncRead, AsyncWrite};
use tokio::net::{TcpStream, UnixStream};
use tokio_util::codec::Framed;

use super::codec::Aap2Codec;
use super::message::{
    Aap2Error, AuthSet, BundleAdu, ConnectionConfig, DispatchRequest, DispatchResponse, LinkMessage, LinkOp, Message,
    Response,
};
use crate::bundle::CreationTimestamp;
use crate::cla::ClaAddress;
use crate::dispatch::DispatchDecision;
use crate::eid::EndpointId;

pub trait Stream: AsyncRead + AsyncWrite + Unpin + Send {}

impl<T: AsyncRead + AsyncWrite + Unpin + Send> Stream for T {}

/// A call the daemon issued on a passive connection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Incoming {
    Adu(BundleAdu),
    Dispatch(DispatchRequest),
    Link(LinkMessage),
    Keepalive,
}

pub struct Aap2Client {
    framed: Framed<Box<dyn Stream>, Aap2Codec>,
    node_id: EndpointId,
    /// Set while a daemon call on a passive connection awaits our answer.
    pending_answer: bool,
}

impl Aap2Client {
    /// Connects to `host:port` or `unix:<path>` and reads the Welcome.
    pub async fn connect(address: &str) -> Result<Aap2Client, Aap2Error> {
        let stream: Box<dyn Stream> = match address.strip_prefix("unix:") {
            Some(path) => Box::new(UnixStream::connect(path).await?),
            None => {
                let s = TcpStream::connect(address).await?;
                s.set_nodelay(true)?;
                Box::new(s)
            }
        };
        Self::handshake(stream).await
    }

    pub async fn handshake(stream: Box<dyn Stream>) -> Result<Aap2Client, Aap2Error> {
        let mut framed = Framed::new(stream, Aap2Codec::default());
        match framed.next().await {
            Some(Ok(Message::Welcome { node_id })) => Ok(Aap2Client {
                framed,
                node_id,
                pending_answer: false,
            }),
            Some(Ok(_)) => Err(Aap2Error::Unexpected("first message is not Welcome")),
            Some(Err(e)) => Err(e),
            None => Err(Aap2Error::Closed),
        }
    }

    pub fn node_id(&self) -> &EndpointId {
        &self.node_id
    }

    async fn write(&mut self, msg: Message) -> Result<(), Aap2Error> {
        self.framed.send(msg).await
    }

    async fn next(&mut self) -> Result<Message, Aap2Error> {
        match self.framed.next().await {
            Some(r) => r,
            None => Err(Aap2Error::Closed),
        }
    }

    async fn response(&mut self) -> Result<Response, Aap2Error> {
        match self.next().await? {
            Message::Response(r) => Ok(r),
            _ => Err(Aap2Error::Unexpected("expected Response")),
        }
    }

    /// Sends a call and returns the daemon's Response, whatever its status.
    pub async fn call(&mut self, msg: Message) -> Result<Response, Aap2Error> {
        self.write(msg).await?;
        self.response().await
    }

    pub async fn configure(&mut self, config: ConnectionConfig) -> Result<(), Aap2Error> {
        self.call(Message::ConnectionConfig(config)).await?.into_result()
    }

    /// Connects and configures an active (sending) connection.
    pub async fn active(address: &str, agent_id: &str, secret: &[u8]) -> Result<Aap2Client, Aap2Error> {
        Self::open(address, true, agent_id, secret, AuthSet::new(), &[]).await
    }

    /// Connects and configures a passive (receiving) connection.
    pub async fn passive(address: &str, agent_id: &str, secret: &[u8]) -> Result<Aap2Client, Aap2Error> {
        Self::open(address, false, agent_id, secret, AuthSet::new(), &[]).await
    }

    pub async fn open(
        address: &str,
        is_active: bool,
        agent_id: &str,
        secret: &[u8],
        auth: AuthSet,
        admin_secret: &[u8],
    ) -> Result<Aap2Client, Aap2Error> {
        let mut c = Self::connect(address).await?;
        c.configure(ConnectionConfig {
            is_active,
            agent_id: agent_id.to_string(),
            shared_secret: secret.to_vec(),
            auth,
            admin_secret: admin_secret.to_vec(),
        })
        .await?;
        Ok(c)
    }

    /// Sends an ADU. A zero creation time lets the daemon assign one.
    pub async fn send_adu(&mut self, dst: &EndpointId, payload: Vec<u8>, lifetime_ms: Option<u64>) -> Result<(), Aap2Error> {
        self.send_bundle_adu(BundleAdu {
            src: EndpointId::DtnNone,
            dst: dst.clone(),
            creation: CreationTimestamp::new(0, 0),
            payload,
            is_bibe: false,
            lifetime_ms,
        })
        .await
    }

    pub async fn send_bundle_adu(&mut self, adu: BundleAdu) -> Result<(), Aap2Error> {
        self.call(Message::BundleAdu(adu)).await?.into_result()
    }

    pub async fn link(
        &mut self,
        op: LinkOp,
        node_id: &EndpointId,
        cla_address: &ClaAddress,
        flags: Option<u64>,
    ) -> Result<(), Aap2Error> {
        self.call(Message::Link(LinkMessage {
            op,
            node_id: node_id.clone(),
            cla_address: cla_address.clone(),
            flags,
        }))
        .await?
        .into_result()
    }

    pub async fn keepalive(&mut self) -> Result<(), Aap2Error> {
        self.call(Message::Keepalive).await?.into_result()
    }

    /// Next call from the daemon. The caller must answer it with
    /// [`answer`](Self::answer) or [`dispatch`](Self::dispatch) before reading again.
    pub async fn recv(&mut self) -> Result<Incoming, Aap2Error> {
        if self.pending_answer {
            return Err(Aap2Error::Unexpected("previous call not answered"));
        }
        let incoming = match self.next().await? {
            Message::BundleAdu(a) => Incoming::Adu(a),
            Message::DispatchRequest(r) => Incoming::Dispatch(r),
            Message::Link(l) => Incoming::Link(l),
            Message::Keepalive => Incoming::Keepalive,
            Message::Response(r) => {
                return Err(Aap2Error::Status {
                    status: r.status,
                    detail: r.detail,
                })
            }
            _ => return Err(Aap2Error::Unexpected("daemon sent a message it may not issue")),
        };
        self.pending_answer = true;
        Ok(incoming)
    }

    pub async fn answer(&mut self, r: Response) -> Result<(), Aap2Error> {
        self.pending_answer = false;
        self.write(Message::Response(r)).await
    }

    pub async fn dispatch(&mut self, request_id: u64, decision: DispatchDecision) -> Result<(), Aap2Error> {
        self.pending_answer = false;
        self.write(Message::DispatchResponse(DispatchResponse { request_id, decision }))
            .await
    }

    /// Waits for the next ADU, acknowledging Keepalives and notifications on the way.
    pub async fn recv_adu(&mut self) -> Result<BundleAdu, Aap2Error> {
        loop {
            let incoming = self.recv().await?;
            self.answer(Response::ok()).await?;
            if let Incoming::Adu(a) = incoming {
                return Ok(a);
            }
        }
    }

    pub async fn recv_adu_timeout(&mut self, limit: Duration) -> Result<BundleAdu, Aap2Error> {
        tokio::time::timeout(limit, self.recv_adu())
            .await
            .map_err(|_| Aap2Error::Timeout)?
    }

    /// Writes an arbitrary message; for protocol tests.
    pub async fn send_raw(&mut self, msg: Message) -> Result<(), Aap2Error> {
        self.write(msg).await
    }

    /// Reads an arbitrary message; for protocol tests.
    pub async fn recv_raw(&mut self) -> Result<Message, Aap2Error> {
        self.next().await
    }
}
