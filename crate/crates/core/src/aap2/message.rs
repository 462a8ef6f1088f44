//! AAP2 messages and their CBOR form: `[type_tag, {uint key: value}]`.
//! Unknown body keys are skipped on decode.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::bundle::CreationTimestamp;
use crate::cbor::{self, CborError, Decoder, Encoder};
use crate::cla::ClaAddress;
use crate::dispatch::{Action, DispatchDecision, NextHop};
use crate::eid::EndpointId;

pub const TAG_WELCOME: u64 = 0;
pub const TAG_CONNECTION_CONFIG: u64 = 1;
pub const TAG_BUNDLE_ADU: u64 = 2;
pub const TAG_DISPATCH_REQUEST: u64 = 3;
pub const TAG_DISPATCH_RESPONSE: u64 = 4;
pub const TAG_LINK: u64 = 5;
pub const TAG_KEEPALIVE: u64 = 6;
pub const TAG_RESPONSE: u64 = 7;

#[derive(Debug, Error)]
pub enum Aap2Error {
    #[error("frame of {size} octets exceeds limit of {max}")]
    FrameTooLarge { size: u64, max: u64 },
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("connection closed")]
    Closed,
    #[error("timed out")]
    Timeout,
    #[error("peer answered {status}: {detail}")]
    Status { status: Status, detail: String },
    #[error("unexpected message {0}")]
    Unexpected(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<CborError> for Aap2Error {
    fn from(e: CborError) -> Self {
        Aap2Error::MalformedMessage(e.to_string())
    }
}

fn malformed(msg: impl Into<String>) -> Aap2Error {
    Aap2Error::MalformedMessage(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Auth {
    LinkControl = 0,
    Dispatch = 1,
}

impl Auth {
    pub fn from_code(code: u64) -> Option<Auth> {
        match code {
            0 => Some(Auth::LinkControl),
            1 => Some(Auth::Dispatch),
            _ => None,
        }
    }
}

pub type AuthSet = BTreeSet<Auth>;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConnectionConfig {
    /// True: the client issues calls. False: the daemon issues calls and the client answers.
    pub is_active: bool,
    pub agent_id: String,
    pub shared_secret: Vec<u8>,
    pub auth: AuthSet,
    pub admin_secret: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleAdu {
    pub src: EndpointId,
    pub dst: EndpointId,
    pub creation: CreationTimestamp,
    pub payload: Vec<u8>,
    pub is_bibe: bool,
    pub lifetime_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BundleMeta {
    pub src: EndpointId,
    pub dst: EndpointId,
    pub creation: CreationTimestamp,
    pub size: u64,
    pub lifetime_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DispatchRequest {
    pub request_id: u64,
    pub meta: BundleMeta,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DispatchResponse {
    pub request_id: u64,
    pub decision: DispatchDecision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkOp {
    Up = 0,
    Down = 1,
    NotifyUp = 2,
    NotifyDown = 3,
}

impl LinkOp {
    pub fn from_code(code: u64) -> Option<LinkOp> {
        match code {
            0 => Some(LinkOp::Up),
            1 => Some(LinkOp::Down),
            2 => Some(LinkOp::NotifyUp),
            3 => Some(LinkOp::NotifyDown),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkMessage {
    pub op: LinkOp,
    pub node_id: EndpointId,
    pub cla_address: ClaAddress,
    /// FIB flags: requested flags on UP, current flags on NOTIFY_UP.
    pub flags: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Ok = 0,
    Error = 1,
    Unauthorized = 2,
    Occupied = 3,
    Timeout = 4,
}

impl Status {
    pub fn from_code(code: u64) -> Option<Status> {
        match code {
            0 => Some(Status::Ok),
            1 => Some(Status::Error),
            2 => Some(Status::Unauthorized),
            3 => Some(Status::Occupied),
            4 => Some(Status::Timeout),
            _ => None,
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Ok => "OK",
            Status::Error => "ERROR",
            Status::Unauthorized => "UNAUTHORIZED",
            Status::Occupied => "OCCUPIED",
            Status::Timeout => "TIMEOUT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: Status,
    pub detail: String,
}

impl Response {
    pub fn ok() -> Self {
        Response {
            status: Status::Ok,
            detail: String::new(),
        }
    }

    pub fn new(status: Status, detail: impl Into<String>) -> Self {
        Response {
            status,
            detail: detail.into(),
        }
    }

    pub fn error(detail: impl Into<String>) -> Self {
        Response::new(Status::Error, detail)
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    pub fn into_result(self) -> Result<(), Aap2Error> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Aap2Error::Status {
                status: self.status,
                detail: self.detail,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Welcome { node_id: EndpointId },
    ConnectionConfig(ConnectionConfig),
    BundleAdu(BundleAdu),
    DispatchRequest(DispatchRequest),
    DispatchResponse(DispatchResponse),
    Link(LinkMessage),
    Keepalive,
    Response(Response),
}

/// Message kinds without their bodies; used by the state machine tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    Welcome,
    ConnectionConfig,
    BundleAdu,
    DispatchRequest,
    DispatchResponse,
    LinkUp,
    LinkDown,
    LinkNotifyUp,
    LinkNotifyDown,
    Keepalive,
    Response,
}

impl Kind {
    pub const ALL: [Kind; 11] = [
        Kind::Welcome,
        Kind::ConnectionConfig,
        Kind::BundleAdu,
        Kind::DispatchRequest,
        Kind::DispatchResponse,
        Kind::LinkUp,
        Kind::LinkDown,
        Kind::LinkNotifyUp,
        Kind::LinkNotifyDown,
        Kind::Keepalive,
        Kind::Response,
    ];
}

impl Message {
    pub fn tag(&self) -> u64 {
        match self {
            Message::Welcome { .. } => TAG_WELCOME,
            Message::ConnectionConfig(_) => TAG_CONNECTION_CONFIG,
            Message::BundleAdu(_) => TAG_BUNDLE_ADU,
            Message::DispatchRequest(_) => TAG_DISPATCH_REQUEST,
            Message::DispatchResponse(_) => TAG_DISPATCH_RESPONSE,
            Message::Link(_) => TAG_LINK,
            Message::Keepalive => TAG_KEEPALIVE,
            Message::Response(_) => TAG_RESPONSE,
        }
    }

    pub fn kind(&self) -> Kind {
        match self {
            Message::Welcome { .. } => Kind::Welcome,
            Message::ConnectionConfig(_) => Kind::ConnectionConfig,
            Message::BundleAdu(_) => Kind::BundleAdu,
            Message::DispatchRequest(_) => Kind::DispatchRequest,
            Message::DispatchResponse(_) => Kind::DispatchResponse,
            Message::Link(l) => match l.op {
                LinkOp::Up => Kind::LinkUp,
                LinkOp::Down => Kind::LinkDown,
                LinkOp::NotifyUp => Kind::LinkNotifyUp,
                LinkOp::NotifyDown => Kind::LinkNotifyDown,
            },
            Message::Keepalive => Kind::Keepalive,
            Message::Response(_) => Kind::Response,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Message::Welcome { .. } => "Welcome",
            Message::ConnectionConfig(_) => "ConnectionConfig",
            Message::BundleAdu(_) => "BundleADU",
            Message::DispatchRequest(_) => "DispatchRequest",
            Message::DispatchResponse(_) => "DispatchResponse",
            Message::Link(_) => "Link",
            Message::Keepalive => "Keepalive",
            Message::Response(_) => "Response",
        }
    }

    /// CBOR encoding of the message, without the length prefix.
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.array(2).uint(self.tag());
        match self {
            Message::Welcome { node_id } => {
                e.map(1).uint(0).text(&node_id.to_string());
            }
            Message::ConnectionConfig(c) => {
                e.map(5);
                e.uint(0).bool(c.is_active);
                e.uint(1).text(&c.agent_id);
                e.uint(2).bytes(&c.shared_secret);
                e.uint(3).array(c.auth.len());
                for a in &c.auth {
                    e.uint(*a as u64);
                }
                e.uint(4).bytes(&c.admin_secret);
            }
            Message::BundleAdu(a) => {
                e.map(if a.lifetime_ms.is_some() { 6 } else { 5 });
                e.uint(0).text(&a.src.to_string());
                e.uint(1).text(&a.dst.to_string());
                e.uint(2);
                encode_creation(&mut e, a.creation);
                e.uint(3).bytes(&a.payload);
                e.uint(4).bool(a.is_bibe);
                if let Some(l) = a.lifetime_ms {
                    e.uint(5).uint(l);
                }
            }
            Message::DispatchRequest(r) => {
                e.map(2).uint(0).uint(r.request_id).uint(1).map(5);
                e.uint(0).text(&r.meta.src.to_string());
                e.uint(1).text(&r.meta.dst.to_string());
                e.uint(2);
                encode_creation(&mut e, r.meta.creation);
                e.uint(3).uint(r.meta.size);
                e.uint(4).uint(r.meta.lifetime_ms);
            }
            Message::DispatchResponse(r) => {
                e.map(2).uint(0).uint(r.request_id).uint(1);
                encode_decision(&mut e, &r.decision);
            }
            Message::Link(l) => {
                e.map(if l.flags.is_some() { 4 } else { 3 });
                e.uint(0).uint(l.op as u64);
                e.uint(1).text(&l.node_id.to_string());
                e.uint(2).text(&l.cla_address.to_string());
                if let Some(f) = l.flags {
                    e.uint(3).uint(f);
                }
            }
            Message::Keepalive => {
                e.map(0);
            }
            Message::Response(r) => {
                if r.detail.is_empty() {
                    e.map(1).uint(0).uint(r.status as u64);
                } else {
                    e.map(2).uint(0).uint(r.status as u64).uint(1).text(&r.detail);
                }
            }
        }
        e.into_inner()
    }

    pub fn decode(data: &[u8]) -> Result<Message, Aap2Error> {
        let mut d = Decoder::new(data);
        if d.definite_array()? != 2 {
            return Err(malformed("message must be a two-element array"));
        }
        let tag = d.uint()?;
        let msg = match tag {
            TAG_WELCOME => {
                let mut node_id = None;
                read_map(&mut d, |k, d| {
                    match k {
                        0 => node_id = Some(eid(d)?),
                        _ => return Ok(false),
                    }
                    Ok(true)
                })?;
                Message::Welcome {
                    node_id: node_id.ok_or_else(|| malformed("Welcome without node_id"))?,
                }
            }
            TAG_CONNECTION_CONFIG => {
                let mut c = ConnectionConfig::default();
                read_map(&mut d, |k, d| {
                    match k {
                        0 => c.is_active = d.bool()?,
                        1 => c.agent_id = d.text()?.to_string(),
                        2 => c.shared_secret = d.bytes()?.to_vec(),
                        3 => {
                            let n = d.definite_array()?;
                            for _ in 0..n {
                                let code = d.uint()?;
                                let a = Auth::from_code(code)
                                    .ok_or_else(|| malformed(format!("unknown auth code {code}")))?;
                                c.auth.insert(a);
                            }
                        }
                        4 => c.admin_secret = d.bytes()?.to_vec(),
                        _ => return Ok(false),
                    }
                    Ok(true)
                })?;
                Message::ConnectionConfig(c)
            }
            TAG_BUNDLE_ADU => {
                let (mut src, mut dst, mut creation, mut payload) = (None, None, None, None);
                let (mut is_bibe, mut lifetime_ms) = (false, None);
                read_map(&mut d, |k, d| {
                    match k {
                        0 => src = Some(eid(d)?),
                        1 => dst = Some(eid(d)?),
                        2 => creation = Some(decode_creation(d)?),
                        3 => payload = Some(d.bytes()?.to_vec()),
                        4 => is_bibe = d.bool()?,
                        5 => lifetime_ms = Some(d.uint()?),
                        _ => return Ok(false),
                    }
                    Ok(true)
                })?;
                Message::BundleAdu(BundleAdu {
                    src: src.unwrap_or(EndpointId::DtnNone),
                    dst: dst.ok_or_else(|| malformed("BundleADU without destination"))?,
                    creation: creation.unwrap_or_default(),
                    payload: payload.unwrap_or_default(),
                    is_bibe,
                    lifetime_ms,
                })
            }
            TAG_DISPATCH_REQUEST => {
                let (mut id, mut meta) = (None, None);
                read_map(&mut d, |k, d| {
                    match k {
                        0 => id = Some(d.uint()?),
                        1 => meta = Some(decode_meta(d)?),
                        _ => return Ok(false),
                    }
                    Ok(true)
                })?;
                Message::DispatchRequest(DispatchRequest {
                    request_id: id.ok_or_else(|| malformed("DispatchRequest without id"))?,
                    meta: meta.ok_or_else(|| malformed("DispatchRequest without metadata"))?,
                })
            }
            TAG_DISPATCH_RESPONSE => {
                let (mut id, mut decision) = (None, None);
                read_map(&mut d, |k, d| {
                    match k {
                        0 => id = Some(d.uint()?),
                        1 => decision = Some(decode_decision(d)?),
                        _ => return Ok(false),
                    }
                    Ok(true)
                })?;
                Message::DispatchResponse(DispatchResponse {
                    request_id: id.ok_or_else(|| malformed("DispatchResponse without id"))?,
                    decision: decision.ok_or_else(|| malformed("DispatchResponse without decision"))?,
                })
            }
            TAG_LINK => {
                let (mut op, mut node, mut cla, mut flags) = (None, None, None, None);
                read_map(&mut d, |k, d| {
                    match k {
                        0 => {
                            let code = d.uint()?;
                            op = Some(LinkOp::from_code(code).ok_or_else(|| malformed(format!("unknown link op {code}")))?);
                        }
                        1 => node = Some(EndpointId::parse_node_id(d.text()?).map_err(|e| malformed(e.to_string()))?),
                        2 => cla = Some(d.text()?.parse::<ClaAddress>().map_err(|e| malformed(e.to_string()))?),
                        3 => flags = Some(d.uint()?),
                        _ => return Ok(false),
                    }
                    Ok(true)
                })?;
                Message::Link(LinkMessage {
                    op: op.ok_or_else(|| malformed("Link without op"))?,
                    node_id: node.ok_or_else(|| malformed("Link without node_id"))?,
                    cla_address: cla.ok_or_else(|| malformed("Link without cla_address"))?,
                    flags,
                })
            }
            TAG_KEEPALIVE => {
                read_map(&mut d, |_, _| Ok(false))?;
                Message::Keepalive
            }
            TAG_RESPONSE => {
                let (mut status, mut detail) = (None, String::new());
                read_map(&mut d, |k, d| {
                    match k {
                        0 => {
                            let code = d.uint()?;
                            status = Some(Status::from_code(code).ok_or_else(|| malformed(format!("unknown status {code}")))?);
                        }
                        1 => detail = d.text()?.to_string(),
                        _ => return Ok(false),
                    }
                    Ok(true)
                })?;
                Message::Response(Response {
                    status: status.ok_or_else(|| malformed("Response without status"))?,
                    detail,
                })
            }
            other => return Err(malformed(format!("unknown message tag {other}"))),
        };
        if !d.is_at_end() {
            return Err(malformed("trailing bytes after message"));
        }
        Ok(msg)
    }
}

fn read_map<'a>(
    d: &mut Decoder<'a>,
    f: impl FnMut(u64, &mut Decoder<'a>) -> Result<bool, Aap2Error>,
) -> Result<(), Aap2Error> {
    cbor::read_map(d, f)
}

fn eid(d: &mut Decoder<'_>) -> Result<EndpointId, Aap2Error> {
    d.text()?.parse().map_err(|e: crate::eid::EidError| malformed(e.to_string()))
}

fn encode_creation(e: &mut Encoder, c: CreationTimestamp) {
    e.array(2).uint(c.dtn_time_ms).uint(c.sequence_number);
}

fn decode_creation(d: &mut Decoder<'_>) -> Result<CreationTimestamp, Aap2Error> {
    if d.definite_array()? != 2 {
        return Err(malformed("creation timestamp must be [time, sequence]"));
    }
    Ok(CreationTimestamp::new(d.uint()?, d.uint()?))
}

fn decode_meta(d: &mut Decoder<'_>) -> Result<BundleMeta, Aap2Error> {
    let (mut src, mut dst, mut creation) = (None, None, None);
    let (mut size, mut lifetime) = (0, 0);
    read_map(d, |k, d| {
        match k {
            0 => src = Some(eid(d)?),
            1 => dst = Some(eid(d)?),
            2 => creation = Some(decode_creation(d)?),
            3 => size = d.uint()?,
            4 => lifetime = d.uint()?,
            _ => return Ok(false),
        }
        Ok(true)
    })?;
    Ok(BundleMeta {
        src: src.unwrap_or(EndpointId::DtnNone),
        dst: dst.ok_or_else(|| malformed("bundle metadata without destination"))?,
        creation: creation.unwrap_or_default(),
        size,
        lifetime_ms: lifetime,
    })
}

fn encode_decision(e: &mut Encoder, d: &DispatchDecision) {
    let mut n = 2;
    if d.max_fragment_payload.is_some() {
        n += 1;
    }
    if !d.reason.is_empty() {
        n += 1;
    }
    e.map(n).uint(0).uint(d.action as u64);
    e.uint(1).array(d.next_hops.len());
    for h in &d.next_hops {
        e.array(2).text(&h.node_id.to_string()).text(&h.cla_address.to_string());
    }
    if let Some(m) = d.max_fragment_payload {
        e.uint(2).uint(m);
    }
    if !d.reason.is_empty() {
        e.uint(3).text(&d.reason);
    }
}

fn decode_decision(d: &mut Decoder<'_>) -> Result<DispatchDecision, Aap2Error> {
    let mut action = None;
    let mut hops = Vec::new();
    let mut max_frag = None;
    let mut reason = String::new();
    read_map(d, |k, d| {
        match k {
            0 => {
                let code = d.uint()?;
                action = Some(Action::from_code(code).ok_or_else(|| malformed(format!("unknown action {code}")))?);
            }
            1 => {
                let n = d.definite_array()?;
                for _ in 0..n {
                    if d.definite_array()? != 2 {
                        return Err(malformed("next hop must be [node_id, cla_address]"));
                    }
                    let node_id = EndpointId::parse_node_id(d.text()?).map_err(|e| malformed(e.to_string()))?;
                    let cla_address = d.text()?.parse().map_err(|e: crate::cla::ClaError| malformed(e.to_string()))?;
                    hops.push(NextHop { node_id, cla_address });
                }
            }
            2 => max_frag = Some(d.uint()?),
            3 => reason = d.text()?.to_string(),
            _ => return Ok(false),
        }
        Ok(true)
    })?;
    Ok(DispatchDecision {
        action: action.ok_or_else(|| malformed("decision without action"))?,
        next_hops: hops,
        max_fragment_payload: max_frag,
        reason,
    })
}
