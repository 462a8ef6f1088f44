//! Drives a live daemon through every (phase, client message) cell and the
//! registration and authorization rules. Expected outcomes are tabulated
//! here, separately from the daemon's own state machine.

use std::collections::BTreeSet;
use std::fmt;
use std::time::Duration;

use bmux_core::aap2::machine::{daemon_may_issue, Phase};
use bmux_core::aap2::{
    Aap2Client, Aap2Error, Auth, AuthSet, BundleMeta, ConnectionConfig, DispatchRequest, DispatchResponse, Kind,
    LinkMessage, LinkOp, Message, Response, Status,
};
use bmux_core::{BundleAdu, CreationTimestamp, DispatchDecision, EndpointId};
use tokio::time::{sleep, timeout};

use super::ADMIN;

const STEP: Duration = Duration::from_secs(3);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Handled,
    Error,
    Unauthorized,
    Other(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Live {
    AwaitConfig,
    Active { link_control: bool },
    Passive { outstanding: Option<Kind> },
    Closed,
}

impl fmt::Display for Live {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Live::AwaitConfig => f.write_str("await-config"),
            Live::Active { link_control: true } => f.write_str("active+link"),
            Live::Active { link_control: false } => f.write_str("active"),
            Live::Passive { outstanding: None } => f.write_str("passive idle"),
            Live::Passive { outstanding: Some(k) } => write!(f, "passive awaiting {k:?}"),
            Live::Closed => f.write_str("closed"),
        }
    }
}

pub const PHASES: [Live; 7] = [
    Live::AwaitConfig,
    Live::Active { link_control: false },
    Live::Active { link_control: true },
    Live::Passive { outstanding: None },
    Live::Passive {
        outstanding: Some(Kind::Keepalive),
    },
    Live::Passive {
        outstanding: Some(Kind::DispatchRequest),
    },
    Live::Closed,
];

/// The client-to-daemon table.
pub fn expected(phase: Live, kind: Kind) -> Outcome {
    use Kind::*;
    match phase {
        Live::AwaitConfig if kind == ConnectionConfig => Outcome::Handled,
        Live::AwaitConfig => Outcome::Error,
        Live::Active { link_control } => match kind {
            BundleAdu | Keepalive => Outcome::Handled,
            LinkUp | LinkDown if link_control => Outcome::Handled,
            LinkUp | LinkDown => Outcome::Unauthorized,
            _ => Outcome::Error,
        },
        Live::Passive { outstanding: None } => Outcome::Error,
        Live::Passive { outstanding: Some(call) } => match kind {
            Response => Outcome::Handled,
            DispatchResponse if call == DispatchRequest => Outcome::Handled,
            _ => Outcome::Error,
        },
        Live::Closed => Outcome::Error,
    }
}

/// The daemon-to-client table.
pub fn daemon_expected(phase: Phase, auth: &AuthSet, kind: Kind) -> bool {
    use Kind::*;
    match phase {
        Phase::AwaitConfig => kind == Welcome || kind == Response,
        Phase::ActiveClientControl => kind == Response,
        Phase::PassiveDaemonControl => match kind {
            BundleAdu | Keepalive => true,
            DispatchRequest => auth.contains(&Auth::Dispatch),
            LinkNotifyUp | LinkNotifyDown => auth.contains(&Auth::LinkControl),
            _ => false,
        },
        Phase::Closed => false,
    }
}

pub fn auth_sets() -> Vec<AuthSet> {
    vec![
        AuthSet::new(),
        BTreeSet::from([Auth::LinkControl]),
        BTreeSet::from([Auth::Dispatch]),
        BTreeSet::from([Auth::LinkControl, Auth::Dispatch]),
    ]
}

/// Mismatches between the daemon's issue rules and [`daemon_expected`].
pub fn daemon_direction_mismatches() -> Vec<String> {
    let mut bad = Vec::new();
    for phase in Phase::ALL {
        for auth in auth_sets() {
            for kind in Kind::ALL {
                let want = daemon_expected(phase, &auth, kind);
                if daemon_may_issue(phase, &auth, kind) != want {
                    bad.push(format!("{phase:?} {auth:?} {kind:?}: want {want}"));
                }
            }
        }
    }
    bad
}

fn peer() -> EndpointId {
    "dtn://peer.dtn/".parse().unwrap()
}

/// A message of each kind. `request_id` answers the outstanding DispatchRequest.
pub fn sample(kind: Kind, request_id: u64) -> Message {
    let link = |op| {
        Message::Link(LinkMessage {
            op,
            node_id: peer(),
            cla_address: "mtcp:127.0.0.1:9".parse().unwrap(),
            flags: None,
        })
    };
    let nowhere: EndpointId = "dtn://nowhere.dtn/x".parse().unwrap();
    match kind {
        Kind::Welcome => Message::Welcome { node_id: peer() },
        Kind::ConnectionConfig => Message::ConnectionConfig(ConnectionConfig {
            is_active: true,
            ..ConnectionConfig::default()
        }),
        Kind::BundleAdu => Message::BundleAdu(BundleAdu {
            src: EndpointId::DtnNone,
            dst: nowhere,
            creation: CreationTimestamp::new(0, 0),
            payload: b"conformance".to_vec(),
            is_bibe: false,
            lifetime_ms: None,
        }),
        Kind::DispatchRequest => Message::DispatchRequest(DispatchRequest {
            request_id: 1,
            meta: BundleMeta {
                src: peer(),
                dst: nowhere,
                creation: CreationTimestamp::new(1, 0),
                size: 1,
                lifetime_ms: 1000,
            },
        }),
        Kind::DispatchResponse => Message::DispatchResponse(DispatchResponse {
            request_id,
            decision: DispatchDecision::drop("conformance"),
        }),
        Kind::LinkUp => link(LinkOp::Up),
        Kind::LinkDown => link(LinkOp::Down),
        Kind::LinkNotifyUp => link(LinkOp::NotifyUp),
        Kind::LinkNotifyDown => link(LinkOp::NotifyDown),
        Kind::Keepalive => Message::Keepalive,
        Kind::Response => Message::Response(Response::ok()),
    }
}

fn auth(list: &[Auth]) -> AuthSet {
    list.iter().copied().collect()
}

async fn closed(c: &mut Aap2Client) -> bool {
    matches!(timeout(STEP, c.recv_raw()).await, Ok(Err(_)))
}

async fn alive(c: &mut Aap2Client) -> bool {
    if c.send_raw(Message::Keepalive).await.is_err() {
        return false;
    }
    matches!(timeout(STEP, c.recv_raw()).await, Ok(Ok(Message::Response(r))) if r.is_ok())
}

/// Outcome of a call on a connection where the daemon answers.
async fn observe_answered(c: &mut Aap2Client) -> Outcome {
    match timeout(STEP, c.recv_raw()).await {
        Err(_) => Outcome::Other("no answer".into()),
        Ok(Err(e)) => Outcome::Other(format!("closed without answer: {e}")),
        Ok(Ok(Message::Response(r))) => {
            if alive(c).await {
                Outcome::Handled
            } else {
                match r.status {
                    Status::Error => Outcome::Error,
                    Status::Unauthorized => Outcome::Unauthorized,
                    s => Outcome::Other(format!("closed after {s}")),
                }
            }
        }
        Ok(Ok(m)) => Outcome::Other(format!("unexpected {}", m.name())),
    }
}

/// Outcome of a message on a passive connection: a handled answer is
/// followed by the daemon's next call, a rejection by Response(ERROR).
async fn observe_passive(c: &mut Aap2Client) -> Outcome {
    match timeout(STEP, c.recv_raw()).await {
        Err(_) => Outcome::Other("no reaction".into()),
        Ok(Err(e)) => Outcome::Other(format!("closed without answer: {e}")),
        Ok(Ok(Message::Response(r))) => match r.status {
            Status::Error if closed(c).await => Outcome::Error,
            Status::Unauthorized if closed(c).await => Outcome::Unauthorized,
            s => Outcome::Other(format!("{s} without close")),
        },
        Ok(Ok(_)) => Outcome::Handled,
    }
}

async fn open(addr: &str, is_active: bool, agent: &str, a: &[Auth]) -> Result<Aap2Client, Aap2Error> {
    Aap2Client::open(addr, is_active, agent, b"k", auth(a), ADMIN.as_bytes()).await
}

/// Claims DISPATCH, retrying while the previous holder is being released.
async fn claim_dispatch(addr: &str) -> Aap2Client {
    for _ in 0..100 {
        match open(addr, false, "", &[Auth::Dispatch]).await {
            Ok(c) => return c,
            Err(Aap2Error::Status {
                status: Status::Occupied,
                ..
            }) => sleep(Duration::from_millis(20)).await,
            Err(e) => panic!("claiming DISPATCH: {e}"),
        }
    }
    panic!("DISPATCH never released")
}

async fn outstanding_dispatch(addr: &str, n: usize) -> (Aap2Client, u64) {
    let mut bdm = claim_dispatch(addr).await;
    let mut src = open(addr, true, &format!("src{n}"), &[]).await.unwrap();
    src.send_adu(&"dtn://nowhere.dtn/x".parse().unwrap(), b"x".to_vec(), None)
        .await
        .unwrap();
    loop {
        match timeout(STEP, bdm.recv_raw()).await.expect("DispatchRequest").unwrap() {
            Message::DispatchRequest(r) => return (bdm, r.request_id),
            Message::Keepalive => bdm.send_raw(Message::Response(Response::ok())).await.unwrap(),
            m => panic!("unexpected {}", m.name()),
        }
    }
}

/// Runs one cell. `addr` is a daemon whose keepalive timeout is short enough
/// that a Keepalive arrives well within [`STEP`].
pub async fn run_cell(addr: &str, phase: Live, kind: Kind, n: usize) -> Outcome {
    let mut request_id = 0;
    let mut c = match phase {
        Live::AwaitConfig => Aap2Client::connect(addr).await.unwrap(),
        Live::Active { link_control } => {
            let a: &[Auth] = if link_control { &[Auth::LinkControl] } else { &[] };
            open(addr, true, &format!("act{n}"), a).await.unwrap()
        }
        Live::Passive { outstanding: None } => open(addr, false, &format!("pas{n}"), &[]).await.unwrap(),
        Live::Passive {
            outstanding: Some(Kind::DispatchRequest),
        } => {
            let (c, id) = outstanding_dispatch(addr, n).await;
            request_id = id;
            c
        }
        Live::Passive { outstanding: Some(_) } => {
            let mut c = open(addr, false, &format!("ka{n}"), &[]).await.unwrap();
            match timeout(STEP, c.recv_raw()).await {
                Ok(Ok(Message::Keepalive)) => {}
                other => return Outcome::Other(format!("no Keepalive call: {other:?}")),
            }
            c
        }
        Live::Closed => {
            let mut c = open(addr, true, "", &[]).await.unwrap();
            c.send_raw(Message::Welcome { node_id: peer() }).await.unwrap();
            match observe_answered(&mut c).await {
                Outcome::Error => {}
                o => return Outcome::Other(format!("could not close: {o:?}")),
            }
            c
        }
    };
    if c.send_raw(sample(kind, request_id)).await.is_err() {
        return if phase == Live::Closed {
            Outcome::Error
        } else {
            Outcome::Other("write failed".into())
        };
    }
    match phase {
        Live::Passive { .. } => observe_passive(&mut c).await,
        Live::Closed => match timeout(STEP, c.recv_raw()).await {
            Ok(Err(_)) => Outcome::Error,
            other => Outcome::Other(format!("closed connection reacted: {other:?}")),
        },
        _ => observe_answered(&mut c).await,
    }
}

pub struct Cell {
    pub phase: Live,
    pub kind: Kind,
    pub expected: Outcome,
    pub observed: Outcome,
}

pub async fn run_table(addr: &str) -> Vec<Cell> {
    let mut cells = Vec::new();
    for phase in PHASES {
        for kind in Kind::ALL {
            let n = cells.len();
            cells.push(Cell {
                phase,
                kind,
                expected: expected(phase, kind),
                observed: run_cell(addr, phase, kind, n).await,
            });
        }
    }
    cells
}

/// (secrets match, opposite direction, expected status, observed status)
pub async fn registration_matrix(addr: &str) -> Vec<(bool, bool, Status, Status)> {
    let mut out = Vec::new();
    for (i, (same_secret, opposite)) in [(true, true), (true, false), (false, true), (false, false)]
        .into_iter()
        .enumerate()
    {
        let agent = format!("reg{i}");
        let _first = Aap2Client::open(addr, false, &agent, b"k1", AuthSet::new(), &[])
            .await
            .unwrap();
        let secret: &[u8] = if same_secret { b"k1" } else { b"k2" };
        let second = Aap2Client::open(addr, opposite, &agent, secret, AuthSet::new(), &[]).await;
        let observed = match second {
            Ok(_) => Status::Ok,
            Err(Aap2Error::Status { status, .. }) => status,
            Err(e) => panic!("{e}"),
        };
        let expected = if same_secret && opposite { Status::Ok } else { Status::Occupied };
        out.push((same_secret, opposite, expected, observed));
    }
    out
}

fn status_of(r: Result<Aap2Client, Aap2Error>) -> (Option<Status>, Option<Aap2Client>) {
    match r {
        Ok(c) => (Some(Status::Ok), Some(c)),
        Err(Aap2Error::Status { status, .. }) => (Some(status), None),
        Err(_) => (None, None),
    }
}

/// Named authorization checks and whether each held.
pub async fn authorization(addr: &str) -> Vec<(String, bool)> {
    let mut out = Vec::new();

    let mut c = Aap2Client::connect(addr).await.unwrap();
    let r = c
        .call(Message::ConnectionConfig(ConnectionConfig {
            is_active: true,
            agent_id: "intruder".into(),
            shared_secret: vec![],
            auth: auth(&[Auth::LinkControl]),
            admin_secret: b"wrong".to_vec(),
        }))
        .await
        .unwrap();
    let gone = closed(&mut c).await;
    out.push((
        format!("wrong admin secret for LINK_CONTROL -> {} and close", r.status),
        r.status == Status::Unauthorized && gone,
    ));

    let (s, _) = status_of(Aap2Client::open(addr, false, "", b"", auth(&[Auth::Dispatch]), b"").await);
    out.push((
        format!("missing admin secret for DISPATCH -> {s:?}"),
        s == Some(Status::Unauthorized),
    ));

    let (s, link) = status_of(open(addr, true, "", &[Auth::LinkControl]).await);
    let mut ok = s == Some(Status::Ok);
    if let Some(mut l) = link {
        ok &= l.link(LinkOp::Down, &peer(), &"mtcp:127.0.0.1:9".parse().unwrap(), None).await.is_err()
            || alive(&mut l).await;
    }
    out.push((format!("correct admin secret for LINK_CONTROL -> {s:?}"), ok));

    let (s, _) = status_of(open(addr, true, "", &[Auth::Dispatch]).await);
    out.push((format!("DISPATCH on an active connection -> {s:?}"), s == Some(Status::Error)));

    let first = claim_dispatch(addr).await;
    let (s, _) = status_of(open(addr, false, "", &[Auth::Dispatch]).await);
    out.push((format!("second DISPATCH claimant -> {s:?}"), s == Some(Status::Occupied)));
    drop(first);
    let second = timeout(Duration::from_secs(5), claim_dispatch(addr)).await;
    out.push(("DISPATCH free again after the holder leaves".into(), second.is_ok()));
    out
}
