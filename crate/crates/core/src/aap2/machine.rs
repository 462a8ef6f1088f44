//! Per-connection protocol state machine. The direction of control is fixed
//! by the ConnectionConfig message and never changes afterwards.

use super::message::{Auth, AuthSet, Kind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    AwaitConfig,
    /// The client issues calls, the daemon answers.
    ActiveClientControl,
    /// The daemon issues calls, the client answers.
    PassiveDaemonControl,
    Closed,
}

impl Phase {
    pub const ALL: [Phase; 4] = [
        Phase::AwaitConfig,
        Phase::ActiveClientControl,
        Phase::PassiveDaemonControl,
        Phase::Closed,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Handle,
    /// Response(ERROR), then close.
    Error,
    /// Response(UNAUTHORIZED), then close.
    Unauthorized,
}

/// What the daemon does with a message the client sent.
///
/// `outstanding` is the call the daemon issued and is still waiting on
/// (passive connections only).
pub fn client_message(phase: Phase, auth: &AuthSet, outstanding: Option<Kind>, kind: Kind) -> Verdict {
    match phase {
        Phase::AwaitConfig => match kind {
            Kind::ConnectionConfig => Verdict::Handle,
            _ => Verdict::Error,
        },
        Phase::ActiveClientControl => match kind {
            Kind::BundleAdu | Kind::Keepalive => Verdict::Handle,
            Kind::LinkUp | Kind::LinkDown => {
                if auth.contains(&Auth::LinkControl) {
                    Verdict::Handle
                } else {
                    Verdict::Unauthorized
                }
            }
            _ => Verdict::Error,
        },
        Phase::PassiveDaemonControl => match (kind, outstanding) {
            (Kind::Response, Some(_)) => Verdict::Handle,
            (Kind::DispatchResponse, Some(Kind::DispatchRequest)) => Verdict::Handle,
            _ => Verdict::Error,
        },
        Phase::Closed => Verdict::Error,
    }
}

/// Whether the daemon may send a message of `kind` on a connection.
pub fn daemon_may_issue(phase: Phase, auth: &AuthSet, kind: Kind) -> bool {
    match phase {
        // Welcome first, then the Response to ConnectionConfig.
        Phase::AwaitConfig => matches!(kind, Kind::Welcome | Kind::Response),
        Phase::ActiveClientControl => kind == Kind::Response,
        Phase::PassiveDaemonControl => match kind {
            Kind::BundleAdu | Kind::Keepalive => true,
            Kind::DispatchRequest => auth.contains(&Auth::Dispatch),
            Kind::LinkNotifyUp | Kind::LinkNotifyDown => auth.contains(&Auth::LinkControl),
            _ => false,
        },
        Phase::Closed => false,
    }
}

/// State of one connection as seen by the daemon.
#[derive(Debug, Clone)]
pub struct ConnectionState {
    pub phase: Phase,
    pub agent_id: Option<String>,
    pub granted_auth: AuthSet,
    pub outstanding: Option<Kind>,
}

impl Default for ConnectionState {
    fn default() -> Self {
        ConnectionState {
            phase: Phase::AwaitConfig,
            agent_id: None,
            granted_auth: AuthSet::new(),
            outstanding: None,
        }
    }
}

impl ConnectionState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn verdict(&self, kind: Kind) -> Verdict {
        client_message(self.phase, &self.granted_auth, self.outstanding, kind)
    }

    /// Applies an accepted ConnectionConfig. Only valid in AwaitConfig.
    pub fn configured(&mut self, is_active: bool, agent_id: Option<String>, granted: AuthSet) {
        debug_assert_eq!(self.phase, Phase::AwaitConfig);
        self.phase = if is_active {
            Phase::ActiveClientControl
        } else {
            Phase::PassiveDaemonControl
        };
        self.agent_id = agent_id;
        self.granted_auth = granted;
    }

    pub fn may_issue(&self, kind: Kind) -> bool {
        daemon_may_issue(self.phase, &self.granted_auth, kind)
    }

    /// Records a call the daemon issued. Returns false if one is still unanswered.
    pub fn issue(&mut self, kind: Kind) -> bool {
        if self.outstanding.is_some() || !self.may_issue(kind) {
            return false;
        }
        self.outstanding = Some(kind);
        true
    }

    pub fn answered(&mut self) -> Option<Kind> {
        self.outstanding.take()
    }

    pub fn close(&mut self) {
        self.phase = Phase::Closed;
        self.outstanding = None;
    }
}
