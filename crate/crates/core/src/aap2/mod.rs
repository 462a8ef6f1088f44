//! Application agent protocol: framing, messages and the per-connection state machine.

pub mod codec;
pub mod machine;
pub mod message;

pub use codec::{frame, Aap2Codec, DEFAULT_MAX_FRAME};
pub use machine::{ConnectionState, Phase, Verdict};
pub use message::{
    Aap2Error, Auth, AuthSet, BundleAdu, BundleMeta, ConnectionConfig, DispatchRequest, DispatchResponse, Kind,
    LinkMessage, LinkOp, Message, Response, Status,
};

pub mod client;
pub mod server;

pub use client::{Aap2Client, Incoming};
pub use server::{Aap2Server, ServerConfig, DEFAULT_TCP_LISTEN};
