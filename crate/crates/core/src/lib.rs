//! A Bundle Protocol version 7 node whose forwarding decisions are delegated
//! to external dispatcher modules over the AAP2 agent protocol.
//!
//! The bundle processor ([`bpa`]) owns all node state. Convergence layers
//! ([`cla`], [`bibe`], [`storage`]) hand it received bundles and carry out
//! forwarding; agents and dispatchers talk to it through [`aap2`].

pub mod aap2;
pub mod bibe;
pub mod bpa;
pub mod bundle;
pub mod cbor;
pub mod cla;
pub mod clock;
pub mod config;
pub mod crc;
pub mod dispatch;
pub mod eid;
pub mod fib;
pub mod fragment;
pub mod harness;
pub mod node;
pub mod storage;

pub use aap2::{Aap2Client, Aap2Error, Aap2Server, BundleAdu, ConnectionConfig, LinkOp, Message, Response, Status};
pub use bpa::{BpaHandle, BundleDescriptor, DropReason, NodeStats, Origin};
pub use bundle::{decode_bundle, encode_bundle, Bundle, BundleError, CreationTimestamp};
pub use cla::{Cla, ClaAddress, ClaError, ClaRegistry};
pub use clock::{Clock, SharedClock, SimClock, SystemClock};
pub use config::{Config, ConfigError};
pub use crc::CrcType;
pub use dispatch::{Action, DispatchDecision, NextHop};
pub use eid::EndpointId;
pub use fib::{FibEntry, FibFlags};
pub use node::{Node, NodeError};
pub use storage::{BundleFilter, StorageCommand, StorageReply, Store};
