//! DTN endpoint identifiers in the `dtn` and `ipn` schemes.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::cbor::{CborError, Decoder, Encoder};

const SCHEME_DTN: u64 = 1;
const SCHEME_IPN: u64 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EidError {
    #[error("invalid endpoint identifier {0:?}: {1}")]
    Invalid(String, &'static str),
    #[error("malformed endpoint CBOR: {0}")]
    Cbor(#[from] CborError),
    #[error("unknown EID scheme code {0}")]
    UnknownScheme(u64),
}

/// An endpoint identifier.
///
/// `dtn` EIDs are held as a node name plus demux (`dtn://<node>/<demux>`);
/// the null endpoint `dtn:none` is a distinct variant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EndpointId {
    DtnNone,
    Dtn { node: String, demux: String },
    Ipn { node: u64, service: u64 },
}

impl EndpointId {
    pub fn dtn(node: impl Into<String>, demux: impl Into<String>) -> Result<Self, EidError> {
        let node = node.into();
        let demux = demux.into();
        validate_dtn_node(&node, &format!("dtn://{node}/{demux}"))?;
        Ok(EndpointId::Dtn { node, demux })
    }

    pub fn ipn(node: u64, service: u64) -> Self {
        EndpointId::Ipn { node, service }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, EndpointId::DtnNone)
    }

    /// The node identifier this endpoint belongs to (`dtn://n/` or `ipn:N.0`).
    pub fn node_id(&self) -> EndpointId {
        match self {
            EndpointId::DtnNone => EndpointId::DtnNone,
            EndpointId::Dtn { node, .. } => EndpointId::Dtn {
                node: node.clone(),
                demux: String::new(),
            },
            EndpointId::Ipn { node, .. } => EndpointId::Ipn {
                node: *node,
                service: 0,
            },
        }
    }

    pub fn is_node_id(&self) -> bool {
        match self {
            EndpointId::DtnNone => false,
            EndpointId::Dtn { demux, .. } => demux.is_empty(),
            EndpointId::Ipn { service, .. } => *service == 0,
        }
    }

    pub fn same_node(&self, other: &EndpointId) -> bool {
        !self.is_null() && self.node_id() == other.node_id()
    }

    /// Demux part (`dtn`) or service number as text (`ipn`).
    pub fn agent_id(&self) -> Option<String> {
        match self {
            EndpointId::DtnNone => None,
            EndpointId::Dtn { demux, .. } => Some(demux.clone()),
            EndpointId::Ipn { service, .. } => Some(service.to_string()),
        }
    }

    /// Builds the endpoint `<self's node>/<agent>`.
    pub fn with_agent(&self, agent: &str) -> Result<EndpointId, EidError> {
        match self {
            EndpointId::DtnNone => Err(EidError::Invalid("dtn:none".into(), "null endpoint has no node")),
            EndpointId::Dtn { node, .. } => Ok(EndpointId::Dtn {
                node: node.clone(),
                demux: agent.to_string(),
            }),
            EndpointId::Ipn { node, .. } => {
                let service = agent
                    .parse()
                    .map_err(|_| EidError::Invalid(agent.to_string(), "ipn agent must be numeric"))?;
                Ok(EndpointId::Ipn {
                    node: *node,
                    service,
                })
            }
        }
    }

    /// Parses a node identifier, adding the trailing `/` to `dtn://name`.
    pub fn parse_node_id(s: &str) -> Result<EndpointId, EidError> {
        let normalized = match s.strip_prefix("dtn://") {
            Some(rest) if !rest.contains('/') => format!("{s}/"),
            _ => s.to_string(),
        };
        let eid: EndpointId = normalized.parse()?;
        if !eid.is_node_id() {
            return Err(EidError::Invalid(s.to_string(), "not a node identifier"));
        }
        Ok(eid)
    }

    pub fn encode_cbor(&self, enc: &mut Encoder) {
        enc.array(2);
        match self {
            EndpointId::DtnNone => {
                enc.uint(SCHEME_DTN).uint(0);
            }
            EndpointId::Dtn { node, demux } => {
                enc.uint(SCHEME_DTN).text(&format!("//{node}/{demux}"));
            }
            EndpointId::Ipn { node, service } => {
                enc.uint(SCHEME_IPN).array(2).uint(*node).uint(*service);
            }
        }
    }

    pub fn to_cbor(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        self.encode_cbor(&mut e);
        e.into_inner()
    }

    pub fn decode_cbor(dec: &mut Decoder<'_>) -> Result<Self, EidError> {
        let offset = dec.position();
        if dec.definite_array()? != 2 {
            return Err(CborError::Unexpected {
                offset,
                what: "EID must be a 2-element array",
            }
            .into());
        }
        match dec.uint()? {
            SCHEME_DTN => {
                let head = dec.peek_byte()?;
                if head >> 5 == crate::cbor::MAJOR_UINT {
                    match dec.uint()? {
                        0 => Ok(EndpointId::DtnNone),
                        _ => Err(EidError::Invalid("dtn:<uint>".into(), "only 0 (none) is allowed")),
                    }
                } else {
                    let ssp = dec.text()?;
                    parse_dtn_ssp(ssp, &format!("dtn:{ssp}"))
                }
            }
            SCHEME_IPN => {
                if dec.definite_array()? != 2 {
                    return Err(EidError::Invalid("ipn".into(), "ipn SSP must be [node, service]"));
                }
                let node = dec.uint()?;
                let service = dec.uint()?;
                Ok(EndpointId::Ipn { node, service })
            }
            other => Err(EidError::UnknownScheme(other)),
        }
    }

    pub fn from_cbor(data: &[u8]) -> Result<Self, EidError> {
        let mut d = Decoder::new(data);
        let eid = Self::decode_cbor(&mut d)?;
        if !d.is_at_end() {
            return Err(EidError::Invalid("cbor".into(), "trailing bytes"));
        }
        Ok(eid)
    }
}

fn validate_dtn_node(node: &str, whole: &str) -> Result<(), EidError> {
    if node.is_empty() {
        return Err(EidError::Invalid(whole.to_string(), "empty node name"));
    }
    if node.contains('/') {
        return Err(EidError::Invalid(whole.to_string(), "node name contains '/'"));
    }
    Ok(())
}

fn parse_dtn_ssp(ssp: &str, whole: &str) -> Result<EndpointId, EidError> {
    if ssp == "none" {
        return Ok(EndpointId::DtnNone);
    }
    let rest = ssp
        .strip_prefix("//")
        .ok_or_else(|| EidError::Invalid(whole.to_string(), "dtn SSP must start with //"))?;
    let (node, demux) = rest
        .split_once('/')
        .ok_or_else(|| EidError::Invalid(whole.to_string(), "missing '/' after node name"))?;
    validate_dtn_node(node, whole)?;
    Ok(EndpointId::Dtn {
        node: node.to_string(),
        demux: demux.to_string(),
    })
}

impl FromStr for EndpointId {
    type Err = EidError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(ssp) = s.strip_prefix("dtn:") {
            parse_dtn_ssp(ssp, s)
        } else if let Some(ssp) = s.strip_prefix("ipn:") {
            let (node, service) = ssp
                .split_once('.')
                .ok_or_else(|| EidError::Invalid(s.to_string(), "ipn EID must be ipn:N.S"))?;
            let num = |x: &str| {
                if x.is_empty() || !x.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(EidError::Invalid(s.to_string(), "non-numeric ipn component"));
                }
                x.parse::<u64>()
                    .map_err(|_| EidError::Invalid(s.to_string(), "ipn component out of range"))
            };
            Ok(EndpointId::Ipn {
                node: num(node)?,
                service: num(service)?,
            })
        } else {
            Err(EidError::Invalid(s.to_string(), "unknown scheme"))
        }
    }
}

impl fmt::Display for EndpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EndpointId::DtnNone => f.write_str("dtn:none"),
            EndpointId::Dtn { node, demux } => write!(f, "dtn://{node}/{demux}"),
            EndpointId::Ipn { node, service } => write!(f, "ipn:{node}.{service}"),
        }
    }
}

impl serde::Serialize for EndpointId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for EndpointId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
