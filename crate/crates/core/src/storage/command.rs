//! CBOR payloads of storage command and reply bundles.
//!
//! Command: `{0: verb, 1: {0: dest pattern, 1: source, 2: after, 3: before, 4: limit}, 2: delete_after}`.
//! Reply: `{0: status, 1: records | count, 2: detail}`.

use thiserror::Error;

use super::filter::BundleFilter;
use super::{RecordMeta, StoredRecord};
use crate::bundle::CreationTimestamp;
use crate::cbor::{self, CborError, Decoder, Encoder};
use crate::eid::EndpointId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    Query = 0,
    Delete = 1,
    Recall = 2,
}

impl Verb {
    pub fn from_code(code: u64) -> Option<Verb> {
        match code {
            0 => Some(Verb::Query),
            1 => Some(Verb::Delete),
            2 => Some(Verb::Recall),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StorageCommand {
    pub verb: Verb,
    pub filter: BundleFilter,
    /// RECALL only: remove the stored copy once it is handed back to the node.
    pub delete_after: bool,
}

impl StorageCommand {
    pub fn new(verb: Verb, filter: BundleFilter) -> Self {
        StorageCommand {
            verb,
            filter,
            delete_after: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplyStatus {
    Ok = 0,
    Malformed = 1,
    Unauthorized = 2,
    Failed = 3,
}

impl ReplyStatus {
    pub fn from_code(code: u64) -> Option<ReplyStatus> {
        match code {
            0 => Some(ReplyStatus::Ok),
            1 => Some(ReplyStatus::Malformed),
            2 => Some(ReplyStatus::Unauthorized),
            3 => Some(ReplyStatus::Failed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReplyBody {
    Records(Vec<StoredRecord>),
    Count(u64),
    None,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StorageReply {
    pub status: ReplyStatus,
    pub body: ReplyBody,
    pub detail: String,
}

impl StorageReply {
    pub fn records(r: Vec<StoredRecord>) -> Self {
        StorageReply {
            status: ReplyStatus::Ok,
            body: ReplyBody::Records(r),
            detail: String::new(),
        }
    }

    pub fn count(n: u64) -> Self {
        StorageReply {
            status: ReplyStatus::Ok,
            body: ReplyBody::Count(n),
            detail: String::new(),
        }
    }

    pub fn error(status: ReplyStatus, detail: impl Into<String>) -> Self {
        StorageReply {
            status,
            body: ReplyBody::None,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed storage payload: {0}")]
pub struct PayloadError(pub String);

impl From<CborError> for PayloadError {
    fn from(e: CborError) -> Self {
        PayloadError(e.to_string())
    }
}

fn bad(s: impl Into<String>) -> PayloadError {
    PayloadError(s.into())
}

fn read_map<'a>(
    d: &mut Decoder<'a>,
    f: impl FnMut(u64, &mut Decoder<'a>) -> Result<bool, PayloadError>,
) -> Result<(), PayloadError> {
    cbor::read_map(d, f)
}

fn eid(d: &mut Decoder<'_>) -> Result<EndpointId, PayloadError> {
    d.text()?.parse().map_err(|e: crate::eid::EidError| bad(e.to_string()))
}

fn finish(d: &Decoder<'_>) -> Result<(), PayloadError> {
    if d.is_at_end() {
        Ok(())
    } else {
        Err(bad("trailing bytes"))
    }
}

pub fn encode_filter(e: &mut Encoder, f: &BundleFilter) {
    let n = [
        f.destination_pattern.is_some(),
        f.source.is_some(),
        f.creation_after.is_some(),
        f.creation_before.is_some(),
        f.limit.is_some(),
    ]
    .iter()
    .filter(|x| **x)
    .count();
    e.map(n);
    if let Some(p) = &f.destination_pattern {
        e.uint(0).text(p);
    }
    if let Some(s) = &f.source {
        e.uint(1).text(&s.to_string());
    }
    if let Some(a) = f.creation_after {
        e.uint(2).uint(a);
    }
    if let Some(b) = f.creation_before {
        e.uint(3).uint(b);
    }
    if let Some(l) = f.limit {
        e.uint(4).uint(l);
    }
}

fn decode_filter(d: &mut Decoder<'_>) -> Result<BundleFilter, PayloadError> {
    let mut f = BundleFilter::default();
    read_map(d, |k, d| {
        match k {
            0 => f.destination_pattern = Some(d.text()?.to_string()),
            1 => f.source = Some(eid(d)?),
            2 => f.creation_after = Some(d.uint()?),
            3 => f.creation_before = Some(d.uint()?),
            4 => f.limit = Some(d.uint()?),
            _ => return Ok(false),
        }
        Ok(true)
    })?;
    Ok(f)
}

impl StorageCommand {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        e.map(3).uint(0).uint(self.verb as u64).uint(1);
        encode_filter(&mut e, &self.filter);
        e.uint(2).bool(self.delete_after);
        e.into_inner()
    }

    pub fn decode(data: &[u8]) -> Result<StorageCommand, PayloadError> {
        let mut d = Decoder::new(data);
        let (mut verb, mut filter, mut delete_after) = (None, BundleFilter::default(), true);
        read_map(&mut d, |k, d| {
            match k {
                0 => {
                    let code = d.uint()?;
                    verb = Some(Verb::from_code(code).ok_or_else(|| bad(format!("unknown verb {code}")))?);
                }
                1 => filter = decode_filter(d)?,
                2 => delete_after = d.bool()?,
                _ => return Ok(false),
            }
            Ok(true)
        })?;
        finish(&d)?;
        Ok(StorageCommand {
            verb: verb.ok_or_else(|| bad("command without verb"))?,
            filter,
            delete_after,
        })
    }
}

fn encode_record(e: &mut Encoder, r: &StoredRecord) {
    let m = &r.meta;
    e.map(8)
        .uint(0)
        .text(&r.storage_id)
        .uint(1)
        .text(&m.destination.to_string())
        .uint(2)
        .text(&m.source.to_string())
        .uint(3)
        .array(2)
        .uint(m.creation.dtn_time_ms)
        .uint(m.creation.sequence_number)
        .uint(4)
        .uint(m.lifetime_ms)
        .uint(5)
        .uint(m.stored_at)
        .uint(6)
        .uint(m.size)
        .uint(7)
        .uint(m.expires_at);
}

fn decode_record(d: &mut Decoder<'_>) -> Result<StoredRecord, PayloadError> {
    let mut id = None;
    let (mut dst, mut src) = (None, None);
    let mut creation = None;
    let (mut lifetime, mut stored_at, mut size, mut expires) = (0, 0, 0, 0);
    read_map(d, |k, d| {
        match k {
            0 => id = Some(d.text()?.to_string()),
            1 => dst = Some(eid(d)?),
            2 => src = Some(eid(d)?),
            3 => {
                if d.definite_array()? != 2 {
                    return Err(bad("creation must be [time, sequence]"));
                }
                creation = Some(CreationTimestamp::new(d.uint()?, d.uint()?));
            }
            4 => lifetime = d.uint()?,
            5 => stored_at = d.uint()?,
            6 => size = d.uint()?,
            7 => expires = d.uint()?,
            _ => return Ok(false),
        }
        Ok(true)
    })?;
    Ok(StoredRecord {
        storage_id: id.ok_or_else(|| bad("record without id"))?,
        meta: RecordMeta {
            destination: dst.ok_or_else(|| bad("record without destination"))?,
            source: src.ok_or_else(|| bad("record without source"))?,
            creation: creation.ok_or_else(|| bad("record without creation"))?,
            lifetime_ms: lifetime,
            stored_at,
            size,
            expires_at: expires,
        },
    })
}

impl StorageReply {
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Encoder::new();
        let n = 1 + usize::from(self.body != ReplyBody::None) + usize::from(!self.detail.is_empty());
        e.map(n).uint(0).uint(self.status as u64);
        match &self.body {
            ReplyBody::Records(rs) => {
                e.uint(1).array(rs.len());
                for r in rs {
                    encode_record(&mut e, r);
                }
            }
            ReplyBody::Count(c) => {
                e.uint(1).uint(*c);
            }
            ReplyBody::None => {}
        }
        if !self.detail.is_empty() {
            e.uint(2).text(&self.detail);
        }
        e.into_inner()
    }

    pub fn decode(data: &[u8]) -> Result<StorageReply, PayloadError> {
        let mut d = Decoder::new(data);
        let (mut status, mut body, mut detail) = (None, ReplyBody::None, String::new());
        read_map(&mut d, |k, d| {
            match k {
                0 => {
                    let code = d.uint()?;
                    status = Some(ReplyStatus::from_code(code).ok_or_else(|| bad(format!("unknown status {code}")))?);
                }
                1 => {
                    body = if d.peek_byte()? >> 5 == cbor::MAJOR_ARRAY {
                        let n = d.definite_array()?;
                        let mut rs = Vec::new();
                        for _ in 0..n {
                            rs.push(decode_record(d)?);
                        }
                        ReplyBody::Records(rs)
                    } else {
                        ReplyBody::Count(d.uint()?)
                    }
                }
                2 => detail = d.text()?.to_string(),
                _ => return Ok(false),
            }
            Ok(true)
        })?;
        finish(&d)?;
        Ok(StorageReply {
            status: status.ok_or_else(|| bad("reply without status"))?,
            body,
            detail,
        })
    }
}
