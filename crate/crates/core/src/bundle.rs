//! In-memory bundle representation and the BPv7 wire codec.

use std::fmt;

use thiserror::Error;

use crate::cbor::{CborError, Decoder, Encoder, BREAK, MAJOR_ARRAY};
use crate::crc::{crc_for, CrcType};
use crate::eid::{EidError, EndpointId};

pub const BLOCK_TYPE_PAYLOAD: u64 = 1;
pub const BLOCK_TYPE_PREVIOUS_NODE: u64 = 6;
pub const BLOCK_TYPE_BUNDLE_AGE: u64 = 7;
pub const BLOCK_TYPE_HOP_COUNT: u64 = 10;

pub const PAYLOAD_BLOCK_NUMBER: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BundleError {
    #[error("{}", unsupported_version_msg(*.0))]
    UnsupportedVersion(u8),
    #[error("malformed bundle: {0}")]
    MalformedBundle(String),
    #[error("CRC mismatch in block {0}")]
    CrcMismatch(u64),
    #[error("input truncated")]
    TruncatedInput,
    #[error("bundle has no creation time and no bundle age block")]
    MissingBundleAge,
    #[error("bundle must not be fragmented")]
    MustNotFragment,
    #[error("administrative records are not fragmented")]
    AdminRecord,
    #[error("maximum fragment payload must be at least 1")]
    InvalidFragmentSize,
    #[error("ADU incomplete, missing ranges {0:?}")]
    IncompleteAdu(Vec<(u64, u64)>),
    #[error("fragments do not belong to the same ADU")]
    InconsistentFragments,
}

fn unsupported_version_msg(byte: u8) -> String {
    if byte == 0x06 {
        "bundle protocol version 6 is not supported".to_string()
    } else {
        format!("unsupported bundle format (first byte {byte:#04x})")
    }
}

impl From<CborError> for BundleError {
    fn from(e: CborError) -> Self {
        match e {
            CborError::Truncated => BundleError::TruncatedInput,
            other => BundleError::MalformedBundle(other.to_string()),
        }
    }
}

impl From<EidError> for BundleError {
    fn from(e: EidError) -> Self {
        match e {
            EidError::Cbor(c) => c.into(),
            other => BundleError::MalformedBundle(other.to_string()),
        }
    }
}

fn malformed(msg: impl Into<String>) -> BundleError {
    BundleError::MalformedBundle(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BpVersion {
    V6,
    V7,
}

/// Classifies a bundle by the first octet of its wire form.
pub fn detect_version(first_byte: u8) -> Result<BpVersion, BundleError> {
    match first_byte {
        0x06 => Ok(BpVersion::V6),
        0x9F | 0x84..=0x8B => Ok(BpVersion::V7),
        other => Err(BundleError::UnsupportedVersion(other)),
    }
}

macro_rules! flag_set {
    ($name:ident { $($flag:ident = $bit:expr),* $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
        pub struct $name(pub u64);

        impl $name {
            $(pub const $flag: $name = $name($bit);)*

            pub fn contains(self, other: $name) -> bool {
                self.0 & other.0 == other.0
            }

            pub fn set(&mut self, other: $name, on: bool) {
                if on {
                    self.0 |= other.0;
                } else {
                    self.0 &= !other.0;
                }
            }

            pub fn with(mut self, other: $name) -> Self {
                self.set(other, true);
                self
            }
        }

        impl std::ops::BitOr for $name {
            type Output = $name;
            fn bitor(self, rhs: $name) -> $name {
                $name(self.0 | rhs.0)
            }
        }
    };
}

flag_set!(ProcFlags {
    IS_FRAGMENT = 0x01,
    ADU_IS_ADMIN_RECORD = 0x02,
    MUST_NOT_FRAGMENT = 0x04,
    ACK_REQUESTED = 0x20,
});

flag_set!(BlockFlags {
    REPLICATE_IN_FRAGMENTS = 0x01,
    DELETE_BUNDLE_ON_FAIL = 0x04,
    DISCARD_BLOCK_ON_FAIL = 0x10,
});

/// Creation time in DTN milliseconds plus per-node sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct CreationTimestamp {
    pub dtn_time_ms: u64,
    pub sequence_number: u64,
}

impl CreationTimestamp {
    pub fn new(dtn_time_ms: u64, sequence_number: u64) -> Self {
        CreationTimestamp {
            dtn_time_ms,
            sequence_number,
        }
    }
}

impl fmt::Display for CreationTimestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.dtn_time_ms, self.sequence_number)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FragmentInfo {
    pub offset: u64,
    pub total_adu_length: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalBlock {
    pub block_type: u64,
    pub block_number: u64,
    pub flags: BlockFlags,
    pub crc_type: CrcType,
    pub data: Vec<u8>,
}

impl CanonicalBlock {
    pub fn payload(data: Vec<u8>, crc_type: CrcType) -> Self {
        CanonicalBlock {
            block_type: BLOCK_TYPE_PAYLOAD,
            block_number: PAYLOAD_BLOCK_NUMBER,
            flags: BlockFlags::default(),
            crc_type,
            data,
        }
    }

    pub fn hop_count(block_number: u64, limit: u64, count: u64, crc_type: CrcType) -> Self {
        CanonicalBlock {
            block_type: BLOCK_TYPE_HOP_COUNT,
            block_number,
            flags: BlockFlags::default(),
            crc_type,
            data: encode_hop_count(limit, count),
        }
    }

    pub fn bundle_age(block_number: u64, age_ms: u64, crc_type: CrcType) -> Self {
        let mut e = Encoder::new();
        e.uint(age_ms);
        CanonicalBlock {
            block_type: BLOCK_TYPE_BUNDLE_AGE,
            block_number,
            flags: BlockFlags::REPLICATE_IN_FRAGMENTS,
            crc_type,
            data: e.into_inner(),
        }
    }

    pub fn previous_node(block_number: u64, node: &EndpointId, crc_type: CrcType) -> Self {
        CanonicalBlock {
            block_type: BLOCK_TYPE_PREVIOUS_NODE,
            block_number,
            flags: BlockFlags::default(),
            crc_type,
            data: node.to_cbor(),
        }
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        let start = out.len();
        let mut e = Encoder::new();
        e.array(if self.crc_type == CrcType::None { 5 } else { 6 })
            .uint(self.block_type)
            .uint(self.block_number)
            .uint(self.flags.0)
            .uint(self.crc_type.code())
            .bytes(&self.data);
        out.extend_from_slice(e.as_slice());
        append_crc(out, start, self.crc_type);
    }
}

fn encode_hop_count(limit: u64, count: u64) -> Vec<u8> {
    let mut e = Encoder::new();
    e.array(2).uint(limit).uint(count);
    e.into_inner()
}

/// Appends a CRC field for the block starting at `start`: a byte string
/// of zeros is written, the CRC taken over the whole block, then patched in.
fn append_crc(out: &mut Vec<u8>, start: usize, ty: CrcType) {
    if ty == CrcType::None {
        return;
    }
    let width = ty.width();
    let mut e = Encoder::new();
    e.bytes(&vec![0u8; width]);
    out.extend_from_slice(e.as_slice());
    let crc = crc_for(ty, &out[start..]);
    let len = out.len();
    out[len - width..].copy_from_slice(&crc);
}

/// A bundle in memory. The payload block is always the last entry of `blocks`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bundle {
    pub version: BpVersion,
    pub proc_flags: ProcFlags,
    pub crc_type: CrcType,
    pub destination: EndpointId,
    pub source: EndpointId,
    pub report_to: EndpointId,
    pub creation: CreationTimestamp,
    pub lifetime_ms: u64,
    pub fragment: Option<FragmentInfo>,
    pub blocks: Vec<CanonicalBlock>,
}

impl Bundle {
    /// A fresh V7 bundle with only a payload block.
    pub fn new(
        source: EndpointId,
        destination: EndpointId,
        creation: CreationTimestamp,
        lifetime_ms: u64,
        payload: Vec<u8>,
        crc_type: CrcType,
    ) -> Self {
        Bundle {
            version: BpVersion::V7,
            proc_flags: ProcFlags::default(),
            crc_type,
            destination,
            source,
            report_to: EndpointId::DtnNone,
            creation,
            lifetime_ms,
            fragment: None,
            blocks: vec![CanonicalBlock::payload(payload, crc_type)],
        }
    }

    pub fn payload(&self) -> &[u8] {
        self.blocks.last().map(|b| b.data.as_slice()).unwrap_or(&[])
    }

    pub fn payload_mut(&mut self) -> &mut Vec<u8> {
        &mut self
            .blocks
            .last_mut()
            .expect("bundle without payload block")
            .data
    }

    pub fn payload_block(&self) -> &CanonicalBlock {
        self.blocks.last().expect("bundle without payload block")
    }

    pub fn extension_blocks(&self) -> &[CanonicalBlock] {
        &self.blocks[..self.blocks.len().saturating_sub(1)]
    }

    pub fn is_fragment(&self) -> bool {
        self.proc_flags.contains(ProcFlags::IS_FRAGMENT)
    }

    pub fn is_admin_record(&self) -> bool {
        self.proc_flags.contains(ProcFlags::ADU_IS_ADMIN_RECORD)
    }

    pub fn block(&self, block_type: u64) -> Option<&CanonicalBlock> {
        self.blocks.iter().find(|b| b.block_type == block_type)
    }

    fn block_mut(&mut self, block_type: u64) -> Option<&mut CanonicalBlock> {
        self.blocks.iter_mut().find(|b| b.block_type == block_type)
    }

    pub fn next_block_number(&self) -> u64 {
        self.blocks
            .iter()
            .map(|b| b.block_number)
            .max()
            .unwrap_or(1)
            .max(1)
            + 1
    }

    /// Inserts an extension block ahead of the payload block.
    pub fn push_extension(&mut self, block: CanonicalBlock) {
        let at = self.blocks.len().saturating_sub(1);
        self.blocks.insert(at, block);
    }

    /// `(limit, count)` of the hop-count block, if present and well-formed.
    pub fn hop_count(&self) -> Option<(u64, u64)> {
        let b = self.block(BLOCK_TYPE_HOP_COUNT)?;
        let mut d = Decoder::new(&b.data);
        if d.definite_array().ok()? != 2 {
            return None;
        }
        Some((d.uint().ok()?, d.uint().ok()?))
    }

    pub fn set_hop_count(&mut self, limit: u64, count: u64) -> bool {
        match self.block_mut(BLOCK_TYPE_HOP_COUNT) {
            Some(b) => {
                b.data = encode_hop_count(limit, count);
                true
            }
            None => false,
        }
    }

    pub fn bundle_age_ms(&self) -> Option<u64> {
        let b = self.block(BLOCK_TYPE_BUNDLE_AGE)?;
        Decoder::new(&b.data).uint().ok()
    }

    pub fn set_bundle_age_ms(&mut self, age: u64) -> bool {
        match self.block_mut(BLOCK_TYPE_BUNDLE_AGE) {
            Some(b) => {
                let mut e = Encoder::new();
                e.uint(age);
                b.data = e.into_inner();
                true
            }
            None => false,
        }
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<(), BundleError> {
        let payload = self
            .blocks
            .last()
            .ok_or_else(|| malformed("no payload block"))?;
        if payload.block_type != BLOCK_TYPE_PAYLOAD || payload.block_number != PAYLOAD_BLOCK_NUMBER {
            return Err(malformed("last block must be the payload block with number 1"));
        }
        let mut numbers = std::collections::HashSet::new();
        for b in &self.blocks {
            if b.block_number == 0 {
                return Err(malformed("block number 0 is reserved for the primary block"));
            }
            if !numbers.insert(b.block_number) {
                return Err(malformed(format!("duplicate block number {}", b.block_number)));
            }
        }
        if self.extension_blocks().iter().any(|b| b.block_type == BLOCK_TYPE_PAYLOAD) {
            return Err(malformed("more than one payload block"));
        }
        match (self.is_fragment(), self.fragment) {
            (true, Some(f)) => {
                if f.offset.checked_add(self.payload().len() as u64).is_none_or(|end| end > f.total_adu_length) {
                    return Err(malformed("fragment exceeds total ADU length"));
                }
            }
            (false, None) => {}
            _ => return Err(malformed("fragment flag and fragment fields disagree")),
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>, BundleError> {
        encode_bundle(self)
    }
}

/// Serializes a V7 bundle.
pub fn encode_bundle(b: &Bundle) -> Result<Vec<u8>, BundleError> {
    if b.version != BpVersion::V7 {
        return Err(BundleError::UnsupportedVersion(0x06));
    }
    b.validate()?;
    let payload_len = b.payload().len();
    let mut out = Vec::with_capacity(payload_len + 64 + b.blocks.len() * 16);
    out.push(crate::cbor::INDEFINITE_ARRAY);

    let start = out.len();
    let mut e = Encoder::new();
    let arity = 8 + if b.fragment.is_some() { 2 } else { 0 } + usize::from(b.crc_type != CrcType::None);
    e.array(arity)
        .uint(7)
        .uint(b.proc_flags.0)
        .uint(b.crc_type.code());
    b.destination.encode_cbor(&mut e);
    b.source.encode_cbor(&mut e);
    b.report_to.encode_cbor(&mut e);
    e.array(2)
        .uint(b.creation.dtn_time_ms)
        .uint(b.creation.sequence_number)
        .uint(b.lifetime_ms);
    if let Some(f) = b.fragment {
        e.uint(f.offset).uint(f.total_adu_length);
    }
    out.extend_from_slice(e.as_slice());
    append_crc(&mut out, start, b.crc_type);

    for block in &b.blocks {
        block.encode_into(&mut out);
    }
    out.push(BREAK);
    Ok(out)
}

/// Reads the trailing CRC of the block that began at `start` and checks it.
fn check_crc(dec: &mut Decoder<'_>, start: usize, ty: CrcType, block_number: u64) -> Result<(), BundleError> {
    if ty == CrcType::None {
        return Ok(());
    }
    let value = dec.bytes()?;
    if value.len() != ty.width() {
        return Err(malformed(format!("block {block_number}: CRC field has wrong length")));
    }
    let end = dec.position();
    let mut raw = dec.data()[start..end].to_vec();
    let w = ty.width();
    let n = raw.len();
    raw[n - w..].fill(0);
    if crc_for(ty, &raw) != value {
        return Err(BundleError::CrcMismatch(block_number));
    }
    Ok(())
}

/// Parses and validates a bundle, verifying all CRCs.
pub fn decode_bundle(data: &[u8]) -> Result<Bundle, BundleError> {
    let first = *data.first().ok_or(BundleError::TruncatedInput)?;
    match detect_version(first)? {
        BpVersion::V6 => return Err(BundleError::UnsupportedVersion(first)),
        BpVersion::V7 => {}
    }
    let mut dec = Decoder::new(data);
    let outer = dec.head()?;
    if outer.major != MAJOR_ARRAY {
        return Err(malformed("bundle is not an array"));
    }
    let block_count = outer.value;
    if let Some(n) = block_count {
        if n < 2 {
            return Err(malformed("bundle needs a primary and a payload block"));
        }
    }

    // Primary block.
    let start = dec.position();
    let arity = dec.definite_array()?;
    if !(8..=11).contains(&arity) {
        return Err(malformed(format!("primary block has {arity} elements")));
    }
    let version = dec.uint()?;
    if version != 7 {
        return Err(malformed(format!("primary block version {version}")));
    }
    let proc_flags = ProcFlags(dec.uint()?);
    let crc_type = CrcType::from_code(dec.uint()?).ok_or_else(|| malformed("unknown CRC type"))?;
    let destination = EndpointId::decode_cbor(&mut dec)?;
    let source = EndpointId::decode_cbor(&mut dec)?;
    let report_to = EndpointId::decode_cbor(&mut dec)?;
    if dec.definite_array()? != 2 {
        return Err(malformed("creation timestamp must be a 2-element array"));
    }
    let creation = CreationTimestamp::new(dec.uint()?, dec.uint()?);
    let lifetime_ms = dec.uint()?;
    let is_fragment = proc_flags.contains(ProcFlags::IS_FRAGMENT);
    let expected = 8 + if is_fragment { 2 } else { 0 } + u64::from(crc_type != CrcType::None);
    if arity != expected {
        return Err(malformed("primary block arity does not match its flags"));
    }
    let fragment = if is_fragment {
        Some(FragmentInfo {
            offset: dec.uint()?,
            total_adu_length: dec.uint()?,
        })
    } else {
        None
    };
    check_crc(&mut dec, start, crc_type, 0)?;

    // Canonical blocks.
    let mut blocks = Vec::new();
    loop {
        match block_count {
            Some(n) if blocks.len() as u64 + 1 == n => break,
            None if dec.at_break()? => break,
            _ => {}
        }
        let start = dec.position();
        let arity = dec.definite_array()?;
        if arity != 5 && arity != 6 {
            return Err(malformed(format!("canonical block has {arity} elements")));
        }
        let block_type = dec.uint()?;
        let block_number = dec.uint()?;
        let flags = BlockFlags(dec.uint()?);
        let crc_type = CrcType::from_code(dec.uint()?).ok_or_else(|| malformed("unknown CRC type"))?;
        if (crc_type != CrcType::None) != (arity == 6) {
            return Err(malformed("canonical block arity does not match its CRC type"));
        }
        let data = dec.bytes()?.to_vec();
        check_crc(&mut dec, start, crc_type, block_number)?;
        blocks.push(CanonicalBlock {
            block_type,
            block_number,
            flags,
            crc_type,
            data,
        });
    }
    if !dec.is_at_end() {
        return Err(malformed("trailing data after bundle"));
    }

    let bundle = Bundle {
        version: BpVersion::V7,
        proc_flags,
        crc_type,
        destination,
        source,
        report_to,
        creation,
        lifetime_ms,
        fragment,
        blocks,
    };
    bundle.validate()?;
    if bundle.block(BLOCK_TYPE_HOP_COUNT).is_some() && bundle.hop_count().is_none() {
        return Err(malformed("hop count block is not [limit, count]"));
    }
    if bundle.block(BLOCK_TYPE_BUNDLE_AGE).is_some() && bundle.bundle_age_ms().is_none() {
        return Err(malformed("bundle age block is not an unsigned integer"));
    }
    Ok(bundle)
}

/// Time at which the bundle expires, in DTN milliseconds.
pub fn expiry_time(b: &Bundle, received_at_dtn_ms: u64) -> Result<u64, BundleError> {
    if b.creation.dtn_time_ms != 0 {
        return Ok(b.creation.dtn_time_ms.saturating_add(b.lifetime_ms));
    }
    let age = b.bundle_age_ms().ok_or(BundleError::MissingBundleAge)?;
    Ok(received_at_dtn_ms.saturating_add(b.lifetime_ms.saturating_sub(age)))
}
