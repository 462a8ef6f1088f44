//! Proactive fragmentation and reassembly of bundle payloads.

use crate::bundle::{Bundle, BlockFlags, BundleError, FragmentInfo, ProcFlags};
use crate::eid::EndpointId;
use crate::bundle::CreationTimestamp;

/// Identifies the ADU a fragment belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FragmentKey {
    pub source: EndpointId,
    pub creation: CreationTimestamp,
    pub total_adu_length: u64,
}

impl FragmentKey {
    pub fn of(b: &Bundle) -> Option<Self> {
        let f = b.fragment?;
        Some(FragmentKey {
            source: b.source.clone(),
            creation: b.creation,
            total_adu_length: f.total_adu_length,
        })
    }
}

/// Splits `b` into fragments carrying at most `max_payload` payload octets.
///
/// When a single fragment would suffice the bundle is returned unchanged.
pub fn fragment_bundle(b: &Bundle, max_payload: u64) -> Result<Vec<Bundle>, BundleError> {
    if max_payload == 0 {
        return Err(BundleError::InvalidFragmentSize);
    }
    if b.proc_flags.contains(ProcFlags::MUST_NOT_FRAGMENT) {
        return Err(BundleError::MustNotFragment);
    }
    if b.is_admin_record() {
        return Err(BundleError::AdminRecord);
    }
    let payload = b.payload();
    let len = payload.len() as u64;
    let count = len.div_ceil(max_payload);
    if count <= 1 {
        return Ok(vec![b.clone()]);
    }
    let (base, total) = match b.fragment {
        Some(f) => (f.offset, f.total_adu_length),
        None => (0, len),
    };
    let template = b.payload_block();
    let mut out = Vec::with_capacity(count as usize);
    for (i, chunk) in payload.chunks(max_payload as usize).enumerate() {
        let mut blocks: Vec<_> = b
            .extension_blocks()
            .iter()
            .filter(|blk| i == 0 || blk.flags.contains(BlockFlags::REPLICATE_IN_FRAGMENTS))
            .cloned()
            .collect();
        let mut pb = template.clone();
        pb.data = chunk.to_vec();
        blocks.push(pb);
        let mut frag = Bundle {
            blocks,
            fragment: Some(FragmentInfo {
                offset: base + i as u64 * max_payload,
                total_adu_length: total,
            }),
            ..b.clone()
        };
        frag.proc_flags.set(ProcFlags::IS_FRAGMENT, true);
        out.push(frag);
    }
    Ok(out)
}

fn same_adu(a: &Bundle, b: &Bundle) -> bool {
    a.version == b.version
        && a.source == b.source
        && a.destination == b.destination
        && a.report_to == b.report_to
        && a.creation == b.creation
        && a.lifetime_ms == b.lifetime_ms
        && a.crc_type == b.crc_type
        && a.proc_flags == b.proc_flags
        && a.fragment.map(|f| f.total_adu_length) == b.fragment.map(|f| f.total_adu_length)
}

/// Ranges of `[0, total)` not covered by any fragment.
pub fn missing_ranges(fragments: &[&Bundle], total: u64) -> Vec<(u64, u64)> {
    let mut spans: Vec<(u64, u64)> = fragments
        .iter()
        .filter_map(|f| f.fragment.map(|fi| (fi.offset, fi.offset + f.payload().len() as u64)))
        .collect();
    spans.sort_unstable();
    let mut gaps = Vec::new();
    let mut covered = 0u64;
    for (start, end) in spans {
        if start > covered {
            gaps.push((covered, start));
        }
        covered = covered.max(end);
    }
    if covered < total {
        gaps.push((covered, total));
    }
    gaps
}

/// Rebuilds the original bundle from a complete set of fragments.
///
/// Overlapping ranges are trimmed with the lowest offset winning; duplicates
/// are harmless.
pub fn reassemble(fragments: &[Bundle]) -> Result<Bundle, BundleError> {
    let first = fragments.first().ok_or(BundleError::InconsistentFragments)?;
    if fragments
        .iter()
        .any(|f| !f.is_fragment() || f.fragment.is_none() || !same_adu(first, f))
    {
        return Err(BundleError::InconsistentFragments);
    }
    let total = first.fragment.unwrap().total_adu_length;
    let mut ordered: Vec<&Bundle> = fragments.iter().collect();
    ordered.sort_by_key(|f| f.fragment.unwrap().offset);
    let gaps = missing_ranges(&ordered, total);
    if !gaps.is_empty() {
        return Err(BundleError::IncompleteAdu(gaps));
    }
    let mut adu = Vec::with_capacity(total as usize);
    for f in &ordered {
        let offset = f.fragment.unwrap().offset;
        let have = adu.len() as u64;
        let end = offset + f.payload().len() as u64;
        if end > have {
            let skip = (have - offset) as usize;
            adu.extend_from_slice(&f.payload()[skip..]);
        }
    }
    let mut out = ordered[0].clone();
    out.fragment = None;
    out.proc_flags.set(ProcFlags::IS_FRAGMENT, false);
    *out.payload_mut() = adu;
    Ok(out)
}
