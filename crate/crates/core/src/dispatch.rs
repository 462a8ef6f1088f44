//! Forwarding decisions: the decision type, the per-node decision cache and
//! the synchronous part of resolution (cache, static FIB rules, fallback).
//! The asynchronous BDM round trip is driven by the bundle processor.

use std::collections::HashMap;
use std::fmt;

use crate::bundle::{encode_bundle, Bundle, BundleError, FragmentInfo, ProcFlags};
use crate::cbor::head_len;
use crate::cla::ClaAddress;
use crate::eid::EndpointId;
use crate::fib::{Fib, FibFlags};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Forward = 0,
    Store = 1,
    Drop = 2,
}

impl Action {
    pub fn from_code(code: u64) -> Option<Action> {
        match code {
            0 => Some(Action::Forward),
            1 => Some(Action::Store),
            2 => Some(Action::Drop),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NextHop {
    pub node_id: EndpointId,
    pub cla_address: ClaAddress,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DispatchDecision {
    pub action: Action,
    pub next_hops: Vec<NextHop>,
    pub max_fragment_payload: Option<u64>,
    pub reason: String,
}

impl DispatchDecision {
    pub fn forward(next_hops: Vec<NextHop>) -> Self {
        DispatchDecision {
            action: Action::Forward,
            next_hops,
            max_fragment_payload: None,
            reason: String::new(),
        }
    }

    pub fn store() -> Self {
        DispatchDecision {
            action: Action::Store,
            next_hops: Vec::new(),
            max_fragment_payload: None,
            reason: String::new(),
        }
    }

    pub fn drop(reason: impl Into<String>) -> Self {
        DispatchDecision {
            action: Action::Drop,
            next_hops: Vec::new(),
            max_fragment_payload: None,
            reason: reason.into(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.action == Action::Forward && self.next_hops.is_empty() {
            return Err("FORWARD without next hops".into());
        }
        if self.max_fragment_payload == Some(0) {
            return Err("max_fragment_payload must be at least 1".into());
        }
        Ok(())
    }

    pub fn references(&self, address: &ClaAddress) -> bool {
        self.next_hops.iter().any(|h| &h.cla_address == address)
    }
}

impl fmt::Display for DispatchDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.action {
            Action::Forward => {
                let hops: Vec<String> = self
                    .next_hops
                    .iter()
                    .map(|h| format!("{} via {}", h.node_id, h.cla_address))
                    .collect();
                write!(f, "FORWARD [{}]", hops.join(", "))
            }
            Action::Store => f.write_str("STORE"),
            Action::Drop => write!(f, "DROP ({})", self.reason),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DispatchCacheEntry {
    pub decision: DispatchDecision,
    pub inserted_at: u64,
}

/// Next-hop decisions keyed by destination node id.
#[derive(Debug)]
pub struct DispatchCache {
    enabled: bool,
    entries: HashMap<EndpointId, DispatchCacheEntry>,
}

impl DispatchCache {
    pub fn new(enabled: bool) -> Self {
        DispatchCache {
            enabled,
            entries: HashMap::new(),
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn get(&self, destination: &EndpointId) -> Option<&DispatchDecision> {
        self.entries.get(&destination.node_id()).map(|e| &e.decision)
    }

    /// Caches the CONNECTED subset of a FORWARD decision. Anything else is
    /// not cached.
    pub fn put(&mut self, destination: &EndpointId, decision: &DispatchDecision, fib: &Fib, now: u64) {
        if !self.enabled || decision.action != Action::Forward {
            return;
        }
        let hops: Vec<NextHop> = decision
            .next_hops
            .iter()
            .filter(|h| fib.active_link(&h.cla_address).is_some())
            .cloned()
            .collect();
        if hops.is_empty() {
            return;
        }
        let decision = DispatchDecision {
            next_hops: hops,
            ..decision.clone()
        };
        self.entries.insert(
            destination.node_id(),
            DispatchCacheEntry {
                decision,
                inserted_at: now,
            },
        );
    }

    pub fn invalidate_node(&mut self, node_id: &EndpointId) {
        self.entries.remove(&node_id.node_id());
    }

    pub fn invalidate_address(&mut self, address: &ClaAddress) {
        self.entries.retain(|_, e| !e.decision.references(address));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Where a decision came from, for statistics and logs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecisionSource {
    Cache,
    Fib,
}

/// Resolution steps that need no BDM: the cache, then a DIRECT+CONNECTED
/// FIB entry for the destination node.
pub fn resolve_static(cache: &DispatchCache, fib: &Fib, destination: &EndpointId) -> Option<(DispatchDecision, DecisionSource)> {
    if let Some(d) = cache.get(destination) {
        return Some((d.clone(), DecisionSource::Cache));
    }
    let entry = fib
        .lookup(destination)
        .into_iter()
        .find(|e| e.flags.contains(FibFlags::DIRECT) && e.is_connected())?;
    Some((
        DispatchDecision::forward(vec![NextHop {
            node_id: entry.node_id,
            cla_address: entry.cla_address,
        }]),
        DecisionSource::Fib,
    ))
}

/// What happens when no route is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fallback {
    Store,
    DropNoRoute,
    DropStorageFull,
}

pub fn fallback(storage_available: bool, storage_failed: bool) -> Fallback {
    match (storage_available, storage_failed) {
        (true, false) => Fallback::Store,
        (true, true) => Fallback::DropStorageFull,
        (false, _) => Fallback::DropNoRoute,
    }
}

/// Largest payload per fragment so that every fragment of `b` fits into
/// `max_bundle_size` serialized octets, or `None` if even an empty payload
/// does not fit.
pub fn max_payload_for(b: &Bundle, max_bundle_size: u64) -> Result<Option<u64>, BundleError> {
    let total = b
        .fragment
        .map(|f| f.total_adu_length)
        .unwrap_or(b.payload().len() as u64);
    let mut probe = b.clone();
    probe.payload_mut().clear();
    probe.proc_flags.set(ProcFlags::IS_FRAGMENT, true);
    // Worst-case integer widths for the fragment fields.
    probe.fragment = Some(FragmentInfo {
        offset: total.max(u32::MAX as u64 + 1),
        total_adu_length: total.max(u32::MAX as u64 + 1),
    });
    let overhead = encode_bundle(&probe)?.len() as u64;
    // The payload length header grows with the payload itself.
    let budget = max_bundle_size.saturating_sub(overhead);
    if budget == 0 {
        return Ok(None);
    }
    let mut p = budget;
    while p > 0 && p + head_len(p) as u64 - 1 > budget {
        p -= 1;
    }
    Ok(if p == 0 { None } else { Some(p) })
}

/// Fragment size to use when sending `b` with `decision` over a CLA with
/// `cla_max` octets of bundle size, if fragmentation is needed at all.
pub fn fragmentation_plan(
    b: &Bundle,
    decision_max: Option<u64>,
    cla_max: Option<u64>,
) -> Result<Option<u64>, BundleError> {
    let mut limit = decision_max.filter(|&m| (b.payload().len() as u64) > m);
    if let Some(cla_max) = cla_max {
        let size = encode_bundle(b)?.len() as u64;
        if size > cla_max {
            let by_cla = max_payload_for(b, cla_max)?.ok_or(BundleError::InvalidFragmentSize)?;
            limit = Some(limit.map_or(by_cla, |l| l.min(by_cla)));
        }
    }
    if limit.is_some() && b.proc_flags.contains(ProcFlags::MUST_NOT_FRAGMENT) {
        return Err(BundleError::MustNotFragment);
    }
    Ok(limit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::CreationTimestamp;
    use crate::cla::LinkId;
    use crate::crc::CrcType;
    use crate::fragment::fragment_bundle;
    use proptest::prelude::*;

    fn hop(node: &str, addr: &str) -> NextHop {
        NextHop {
            node_id: EndpointId::parse_node_id(node).unwrap(),
            cla_address: addr.parse().unwrap(),
        }
    }

    fn bundle(len: usize) -> Bundle {
        Bundle::new(
            "dtn://a.dtn/src".parse().unwrap(),
            "dtn://c.dtn/app".parse().unwrap(),
            CreationTimestamp::new(800_000_000_000, 3),
            3_600_000,
            (0..len).map(|i| i as u8).collect(),
            CrcType::Crc16X25,
        )
    }

    #[test]
    fn static_resolution_order() {
        let mut fib = Fib::new();
        let mut cache = DispatchCache::new(true);
        let dest: EndpointId = "dtn://b.dtn/app".parse().unwrap();
        assert!(resolve_static(&cache, &fib, &dest).is_none());
        fib.upsert(dest.clone(), "mtcp:h:1".parse().unwrap(), FibFlags::DIRECT);
        // DIRECT alone is not enough.
        assert!(resolve_static(&cache, &fib, &dest).is_none());
        fib.link_up("mtcp:h:1".parse().unwrap(), LinkId(1));
        let (d, src) = resolve_static(&cache, &fib, &dest).unwrap();
        assert_eq!(src, DecisionSource::Fib);
        assert_eq!(d.next_hops, vec![hop("dtn://b.dtn/", "mtcp:h:1")]);
        cache.put(&dest, &d, &fib, 0);
        assert_eq!(resolve_static(&cache, &fib, &dest).unwrap().1, DecisionSource::Cache);
    }

    #[test]
    fn cache_keeps_only_connected_hops() {
        let mut fib = Fib::new();
        fib.link_up("mtcp:h:2".parse().unwrap(), LinkId(2));
        let mut cache = DispatchCache::new(true);
        let dest: EndpointId = "dtn://d.dtn/x".parse().unwrap();
        let d = DispatchDecision::forward(vec![hop("dtn://b.dtn", "mtcp:h:1"), hop("dtn://c.dtn", "mtcp:h:2")]);
        cache.put(&dest, &d, &fib, 5);
        assert_eq!(cache.get(&dest).unwrap().next_hops, vec![hop("dtn://c.dtn", "mtcp:h:2")]);
        // Other demux of the same node shares the entry.
        assert!(cache.get(&"dtn://d.dtn/other".parse().unwrap()).is_some());
        cache.invalidate_address(&"mtcp:h:2".parse().unwrap());
        assert!(cache.get(&dest).is_none());
        cache.put(&dest, &DispatchDecision::store(), &fib, 6);
        assert!(cache.is_empty());
        let mut off = DispatchCache::new(false);
        off.put(&dest, &d, &fib, 0);
        assert!(off.is_empty());
    }

    #[test]
    fn fallback_floor() {
        assert_eq!(fallback(true, false), Fallback::Store);
        assert_eq!(fallback(true, true), Fallback::DropStorageFull);
        assert_eq!(fallback(false, false), Fallback::DropNoRoute);
    }

    #[test]
    fn decision_validation() {
        assert!(DispatchDecision::forward(vec![]).validate().is_err());
        let mut d = DispatchDecision::forward(vec![hop("dtn://b.dtn", "mtcp:h:1")]);
        assert!(d.validate().is_ok());
        d.max_fragment_payload = Some(0);
        assert!(d.validate().is_err());
    }

    #[test]
    fn ten_kib_over_four_kib_cla_needs_three_fragments() {
        let b = bundle(10 * 1024);
        let m = fragmentation_plan(&b, None, Some(4096)).unwrap().unwrap();
        let frags = fragment_bundle(&b, m).unwrap();
        assert_eq!(frags.len(), 3);
        for f in &frags {
            assert!(encode_bundle(f).unwrap().len() <= 4096);
        }
        assert_eq!(fragmentation_plan(&bundle(100), None, Some(4096)).unwrap(), None);
        assert_eq!(fragmentation_plan(&bundle(100), Some(40), None).unwrap(), Some(40));
        let mut nf = bundle(10 * 1024);
        nf.proc_flags.set(ProcFlags::MUST_NOT_FRAGMENT, true);
        assert_eq!(fragmentation_plan(&nf, None, Some(4096)), Err(BundleError::MustNotFragment));
    }

    proptest! {
        #[test]
        fn fragments_fit_the_cla(len in 0usize..6000, max in 200u64..3000) {
            let b = bundle(len);
            if let Some(m) = fragmentation_plan(&b, None, Some(max)).unwrap() {
                for f in fragment_bundle(&b, m).unwrap() {
                    prop_assert!(encode_bundle(&f).unwrap().len() as u64 <= max);
                }
            } else {
                prop_assert!(encode_bundle(&b).unwrap().len() as u64 <= max);
            }
        }
    }
}
