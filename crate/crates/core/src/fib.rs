//! Forwarding information base: reachable node ids, the CLA addresses they
//! are reached through, and the state of the links behind those addresses.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::cla::{ClaAddress, LinkId};
use crate::eid::EndpointId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct FibFlags(pub u64);

impl FibFlags {
    /// Static forwarding rule, the BDM is skipped.
    pub const DIRECT: FibFlags = FibFlags(1);
    /// The link behind the address is ACTIVE.
    pub const CONNECTED: FibFlags = FibFlags(2);

    pub fn contains(self, other: FibFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn with(self, other: FibFlags, on: bool) -> FibFlags {
        if on {
            FibFlags(self.0 | other.0)
        } else {
            FibFlags(self.0 & !other.0)
        }
    }
}

impl fmt::Display for FibFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.contains(FibFlags::DIRECT) {
            parts.push("DIRECT");
        }
        if self.contains(FibFlags::CONNECTED) {
            parts.push("CONNECTED");
        }
        if parts.is_empty() {
            f.write_str("-")
        } else {
            f.write_str(&parts.join("|"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FibEntry {
    pub node_id: EndpointId,
    pub cla_address: ClaAddress,
    pub flags: FibFlags,
    pub link_id: Option<LinkId>,
}

impl FibEntry {
    pub fn is_connected(&self) -> bool {
        self.flags.contains(FibFlags::CONNECTED)
    }
}

/// One FIB mutation as emitted to control clients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FibEvent {
    Upsert(FibEntry),
    Remove {
        node_id: EndpointId,
        cla_address: ClaAddress,
    },
}

type Key = (EndpointId, ClaAddress);

#[derive(Debug, Default)]
pub struct Fib {
    entries: BTreeMap<Key, FibEntry>,
    active_links: HashMap<ClaAddress, LinkId>,
    log: Option<Vec<FibEvent>>,
}

impl Fib {
    pub fn new() -> Self {
        Self::default()
    }

    /// A FIB that records every emitted event.
    pub fn with_event_log() -> Self {
        Fib {
            log: Some(Vec::new()),
            ..Default::default()
        }
    }

    pub fn events(&self) -> &[FibEvent] {
        self.log.as_deref().unwrap_or(&[])
    }

    fn emit(&mut self, ev: FibEvent) -> FibEvent {
        if let Some(log) = &mut self.log {
            log.push(ev.clone());
        }
        ev
    }

    /// Inserts or updates an entry. Only the DIRECT bit of `flags` is taken
    /// from the caller; CONNECTED always reflects the link table. Returns the
    /// event if anything changed.
    pub fn upsert(&mut self, node_id: EndpointId, cla_address: ClaAddress, flags: FibFlags) -> Option<FibEvent> {
        let node_id = node_id.node_id();
        let link_id = self.active_links.get(&cla_address).copied();
        let flags = FibFlags::default()
            .with(FibFlags::DIRECT, flags.contains(FibFlags::DIRECT))
            .with(FibFlags::CONNECTED, link_id.is_some());
        let entry = FibEntry {
            node_id: node_id.clone(),
            cla_address: cla_address.clone(),
            flags,
            link_id,
        };
        let key = (node_id, cla_address);
        if self.entries.get(&key) == Some(&entry) {
            return None;
        }
        self.entries.insert(key, entry.clone());
        Some(self.emit(FibEvent::Upsert(entry)))
    }

    pub fn remove(&mut self, node_id: &EndpointId, cla_address: &ClaAddress) -> Option<FibEvent> {
        let node_id = node_id.node_id();
        self.entries.remove(&(node_id.clone(), cla_address.clone()))?;
        Some(self.emit(FibEvent::Remove {
            node_id,
            cla_address: cla_address.clone(),
        }))
    }

    /// Entries for a node, CONNECTED ones first.
    pub fn lookup(&self, node_id: &EndpointId) -> Vec<FibEntry> {
        let node_id = node_id.node_id();
        let mut out: Vec<FibEntry> = self
            .entries
            .range((node_id.clone(), ClaAddress::new("", ""))..)
            .take_while(|((n, _), _)| *n == node_id)
            .map(|(_, e)| e.clone())
            .collect();
        out.sort_by_key(|e| !e.is_connected());
        out
    }

    pub fn entries(&self) -> Vec<FibEntry> {
        self.entries.values().cloned().collect()
    }

    pub fn active_link(&self, address: &ClaAddress) -> Option<LinkId> {
        self.active_links.get(address).copied()
    }

    pub fn has_entries_for_address(&self, address: &ClaAddress) -> bool {
        self.entries.values().any(|e| &e.cla_address == address)
    }

    fn refresh_address(&mut self, address: &ClaAddress) -> Vec<FibEvent> {
        let keys: Vec<Key> = self
            .entries
            .keys()
            .filter(|(_, a)| a == address)
            .cloned()
            .collect();
        keys.into_iter()
            .filter_map(|(node, addr)| {
                let flags = self.entries[&(node.clone(), addr.clone())].flags;
                self.upsert(node, addr, flags)
            })
            .collect()
    }

    /// Records an ACTIVE link and sets CONNECTED on the entries using it.
    pub fn link_up(&mut self, address: ClaAddress, link_id: LinkId) -> Vec<FibEvent> {
        self.active_links.insert(address.clone(), link_id);
        self.refresh_address(&address)
    }

    /// Forgets a link; only acts if `link_id` is the one recorded for the address.
    pub fn link_down(&mut self, address: &ClaAddress, link_id: LinkId) -> Vec<FibEvent> {
        if self.active_links.get(address) != Some(&link_id) {
            return Vec::new();
        }
        self.active_links.remove(address);
        self.refresh_address(address)
    }
}

/// Replays an event log into the state it describes.
pub fn fold_events<'a>(events: impl IntoIterator<Item = &'a FibEvent>) -> Vec<FibEntry> {
    let mut state: BTreeMap<Key, FibEntry> = BTreeMap::new();
    for ev in events {
        match ev {
            FibEvent::Upsert(e) => {
                state.insert((e.node_id.clone(), e.cla_address.clone()), e.clone());
            }
            FibEvent::Remove { node_id, cla_address } => {
                state.remove(&(node_id.clone(), cla_address.clone()));
            }
        }
    }
    state.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn node(n: &str) -> EndpointId {
        EndpointId::parse_node_id(&format!("dtn://{n}")).unwrap()
    }

    fn addr(s: &str) -> ClaAddress {
        s.parse().unwrap()
    }

    #[test]
    fn upsert_lookup_remove() {
        let mut fib = Fib::new();
        assert!(fib.upsert(node("b.dtn"), addr("mtcp:127.0.0.1:4556"), FibFlags::DIRECT).is_some());
        let got = fib.lookup(&node("b.dtn"));
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].flags, FibFlags::DIRECT);
        // Idempotent upsert emits nothing.
        assert!(fib.upsert(node("b.dtn"), addr("mtcp:127.0.0.1:4556"), FibFlags::DIRECT).is_none());
        assert!(fib.remove(&node("x.dtn"), &addr("mtcp:1.2.3.4:1")).is_none());
        assert!(fib.remove(&node("b.dtn"), &addr("mtcp:127.0.0.1:4556")).is_some());
        assert!(fib.lookup(&node("b.dtn")).is_empty());
    }

    #[test]
    fn lookup_uses_node_part_and_orders_connected_first() {
        let mut fib = Fib::new();
        fib.upsert(node("b.dtn"), addr("mtcp:h:1"), FibFlags::DIRECT);
        fib.upsert(node("b.dtn"), addr("mtcp:h:2"), FibFlags::DIRECT);
        fib.upsert(node("c.dtn"), addr("mtcp:h:3"), FibFlags::DIRECT);
        fib.link_up(addr("mtcp:h:2"), LinkId(7));
        let got = fib.lookup(&"dtn://b.dtn/app".parse().unwrap());
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].cla_address, addr("mtcp:h:2"));
        assert_eq!(got[0].link_id, Some(LinkId(7)));
        assert!(got[0].is_connected());
        assert!(!got[1].is_connected());
    }

    #[test]
    fn link_down_clears_connected() {
        let mut fib = Fib::new();
        fib.link_up(addr("mtcp:h:1"), LinkId(1));
        fib.upsert(node("b.dtn"), addr("mtcp:h:1"), FibFlags::DIRECT);
        assert!(fib.lookup(&node("b.dtn"))[0].is_connected());
        // A stale link id does not tear down the current link.
        assert!(fib.link_down(&addr("mtcp:h:1"), LinkId(99)).is_empty());
        let evs = fib.link_down(&addr("mtcp:h:1"), LinkId(1));
        assert_eq!(evs.len(), 1);
        let e = &fib.lookup(&node("b.dtn"))[0];
        assert!(!e.is_connected());
        assert!(e.flags.contains(FibFlags::DIRECT));
        assert_eq!(e.link_id, None);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Upsert(u8, u8, bool),
        Remove(u8, u8),
        Up(u8, u64),
        Down(u8, u64),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0..4u8, 0..3u8, any::<bool>()).prop_map(|(n, a, d)| Op::Upsert(n, a, d)),
            (0..4u8, 0..3u8).prop_map(|(n, a)| Op::Remove(n, a)),
            (0..3u8, 0..4u64).prop_map(|(a, l)| Op::Up(a, l)),
            (0..3u8, 0..4u64).prop_map(|(a, l)| Op::Down(a, l)),
        ]
    }

    proptest! {
        #[test]
        fn state_equals_fold_of_events(ops in proptest::collection::vec(op(), 0..60)) {
            let mut fib = Fib::with_event_log();
            for o in ops {
                match o {
                    Op::Upsert(n, a, d) => {
                        let flags = if d { FibFlags::DIRECT } else { FibFlags::default() };
                        fib.upsert(node(&format!("n{n}")), addr(&format!("mtcp:h:{a}")), flags);
                    }
                    Op::Remove(n, a) => {
                        fib.remove(&node(&format!("n{n}")), &addr(&format!("mtcp:h:{a}")));
                    }
                    Op::Up(a, l) => {
                        fib.link_up(addr(&format!("mtcp:h:{a}")), LinkId(l));
                    }
                    Op::Down(a, l) => {
                        fib.link_down(&addr(&format!("mtcp:h:{a}")), LinkId(l));
                    }
                }
                prop_assert_eq!(fold_events(fib.events()), fib.entries());
                for e in fib.entries() {
                    prop_assert_eq!(e.is_connected(), fib.active_link(&e.cla_address).is_some());
                }
            }
        }
    }
}
