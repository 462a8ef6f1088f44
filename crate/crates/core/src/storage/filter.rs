//! Bundle filters for storage commands. Absent fields match everything.

use super::RecordMeta;
use crate::eid::EndpointId;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BundleFilter {
    /// Pattern over the destination's text form; `*` matches any run of characters.
    pub destination_pattern: Option<String>,
    pub source: Option<EndpointId>,
    /// Inclusive lower bound on the creation time.
    pub creation_after: Option<u64>,
    /// Exclusive upper bound on the creation time.
    pub creation_before: Option<u64>,
    pub limit: Option<u64>,
}

impl BundleFilter {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn destination(pattern: impl Into<String>) -> Self {
        BundleFilter {
            destination_pattern: Some(pattern.into()),
            ..Self::default()
        }
    }

    pub fn matches(&self, m: &RecordMeta) -> bool {
        if let Some(p) = &self.destination_pattern {
            if !wildcard_match(p, &m.destination.to_string()) {
                return false;
            }
        }
        if let Some(s) = &self.source {
            if *s != m.source {
                return false;
            }
        }
        let t = m.creation.dtn_time_ms;
        if self.creation_after.is_some_and(|a| t < a) {
            return false;
        }
        if self.creation_before.is_some_and(|b| t >= b) {
            return false;
        }
        true
    }
}

/// Glob match where `*` stands for any (possibly empty) sequence.
pub fn wildcard_match(pattern: &str, text: &str) -> bool {
    let p = pattern.as_bytes();
    let t = text.as_bytes();
    let (mut pi, mut ti) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && p[pi] == b'*' {
            star = Some((pi, ti));
            pi += 1;
        } else if pi < p.len() && p[pi] == t[ti] {
            pi += 1;
            ti += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == b'*')
}
