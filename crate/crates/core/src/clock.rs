//! Injected time source. All protocol time is DTN time: milliseconds since
//! 2000-01-01T00:00:00 UTC with leap seconds ignored.

use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use futures::future::BoxFuture;
use tokio::sync::watch;

use crate::bundle::CreationTimestamp;

/// Seconds between the Unix epoch and the DTN epoch.
pub const DTN_EPOCH_UNIX_SECS: u64 = 946_684_800;

pub fn unix_ms_to_dtn_ms(unix_ms: u64) -> u64 {
    unix_ms.saturating_sub(DTN_EPOCH_UNIX_SECS * 1000)
}

pub fn system_time_to_dtn_ms(t: SystemTime) -> u64 {
    let unix = t.duration_since(UNIX_EPOCH).unwrap_or_default();
    unix_ms_to_dtn_ms(unix.as_millis() as u64)
}

pub trait Clock: Send + Sync + 'static {
    fn now_ms(&self) -> u64;

    /// Resolves once `now_ms() >= deadline_ms`.
    fn sleep_until(&self, deadline_ms: u64) -> BoxFuture<'static, ()>;

    fn is_simulated(&self) -> bool {
        false
    }
}

pub type SharedClock = Arc<dyn Clock>;

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        system_time_to_dtn_ms(SystemTime::now())
    }

    fn sleep_until(&self, deadline_ms: u64) -> BoxFuture<'static, ()> {
        let now = self.now_ms();
        let wait = Duration::from_millis(deadline_ms.saturating_sub(now));
        Box::pin(tokio::time::sleep(wait))
    }
}

/// Manually advanced clock for deterministic runs.
#[derive(Debug, Clone)]
pub struct SimClock {
    now: Arc<watch::Sender<u64>>,
}

impl SimClock {
    pub fn new(start_ms: u64) -> Self {
        let (tx, _) = watch::channel(start_ms);
        SimClock { now: Arc::new(tx) }
    }

    pub fn advance(&self, ms: u64) {
        self.now.send_modify(|t| *t = t.saturating_add(ms));
    }

    pub fn set(&self, ms: u64) {
        self.now.send_modify(|t| *t = (*t).max(ms));
    }
}

impl Clock for SimClock {
    fn now_ms(&self) -> u64 {
        *self.now.borrow()
    }

    fn sleep_until(&self, deadline_ms: u64) -> BoxFuture<'static, ()> {
        let mut rx = self.now.subscribe();
        Box::pin(async move {
            // The sender lives as long as any SimClock clone; if all are gone, never fire.
            if rx.wait_for(|t| *t >= deadline_ms).await.is_err() {
                futures::future::pending::<()>().await;
            }
        })
    }

    fn is_simulated(&self) -> bool {
        true
    }
}

/// Issues strictly increasing creation timestamps for one node.
#[derive(Debug, Default)]
pub struct CreationSequencer {
    last: Mutex<(u64, u64)>,
}

impl CreationSequencer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next(&self, now_ms: u64) -> CreationTimestamp {
        let mut last = self.last.lock().unwrap();
        let (t, seq) = *last;
        let next = if now_ms > t {
            (now_ms, 0)
        } else {
            (t, seq + 1)
        };
        *last = next;
        CreationTimestamp::new(next.0, next.1)
    }
}
