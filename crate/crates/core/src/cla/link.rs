//! Generic per-link machinery: one RX task and one TX task per link.

use std::fmt;

use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tokio_util::sync::CancellationToken;

use super::{ClaAddress, ClaError, LinkHalves, TxItem};
use crate::bpa::{BpaHandle, BundleDescriptor, Origin};
use crate::bundle::{decode_bundle, encode_bundle};
use crate::clock::SharedClock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinkId(pub u64);

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "link#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkState {
    Connecting,
    Active,
    Closing,
    Down,
}

/// Running tasks and the outbound queue of one link.
pub struct LinkTasks {
    pub tx_queue: mpsc::Sender<BundleDescriptor>,
    pub cancel: CancellationToken,
    pub rx_task: JoinHandle<()>,
    pub tx_task: JoinHandle<()>,
}

pub fn spawn_link(
    link_id: LinkId,
    address: ClaAddress,
    halves: LinkHalves,
    queue_capacity: usize,
    bpa: BpaHandle,
    clock: SharedClock,
) -> LinkTasks {
    let (tx_queue, queue) = mpsc::channel(queue_capacity.max(1));
    let cancel = CancellationToken::new();
    let LinkHalves { rx, tx } = halves;
    let rx_task = tokio::spawn(rx_loop(link_id, address, rx, bpa.clone(), clock.clone()));
    let tx_task = tokio::spawn(tx_loop(link_id, tx, queue, cancel.clone(), bpa, clock));
    LinkTasks {
        tx_queue,
        cancel,
        rx_task,
        tx_task,
    }
}

async fn rx_loop(
    link_id: LinkId,
    address: ClaAddress,
    mut rx: Box<dyn super::ClaReceiver>,
    bpa: BpaHandle,
    clock: SharedClock,
) {
    loop {
        match rx.recv().await {
            Ok(Some(frame)) => {
                let origin = frame.origin.unwrap_or_else(|| Origin::Cla(address.clone()));
                match decode_bundle(&frame.data) {
                    Ok(bundle) => {
                        let desc = BundleDescriptor::new(bundle, origin, clock.now_ms());
                        if !bpa.ingest(desc).await {
                            return;
                        }
                    }
                    Err(e) => {
                        log::warn!("{link_id} ({address}): dropping undecodable input: {e}");
                        bpa.rx_rejected(link_id, e).await;
                    }
                }
            }
            Ok(None) => break,
            Err(e) => {
                log::warn!("{link_id} ({address}): receive failed: {e}");
                break;
            }
        }
    }
    bpa.link_rx_closed(link_id).await;
}

async fn tx_loop(
    link_id: LinkId,
    mut tx: Box<dyn super::ClaSender>,
    mut queue: mpsc::Receiver<BundleDescriptor>,
    cancel: CancellationToken,
    bpa: BpaHandle,
    clock: SharedClock,
) {
    let mut requeue = Vec::new();
    loop {
        let desc = tokio::select! {
            biased;
            _ = cancel.cancelled() => break,
            item = queue.recv() => match item {
                Some(d) => d,
                None => break,
            },
        };
        // Residence time is added to the bundle age on egress.
        let now = clock.now_ms();
        let mut egress = desc.bundle.clone();
        if let Some(age) = egress.bundle_age_ms() {
            egress.set_bundle_age_ms(age.saturating_add(now.saturating_sub(desc.received_at)));
        }
        let bytes = match encode_bundle(&egress) {
            Ok(b) => b,
            Err(e) => {
                log::error!("{link_id}: cannot serialize bundle: {e}");
                bpa.tx_rejected(link_id, desc, e.to_string()).await;
                continue;
            }
        };
        let item = TxItem {
            bytes: &bytes,
            bundle: &egress,
            received_at: desc.received_at,
        };
        match tx.send(&item).await {
            Ok(()) => {}
            Err(ClaError::Rejected(reason)) => {
                log::warn!("{link_id}: bundle rejected by CLA: {reason}");
                bpa.tx_rejected(link_id, desc, reason).await;
            }
            Err(e) => {
                log::warn!("{link_id}: transmission failed: {e}");
                requeue.push(desc);
                break;
            }
        }
    }
    tx.close().await;
    queue.close();
    while let Ok(d) = queue.try_recv() {
        requeue.push(d);
    }
    bpa.link_tx_finished(link_id, requeue).await;
}
