//! In-process loopback CLA. Two links opened on the same channel name
//! (`loopback:<name>`) are paired; what one sends the other receives.
//! Delay and loss are injectable for tests.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use async_trait::async_trait;
use rand::Rng;
use tokio::sync::mpsc;

use super::{Cla, ClaError, ClaReceiver, ClaSender, LinkHalves, RxFrame, TxItem};
use crate::clock::SharedClock;

pub const CLA_NAME: &str = "loopback";

struct Delivery {
    data: Vec<u8>,
    deliver_at: u64,
}

type Slot = Option<mpsc::UnboundedSender<Delivery>>;

#[derive(Default)]
struct Channel {
    generation: u64,
    slots: [Slot; 2],
}

#[derive(Default)]
struct Hub {
    next_generation: u64,
    channels: HashMap<String, Channel>,
}

fn hub() -> &'static Mutex<Hub> {
    static HUB: OnceLock<Mutex<Hub>> = OnceLock::new();
    HUB.get_or_init(Default::default)
}

#[derive(Debug, Clone, Default)]
pub struct LoopbackConfig {
    pub delay_ms: u64,
    pub drop_probability: f64,
    pub max_bundle_size: Option<u64>,
}

pub struct LoopbackCla {
    config: LoopbackConfig,
    clock: SharedClock,
}

impl LoopbackCla {
    pub fn new(config: LoopbackConfig, clock: SharedClock) -> Self {
        LoopbackCla { config, clock }
    }
}

struct LoopbackReceiver {
    rx: mpsc::UnboundedReceiver<Delivery>,
    clock: SharedClock,
}

#[async_trait]
impl ClaReceiver for LoopbackReceiver {
    async fn recv(&mut self) -> Result<Option<RxFrame>, ClaError> {
        let Some(d) = self.rx.recv().await else {
            return Ok(None);
        };
        self.clock.sleep_until(d.deliver_at).await;
        Ok(Some(RxFrame::new(d.data)))
    }
}

struct LoopbackSender {
    channel: String,
    generation: u64,
    slot: usize,
    config: LoopbackConfig,
    clock: SharedClock,
    closed: bool,
}

#[async_trait]
impl ClaSender for LoopbackSender {
    async fn send(&mut self, item: &TxItem<'_>) -> Result<(), ClaError> {
        if let Some(max) = self.config.max_bundle_size {
            if item.bytes.len() as u64 > max {
                return Err(ClaError::Rejected(format!(
                    "{} octets exceed CLA maximum {max}",
                    item.bytes.len()
                )));
            }
        }
        if self.config.drop_probability > 0.0 && rand::thread_rng().gen::<f64>() < self.config.drop_probability {
            log::debug!("loopback:{}: dropped bundle (injected loss)", self.channel);
            return Ok(());
        }
        let peer = hub()
            .lock()
            .unwrap()
            .channels
            .get(&self.channel)
            .filter(|c| c.generation == self.generation)
            .and_then(|c| c.slots[1 - self.slot].clone());
        match peer {
            Some(peer) => {
                let _ = peer.send(Delivery {
                    data: item.bytes.to_vec(),
                    deliver_at: self.clock.now_ms() + self.config.delay_ms,
                });
            }
            None => log::debug!("loopback:{}: no peer attached, bundle lost", self.channel),
        }
        Ok(())
    }

    async fn close(&mut self) {
        release(&self.channel, self.generation);
        self.closed = true;
    }
}

impl Drop for LoopbackSender {
    fn drop(&mut self) {
        if !self.closed {
            release(&self.channel, self.generation);
        }
    }
}

/// Closing either end tears down the pair so the peer's reception ends too.
fn release(channel: &str, generation: u64) {
    let mut hub = hub().lock().unwrap();
    if hub.channels.get(channel).is_some_and(|c| c.generation == generation) {
        hub.channels.remove(channel);
    }
}

#[async_trait]
impl Cla for LoopbackCla {
    fn name(&self) -> &str {
        CLA_NAME
    }

    fn max_bundle_size(&self) -> Option<u64> {
        self.config.max_bundle_size
    }

    async fn open_link(&self, detail: &str) -> Result<LinkHalves, ClaError> {
        if detail.is_empty() {
            return Err(ClaError::InvalidAddress(format!("{CLA_NAME}:")));
        }
        let (tx, rx) = mpsc::unbounded_channel();
        let (slot, generation) = {
            let mut hub = hub().lock().unwrap();
            let hub = &mut *hub;
            let channel = hub.channels.entry(detail.to_string()).or_insert_with(|| {
                hub.next_generation += 1;
                Channel {
                    generation: hub.next_generation,
                    slots: Default::default(),
                }
            });
            let slots = &mut channel.slots;
            let free = slots
                .iter()
                .position(Option::is_none)
                .ok_or_else(|| ClaError::ConnectionFailed(format!("loopback channel {detail:?} already paired")))?;
            slots[free] = Some(tx);
            (free, channel.generation)
        };
        Ok(LinkHalves {
            rx: Box::new(LoopbackReceiver {
                rx,
                clock: self.clock.clone(),
            }),
            tx: Box::new(LoopbackSender {
                channel: detail.to_string(),
                generation,
                slot,
                config: self.config.clone(),
                clock: self.clock.clone(),
                closed: false,
            }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{encode_bundle, Bundle, CreationTimestamp};
    use crate::clock::SimClock;
    use crate::crc::CrcType;
    use std::sync::Arc;
    use std::time::Duration;

    fn bundle() -> Bundle {
        Bundle::new(
            "dtn://a/x".parse().unwrap(),
            "dtn://b/y".parse().unwrap(),
            CreationTimestamp::new(1, 0),
            1000,
            b"loop".to_vec(),
            CrcType::Crc16X25,
        )
    }

    async fn send(tx: &mut Box<dyn ClaSender>, b: &Bundle) -> Vec<u8> {
        let bytes = encode_bundle(b).unwrap();
        tx.send(&TxItem {
            bytes: &bytes,
            bundle: b,
            received_at: 0,
        })
        .await
        .unwrap();
        bytes
    }

    #[tokio::test]
    async fn identity_channel() {
        let clock: SharedClock = Arc::new(SimClock::new(1000));
        let cla = LoopbackCla::new(LoopbackConfig::default(), clock);
        let mut a = cla.open_link("lb-identity").await.unwrap();
        let mut b = cla.open_link("lb-identity").await.unwrap();
        assert!(cla.open_link("lb-identity").await.is_err());
        let sent = send(&mut a.tx, &bundle()).await;
        let got = b.rx.recv().await.unwrap().unwrap();
        assert_eq!(got.data, sent);
    }

    #[tokio::test]
    async fn total_loss() {
        let clock: SharedClock = Arc::new(SimClock::new(0));
        let lossy = LoopbackCla::new(
            LoopbackConfig {
                drop_probability: 1.0,
                ..Default::default()
            },
            clock.clone(),
        );
        let plain = LoopbackCla::new(LoopbackConfig::default(), clock);
        let mut a = lossy.open_link("lb-loss").await.unwrap();
        let mut b = plain.open_link("lb-loss").await.unwrap();
        for _ in 0..10 {
            send(&mut a.tx, &bundle()).await;
        }
        assert!(tokio::time::timeout(Duration::from_millis(100), b.rx.recv()).await.is_err());
    }

    #[tokio::test]
    async fn injected_delay_on_sim_clock() {
        let sim = SimClock::new(5000);
        let clock: SharedClock = Arc::new(sim.clone());
        let delayed = LoopbackCla::new(
            LoopbackConfig {
                delay_ms: 100,
                ..Default::default()
            },
            clock.clone(),
        );
        let mut a = delayed.open_link("lb-delay").await.unwrap();
        let mut b = delayed.open_link("lb-delay").await.unwrap();
        send(&mut a.tx, &bundle()).await;
        let pending = tokio::spawn(async move {
            let f = b.rx.recv().await.unwrap().unwrap();
            (f, b)
        });
        tokio::time::sleep(Duration::from_millis(20)).await;
        assert!(!pending.is_finished());
        sim.advance(60);
        tokio::time::sleep(Duration::from_millis(20)).await;
        assert!(!pending.is_finished());
        sim.advance(40);
        let _ = tokio::time::timeout(Duration::from_secs(1), pending).await.unwrap().unwrap();
        assert_eq!(clock.now_ms(), 5100);
    }

    #[tokio::test]
    async fn max_bundle_size_enforced() {
        let clock: SharedClock = Arc::new(SimClock::new(0));
        let cla = LoopbackCla::new(
            LoopbackConfig {
                max_bundle_size: Some(10),
                ..Default::default()
            },
            clock,
        );
        let mut a = cla.open_link("lb-max").await.unwrap();
        let b = bundle();
        let bytes = encode_bundle(&b).unwrap();
        let r = a
            .tx
            .send(&TxItem {
                bytes: &bytes,
                bundle: &b,
                received_at: 0,
            })
            .await;
        assert!(matches!(r, Err(ClaError::Rejected(_))));
    }

    #[tokio::test]
    async fn close_releases_slot() {
        let clock: SharedClock = Arc::new(SimClock::new(0));
        let cla = LoopbackCla::new(LoopbackConfig::default(), clock);
        let mut a = cla.open_link("lb-close").await.unwrap();
        let mut b = cla.open_link("lb-close").await.unwrap();
        a.tx.close().await;
        assert!(a.rx.recv().await.unwrap().is_none());
        assert!(b.rx.recv().await.unwrap().is_none());
        let _c = cla.open_link("lb-close").await.unwrap();
        // The stale sender of the old pair must not tear down the new one.
        drop(b);
        let _d = cla.open_link("lb-close").await.unwrap();
        assert!(cla.open_link("lb-close").await.is_err());
    }
}
