//! Behavioural invariants observed on live daemons.

mod common;

use std::sync::Arc;
use std::time::Duration;

use bmux_core::aap2::Incoming;
use bmux_core::bundle::{detect_version, BpVersion};
use bmux_core::{
    encode_bundle, Aap2Client, BundleAdu, ClaAddress, Config, CreationTimestamp, DropReason, EndpointId, LinkOp,
    Message, Node, Status, SystemClock,
};
use common::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

async fn node_with(name: &str, extra: &str) -> Node {
    let cfg = Config::from_json(&format!(
        r#"{{
            "node_id": "dtn://{name}.dtn/",
            "admin_secret": "{ADMIN}",
            "aap2": {{"tcp": "127.0.0.1:0"}},
            "clas": [{{"type": "mtcp", "listen": "127.0.0.1:0"}}]
            {extra}
        }}"#
    ))
    .unwrap();
    Node::start(&cfg, Arc::new(SystemClock)).await.unwrap()
}

fn eid(s: &str) -> EndpointId {
    s.parse().unwrap()
}

fn adu(dst: &str, payload: Vec<u8>) -> BundleAdu {
    BundleAdu {
        src: EndpointId::DtnNone,
        dst: eid(dst),
        creation: CreationTimestamp::new(0, 0),
        payload,
        is_bibe: false,
        lifetime_ms: None,
    }
}

async fn wait_for(node: &Node, what: impl Fn(&bmux_core::NodeStats) -> bool) -> bmux_core::NodeStats {
    for _ in 0..200 {
        let s = node.stats().await;
        if what(&s) {
            return s;
        }
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
    node.stats().await
}

#[test]
fn crc_tables_match_bitwise_oracle_on_ten_thousand_inputs() {
    let mut rng = StdRng::seed_from_u64(0xC7C);
    for _ in 0..10_000 {
        let len = rng.gen_range(0..300);
        let data: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        assert_eq!(bmux_core::crc::crc16_x25(&data), oracle_crc16(&data));
        assert_eq!(bmux_core::crc::crc32c(&data), oracle_crc32c(&data));
    }
}

#[test]
fn encoded_bundles_are_detected_as_v7() {
    let mut rng = StdRng::seed_from_u64(7);
    for _ in 0..500 {
        let bytes = encode_bundle(&random_bundle(&mut rng, 64)).unwrap();
        assert_eq!(detect_version(bytes[0]), Ok(BpVersion::V7));
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pipelined_calls_are_answered_in_order() {
    init_log();
    let node = node_with("fifo", r#", "max_adu_size": 16"#).await;
    let a = addr(&node);
    let _sink = Aap2Client::passive(&a, "sink", b"").await.unwrap();
    let mut c = Aap2Client::active(&a, "src", b"").await.unwrap();

    let mut rng = StdRng::seed_from_u64(3);
    let mut expected = Vec::new();
    for _ in 0..60 {
        let (msg, want) = match rng.gen_range(0..3) {
            0 => (Message::Keepalive, Status::Ok),
            1 => (Message::BundleAdu(adu("dtn://fifo.dtn/sink", vec![1; 8])), Status::Ok),
            _ => (Message::BundleAdu(adu("dtn://fifo.dtn/sink", vec![1; 17])), Status::Error),
        };
        c.send_raw(msg).await.unwrap();
        expected.push(want);
    }
    for (i, want) in expected.into_iter().enumerate() {
        match c.recv_raw().await.unwrap() {
            Message::Response(r) => assert_eq!(r.status, want, "response {i}: {}", r.detail),
            other => panic!("response {i}: {other:?}"),
        }
    }
    node.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn delivered_metadata_is_the_senders() {
    init_log();
    let node = node_with("meta", "").await;
    let a = addr(&node);
    let mut rx = Aap2Client::passive(&a, "rx", b"").await.unwrap();
    let mut tx = Aap2Client::active(&a, "tx", b"").await.unwrap();
    let unix_ms = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).unwrap().as_millis() as u64;
    // A sender-chosen creation time a minute in the past.
    let creation = CreationTimestamp::new(unix_ms - 946_684_800_000 - 60_000, 5);
    tx.send_bundle_adu(BundleAdu {
        creation,
        lifetime_ms: Some(3_600_000),
        ..adu("dtn://meta.dtn/rx", b"abc".to_vec())
    })
    .await
    .unwrap();
    let got = rx.recv_adu_timeout(Duration::from_secs(2)).await.unwrap();
    assert_eq!(got.src, eid("dtn://meta.dtn/tx"));
    assert_eq!(got.dst, eid("dtn://meta.dtn/rx"));
    assert_eq!(got.creation, creation);
    assert_eq!(got.payload, b"abc");
    node.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn only_the_passive_connection_of_the_destination_receives() {
    init_log();
    let node = node_with("split", "").await;
    let a = addr(&node);
    let mut rx = Aap2Client::passive(&a, "echo", b"s").await.unwrap();
    let mut other = Aap2Client::passive(&a, "other", b"").await.unwrap();
    // Same agent, sending side, sharing the secret.
    let mut tx = Aap2Client::active(&a, "echo", b"s").await.unwrap();
    tx.send_adu(&eid("dtn://split.dtn/echo"), b"to self".to_vec(), None).await.unwrap();
    let got = rx.recv_adu_timeout(Duration::from_secs(2)).await.unwrap();
    assert_eq!(got.payload, b"to self");
    assert_eq!(got.src, eid("dtn://split.dtn/echo"));
    // The active side never gets unsolicited calls; a keepalive still pairs with its response.
    tx.keepalive().await.unwrap();
    assert!(tokio::time::timeout(Duration::from_millis(300), other.recv()).await.is_err());
    node.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn bundles_on_one_link_arrive_in_send_order() {
    init_log();
    let b = node_with("fb", "").await;
    let b_mtcp = b.mtcp_addr().unwrap();
    let a = node_with(
        "fa",
        &format!(r#", "links": [{{"node_id": "dtn://fb.dtn/", "cla_address": "mtcp:{b_mtcp}"}}]"#),
    )
    .await;
    let mut rx = Aap2Client::passive(&addr(&b), "rx", b"").await.unwrap();
    let mut tx = Aap2Client::active(&addr(&a), "tx", b"").await.unwrap();
    for i in 0..50u32 {
        tx.send_adu(&eid("dtn://fb.dtn/rx"), i.to_be_bytes().to_vec(), None).await.unwrap();
    }
    for i in 0..50u32 {
        let got = rx.recv_adu_timeout(Duration::from_secs(5)).await.unwrap();
        assert_eq!(got.payload, i.to_be_bytes());
    }
    a.shutdown().await;
    b.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn silent_dispatcher_still_gets_a_decision() {
    init_log();
    let node = node_with("tot", r#", "bdm_timeout_ms": 300"#).await;
    let a = addr(&node);
    let mut bdm = Aap2Client::open(
        &a,
        false,
        "",
        b"",
        bmux_core::aap2::AuthSet::from([bmux_core::aap2::Auth::Dispatch]),
        ADMIN.as_bytes(),
    )
    .await
    .unwrap();
    let mut tx = Aap2Client::active(&a, "tx", b"").await.unwrap();
    tx.send_adu(&eid("dtn://far.dtn/x"), b"x".to_vec(), None).await.unwrap();
    // Take the request and never answer it.
    match tokio::time::timeout(Duration::from_secs(2), bdm.recv()).await {
        Ok(Ok(Incoming::Dispatch(_))) => {}
        other => panic!("expected a DispatchRequest, got {other:?}"),
    }
    let s = wait_for(&node, |s| s.dropped_for(DropReason::NoRoute) == 1).await;
    assert_eq!(s.dropped_for(DropReason::NoRoute), 1, "{s:?}");
    assert_eq!(s.bdm_timeouts, 1);
    assert_eq!(s.pending, 0);
    assert!(s.accounting_closes());
    node.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn link_refusal_keeps_the_control_connection() {
    init_log();
    let node = node_with("lr", "").await;
    let mut c = Aap2Client::open(
        &addr(&node),
        true,
        "",
        b"",
        bmux_core::aap2::AuthSet::from([bmux_core::aap2::Auth::LinkControl]),
        ADMIN.as_bytes(),
    )
    .await
    .unwrap();
    let closed = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = closed.local_addr().unwrap().port();
    drop(closed);
    let cla: ClaAddress = format!("mtcp:127.0.0.1:{port}").parse().unwrap();
    assert!(c.link(LinkOp::Up, &eid("dtn://gone.dtn/"), &cla, None).await.is_err());
    c.keepalive().await.unwrap();
    assert!(node.fib().await.is_empty());
    node.shutdown().await;
}
