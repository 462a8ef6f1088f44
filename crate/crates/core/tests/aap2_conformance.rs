mod common;

use bmux_core::aap2::machine::{client_message, Phase, Verdict};
use bmux_core::aap2::Kind;
use common::conformance::*;
use common::{addr, init_log, start_node};

#[test]
fn daemon_direction_table() {
    let bad = daemon_direction_mismatches();
    assert!(bad.is_empty(), "{bad:#?}");
}

#[test]
fn machine_agrees_with_expected_table() {
    for phase in PHASES {
        for kind in Kind::ALL {
            let (p, outstanding, link) = match phase {
                Live::AwaitConfig => (Phase::AwaitConfig, None, false),
                Live::Active { link_control } => (Phase::ActiveClientControl, None, link_control),
                Live::Passive { outstanding } => (Phase::PassiveDaemonControl, outstanding, false),
                Live::Closed => (Phase::Closed, None, false),
            };
            let auth = if link {
                [bmux_core::aap2::Auth::LinkControl].into()
            } else {
                Default::default()
            };
            let got = match client_message(p, &auth, outstanding, kind) {
                Verdict::Handle => Outcome::Handled,
                Verdict::Error => Outcome::Error,
                Verdict::Unauthorized => Outcome::Unauthorized,
            };
            assert_eq!(got, expected(phase, kind), "{phase} {kind:?}");
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn live_table() {
    init_log();
    let node = start_node("conf", 600).await;
    let cells = run_table(&addr(&node)).await;
    let bad: Vec<String> = cells
        .iter()
        .filter(|c| c.observed != c.expected)
        .map(|c| format!("{} {:?}: want {:?} got {:?}", c.phase, c.kind, c.expected, c.observed))
        .collect();
    node.shutdown().await;
    assert_eq!(cells.len(), 77);
    assert!(bad.is_empty(), "{bad:#?}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn registration() {
    init_log();
    let node = start_node("reg", 30_000).await;
    for (same, opposite, want, got) in registration_matrix(&addr(&node)).await {
        assert_eq!(got, want, "same secret {same}, opposite direction {opposite}");
    }
    node.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn authorization_rules() {
    init_log();
    let node = start_node("auth", 30_000).await;
    for (what, ok) in authorization(&addr(&node)).await {
        assert!(ok, "{what}");
    }
    node.shutdown().await;
}
