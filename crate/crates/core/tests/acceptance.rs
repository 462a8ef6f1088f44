//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::time::{Duration, Instant};

use bmux_core::bundle::{detect_version, BpVersion};
use bmux_core::crc::{crc16_x25, crc32c};
use bmux_core::harness::run_scenario;
use bmux_core::{decode_bundle, encode_bundle};
use common::conformance::{authorization, daemon_direction_mismatches, registration_matrix, run_table};
use common::vectors::check_vectors;
use common::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

struct Verdict {
    name: &'static str,
    ok: bool,
    detail: String,
}

fn verdict(name: &'static str, ok: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        name,
        ok,
        detail: detail.into(),
    }
}

fn codec_roundtrip() -> Verdict {
    let mut rng = StdRng::seed_from_u64(0xB7);
    let start = Instant::now();
    let mut bad = 0;
    for _ in 0..1000 {
        let b = random_bundle(&mut rng, 1024);
        let ok = encode_bundle(&b).ok().and_then(|bytes| decode_bundle(&bytes).ok()).as_ref() == Some(&b);
        bad += usize::from(!ok);
    }
    let took = start.elapsed();
    verdict(
        "codec round-trip",
        bad == 0 && took < Duration::from_secs(10),
        format!("1000 bundles, {bad} mismatches, {:.2} s", took.as_secs_f64()),
    )
}

fn golden() -> Verdict {
    let bad = check_vectors();
    verdict("golden vectors", bad.is_empty(), if bad.is_empty() { "6 vectors".into() } else { bad.join("; ") })
}

fn crc() -> Verdict {
    let v = [
        oracle_crc16(b"123456789") as u32,
        crc16_x25(b"123456789") as u32,
        oracle_crc32c(b"123456789"),
        crc32c(b"123456789"),
    ];
    verdict(
        "CRC known answers",
        v == [0x906E, 0x906E, 0xE306_9283, 0xE306_9283],
        format!("crc16 {:#06x}/{:#06x} crc32c {:#010x}/{:#010x}", v[0], v[1], v[2], v[3]),
    )
}

async fn scenario_check(name: &'static str, file: &str) -> Verdict {
    let report = run_scenario(&scenario(file)).await;
    let detail = match report.failure() {
        Some(f) => f,
        None => {
            let steps = report.steps.len();
            match report.sim_elapsed_ms {
                Some(ms) => format!("{file}: {steps} steps, {ms} ms simulated"),
                None => format!("{file}: {steps} steps in {} ms", report.duration.as_millis()),
            }
        }
    };
    verdict(name, report.passed(), detail)
}

async fn version_gate() -> Verdict {
    let detect = detect_version(0x06) == Ok(BpVersion::V6) && detect_version(0x9F) == Ok(BpVersion::V7);
    let mut v = scenario_check("version gate", "version_gate").await;
    v.ok &= detect;
    v.detail = format!("first byte 0x06 -> V6, 0x9F -> V7: {detect}; {}", v.detail);
    v
}

async fn conformance() -> Verdict {
    let fast = start_node("conf", 600).await;
    let cells = run_table(&addr(&fast)).await;
    fast.shutdown().await;
    let slow = start_node("reg", 30_000).await;
    let matrix = registration_matrix(&addr(&slow)).await;
    slow.shutdown().await;

    let mut bad: Vec<String> = cells
        .iter()
        .filter(|c| c.observed != c.expected)
        .map(|c| format!("{} {:?}: got {:?}", c.phase, c.kind, c.observed))
        .collect();
    bad.extend(daemon_direction_mismatches());
    bad.extend(
        matrix
            .iter()
            .filter(|m| m.2 != m.3)
            .map(|(s, o, want, got)| format!("same secret {s} opposite {o}: want {want} got {got}")),
    );
    let detail = if bad.is_empty() {
        format!("{} client cells, daemon direction table, 4 registration cases", cells.len())
    } else {
        bad.join("; ")
    };
    verdict("AAP2 conformance table", bad.is_empty(), detail)
}

async fn authorization_check() -> Verdict {
    let node = start_node("auth", 30_000).await;
    let checks = authorization(&addr(&node)).await;
    node.shutdown().await;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect();
    let swap = scenario_check("authorization", "bdm_hot_swap").await;
    let detail = if failed.is_empty() {
        format!("{} checks; {}", checks.len(), swap.detail)
    } else {
        format!("{}; {}", failed.join("; "), swap.detail)
    };
    verdict("authorization", failed.is_empty() && swap.ok, detail)
}

fn main() {
    init_log();
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .unwrap();
    let verdicts = rt.block_on(async {
        vec![
            codec_roundtrip(),
            golden(),
            crc(),
            version_gate().await,
            scenario_check("two_node_direct", "two_node_direct").await,
            scenario_check("three_node_relay", "three_node_relay").await,
            scenario_check("store_and_forward", "store_and_forward").await,
            scenario_check("fragmentation", "fragmentation").await,
            scenario_check("bibe_tunnel", "bibe_tunnel").await,
            scenario_check("FIB cache", "fib_cache").await,
            conformance().await,
            authorization_check().await,
        ]
    });
    println!();
    for v in &verdicts {
        println!("{} {:<24} {}", if v.ok { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
    let failed = verdicts.iter().filter(|v| !v.ok).count();
    println!("\nacceptance: {} passed, {failed} failed\n", verdicts.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
