//! Helpers shared by the integration tests: independent encoders used as
//! oracles, a random bundle generator and single-node fixtures.
#![allow(dead_code)]

pub mod conformance;
pub mod vectors;

use std::path::PathBuf;
use std::sync::Arc;

use bmux_core::bundle::{BlockFlags, BpVersion, CanonicalBlock, FragmentInfo, ProcFlags};
use bmux_core::harness::Scenario;
use bmux_core::{Bundle, Config, CreationTimestamp, CrcType, EndpointId, Node, SystemClock};
use ciborium::value::Value;
use rand::Rng;

pub const ADMIN: &str = "hunter2";

pub fn init_log() {
    let _ = env_logger::builder().is_test(true).try_init();
}

pub fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"));
    Scenario::load(&path).unwrap()
}

/// A node with an ephemeral agent port, one MTCP CLA and an admin secret.
pub async fn start_node(name: &str, keepalive_ms: u64) -> Node {
    let cfg = Config::from_json(&format!(
        r#"{{
            "node_id": "dtn://{name}.dtn/",
            "admin_secret": "{ADMIN}",
            "aap2": {{"tcp": "127.0.0.1:0", "keepalive_timeout_ms": {keepalive_ms}}},
            "clas": [{{"type": "mtcp", "listen": "127.0.0.1:0"}}],
            "bdm_timeout_ms": 30000
        }}"#
    ))
    .unwrap();
    Node::start(&cfg, Arc::new(SystemClock)).await.unwrap()
}

pub fn addr(node: &Node) -> String {
    node.aap2_addr().unwrap().to_string()
}

// ---- testdata ----

pub fn testdata(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("testdata").join(rel)
}

/// Reads a hex file; `#` starts a comment, whitespace is ignored.
pub fn read_hex(rel: &str) -> Vec<u8> {
    let text = std::fs::read_to_string(testdata(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"));
    let digits: String = text
        .lines()
        .map(|l| l.split('#').next().unwrap())
        .flat_map(|l| l.chars().filter(|c| !c.is_whitespace()))
        .collect();
    hex::decode(digits).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

pub fn write_hex(rel: &str, comment: &str, bytes: &[u8]) {
    let mut text = format!("# {comment}\n");
    for chunk in bytes.chunks(32) {
        text.push_str(&hex::encode(chunk));
        text.push('\n');
    }
    std::fs::write(testdata(rel), text).unwrap();
}

// ---- oracles ----

/// Bitwise reflected CRC, no tables.
pub fn crc_bitwise(data: &[u8], width: u32, poly_reflected: u32) -> u32 {
    let mask = if width == 32 { u32::MAX } else { (1u32 << width) - 1 };
    let mut crc = mask;
    for &byte in data {
        crc ^= byte as u32;
        for _ in 0..8 {
            crc = if crc & 1 == 1 { (crc >> 1) ^ poly_reflected } else { crc >> 1 };
        }
    }
    (crc ^ mask) & mask
}

pub fn oracle_crc16(data: &[u8]) -> u16 {
    crc_bitwise(data, 16, 0x8408) as u16
}

pub fn oracle_crc32c(data: &[u8]) -> u32 {
    crc_bitwise(data, 32, 0x82F6_3B78)
}

fn cbor(v: &Value) -> Vec<u8> {
    let mut out = Vec::new();
    ciborium::ser::into_writer(v, &mut out).unwrap();
    out
}

fn int(n: u64) -> Value {
    Value::Integer(n.into())
}

fn eid_value(e: &EndpointId) -> Value {
    match e {
        EndpointId::DtnNone => Value::Array(vec![int(1), int(0)]),
        EndpointId::Dtn { node, demux } => Value::Array(vec![int(1), Value::Text(format!("//{node}/{demux}"))]),
        EndpointId::Ipn { node, service } => Value::Array(vec![int(2), Value::Array(vec![int(*node), int(*service)])]),
    }
}

/// Encodes a block array, appending and filling the CRC field if requested.
fn block_with_crc(mut fields: Vec<Value>, crc: CrcType) -> Vec<u8> {
    let width = match crc {
        CrcType::None => return cbor(&Value::Array(fields)),
        CrcType::Crc16X25 => 2,
        CrcType::Crc32C => 4,
    };
    fields.push(Value::Bytes(vec![0; width]));
    let mut bytes = cbor(&Value::Array(fields));
    let value = match crc {
        CrcType::Crc16X25 => oracle_crc16(&bytes).to_be_bytes().to_vec(),
        _ => oracle_crc32c(&bytes).to_be_bytes().to_vec(),
    };
    let n = bytes.len();
    bytes[n - width..].copy_from_slice(&value);
    bytes
}

fn crc_code(c: CrcType) -> u64 {
    match c {
        CrcType::None => 0,
        CrcType::Crc16X25 => 1,
        CrcType::Crc32C => 2,
    }
}

/// Serializes a bundle with ciborium, independently of the crate's encoder.
pub fn oracle_encode(b: &Bundle) -> Vec<u8> {
    let mut primary = vec![
        int(7),
        int(b.proc_flags.0),
        int(crc_code(b.crc_type)),
        eid_value(&b.destination),
        eid_value(&b.source),
        eid_value(&b.report_to),
        Value::Array(vec![int(b.creation.dtn_time_ms), int(b.creation.sequence_number)]),
        int(b.lifetime_ms),
    ];
    if let Some(f) = b.fragment {
        primary.push(int(f.offset));
        primary.push(int(f.total_adu_length));
    }
    let mut out = vec![0x9F];
    out.extend(block_with_crc(primary, b.crc_type));
    for blk in &b.blocks {
        out.extend(block_with_crc(
            vec![
                int(blk.block_type),
                int(blk.block_number),
                int(blk.flags.0),
                int(crc_code(blk.crc_type)),
                Value::Bytes(blk.data.clone()),
            ],
            blk.crc_type,
        ));
    }
    out.push(0xFF);
    out
}

/// The smallest valid bundle: null endpoints, zero times, empty payload.
pub fn minimal_bundle(crc: CrcType) -> Bundle {
    Bundle {
        version: BpVersion::V7,
        proc_flags: ProcFlags::default(),
        crc_type: crc,
        destination: EndpointId::DtnNone,
        source: EndpointId::DtnNone,
        report_to: EndpointId::DtnNone,
        creation: CreationTimestamp::new(0, 0),
        lifetime_ms: 0,
        fragment: None,
        blocks: vec![CanonicalBlock::payload(vec![], crc)],
    }
}

/// MTCP frame via ciborium: the bundle as one CBOR byte string.
pub fn oracle_mtcp(bytes: &[u8]) -> Vec<u8> {
    cbor(&Value::Bytes(bytes.to_vec()))
}

/// AAP2 frame via ciborium: 4-octet length, then [tag, {}].
pub fn oracle_keepalive() -> Vec<u8> {
    let body = cbor(&Value::Array(vec![int(6), Value::Map(vec![])]));
    let mut out = (body.len() as u32).to_be_bytes().to_vec();
    out.extend(body);
    out
}

pub fn counting(n: usize) -> Vec<u8> {
    (0..n).map(|i| (i % 251) as u8).collect()
}

// ---- random bundles ----

fn rand_crc(rng: &mut impl Rng) -> CrcType {
    [CrcType::None, CrcType::Crc16X25, CrcType::Crc32C][rng.gen_range(0..3)]
}

fn rand_name(rng: &mut impl Rng, first: &[u8], rest: &[u8], len: usize) -> String {
    (0..len)
        .map(|i| {
            let set = if i == 0 { first } else { rest };
            set[rng.gen_range(0..set.len())] as char
        })
        .collect()
}

pub fn random_eid(rng: &mut impl Rng) -> EndpointId {
    match rng.gen_range(0..3) {
        0 => EndpointId::DtnNone,
        1 => {
            let n = rng.gen_range(1..14);
            let d = rng.gen_range(0..17);
            EndpointId::Dtn {
                node: rand_name(rng, b"abcdefghijklmnopqrstuvwxyz", b"abcdefghijklmnopqrstuvwxyz0123456789.-", n),
                demux: rand_name(rng, b"abcXYZ019_/.-", b"abcXYZ019_/.-", d),
            }
        }
        _ => EndpointId::Ipn {
            node: rng.gen(),
            service: rng.gen(),
        },
    }
}

fn uint_cbor(n: u64) -> Vec<u8> {
    cbor(&int(n))
}

/// A structurally valid V7 bundle with random fields, extension blocks and
/// possibly fragment fields.
pub fn random_bundle(rng: &mut impl Rng, max_payload: usize) -> Bundle {
    let mut blocks = Vec::new();
    let mut number = 2;
    for ty in [6u64, 7, 10] {
        if rng.gen_bool(0.4) {
            let data = match ty {
                6 => cbor(&eid_value(&random_eid(rng))),
                7 => uint_cbor(rng.gen::<u32>() as u64),
                _ => cbor(&Value::Array(vec![int(rng.gen_range(1..256)), int(rng.gen_range(0..10))])),
            };
            blocks.push(CanonicalBlock {
                block_type: ty,
                block_number: number,
                flags: BlockFlags(rng.gen_range(0..32)),
                crc_type: rand_crc(rng),
                data,
            });
            number += 1;
        }
    }
    for _ in 0..rng.gen_range(0..3) {
        let len = rng.gen_range(0..32);
        blocks.push(CanonicalBlock {
            block_type: rng.gen_range(11..200),
            block_number: number,
            flags: BlockFlags(rng.gen_range(0..32)),
            crc_type: rand_crc(rng),
            data: (0..len).map(|_| rng.gen()).collect(),
        });
        number += 1;
    }
    let plen = rng.gen_range(0..=max_payload);
    let payload: Vec<u8> = (0..plen).map(|_| rng.gen()).collect();
    blocks.push(CanonicalBlock::payload(payload, rand_crc(rng)));

    let mut proc_flags = ProcFlags(rng.gen::<u64>() & !ProcFlags::IS_FRAGMENT.0);
    let fragment = rng.gen_bool(0.2).then(|| {
        proc_flags.set(ProcFlags::IS_FRAGMENT, true);
        let offset = rng.gen::<u32>() as u64;
        FragmentInfo {
            offset,
            total_adu_length: offset + plen as u64 + rng.gen::<u16>() as u64,
        }
    });
    Bundle {
        version: BpVersion::V7,
        proc_flags,
        crc_type: rand_crc(rng),
        destination: random_eid(rng),
        source: random_eid(rng),
        report_to: random_eid(rng),
        creation: CreationTimestamp::new(rng.gen(), rng.gen()),
        lifetime_ms: rng.gen(),
        fragment,
        blocks,
    }
}
