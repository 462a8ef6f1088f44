//! Golden byte strings: the oracle, the file and the crate's encoder must agree.

use bmux_core::aap2::frame;
use bmux_core::cla::mtcp::mtcp_frame;
use bmux_core::{encode_bundle, CrcType, Message};

use super::*;

pub struct Vector {
    pub file: &'static str,
    pub comment: &'static str,
    pub oracle: fn() -> Vec<u8>,
    pub ours: fn() -> Vec<u8>,
}

pub fn vectors() -> Vec<Vector> {
    vec![
        Vector {
            file: "bp7/minimal.hex",
            comment: "minimal bundle: dtn:none endpoints, zero times, empty payload, no CRC",
            oracle: || oracle_encode(&minimal_bundle(CrcType::None)),
            ours: || encode_bundle(&minimal_bundle(CrcType::None)).unwrap(),
        },
        Vector {
            file: "bp7/minimal_crc16.hex",
            comment: "minimal bundle with CRC-16/X.25 on both blocks",
            oracle: || oracle_encode(&minimal_bundle(CrcType::Crc16X25)),
            ours: || encode_bundle(&minimal_bundle(CrcType::Crc16X25)).unwrap(),
        },
        Vector {
            file: "bp7/minimal_crc32c.hex",
            comment: "minimal bundle with CRC-32C on both blocks",
            oracle: || oracle_encode(&minimal_bundle(CrcType::Crc32C)),
            ours: || encode_bundle(&minimal_bundle(CrcType::Crc32C)).unwrap(),
        },
        Vector {
            file: "mtcp/frame_20.hex",
            comment: "MTCP frame around 20 octets 00..13",
            oracle: || oracle_mtcp(&counting(20)),
            ours: || mtcp_frame(&counting(20)),
        },
        Vector {
            file: "mtcp/frame_300.hex",
            comment: "MTCP frame around 300 octets i mod 251",
            oracle: || oracle_mtcp(&counting(300)),
            ours: || mtcp_frame(&counting(300)),
        },
        Vector {
            file: "aap2/keepalive.hex",
            comment: "AAP2 Keepalive: length prefix, [6, {}]",
            oracle: oracle_keepalive,
            ours: || frame(&Message::Keepalive),
        },
    ]
}

/// Checks every vector; returns the mismatches.
pub fn check_vectors() -> Vec<String> {
    let bless = std::env::var_os("BMUX_BLESS").is_some();
    let mut bad = Vec::new();
    for v in vectors() {
        let oracle = (v.oracle)();
        if bless {
            write_hex(v.file, v.comment, &oracle);
        }
        let file = read_hex(v.file);
        let ours = (v.ours)();
        if file != oracle {
            bad.push(format!("{}: file differs from oracle", v.file));
        }
        if ours != file {
            bad.push(format!("{}: encoder gives {} want {}", v.file, hex::encode(&ours), hex::encode(&file)));
        }
    }
    bad
}

