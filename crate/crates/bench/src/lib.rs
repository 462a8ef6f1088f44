//! Fixtures shared by the benchmarks.

use bmux_core::{Bundle, CreationTimestamp, CrcType, EndpointId};

pub fn payload(len: usize) -> Vec<u8> {
    (0..len).map(|i| (i * 31 % 256) as u8).collect()
}

pub fn bundle(payload_len: usize, crc: CrcType) -> Bundle {
    Bundle::new(
        "dtn://src.dtn/bench".parse::<EndpointId>().unwrap(),
        "dtn://dst.dtn/bench".parse::<EndpointId>().unwrap(),
        CreationTimestamp::new(725_846_400_000, 7),
        3_600_000,
        payload(payload_len),
        crc,
    )
}
