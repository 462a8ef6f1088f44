//! Table-driven CRC-16/X.25 and CRC-32C as used by BPv7 blocks.

use serde::{Deserialize, Serialize};

/// Block CRC type as carried on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrcType {
    None = 0,
    #[default]
    Crc16X25 = 1,
    Crc32C = 2,
}

impl CrcType {
    pub fn from_code(code: u64) -> Option<Self> {
        match code {
            0 => Some(CrcType::None),
            1 => Some(CrcType::Crc16X25),
            2 => Some(CrcType::Crc32C),
            _ => None,
        }
    }

    pub fn code(self) -> u64 {
        self as u64
    }

    /// Length of the CRC value in octets.
    pub fn width(self) -> usize {
        match self {
            CrcType::None => 0,
            CrcType::Crc16X25 => 2,
            CrcType::Crc32C => 4,
        }
    }
}

/// The two CRC algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrcKind {
    Crc16X25,
    Crc32C,
}

const fn reflected_table_16(poly: u16) -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u16;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ poly } else { crc >> 1 };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

const fn reflected_table_32(poly: u32) -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u32;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ poly } else { crc >> 1 };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

// 0x1021 and 0x1EDC6F41 bit-reversed.
static X25_TABLE: [u16; 256] = reflected_table_16(0x8408);
static CRC32C_TABLE: [u32; 256] = reflected_table_32(0x82F6_3B78);

pub fn crc16_x25(data: &[u8]) -> u16 {
    let mut crc = 0xFFFFu16;
    for &b in data {
        crc = (crc >> 8) ^ X25_TABLE[((crc ^ b as u16) & 0xFF) as usize];
    }
    crc ^ 0xFFFF
}

pub fn crc32c(data: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in data {
        crc = (crc >> 8) ^ CRC32C_TABLE[((crc ^ b as u32) & 0xFF) as usize];
    }
    crc ^ 0xFFFF_FFFF
}

/// CRC value in network byte order (2 or 4 octets).
pub fn compute_crc(kind: CrcKind, data: &[u8]) -> Vec<u8> {
    match kind {
        CrcKind::Crc16X25 => crc16_x25(data).to_be_bytes().to_vec(),
        CrcKind::Crc32C => crc32c(data).to_be_bytes().to_vec(),
    }
}

pub(crate) fn crc_for(ty: CrcType, data: &[u8]) -> Vec<u8> {
    match ty {
        CrcType::None => Vec::new(),
        CrcType::Crc16X25 => compute_crc(CrcKind::Crc16X25, data),
        CrcType::Crc32C => compute_crc(CrcKind::Crc32C, data),
    }
}
