//! Minimal CBOR reader/writer covering what bundles and the control
//! protocol need: unsigned integers, byte and text strings, arrays, maps,
//! booleans and the indefinite-length break. No floats, no tags.

use thiserror::Error;

pub const MAJOR_UINT: u8 = 0;
pub const MAJOR_BYTES: u8 = 2;
pub const MAJOR_TEXT: u8 = 3;
pub const MAJOR_ARRAY: u8 = 4;
pub const MAJOR_MAP: u8 = 5;
pub const MAJOR_SIMPLE: u8 = 7;

pub const BREAK: u8 = 0xFF;
pub const INDEFINITE_ARRAY: u8 = 0x9F;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CborError {
    #[error("input truncated")]
    Truncated,
    #[error("unexpected CBOR item at offset {offset}: {what}")]
    Unexpected { offset: usize, what: &'static str },
    #[error("invalid UTF-8 in text string at offset {0}")]
    InvalidUtf8(usize),
    #[error("nesting too deep")]
    TooDeep,
}

/// Appends CBOR items to a byte buffer using minimal-length heads.
#[derive(Debug, Default, Clone)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(cap: usize) -> Self {
        Encoder {
            buf: Vec::with_capacity(cap),
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.buf
    }

    pub fn head(&mut self, major: u8, value: u64) -> &mut Self {
        write_head(&mut self.buf, major, value);
        self
    }

    pub fn uint(&mut self, value: u64) -> &mut Self {
        self.head(MAJOR_UINT, value)
    }

    pub fn bytes(&mut self, data: &[u8]) -> &mut Self {
        self.head(MAJOR_BYTES, data.len() as u64);
        self.buf.extend_from_slice(data);
        self
    }

    pub fn text(&mut self, s: &str) -> &mut Self {
        self.head(MAJOR_TEXT, s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
        self
    }

    pub fn array(&mut self, len: usize) -> &mut Self {
        self.head(MAJOR_ARRAY, len as u64)
    }

    pub fn map(&mut self, len: usize) -> &mut Self {
        self.head(MAJOR_MAP, len as u64)
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.buf.push(if v { 0xF5 } else { 0xF4 });
        self
    }

    pub fn indefinite_array(&mut self) -> &mut Self {
        self.buf.push(INDEFINITE_ARRAY);
        self
    }

    pub fn brk(&mut self) -> &mut Self {
        self.buf.push(BREAK);
        self
    }

    /// Splices already-encoded CBOR.
    pub fn raw(&mut self, data: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(data);
        self
    }
}

pub fn write_head(buf: &mut Vec<u8>, major: u8, value: u64) {
    let mt = major << 5;
    if value < 24 {
        buf.push(mt | value as u8);
    } else if value <= u8::MAX as u64 {
        buf.push(mt | 24);
        buf.push(value as u8);
    } else if value <= u16::MAX as u64 {
        buf.push(mt | 25);
        buf.extend_from_slice(&(value as u16).to_be_bytes());
    } else if value <= u32::MAX as u64 {
        buf.push(mt | 26);
        buf.extend_from_slice(&(value as u32).to_be_bytes());
    } else {
        buf.push(mt | 27);
        buf.extend_from_slice(&value.to_be_bytes());
    }
}

/// Encoded length of a head carrying `value`.
pub fn head_len(value: u64) -> usize {
    match value {
        0..=23 => 1,
        24..=0xFF => 2,
        0x100..=0xFFFF => 3,
        0x1_0000..=0xFFFF_FFFF => 5,
        _ => 9,
    }
}

/// A decoded item head. `value` is `None` for indefinite-length items.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Head {
    pub major: u8,
    pub value: Option<u64>,
    pub offset: usize,
}

/// Iterates a map with unsigned keys; `f` returns false for keys it does
/// not know, whose values are then skipped.
pub fn read_map<'a, E: From<CborError>>(
    d: &mut Decoder<'a>,
    mut f: impl FnMut(u64, &mut Decoder<'a>) -> Result<bool, E>,
) -> Result<(), E> {
    match d.map()? {
        Some(n) => {
            for _ in 0..n {
                let k = d.uint()?;
                if !f(k, d)? {
                    d.skip()?;
                }
            }
        }
        None => {
            while !d.at_break()? {
                let k = d.uint()?;
                if !f(k, d)? {
                    d.skip()?;
                }
            }
        }
    }
    Ok(())
}

/// Cursor-style decoder over a borrowed slice.
#[derive(Debug, Clone)]
pub struct Decoder<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Decoder { data, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> &'a [u8] {
        &self.data[self.pos..]
    }

    pub fn is_at_end(&self) -> bool {
        self.pos >= self.data.len()
    }

    pub fn data(&self) -> &'a [u8] {
        self.data
    }

    pub fn peek_byte(&self) -> Result<u8, CborError> {
        self.data.get(self.pos).copied().ok_or(CborError::Truncated)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CborError> {
        let end = self.pos.checked_add(n).ok_or(CborError::Truncated)?;
        if end > self.data.len() {
            return Err(CborError::Truncated);
        }
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn unexpected(&self, offset: usize, what: &'static str) -> CborError {
        CborError::Unexpected { offset, what }
    }

    pub fn head(&mut self) -> Result<Head, CborError> {
        let offset = self.pos;
        let initial = self.take(1)?[0];
        let major = initial >> 5;
        let info = initial & 0x1F;
        let value = match info {
            0..=23 => Some(info as u64),
            24 => Some(self.take(1)?[0] as u64),
            25 => Some(u16::from_be_bytes(self.take(2)?.try_into().unwrap()) as u64),
            26 => Some(u32::from_be_bytes(self.take(4)?.try_into().unwrap()) as u64),
            27 => Some(u64::from_be_bytes(self.take(8)?.try_into().unwrap())),
            31 if matches!(major, MAJOR_BYTES | MAJOR_TEXT | MAJOR_ARRAY | MAJOR_MAP) => None,
            31 if major == MAJOR_SIMPLE => None,
            _ => return Err(self.unexpected(offset, "reserved additional information")),
        };
        Ok(Head {
            major,
            value,
            offset,
        })
    }

    pub fn uint(&mut self) -> Result<u64, CborError> {
        let h = self.head()?;
        match (h.major, h.value) {
            (MAJOR_UINT, Some(v)) => Ok(v),
            _ => Err(self.unexpected(h.offset, "expected unsigned integer")),
        }
    }

    pub fn bool(&mut self) -> Result<bool, CborError> {
        let offset = self.pos;
        match self.take(1)?[0] {
            0xF4 => Ok(false),
            0xF5 => Ok(true),
            _ => Err(self.unexpected(offset, "expected boolean")),
        }
    }

    /// Definite-length byte string, borrowed.
    pub fn bytes(&mut self) -> Result<&'a [u8], CborError> {
        let h = self.head()?;
        match (h.major, h.value) {
            (MAJOR_BYTES, Some(len)) => self.take(usize::try_from(len).map_err(|_| CborError::Truncated)?),
            (MAJOR_BYTES, None) => Err(self.unexpected(h.offset, "indefinite byte string")),
            _ => Err(self.unexpected(h.offset, "expected byte string")),
        }
    }

    pub fn text(&mut self) -> Result<&'a str, CborError> {
        let h = self.head()?;
        match (h.major, h.value) {
            (MAJOR_TEXT, Some(len)) => {
                let raw = self.take(usize::try_from(len).map_err(|_| CborError::Truncated)?)?;
                std::str::from_utf8(raw).map_err(|_| CborError::InvalidUtf8(h.offset))
            }
            _ => Err(self.unexpected(h.offset, "expected text string")),
        }
    }

    /// Array head; `None` length means indefinite.
    pub fn array(&mut self) -> Result<Option<u64>, CborError> {
        let h = self.head()?;
        if h.major != MAJOR_ARRAY {
            return Err(self.unexpected(h.offset, "expected array"));
        }
        Ok(h.value)
    }

    pub fn definite_array(&mut self) -> Result<u64, CborError> {
        let offset = self.pos;
        self.array()?
            .ok_or_else(|| self.unexpected(offset, "expected definite-length array"))
    }

    pub fn map(&mut self) -> Result<Option<u64>, CborError> {
        let h = self.head()?;
        if h.major != MAJOR_MAP {
            return Err(self.unexpected(h.offset, "expected map"));
        }
        Ok(h.value)
    }

    /// Consumes a break byte if one is next.
    pub fn at_break(&mut self) -> Result<bool, CborError> {
        if self.peek_byte()? == BREAK {
            self.pos += 1;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// Skips one complete item of any supported type.
    pub fn skip(&mut self) -> Result<(), CborError> {
        self.skip_depth(0)
    }

    fn skip_depth(&mut self, depth: usize) -> Result<(), CborError> {
        if depth > 32 {
            return Err(CborError::TooDeep);
        }
        let h = self.head()?;
        match (h.major, h.value) {
            (0 | 1, Some(_)) => Ok(()),
            (MAJOR_BYTES | MAJOR_TEXT, Some(len)) => {
                self.take(usize::try_from(len).map_err(|_| CborError::Truncated)?)?;
                Ok(())
            }
            (MAJOR_BYTES | MAJOR_TEXT, None) => {
                while !self.at_break()? {
                    self.skip_depth(depth + 1)?;
                }
                Ok(())
            }
            (MAJOR_ARRAY, Some(n)) => {
                for _ in 0..n {
                    self.skip_depth(depth + 1)?;
                }
                Ok(())
            }
            (MAJOR_MAP, Some(n)) => {
                for _ in 0..n.saturating_mul(2) {
                    self.skip_depth(depth + 1)?;
                }
                Ok(())
            }
            (MAJOR_ARRAY, None) => {
                while !self.at_break()? {
                    self.skip_depth(depth + 1)?;
                }
                Ok(())
            }
            (MAJOR_MAP, None) => {
                while !self.at_break()? {
                    self.skip_depth(depth + 1)?;
                    self.skip_depth(depth + 1)?;
                }
                Ok(())
            }
            (6, Some(_)) => self.skip_depth(depth + 1),
            (MAJOR_SIMPLE, Some(_)) => Ok(()),
            _ => Err(self.unexpected(h.offset, "unsupported item")),
        }
    }
}
