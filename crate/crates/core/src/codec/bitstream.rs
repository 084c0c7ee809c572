//! Self-describing container around a range-coded payload.
//!
//! Layout, little-endian: magic `FNBS`, version `u16`, symbol count `u64`,
//! channel count `u32`, payload length `u64`, payload. Symbol `i` is coded
//! with the table of channel `i % channels`.

use super::range_coder::{RangeDecoder, RangeEncoder};
use crate::entropy::CdfTable;
use crate::error::{Error, Result};

pub const BITSTREAM_MAGIC: [u8; 4] = *b"FNBS";
pub const BITSTREAM_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 8 + 4 + 8;
const RAW_PRECISION: u32 = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    pub bytes: Vec<u8>,
    pub symbol_count: u64,
    pub channels: u32,
}

impl Bitstream {
    /// Coded payload size in bits; the container header is not counted.
    pub fn payload_bits(&self) -> u64 {
        self.bytes.len() as u64 * 8
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.bytes.len());
        out.extend_from_slice(&BITSTREAM_MAGIC);
        out.extend_from_slice(&BITSTREAM_VERSION.to_le_bytes());
        out.extend_from_slice(&self.symbol_count.to_le_bytes());
        out.extend_from_slice(&self.channels.to_le_bytes());
        out.extend_from_slice(&(self.bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.bytes);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < HEADER_LEN {
            return Err(Error::Decode(format!(
                "truncated header: {} of {HEADER_LEN} bytes",
                buf.len()
            )));
        }
        if buf[..4] != BITSTREAM_MAGIC {
            return Err(Error::Decode("bad magic, not a bitstream".into()));
        }
        let version = u16::from_le_bytes([buf[4], buf[5]]);
        if version != BITSTREAM_VERSION {
            return Err(Error::Decode(format!(
                "unsupported bitstream version {version}, expected {BITSTREAM_VERSION}"
            )));
        }
        let symbol_count = u64::from_le_bytes(buf[6..14].try_into().expect("8 bytes"));
        let channels = u32::from_le_bytes(buf[14..18].try_into().expect("4 bytes"));
        let len = u64::from_le_bytes(buf[18..26].try_into().expect("8 bytes"));
        let body = &buf[HEADER_LEN..];
        if body.len() as u64 != len {
            return Err(Error::Decode(format!(
                "payload length {} does not match header value {len}",
                body.len()
            )));
        }
        Ok(Bitstream {
            bytes: body.to_vec(),
            symbol_count,
            channels,
        })
    }
}

fn check_layout(tables: &CdfTable, channels: usize) -> Result<()> {
    if channels == 0 || tables.channels.len() != channels {
        return Err(Error::Shape(format!(
            "stream has {channels} channels, table has {}",
            tables.channels.len()
        )));
    }
    Ok(())
}

/// Range-codes `symbols` with the per-channel tables. Values outside a
/// channel's support go through the escape slot followed by their raw
/// 32-bit two's-complement pattern.
pub fn encode(symbols: &[i32], tables: &CdfTable) -> Result<Bitstream> {
    tables.validate()?;
    let channels = tables.channels.len();
    check_layout(tables, channels)?;
    let p = tables.precision;
    let mut enc = RangeEncoder::new();
    for (i, &s) in symbols.iter().enumerate() {
        let ch = &tables.channels[i % channels];
        let slot = ch.slot_of(s);
        enc.encode(ch.start(slot), ch.freq(slot), p);
        if slot == ch.escape_index() {
            let raw = s as u32;
            enc.encode(raw >> 16, 1, RAW_PRECISION);
            enc.encode(raw & 0xFFFF, 1, RAW_PRECISION);
        }
    }
    Ok(Bitstream {
        bytes: enc.finish(),
        symbol_count: symbols.len() as u64,
        channels: channels as u32,
    })
}

pub fn decode(stream: &Bitstream, tables: &CdfTable) -> Result<Vec<i32>> {
    tables.validate()?;
    check_layout(tables, stream.channels as usize)?;
    let channels = tables.channels.len();
    let p = tables.precision;
    // the header count is untrusted, so cap the up-front allocation
    let mut out = Vec::with_capacity(stream.symbol_count.min(1 << 24) as usize);
    let mut dec = RangeDecoder::new(&stream.bytes);
    for i in 0..stream.symbol_count {
        let ch = &tables.channels[i as usize % channels];
        let slot = ch.lookup(dec.target(p)?);
        dec.consume(ch.start(slot), ch.freq(slot), p);
        let value = if slot == ch.escape_index() {
            let hi = dec.target(RAW_PRECISION)?;
            dec.consume(hi, 1, RAW_PRECISION);
            let lo = dec.target(RAW_PRECISION)?;
            dec.consume(lo, 1, RAW_PRECISION);
            let v = ((hi << 16) | lo) as i32;
            if ch.slot_of(v) != ch.escape_index() {
                return Err(Error::Decode(format!(
                    "corrupt stream: escaped value {v} at symbol {i} lies inside the support"
                )));
            }
            v
        } else {
            ch.y_min + slot as i32
        };
        out.push(value);
    }
    Ok(out)
}
