//! Carry-propagating range coder with a 48-bit window.
//!
//! The low end of the interval is kept in the bottom 48 bits of a `u64`
//! with one carry bit above. Bytes leave from bits 40..48 whenever the range
//! drops below 2^40, so even at 24-bit table precision the per-symbol
//! truncation of `range >> precision` costs under 2^-16 relative.

use crate::error::{Error, Result};

const WINDOW_BITS: u32 = 48;
const TOP: u64 = 1 << WINDOW_BITS;
const BOTTOM: u64 = 1 << (WINDOW_BITS - 8);
const SHIFT: u32 = WINDOW_BITS - 8;

pub struct RangeEncoder {
    low: u64,
    range: u64,
    cache: u8,
    pending: u64,
    started: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: TOP - 1,
            cache: 0,
            pending: 1,
            started: false,
            out: Vec::new(),
        }
    }

    /// Narrows the interval to `[start, start + freq)` out of `2^precision`.
    pub fn encode(&mut self, start: u32, freq: u32, precision: u32) {
        debug_assert!(freq > 0 && (start as u64 + freq as u64) <= 1 << precision);
        let r = self.range >> precision;
        self.low += r * start as u64;
        self.range = r * freq as u64;
        while self.range < BOTTOM {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn emit(&mut self, byte: u8) {
        // the very first byte stands for the bits above the initial interval
        // and is always zero
        if self.started {
            self.out.push(byte);
        } else {
            debug_assert_eq!(byte, 0);
            self.started = true;
        }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF << SHIFT || self.low >= TOP {
            let carry = (self.low >> WINDOW_BITS) as u8;
            let mut b = self.cache;
            loop {
                self.emit(b.wrapping_add(carry));
                b = 0xFF;
                self.pending -= 1;
                if self.pending == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> SHIFT) & 0xFF) as u8;
        }
        self.pending += 1;
        self.low = (self.low & (BOTTOM - 1)) << 8;
    }

    /// Picks the value in the final interval with the most trailing zero
    /// bits, writes it out and drops trailing zero bytes; the decoder reads
    /// zeros past the end.
    pub fn finish(mut self) -> Vec<u8> {
        let end = self.low + self.range;
        for k in (0..=WINDOW_BITS).rev() {
            let mask = (1u64 << k) - 1;
            let v = (self.low + mask) & !mask;
            if v < end {
                self.low = v;
                break;
            }
        }
        for _ in 0..=WINDOW_BITS / 8 {
            self.shift_low();
        }
        while self.out.last() == Some(&0) {
            self.out.pop();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    code: u64,
    range: u64,
    input: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        let mut d = RangeDecoder {
            code: 0,
            range: TOP - 1,
            input,
            pos: 0,
        };
        for _ in 0..WINDOW_BITS / 8 {
            d.code = (d.code << 8) | d.next_byte() as u64;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.input.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    /// Target count in `[0, 2^precision)` for the next symbol. Must be
    /// followed by [`RangeDecoder::consume`] with the matching interval.
    pub fn target(&mut self, precision: u32) -> Result<u32> {
        let r = self.range >> precision;
        let v = self.code / r;
        if v >= 1 << precision {
            return Err(Error::Decode("corrupt stream: code outside the coding interval".into()));
        }
        Ok(v as u32)
    }

    pub fn consume(&mut self, start: u32, freq: u32, precision: u32) {
        let r = self.range >> precision;
        self.code -= r * start as u64;
        self.range = r * freq as u64;
        while self.range < BOTTOM {
            self.code = (self.code << 8) | self.next_byte() as u64;
            self.range <<= 8;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_message_is_empty() {
        assert!(RangeEncoder::new().finish().is_empty());
    }

    #[test]
    fn carries_propagate_through_ff_runs() {
        // symbols near the top of the interval force long 0xFF runs
        let mut enc = RangeEncoder::new();
        let syms: Vec<(u32, u32)> = (0..5000)
            .map(|i| if i % 7 == 0 { (0, 1) } else { (65534, 2) })
            .collect();
        for &(s, f) in &syms {
            enc.encode(s, f, 16);
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes);
        for &(s, f) in &syms {
            let t = dec.target(16).unwrap();
            assert!(t >= s && t < s + f);
            dec.consume(s, f, 16);
        }
    }
}
