//! Byte-oriented range coder with carry propagation (LZMA style) over
//! 32-bit ranges and fixed-total frequency tables.

use crate::{Error, Result};

const TOP: u32 = 1 << 24;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    /// Encode the interval `[start, start + freq)` of a table summing to
    /// `2^total_bits`.
    pub fn encode(&mut self, start: u32, freq: u32, total_bits: u32) {
        debug_assert!(freq > 0);
        debug_assert!(start + freq <= 1 << total_bits);
        let r = self.range >> total_bits;
        self.low += u64::from(r) * u64::from(start);
        self.range = r * freq;
        self.normalize();
    }

    /// Encode `value` uniformly over `0..n` (`n <= 2^16`).
    pub fn encode_uniform(&mut self, value: u32, n: u32) {
        debug_assert!(value < n && n <= 1 << 16);
        let r = self.range / n;
        self.low += u64::from(r) * u64::from(value);
        self.range = r;
        self.normalize();
    }

    fn normalize(&mut self) {
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.out.push(temp.wrapping_add(carry));
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        // The first emitted byte is the initial empty cache and always zero.
        debug_assert_eq!(self.out[0], 0);
        self.out.remove(0);
        self.out
    }
}

pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    input: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Result<Self> {
        if input.len() < 4 {
            return Err(Error::CorruptStream("range-coded stream shorter than 4 bytes".into()));
        }
        let code = u32::from_be_bytes([input[0], input[1], input[2], input[3]]);
        Ok(Self {
            code,
            range: u32::MAX,
            input,
            pos: 4,
        })
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.input.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    /// Bytes consumed so far, including any implicit zero padding.
    pub fn position(&self) -> usize {
        self.pos
    }

    /// Cumulative-frequency target of the next symbol; must be followed by
    /// [`Self::consume`] with the interval that contains it.
    pub fn peek(&mut self, total_bits: u32) -> Result<u32> {
        let r = self.range >> total_bits;
        let v = self.code / r;
        if v >= 1 << total_bits {
            return Err(Error::CorruptStream("range decoder target out of bounds".into()));
        }
        Ok(v)
    }

    pub fn consume(&mut self, start: u32, freq: u32, total_bits: u32) {
        let r = self.range >> total_bits;
        self.code -= r * start;
        self.range = r * freq;
        self.normalize();
    }

    pub fn decode_uniform(&mut self, n: u32) -> Result<u32> {
        let r = self.range / n;
        let v = self.code / r;
        if v >= n {
            return Err(Error::CorruptStream("uniform symbol out of bounds".into()));
        }
        self.code -= r * v;
        self.range = r;
        self.normalize();
        Ok(v)
    }

    fn normalize(&mut self) {
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | u32::from(self.next_byte());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_skewed_table() {
        // Four-symbol table summing to 2^16.
        let freqs = [60000u32, 4000, 1500, 36];
        let cum: Vec<u32> = std::iter::once(0)
            .chain(freqs.iter().scan(0, |s, f| {
                *s += f;
                Some(*s)
            }))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let symbols: Vec<usize> = (0..20000)
            .map(|_| {
                let v = rng.gen_range(0..65536u32);
                cum.iter().rposition(|&c| c <= v).unwrap().min(3)
            })
            .collect();
        let mut enc = RangeEncoder::new();
        for (i, &s) in symbols.iter().enumerate() {
            enc.encode(cum[s], freqs[s], 16);
            if i % 7 == 0 {
                enc.encode_uniform((i % 300) as u32, 300);
            }
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for (i, &s) in symbols.iter().enumerate() {
            let v = dec.peek(16).unwrap();
            let got = cum.iter().rposition(|&c| c <= v).unwrap();
            assert_eq!(got, s);
            dec.consume(cum[got], freqs[got], 16);
            if i % 7 == 0 {
                assert_eq!(dec.decode_uniform(300).unwrap(), (i % 300) as u32);
            }
        }
    }

    #[test]
    fn empty_stream_has_four_bytes() {
        assert_eq!(RangeEncoder::new().finish().len(), 4);
    }
}
