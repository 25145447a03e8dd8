//! Integer frequency tables shared bit-exactly by encoder and decoder.
//!
//! A table covers a contiguous support `lo..=hi` inside the alphabet
//! `[-ALPHABET_LIMIT, ALPHABET_LIMIT]`, plus one escape bin on each side
//! that carries the remaining tail mass. Escaped values are sent as the
//! escape symbol followed by a uniform index into the rest of the alphabet.

use super::range_coder::{RangeDecoder, RangeEncoder};
use super::{ALPHABET_LIMIT, PRECISION_BITS};
use crate::{Error, Result};

const TOTAL: u32 = 1 << PRECISION_BITS;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedCdf {
    lo: i32,
    hi: i32,
    /// Cumulative frequencies of `[escape_low, lo..=hi, escape_high]`;
    /// `len = bins + 1`, first 0, last `2^PRECISION_BITS`.
    cum: Vec<u32>,
}

impl QuantizedCdf {
    /// Quantize probabilities with the largest-remainder method. Every bin
    /// gets at least one count so any in-alphabet value stays codable.
    pub fn from_masses(lo: i32, pmf: &[f64], tail_low: f64, tail_high: f64) -> Self {
        let hi = lo + pmf.len() as i32 - 1;
        assert!(lo >= -ALPHABET_LIMIT && hi <= ALPHABET_LIMIT && lo <= hi);
        let mut masses = Vec::with_capacity(pmf.len() + 2);
        masses.push(tail_low.max(0.0));
        masses.extend(pmf.iter().map(|p| p.max(0.0)));
        masses.push(tail_high.max(0.0));
        let bins = masses.len() as u32;
        let spare = TOTAL - bins;
        let total_mass: f64 = masses.iter().sum();
        let mut freqs = Vec::with_capacity(masses.len());
        let mut remainders = Vec::with_capacity(masses.len());
        let mut assigned = 0u32;
        for (i, m) in masses.iter().enumerate() {
            let share = if total_mass > 0.0 {
                m / total_mass * spare as f64
            } else {
                spare as f64 / bins as f64
            };
            let whole = share.floor() as u32;
            assigned += whole;
            freqs.push(1 + whole);
            remainders.push((share - whole as f64, i));
        }
        // Largest remainders first; ties go to the lower index.
        remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let leftover = (spare - assigned) as usize;
        for &(_, i) in remainders.iter().take(leftover) {
            freqs[i] += 1;
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        cum.push(0);
        let mut acc = 0;
        for f in freqs {
            acc += f;
            cum.push(acc);
        }
        debug_assert_eq!(acc, TOTAL);
        Self { lo, hi, cum }
    }

    pub fn support(&self) -> (i32, i32) {
        (self.lo, self.hi)
    }

    fn bin_of(&self, value: i32) -> usize {
        if value < self.lo {
            0
        } else if value > self.hi {
            self.cum.len() - 2
        } else {
            (value - self.lo) as usize + 1
        }
    }

    /// Coded cost in bits of `value` under this table, escape payload included.
    pub fn cost_bits(&self, value: i32) -> f64 {
        let b = self.bin_of(value);
        let f = self.cum[b + 1] - self.cum[b];
        let mut bits = f64::from(PRECISION_BITS) - f64::from(f).log2();
        if value < self.lo {
            bits += f64::from((self.lo + ALPHABET_LIMIT) as u32).log2();
        } else if value > self.hi {
            bits += f64::from((ALPHABET_LIMIT - self.hi) as u32).log2();
        }
        bits
    }

    pub fn encode(&self, enc: &mut RangeEncoder, value: i32) -> Result<()> {
        if value.abs() > ALPHABET_LIMIT {
            return Err(Error::SymbolOutOfAlphabet {
                value: i64::from(value),
                limit: i64::from(ALPHABET_LIMIT),
            });
        }
        let b = self.bin_of(value);
        enc.encode(self.cum[b], self.cum[b + 1] - self.cum[b], PRECISION_BITS);
        if value < self.lo {
            enc.encode_uniform((value + ALPHABET_LIMIT) as u32, (self.lo + ALPHABET_LIMIT) as u32);
        } else if value > self.hi {
            enc.encode_uniform((value - self.hi - 1) as u32, (ALPHABET_LIMIT - self.hi) as u32);
        }
        Ok(())
    }

    pub fn decode(&self, dec: &mut RangeDecoder<'_>) -> Result<i32> {
        let target = dec.peek(PRECISION_BITS)?;
        // Last bin whose start is <= target.
        let b = self.cum.partition_point(|&c| c <= target) - 1;
        dec.consume(self.cum[b], self.cum[b + 1] - self.cum[b], PRECISION_BITS);
        let escape_high = self.cum.len() - 2;
        if b == 0 {
            let n = (self.lo + ALPHABET_LIMIT) as u32;
            if n == 0 {
                return Err(Error::CorruptStream("escape below a full-alphabet table".into()));
            }
            Ok(dec.decode_uniform(n)? as i32 - ALPHABET_LIMIT)
        } else if b == escape_high {
            let n = (ALPHABET_LIMIT - self.hi) as u32;
            if n == 0 {
                return Err(Error::CorruptStream("escape above a full-alphabet table".into()));
            }
            Ok(self.hi + 1 + dec.decode_uniform(n)? as i32)
        } else {
            Ok(self.lo + b as i32 - 1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequencies_sum_to_total_with_floor() {
        let t = QuantizedCdf::from_masses(-3, &[0.0, 0.1, 0.8, 0.1, 0.0, 0.0, 0.0], 0.0, 0.0);
        assert_eq!(*t.cum.last().unwrap(), TOTAL);
        assert!(t.cum.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn largest_remainder_is_deterministic() {
        let pmf: Vec<f64> = (0..11).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let a = QuantizedCdf::from_masses(-5, &pmf, 1e-3, 1e-4);
        let b = QuantizedCdf::from_masses(-5, &pmf, 1e-3, 1e-4);
        assert_eq!(a, b);
    }

    #[test]
    fn escapes_round_trip() {
        let t = QuantizedCdf::from_masses(-2, &[0.2, 0.2, 0.2, 0.2, 0.2], 1e-6, 1e-6);
        let values = [-255, -3, -2, 0, 2, 3, 100, 255];
        let mut enc = RangeEncoder::new();
        for &v in &values {
            t.encode(&mut enc, v).unwrap();
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &v in &values {
            assert_eq!(t.decode(&mut dec).unwrap(), v);
        }
    }

    #[test]
    fn out_of_alphabet_is_an_error() {
        let t = QuantizedCdf::from_masses(0, &[1.0], 0.0, 0.0);
        let mut enc = RangeEncoder::new();
        assert!(matches!(
            t.encode(&mut enc, 256),
            Err(Error::SymbolOutOfAlphabet { value: 256, .. })
        ));
    }
}
