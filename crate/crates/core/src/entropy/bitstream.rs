//! Byte layout of a compressed image (all integers big-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "VCMB"
//!      4     1  format version
//!      5     4  original height
//!      9     4  original width
//!     13     4  padded height
//!     17     4  padded width
//!     21     4  network config id
//!     25     8  model id
//!     33     8  lambda tag (IEEE-754 bits)
//!     41     4  length of b2 in bytes, then b2 (hyper-latent)
//!      .     4  length of b1 in bytes, then b1 (core latent)
//!      .     4  CRC-32 of every preceding byte
//! ```

use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"VCMB";
pub const VERSION: u8 = 1;
/// Bytes before the first length prefix.
pub const HEADER_LEN: usize = 41;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BitstreamHeader {
    pub height: u32,
    pub width: u32,
    pub padded_height: u32,
    pub padded_width: u32,
    pub config_id: u32,
    pub model_id: u64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bitstream {
    pub header: BitstreamHeader,
    pub b1: Vec<u8>,
    pub b2: Vec<u8>,
}

impl Bitstream {
    pub fn b1_bits(&self) -> u64 {
        self.b1.len() as u64 * 8
    }

    pub fn b2_bits(&self) -> u64 {
        self.b2.len() as u64 * 8
    }

    /// Bits of the two latent payloads (container framing excluded).
    pub fn payload_bits(&self) -> u64 {
        self.b1_bits() + self.b2_bits()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(HEADER_LEN + 12 + self.b1.len() + self.b2.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        for v in [h.height, h.width, h.padded_height, h.padded_width, h.config_id] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(&h.model_id.to_be_bytes());
        out.extend_from_slice(&h.lambda.to_bits().to_be_bytes());
        for stream in [&self.b2, &self.b1] {
            out.extend_from_slice(&(stream.len() as u32).to_be_bytes());
            out.extend_from_slice(stream);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_be_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptStream(m.to_string());
        if bytes.len() < 4 || bytes[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        if bytes.len() < HEADER_LEN {
            return Err(corrupt("truncated header"));
        }
        if bytes[4] != VERSION {
            return Err(Error::VersionMismatch(format!(
                "bitstream format version {} (expected {VERSION})",
                bytes[4]
            )));
        }
        let u32_at = |o: usize| u32::from_be_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_be_bytes(bytes[o..o + 8].try_into().unwrap());
        let header = BitstreamHeader {
            height: u32_at(5),
            width: u32_at(9),
            padded_height: u32_at(13),
            padded_width: u32_at(17),
            config_id: u32_at(21),
            model_id: u64_at(25),
            lambda: f64::from_bits(u64_at(33)),
        };
        let mut pos = HEADER_LEN;
        let mut take = |name: &str| -> Result<Vec<u8>> {
            if bytes.len() < pos + 4 {
                return Err(Error::CorruptStream(format!("{name} length missing")));
            }
            let n = u32_at(pos) as usize;
            pos += 4;
            // Leave room for the trailing checksum.
            if bytes.len() < pos + n + 4 {
                return Err(Error::CorruptStream(format!("{name} truncated")));
            }
            let s = bytes[pos..pos + n].to_vec();
            pos += n;
            Ok(s)
        };
        let b2 = take("b2")?;
        let b1 = take("b1")?;
        if bytes.len() != pos + 4 {
            return Err(corrupt("trailing bytes after checksum"));
        }
        let stored = u32_at(pos);
        if crc32fast::hash(&bytes[..pos]) != stored {
            return Err(corrupt("checksum mismatch"));
        }
        Ok(Self { header, b1, b2 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Bitstream {
        Bitstream {
            header: BitstreamHeader {
                height: 100,
                width: 70,
                padded_height: 112,
                padded_width: 80,
                config_id: 0xDEAD_BEEF,
                model_id: 42,
                lambda: 16.0,
            },
            b1: vec![1, 2, 3, 4, 5],
            b2: vec![9, 8, 7, 6],
        }
    }

    #[test]
    fn layout_is_fixed() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"VCMB");
        assert_eq!(bytes[4], VERSION);
        assert_eq!(&bytes[5..9], &100u32.to_be_bytes());
        assert_eq!(&bytes[HEADER_LEN..HEADER_LEN + 4], &4u32.to_be_bytes());
        assert_eq!(bytes.len(), HEADER_LEN + 4 + 4 + 4 + 5 + 4);
        assert_eq!(Bitstream::from_bytes(&bytes).unwrap(), sample());
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().to_bytes();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(Bitstream::from_bytes(&bad_magic), Err(Error::CorruptStream(_))));

        // Drop the last byte of b1 (keeps the checksum in place).
        let b1_end = bytes.len() - 4;
        let mut short_b1 = bytes[..b1_end - 1].to_vec();
        short_b1.extend_from_slice(&bytes[b1_end..]);
        assert!(matches!(Bitstream::from_bytes(&short_b1), Err(Error::CorruptStream(_))));

        let mut short_b2 = bytes[..HEADER_LEN + 4 + 2].to_vec();
        short_b2.extend_from_slice(&bytes[HEADER_LEN + 4 + 4..]);
        assert!(matches!(Bitstream::from_bytes(&short_b2), Err(Error::CorruptStream(_))));

        let mut flipped = bytes.clone();
        flipped[HEADER_LEN + 5] ^= 0x10;
        assert!(matches!(Bitstream::from_bytes(&flipped), Err(Error::CorruptStream(_))));

        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(Bitstream::from_bytes(&version), Err(Error::VersionMismatch(_))));
    }
}
