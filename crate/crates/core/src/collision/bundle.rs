//! CPCS container for externally produced chosen-prefix suffixes.
//!
//! Layout, integers little-endian:
//!
//! ```text
//! "CPCS" | version u16 = 1 | k u16 | r u16 | reserved u16
//! side A: S_r bits u32, S_r bytes | S_b bits u32, S_b bytes | r x 64-byte S_c
//! side B: same
//! MD5 of everything above (16 bytes)
//! ```

use std::path::Path;

use thiserror::Error;

use crate::md5::{digest, Digest};

const MAGIC: &[u8; 4] = b"CPCS";
const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("not a CPCS bundle")]
    BadMagic,
    #[error("unsupported bundle version {0}")]
    Version(u16),
    #[error("bundle truncated in {0}")]
    Truncated(&'static str),
    #[error("k = {0} is outside 1..32")]
    KOutOfRange(u16),
    #[error("side {side}: S_b has {bits} bits, expected {expected}")]
    BirthdayLength { side: char, bits: u32, expected: u32 },
    #[error("{0} bytes follow the declared {1} near-collision block pairs")]
    BlockCount(usize, u16),
    #[error("container checksum mismatch")]
    Checksum,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One side's sub-suffixes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuffixSide {
    pub s_r: Vec<u8>,
    pub s_r_bits: u32,
    pub s_b: Vec<u8>,
    pub s_b_bits: u32,
    pub s_c: Vec<[u8; 64]>,
}

impl SuffixSide {
    /// `S_r || S_b || S_c` as a bit string packed into bytes.
    pub fn suffix_bits(&self) -> (Vec<u8>, u64) {
        let mut out = BitWriter::default();
        out.push(&self.s_r, self.s_r_bits);
        out.push(&self.s_b, self.s_b_bits);
        for block in &self.s_c {
            out.push(block, 512);
        }
        (out.bytes, out.len)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CpcSuffixBundle {
    pub k: u16,
    pub a: SuffixSide,
    pub b: SuffixSide,
    /// Digests of the prefixes the bundle was built for; the container does
    /// not carry them, so they are filled in by whoever knows.
    pub prefix_digests: Option<(Digest, Digest)>,
}

impl CpcSuffixBundle {
    /// Number of near-collision block pairs.
    pub fn r(&self) -> usize {
        self.a.s_c.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.k.to_le_bytes());
        out.extend_from_slice(&(self.r() as u16).to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        for side in [&self.a, &self.b] {
            out.extend_from_slice(&side.s_r_bits.to_le_bytes());
            out.extend_from_slice(&side.s_r);
            out.extend_from_slice(&side.s_b_bits.to_le_bytes());
            out.extend_from_slice(&side.s_b);
            for block in &side.s_c {
                out.extend_from_slice(block);
            }
        }
        let check = digest(&out);
        out.extend_from_slice(&check.0);
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, BundleError> {
        if data.len() < 4 || &data[..4] != MAGIC {
            return Err(BundleError::BadMagic);
        }
        let mut rd = Reader { data, pos: 4 };
        let version = rd.u16("header")?;
        if version != VERSION {
            return Err(BundleError::Version(version));
        }
        let k = rd.u16("header")?;
        let r = rd.u16("header")?;
        rd.u16("header")?;
        if k == 0 || k >= 32 {
            return Err(BundleError::KOutOfRange(k));
        }
        let a = rd.side('A', k, r)?;
        let b = rd.side('B', k, r)?;
        let body = rd.pos;
        match data.len().checked_sub(body) {
            Some(16) => {}
            Some(n) if n > 16 => return Err(BundleError::BlockCount(n - 16, r)),
            _ => return Err(BundleError::Truncated("checksum")),
        }
        if digest(&data[..body]).0[..] != data[body..] {
            return Err(BundleError::Checksum);
        }
        Ok(CpcSuffixBundle {
            k,
            a,
            b,
            prefix_digests: None,
        })
    }
}

/// Read and check a bundle file.
pub fn ingest_cpc_bundle(path: impl AsRef<Path>) -> Result<CpcSuffixBundle, BundleError> {
    CpcSuffixBundle::from_bytes(&std::fs::read(path)?)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&[u8], BundleError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let end = end.ok_or(BundleError::Truncated(what))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, BundleError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, BundleError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn bits(&mut self, what: &'static str) -> Result<(Vec<u8>, u32), BundleError> {
        let bits = self.u32(what)?;
        let bytes = self.take(bits.div_ceil(8) as usize, what)?.to_vec();
        Ok((bytes, bits))
    }

    fn side(&mut self, side: char, k: u16, r: u16) -> Result<SuffixSide, BundleError> {
        let (s_r, s_r_bits) = self.bits("S_r")?;
        let (s_b, s_b_bits) = self.bits("S_b")?;
        let expected = 64 + u32::from(k);
        if s_b_bits != expected {
            return Err(BundleError::BirthdayLength {
                side,
                bits: s_b_bits,
                expected,
            });
        }
        let s_c = (0..r)
            .map(|_| Ok(self.take(64, "S_c")?.try_into().unwrap()))
            .collect::<Result<_, BundleError>>()?;
        Ok(SuffixSide {
            s_r,
            s_r_bits,
            s_b,
            s_b_bits,
            s_c,
        })
    }
}

/// Packs bit strings most-significant-bit first, the order MD5 consumes.
#[derive(Default)]
pub(crate) struct BitWriter {
    pub bytes: Vec<u8>,
    pub len: u64,
}

impl BitWriter {
    pub fn push(&mut self, src: &[u8], bits: u32) {
        if self.len.is_multiple_of(8) {
            let whole = bits as usize / 8;
            self.bytes.extend_from_slice(&src[..whole]);
            self.len += 8 * whole as u64;
            for i in 8 * whole as u32..bits {
                self.push_bit(src[i as usize / 8] >> (7 - i % 8) & 1);
            }
            return;
        }
        for i in 0..bits {
            self.push_bit(src[i as usize / 8] >> (7 - i % 8) & 1);
        }
    }

    fn push_bit(&mut self, bit: u8) {
        if self.len.is_multiple_of(8) {
            self.bytes.push(0);
        }
        let last = self.bytes.last_mut().unwrap();
        *last |= bit << (7 - self.len % 8);
        self.len += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(k: u16, r: usize) -> CpcSuffixBundle {
        let side = |fill: u8| SuffixSide {
            s_r: vec![0; 3],
            s_r_bits: 20,
            s_b: vec![fill; (64 + k as usize).div_ceil(8)],
            s_b_bits: 64 + u32::from(k),
            s_c: vec![[fill; 64]; r],
        };
        CpcSuffixBundle {
            k,
            a: side(0xaa),
            b: side(0x55),
            prefix_digests: None,
        }
    }

    #[test]
    fn round_trip() {
        let bundle = sample(4, 9);
        let parsed = CpcSuffixBundle::from_bytes(&bundle.to_bytes()).unwrap();
        assert_eq!(parsed, bundle);
        assert_eq!(parsed.r(), 9);
    }

    #[test]
    fn empty_input_is_bad_magic() {
        assert!(matches!(CpcSuffixBundle::from_bytes(&[]), Err(BundleError::BadMagic)));
    }

    #[test]
    fn wrong_birthday_length_is_rejected() {
        let mut bundle = sample(4, 2);
        bundle.b.s_b_bits = 70;
        let err = CpcSuffixBundle::from_bytes(&bundle.to_bytes()).unwrap_err();
        assert!(matches!(err, BundleError::BirthdayLength { side: 'B', bits: 70, expected: 68 }));
    }

    #[test]
    fn corruption_and_truncation_are_caught() {
        let bytes = sample(4, 2).to_bytes();
        let mut bad = bytes.clone();
        bad[40] ^= 1;
        assert!(matches!(CpcSuffixBundle::from_bytes(&bad), Err(BundleError::Checksum)));
        assert!(matches!(
            CpcSuffixBundle::from_bytes(&bytes[..bytes.len() - 100]),
            Err(BundleError::Truncated(_))
        ));
        let mut zero_k = bytes.clone();
        zero_k[6] = 0;
        assert!(matches!(CpcSuffixBundle::from_bytes(&zero_k), Err(BundleError::KOutOfRange(0))));
    }

    #[test]
    fn bit_writer_packs_across_byte_boundaries() {
        let mut w = BitWriter::default();
        w.push(&[0b1010_0000], 3);
        w.push(&[0xff, 0b1000_0000], 9);
        assert_eq!(w.len, 12);
        assert_eq!(w.bytes, vec![0b1011_1111, 0b1111_0000]);
    }
}
