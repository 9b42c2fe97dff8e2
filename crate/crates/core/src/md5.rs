//! Bit-exact MD5 with the compression function and chaining state exposed.
//!
//! Collision work happens below the digest level: callers fold [`compress`]
//! over 64-byte blocks with [`chain`] and only pad at the very end.

use std::fmt;
use std::io::{self, Read};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum Md5Error {
    #[error("input length {0} is not a multiple of 64 bytes")]
    Unaligned(usize),
    #[error("invalid digest text {0:?}: expected 32 hex characters")]
    BadHex(String),
}

/// Per-step additive constants, `floor(|sin(i + 1)| * 2^32)`.
pub const K: [u32; 64] = [
    0xd76aa478, 0xe8c7b756, 0x242070db, 0xc1bdceee, 0xf57c0faf, 0x4787c62a, 0xa8304613, 0xfd469501,
    0x698098d8, 0x8b44f7af, 0xffff5bb1, 0x895cd7be, 0x6b901122, 0xfd987193, 0xa679438e, 0x49b40821,
    0xf61e2562, 0xc040b340, 0x265e5a51, 0xe9b6c7aa, 0xd62f105d, 0x02441453, 0xd8a1e681, 0xe7d3fbc8,
    0x21e1cde6, 0xc33707d6, 0xf4d50d87, 0x455a14ed, 0xa9e3e905, 0xfcefa3f8, 0x676f02d9, 0x8d2a4c8a,
    0xfffa3942, 0x8771f681, 0x6d9d6122, 0xfde5380c, 0xa4beea44, 0x4bdecfa9, 0xf6bb4b60, 0xbebfbc70,
    0x289b7ec6, 0xeaa127fa, 0xd4ef3085, 0x04881d05, 0xd9d4d039, 0xe6db99e5, 0x1fa27cf8, 0xc4ac5665,
    0xf4292244, 0x432aff97, 0xab9423a7, 0xfc93a039, 0x655b59c3, 0x8f0ccc92, 0xffeff47d, 0x85845dd1,
    0x6fa87e4f, 0xfe2ce6e0, 0xa3014314, 0x4e0811a1, 0xf7537e82, 0xbd3af235, 0x2ad7d2bb, 0xeb86d391,
];

/// Left-rotation amount of each step.
pub const ROT: [u32; 64] = [
    7, 12, 17, 22, 7, 12, 17, 22, 7, 12, 17, 22, 7, 12, 17, 22, //
    5, 9, 14, 20, 5, 9, 14, 20, 5, 9, 14, 20, 5, 9, 14, 20, //
    4, 11, 16, 23, 4, 11, 16, 23, 4, 11, 16, 23, 4, 11, 16, 23, //
    6, 10, 15, 21, 6, 10, 15, 21, 6, 10, 15, 21, 6, 10, 15, 21,
];

/// Message word consumed by each step.
pub const WORD: [usize; 64] = [
    0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, //
    1, 6, 11, 0, 5, 10, 15, 4, 9, 14, 3, 8, 13, 2, 7, 12, //
    5, 8, 11, 14, 1, 4, 7, 10, 13, 0, 3, 6, 9, 12, 15, 2, //
    0, 7, 14, 5, 12, 3, 10, 1, 8, 15, 6, 13, 4, 11, 2, 9,
];

/// The round function used at `step`, applied to the three most recent state words.
#[inline(always)]
pub fn round_fn(step: usize, x: u32, y: u32, z: u32) -> u32 {
    match step >> 4 {
        0 => (x & y) | (!x & z),
        1 => (z & x) | (!z & y),
        2 => x ^ y ^ z,
        _ => y ^ (x | !z),
    }
}

/// The four-word chaining value between compression-function calls.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct IhvState {
    pub a: u32,
    pub b: u32,
    pub c: u32,
    pub d: u32,
}

impl IhvState {
    /// The standard initial chaining value.
    pub const INITIAL: IhvState = IhvState {
        a: 0x6745_2301,
        b: 0xefcd_ab89,
        c: 0x98ba_dcfe,
        d: 0x1032_5476,
    };

    pub const fn new(a: u32, b: u32, c: u32, d: u32) -> Self {
        IhvState { a, b, c, d }
    }

    pub fn words(&self) -> [u32; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn from_words(w: [u32; 4]) -> Self {
        IhvState::new(w[0], w[1], w[2], w[3])
    }

    /// Little-endian serialization; for a final state this is the digest.
    pub fn to_bytes(&self) -> [u8; 16] {
        let mut out = [0u8; 16];
        for (chunk, w) in out.chunks_exact_mut(4).zip(self.words()) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: [u8; 16]) -> Self {
        let w = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
        IhvState::new(w(0), w(1), w(2), w(3))
    }

    /// Word-wise modular difference `other - self`.
    pub fn delta_to(&self, other: &IhvState) -> [u32; 4] {
        let (x, y) = (self.words(), other.words());
        [
            y[0].wrapping_sub(x[0]),
            y[1].wrapping_sub(x[1]),
            y[2].wrapping_sub(x[2]),
            y[3].wrapping_sub(x[3]),
        ]
    }
}

impl Default for IhvState {
    fn default() -> Self {
        IhvState::INITIAL
    }
}

impl fmt::Debug for IhvState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "IhvState({:08x} {:08x} {:08x} {:08x})",
            self.a, self.b, self.c, self.d
        )
    }
}

/// One 64-byte input block of the compression function.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct MessageBlock(pub [u8; 64]);

impl MessageBlock {
    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(MessageBlock)
    }

    pub fn from_words(words: &[u32; 16]) -> Self {
        let mut out = [0u8; 64];
        for (chunk, w) in out.chunks_exact_mut(4).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        MessageBlock(out)
    }

    pub fn words(&self) -> [u32; 16] {
        let mut w = [0u32; 16];
        for (i, chunk) in self.0.chunks_exact(4).enumerate() {
            w[i] = u32::from_le_bytes(chunk.try_into().unwrap());
        }
        w
    }
}

impl fmt::Debug for MessageBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MessageBlock({})", to_hex(&self.0))
    }
}

/// A 16-byte MD5 checksum; displays as 32 lowercase hex characters.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; 16]);

impl Digest {
    pub fn to_hex(&self) -> String {
        to_hex(&self.0)
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl FromStr for Digest {
    type Err = Md5Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.len() != 32 || !s.is_ascii() {
            return Err(Md5Error::BadHex(s.to_string()));
        }
        let mut out = [0u8; 16];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&s[2 * i..2 * i + 2], 16)
                .map_err(|_| Md5Error::BadHex(s.to_string()))?;
        }
        Ok(Digest(out))
    }
}

pub(crate) fn to_hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// The MD5 compression function: 64 steps followed by the feed-forward addition.
pub fn compress(state: IhvState, block: &MessageBlock) -> IhvState {
    compress_words(state, &block.words())
}

#[inline]
pub(crate) fn compress_words(state: IhvState, m: &[u32; 16]) -> IhvState {
    let (mut a, mut b, mut c, mut d) = (state.a, state.b, state.c, state.d);
    for step in 0..64 {
        let f = round_fn(step, b, c, d);
        let t = f
            .wrapping_add(a)
            .wrapping_add(m[WORD[step]])
            .wrapping_add(K[step]);
        let next = b.wrapping_add(t.rotate_left(ROT[step]));
        a = d;
        d = c;
        c = b;
        b = next;
    }
    IhvState::new(
        state.a.wrapping_add(a),
        state.b.wrapping_add(b),
        state.c.wrapping_add(c),
        state.d.wrapping_add(d),
    )
}

/// Fold [`compress`] over consecutive 64-byte blocks without padding.
pub fn chain(state: IhvState, data: &[u8]) -> Result<IhvState, Md5Error> {
    if !data.len().is_multiple_of(64) {
        return Err(Md5Error::Unaligned(data.len()));
    }
    Ok(data.chunks_exact(64).fold(state, |s, block| {
        compress(s, &MessageBlock(block.try_into().unwrap()))
    }))
}

/// Incremental MD5 hasher.
#[derive(Clone, Debug)]
pub struct Md5 {
    state: IhvState,
    buffer: [u8; 64],
    buffered: usize,
    length: u64,
}

impl Default for Md5 {
    fn default() -> Self {
        Md5::new()
    }
}

impl Md5 {
    pub fn new() -> Self {
        Md5::with_state(IhvState::INITIAL, 0)
    }

    /// Resume hashing after `processed_bytes` (a multiple of 64) have already
    /// been folded into `state`.
    pub fn with_state(state: IhvState, processed_bytes: u64) -> Self {
        debug_assert_eq!(processed_bytes % 64, 0);
        Md5 {
            state,
            buffer: [0; 64],
            buffered: 0,
            length: processed_bytes,
        }
    }

    pub fn update(&mut self, mut data: &[u8]) {
        self.length = self.length.wrapping_add(data.len() as u64);
        if self.buffered > 0 {
            let take = (64 - self.buffered).min(data.len());
            self.buffer[self.buffered..self.buffered + take].copy_from_slice(&data[..take]);
            self.buffered += take;
            data = &data[take..];
            if self.buffered < 64 {
                return;
            }
            self.state = compress(self.state, &MessageBlock(self.buffer));
            self.buffered = 0;
        }
        let mut blocks = data.chunks_exact(64);
        for block in &mut blocks {
            self.state = compress(self.state, &MessageBlock(block.try_into().unwrap()));
        }
        let rest = blocks.remainder();
        self.buffer[..rest.len()].copy_from_slice(rest);
        self.buffered = rest.len();
    }

    pub fn finalize(mut self) -> Digest {
        let bit_len = self.length.wrapping_mul(8);
        let mut tail = [0u8; 128];
        tail[..self.buffered].copy_from_slice(&self.buffer[..self.buffered]);
        tail[self.buffered] = 0x80;
        let total = if self.buffered < 56 { 64 } else { 128 };
        tail[total - 8..total].copy_from_slice(&bit_len.to_le_bytes());
        for block in tail[..total].chunks_exact(64) {
            self.state = compress(self.state, &MessageBlock(block.try_into().unwrap()));
        }
        Digest(self.state.to_bytes())
    }
}

/// Standard one-shot MD5.
pub fn digest(data: &[u8]) -> Digest {
    let mut h = Md5::new();
    h.update(data);
    h.finalize()
}

/// MD5 of the concatenation of `chunks`.
pub fn digest_stream<I, B>(chunks: I) -> Digest
where
    I: IntoIterator<Item = B>,
    B: AsRef<[u8]>,
{
    let mut h = Md5::new();
    for chunk in chunks {
        h.update(chunk.as_ref());
    }
    h.finalize()
}

/// Streaming digest of a reader; returns the digest and the number of bytes consumed.
pub fn digest_reader<R: Read>(mut reader: R) -> io::Result<(Digest, u64)> {
    let mut h = Md5::new();
    let mut buf = vec![0u8; 1 << 20];
    let mut total = 0u64;
    loop {
        let n = match reader.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        };
        total += n as u64;
        h.update(&buf[..n]);
    }
    Ok((h.finalize(), total))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_state_serializes_to_the_standard_constant_bytes() {
        assert_eq!(
            to_hex(&IhvState::INITIAL.to_bytes()),
            "0123456789abcdeffedcba9876543210"
        );
    }

    #[test]
    fn chain_rejects_partial_blocks() {
        assert_eq!(
            chain(IhvState::INITIAL, &[0u8; 63]),
            Err(Md5Error::Unaligned(63))
        );
        assert_eq!(chain(IhvState::INITIAL, &[]), Ok(IhvState::INITIAL));
    }

    #[test]
    fn two_block_chain_is_compress_twice() {
        let data: Vec<u8> = (0..128u32).map(|i| (i * 7) as u8).collect();
        let once = compress(
            IhvState::INITIAL,
            &MessageBlock::from_slice(&data[..64]).unwrap(),
        );
        let twice = compress(once, &MessageBlock::from_slice(&data[64..]).unwrap());
        assert_eq!(chain(IhvState::INITIAL, &data).unwrap(), twice);
    }

    #[test]
    fn digest_text_round_trips() {
        let d = digest(b"abc");
        assert_eq!(d.to_hex().parse::<Digest>().unwrap(), d);
        assert!("zz".parse::<Digest>().is_err());
        assert!("0123456789abcdef0123456789abcdeg".parse::<Digest>().is_err());
    }

    #[test]
    fn resumed_hasher_matches_one_shot() {
        let data = vec![0x5au8; 300];
        let mid = chain(IhvState::INITIAL, &data[..192]).unwrap();
        let mut h = Md5::with_state(mid, 192);
        h.update(&data[192..]);
        assert_eq!(h.finalize(), digest(&data));
    }
}
