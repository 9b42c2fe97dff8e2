//! Chosen-prefix scaffolding: padding arithmetic, the birthday cost model and
//! a distinguished-point birthday search that runs at reduced strength.
//!
//! Each side appends padding `S_r` and then a `(64 + k)`-bit string `S_b`
//! that ends exactly on a block boundary. The search looks for strings whose
//! chaining values differ by `(0, δb, δc, δc)`.
//!
//! The birthday string fills the low `64 + k` bits of its block, counting bits
//! the way MD5 reads them (most significant bit of byte 0 first). The padding
//! bits sharing that block are zero.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::ipc::PrefixContext;
use crate::md5::{compress, IhvState, MessageBlock};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BirthdayError {
    #[error("k = {0} is outside 0..32")]
    KOutOfRange(u32),
    #[error("match width {0} is outside 1..=32")]
    BadWidth(u32),
}

/// Smallest `L >= 0` with `prefix_len_bits + L + 64 + k` a multiple of 512.
/// `k = 0` is allowed so identical-prefix work can use the same alignment.
pub fn padding_bits(prefix_len_bits: u64, k: u32) -> Result<u64, BirthdayError> {
    if k >= 32 {
        return Err(BirthdayError::KOutOfRange(k));
    }
    let used = (prefix_len_bits + 64 + u64::from(k)) % 512;
    Ok((512 - used) % 512)
}

/// Expected compressions of a full-strength search, `sqrt(pi) * 2^(32 + k/2)`.
pub fn birthday_cost(k: u32) -> f64 {
    std::f64::consts::PI.sqrt() * (32.0 + f64::from(k) / 2.0).exp2()
}

/// Search strength and memory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BirthdayConfig {
    /// Low bits of `a` and of `c - d` that must agree; 32 is the real
    /// condition.
    pub match_bits: u32,
    /// A point is distinguished when this many top bits of it are zero.
    pub dp_bits: u32,
    /// Stored distinguished points before the table stops growing.
    pub max_points: usize,
}

impl Default for BirthdayConfig {
    fn default() -> Self {
        BirthdayConfig {
            match_bits: 32,
            dp_bits: 12,
            max_points: 1 << 20,
        }
    }
}

impl BirthdayConfig {
    /// Truncated to the low 16 bits of each word.
    pub fn reduced() -> Self {
        BirthdayConfig {
            match_bits: 16,
            dp_bits: 5,
            ..Self::default()
        }
    }
}

/// Two birthday strings, each `64 + k` bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BirthdayMatch {
    pub bits_a: u128,
    pub bits_b: u128,
    pub len_bits: u32,
    /// Compressions spent.
    pub work: u64,
}

/// The block carrying birthday string `bits` of `len_bits` bits.
pub fn birthday_block(bits: u128, len_bits: u32) -> [u8; 64] {
    let mut block = [0u8; 64];
    for i in 0..len_bits as usize {
        if bits >> i & 1 == 1 {
            block[63 - i / 8] |= 1 << (i % 8);
        }
    }
    block
}

/// Whether `(x, y)` have the birthday difference in the low `width` bits.
pub fn is_birthday_pair(x: IhvState, y: IhvState, width: u32) -> bool {
    let mask = low_mask(width);
    let cd = |s: IhvState| s.c.wrapping_sub(s.d);
    (x.a ^ y.a) & mask == 0 && (cd(x) ^ cd(y)) & mask == 0
}

fn low_mask(width: u32) -> u32 {
    if width >= 32 {
        u32::MAX
    } else {
        (1 << width) - 1
    }
}

struct Walk<'a> {
    ctx: [&'a PrefixContext; 2],
    k: u32,
    width: u32,
    /// Bits of a point: `2 * width`, plus `k` at full strength.
    point_bits: u32,
}

impl Walk<'_> {
    fn side(&self, x: u128) -> usize {
        (x & 1) as usize
    }

    fn chain(&self, x: u128) -> IhvState {
        let block = MessageBlock(birthday_block(x, 64 + self.k));
        compress(self.ctx[self.side(x)].state, &block)
    }

    fn step(&self, x: u128) -> u128 {
        let s = self.chain(x);
        let mask = low_mask(self.width);
        let mut p = u128::from(s.a & mask) | u128::from(s.c.wrapping_sub(s.d) & mask) << self.width;
        if self.width == 32 && self.k > 0 {
            let extra = s.b.wrapping_sub(s.c) & low_mask(self.k);
            p |= u128::from(extra) << 64;
        }
        p
    }

    fn distinguished(&self, x: u128, dp_bits: u32) -> bool {
        dp_bits == 0 || x >> (self.point_bits - dp_bits) == 0
    }
}

/// Look for birthday strings for the two contexts within `budget`
/// compressions. Deterministic given `seed`.
pub fn birthday_search(
    ctx_a: &PrefixContext,
    ctx_b: &PrefixContext,
    k: u32,
    budget: u64,
    seed: u64,
    config: BirthdayConfig,
) -> Result<Option<BirthdayMatch>, BirthdayError> {
    if k >= 32 {
        return Err(BirthdayError::KOutOfRange(k));
    }
    if config.match_bits == 0 || config.match_bits > 32 {
        return Err(BirthdayError::BadWidth(config.match_bits));
    }
    let width = config.match_bits;
    let point_bits = 2 * width + if width == 32 { k } else { 0 };
    let walk = Walk {
        ctx: [ctx_a, ctx_b],
        k,
        width,
        point_bits,
    };
    let dp_bits = config.dp_bits.min(point_bits - 1);
    let max_trail = 20u64 << dp_bits;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Distinguished point -> (trail start, trail length).
    let mut seen: HashMap<u128, (u128, u64)> = HashMap::new();
    let mut work = 0u64;
    while work < budget {
        let start = rng.gen::<u128>() & ((1u128 << point_bits) - 1);
        let mut x = start;
        let mut len = 0u64;
        let end = loop {
            if work >= budget || len >= max_trail {
                break None;
            }
            x = walk.step(x);
            work += 1;
            len += 1;
            if walk.distinguished(x, dp_bits) {
                break Some(x);
            }
        };
        let Some(end) = end else { continue };
        match seen.get(&end).copied() {
            Some((other, other_len)) if other != start => {
                let (pair, spent) = merge(&walk, (start, len), (other, other_len));
                work += spent;
                if let Some((x, y)) = pair {
                    let (bits_a, bits_b) = if walk.side(x) == 0 { (x, y) } else { (y, x) };
                    return Ok(Some(BirthdayMatch {
                        bits_a,
                        bits_b,
                        len_bits: 64 + k,
                        work,
                    }));
                }
            }
            Some(_) => {}
            None => {
                if seen.len() < config.max_points {
                    seen.insert(end, (start, len));
                }
            }
        }
    }
    Ok(None)
}

/// Walk two trails that reach the same distinguished point back to where
/// they merge. Returns the two distinct predecessors if they lie on
/// different sides, plus the compressions spent.
fn merge(walk: &Walk, a: (u128, u64), b: (u128, u64)) -> (Option<(u128, u128)>, u64) {
    let (mut x, mut lx) = a;
    let (mut y, mut ly) = b;
    let mut spent = 0u64;
    while lx > ly {
        x = walk.step(x);
        lx -= 1;
        spent += 1;
    }
    while ly > lx {
        y = walk.step(y);
        ly -= 1;
        spent += 1;
    }
    if x == y {
        // One trail started on the other.
        return (None, spent);
    }
    loop {
        let (nx, ny) = (walk.step(x), walk.step(y));
        spent += 2;
        if nx == ny {
            let cross = walk.side(x) != walk.side(y);
            return (cross.then_some((x, y)), spent);
        }
        x = nx;
        y = ny;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::md5::chain;

    #[test]
    fn padding_examples() {
        assert_eq!(padding_bits(448, 0), Ok(0));
        assert_eq!(padding_bits(0, 0), Ok(448));
        assert_eq!(padding_bits(100, 8), Ok(340));
        assert_eq!(padding_bits(0, 32), Err(BirthdayError::KOutOfRange(32)));
    }

    #[test]
    fn cost_examples() {
        let base = birthday_cost(0);
        assert!((base - 7.612e9).abs() < 1e7);
        assert_eq!(birthday_cost(2), 2.0 * base);
        assert_eq!(birthday_cost(31), std::f64::consts::PI.sqrt() * 47.5f64.exp2());
    }

    #[test]
    fn birthday_bits_sit_at_the_end_of_the_block() {
        let block = birthday_block(0x1_0000_0000_0000_0081, 65);
        assert_eq!(block[63], 0x81);
        assert_eq!(block[55], 0x01);
        assert!(block[..55].iter().all(|&b| b == 0));
    }

    #[test]
    fn zero_budget_finds_nothing() {
        let ctx = PrefixContext::initial();
        let found = birthday_search(&ctx, &ctx, 4, 0, 1, BirthdayConfig::reduced());
        assert_eq!(found, Ok(None));
    }

    #[test]
    fn reduced_search_finds_a_verified_pair() {
        let a = PrefixContext::from_prefix(&[0x11; 64]).unwrap();
        let b = PrefixContext::from_prefix(&[0x22; 128]).unwrap();
        let m = birthday_search(&a, &b, 4, 1 << 20, 7, BirthdayConfig::reduced())
            .unwrap()
            .expect("reduced-strength pair within 2^20 compressions");
        assert!(m.work <= 1 << 21);
        let sa = chain(a.state, &birthday_block(m.bits_a, m.len_bits)).unwrap();
        let sb = chain(b.state, &birthday_block(m.bits_b, m.len_bits)).unwrap();
        assert!(is_birthday_pair(sa, sb, 16));
    }
}
