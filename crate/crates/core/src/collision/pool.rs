//! Precomputed engine collisions, so tests and corpora do not pay for fresh
//! searches. Each line is `prefix_hex s_a_hex s_b_hex`; `#` starts a comment.

use super::ipc::{find_ipc_collision, CollisionError, IpcSuffixPair, PrefixContext};
use crate::md5::to_hex;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BUNDLED: &str = include_str!("../../fixtures/ipc_pool.txt");

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolEntry {
    pub prefix: Vec<u8>,
    pub s_a: [u8; 128],
    pub s_b: [u8; 128],
}

impl PoolEntry {
    pub fn context(&self) -> PrefixContext {
        PrefixContext::from_prefix(&self.prefix).expect("pool prefixes are block aligned")
    }

    pub fn pair(&self) -> IpcSuffixPair {
        IpcSuffixPair {
            s_a: self.s_a,
            s_b: self.s_b,
            found_after: 0,
        }
    }
}

impl std::fmt::Display for PoolEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {} {}", to_hex(&self.prefix), to_hex(&self.s_a), to_hex(&self.s_b))
    }
}

/// The prefix used for pool entry `i`: one to three blocks of seeded noise.
pub fn pool_prefix(i: u64) -> Vec<u8> {
    let mut out = vec![0u8; 64 * (1 + i as usize % 3)];
    ChaCha8Rng::seed_from_u64(i).fill_bytes(&mut out);
    out
}

/// Run the engine for pool entry `i`.
pub fn generate_entry(i: u64) -> Result<PoolEntry, CollisionError> {
    let prefix = pool_prefix(i);
    let ctx = PrefixContext::from_prefix(&prefix)?;
    let pair = find_ipc_collision(&ctx, u64::MAX, i)?;
    Ok(PoolEntry {
        prefix,
        s_a: pair.s_a,
        s_b: pair.s_b,
    })
}

pub fn parse_pool(text: &str) -> Result<Vec<PoolEntry>, String> {
    let hex = |s: &str| -> Result<Vec<u8>, String> {
        if !s.len().is_multiple_of(2) {
            return Err(format!("odd hex length {}", s.len()));
        }
        (0..s.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&s[i..i + 2], 16).map_err(|e| e.to_string()))
            .collect()
    };
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [p, a, b] = fields[..] else {
            return Err(format!("line {}: expected 3 fields", n + 1));
        };
        let block = |s: &str| -> Result<[u8; 128], String> {
            hex(s)?.try_into().map_err(|_| format!("line {}: suffix is not 128 bytes", n + 1))
        };
        out.push(PoolEntry {
            prefix: hex(p)?,
            s_a: block(a)?,
            s_b: block(b)?,
        });
    }
    Ok(out)
}

/// The pool shipped with the crate.
pub fn ipc_pool() -> Vec<PoolEntry> {
    parse_pool(BUNDLED).expect("bundled pool parses")
}
