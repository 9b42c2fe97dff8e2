//! Identical-prefix collisions: two 128-byte suffixes that bring the same
//! chaining value to the same place.
//!
//! Work is cut into fixed-size units, each with its own random stream derived
//! from `(seed, phase, unit)`. Units run in parallel, but the result is always
//! the lowest-numbered unit that succeeds, so the outcome and the reported
//! work do not depend on the thread count.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use super::path::DiffPath;
use super::search::{BlockPair, BlockSearch, Columns, Successor};
use crate::md5::{chain, IhvState, MessageBlock};

/// Compressions per work unit.
const UNIT: u64 = 1 << 24;

/// Block-2 compressions tried from one block-1 output before moving on.
const SECOND_BLOCK_CAP: u64 = 1 << 28;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CollisionError {
    #[error("prefix length {0} is not a multiple of 64 bytes")]
    Unaligned(u64),
    #[error("no collision within {0} compressions")]
    BudgetExhausted(u64),
    #[error("search returned blocks that do not collide")]
    Unverified,
}

/// Chaining value after a block-aligned prefix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrefixContext {
    pub state: IhvState,
    pub prefix_len_bytes: u64,
}

impl PrefixContext {
    /// The empty prefix.
    pub fn initial() -> Self {
        PrefixContext {
            state: IhvState::INITIAL,
            prefix_len_bytes: 0,
        }
    }

    pub fn from_prefix(prefix: &[u8]) -> Result<Self, CollisionError> {
        let state = chain(IhvState::INITIAL, prefix)
            .map_err(|_| CollisionError::Unaligned(prefix.len() as u64))?;
        Ok(PrefixContext {
            state,
            prefix_len_bytes: prefix.len() as u64,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IpcSuffixPair {
    pub s_a: [u8; 128],
    pub s_b: [u8; 128],
    /// Compressions spent, summed over every unit up to the winning one.
    pub found_after: u64,
}

impl IpcSuffixPair {
    /// Re-check the pair with the plain compression function.
    pub fn verify(&self, ctx: &PrefixContext) -> bool {
        self.s_a != self.s_b
            && chain(ctx.state, &self.s_a).ok() == chain(ctx.state, &self.s_b).ok()
    }
}

/// Search for an identical-prefix collision after `ctx`, spending at most
/// about `budget` compressions. The same seed always gives the same pair.
pub fn find_ipc_collision(
    ctx: &PrefixContext,
    budget: u64,
    seed: u64,
) -> Result<IpcSuffixPair, CollisionError> {
    if !ctx.prefix_len_bytes.is_multiple_of(64) {
        return Err(CollisionError::Unaligned(ctx.prefix_len_bytes));
    }
    let (first, second) = DiffPath::reference_paths();
    let cols1 = Columns::new(&first);
    let cols2 = Columns::new(&second);
    let mut spent = 0u64;
    let mut next_unit = 0u64;
    let mut attempt = 0u64;
    while spent < budget {
        let left = budget - spent;
        let (b1, unit, work) = race(0, next_unit, left, seed, |rng, cap, stop| {
            let next = Successor {
                path: &second,
                cols: &cols2,
            };
            let Some(mut s) = BlockSearch::new(&first, &cols1, Some(next), ctx.state, rng) else {
                return (None, cap);
            };
            let found = s.run(cap * 64, stop);
            (found, s.steps.div_ceil(64))
        });
        spent += work;
        let Some(b1) = b1 else { break };
        next_unit = unit + 1;
        attempt += 1;

        let mid = chain(ctx.state, &block_bytes(&b1.m)).unwrap();
        let left = (budget - spent.min(budget)).min(SECOND_BLOCK_CAP);
        let (b2, _, work) = race(attempt, 0, left, seed, |rng, cap, stop| {
            let Some(mut s) = BlockSearch::new(&second, &cols2, None, mid, rng) else {
                return (None, cap);
            };
            let found = s.run(cap * 64, stop);
            (found, s.steps.div_ceil(64))
        });
        spent += work;
        if let Some(b2) = b2 {
            let mut s_a = [0u8; 128];
            let mut s_b = [0u8; 128];
            s_a[..64].copy_from_slice(&block_bytes(&b1.m));
            s_a[64..].copy_from_slice(&block_bytes(&b2.m));
            s_b[..64].copy_from_slice(&block_bytes(&b1.m2));
            s_b[64..].copy_from_slice(&block_bytes(&b2.m2));
            let pair = IpcSuffixPair {
                s_a,
                s_b,
                found_after: spent,
            };
            return if pair.verify(ctx) {
                Ok(pair)
            } else {
                Err(CollisionError::Unverified)
            };
        }
    }
    Err(CollisionError::BudgetExhausted(budget))
}

fn block_bytes(m: &[u32; 16]) -> [u8; 64] {
    MessageBlock::from_words(m).0
}

/// Random stream of one unit.
fn unit_rng(seed: u64, phase: u64, unit: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(phase << 40 | unit);
    rng
}

/// Run units `from, from + 1, ...` until one succeeds or `budget`
/// compressions are used. Returns the lowest successful unit, its index and
/// the work of every unit up to it. `search` gets the unit's stream, its
/// compression cap and a stop flag, and reports what it found and spent.
fn race<F>(phase: u64, from: u64, budget: u64, seed: u64, search: F) -> (Option<BlockPair>, u64, u64)
where
    F: Fn(ChaCha8Rng, u64, &dyn Fn() -> bool) -> (Option<BlockPair>, u64) + Sync,
{
    let width = rayon::current_num_threads().max(1) as u64;
    let mut spent = 0u64;
    let mut unit = from;
    while spent < budget {
        let best = AtomicUsize::new(usize::MAX);
        let caps: Vec<(u64, u64)> = (0..width)
            .scan(spent, |used, k| {
                if *used >= budget {
                    return None;
                }
                let cap = UNIT.min(budget - *used);
                *used += cap;
                Some((unit + k, cap))
            })
            .collect();
        let results: Vec<(Option<BlockPair>, u64)> = caps
            .par_iter()
            .enumerate()
            .map(|(k, &(u, cap))| {
                let stop = || best.load(Ordering::Relaxed) < k;
                let out = search(unit_rng(seed, phase, u), cap, &stop);
                if out.0.is_some() {
                    best.fetch_min(k, Ordering::Relaxed);
                }
                out
            })
            .collect();
        for (k, (found, work)) in results.into_iter().enumerate() {
            spent += work;
            if found.is_some() {
                return (found, unit + k as u64, spent);
            }
        }
        unit += caps.len() as u64;
    }
    (None, unit, spent)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unaligned_prefix_is_rejected() {
        assert_eq!(
            PrefixContext::from_prefix(&[0; 10]),
            Err(CollisionError::Unaligned(10))
        );
        let ctx = PrefixContext {
            state: IhvState::INITIAL,
            prefix_len_bytes: 3,
        };
        assert_eq!(find_ipc_collision(&ctx, 10, 0), Err(CollisionError::Unaligned(3)));
    }

    #[test]
    fn zero_budget_exhausts_immediately() {
        assert_eq!(
            find_ipc_collision(&PrefixContext::initial(), 0, 0),
            Err(CollisionError::BudgetExhausted(0))
        );
    }

    #[test]
    fn unit_streams_differ() {
        use rand::RngCore;
        let a = unit_rng(1, 0, 0).next_u64();
        assert_ne!(a, unit_rng(1, 0, 1).next_u64());
        assert_ne!(a, unit_rng(1, 1, 0).next_u64());
        assert_ne!(a, unit_rng(2, 0, 0).next_u64());
        assert_eq!(a, unit_rng(1, 0, 0).next_u64());
    }
}
