//! Self-generated detector corpora.
//!
//! Clean material is toy weight files rounded to bf16 precision but stored as
//! f32, the way many checkpoints are shipped. Collision material comes from
//! the bundled engine pool. The first two thirds of the pool are for
//! training; the rest never reach a training set.

use crate::collision::pool::PoolEntry;
use crate::stealth::ToyWeightFile;

/// Tensor width of corpus files.
pub const CORPUS_WIDTH: usize = 768;

/// A clean toy weight file of roughly `bytes` bytes.
pub fn toy_source(seed: u64, bytes: u64) -> Vec<u8> {
    ToyWeightFile::synthetic_of_size(seed, bytes, CORPUS_WIDTH)
        .round_to_bf16()
        .to_bytes()
}

/// `(train, held_out)`.
pub fn split_pool(pool: &[PoolEntry]) -> (&[PoolEntry], &[PoolEntry]) {
    pool.split_at(pool.len() * 2 / 3)
}

/// Both blocks of every entry.
pub fn suffixes(entries: &[PoolEntry]) -> Vec<&[u8]> {
    entries.iter().flat_map(|e| [&e.s_a[..], &e.s_b[..]]).collect()
}

/// One block per entry. The two sides of a collision differ in a handful of
/// bits, so mixing them would make collision material look self-similar.
pub fn distinct_suffixes(entries: &[PoolEntry]) -> Vec<&[u8]> {
    entries.iter().map(|e| &e.s_a[..]).collect()
}
