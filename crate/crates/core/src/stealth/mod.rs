//! Size-preserving collision files.
//!
//! A payload is first shrunk (half-precision weights or trimmed text) so a
//! collision suffix fits, then the collision is appended and the result is
//! padded back to the original size. Both outputs share size and digest.

mod assemble;
mod text;
mod weights;

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::collision::{BundleError, CollisionError};
use crate::md5::Digest;

pub use assemble::{assemble_cpc, assemble_ipc_demo, IpcDemoConfig, StealthPair};
pub use text::{trim_text, DEFAULT_STOPWORDS};
pub use weights::{quantize_weights, DType, Tensor, ToyWeightFile, TENSOR_HEADER};

/// Bytes freed when the caller does not ask for a specific amount.
pub const DEFAULT_MIN_FREED: u64 = 1024;

#[derive(Debug, Error)]
pub enum StealthError {
    #[error("malformed weight file: {0}")]
    Malformed(String),
    #[error("could only free {available} of the {wanted} bytes requested")]
    InsufficientCapacity { wanted: u64, available: u64 },
    #[error("{needed} bytes do not fit in a target of {target}")]
    TooLarge { needed: u64, target: u64 },
    #[error("prefix and suffix end at bit {0}, not on a block boundary")]
    Unaligned(u64),
    #[error("the two sides assemble to {0} and {1} bytes")]
    LengthMismatch(u64, u64),
    #[error("the bundle does not collide for these prefixes")]
    BundleMismatch,
    #[error("bad manifest line {0:?}")]
    Manifest(String),
    #[error(transparent)]
    Collision(#[from] CollisionError),
    #[error(transparent)]
    Bundle(#[from] BundleError),
}

/// One reversible edit made while shrinking a file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ManifestEntry {
    /// `elements` trailing values of tensor `tensor` became f16; `split`
    /// means they moved into a new tensor right after it.
    Quantized { tensor: usize, elements: u64, split: bool },
    /// `len` bytes removed at `offset` of the original text.
    Removed { offset: u64, len: u64 },
}

impl ManifestEntry {
    pub fn bytes_freed(&self) -> u64 {
        match *self {
            ManifestEntry::Quantized { elements, split, .. } => 2 * elements - if split { TENSOR_HEADER } else { 0 },
            ManifestEntry::Removed { len, .. } => len,
        }
    }
}

impl fmt::Display for ManifestEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ManifestEntry::Quantized { tensor, elements, split } => {
                write!(f, "quantized={tensor}:{elements}:{}", if split { "split" } else { "whole" })
            }
            ManifestEntry::Removed { offset, len } => write!(f, "removed={offset}:{len}"),
        }
    }
}

impl FromStr for ManifestEntry {
    type Err = StealthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || StealthError::Manifest(s.to_string());
        let (key, value) = s.split_once('=').ok_or_else(bad)?;
        let parts: Vec<&str> = value.split(':').collect();
        let num = |i: usize| parts.get(i).and_then(|p| p.parse::<u64>().ok()).ok_or_else(bad);
        match (key, parts.len()) {
            ("quantized", 3) => Ok(ManifestEntry::Quantized {
                tensor: num(0)? as usize,
                elements: num(1)?,
                split: match parts[2] {
                    "split" => true,
                    "whole" => false,
                    _ => return Err(bad()),
                },
            }),
            ("removed", 2) => Ok(ManifestEntry::Removed {
                offset: num(0)?,
                len: num(1)?,
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompressionOutcome {
    pub new_file: Vec<u8>,
    pub bytes_freed: u64,
    pub manifest: Vec<ManifestEntry>,
}

impl CompressionOutcome {
    /// Size change implied by the manifest alone.
    pub fn manifest_delta(&self) -> u64 {
        self.manifest.iter().map(ManifestEntry::bytes_freed).sum()
    }

    pub fn converted_elements(&self) -> u64 {
        self.manifest
            .iter()
            .map(|e| match *e {
                ManifestEntry::Quantized { elements, .. } => elements,
                ManifestEntry::Removed { .. } => 0,
            })
            .sum()
    }
}

/// How the tail pad is filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FillPolicy {
    Zeros,
    Random { seed: u64 },
}

impl Default for FillPolicy {
    fn default() -> Self {
        FillPolicy::Random { seed: 0 }
    }
}

impl fmt::Display for FillPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FillPolicy::Zeros => f.write_str("zeros"),
            FillPolicy::Random { seed } => write!(f, "random:{seed}"),
        }
    }
}

impl FromStr for FillPolicy {
    type Err = StealthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "zeros" => Ok(FillPolicy::Zeros),
            Some(("random", seed)) => seed
                .parse()
                .map(|seed| FillPolicy::Random { seed })
                .map_err(|_| StealthError::Manifest(s.to_string())),
            _ => Err(StealthError::Manifest(s.to_string())),
        }
    }
}

/// `len` pad bytes under `fill`.
pub fn fill_bytes(len: u64, fill: FillPolicy) -> Vec<u8> {
    let mut out = vec![0u8; len as usize];
    if let FillPolicy::Random { seed } = fill {
        ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut out);
    }
    out
}

/// Append pad bytes until `data` is exactly `target` bytes.
pub fn pad_to_size(data: &[u8], target: u64, fill: FillPolicy) -> Result<Vec<u8>, StealthError> {
    let len = data.len() as u64;
    if len > target {
        return Err(StealthError::TooLarge { needed: len, target });
    }
    let mut out = Vec::with_capacity(target as usize);
    out.extend_from_slice(data);
    out.extend_from_slice(&fill_bytes(target - len, fill));
    Ok(out)
}

/// Sidecar describing how a stealth pair was built, one `key=value` per line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StealthManifest {
    pub mode: String,
    pub original_size: u64,
    pub digest: Digest,
    /// Bytes before the collision suffix.
    pub prefix_bytes: u64,
    /// Collision suffix length, per side.
    pub suffix_bytes: (u64, u64),
    pub pad_bytes: u64,
    pub fill: FillPolicy,
    pub bytes_freed: u64,
    pub edits: Vec<ManifestEntry>,
}

impl fmt::Display for StealthManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode={}", self.mode)?;
        writeln!(f, "original_size={}", self.original_size)?;
        writeln!(f, "md5={}", self.digest)?;
        writeln!(f, "prefix_bytes={}", self.prefix_bytes)?;
        writeln!(f, "suffix_bytes={}:{}", self.suffix_bytes.0, self.suffix_bytes.1)?;
        writeln!(f, "pad_bytes={}", self.pad_bytes)?;
        writeln!(f, "fill={}", self.fill)?;
        writeln!(f, "bytes_freed={}", self.bytes_freed)?;
        for e in &self.edits {
            writeln!(f, "{e}")?;
        }
        Ok(())
    }
}

impl FromStr for StealthManifest {
    type Err = StealthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut fields = std::collections::HashMap::new();
        let mut edits = Vec::new();
        for line in s.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| StealthError::Manifest(line.to_string()))?;
            match key {
                "quantized" | "removed" => edits.push(line.parse()?),
                _ => {
                    fields.insert(key, value);
                }
            }
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| StealthError::Manifest(format!("missing {k}")));
        let num = |k: &str| get(k)?.parse::<u64>().map_err(|_| StealthError::Manifest(k.to_string()));
        let (sa, sb) = get("suffix_bytes")?
            .split_once(':')
            .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
            .ok_or_else(|| StealthError::Manifest("suffix_bytes".into()))?;
        Ok(StealthManifest {
            mode: get("mode")?.to_string(),
            original_size: num("original_size")?,
            digest: get("md5")?.parse().map_err(|_| StealthError::Manifest("md5".into()))?,
            prefix_bytes: num("prefix_bytes")?,
            suffix_bytes: (sa, sb),
            pad_bytes: num("pad_bytes")?,
            fill: get("fill")?.parse()?,
            bytes_freed: num("bytes_freed")?,
            edits,
        })
    }
}

/// Tab-separated `label, size, md5` rows, the comparison a downloader sees.
pub fn table1_report(rows: &[(&str, &[u8])]) -> String {
    let mut out = String::from("# file\tsize\tmd5\n");
    for (label, data) in rows {
        out.push_str(&format!("{label}\t{}\t{}\n", data.len(), crate::md5::digest(data)));
    }
    out
}
