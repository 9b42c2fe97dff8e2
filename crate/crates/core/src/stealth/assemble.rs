//! Putting payload, collision suffix and pad together.

use super::{fill_bytes, FillPolicy, StealthError, StealthManifest};
use crate::collision::bundle::BitWriter;
use crate::collision::{find_ipc_collision, CpcSuffixBundle, PrefixContext};
use crate::md5::{chain, digest, IhvState};

/// A clean file and its poisoned twin with equal size and digest.
#[derive(Clone, Debug)]
pub struct StealthPair {
    pub col_c: Vec<u8>,
    pub col_p: Vec<u8>,
    pub manifest: StealthManifest,
}

#[derive(Clone, Copy, Debug)]
pub struct IpcDemoConfig {
    pub target_size: u64,
    /// Compression budget for the collision search.
    pub budget: u64,
    pub seed: u64,
    pub fill: FillPolicy,
}

/// `P || S || T` and `P || S' || T`, where `P` is the payload zero-padded to
/// a block boundary and `(S, S')` is a fresh collision for it.
///
/// Both outputs carry the same payload; this demonstrates the size and digest
/// mechanics, not a useful poisoning.
pub fn assemble_ipc_demo(payload: &[u8], config: &IpcDemoConfig) -> Result<StealthPair, StealthError> {
    let prefix_len = (payload.len() as u64).div_ceil(64) * 64;
    let needed = prefix_len + 128;
    if needed > config.target_size {
        return Err(StealthError::TooLarge {
            needed,
            target: config.target_size,
        });
    }
    let mut prefix = payload.to_vec();
    prefix.resize(prefix_len as usize, 0);
    let ctx = PrefixContext::from_prefix(&prefix)?;
    let pair = find_ipc_collision(&ctx, config.budget, config.seed)?;
    let pad = fill_bytes(config.target_size - needed, config.fill);
    let build = |s: &[u8; 128]| [&prefix[..], s, &pad].concat();
    let (col_c, col_p) = (build(&pair.s_a), build(&pair.s_b));
    let d = digest(&col_c);
    if d != digest(&col_p) {
        return Err(crate::collision::CollisionError::Unverified.into());
    }
    Ok(StealthPair {
        col_c,
        col_p,
        manifest: StealthManifest {
            mode: "ipc".into(),
            original_size: config.target_size,
            digest: d,
            prefix_bytes: prefix_len,
            suffix_bytes: (128, 128),
            pad_bytes: pad.len() as u64,
            fill: config.fill,
            bytes_freed: 0,
            edits: Vec::new(),
        },
    })
}

/// `C || S_r || S_b || S_c || T` for each side of a chosen-prefix bundle.
///
/// Both sides must end on the same block boundary and reach the same
/// chaining value; the shared pad then keeps the digests equal.
pub fn assemble_cpc(
    clean: &[u8],
    poisoned: &[u8],
    bundle: &CpcSuffixBundle,
    target_size: u64,
    fill: FillPolicy,
) -> Result<StealthPair, StealthError> {
    if let Some((da, db)) = bundle.prefix_digests {
        if digest(clean) != da || digest(poisoned) != db {
            return Err(StealthError::BundleMismatch);
        }
    }
    let side = |prefix: &[u8], s: &crate::collision::SuffixSide| -> Result<Vec<u8>, StealthError> {
        let mut w = BitWriter::default();
        w.push(prefix, prefix.len() as u32 * 8);
        let (suffix, bits) = s.suffix_bits();
        w.push(&suffix, bits as u32);
        if w.len % 512 != 0 {
            return Err(StealthError::Unaligned(w.len));
        }
        Ok(w.bytes)
    };
    let a = side(clean, &bundle.a)?;
    let b = side(poisoned, &bundle.b)?;
    if a.len() != b.len() {
        return Err(StealthError::LengthMismatch(a.len() as u64, b.len() as u64));
    }
    let ihv = |data: &[u8]| chain(IhvState::default(), data).map_err(|_| StealthError::Unaligned(data.len() as u64 * 8));
    if ihv(&a)? != ihv(&b)? {
        return Err(StealthError::BundleMismatch);
    }
    let needed = a.len() as u64;
    if needed > target_size {
        return Err(StealthError::TooLarge {
            needed,
            target: target_size,
        });
    }
    let pad = fill_bytes(target_size - needed, fill);
    let col_c = [&a[..], &pad].concat();
    let col_p = [&b[..], &pad].concat();
    let d = digest(&col_c);
    debug_assert_eq!(d, digest(&col_p));
    Ok(StealthPair {
        manifest: StealthManifest {
            mode: "cpc".into(),
            original_size: target_size,
            digest: d,
            prefix_bytes: clean.len() as u64,
            suffix_bytes: (needed - clean.len() as u64, needed - poisoned.len() as u64),
            pad_bytes: pad.len() as u64,
            fill,
            bytes_freed: 0,
            edits: Vec::new(),
        },
        col_c,
        col_p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::pool::ipc_pool;
    use crate::collision::SuffixSide;

    /// Bits `from..from + len` of `data`, repacked from bit 0.
    fn bits(data: &[u8], from: usize, len: usize) -> Vec<u8> {
        let mut out = vec![0u8; len.div_ceil(8)];
        for j in 0..len {
            let i = from + j;
            out[j / 8] |= (data[i / 8] >> (7 - i % 8) & 1) << (7 - j % 8);
        }
        out
    }

    /// A bundle for two empty prefixes: the one-block prefix of the first
    /// pool entry split into `S_r` and `S_b`, then its collision blocks.
    fn pool_bundle(s_r_bits: u32) -> CpcSuffixBundle {
        let e = &ipc_pool()[0];
        assert_eq!(e.prefix.len(), 64);
        let side = |s: &[u8; 128]| SuffixSide {
            s_r: bits(&e.prefix, 0, s_r_bits as usize),
            s_r_bits,
            s_b: bits(&e.prefix, 447, 65),
            s_b_bits: 65,
            s_c: s.chunks(64).map(|c| c.try_into().unwrap()).collect(),
        };
        CpcSuffixBundle {
            k: 1,
            a: side(&e.s_a),
            b: side(&e.s_b),
            prefix_digests: None,
        }
    }

    #[test]
    fn cpc_assembly_with_an_engine_collision() {
        let pair = assemble_cpc(b"", b"", &pool_bundle(447), 1000, FillPolicy::Zeros).unwrap();
        assert_eq!(pair.col_c.len(), 1000);
        assert_eq!(pair.col_p.len(), 1000);
        assert_ne!(pair.col_c, pair.col_p);
        assert_eq!(digest(&pair.col_c), digest(&pair.col_p));
        assert_eq!(pair.col_c[..64], ipc_pool()[0].prefix[..]);
        assert_eq!(pair.manifest.suffix_bytes, (192, 192));
    }

    #[test]
    fn cpc_rejects_misaligned_and_mismatched_bundles() {
        assert!(matches!(
            assemble_cpc(b"", b"", &pool_bundle(448), 1000, FillPolicy::Zeros),
            Err(StealthError::Unaligned(1537))
        ));
        let mut wrong = pool_bundle(447);
        wrong.b.s_c.swap(0, 1);
        assert!(matches!(
            assemble_cpc(b"", b"", &wrong, 1000, FillPolicy::Zeros),
            Err(StealthError::BundleMismatch)
        ));
        let mut declared = pool_bundle(447);
        declared.prefix_digests = Some((digest(b"x"), digest(b"")));
        assert!(matches!(
            assemble_cpc(b"", b"", &declared, 1000, FillPolicy::Zeros),
            Err(StealthError::BundleMismatch)
        ));
    }

    #[test]
    fn ipc_demo_rejects_small_targets_before_searching() {
        let cfg = IpcDemoConfig {
            target_size: 191,
            budget: u64::MAX,
            seed: 1,
            fill: FillPolicy::Zeros,
        };
        assert!(matches!(
            assemble_ipc_demo(&[7; 60], &cfg),
            Err(StealthError::TooLarge { needed: 192, target: 191 })
        ));
    }
}
