use md5::Digest as _;
use proptest::prelude::*;
use samesum::collision::pool::{ipc_pool, pool_prefix};
use samesum::collision::reference::{DIGEST_HEX, MESSAGE_A, MESSAGE_B};
use samesum::collision::{find_ipc_collision, verify_bytes, verify_collision, CollisionError, PrefixContext};
use samesum::md5::digest;

fn oracle(parts: &[&[u8]]) -> [u8; 16] {
    let mut h = md5::Md5::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

#[test]
fn reference_pair_collides_under_the_oracle() {
    assert_ne!(MESSAGE_A, MESSAGE_B);
    assert_eq!(oracle(&[&MESSAGE_A]), oracle(&[&MESSAGE_B]));
    assert_eq!(digest(&MESSAGE_A).to_hex(), DIGEST_HEX);
}

#[test]
fn every_pool_entry_collides_under_the_oracle() {
    let pool = ipc_pool();
    assert!(!pool.is_empty());
    for (i, e) in pool.iter().enumerate() {
        assert_eq!(e.prefix, pool_prefix(i as u64), "entry {i}");
        assert_ne!(e.s_a, e.s_b, "entry {i}");
        assert_eq!(oracle(&[&e.prefix, &e.s_a]), oracle(&[&e.prefix, &e.s_b]), "entry {i}");
        assert!(e.pair().verify(&e.context()), "entry {i}");
    }
}

#[test]
fn search_rejects_unaligned_prefixes_and_honours_the_budget() {
    let ctx = PrefixContext {
        prefix_len_bytes: 65,
        ..PrefixContext::initial()
    };
    assert_eq!(find_ipc_collision(&ctx, 1 << 20, 0), Err(CollisionError::Unaligned(65)));
    assert!(matches!(
        find_ipc_collision(&PrefixContext::initial(), 1000, 0),
        Err(CollisionError::BudgetExhausted(_))
    ));
}

#[test]
fn file_verification_reports_size_and_first_difference() {
    let e = &ipc_pool()[0];
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    std::fs::write(&a, [&e.prefix[..], &e.s_a].concat()).unwrap();
    std::fs::write(&b, [&e.prefix[..], &e.s_b].concat()).unwrap();
    let r = verify_collision(&a, &b).unwrap();
    assert!(r.is_collision());
    let first = r.first_diff_offset.unwrap() as usize;
    assert!(first >= e.prefix.len() && first < e.prefix.len() + 128);
    assert_eq!(r.size_a, (e.prefix.len() + 128) as u64);

    let same = verify_bytes(&e.s_a, &e.s_a);
    assert!(same.md5_equal && !same.is_collision());
    let short = verify_bytes(&e.s_a, &e.s_a[..100]);
    assert_eq!(short.first_diff_offset, Some(100));
    assert!(!short.size_equal);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// Equal chaining values stay equal under any common suffix.
    #[test]
    fn shared_suffixes_preserve_the_collision(
        which in any::<prop::sample::Index>(),
        tail in prop::collection::vec(any::<u8>(), 0..3000),
    ) {
        let pool = ipc_pool();
        let e = &pool[which.index(pool.len())];
        let a = digest(&[&e.prefix[..], &e.s_a, &tail].concat());
        let b = digest(&[&e.prefix[..], &e.s_b, &tail].concat());
        prop_assert_eq!(a, b);
        prop_assert_eq!(a.0, oracle(&[&e.prefix, &e.s_b, &tail]));
    }
}
