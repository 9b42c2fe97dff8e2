use md5::Digest as _;
use proptest::prelude::*;
use samesum::md5::{chain, compress, digest, digest_reader, digest_stream, IhvState, Md5, MessageBlock};

fn oracle(data: &[u8]) -> [u8; 16] {
    md5::Md5::digest(data).into()
}

const RFC: [(&str, &str); 7] = [
    ("", "d41d8cd98f00b204e9800998ecf8427e"),
    ("a", "0cc175b9c0f1b6a831c399e269772661"),
    ("abc", "900150983cd24fb0d6963f7d28e17f72"),
    ("message digest", "f96b697d7cb7938d525a2f31aaf161d0"),
    ("abcdefghijklmnopqrstuvwxyz", "c3fcd3d76192e4007dfb496cca67e13b"),
    (
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789",
        "d174ab98d277d9f5a5611c2c9f419d9f",
    ),
    (
        "12345678901234567890123456789012345678901234567890123456789012345678901234567890",
        "57edf4a22be3c955ac49da2e2107b67a",
    ),
];

#[test]
fn rfc_vectors() {
    for (input, hex) in RFC {
        let d = digest(input.as_bytes());
        assert_eq!(d.to_hex(), hex, "{input:?}");
        assert_eq!(d.0, oracle(input.as_bytes()), "{input:?}");
    }
}

#[test]
fn padding_boundaries_match_the_oracle() {
    let data: Vec<u8> = (0..300u32).map(|i| (i * 31 + 7) as u8).collect();
    for len in 0..data.len() {
        assert_eq!(digest(&data[..len]).0, oracle(&data[..len]), "len {len}");
    }
}

#[test]
fn reader_counts_bytes() {
    let data = vec![0xa5u8; (1 << 20) + 17];
    let (d, n) = digest_reader(&data[..]).unwrap();
    assert_eq!(n, data.len() as u64);
    assert_eq!(d.0, oracle(&data));
}

proptest! {
    #[test]
    fn one_shot_matches_oracle(data in prop::collection::vec(any::<u8>(), 0..2048)) {
        prop_assert_eq!(digest(&data).0, oracle(&data));
    }

    #[test]
    fn any_chunking_matches_one_shot(
        data in prop::collection::vec(any::<u8>(), 0..4096),
        cuts in prop::collection::vec(any::<prop::sample::Index>(), 0..12),
    ) {
        let mut at: Vec<usize> = cuts.iter().map(|c| c.index(data.len() + 1)).collect();
        at.push(0);
        at.push(data.len());
        at.sort_unstable();
        let chunks: Vec<&[u8]> = at.windows(2).map(|w| &data[w[0]..w[1]]).collect();
        prop_assert_eq!(digest_stream(&chunks), digest(&data));
    }

    #[test]
    fn compress_matches_oracle(words in any::<[u32; 4]>(), block in prop::collection::vec(any::<u8>(), 64)) {
        let block: [u8; 64] = block.try_into().unwrap();
        let mut want = words;
        md5::block_api::compress(&mut want, &[block]);
        let got = compress(IhvState::from_words(words), &MessageBlock(block));
        prop_assert_eq!(got.words(), want);
    }

    #[test]
    fn resuming_from_a_chained_state(data in prop::collection::vec(any::<u8>(), 0..1024), blocks in 0usize..8) {
        let cut = (64 * blocks).min(data.len() / 64 * 64);
        let state = chain(IhvState::INITIAL, &data[..cut]).unwrap();
        let mut h = Md5::with_state(state, cut as u64);
        h.update(&data[cut..]);
        prop_assert_eq!(h.finalize(), digest(&data));
    }
}
