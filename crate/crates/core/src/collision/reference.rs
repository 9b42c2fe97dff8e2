//! The first published MD5 collision: two 128-byte messages with equal
//! digests, differing in six bytes.

use crate::md5::MessageBlock;

pub const MESSAGE_A: [u8; 128] = hex128(
    b"d131dd02c5e6eec4693d9a0698aff95c2fcab58712467eab4004583eb8fb7f89\
      55ad340609f4b30283e488832571415a085125e8f7cdc99fd91dbdf280373c5b\
      d8823e3156348f5bae6dacd436c919c6dd53e2b487da03fd02396306d248cda0\
      e99f33420f577ee8ce54b67080a80d1ec69821bcb6a8839396f9652b6ff72a70",
);

pub const MESSAGE_B: [u8; 128] = hex128(
    b"d131dd02c5e6eec4693d9a0698aff95c2fcab50712467eab4004583eb8fb7f89\
      55ad340609f4b30283e4888325f1415a085125e8f7cdc99fd91dbd7280373c5b\
      d8823e3156348f5bae6dacd436c919c6dd53e23487da03fd02396306d248cda0\
      e99f33420f577ee8ce54b67080280d1ec69821bcb6a8839396f965ab6ff72a70",
);

pub const DIGEST_HEX: &str = "79054025255fb1a26e4bc422aef54eb4";

const fn nibble(c: u8) -> u8 {
    match c {
        b'0'..=b'9' => c - b'0',
        b'a'..=b'f' => c - b'a' + 10,
        _ => panic!("bad hex digit"),
    }
}

const fn hex128(s: &[u8]) -> [u8; 128] {
    let mut out = [0u8; 128];
    let mut i = 0;
    let mut n = 0;
    while i < s.len() {
        let c = s[i];
        i += 1;
        if c == b' ' || c == b'\n' {
            continue;
        }
        let v = nibble(c);
        if n % 2 == 0 {
            out[n / 2] = v << 4;
        } else {
            out[n / 2] |= v;
        }
        n += 1;
    }
    assert!(n == 256);
    out
}

pub(crate) fn message_words() -> ([[u32; 16]; 2], [[u32; 16]; 2]) {
    let words = |m: &[u8; 128]| {
        [
            MessageBlock::from_slice(&m[..64]).unwrap().words(),
            MessageBlock::from_slice(&m[64..]).unwrap().words(),
        ]
    };
    (words(&MESSAGE_A), words(&MESSAGE_B))
}
