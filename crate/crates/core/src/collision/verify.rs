//! Compare two files the way a downloader would: digest and size.

use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::Path;

use crate::md5::{Digest, Md5};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CollisionReport {
    pub md5_equal: bool,
    pub size_equal: bool,
    /// First byte offset where the files differ; `None` iff they are
    /// byte-identical. A shorter file differs at its end.
    pub first_diff_offset: Option<u64>,
    pub digest_a: Digest,
    pub digest_b: Digest,
    pub size_a: u64,
    pub size_b: u64,
}

impl CollisionReport {
    /// Equal digests and sizes but different bytes.
    pub fn is_collision(&self) -> bool {
        self.md5_equal && self.size_equal && self.first_diff_offset.is_some()
    }
}

pub fn verify_collision(path_a: impl AsRef<Path>, path_b: impl AsRef<Path>) -> io::Result<CollisionReport> {
    let a = BufReader::new(File::open(path_a)?);
    let b = BufReader::new(File::open(path_b)?);
    compare_streams(a, b)
}

pub fn verify_bytes(a: &[u8], b: &[u8]) -> CollisionReport {
    compare_streams(a, b).expect("in-memory reads do not fail")
}

fn compare_streams(mut a: impl Read, mut b: impl Read) -> io::Result<CollisionReport> {
    const CHUNK: usize = 1 << 16;
    let (mut ha, mut hb) = (Md5::new(), Md5::new());
    let (mut buf_a, mut buf_b) = (vec![0u8; CHUNK], vec![0u8; CHUNK]);
    let (mut size_a, mut size_b) = (0u64, 0u64);
    let mut first_diff = None;
    loop {
        let na = fill(&mut a, &mut buf_a)?;
        let nb = fill(&mut b, &mut buf_b)?;
        if first_diff.is_none() {
            let common = na.min(nb);
            if let Some(i) = (0..common).find(|&i| buf_a[i] != buf_b[i]) {
                first_diff = Some(size_a + i as u64);
            } else if na != nb {
                first_diff = Some(size_a + common as u64);
            }
        }
        ha.update(&buf_a[..na]);
        hb.update(&buf_b[..nb]);
        size_a += na as u64;
        size_b += nb as u64;
        if na == 0 && nb == 0 {
            break;
        }
    }
    let (digest_a, digest_b) = (ha.finalize(), hb.finalize());
    Ok(CollisionReport {
        md5_equal: digest_a == digest_b,
        size_equal: size_a == size_b,
        first_diff_offset: first_diff,
        digest_a,
        digest_b,
        size_a,
        size_b,
    })
}

/// Read until `buf` is full or the stream ends, so both sides advance in
/// lockstep.
fn fill(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::reference::{MESSAGE_A, MESSAGE_B};

    #[test]
    fn identical_inputs() {
        let r = verify_bytes(b"same", b"same");
        assert!(r.md5_equal && r.size_equal);
        assert_eq!(r.first_diff_offset, None);
        assert!(!r.is_collision());
    }

    #[test]
    fn different_lengths() {
        let r = verify_bytes(b"abc", b"abcd");
        assert!(!r.size_equal && !r.md5_equal);
        assert_eq!(r.first_diff_offset, Some(3));
    }

    #[test]
    fn published_pair_is_a_collision() {
        let r = verify_bytes(&MESSAGE_A, &MESSAGE_B);
        assert!(r.is_collision());
        assert_eq!(r.first_diff_offset, Some(19));
    }
}
