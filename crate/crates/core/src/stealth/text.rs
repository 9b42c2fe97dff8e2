//! Whitespace and stopword trimming for text payloads.

use super::{CompressionOutcome, ManifestEntry, StealthError};

pub const DEFAULT_STOPWORDS: &[&str] = &["very", "really", "just", "quite", "actually", "basically"];

/// Free at least `min_bytes_freed` bytes. Repeated whitespace goes first,
/// each run keeping its first character, then whole stopwords together with
/// the space after them. Spans in the manifest are offsets into `data`.
pub fn trim_text(data: &[u8], min_bytes_freed: u64, stopwords: &[&str]) -> Result<CompressionOutcome, StealthError> {
    let mut removed: Vec<(usize, usize)> = Vec::new();
    let mut freed = 0u64;

    let mut i = 0;
    while i < data.len() && freed < min_bytes_freed {
        if data[i].is_ascii_whitespace() {
            let run = data[i..].iter().take_while(|b| b.is_ascii_whitespace()).count();
            if run > 1 {
                removed.push((i + 1, run - 1));
                freed += run as u64 - 1;
            }
            i += run;
        } else {
            i += 1;
        }
    }

    let mut i = 0;
    while i < data.len() && freed < min_bytes_freed {
        let word_len = data[i..].iter().take_while(|b| !b.is_ascii_whitespace()).count();
        if word_len == 0 {
            i += 1;
            continue;
        }
        let word = &data[i..i + word_len];
        let at_word_start = i == 0 || data[i - 1].is_ascii_whitespace();
        let followed_by_space = data.get(i + word_len) == Some(&b' ');
        if at_word_start && followed_by_space && stopwords.iter().any(|s| s.as_bytes().eq_ignore_ascii_case(word)) {
            // The word and one space; any collapsed run starts past that space.
            removed.push((i, word_len + 1));
            freed += word_len as u64 + 1;
        }
        i += word_len;
    }

    if freed < min_bytes_freed {
        return Err(StealthError::InsufficientCapacity {
            wanted: min_bytes_freed,
            available: freed,
        });
    }
    removed.sort_unstable();
    let mut new_file = Vec::with_capacity(data.len() - freed as usize);
    let mut pos = 0;
    for &(offset, len) in &removed {
        new_file.extend_from_slice(&data[pos..offset]);
        pos = offset + len;
    }
    new_file.extend_from_slice(&data[pos..]);
    Ok(CompressionOutcome {
        new_file,
        bytes_freed: freed,
        manifest: removed
            .into_iter()
            .map(|(offset, len)| ManifestEntry::Removed {
                offset: offset as u64,
                len: len as u64,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapses_runs_first() {
        let out = trim_text(b"a   b\n\n c", 2, DEFAULT_STOPWORDS).unwrap();
        assert_eq!(out.new_file, b"a b\n\n c");
        assert_eq!(out.bytes_freed, 2);
        let out = trim_text(b"a   b\n\n c", 4, DEFAULT_STOPWORDS).unwrap();
        assert_eq!(out.new_file, b"a b\nc");
    }

    #[test]
    fn falls_back_to_stopwords() {
        let out = trim_text(b"it is very  good, really good", 7, DEFAULT_STOPWORDS).unwrap();
        assert_eq!(out.new_file, b"it is good, good");
        assert_eq!(out.manifest_delta(), out.bytes_freed);
    }

    #[test]
    fn stopwords_must_be_whole_words() {
        let err = trim_text(b"everyvery justice", 1, DEFAULT_STOPWORDS).unwrap_err();
        assert!(matches!(err, StealthError::InsufficientCapacity { available: 0, .. }));
    }
}
