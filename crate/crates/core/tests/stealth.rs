use proptest::prelude::*;
use samesum::collision::pool::ipc_pool;
use samesum::collision::{CpcSuffixBundle, SuffixSide};
use samesum::md5::digest;
use samesum::stealth::{
    assemble_cpc, pad_to_size, quantize_weights, trim_text, DType, FillPolicy, ManifestEntry, StealthError,
    StealthManifest, ToyWeightFile, DEFAULT_STOPWORDS,
};

/// `(original, converted)` for every element stored as f16 after quantizing.
/// Conversion always takes the trailing elements of the file.
fn converted(original: &ToyWeightFile, new_file: &[u8]) -> Vec<(f32, f32)> {
    let before: Vec<f32> = original.tensors.iter().flat_map(|t| t.values()).collect();
    let after = ToyWeightFile::parse(new_file).unwrap();
    let halves: Vec<f32> = after
        .tensors
        .iter()
        .filter(|t| t.dtype == DType::F16)
        .flat_map(|t| t.values())
        .collect();
    before[before.len() - halves.len()..].iter().copied().zip(halves).collect()
}

fn within_half_ulp(x: f32, y: f32) -> bool {
    let normal = x.abs() >= 2f32.powi(-14) && x.abs() <= 65504.0;
    !normal || ((y - x) / x).abs() <= 2f32.powi(-11)
}

#[test]
fn freeing_1536_bytes_converts_768_elements() {
    let w = ToyWeightFile::synthetic(3, 2, 768);
    let q = quantize_weights(&w, 1536).unwrap();
    assert_eq!(q.converted_elements(), 768);
    assert_eq!(q.bytes_freed, 1536);
    let pairs = converted(&w, &q.new_file);
    assert_eq!(pairs.len(), 768);
    assert!(pairs.iter().all(|&(x, y)| within_half_ulp(x, y)));
}

#[test]
fn asking_for_more_than_the_file_holds_fails() {
    let w = ToyWeightFile::synthetic(1, 1, 8);
    assert!(matches!(
        quantize_weights(&w, w.byte_len()),
        Err(StealthError::InsufficientCapacity { .. })
    ));
}

#[test]
fn cpc_assembly_keeps_digest_and_size() {
    let e = &ipc_pool()[2];
    let side = |s: &[u8; 128]| SuffixSide {
        s_r: Vec::new(),
        s_r_bits: 0,
        s_b: Vec::new(),
        s_b_bits: 0,
        s_c: vec![s[..64].try_into().unwrap(), s[64..].try_into().unwrap()],
    };
    let bundle = CpcSuffixBundle {
        k: 16,
        a: side(&e.s_a),
        b: side(&e.s_b),
        prefix_digests: None,
    };
    let target = e.prefix.len() as u64 + 128 + 1000;
    let pair = assemble_cpc(&e.prefix, &e.prefix, &bundle, target, FillPolicy::Random { seed: 9 }).unwrap();
    assert_eq!(pair.col_c.len() as u64, target);
    assert_eq!(pair.col_p.len() as u64, target);
    assert_eq!(digest(&pair.col_c), digest(&pair.col_p));
    assert_ne!(pair.col_c, pair.col_p);
    assert_eq!(pair.manifest.to_string().parse::<StealthManifest>().unwrap(), pair.manifest);

    let swapped = CpcSuffixBundle {
        b: side(&e.s_a),
        ..bundle.clone()
    };
    let other = [&e.prefix[..64], &[0u8; 64][..]].concat();
    assert!(matches!(
        assemble_cpc(&e.prefix[..128], &other, &swapped, target, FillPolicy::Zeros),
        Err(StealthError::BundleMismatch) | Err(StealthError::LengthMismatch(..))
    ));
    assert!(matches!(
        assemble_cpc(&e.prefix, &e.prefix, &bundle, 10, FillPolicy::Zeros),
        Err(StealthError::TooLarge { .. })
    ));
}

proptest! {
    #[test]
    fn quantizing_frees_what_it_reports(
        seed in any::<u64>(),
        layers in 1usize..4,
        width in 4usize..64,
        want in 1u64..4000,
    ) {
        let w = ToyWeightFile::synthetic(seed, layers, width);
        prop_assert_eq!(ToyWeightFile::parse(&w.to_bytes()).unwrap(), w.clone());
        match quantize_weights(&w, want) {
            Ok(q) => {
                prop_assert!(q.bytes_freed >= want);
                prop_assert_eq!(q.manifest_delta(), q.bytes_freed);
                prop_assert_eq!(q.new_file.len() as u64, w.byte_len() - q.bytes_freed);
                let pairs = converted(&w, &q.new_file);
                prop_assert_eq!(pairs.len() as u64, q.converted_elements());
                prop_assert!(pairs.iter().all(|&(x, y)| within_half_ulp(x, y)));
            }
            Err(StealthError::InsufficientCapacity { available, .. }) => prop_assert!(available < want),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn trimming_removes_exactly_the_listed_spans(
        words in prop::collection::vec(prop::sample::select(vec!["very", "model", "just", "weights", " ", "\n\n", "quite"]), 0..200),
        want in 1u64..300,
    ) {
        let text: String = words.join(" ");
        let data = text.as_bytes();
        match trim_text(data, want, DEFAULT_STOPWORDS) {
            Ok(o) => {
                prop_assert!(o.bytes_freed >= want);
                prop_assert_eq!(o.new_file.len() as u64, data.len() as u64 - o.bytes_freed);
                let mut keep = vec![true; data.len()];
                for e in &o.manifest {
                    let ManifestEntry::Removed { offset, len } = *e else { panic!("{e:?}") };
                    for k in &mut keep[offset as usize..(offset + len) as usize] {
                        prop_assert!(*k, "overlapping spans");
                        *k = false;
                    }
                }
                let rebuilt: Vec<u8> = data.iter().zip(&keep).filter(|(_, &k)| k).map(|(&b, _)| b).collect();
                prop_assert_eq!(rebuilt, o.new_file);
            }
            Err(StealthError::InsufficientCapacity { available, .. }) => prop_assert!(available < want),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn padding_reaches_the_target(data in prop::collection::vec(any::<u8>(), 0..500), extra in 0u64..500, seed in any::<u64>()) {
        let target = data.len() as u64 + extra;
        let fill = FillPolicy::Random { seed };
        let out = pad_to_size(&data, target, fill).unwrap();
        prop_assert_eq!(out.len() as u64, target);
        prop_assert_eq!(&out[..data.len()], &data[..]);
        prop_assert_eq!(out, pad_to_size(&data, target, fill).unwrap());
        prop_assert_eq!(fill.to_string().parse::<FillPolicy>().unwrap(), fill);
    }
}
