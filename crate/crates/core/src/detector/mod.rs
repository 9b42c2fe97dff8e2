//! Byte-level collision detection.
//!
//! Files are read as 16-bit byte-pair tokens. Classifiers are trained on
//! 256-byte windows that are half regular content and half collision
//! suffix. Scanning first keeps only runs of 64-token windows that share no
//! tokens with their neighbours, then classifies those.

mod bayes;
pub mod corpus;
mod model_file;
mod neural;
mod scan;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use bayes::BayesModel;
pub use model_file::{load_model, read_model, save_model, write_model};
pub use neural::{Neural, NeuralConfig, NeuralModel};
pub use scan::{
    evaluate, insert_collision_regions, parse_report, parse_truth, scan_file, Candidate, DetectionReport, Evaluation,
    ScanConfig,
};

/// Token vocabulary: every byte pair.
pub const VOCAB: usize = 1 << 16;
/// Classifier window in bytes.
pub const WINDOW_BYTES: usize = 256;
/// Similarity window in tokens.
pub const JS_WINDOW_TOKENS: usize = 64;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("not enough material: {0}")]
    InsufficientMaterial(String),
    #[error("training needs both classes")]
    SingleClass,
    #[error("window has {got} tokens, model expects {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("bad model file: {0}")]
    BadModel(String),
    #[error("bad report or truth file: {0}")]
    BadReport(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Big-endian byte pairs; a trailing odd byte is dropped.
pub fn tokenize(data: &[u8]) -> Vec<u16> {
    data.chunks_exact(2).map(|p| u16::from_be_bytes([p[0], p[1]])).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<u16>,
    /// Byte offset of the first token in its source.
    pub offset: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Clean,
    Collision,
}

impl Label {
    pub fn is_collision(self) -> bool {
        self == Label::Collision
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSample {
    pub seq: TokenSequence,
    pub label: Label,
}

/// `|A ∩ B| / |A ∪ B|` over the token sets; 1 when both are empty.
pub fn jaccard(a: &[u16], b: &[u16]) -> f64 {
    let set = |s: &[u16]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    };
    let (a, b) = (set(a), set(b));
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// `per_class` positives and as many negatives, shuffled.
///
/// Positives take their first half from the front half of `source` and their
/// second half from the concatenated suffixes; negatives come from the back
/// half of `source`, so the two never share source bytes.
pub fn make_training_set(
    source: &[u8],
    suffixes: &[&[u8]],
    per_class: usize,
    window_bytes: usize,
    seed: u64,
) -> Result<Vec<LabeledSample>, DetectorError> {
    let half = window_bytes / 2;
    let collision: Vec<u8> = suffixes.concat();
    if suffixes.is_empty() || collision.len() < half {
        return Err(DetectorError::InsufficientMaterial(format!(
            "{} suffix bytes, need at least {half}",
            collision.len()
        )));
    }
    let mid = source.len() / 2;
    if mid < window_bytes {
        return Err(DetectorError::InsufficientMaterial(format!(
            "{} source bytes, need at least {}",
            source.len(),
            2 * window_bytes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * per_class);
    for _ in 0..per_class {
        let at = rng.gen_range(0..=mid - half);
        let c = rng.gen_range(0..=collision.len() - half);
        let bytes = [&source[at..at + half], &collision[c..c + half]].concat();
        out.push(LabeledSample {
            seq: TokenSequence {
                tokens: tokenize(&bytes),
                offset: at as u64,
            },
            label: Label::Collision,
        });
        let at = mid + rng.gen_range(0..=source.len() - mid - window_bytes);
        out.push(LabeledSample {
            seq: TokenSequence {
                tokens: tokenize(&source[at..at + window_bytes]),
                offset: at as u64,
            },
            label: Label::Clean,
        });
    }
    // Fisher-Yates with the same stream keeps the set a function of the seed.
    for i in (1..out.len()).rev() {
        out.swap(i, rng.gen_range(0..=i));
    }
    Ok(out)
}

/// Hyperparameters for either classifier kind.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrainConfig {
    Bayes,
    Neural(NeuralConfig),
}

/// Per-epoch record kept with a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: u32,
    /// Mean training loss per epoch.
    pub losses: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Classifier {
    Bayes(BayesModel),
    Neural(NeuralModel<f32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub classifier: Classifier,
    pub meta: TrainingMeta,
}

impl ClassifierModel {
    pub fn kind(&self) -> &'static str {
        match self.classifier {
            Classifier::Bayes(_) => "bayes",
            Classifier::Neural(_) => "neural",
        }
    }

    /// Tokens the classifier wants per window; Bayes takes any length.
    pub fn window_tokens(&self) -> Option<usize> {
        match &self.classifier {
            Classifier::Bayes(_) => None,
            Classifier::Neural(m) => Some(m.window_tokens),
        }
    }

    /// Label and positive-class probability.
    pub fn predict(&self, tokens: &[u16]) -> Result<(Label, f64), DetectorError> {
        let score = match &self.classifier {
            Classifier::Bayes(m) => m.score(tokens),
            Classifier::Neural(m) => f64::from(m.score(tokens)?),
        };
        let label = if score >= 0.5 { Label::Collision } else { Label::Clean };
        Ok((label, score))
    }

    /// Fraction of samples labelled correctly.
    pub fn accuracy(&self, samples: &[LabeledSample]) -> Result<f64, DetectorError> {
        let mut right = 0usize;
        for s in samples {
            right += usize::from(self.predict(&s.seq.tokens)?.0 == s.label);
        }
        Ok(right as f64 / samples.len().max(1) as f64)
    }
}

pub fn train(config: TrainConfig, samples: &[LabeledSample]) -> Result<ClassifierModel, DetectorError> {
    let positives = samples.iter().filter(|s| s.label.is_collision()).count();
    if positives == 0 || positives == samples.len() {
        return Err(DetectorError::SingleClass);
    }
    Ok(match config {
        TrainConfig::Bayes => ClassifierModel {
            classifier: Classifier::Bayes(BayesModel::train(samples)),
            meta: TrainingMeta::default(),
        },
        TrainConfig::Neural(cfg) => {
            let (model, losses) = NeuralModel::<f32>::train(samples, &cfg)?;
            ClassifierModel {
                classifier: Classifier::Neural(model),
                meta: TrainingMeta {
                    seed: cfg.seed,
                    epochs: cfg.epochs,
                    losses,
                },
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize(&[0x01, 0x02]), vec![258]);
        assert_eq!(tokenize(&[]), Vec::<u16>::new());
        assert_eq!(tokenize(&[0xff, 0xff, 0x00]), vec![65535]);
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard(&[1, 2, 3], &[2, 3, 4]), 0.5);
        assert_eq!(jaccard(&[1, 1, 2], &[2, 1]), 1.0);
        assert_eq!(jaccard(&[1], &[2]), 0.0);
        assert_eq!(jaccard(&[], &[]), 1.0);
    }

    #[test]
    fn training_set_is_balanced_and_seeded() {
        let source: Vec<u8> = (0..8192u32).map(|i| (i % 7) as u8).collect();
        let suffix = [0xabu8; 128];
        let set = make_training_set(&source, &[&suffix], 20, 256, 3).unwrap();
        assert_eq!(set.len(), 40);
        assert_eq!(set.iter().filter(|s| s.label.is_collision()).count(), 20);
        for s in &set {
            assert_eq!(s.seq.tokens.len(), 128);
            let has_suffix = s.seq.tokens.contains(&0xabab);
            assert_eq!(has_suffix, s.label.is_collision());
        }
        assert_eq!(set, make_training_set(&source, &[&suffix], 20, 256, 3).unwrap());
        assert!(make_training_set(&source, &[], 20, 256, 3).is_err());
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(matches!(train(TrainConfig::Bayes, &[]), Err(DetectorError::SingleClass)));
    }
}
