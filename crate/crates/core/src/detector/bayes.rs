//! Multinomial naive Bayes over byte-pair tokens with add-one smoothing.

use super::{LabeledSample, VOCAB};

#[derive(Clone, Debug, PartialEq)]
pub struct BayesModel {
    /// Token counts, `[clean, collision]`.
    pub counts: [Vec<u32>; 2],
    /// Training windows per class.
    pub windows: [u64; 2],
    log_prob: [Vec<f64>; 2],
}

impl BayesModel {
    pub fn train(samples: &[LabeledSample]) -> Self {
        let mut counts = [vec![0u32; VOCAB], vec![0u32; VOCAB]];
        let mut windows = [0u64; 2];
        for s in samples {
            let c = usize::from(s.label.is_collision());
            windows[c] += 1;
            for &t in &s.seq.tokens {
                counts[c][usize::from(t)] += 1;
            }
        }
        Self::from_counts(counts, windows)
    }

    pub fn from_counts(counts: [Vec<u32>; 2], windows: [u64; 2]) -> Self {
        let log_prob = std::array::from_fn(|c| {
            let total: u64 = counts[c].iter().map(|&n| u64::from(n)).sum();
            let denom = (total + VOCAB as u64) as f64;
            counts[c].iter().map(|&n| ((f64::from(n) + 1.0) / denom).ln()).collect()
        });
        BayesModel {
            counts,
            windows,
            log_prob,
        }
    }

    /// Smoothed `P(token | class)` as a full distribution.
    pub fn distribution(&self, class: usize) -> impl Iterator<Item = f64> + '_ {
        self.log_prob[class].iter().map(|l| l.exp())
    }

    /// Posterior log-probabilities of `[clean, collision]`, normalised.
    pub fn log_posterior(&self, tokens: &[u16]) -> [f64; 2] {
        let total = (self.windows[0] + self.windows[1]) as f64;
        let mut lp: [f64; 2] = std::array::from_fn(|c| {
            let prior = (self.windows[c] as f64 / total).ln();
            prior + tokens.iter().map(|&t| self.log_prob[c][usize::from(t)]).sum::<f64>()
        });
        let m = lp[0].max(lp[1]);
        let norm = m + ((lp[0] - m).exp() + (lp[1] - m).exp()).ln();
        lp.iter_mut().for_each(|l| *l -= norm);
        lp
    }

    /// Posterior probability of the collision class.
    pub fn score(&self, tokens: &[u16]) -> f64 {
        self.log_posterior(tokens)[1].exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{Label, TokenSequence};

    fn sample(tokens: Vec<u16>, label: Label) -> LabeledSample {
        LabeledSample {
            seq: TokenSequence { tokens, offset: 0 },
            label,
        }
    }

    fn toy() -> BayesModel {
        BayesModel::train(&[
            sample(vec![1, 2, 3, 0xdead], Label::Collision),
            sample(vec![1, 2, 3, 4], Label::Clean),
            sample(vec![4, 4, 5, 1], Label::Clean),
        ])
    }

    #[test]
    fn class_distributions_sum_to_one() {
        let m = toy();
        for c in 0..2 {
            let sum: f64 = m.distribution(c).sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn distinctive_token_dominates() {
        let m = toy();
        assert!(m.score(&[0xdead; 8]) > 0.5);
        assert!(m.score(&[4, 4, 4, 4]) < 0.5);
        let lp = m.log_posterior(&[1, 0xdead]);
        assert!((lp[0].exp() + lp[1].exp() - 1.0).abs() < 1e-12);
    }
}
