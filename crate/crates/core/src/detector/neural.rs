//! Token embedding, one tanh recurrent layer, mean pooling and a sigmoid
//! output, trained by per-sample gradient descent on cross-entropy.

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DetectorError, LabeledSample, VOCAB};

/// The model as stored and used for scanning.
pub type Neural = NeuralModel<f32>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeuralConfig {
    pub embed: usize,
    pub hidden: usize,
    pub epochs: u32,
    pub lr: f64,
    pub seed: u64,
    pub window_tokens: usize,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        NeuralConfig {
            embed: 32,
            hidden: 64,
            epochs: 5,
            lr: 0.02,
            seed: 0,
            window_tokens: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuralModel<F> {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub window_tokens: usize,
    /// `vocab x embed`, row per token.
    pub emb: Vec<F>,
    /// `hidden x embed`.
    pub wx: Vec<F>,
    /// `hidden x hidden`.
    pub wh: Vec<F>,
    pub b: Vec<F>,
    pub w: Vec<F>,
    pub c: F,
}

/// Gradients; embedding rows are sparse, one entry per distinct token.
pub struct Grads<F> {
    pub emb: Vec<(usize, Vec<F>)>,
    pub wx: Vec<F>,
    pub wh: Vec<F>,
    pub b: Vec<F>,
    pub w: Vec<F>,
    pub c: F,
}

fn cast<F: Float>(x: f64) -> F {
    F::from(x).unwrap()
}

impl<F: Float> NeuralModel<F> {
    pub fn new(vocab: usize, embed: usize, hidden: usize, window_tokens: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize, scale: f64| -> Vec<F> { (0..n).map(|_| cast(rng.gen_range(-scale..scale))).collect() };
        let emb = uniform(vocab * embed, 0.1);
        let wx = uniform(hidden * embed, 1.0 / (embed as f64).sqrt());
        let wh = uniform(hidden * hidden, 0.5 / (hidden as f64).sqrt());
        let w = uniform(hidden, 1.0 / (hidden as f64).sqrt());
        NeuralModel {
            vocab,
            embed,
            hidden,
            window_tokens,
            emb,
            wx,
            wh,
            b: vec![F::zero(); hidden],
            w,
            c: F::zero(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.emb.len() + self.wx.len() + self.wh.len() + self.b.len() + self.w.len() + 1
    }

    /// Parameters in storage order: emb, wx, wh, b, w, c.
    pub fn flat(&self) -> Vec<F> {
        [&self.emb[..], &self.wx, &self.wh, &self.b, &self.w, &[self.c]].concat()
    }

    pub fn set_flat(&mut self, p: &[F]) {
        assert_eq!(p.len(), self.param_count());
        let mut at = 0;
        for v in [&mut self.emb, &mut self.wx, &mut self.wh, &mut self.b, &mut self.w] {
            let n = v.len();
            v.copy_from_slice(&p[at..at + n]);
            at += n;
        }
        self.c = p[at];
    }

    /// Hidden states `h_0 = 0, h_1..h_T`, flattened.
    fn forward(&self, tokens: &[u16]) -> Vec<F> {
        let (e, h) = (self.embed, self.hidden);
        let mut hs = vec![F::zero(); (tokens.len() + 1) * h];
        for (t, &tok) in tokens.iter().enumerate() {
            let x = &self.emb[usize::from(tok) * e..][..e];
            let (prev, next) = hs.split_at_mut((t + 1) * h);
            let prev = &prev[t * h..];
            for (j, out) in next[..h].iter_mut().enumerate() {
                let mut a = self.b[j];
                for (wv, xv) in self.wx[j * e..][..e].iter().zip(x) {
                    a = a + *wv * *xv;
                }
                for (wv, hv) in self.wh[j * h..][..h].iter().zip(prev) {
                    a = a + *wv * *hv;
                }
                *out = a.tanh();
            }
        }
        hs
    }

    fn pooled(&self, hs: &[F], steps: usize) -> Vec<F> {
        let h = self.hidden;
        let inv = F::one() / cast(steps.max(1) as f64);
        let mut p = vec![F::zero(); h];
        for t in 1..=steps {
            for (pv, hv) in p.iter_mut().zip(&hs[t * h..][..h]) {
                *pv = *pv + *hv;
            }
        }
        p.iter_mut().for_each(|v| *v = *v * inv);
        p
    }

    fn logit(&self, tokens: &[u16]) -> F {
        let hs = self.forward(tokens);
        let p = self.pooled(&hs, tokens.len());
        p.iter().zip(&self.w).fold(self.c, |acc, (a, b)| acc + *a * *b)
    }

    /// Positive-class probability.
    pub fn score(&self, tokens: &[u16]) -> Result<F, DetectorError> {
        if tokens.len() != self.window_tokens {
            return Err(DetectorError::LengthMismatch {
                got: tokens.len(),
                expected: self.window_tokens,
            });
        }
        Ok(sigmoid(self.logit(tokens)))
    }

    /// Binary cross-entropy of one window.
    pub fn loss(&self, tokens: &[u16], positive: bool) -> F {
        bce(self.logit(tokens), positive)
    }

    /// Loss and full gradient of one window.
    pub fn backward(&self, tokens: &[u16], positive: bool) -> (F, Grads<F>) {
        let (e, h, steps) = (self.embed, self.hidden, tokens.len());
        let hs = self.forward(tokens);
        let p = self.pooled(&hs, steps);
        let z = p.iter().zip(&self.w).fold(self.c, |acc, (a, b)| acc + *a * *b);
        let y = sigmoid(z);
        let dz = y - if positive { F::one() } else { F::zero() };
        let inv = F::one() / cast(steps.max(1) as f64);
        let dpool: Vec<F> = self.w.iter().map(|&wv| dz * wv * inv).collect();
        let mut g = Grads {
            emb: Vec::new(),
            wx: vec![F::zero(); h * e],
            wh: vec![F::zero(); h * h],
            b: vec![F::zero(); h],
            w: p.iter().map(|&pv| dz * pv).collect(),
            c: dz,
        };
        let mut row_of = std::collections::HashMap::new();
        let mut dh = dpool.clone();
        let mut da = vec![F::zero(); h];
        for t in (1..=steps).rev() {
            let ht = &hs[t * h..][..h];
            let hp = &hs[(t - 1) * h..][..h];
            for j in 0..h {
                da[j] = dh[j] * (F::one() - ht[j] * ht[j]);
            }
            let tok = usize::from(tokens[t - 1]);
            let x = &self.emb[tok * e..][..e];
            let row = *row_of.entry(tok).or_insert_with(|| {
                g.emb.push((tok, vec![F::zero(); e]));
                g.emb.len() - 1
            });
            for j in 0..h {
                let a = da[j];
                g.b[j] = g.b[j] + a;
                for (gv, xv) in g.wx[j * e..][..e].iter_mut().zip(x) {
                    *gv = *gv + a * *xv;
                }
                for (gv, hv) in g.wh[j * h..][..h].iter_mut().zip(hp) {
                    *gv = *gv + a * *hv;
                }
                for (gv, wv) in g.emb[row].1.iter_mut().zip(&self.wx[j * e..][..e]) {
                    *gv = *gv + a * *wv;
                }
            }
            for (k, d) in dh.iter_mut().enumerate() {
                let mut s = dpool[k];
                for j in 0..h {
                    s = s + self.wh[j * h + k] * da[j];
                }
                *d = s;
            }
        }
        (bce(z, positive), g)
    }

    fn apply(&mut self, g: &Grads<F>, lr: F) {
        let e = self.embed;
        // Clip the step so one bad window cannot blow up the weights.
        let sq = |v: &[F]| v.iter().fold(F::zero(), |acc, x| acc + *x * *x);
        let norm2 = g.emb.iter().fold(F::zero(), |acc, (_, r)| acc + sq(r)) + sq(&g.wx) + sq(&g.wh) + sq(&g.b) + sq(&g.w) + g.c * g.c;
        let limit: F = cast(5.0);
        let scale = if norm2.sqrt() > limit { limit / norm2.sqrt() } else { F::one() };
        let step = lr * scale;
        for (tok, row) in &g.emb {
            for (pv, gv) in self.emb[tok * e..][..e].iter_mut().zip(row) {
                *pv = *pv - step * *gv;
            }
        }
        for (param, grad) in [(&mut self.wx, &g.wx), (&mut self.wh, &g.wh), (&mut self.b, &g.b), (&mut self.w, &g.w)] {
            for (pv, gv) in param.iter_mut().zip(grad.iter()) {
                *pv = *pv - step * *gv;
            }
        }
        self.c = self.c - step * g.c;
    }

    /// Train from scratch; returns the model and mean loss per epoch.
    pub fn train(samples: &[LabeledSample], cfg: &NeuralConfig) -> Result<(Self, Vec<f32>), DetectorError> {
        if let Some(s) = samples.iter().find(|s| s.seq.tokens.len() != cfg.window_tokens) {
            return Err(DetectorError::LengthMismatch {
                got: s.seq.tokens.len(),
                expected: cfg.window_tokens,
            });
        }
        let mut model = Self::new(VOCAB, cfg.embed, cfg.hidden, cfg.window_tokens, cfg.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut losses = Vec::with_capacity(cfg.epochs as usize);
        for _ in 0..cfg.epochs {
            for i in (1..order.len()).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
            let mut total = 0.0f64;
            for &i in &order {
                let s = &samples[i];
                let (loss, g) = model.backward(&s.seq.tokens, s.label.is_collision());
                total += loss.to_f64().unwrap();
                model.apply(&g, cast(cfg.lr));
            }
            losses.push((total / samples.len().max(1) as f64) as f32);
        }
        Ok((model, losses))
    }
}

impl<F: Float> Grads<F> {
    /// Dense gradient in the model's storage order.
    pub fn flat(&self, model: &NeuralModel<F>) -> Vec<F> {
        let mut emb = vec![F::zero(); model.emb.len()];
        for (tok, row) in &self.emb {
            emb[tok * model.embed..][..model.embed].copy_from_slice(row);
        }
        [&emb[..], &self.wx, &self.wh, &self.b, &self.w, &[self.c]].concat()
    }
}

fn sigmoid<F: Float>(z: F) -> F {
    F::one() / (F::one() + (-z).exp())
}

/// `-log sigmoid(z)` or `-log(1 - sigmoid(z))`, computed stably.
fn bce<F: Float>(z: F, positive: bool) -> F {
    let z = if positive { -z } else { z };
    // log(1 + e^z)
    z.max(F::zero()) + (-z.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_central_differences() {
        // 5 tokens x 1 embedding + 1 + 1 + 1 + 1 + 1 = 10 parameters.
        let mut m = NeuralModel::<f64>::new(5, 1, 1, 4, 11);
        m.b[0] = 0.1;
        m.c = -0.2;
        assert_eq!(m.param_count(), 10);
        let tokens = [0u16, 3, 1, 3];
        for positive in [true, false] {
            let (_, g) = m.backward(&tokens, positive);
            let analytic = g.flat(&m);
            let base = m.flat();
            for i in 0..base.len() {
                let eps = 1e-6;
                let mut plus = m.clone();
                let mut p = base.clone();
                p[i] += eps;
                plus.set_flat(&p);
                let mut minus = m.clone();
                p[i] -= 2.0 * eps;
                minus.set_flat(&p);
                let numeric = (plus.loss(&tokens, positive) - minus.loss(&tokens, positive)) / (2.0 * eps);
                let scale = numeric.abs().max(analytic[i].abs()).max(1e-8);
                if analytic[i].abs() < 1e-10 && numeric.abs() < 1e-10 {
                    continue;
                }
                assert!(
                    (numeric - analytic[i]).abs() / scale < 1e-3,
                    "param {i}: numeric {numeric} analytic {}",
                    analytic[i]
                );
            }
        }
    }

    #[test]
    fn bce_is_stable() {
        assert!((bce(0.0f64, true) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce(1000.0f64, true) < 1e-12);
        assert!((bce(1000.0f64, false) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn flat_round_trip() {
        let m = NeuralModel::<f32>::new(7, 3, 2, 5, 1);
        let mut n = NeuralModel::<f32>::new(7, 3, 2, 5, 2);
        n.set_flat(&m.flat());
        assert_eq!(m, n);
    }

    #[test]
    fn wrong_length_is_an_error() {
        let m = NeuralModel::<f32>::new(7, 3, 2, 5, 1);
        assert!(matches!(m.score(&[1, 2]), Err(DetectorError::LengthMismatch { got: 2, expected: 5 })));
    }
}
