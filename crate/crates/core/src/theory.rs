//! Birthday-bound probabilities for token windows, with Monte-Carlo checks.
//!
//! Clean content draws tokens from a small vocabulary `S_a`; collision bytes
//! draw from a large one `S_b`. A window of `N` tokens is clean with
//! proportion `p_a`. The closed forms are the usual `1 - exp(-N^2 / 2S)`
//! approximations; the mixed form is evaluated exactly as stated even though
//! it can leave `[0, 1]`.

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::detector::{jaccard, tokenize};

/// Scalar used by the CLI and tests.
pub type Real = f64;
pub type Params = BirthdayParams<Real>;
pub type Result64 = TheoryResult<Real>;

/// Trials per independently seeded chunk; fixed so results do not depend on
/// the number of workers.
const CHUNK: u64 = 4096;

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("need at least {needed} bytes of {what} source, got {got}")]
    InsufficientMaterial { what: &'static str, needed: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BirthdayParams<F> {
    pub n: u64,
    pub s: u64,
    pub s_a: u64,
    pub s_b: u64,
    pub p_a: F,
    pub p_b: F,
}

impl<F: Float> BirthdayParams<F> {
    pub fn new(n: u64, s: u64, s_a: u64, s_b: u64, p_a: F, p_b: F) -> Result<Self, TheoryError> {
        let bad = |why: &str| Err(TheoryError::Params(why.to_string()));
        if n == 0 || s == 0 || s_a == 0 || s_b == 0 {
            return bad("sizes must be positive");
        }
        if !(s_a <= s_b && s_b <= s) {
            return bad("need S_a <= S_b <= S");
        }
        if !(p_a > F::zero() && p_b >= F::zero()) {
            return bad("p_a must be positive and p_b non-negative");
        }
        if ((p_a + p_b) - F::one()).abs() > F::from(1e-12).unwrap() {
            return bad("p_a + p_b must be 1");
        }
        Ok(BirthdayParams { n, s, s_a, s_b, p_a, p_b })
    }

    /// Whether the discrepancy ordering is expected: `S_a < S_b` and
    /// `p_a > p_b`.
    pub fn in_regime(&self) -> bool {
        self.s_a < self.s_b && self.p_a > self.p_b
    }
}

/// A closed form next to its simulation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoryResult<F> {
    pub closed_form: F,
    pub estimate: F,
    pub trials: u64,
    pub std_err: F,
}

impl<F: Float> TheoryResult<F> {
    fn new(closed_form: F, hits: u64, trials: u64) -> Self {
        let t = F::from(trials).unwrap();
        let p = F::from(hits).unwrap() / t;
        TheoryResult {
            closed_form,
            estimate: p,
            trials,
            std_err: (p * (F::one() - p) / t).sqrt(),
        }
    }
}

fn real<F: Float>(x: u64) -> F {
    F::from(x).unwrap()
}

/// `1 - prod_{i<N} (1 - i/S)`, summed in log space.
pub fn p_exact<F: Float>(n: u64, s: u64) -> F {
    if n > s {
        return F::one();
    }
    let s = real::<F>(s);
    let log: F = (1..n).fold(F::zero(), |acc, i| acc + (-real::<F>(i) / s).ln_1p());
    F::one() - log.exp()
}

/// `1 - exp(-N^2 / 2S)`.
pub fn p_approx<F: Float>(n: u64, s: u64) -> F {
    birthday_exp(real::<F>(n), real::<F>(s))
}

fn birthday_exp<F: Float>(draws: F, space: F) -> F {
    let two = F::one() + F::one();
    (F::one() - (-(draws * draws) / (two * space)).exp()).max(F::zero()).min(F::one())
}

/// Repeat among the clean tokens of a window.
pub fn p_clean<F: Float>(p: &BirthdayParams<F>) -> F {
    birthday_exp(p.p_a * real::<F>(p.n), real::<F>(p.s_a))
}

/// Repeat among the collision tokens of a window.
pub fn p_collision<F: Float>(p: &BirthdayParams<F>) -> F {
    birthday_exp(p.p_b * real::<F>(p.n), real::<F>(p.s_b))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mixed<F> {
    /// The expression as written.
    pub raw: F,
    /// `raw` clamped to `[0, 1]`.
    pub value: F,
    /// Set when clamping changed the value.
    pub out_of_range: bool,
}

/// `1 - e^{-N^2/2S} + e^{-p_a^2 N^2/2S_a} + e^{-p_b^2 N^2/2S_b}` verbatim.
pub fn p_mixed<F: Float>(p: &BirthdayParams<F>) -> Mixed<F> {
    let e = |draws: F, space: u64| F::one() - birthday_exp(draws, real::<F>(space));
    let n = real::<F>(p.n);
    let raw = F::one() - e(n, p.s) + e(p.p_a * n, p.s_a) + e(p.p_b * n, p.s_b);
    let value = raw.max(F::zero()).min(F::one());
    Mixed {
        raw,
        value,
        out_of_range: value != raw,
    }
}

/// Run `trials` seeded trials in fixed chunks and count hits per counter.
fn simulate<const K: usize>(trials: u64, seed: u64, trial: impl Fn(&mut ChaCha8Rng, &mut Scratch) -> [bool; K] + Sync) -> [u64; K] {
    let chunks = trials.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let mut scratch = Scratch::default();
            let mut hits = [0u64; K];
            for _ in 0..CHUNK.min(trials - c * CHUNK) {
                for (h, hit) in hits.iter_mut().zip(trial(&mut rng, &mut scratch)) {
                    *h += u64::from(hit);
                }
            }
            hits
        })
        .reduce(|| [0; K], |mut a, b| {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            a
        })
}

/// Seen-markers keyed by value, cleared in O(1) by bumping the stamp.
#[derive(Default)]
struct Scratch {
    stamp: u32,
    seen: std::collections::HashMap<u64, (u32, u8)>,
}

impl Scratch {
    fn reset(&mut self) {
        self.stamp = self.stamp.wrapping_add(1);
        if self.stamp == 0 {
            self.seen.clear();
            self.stamp = 1;
        }
    }

    /// Mark `v` as drawn by `class` (bit flags); returns the previous flags.
    fn mark(&mut self, v: u64, class: u8) -> u8 {
        let stamp = self.stamp;
        let e = self.seen.entry(v).or_insert((stamp, 0));
        if e.0 != stamp {
            *e = (stamp, 0);
        }
        let before = e.1;
        e.1 |= class;
        before
    }
}

/// Fraction of trials in which `N` uniform draws from `S` repeat.
pub fn monte_carlo<F: Float + Send + Sync>(n: u64, s: u64, trials: u64, seed: u64) -> Result<TheoryResult<F>, TheoryError> {
    if trials == 0 || s == 0 {
        return Err(TheoryError::Params("trials and S must be positive".into()));
    }
    let [hits] = simulate(trials, seed, |rng, scratch| {
        scratch.reset();
        [(0..n).any(|_| scratch.mark(rng.gen_range(0..s), 1) != 0)]
    });
    Ok(TheoryResult::new(p_exact(n, s), hits, trials))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Discrepancy<F> {
    pub clean: TheoryResult<F>,
    pub collision: TheoryResult<F>,
    /// Closed form is the clamped mixed expression.
    pub mixed: TheoryResult<F>,
    pub mixed_formula: Mixed<F>,
    /// `None` outside the regime the ordering is claimed for.
    pub ordering_holds: Option<bool>,
}

/// Simulate windows of `N` tokens, each clean with probability `p_a`.
/// Clean tokens are uniform over `0..S_a`, collision tokens over the top
/// `S_b` values of `0..S`. Counts a repeat among clean tokens, among
/// collision tokens, and between a clean and a collision token.
pub fn discrepancy_experiment<F: Float + Send + Sync>(
    params: &BirthdayParams<F>,
    trials: u64,
    seed: u64,
) -> Result<Discrepancy<F>, TheoryError> {
    if trials == 0 {
        return Err(TheoryError::Params("trials must be positive".into()));
    }
    let p = *params;
    let p_a = p.p_a.to_f64().unwrap();
    let base = p.s - p.s_b;
    let [clean, coll, cross] = simulate(trials, seed, |rng, scratch| {
        scratch.reset();
        let mut hit = [false; 3];
        for _ in 0..p.n {
            let (v, class, other) = if rng.gen::<f64>() < p_a {
                (rng.gen_range(0..p.s_a), 1u8, 2u8)
            } else {
                (base + rng.gen_range(0..p.s_b), 2u8, 1u8)
            };
            let before = scratch.mark(v, class);
            hit[class as usize - 1] |= before & class != 0;
            hit[2] |= before & other != 0;
        }
        hit
    });
    let clean = TheoryResult::new(p_clean(&p), clean, trials);
    let collision = TheoryResult::new(p_collision(&p), coll, trials);
    let mixed_formula = p_mixed(&p);
    let mixed = TheoryResult::new(mixed_formula.value, cross, trials);
    let ordering_holds = p.in_regime().then(|| {
        let tol = F::from(0.05).unwrap();
        let half = F::from(0.5).unwrap();
        clean.estimate - collision.estimate.max(mixed.estimate) >= half
            && (collision.estimate - mixed.estimate).abs() <= tol
    });
    Ok(Discrepancy {
        clean,
        collision,
        mixed,
        mixed_formula,
        ordering_holds,
    })
}

/// Running means of pairwise window similarity, one point per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct JsCurves {
    pub clean_clean: Vec<f64>,
    pub coll_coll: Vec<f64>,
    pub clean_coll: Vec<f64>,
}

impl JsCurves {
    pub fn final_means(&self) -> [f64; 3] {
        let last = |c: &Vec<f64>| c.last().copied().unwrap_or(0.0);
        [last(&self.clean_clean), last(&self.coll_coll), last(&self.clean_coll)]
    }
}

/// `(max - min) / final` of a running mean over its last quarter.
pub fn final_quartile_variation(curve: &[f64]) -> f64 {
    let tail = &curve[curve.len() - curve.len() / 4..];
    let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let last = *curve.last().unwrap();
    if last == 0.0 {
        if hi == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (hi - lo) / last
    }
}

/// Sample `samples` window pairs of each kind and track running means of
/// their token-set similarity. Paired windows never overlap in their source.
pub fn js_convergence(
    clean: &[u8],
    collision: &[u8],
    window_tokens: usize,
    samples: usize,
    seed: u64,
) -> Result<JsCurves, TheoryError> {
    let bytes = 2 * window_tokens;
    for (what, src) in [("clean", clean), ("collision", collision)] {
        if src.len() < 2 * bytes {
            return Err(TheoryError::InsufficientMaterial {
                what,
                needed: 2 * bytes,
                got: src.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let window = |src: &[u8], rng: &mut ChaCha8Rng| {
        let at = rng.gen_range(0..=src.len() - bytes);
        (at, tokenize(&src[at..at + bytes]))
    };
    let disjoint = |src: &[u8], rng: &mut ChaCha8Rng| loop {
        let (a, wa) = window(src, rng);
        let (b, wb) = window(src, rng);
        if a.abs_diff(b) >= bytes {
            return (wa, wb);
        }
    };
    let mut curves = JsCurves {
        clean_clean: Vec::with_capacity(samples),
        coll_coll: Vec::with_capacity(samples),
        clean_coll: Vec::with_capacity(samples),
    };
    let mut sums = [0.0f64; 3];
    for i in 0..samples {
        let (c1, c2) = disjoint(clean, &mut rng);
        let (k1, k2) = disjoint(collision, &mut rng);
        let (_, c3) = window(clean, &mut rng);
        let (_, k3) = window(collision, &mut rng);
        sums[0] += jaccard(&c1, &c2);
        sums[1] += jaccard(&k1, &k2);
        sums[2] += jaccard(&c3, &k3);
        let n = (i + 1) as f64;
        curves.clean_clean.push(sums[0] / n);
        curves.coll_coll.push(sums[1] / n);
        curves.clean_coll.push(sums[2] / n);
    }
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_examples() {
        let p: f64 = p_exact(23, 365);
        assert!((p - 0.507_297).abs() < 1e-6);
        assert_eq!(p_exact::<f64>(1, 365), 0.0);
        assert_eq!(p_exact::<f64>(366, 365), 1.0);
        let p32: f32 = p_exact(23, 365);
        assert!((f64::from(p32) - p).abs() < 1e-5);
    }

    #[test]
    fn approx_examples() {
        let a: f64 = p_approx(23, 365);
        assert!((a - 0.515_3).abs() < 1e-3);
        assert!((a - p_exact::<f64>(23, 365)).abs() <= 0.02);
        assert!(p_approx::<f64>(1, 1 << 40) < 1e-12);
    }

    #[test]
    fn theorem_forms_degenerate_correctly() {
        let p = Params::new(23, 365, 365, 365, 1.0, 0.0).unwrap();
        assert_eq!(p_clean(&p), p_approx::<f64>(23, 365));
        assert_eq!(p_collision(&p), 0.0);
        let big = Params::new(10_000, 1 << 20, 1000, 1 << 19, 0.99, 0.01).unwrap();
        assert!(p_clean(&big) > 1.0 - 1e-12);
    }

    #[test]
    fn mixed_flags_its_additive_anomaly() {
        let p = Params::new(100, 1000, 1000, 1000, 1.0, 0.0).unwrap();
        let m = p_mixed(&p);
        assert!((m.raw - 2.0).abs() < 1e-9);
        assert_eq!(m.value, 1.0);
        assert!(m.out_of_range);
    }

    #[test]
    fn invalid_params_are_rejected() {
        assert!(Params::new(10, 100, 50, 40, 0.5, 0.5).is_err());
        assert!(Params::new(10, 100, 10, 40, 0.5, 0.6).is_err());
        assert!(Params::new(0, 100, 10, 40, 0.5, 0.5).is_err());
    }

    #[test]
    fn monte_carlo_is_deterministic_and_close() {
        let a: Result64 = monte_carlo(23, 365, 20_000, 5).unwrap();
        let b: Result64 = monte_carlo(23, 365, 20_000, 5).unwrap();
        assert_eq!(a, b);
        assert!((a.estimate - a.closed_form).abs() < 4.0 * a.std_err);
        let one: Result64 = monte_carlo(1, 365, 100, 5).unwrap();
        assert_eq!(one.estimate, 0.0);
    }

    #[test]
    fn discrepancy_without_regime_is_unasserted() {
        let p = Params::new(64, 1 << 10, 256, 256, 0.5, 0.5).unwrap();
        let d = discrepancy_experiment(&p, 2000, 1).unwrap();
        assert_eq!(d.ordering_holds, None);
    }

    #[test]
    fn quartile_variation() {
        assert_eq!(final_quartile_variation(&[5.0, 1.0, 1.0, 1.0]), 0.0);
        let v = final_quartile_variation(&[9.0, 9.0, 9.0, 9.0, 9.0, 9.0, 4.0, 5.0]);
        assert!((v - 0.2).abs() < 1e-12);
    }

    #[test]
    fn js_needs_material() {
        let err = js_convergence(&[0; 10], &[0; 1000], 64, 10, 1).unwrap_err();
        assert!(matches!(err, TheoryError::InsufficientMaterial { what: "clean", .. }));
    }
}
