//! Block search along a [`DiffPath`].
//!
//! The first sixteen state words are drawn column by column from the exact set
//! of bit assignments that satisfy every round-one condition and still admit
//! valid `Q17`/`Q18` bits; the draw is uniform over that set. Message words are
//! then recovered by inverting the steps. Two schemes follow:
//!
//! * when `Q2` is unconditioned, `Q17` is chosen directly, `m1` is recovered
//!   from step 16 and `Q2` is recomputed from it;
//! * otherwise the free bits of `Q16` are enumerated, which moves `m15`.
//!
//! Each candidate that survives to `Q24` is multiplied by the tunnels in
//! `Q9`, `Q4`, `Q10` and `Q5`: a bit of `Q_q` where `Q_{q+1} = 0` and
//! `Q_{q+2} = 1` can flip without touching any other round-one state word, at
//! the cost of recomputing three message words. Tunnelled candidates are
//! queued and their remaining steps run in batches (see `tail`).

use rand::RngCore;
use rand_chacha::ChaCha8Rng;

use super::path::{DiffPath, QLEN, QOFF};
use super::tail::{self, Batch, Lane};
use crate::md5::{compress_words, round_fn, IhvState, K, ROT, WORD};

/// Highest state word covered by the column model.
const TOP: usize = 18;
const NPOS: usize = TOP + QOFF + 1;
const LAST: usize = NPOS - 1;

/// State words that may act as tunnels.
const TUNNELS: [usize; 4] = [9, 4, 10, 5];

/// Flipping bit `j` of `Q_q` where `Q_{q+1}[j] = 0` and `Q_{q+2}[j] = 1` leaves
/// every other round-one state word alone and changes only `m_{q-1}`, `m_q`
/// and `m_{q+3}`; round two must be recomputed from the first step that reads
/// one of those words.
#[derive(Clone, Copy, Debug)]
struct Tunnel {
    q: usize,
    mask: u32,
    recheck: usize,
}

impl Tunnel {
    fn new(q: usize, mask: u32) -> Self {
        let words = [q - 1, q, q + 3];
        let recheck = (16..24).find(|&t| words.contains(&WORD[t])).unwrap_or(24);
        Tunnel { q, mask, recheck }
    }
}

/// Redraws of one state word before the draw backs up a position.
const RETRIES: u32 = 4;
const MAX_DRAWS: u32 = 2048;

/// Candidate passes per sampled prefix.
const PASSES: u32 = 1 << 15;

/// Exact per-column model of the round-one conditions.
#[derive(Clone)]
pub(crate) struct Columns {
    zero: [u32; NPOS],
    one: [u32; NPOS],
    /// `back[j][i][s]`: completions of column `j` beyond position `i`, given
    /// the bits `s = v[i-1] << 1 | v[i]`.
    back: Box<[[[f64; 4]; NPOS]; 32]>,
}

#[inline(always)]
fn bit(x: u32, j: usize) -> usize {
    ((x >> j) & 1) as usize
}

impl Columns {
    pub fn new(path: &DiffPath) -> Self {
        let mut cols = Columns {
            zero: [0; NPOS],
            one: [0; NPOS],
            back: Box::new([[[0.0; 4]; NPOS]; 32]),
        };
        for j in 0..32 {
            cols.recompute(path, j);
        }
        cols
    }

    #[inline(always)]
    fn unary_ok(&self, i: usize, j: usize, v: usize) -> bool {
        let forced = if v == 0 { self.one[i] } else { self.zero[i] };
        (forced >> j) & 1 == 0
    }

    fn recompute(&mut self, path: &DiffPath, j: usize) {
        let mut b = self.back[j];
        b[LAST] = [1.0; 4];
        for i in (QOFF..LAST).rev() {
            let step = i + 1 - QOFF;
            for s in 0..4 {
                let (prev, cur) = (s >> 1, s & 1);
                let mut acc = 0.0;
                for v in 0..2 {
                    if self.unary_ok(i + 1, j, v) && path.allows(step, j, v << 2 | cur << 1 | prev) {
                        acc += b[i + 1][cur << 1 | v];
                    }
                }
                b[i][s] = acc;
            }
        }
        self.back[j] = b;
    }

    fn column_feasible(&self, path: &DiffPath, iv: &[u32; 4], j: usize) -> bool {
        let (z, y, x) = (bit(iv[1], j), bit(iv[2], j), bit(iv[3], j));
        path.allows(0, j, x << 2 | y << 1 | z) && self.back[j][QOFF][y << 1 | x] > 0.0
    }

    /// Whether some assignment of `Q1..Q18` meets every round-one condition
    /// from the chaining value `iv` (given as `[Q-3, Q-2, Q-1, Q0]`).
    pub fn feasible(&self, path: &DiffPath, iv: &[u32; 4]) -> bool {
        (0..32).all(|j| self.column_feasible(path, iv, j))
    }
}

pub(crate) fn iv_words(iv: IhvState) -> [u32; 4] {
    [iv.a, iv.d, iv.c, iv.b]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scheme {
    ChooseQ17,
    VaryQ16,
}

/// A message block pair following the path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct BlockPair {
    pub m: [u32; 16],
    pub m2: [u32; 16],
}

/// The following block's conditions on this block's output.
pub(crate) struct Successor<'a> {
    pub path: &'a DiffPath,
    pub cols: &'a Columns,
}

pub(crate) struct BlockSearch<'a> {
    path: &'a DiffPath,
    next: Option<Successor<'a>>,
    iv: IhvState,
    iv2: IhvState,
    cols: Columns,
    scheme: Scheme,
    tunnels: Vec<Tunnel>,
    q: [u32; QLEN],
    m: [u32; 16],
    rng: ChaCha8Rng,
    /// Step evaluations so far; 64 make one compression.
    pub steps: u64,
    batched: bool,
    first: Batch,
    second: Batch,
}

impl<'a> BlockSearch<'a> {
    /// `None` if `iv` cannot start this path.
    pub fn new(
        path: &'a DiffPath,
        base: &Columns,
        next: Option<Successor<'a>>,
        iv: IhvState,
        rng: ChaCha8Rng,
    ) -> Option<Self> {
        let ivw = iv_words(iv);
        if !base.feasible(path, &ivw) {
            return None;
        }
        let iv2 = IhvState::from_words(std::array::from_fn(|k| {
            iv.words()[k].wrapping_add(path.in_delta[k])
        }));
        let scheme = if path.involved_bits(2) == 0 {
            Scheme::ChooseQ17
        } else {
            Scheme::VaryQ16
        };
        let mut q = [0u32; QLEN];
        q[..4].copy_from_slice(&ivw);
        let mut search = BlockSearch {
            path,
            next,
            iv,
            iv2,
            cols: base.clone(),
            scheme,
            tunnels: Vec::new(),
            q,
            m: [0; 16],
            rng,
            steps: 0,
            batched: tail::batchable(path),
            first: Batch::default(),
            second: Batch::default(),
        };
        let mut reserved = [0u32; NPOS];
        for i in TUNNELS {
            let mask = search.open_tunnel(i, &mut reserved);
            if mask != 0 {
                search.tunnels.push(Tunnel::new(i, mask));
            }
        }
        search.tunnels.sort_by_key(|t| t.recheck);
        Some(search)
    }

    #[cfg(test)]
    fn tunnel_bits(&self) -> Vec<(usize, u32)> {
        self.tunnels.iter().map(|t| (t.q, t.mask.count_ones())).collect()
    }

    /// Reserve every bit of `Q_i` that can flip freely once `Q_{i+1}` is forced
    /// to zero and `Q_{i+2}` to one there.
    fn open_tunnel(&mut self, i: usize, reserved: &mut [u32; NPOS]) -> u32 {
        let path = self.path;
        let (pi, p1, p2) = (i + QOFF, i + 1 + QOFF, i + 2 + QOFF);
        let ivw = iv_words(self.iv);
        let mut mask = 0u32;
        for j in 0..32 {
            let b = 1u32 << j;
            if (path.dq_xor[pi] | path.dq_xor[p1] | path.dq_xor[p2]) & b != 0 {
                continue;
            }
            let taken = self.cols.zero[pi] | self.cols.one[pi] | self.cols.one[p1] | self.cols.zero[p2];
            if (taken | reserved[p1] | reserved[p2]) & b != 0 {
                continue;
            }
            let same = |s: usize, c: usize, flip: usize| path.allows(s, j, c) == path.allows(s, j, c ^ flip);
            let invariant = (0..8).all(|c| same(i, c, 4))
                && (0..4).all(|c| same(i + 1, c, 2))
                && same(i + 2, 4, 1);
            if !invariant {
                continue;
            }
            self.cols.zero[p1] |= b;
            self.cols.one[p2] |= b;
            self.cols.recompute(path, j);
            if self.cols.column_feasible(path, &ivw, j) && self.tunnel_trial(i, b) {
                mask |= b;
                reserved[pi] |= b;
            } else {
                self.cols.zero[p1] &= !b;
                self.cols.one[p2] &= !b;
                self.cols.recompute(path, j);
            }
        }
        mask
    }

    /// Rotations are not part of the column model, so a candidate tunnel bit
    /// is tried on sampled prefixes: they must stay easy to draw, and flipping
    /// the bit must usually keep the two rotations it touches.
    fn tunnel_trial(&mut self, i: usize, b: u32) -> bool {
        const TRIALS: usize = 32;
        let hi = (i + 3).min(16);
        let (mut drawn, mut kept) = (0, 0);
        for _ in 0..TRIALS {
            if !self.sample(1, hi) {
                continue;
            }
            drawn += 1;
            self.q[i + QOFF] ^= b;
            if self.rotation_fits(i) && self.rotation_fits(i + 1) {
                kept += 1;
            }
            self.q[i + QOFF] ^= b;
        }
        drawn * 4 >= TRIALS && kept * 2 >= drawn
    }

    /// Draw `Q_lo..=Q_hi` among column-consistent assignments. A word whose
    /// rotation check against its predecessor keeps failing sends the draw
    /// back one position.
    fn sample(&mut self, lo: usize, hi: usize) -> bool {
        let mut fails = [0u32; NPOS];
        let mut draws = 0u32;
        let mut p = lo;
        while p <= hi {
            let Some(word) = self.sample_word(p) else {
                return false;
            };
            self.q[p + QOFF] = word;
            draws += 1;
            if draws > MAX_DRAWS {
                return false;
            }
            if self.rotation_fits(p) {
                p += 1;
                if p <= hi {
                    fails[p] = 0;
                }
            } else {
                fails[p] += 1;
                if fails[p] >= RETRIES && p > lo {
                    p -= 1;
                    fails[p] += 1;
                }
            }
        }
        true
    }

    /// The rotation of the step producing `Q_p`, where that step is final.
    #[inline]
    fn rotation_fits(&self, p: usize) -> bool {
        if p == 0 || self.path.dt[p - 1] == 0 || self.skip_rotation(p - 1) {
            return true;
        }
        let i = p + QOFF;
        let tt = self.q[i].wrapping_sub(self.q[i - 1]).rotate_right(ROT[p - 1]);
        self.path.rotation_ok(p - 1, tt)
    }

    /// Steps whose rotation depends on a state word this scheme recomputes.
    fn skip_rotation(&self, t: usize) -> bool {
        self.scheme == Scheme::ChooseQ17 && (t == 1 || t == 2)
    }

    fn sample_word(&mut self, p: usize) -> Option<u32> {
        let i = p + QOFF;
        let (y, z) = (self.q[i - 1], self.q[i - 2]);
        let mut word = 0u32;
        let mut r = 0u64;
        let mut r_bits = 0;
        for j in 0..32 {
            let (yb, zb) = (bit(y, j), bit(z, j));
            let back = &self.cols.back[j][i];
            let w = |v: usize| {
                if self.cols.unary_ok(i, j, v) && self.path.allows(p, j, v << 2 | yb << 1 | zb) {
                    back[yb << 1 | v]
                } else {
                    0.0
                }
            };
            let (w0, w1) = (w(0), w(1));
            let v = if w1 == 0.0 {
                if w0 == 0.0 {
                    return None;
                }
                0
            } else if w0 == 0.0 {
                1
            } else if w0 == w1 {
                if r_bits == 0 {
                    r = self.rng.next_u64();
                    r_bits = 64;
                }
                r_bits -= 1;
                let v = (r & 1) as usize;
                r >>= 1;
                v
            } else {
                let u = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                usize::from(u * (w0 + w1) >= w0)
            };
            word |= (v as u32) << j;
        }
        Some(word)
    }

    /// Step `t` forwards: computes `Q_{t+1}` and checks the path through it.
    #[inline(always)]
    fn forward(&mut self, t: usize) -> bool {
        self.steps += 1;
        let i = t + QOFF;
        let q = &mut self.q;
        let tt = round_fn(t, q[i], q[i - 1], q[i - 2])
            .wrapping_add(q[i - 3])
            .wrapping_add(self.m[WORD[t]])
            .wrapping_add(K[t]);
        let x = q[i].wrapping_add(tt.rotate_left(ROT[t]));
        q[i + 1] = x;
        self.path.rotation_ok(t, tt) && (t == 63 || self.path.step_ok(t + 1, x, q[i], q[i - 1]))
    }

    /// Step `t < 16` backwards: recovers `m_t` from the state words.
    #[inline(always)]
    fn reverse(&mut self, t: usize) -> bool {
        self.steps += 1;
        let i = t + QOFF;
        let q = &self.q;
        let tt = q[i + 1].wrapping_sub(q[i]).rotate_right(ROT[t]);
        self.m[t] = tt
            .wrapping_sub(round_fn(t, q[i], q[i - 1], q[i - 2]))
            .wrapping_sub(q[i - 3])
            .wrapping_sub(K[t]);
        self.path.rotation_ok(t, tt)
    }

    /// Search for at most about `max_steps` step evaluations, polling `stop`
    /// between prefixes.
    pub fn run(&mut self, max_steps: u64, stop: &dyn Fn() -> bool) -> Option<BlockPair> {
        let start = self.steps;
        while self.steps - start < max_steps {
            if stop() {
                return None;
            }
            self.steps += 32;
            let found = match self.scheme {
                Scheme::ChooseQ17 => self.prefix_q17(start, max_steps),
                Scheme::VaryQ16 => self.prefix_q16(start, max_steps),
            };
            if found.is_some() {
                return found;
            }
        }
        self.drain()
    }

    fn prefix_q17(&mut self, start: u64, budget: u64) -> Option<BlockPair> {
        if !self.sample(1, 16) {
            return None;
        }
        if !self.reverse(0) || !(6..16).all(|t| self.reverse(t)) {
            return None;
        }
        let (ones, free) = self.path.free_word(17, self.q[16 + QOFF], self.q[15 + QOFF])?;
        for _ in 0..PASSES {
            if self.steps - start >= budget {
                break;
            }
            let q17 = ones | (self.rng.next_u32() & free);
            if let Some(found) = self.pass_q17(q17) {
                return Some(found);
            }
        }
        None
    }

    fn pass_q17(&mut self, q17: u32) -> Option<BlockPair> {
        let path = self.path;
        self.q[17 + QOFF] = q17;
        self.steps += 1;
        let t16 = q17.wrapping_sub(self.q[16 + QOFF]).rotate_right(ROT[16]);
        if !path.rotation_ok(16, t16) {
            return None;
        }
        let q = &self.q;
        self.m[1] = t16
            .wrapping_sub(round_fn(16, q[16 + QOFF], q[15 + QOFF], q[14 + QOFF]))
            .wrapping_sub(q[13 + QOFF])
            .wrapping_sub(K[16]);
        if !self.forward(17) || !self.forward(18) {
            return None;
        }
        if !self.forward(1) {
            return None;
        }
        let q = &self.q;
        if !path.step_ok(3, q[6], q[5], q[4]) || !path.step_ok(4, q[7], q[6], q[5]) {
            return None;
        }
        if !(2..6).all(|t| self.reverse(t)) {
            return None;
        }
        if !(19..24).all(|t| self.forward(t)) {
            return None;
        }
        self.tunnel_level(0)
    }

    fn prefix_q16(&mut self, start: u64, budget: u64) -> Option<BlockPair> {
        if !self.sample(1, 16) || !(0..15).all(|t| self.reverse(t)) {
            return None;
        }
        let (ones, free) = self.path.free_word(16, self.q[15 + QOFF], self.q[14 + QOFF])?;
        let origin = self.q[16 + QOFF] & free;
        let passes = if free.count_ones() >= 15 { PASSES } else { 1 << free.count_ones() };
        let mut sub = 0u32;
        for _ in 0..passes {
            if self.steps - start >= budget {
                break;
            }
            sub = sub.wrapping_sub(free) & free;
            self.q[16 + QOFF] = ones | (origin ^ sub);
            if self.reverse(15) && (16..24).all(|t| self.forward(t)) {
                if let Some(found) = self.tunnel_level(0) {
                    return Some(found);
                }
            }
        }
        None
    }

    fn tunnel_level(&mut self, level: usize) -> Option<BlockPair> {
        let Some(&tunnel) = self.tunnels.get(level) else {
            return self.leaf();
        };
        let i = tunnel.q + QOFF;
        let base = self.q[i];
        let mut sub = 0u32;
        loop {
            self.q[i] = base ^ sub;
            if self.reverse(tunnel.q - 1) && self.reverse(tunnel.q) {
                self.reverse(tunnel.q + 3);
                if (tunnel.recheck..24).all(|t| self.forward(t)) {
                    if let Some(found) = self.tunnel_level(level + 1) {
                        return Some(found);
                    }
                }
            }
            sub = sub.wrapping_sub(tunnel.mask) & tunnel.mask;
            if sub == 0 {
                break;
            }
        }
        self.q[i] = base;
        for t in [tunnel.q - 1, tunnel.q, tunnel.q + 3] {
            self.reverse(t);
        }
        None
    }

    /// Hand the candidate at `Q24` to the tail.
    fn leaf(&mut self) -> Option<BlockPair> {
        let q = &self.q;
        let mut lane = Lane {
            m: self.m,
            abcd: [q[21 + QOFF], q[24 + QOFF], q[23 + QOFF], q[22 + QOFF]],
        };
        if !self.batched {
            let (steps, ok) = tail::finish_scalar(self.path, &mut lane, 24);
            self.steps += steps;
            return if ok { self.finish(&lane.m) } else { None };
        }
        if self.first.push(&lane) {
            return self.run_first();
        }
        None
    }

    fn run_first(&mut self) -> Option<BlockPair> {
        let n = std::mem::take(&mut self.first.fill);
        self.steps += (n * (tail::FIRST_END + 1 - 24)) as u64;
        let tt = self.first.first();
        for k in 0..n {
            let lane = self.first.lane(k);
            if tail::step_ok(self.path, tail::FIRST_END, tt[k], &lane.abcd) && self.second.push(&lane) {
                if let Some(found) = self.run_second() {
                    return Some(found);
                }
            }
        }
        None
    }

    fn run_second(&mut self) -> Option<BlockPair> {
        let n = std::mem::take(&mut self.second.fill);
        self.steps += (n * (tail::SECOND_END - tail::FIRST_END)) as u64;
        let tt = self.second.second();
        for k in 0..n {
            let mut lane = self.second.lane(k);
            if !tail::step_ok(self.path, tail::SECOND_END, tt[k], &lane.abcd) {
                continue;
            }
            let (steps, ok) = tail::finish_scalar(self.path, &mut lane, tail::SECOND_END + 1);
            self.steps += steps;
            if ok {
                if let Some(found) = self.finish(&lane.m) {
                    return Some(found);
                }
            }
        }
        None
    }

    /// Run whatever is still queued.
    fn drain(&mut self) -> Option<BlockPair> {
        if self.first.fill > 0 {
            if let Some(found) = self.run_first() {
                return Some(found);
            }
        }
        if self.second.fill > 0 {
            return self.run_second();
        }
        None
    }

    fn finish(&mut self, m: &[u32; 16]) -> Option<BlockPair> {
        self.steps += 128;
        let m = *m;
        let m2: [u32; 16] = std::array::from_fn(|k| m[k].wrapping_add(self.path.dm[k]));
        let out = compress_words(self.iv, &m);
        let out2 = compress_words(self.iv2, &m2);
        if out.delta_to(&out2) != self.path.out_delta {
            return None;
        }
        if let Some(next) = &self.next {
            if !next.cols.feasible(next.path, &iv_words(out)) {
                return None;
            }
        }
        Some(BlockPair { m, m2 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::path::trace;
    use crate::collision::reference;
    use rand::SeedableRng;

    #[test]
    fn reference_chaining_values_are_feasible() {
        let (first, second) = DiffPath::reference_paths();
        let (m_a, _) = reference::message_words();
        let mid = trace(IhvState::INITIAL, &m_a[0]).out;
        assert!(Columns::new(&first).feasible(&first, &iv_words(IhvState::INITIAL)));
        assert!(Columns::new(&second).feasible(&second, &iv_words(mid)));
        assert!(!Columns::new(&second).feasible(&second, &iv_words(IhvState::INITIAL)));
    }

    #[test]
    fn both_blocks_open_tunnels() {
        let (first, second) = DiffPath::reference_paths();
        let (m_a, _) = reference::message_words();
        let mid = trace(IhvState::INITIAL, &m_a[0]).out;
        let c1 = Columns::new(&first);
        let c2 = Columns::new(&second);
        let rng = || ChaCha8Rng::seed_from_u64(3);
        let s1 = BlockSearch::new(&first, &c1, None, IhvState::INITIAL, rng()).unwrap();
        let s2 = BlockSearch::new(&second, &c2, None, mid, rng()).unwrap();
        for s in [&s1, &s2] {
            let bits: u32 = s.tunnel_bits().iter().map(|t| t.1).sum();
            assert!(bits >= 8, "{:?}", s.tunnel_bits());
            assert!(s.tunnels.windows(2).all(|w| w[0].recheck <= w[1].recheck));
        }
    }

    #[test]
    fn sampled_prefixes_meet_round_one_conditions() {
        let (first, _) = DiffPath::reference_paths();
        let base = Columns::new(&first);
        let rng = ChaCha8Rng::seed_from_u64(7);
        let mut s = BlockSearch::new(&first, &base, None, IhvState::INITIAL, rng).unwrap();
        for _ in 0..50 {
            assert!(s.sample(1, 16));
            for t in 1..=16 {
                let i = t + QOFF;
                assert!(first.step_ok(t, s.q[i], s.q[i - 1], s.q[i - 2]));
            }
            for j in 0..32 {
                let b = 1 << j;
                if s.tunnels.iter().any(|t| t.q == 9 && t.mask & b != 0) {
                    assert_eq!(s.q[10 + QOFF] & b, 0);
                    assert_eq!(s.q[11 + QOFF] & b, b);
                }
            }
        }
    }
}
