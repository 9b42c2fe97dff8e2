//! Steps 24..64 for queued candidates.
//!
//! Along both block paths nothing is checked between step 24 and the
//! rotation of step 34, and nothing again until the conditions on `Q48`.
//! Candidates are queued and pushed through each stretch eight at a time;
//! survivors of the first stretch are compacted into a second queue and the
//! few that reach `Q48` finish one by one.

use super::path::DiffPath;
use crate::md5::{round_fn, K, ROT, WORD};

pub(crate) const LANES: usize = 8;

/// Rows `0..16` hold message words, then the running `a, b, c, d`.
const ROWS: usize = 20;
const A: usize = 16;
const B: usize = 17;
const C: usize = 18;
const D: usize = 19;

/// Last step of each batched stretch.
pub(crate) const FIRST_END: usize = 34;
pub(crate) const SECOND_END: usize = 47;

#[derive(Clone, Copy)]
#[repr(C, align(16))]
pub(crate) struct Batch {
    rows: [[u32; LANES]; ROWS],
    pub fill: usize,
}

impl Default for Batch {
    fn default() -> Self {
        Batch {
            rows: [[0; LANES]; ROWS],
            fill: 0,
        }
    }
}

/// One candidate between steps: `abcd` feeds step `t` as `a = Q_{t-3}`,
/// `b = Q_t`, `c = Q_{t-1}`, `d = Q_{t-2}`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Lane {
    pub m: [u32; 16],
    pub abcd: [u32; 4],
}

impl Batch {
    /// Returns true once the batch is full.
    pub fn push(&mut self, lane: &Lane) -> bool {
        let k = self.fill;
        for (w, &v) in lane.m.iter().enumerate() {
            self.rows[w][k] = v;
        }
        for (r, &v) in lane.abcd.iter().enumerate() {
            self.rows[A + r][k] = v;
        }
        self.fill += 1;
        self.fill == LANES
    }

    pub fn lane(&self, k: usize) -> Lane {
        Lane {
            m: std::array::from_fn(|w| self.rows[w][k]),
            abcd: [
                self.rows[A][k],
                self.rows[B][k],
                self.rows[C][k],
                self.rows[D][k],
            ],
        }
    }

    /// Runs steps `24..=34`; returns the step-34 sums `T`.
    pub fn first(&mut self) -> [u32; LANES] {
        kernel::first(&mut self.rows)
    }

    /// Runs steps `35..=47`; returns the step-47 sums `T`.
    pub fn second(&mut self) -> [u32; LANES] {
        kernel::second(&mut self.rows)
    }
}

/// Steps after which `path` has something to check.
pub(crate) fn checkpoints(path: &DiffPath) -> u64 {
    (0..64)
        .filter(|&t| path.dt[t] != 0 || (t < 63 && path.active[t + 1]))
        .fold(0u64, |acc, t| acc | 1 << t)
}

/// Whether the batched stretches skip no check of `path`.
pub(crate) fn batchable(path: &DiffPath) -> bool {
    let inside = |lo: usize, hi: usize| (lo..hi).fold(0u64, |acc, t| acc | 1 << t);
    checkpoints(path) & (inside(24, FIRST_END) | inside(FIRST_END + 1, SECOND_END)) == 0
}

/// Checks after step `t`, given its sum `tt` and the new `b, c, d`.
#[inline]
pub(crate) fn step_ok(path: &DiffPath, t: usize, tt: u32, abcd: &[u32; 4]) -> bool {
    path.rotation_ok(t, tt) && (t == 63 || path.step_ok(t + 1, abcd[1], abcd[2], abcd[3]))
}

/// Runs steps `from..64` on one candidate, checking each. Returns the number
/// of steps evaluated and whether all passed.
pub(crate) fn finish_scalar(path: &DiffPath, lane: &mut Lane, from: usize) -> (u64, bool) {
    let [mut a, mut b, mut c, mut d] = lane.abcd;
    for t in from..64 {
        let tt = round_fn(t, b, c, d)
            .wrapping_add(a)
            .wrapping_add(lane.m[WORD[t]])
            .wrapping_add(K[t]);
        let next = b.wrapping_add(tt.rotate_left(ROT[t]));
        (a, d, c, b) = (d, c, b, next);
        lane.abcd = [a, b, c, d];
        if !step_ok(path, t, tt, &lane.abcd) {
            return ((t - from + 1) as u64, false);
        }
    }
    ((64 - from) as u64, true)
}

#[cfg(target_arch = "x86_64")]
mod kernel {
    use super::{Rows, A, B, C, D, LANES};
    use crate::md5::{K, ROT, WORD};
    use std::arch::x86_64::*;

    type V = [__m128i; 2];

    #[inline(always)]
    fn load(row: &[u32; LANES]) -> V {
        // SAFETY: each half reads four u32 inside `row`.
        unsafe {
            [
                _mm_loadu_si128(row.as_ptr() as *const __m128i),
                _mm_loadu_si128(row.as_ptr().add(4) as *const __m128i),
            ]
        }
    }

    #[inline(always)]
    fn store(row: &mut [u32; LANES], v: V) {
        // SAFETY: each half writes four u32 inside `row`.
        unsafe {
            _mm_storeu_si128(row.as_mut_ptr() as *mut __m128i, v[0]);
            _mm_storeu_si128(row.as_mut_ptr().add(4) as *mut __m128i, v[1]);
        }
    }

    struct State {
        a: V,
        b: V,
        c: V,
        d: V,
        tt: V,
    }

    #[inline(always)]
    fn step<const T: usize, const L: i32, const R: i32>(s: &mut State, rows: &Rows) {
        let w = load(&rows[WORD[T]]);
        // SAFETY: SSE2 is part of the x86_64 baseline.
        unsafe {
            let k = _mm_set1_epi32(K[T] as i32);
            for h in 0..2 {
                let (a, b, c, d) = (s.a[h], s.b[h], s.c[h], s.d[h]);
                let f = match T >> 4 {
                    1 => _mm_or_si128(_mm_and_si128(d, b), _mm_andnot_si128(d, c)),
                    2 => _mm_xor_si128(_mm_xor_si128(b, c), d),
                    _ => _mm_xor_si128(c, _mm_or_si128(b, _mm_xor_si128(d, _mm_set1_epi32(-1)))),
                };
                let t = _mm_add_epi32(_mm_add_epi32(f, a), _mm_add_epi32(w[h], k));
                s.tt[h] = t;
                let r = _mm_or_si128(_mm_slli_epi32::<L>(t), _mm_srli_epi32::<R>(t));
                s.a[h] = d;
                s.d[h] = c;
                s.c[h] = b;
                s.b[h] = _mm_add_epi32(b, r);
            }
        }
    }

    macro_rules! stretch {
        ($name:ident; $($t:literal)*) => {
            #[inline(never)]
            pub(super) fn $name(rows: &mut Rows) -> [u32; LANES] {
                // SAFETY: SSE2 is part of the x86_64 baseline.
                let z = unsafe { _mm_setzero_si128() };
                let mut s = State {
                    a: load(&rows[A]),
                    b: load(&rows[B]),
                    c: load(&rows[C]),
                    d: load(&rows[D]),
                    tt: [z; 2],
                };
                $(step::<$t, { ROT[$t] as i32 }, { 32 - ROT[$t] as i32 }>(&mut s, rows);)*
                store(&mut rows[A], s.a);
                store(&mut rows[B], s.b);
                store(&mut rows[C], s.c);
                store(&mut rows[D], s.d);
                let mut tt = [0u32; LANES];
                store(&mut tt, s.tt);
                tt
            }
        };
    }

    stretch!(first; 24 25 26 27 28 29 30 31 32 33 34);
    stretch!(second; 35 36 37 38 39 40 41 42 43 44 45 46 47);
}

#[cfg(not(target_arch = "x86_64"))]
mod kernel {
    use super::{Rows, A, B, C, D, LANES};
    use crate::md5::{round_fn, K, ROT, WORD};

    fn stretch(rows: &mut Rows, steps: std::ops::RangeInclusive<usize>) -> [u32; LANES] {
        let mut tt = [0u32; LANES];
        for k in 0..LANES {
            let (mut a, mut b, mut c, mut d) = (rows[A][k], rows[B][k], rows[C][k], rows[D][k]);
            for t in steps.clone() {
                tt[k] = round_fn(t, b, c, d)
                    .wrapping_add(a)
                    .wrapping_add(rows[WORD[t]][k])
                    .wrapping_add(K[t]);
                let next = b.wrapping_add(tt[k].rotate_left(ROT[t]));
                (a, d, c, b) = (d, c, b, next);
            }
            (rows[A][k], rows[B][k], rows[C][k], rows[D][k]) = (a, b, c, d);
        }
        tt
    }

    pub(super) fn first(rows: &mut Rows) -> [u32; LANES] {
        stretch(rows, 24..=34)
    }

    pub(super) fn second(rows: &mut Rows) -> [u32; LANES] {
        stretch(rows, 35..=47)
    }
}

type Rows = [[u32; LANES]; ROWS];
