//! Differential paths for the two-block identical-prefix attack.
//!
//! Rather than carrying hand-transcribed condition tables, each block's path
//! is traced from the reference collision pair: the signed bit differences of
//! every state word, the bitwise output differences of every round function,
//! and the additive/rotated differences of every step. From those we build a
//! per-step, per-bit table of which `(Q_t, Q_{t-1}, Q_{t-2})` bit triples keep
//! the round function on the path. Any message pair that satisfies every table
//! entry and every rotation check follows the path exactly.
//!
//! State words are indexed with an offset of three: `q[i + 3]` holds `Q_i`
//! for `i` in `-3..=64`, and step `t` computes `Q_{t+1}`.

use crate::md5::{round_fn, IhvState, K, ROT, WORD};

use super::reference;

pub(crate) const QOFF: usize = 3;
pub(crate) const QLEN: usize = 68;

#[derive(Clone, Debug)]
pub(crate) struct DiffPath {
    /// Message word differences `m' - m`.
    pub dm: [u32; 16],
    /// Modular state differences `Q'_i - Q_i`.
    #[cfg_attr(not(test), allow(dead_code))]
    pub dq: [u32; QLEN],
    /// Bit positions where `Q_i` and `Q'_i` differ.
    pub dq_xor: [u32; QLEN],
    /// For step `t` and bit triple `c = x<<2 | y<<1 | z`, the bit positions
    /// where that triple would leave the path.
    pub forbid: [[u32; 8]; 64],
    pub active: [bool; 64],
    /// Additive difference entering the rotation of step `t`.
    pub dt: [u32; 64],
    /// Difference the rotation of step `t` must produce.
    pub dr: [u32; 64],
    /// IHV difference entering the block.
    pub in_delta: [u32; 4],
    /// IHV difference leaving the block.
    pub out_delta: [u32; 4],
}

pub(crate) struct Trace {
    pub q: [u32; QLEN],
    pub f: [u32; 64],
    pub t: [u32; 64],
    pub out: IhvState,
}

pub(crate) fn trace(iv: IhvState, m: &[u32; 16]) -> Trace {
    let mut q = [0u32; QLEN];
    q[0] = iv.a;
    q[1] = iv.d;
    q[2] = iv.c;
    q[3] = iv.b;
    let mut f = [0u32; 64];
    let mut t = [0u32; 64];
    for s in 0..64 {
        let i = s + QOFF;
        f[s] = round_fn(s, q[i], q[i - 1], q[i - 2]);
        t[s] = f[s]
            .wrapping_add(q[i - 3])
            .wrapping_add(m[WORD[s]])
            .wrapping_add(K[s]);
        q[i + 1] = q[i].wrapping_add(t[s].rotate_left(ROT[s]));
    }
    let out = IhvState::new(
        iv.a.wrapping_add(q[64]),
        iv.b.wrapping_add(q[67]),
        iv.c.wrapping_add(q[66]),
        iv.d.wrapping_add(q[65]),
    );
    Trace { q, f, t, out }
}

#[inline(always)]
fn bit(x: u32, j: usize) -> u32 {
    (x >> j) & 1
}

/// Forbidden bit triples of step `s`, given each input's values in both
/// messages and the round function outputs `f`, `f2` to reproduce. Only the
/// bits where an input differs matter in `inputs`.
fn step_table(s: usize, inputs: [(u32, u32); 3], f: u32, f2: u32) -> [u32; 8] {
    let mut forbid = [0u32; 8];
    for j in 0..32 {
        let want = bit(f2, j) as i32 - bit(f, j) as i32;
        for c in 0..8u32 {
            let vals = [(c >> 2) & 1, (c >> 1) & 1, c & 1];
            let mut ok = true;
            let mut flipped = [0u32; 3];
            for k in 0..3 {
                let (p, p2) = (bit(inputs[k].0, j), bit(inputs[k].1, j));
                flipped[k] = vals[k];
                if p != p2 {
                    // Below the top bit the sign of a difference is part of
                    // the path; at the top bit only its presence is.
                    if j < 31 && vals[k] != p {
                        ok = false;
                    }
                    flipped[k] ^= 1;
                }
            }
            if ok {
                let o1 = round_fn(s, vals[0], vals[1], vals[2]) & 1;
                let o2 = round_fn(s, flipped[0], flipped[1], flipped[2]) & 1;
                let got = o2 as i32 - o1 as i32;
                ok = if j < 31 { got == want } else { (got != 0) == (want != 0) };
            }
            if !ok {
                forbid[c as usize] |= 1 << j;
            }
        }
    }
    forbid
}

impl DiffPath {
    /// Trace the path followed by `(m, m')` from `(iv, iv')`.
    pub fn from_pair(iv: IhvState, iv2: IhvState, m: &[u32; 16], m2: &[u32; 16]) -> Self {
        let a = trace(iv, m);
        let b = trace(iv2, m2);
        let mut dm = [0u32; 16];
        for i in 0..16 {
            dm[i] = m2[i].wrapping_sub(m[i]);
        }
        let mut dq = [0u32; QLEN];
        let mut dq_xor = [0u32; QLEN];
        for i in 0..QLEN {
            dq[i] = b.q[i].wrapping_sub(a.q[i]);
            dq_xor[i] = b.q[i] ^ a.q[i];
        }
        let mut forbid = [[0u32; 8]; 64];
        let mut active = [false; 64];
        let mut dt = [0u32; 64];
        let mut dr = [0u32; 64];
        for s in 0..64 {
            let i = s + QOFF;
            let inputs = [(a.q[i], b.q[i]), (a.q[i - 1], b.q[i - 1]), (a.q[i - 2], b.q[i - 2])];
            forbid[s] = step_table(s, inputs, a.f[s], b.f[s]);
            active[s] = forbid[s].iter().any(|&w| w != 0);
            dt[s] = b.t[s].wrapping_sub(a.t[s]);
            dr[s] = b.t[s]
                .rotate_left(ROT[s])
                .wrapping_sub(a.t[s].rotate_left(ROT[s]));
        }
        DiffPath {
            dm,
            dq,
            dq_xor,
            forbid,
            active,
            dt,
            dr,
            in_delta: iv.delta_to(&iv2),
            out_delta: a.out.delta_to(&b.out),
        }
    }

    /// The two block paths of the reference collision.
    pub fn reference_paths() -> (DiffPath, DiffPath) {
        let (m_a, m_b) = reference::message_words();
        let iv = IhvState::INITIAL;
        let first = DiffPath::from_pair(iv, iv, &m_a[0], &m_b[0]);
        let mid_a = trace(iv, &m_a[0]).out;
        let mid_b = trace(iv, &m_b[0]).out;
        let second = DiffPath::from_pair(mid_a, mid_b, &m_a[1], &m_b[1]);
        (first, second)
    }

    /// Whether step `s` stays on the path for state words `x = Q_s`,
    /// `y = Q_{s-1}`, `z = Q_{s-2}`.
    #[inline(always)]
    pub fn step_ok(&self, s: usize, x: u32, y: u32, z: u32) -> bool {
        if !self.active[s] {
            return true;
        }
        let f = &self.forbid[s];
        let (nx, ny, nz) = (!x, !y, !z);
        let bad = (nx & ny & nz & f[0])
            | (nx & ny & z & f[1])
            | (nx & y & nz & f[2])
            | (nx & y & z & f[3])
            | (x & ny & nz & f[4])
            | (x & ny & z & f[5])
            | (x & y & nz & f[6])
            | (x & y & z & f[7]);
        bad == 0
    }

    /// Whether rotating `t` and `t + dt[s]` produces the required difference.
    #[inline(always)]
    pub fn rotation_ok(&self, s: usize, t: u32) -> bool {
        let d = self.dt[s];
        d == 0
            || t.wrapping_add(d)
                .rotate_left(ROT[s])
                .wrapping_sub(t.rotate_left(ROT[s]))
                == self.dr[s]
    }

    /// Given `y = Q_{s-1}` and `z = Q_{s-2}`, the bits of `Q_s` forced to one
    /// and the bits left free by step `s`. `None` if some bit has no valid value.
    #[inline(always)]
    pub fn free_word(&self, s: usize, y: u32, z: u32) -> Option<(u32, u32)> {
        let f = &self.forbid[s];
        let (ny, nz) = (!y, !z);
        let sel = |c: usize| {
            let m = match c & 3 {
                0 => ny & nz,
                1 => ny & z,
                2 => y & nz,
                _ => y & z,
            };
            m & !f[c]
        };
        let can0 = sel(0) | sel(1) | sel(2) | sel(3);
        let can1 = sel(4) | sel(5) | sel(6) | sel(7);
        if can0 | can1 != u32::MAX {
            return None;
        }
        Some((can1 & !can0, can0 & can1))
    }

    /// Bit `j` of triple `c` is allowed at step `s`.
    #[inline(always)]
    pub fn allows(&self, s: usize, j: usize, c: usize) -> bool {
        (self.forbid[s][c] >> j) & 1 == 0
    }

    /// Bit positions of `Q_i` that take part in some condition.
    pub fn involved_bits(&self, i: isize) -> u32 {
        let mut mask = 0u32;
        for s in 0..64isize {
            let slot = s - i;
            if !(0..=2).contains(&slot) {
                continue;
            }
            let shift = 2 - slot as u32;
            let f = &self.forbid[s as usize];
            for c in 0..8usize {
                mask |= f[c] ^ f[c ^ (1 << shift)];
            }
        }
        mask
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::md5::compress_words;

    #[test]
    fn reference_pair_traces_to_a_near_collision_then_a_collision() {
        let (first, second) = DiffPath::reference_paths();
        assert_eq!(first.in_delta, [0; 4]);
        assert_eq!(
            first.out_delta,
            [0x8000_0000, 0x8200_0000, 0x8200_0000, 0x8200_0000]
        );
        assert_eq!(second.in_delta, first.out_delta);
        assert_eq!(second.out_delta, [0; 4]);
        assert_eq!(first.dm[4], 0x8000_0000);
        assert_eq!(first.dm[11], 0x8000);
        assert_eq!(first.dm[14], 0x8000_0000);
        assert_eq!(second.dm[11], 0u32.wrapping_sub(0x8000));
        // Feed-forward: a, b, c, d pick up Q61, Q64, Q63, Q62.
        let d = &first.dq;
        assert_eq!(first.out_delta, [d[64], d[67], d[66], d[65]]);
    }

    #[test]
    fn reference_pair_satisfies_its_own_conditions() {
        let (m_a, _) = reference::message_words();
        let (first, second) = DiffPath::reference_paths();
        let t1 = trace(IhvState::INITIAL, &m_a[0]);
        let t2 = trace(t1.out, &m_a[1]);
        for (path, tr) in [(&first, &t1), (&second, &t2)] {
            for s in 0..64 {
                let i = s + QOFF;
                assert!(path.step_ok(s, tr.q[i], tr.q[i - 1], tr.q[i - 2]), "step {s}");
                assert!(path.rotation_ok(s, tr.t[s]), "rotation {s}");
            }
        }
        assert_eq!(compress_words(IhvState::INITIAL, &m_a[0]), t1.out);
    }

    #[test]
    fn free_word_respects_conditions() {
        let (first, _) = DiffPath::reference_paths();
        let (m_a, _) = reference::message_words();
        let tr = trace(IhvState::INITIAL, &m_a[0]);
        for s in 1..20 {
            let i = s + QOFF;
            let (ones, free) = first.free_word(s, tr.q[i - 1], tr.q[i - 2]).unwrap();
            for r in [0u32, u32::MAX, 0x5555_5555] {
                let x = ones | (r & free);
                assert!(first.step_ok(s, x, tr.q[i - 1], tr.q[i - 2]));
            }
        }
    }

    #[test]
    fn round_two_conditions_are_sparse() {
        let (first, second) = DiffPath::reference_paths();
        for path in [&first, &second] {
            assert!(path.involved_bits(17).count_ones() <= 6);
            assert_eq!(path.involved_bits(30), 0);
        }
        assert_eq!(first.involved_bits(2), 0);
    }
}
