//! MG: two-level V-cycle miniature.
//!
//! `u` and `r` are allocated with the class-S `NR = 46480` entries. The
//! finest level is a 34×34×34 grid at offset 0, so `u` is read only over its
//! first 39304 entries. The residual `r` is addressed through a level offset
//! table `ir`: the finest level at 0 and the coarsest (4×4×4) at 46352, the
//! offsets a five-level class-S hierarchy assigns to those two levels.
//!
//! Per iteration:
//! * `resid` refreshes `r` on the interior `1..=32` from a 27-point stencil
//!   of `u` (reads all of `u` on 0..=33);
//! * `rprj3` restricts the interior of `r` onto the coarse level;
//! * `psinv` corrects `u` on the interior from a lower one-sided stencil of
//!   `r`, reading `r` over `0..=32`, plus the coarse correction.

use super::{rng, uniform, Program, State, VarDecl, VarRole, PROGRAM_SEED};
use crate::real::{pairwise_sum, Real};

pub(crate) const NR: usize = 46480;
pub(crate) const N: usize = 34;
pub(crate) const NV: usize = N * N * N;
const NC: usize = 4;
const BLOCK: usize = 8;
/// `ir[level]`: level 0 is the coarsest, level 1 the finest.
pub(crate) const IR: [usize; 2] = [46352, 0];
const NIT: usize = 4;

/// resid stencil weights: centre, face, edge, corner.
const A: [f64; 4] = [-2.6, 0.11, 0.047, 0.021];
/// psinv weights on `r` at offsets with 0, 1, 2, 3 lowered coordinates.
const C: [f64; 4] = [0.21, 0.07, 0.03, 0.012];
const COARSE_WEIGHT: f64 = 0.05;

pub(super) fn spec() -> super::KernelSpec {
    super::KernelSpec {
        id: super::KernelId::MG,
        class: super::Class::S,
        checkpoint_vars: vec![
            VarDecl::new("u", &[NR], VarRole::InputState),
            VarDecl::new("r", &[NR], VarRole::Residual),
        ],
        scalars: vec![],
        loop_len: NIT,
        loop_index_name: "it",
        float_surface: true,
    }
}

#[inline]
pub(crate) fn fine(k: usize, j: usize, i: usize) -> usize {
    IR[1] + (k * N + j) * N + i
}

#[inline]
fn coarse(k: usize, j: usize, i: usize) -> usize {
    IR[0] + (k * NC + j) * NC + i
}

fn interior() -> impl Iterator<Item = (usize, usize, usize)> {
    (1..N - 1).flat_map(|k| (1..N - 1).flat_map(move |j| (1..N - 1).map(move |i| (k, j, i))))
}

#[derive(Debug)]
pub(crate) struct Mg {
    v: Vec<f64>,
}

impl Mg {
    pub(super) fn new() -> Self {
        let mut r = rng(PROGRAM_SEED, 31);
        Mg {
            v: (0..NV).map(|_| uniform(&mut r, -1.0, 1.0)).collect(),
        }
    }

    fn resid<T: Real>(&self, u: &[T], r: &mut [T]) {
        for (k, j, i) in interior() {
            let mut by_class = [T::constant(0.0); 4];
            for dk in 0..3 {
                for dj in 0..3 {
                    for di in 0..3 {
                        let class = (dk != 1) as usize + (dj != 1) as usize + (di != 1) as usize;
                        let x = u[fine(k + dk - 1, j + dj - 1, i + di - 1)];
                        by_class[class] = by_class[class] + x;
                    }
                }
            }
            let au = by_class[0] * A[0] + by_class[1] * A[1] + by_class[2] * A[2] + by_class[3] * A[3];
            let p = fine(k, j, i);
            r[p] = r[p] * 0.5 + (-au + self.v[p]) * 0.1;
        }
    }

    fn rprj3<T: Real>(&self, r: &mut [T]) {
        for (kc, jc, ic) in (0..NC).flat_map(|k| (0..NC).flat_map(move |j| (0..NC).map(move |i| (k, j, i)))) {
            let mut terms = Vec::with_capacity(BLOCK * BLOCK * BLOCK);
            for a in 0..BLOCK {
                for b in 0..BLOCK {
                    for c in 0..BLOCK {
                        terms.push(r[fine(1 + BLOCK * kc + a, 1 + BLOCK * jc + b, 1 + BLOCK * ic + c)]);
                    }
                }
            }
            let p = coarse(kc, jc, ic);
            r[p] = r[p] * 0.5 + pairwise_sum(&terms) * (1.0 / 512.0);
        }
    }

    fn psinv<T: Real>(&self, r: &[T], u: &mut [T]) {
        for (k, j, i) in interior() {
            let mut by_class = [T::constant(0.0); 4];
            for dk in 0..2 {
                for dj in 0..2 {
                    for di in 0..2 {
                        let class = dk + dj + di;
                        let x = r[fine(k - dk, j - dj, i - di)];
                        by_class[class] = by_class[class] + x;
                    }
                }
            }
            let corr = by_class[0] * C[0] + by_class[1] * C[1] + by_class[2] * C[2] + by_class[3] * C[3];
            let rc = r[coarse((k - 1) / BLOCK, (j - 1) / BLOCK, (i - 1) / BLOCK)];
            let p = fine(k, j, i);
            u[p] = u[p] + corr + rc * COARSE_WEIGHT;
        }
    }
}

impl Program for Mg {
    fn init(&self, seed: u64) -> State<f64> {
        let mut g = rng(seed, 3);
        let u = (0..NR).map(|_| uniform(&mut g, -1.0, 1.0)).collect();
        let r = (0..NR).map(|_| uniform(&mut g, -0.5, 0.5)).collect();
        State {
            arrays: vec![u, r],
            reals: vec![],
            ints: vec![],
        }
    }

    fn step<T: Real>(&self, st: &mut State<T>, _iter: usize) {
        let (u, rest) = st.arrays.split_first_mut().expect("u and r");
        let r = &mut rest[0];
        self.resid(u, r);
        self.rprj3(r);
        self.psinv(r, u);
    }

    /// `norm2u3`-style check: L2 and max norms of the residual plus the
    /// solution and coarse-level norms.
    fn reduce<T: Real>(&self, st: &State<T>) -> T {
        let (u, r) = (&st.arrays[0], &st.arrays[1]);
        let mut r_sq = Vec::with_capacity(33 * 33 * 33);
        for k in 0..N - 1 {
            for j in 0..N - 1 {
                for i in 0..N - 1 {
                    r_sq.push(r[fine(k, j, i)].square());
                }
            }
        }
        let rnm2 = (pairwise_sum(&r_sq) / r_sq.len() as f64).sqrt();
        let mut rnmu = r[fine(1, 1, 1)].abs();
        for (k, j, i) in interior().skip(1) {
            rnmu = rnmu.max(r[fine(k, j, i)].abs());
        }
        let u_sq: Vec<T> = u[..NV].iter().map(|&x| x.square()).collect();
        let unorm = (pairwise_sum(&u_sq) / NV as f64).sqrt();
        let rc_sq: Vec<T> = r[IR[0]..IR[0] + NC * NC * NC].iter().map(|&x| x.square()).collect();
        let rcn = pairwise_sum(&rc_sq) / (NC * NC * NC) as f64;
        rnm2 + rnmu + unorm + rcn
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_offsets_fit_the_allocation() {
        assert_eq!(NV, 39304);
        assert_eq!(IR[0] + NC * NC * NC, 46416);
        assert!(IR[0] + NC * NC * NC <= NR);
        assert!(IR[1] + NV <= IR[0]);
        // five-level class-S hierarchy: 34³, 18³, 10³, 6³, 4³
        assert_eq!(IR[0], 34usize.pow(3) + 18usize.pow(3) + 10usize.pow(3) + 6usize.pow(3));
    }
}
