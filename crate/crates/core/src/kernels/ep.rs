//! EP: Gaussian pair statistics.
//!
//! Each iteration `k` draws a batch of uniform pairs, keeps those inside the
//! unit disc and transforms them into Gaussian deviates (Marsaglia polar
//! method). The annulus counts go to `q[l]`, the coordinate sums to `sx` and
//! `sy`. Every element is read each iteration.

use super::{rng, uniform, Program, PROGRAM_SEED, ScalarDecl, ScalarKind, State, VarDecl, VarRole};
use crate::real::{pairwise_sum, Real};

const NK: usize = 1024;
const NQ: usize = 10;
const LOOP_LEN: usize = 16;

pub(super) fn spec() -> super::KernelSpec {
    super::KernelSpec {
        id: super::KernelId::EP,
        class: super::Class::S,
        checkpoint_vars: vec![VarDecl::new("q", &[NQ], VarRole::Accumulator)],
        scalars: vec![
            ScalarDecl { name: "sx", kind: ScalarKind::Real },
            ScalarDecl { name: "sy", kind: ScalarKind::Real },
        ],
        loop_len: LOOP_LEN,
        loop_index_name: "k",
        float_surface: true,
    }
}

/// Batch `k`: annulus counts and coordinate sums. Like the original, the
/// random stream is fixed and independent of the run seed.
fn batch(k: usize) -> ([f64; NQ], f64, f64) {
    let mut r = rng(PROGRAM_SEED, 1000 + k as u64);
    let mut counts = [0.0; NQ];
    let (mut sx, mut sy) = (0.0, 0.0);
    for _ in 0..NK {
        let x1 = 2.0 * uniform(&mut r, 0.0, 1.0) - 1.0;
        let x2 = 2.0 * uniform(&mut r, 0.0, 1.0) - 1.0;
        let t = x1 * x1 + x2 * x2;
        if t > 1.0 || t == 0.0 {
            continue;
        }
        let f = (-2.0 * t.ln() / t).sqrt();
        let (gx, gy) = (x1 * f, x2 * f);
        let l = gx.abs().max(gy.abs()) as usize;
        if l < NQ {
            counts[l] += 1.0;
            sx += gx;
            sy += gy;
        }
    }
    (counts, sx, sy)
}

#[derive(Debug)]
pub(crate) struct Ep;

impl Ep {
    pub(super) fn new() -> Self {
        Ep
    }
}

impl Program for Ep {
    fn init(&self, _seed: u64) -> State<f64> {
        State {
            arrays: vec![vec![0.0; NQ]],
            reals: vec![0.0, 0.0],
            ints: vec![],
        }
    }

    fn step<T: Real>(&self, st: &mut State<T>, iter: usize) {
        let (counts, sx, sy) = batch(iter);
        for (q, c) in st.arrays[0].iter_mut().zip(counts) {
            *q = *q + c;
        }
        st.reals[0] = st.reals[0] + sx;
        st.reals[1] = st.reals[1] + sy;
    }

    fn reduce<T: Real>(&self, st: &State<T>) -> T {
        let weighted: Vec<T> = st.arrays[0]
            .iter()
            .enumerate()
            .map(|(l, &q)| q * ((l + 1) as f64 / 1000.0))
            .collect();
        (st.reals[0] + st.reals[1]) * 1e-2 + pairwise_sum(&weighted)
    }
}
