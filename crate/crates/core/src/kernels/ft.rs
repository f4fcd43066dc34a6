//! FT: spectral evolution and checksum miniature.
//!
//! `y` is `dcomplex y[64][64][65]`, padded by one on the last axis. The
//! evolve and checksum loops run the last index over `0..64`, so the padding
//! layer at index 64 never takes part. `sums[kt mod 6]` accumulates each
//! iteration's checksum.

use std::f64::consts::PI;

use super::{Program, State, VarDecl, VarRole};
use crate::real::{pairwise_sum, Real};

const NX: usize = 64;
const NY: usize = 64;
const NZ: usize = 64;
const PAD: usize = NX + 1;
const NITER: usize = 6;

pub(super) fn spec() -> super::KernelSpec {
    super::KernelSpec {
        id: super::KernelId::FT,
        class: super::Class::S,
        checkpoint_vars: vec![
            VarDecl::new("y", &[NZ, NY, PAD], VarRole::InputState).complex(),
            VarDecl::new("sums", &[NITER], VarRole::Accumulator).complex(),
        ],
        scalars: vec![],
        loop_len: NITER,
        loop_index_name: "kt",
        float_surface: true,
    }
}

/// Real index of the real part of `y[a][b][c]`.
#[inline]
pub(crate) fn yidx(a: usize, b: usize, c: usize) -> usize {
    ((a * NY + b) * PAD + c) * 2
}

#[derive(Debug)]
pub(crate) struct Ft {
    /// Per active element: twiddle (re, im) and checksum weight.
    twiddle: Vec<(f64, f64)>,
    weight: Vec<f64>,
}

impl Ft {
    pub(super) fn new() -> Self {
        let mut twiddle = Vec::with_capacity(NZ * NY * NX);
        let mut weight = Vec::with_capacity(NZ * NY * NX);
        for a in 0..NZ {
            for b in 0..NY {
                for c in 0..NX {
                    let phase = 1 + (a * a + 2 * b + 3 * c) % 63;
                    let theta = 2.0 * PI * phase as f64 / 128.0;
                    let decay = 1.0 - 1e-3 * ((a * a + b * b + c * c) as f64 / (NX * NX) as f64);
                    twiddle.push((decay * theta.cos(), decay * theta.sin()));
                    weight.push(1.0 + ((a + 2 * b + 3 * c) % 7) as f64 / 8.0);
                }
            }
        }
        Ft { twiddle, weight }
    }
}

impl Program for Ft {
    fn init(&self, seed: u64) -> State<f64> {
        let mut r = super::rng(seed, 6);
        let y = (0..NZ * NY * PAD * 2).map(|_| super::uniform(&mut r, -1.0, 1.0)).collect();
        let sums = (0..NITER * 2).map(|_| super::uniform(&mut r, -0.1, 0.1)).collect();
        State {
            arrays: vec![y, sums],
            reals: vec![],
            ints: vec![],
        }
    }

    fn step<T: Real>(&self, st: &mut State<T>, iter: usize) {
        let (y, rest) = st.arrays.split_first_mut().expect("y and sums");
        let sums = &mut rest[0];
        let mut plane_re = Vec::with_capacity(NZ);
        let mut plane_im = Vec::with_capacity(NZ);
        let mut row_re = Vec::with_capacity(NY * NX);
        let mut row_im = Vec::with_capacity(NY * NX);
        for a in 0..NZ {
            row_re.clear();
            row_im.clear();
            for b in 0..NY {
                for c in 0..NX {
                    let n = (a * NY + b) * NX + c;
                    let p = yidx(a, b, c);
                    let (tr, ti) = self.twiddle[n];
                    let (re, im) = (y[p], y[p + 1]);
                    let re2 = re * tr - im * ti;
                    let im2 = re * ti + im * tr;
                    y[p] = re2;
                    y[p + 1] = im2;
                    row_re.push(re2 * self.weight[n]);
                    row_im.push(im2 * self.weight[n]);
                }
            }
            plane_re.push(pairwise_sum(&row_re));
            plane_im.push(pairwise_sum(&row_im));
        }
        let scale = 1.0 / (NX * NY * NZ) as f64;
        let s = 2 * (iter % NITER);
        sums[s] = sums[s] + pairwise_sum(&plane_re) * scale;
        sums[s + 1] = sums[s + 1] + pairwise_sum(&plane_im) * scale;
    }

    fn reduce<T: Real>(&self, st: &State<T>) -> T {
        let (y, sums) = (&st.arrays[0], &st.arrays[1]);
        let checks: Vec<T> = (0..NITER)
            .map(|s| sums[2 * s] * (1.0 + s as f64) + sums[2 * s + 1] * (1.5 + s as f64))
            .collect();
        let mut field = Vec::with_capacity(NZ * NY * NX);
        for a in 0..NZ {
            for b in 0..NY {
                for c in 0..NX {
                    let p = yidx(a, b, c);
                    field.push(y[p] * 0.5 + y[p + 1] * 0.25);
                }
            }
        }
        pairwise_sum(&checks) + pairwise_sum(&field) * (1.0 / (NX * NY * NZ) as f64)
    }
}
