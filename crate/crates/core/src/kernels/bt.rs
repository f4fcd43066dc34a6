//! BT: block tri-diagonal solver miniature.
//!
//! The update sweep touches the interior `1..=10` of each axis with a
//! seven-point stencil; the error norm then reads `u[k][j][i][m]` for
//! `k, j, i` in `0..12`. The `j = 12` and `i = 12` planes are never read.

use super::grid::{cube, idx4, norm_box, CELLS, GRID, NCOMP, NI, NJ, NK};
use super::{rng, uniform, Program, State, VarDecl, VarRole, PROGRAM_SEED};
use crate::real::{pairwise_sum, Real};

pub(super) const LOOP_LEN: usize = 60;

pub(super) fn spec() -> super::KernelSpec {
    super::KernelSpec {
        id: super::KernelId::BT,
        class: super::Class::S,
        checkpoint_vars: vec![VarDecl::new("u", &[NK, NJ, NI, NCOMP], VarRole::InputState)],
        scalars: vec![],
        loop_len: LOOP_LEN,
        loop_index_name: "step",
        float_surface: true,
    }
}

/// Smooth manufactured solution, defined over the full array.
pub(super) fn exact_solution() -> Vec<f64> {
    let mut e = vec![0.0; CELLS * NCOMP];
    for (k, j, i) in cube(0, NJ) {
        if k >= NK {
            continue;
        }
        let (xi, eta, zeta) = (i as f64 / 11.0, j as f64 / 11.0, k as f64 / 11.0);
        for m in 0..NCOMP {
            let c = 1.0 + 0.2 * m as f64;
            e[idx4(k, j, i, m)] =
                c + 0.5 * xi * (1.0 - xi) + 0.3 * eta * eta - 0.25 * zeta * (1.0 + m as f64 * xi);
        }
    }
    e
}

pub(super) fn initial_u(seed: u64, exact: &[f64]) -> Vec<f64> {
    let mut r = rng(seed, 1);
    exact.iter().map(|&e| e + uniform(&mut r, -0.5, 0.5)).collect()
}

/// `Σ_m sqrt(Σ (u - exact)² / n)` over the `0..GRID` box.
pub(super) fn error_norm<T: Real>(u: &[T], exact: &[f64]) -> T {
    let n = (GRID * GRID * GRID) as f64;
    let norms: Vec<T> = (0..NCOMP)
        .map(|m| {
            let terms: Vec<T> = norm_box()
                .map(|(k, j, i)| {
                    let p = idx4(k, j, i, m);
                    (u[p] - exact[p]).square()
                })
                .collect();
            (pairwise_sum(&terms) / n).sqrt()
        })
        .collect();
    pairwise_sum(&norms)
}

#[derive(Debug)]
pub(crate) struct Bt {
    exact: Vec<f64>,
    forcing: Vec<f64>,
}

impl Bt {
    pub(super) fn new() -> Self {
        let mut r = rng(PROGRAM_SEED, 11);
        Bt {
            exact: exact_solution(),
            forcing: (0..CELLS * NCOMP).map(|_| uniform(&mut r, -0.01, 0.01)).collect(),
        }
    }
}

impl Program for Bt {
    fn init(&self, seed: u64) -> State<f64> {
        State {
            arrays: vec![initial_u(seed, &self.exact)],
            reals: vec![],
            ints: vec![],
        }
    }

    fn step<T: Real>(&self, st: &mut State<T>, iter: usize) {
        let u = &mut st.arrays[0];
        let ramp = 1.0 + 0.01 * iter as f64;
        let interior: Vec<_> = cube(1, GRID - 1).collect();
        let mut rhs = Vec::with_capacity(interior.len() * NCOMP);
        for &(k, j, i) in &interior {
            for m in 0..NCOMP {
                let c = u[idx4(k, j, i, m)];
                let lap = u[idx4(k - 1, j, i, m)]
                    + u[idx4(k + 1, j, i, m)]
                    + u[idx4(k, j - 1, i, m)]
                    + u[idx4(k, j + 1, i, m)]
                    + u[idx4(k, j, i - 1, m)]
                    + u[idx4(k, j, i + 1, m)]
                    - c * 6.0;
                let couple = u[idx4(k, j, i, (m + 1) % NCOMP)] - c;
                rhs.push(lap * 0.05 + couple * 0.02 + self.forcing[idx4(k, j, i, m)] * ramp);
            }
        }
        for (n, &(k, j, i)) in interior.iter().enumerate() {
            for m in 0..NCOMP {
                let p = idx4(k, j, i, m);
                u[p] = u[p] + rhs[n * NCOMP + m];
            }
        }
    }

    fn reduce<T: Real>(&self, st: &State<T>) -> T {
        error_norm(&st.arrays[0], &self.exact)
    }
}
