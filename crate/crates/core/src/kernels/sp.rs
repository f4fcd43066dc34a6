//! SP: scalar pentadiagonal solver miniature.
//!
//! Same variable and the same error norm as BT. The sweep uses a
//! five-point line stencil per axis over the interior `2..=9`, which reaches
//! `0..=11` and nothing beyond.

use super::bt::{error_norm, exact_solution, initial_u};
use super::grid::{cube, idx4, CELLS, GRID, NCOMP, NI, NJ, NK};
use super::{rng, uniform, Program, State, VarDecl, VarRole, PROGRAM_SEED};
use crate::real::Real;

const LOOP_LEN: usize = 100;

pub(super) fn spec() -> super::KernelSpec {
    super::KernelSpec {
        id: super::KernelId::SP,
        class: super::Class::S,
        checkpoint_vars: vec![VarDecl::new("u", &[NK, NJ, NI, NCOMP], VarRole::InputState)],
        scalars: vec![],
        loop_len: LOOP_LEN,
        loop_index_name: "step",
        float_surface: true,
    }
}

#[derive(Debug)]
pub(crate) struct Sp {
    exact: Vec<f64>,
    forcing: Vec<f64>,
}

impl Sp {
    pub(super) fn new() -> Self {
        let mut r = rng(PROGRAM_SEED, 12);
        Sp {
            exact: exact_solution(),
            forcing: (0..CELLS * NCOMP).map(|_| uniform(&mut r, -0.01, 0.01)).collect(),
        }
    }
}

impl Program for Sp {
    fn init(&self, seed: u64) -> State<f64> {
        State {
            arrays: vec![initial_u(seed, &self.exact)],
            reals: vec![],
            ints: vec![],
        }
    }

    fn step<T: Real>(&self, st: &mut State<T>, iter: usize) {
        let u = &mut st.arrays[0];
        let ramp = 1.0 - 0.002 * iter as f64;
        let interior: Vec<_> = cube(2, GRID - 2).collect();
        let mut rhs = Vec::with_capacity(interior.len() * NCOMP);
        for &(k, j, i) in &interior {
            for m in 0..NCOMP {
                let c = u[idx4(k, j, i, m)];
                let near = u[idx4(k - 1, j, i, m)]
                    + u[idx4(k + 1, j, i, m)]
                    + u[idx4(k, j - 1, i, m)]
                    + u[idx4(k, j + 1, i, m)]
                    + u[idx4(k, j, i - 1, m)]
                    + u[idx4(k, j, i + 1, m)];
                let far = u[idx4(k - 2, j, i, m)]
                    + u[idx4(k + 2, j, i, m)]
                    + u[idx4(k, j - 2, i, m)]
                    + u[idx4(k, j + 2, i, m)]
                    + u[idx4(k, j, i - 2, m)]
                    + u[idx4(k, j, i + 2, m)];
                let d4 = near * (4.0 / 3.0) - far * (1.0 / 12.0) - c * 7.5;
                rhs.push(d4 * 0.04 + self.forcing[idx4(k, j, i, m)] * ramp);
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
