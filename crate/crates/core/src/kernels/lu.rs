//! LU: SSOR miniature.
//!
//! `rho_i`, `qs`, `rsd` and `u[..][..][..][0..4]` are read over the
//! `0..12` box. The energy component `u[..][..][..][4]` only enters through
//! line fluxes along each axis, computed on lines whose two transverse
//! coordinates are interior; together they cover three slabs
//! `[1..10][1..10][0..11]`, `[1..10][0..11][1..10]`, `[0..11][1..10][1..10]`.

use super::bt::exact_solution;
use super::grid::{cube, idx3, idx4, norm_box, GRID, NCOMP, NI, NJ, NK};
use super::{rng, uniform, Program, State, VarDecl, VarRole};
use crate::real::{pairwise_sum, Real};

const ITMAX: usize = 50;
const OMEGA: f64 = 1.2;

pub(super) fn spec() -> super::KernelSpec {
    super::KernelSpec {
        id: super::KernelId::LU,
        class: super::Class::S,
        checkpoint_vars: vec![
            VarDecl::new("u", &[NK, NJ, NI, NCOMP], VarRole::InputState),
            VarDecl::new("rho_i", &[NK, NJ, NI], VarRole::InputState),
            VarDecl::new("qs", &[NK, NJ, NI], VarRole::InputState),
            VarDecl::new("rsd", &[NK, NJ, NI, NCOMP], VarRole::Residual),
        ],
        scalars: vec![],
        loop_len: ITMAX,
        loop_index_name: "istep",
        float_surface: true,
    }
}

#[inline]
fn interior(c: usize) -> bool {
    (1..GRID - 1).contains(&c)
}

/// Whether `u[k][j][i][4]` takes part in the flux computation.
pub(crate) fn in_flux_slabs(k: usize, j: usize, i: usize) -> bool {
    let inside = [k, j, i].iter().filter(|&&c| c < GRID).count() == 3;
    let n_interior = [k, j, i].iter().filter(|&&c| interior(c)).count();
    inside && n_interior >= 2
}

#[derive(Debug)]
pub(crate) struct Lu;

impl Lu {
    pub(super) fn new() -> Self {
        Lu
    }

    /// Adds the flux difference along one axis to `rsd[..][4]`.
    ///
    /// `at(t, s, l)` maps (transverse, transverse, along-line) coordinates
    /// to `(k, j, i)`.
    fn line_flux<T: Real>(
        u: &[T],
        qs: &[T],
        rsd: &mut [T],
        at: impl Fn(usize, usize, usize) -> (usize, usize, usize),
    ) {
        for t in 1..GRID - 1 {
            for s in 1..GRID - 1 {
                let flux: Vec<T> = (0..GRID)
                    .map(|l| {
                        let (k, j, i) = at(t, s, l);
                        u[idx4(k, j, i, 4)] * (qs[idx3(k, j, i)] * 0.1 + 1.0)
                    })
                    .collect();
                for l in 1..GRID - 1 {
                    let (k, j, i) = at(t, s, l);
                    let p = idx4(k, j, i, 4);
                    rsd[p] = rsd[p] + (flux[l + 1] - flux[l - 1]) * 0.05;
                }
            }
        }
    }
}

impl Program for Lu {
    fn init(&self, seed: u64) -> State<f64> {
        let mut r = rng(seed, 5);
        let exact = exact_solution();
        let u: Vec<f64> = exact.iter().map(|&e| e + uniform(&mut r, -0.3, 0.3)).collect();
        let cells = NK * NJ * NI;
        let rho_i = (0..cells).map(|_| uniform(&mut r, 0.4, 1.0)).collect();
        let qs = (0..cells).map(|_| uniform(&mut r, 0.0, 2.0)).collect();
        let rsd = (0..cells * NCOMP).map(|_| uniform(&mut r, -0.1, 0.1)).collect();
        State {
            arrays: vec![u, rho_i, qs, rsd],
            reals: vec![],
            ints: vec![],
        }
    }

    fn step<T: Real>(&self, st: &mut State<T>, _iter: usize) {
        let [u, rho_i, qs, rsd] = &mut st.arrays[..] else {
            unreachable!("LU has four arrays")
        };
        for (k, j, i) in norm_box() {
            let c = idx3(k, j, i);
            rho_i[c] = rho_i[c] * 0.5 + T::constant(0.5) / u[idx4(k, j, i, 0)];
            let ke = u[idx4(k, j, i, 1)].square()
                + u[idx4(k, j, i, 2)].square()
                + u[idx4(k, j, i, 3)].square();
            qs[c] = qs[c] * 0.5 + ke * rho_i[c] * 0.25;
            for m in 0..4 {
                let p = idx4(k, j, i, m);
                rsd[p] = rsd[p] * 0.9 + u[p] * rho_i[c] * 0.05 - qs[c] * 0.01;
            }
            let p = idx4(k, j, i, 4);
            rsd[p] = rsd[p] * 0.9;
        }
        Self::line_flux(u, qs, rsd, |t, s, l| (t, s, l));
        Self::line_flux(u, qs, rsd, |t, s, l| (t, l, s));
        Self::line_flux(u, qs, rsd, |t, s, l| (l, t, s));
        for (k, j, i) in cube(1, GRID - 1) {
            for m in 0..NCOMP {
                let p = idx4(k, j, i, m);
                u[p] = u[p] + rsd[p] * (0.02 * OMEGA);
            }
        }
    }

    fn reduce<T: Real>(&self, st: &State<T>) -> T {
        let [u, rho_i, qs, rsd] = &st.arrays[..] else {
            unreachable!("LU has four arrays")
        };
        let n = (GRID * GRID * GRID) as f64;
        let l2 = |a: &[T], m: Option<usize>| {
            let terms: Vec<T> = norm_box()
                .map(|(k, j, i)| match m {
                    Some(m) => a[idx4(k, j, i, m)].square(),
                    None => a[idx3(k, j, i)].square(),
                })
                .collect();
            (pairwise_sum(&terms) / n).sqrt()
        };
        let mut parts: Vec<T> = (0..NCOMP).map(|m| l2(rsd, Some(m))).collect();
        parts.extend((0..4).map(|m| l2(u, Some(m))));
        let energy: Vec<T> = norm_box()
            .filter(|&(k, j, i)| in_flux_slabs(k, j, i))
            .map(|(k, j, i)| u[idx4(k, j, i, 4)].square())
            .collect();
        parts.push((pairwise_sum(&energy) / energy.len() as f64).sqrt());
        parts.push(l2(rho_i, None));
        parts.push(l2(qs, None));
        pairwise_sum(&parts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slab_union_by_inclusion_exclusion() {
        let n = (0..NK)
            .flat_map(|k| (0..NJ).flat_map(move |j| (0..NI).map(move |i| (k, j, i))))
            .filter(|&(k, j, i)| in_flux_slabs(k, j, i))
            .count();
        assert_eq!(n, 3 * 1200 - 3 * 1000 + 1000);
        assert_eq!(n, 1600);
    }
}
