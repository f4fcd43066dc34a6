//! CG: inverse power iteration with an inner conjugate-gradient solve.
//!
//! `x` is allocated with `NA + 2` entries but only the first `NA` take part
//! in the computation.

use super::{rng, uniform, Program, State, VarDecl, VarRole, PROGRAM_SEED};
use crate::real::{pairwise_sum, Real};

pub(crate) const NA: usize = 1400;
const NITER: usize = 15;
const CGITMAX: usize = 25;
const SHIFT: f64 = 10.0;

pub(super) fn spec() -> super::KernelSpec {
    super::KernelSpec {
        id: super::KernelId::CG,
        class: super::Class::S,
        checkpoint_vars: vec![VarDecl::new("x", &[NA + 2], VarRole::InputState)],
        scalars: vec![],
        loop_len: NITER,
        loop_index_name: "it",
        float_surface: true,
    }
}

/// Symmetric, strictly diagonally dominant sparse matrix in CSR form.
#[derive(Debug)]
struct Sparse {
    rowstr: Vec<usize>,
    colidx: Vec<usize>,
    values: Vec<f64>,
}

impl Sparse {
    fn make(n: usize) -> Self {
        let mut r = rng(PROGRAM_SEED, 21);
        let offsets = [1usize, 2, 37];
        // couplings[d][i] links i and i + offsets[d]
        let couplings: Vec<Vec<f64>> = offsets
            .iter()
            .map(|&d| (0..n.saturating_sub(d)).map(|_| uniform(&mut r, -0.25, 0.25)).collect())
            .collect();
        let diag: Vec<f64> = (0..n).map(|_| uniform(&mut r, 2.0, 20.0)).collect();
        let mut rowstr = vec![0];
        let mut colidx = Vec::new();
        let mut values = Vec::new();
        for i in 0..n {
            let mut row: Vec<(usize, f64)> = vec![(i, diag[i])];
            for (d, &off) in offsets.iter().enumerate() {
                if i >= off {
                    row.push((i - off, couplings[d][i - off]));
                }
                if i + off < n {
                    row.push((i + off, couplings[d][i]));
                }
            }
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                colidx.push(c);
                values.push(v);
            }
            rowstr.push(colidx.len());
        }
        Sparse {
            rowstr,
            colidx,
            values,
        }
    }

    fn matvec<T: Real>(&self, p: &[T]) -> Vec<T> {
        (0..self.rowstr.len() - 1)
            .map(|row| {
                let (lo, hi) = (self.rowstr[row], self.rowstr[row + 1]);
                let mut acc = p[self.colidx[lo]] * self.values[lo];
                for k in lo + 1..hi {
                    acc = acc + p[self.colidx[k]] * self.values[k];
                }
                acc
            })
            .collect()
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let terms: Vec<T> = a.iter().zip(b).map(|(&x, &y)| x * y).collect();
    pairwise_sum(&terms)
}

#[derive(Debug)]
pub(crate) struct Cg {
    a: Sparse,
}

impl Cg {
    pub(super) fn new() -> Self {
        Cg { a: Sparse::make(NA) }
    }

    /// Approximately solves `A z = x` with a fixed number of CG iterations.
    fn conj_grad<T: Real>(&self, x: &[T]) -> Vec<T> {
        let mut z = vec![T::constant(0.0); x.len()];
        let mut r = x.to_vec();
        let mut p = r.clone();
        let mut rho = dot(&r, &r);
        for _ in 0..CGITMAX {
            let q = self.a.matvec(&p);
            let alpha = rho / dot(&p, &q);
            for (zi, &pi) in z.iter_mut().zip(&p) {
                *zi = *zi + alpha * pi;
            }
            let rho0 = rho;
            for (ri, &qi) in r.iter_mut().zip(&q) {
                *ri = *ri - alpha * qi;
            }
            rho = dot(&r, &r);
            let beta = rho / rho0;
            for (pi, &ri) in p.iter_mut().zip(&r) {
                *pi = ri + beta * *pi;
            }
        }
        z
    }

    fn zeta<T: Real>(&self, x: &[T]) -> T {
        let z = self.conj_grad(x);
        T::constant(1.0) / dot(x, &z) + SHIFT
    }
}

impl Program for Cg {
    fn init(&self, seed: u64) -> State<f64> {
        let mut r = rng(seed, 2);
        State {
            arrays: vec![(0..NA + 2).map(|_| 1.0 + uniform(&mut r, -0.1, 0.1)).collect()],
            reals: vec![],
            ints: vec![],
        }
    }

    fn step<T: Real>(&self, st: &mut State<T>, _iter: usize) {
        let x = &mut st.arrays[0];
        let z = self.conj_grad(&x[..NA]);
        let norm = dot(&z, &z).sqrt();
        for (xi, &zi) in x[..NA].iter_mut().zip(&z) {
            *xi = zi / norm;
        }
    }

    fn reduce<T: Real>(&self, st: &State<T>) -> T {
        self.zeta(&st.arrays[0][..NA])
    }
}
