//! Central-difference oracle for the per-iteration output of a kernel.

use scrutinize_core::kernels::{Kernel, KernelRun};

use super::dd::DoubleDouble;

/// `∂ reduce(step_j(state)) / ∂ state.arrays[var][idx]` by central
/// differences in double-double, step `1e-6 · max(1, |x|)`.
pub fn central_difference(kernel: &Kernel, run: &KernelRun, j: usize, var: usize, idx: usize) -> f64 {
    let x = run.state.arrays[var][idx];
    let h = 1e-6 * x.abs().max(1.0);
    let eval = |shift: f64| {
        let mut st = run.state.map(|v, i, value| {
            let d = DoubleDouble::new(value);
            if v == var && i == idx {
                d + shift
            } else {
                d
            }
        });
        kernel.step_state(&mut st, j);
        kernel.reduce(&st)
    };
    ((eval(h) - eval(-h)) / (2.0 * h)).to_f64()
}

pub fn relative_error(approx: f64, exact: f64) -> f64 {
    (approx - exact).abs() / exact.abs()
}
