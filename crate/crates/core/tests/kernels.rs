//! Access patterns and the perturbation oracle, checked against
//! independently enumerated index sets.

use scrutinize_core::kernels::{Kernel, KernelId, Verdict};
use scrutinize_core::scrutiny::{
    analyze, iteration_reads, oracle_perturbation, oracle_read_tracking, reconcile, sample_perturbations, Effect,
};

/// Row-major flat index of `at` in `shape`.
fn flat(shape: &[usize], at: &[usize]) -> usize {
    shape.iter().zip(at).fold(0, |acc, (&n, &i)| acc * n + i)
}

fn element_reads(kernel: &Kernel, var: &str, j: usize) -> Vec<bool> {
    let mut run = kernel.start(42);
    kernel.run_to(&mut run, j).unwrap();
    let (v, decl) = kernel.spec().var(var).unwrap();
    iteration_reads(kernel, &run, j)[v]
        .chunks(decl.components)
        .map(|c| c.iter().any(|&r| r))
        .collect()
}

#[test]
fn bt_reads_the_twelve_cube() {
    let k = Kernel::s(KernelId::BT);
    let read = element_reads(&k, "u", 0);
    let mut expect = vec![false; 10140];
    for kk in 0..12 {
        for j in 0..12 {
            for i in 0..12 {
                for m in 0..5 {
                    expect[flat(&[12, 13, 13, 5], &[kk, j, i, m])] = true;
                }
            }
        }
    }
    assert_eq!(read, expect);
    assert_eq!(read.iter().filter(|&&r| r).count(), 8640);
}

#[test]
fn mg_reads_a_prefix_of_u() {
    let k = Kernel::s(KernelId::MG);
    let read = element_reads(&k, "u", 1);
    assert!(read[..39304].iter().all(|&r| r));
    assert!(read[39304..].iter().all(|&r| !r));
}

#[test]
fn lu_energy_slice_reads_the_slab_union() {
    let k = Kernel::s(KernelId::LU);
    let read = element_reads(&k, "u", 0);
    let interior = |c: usize| (1..=10).contains(&c);
    let mut n = 0;
    for kk in 0..12 {
        for j in 0..13 {
            for i in 0..13 {
                let slabs = j < 12 && i < 12 && [kk, j, i].iter().filter(|&&c| interior(c)).count() >= 2;
                assert_eq!(read[flat(&[12, 13, 13, 5], &[kk, j, i, 4])], slabs, "({kk},{j},{i})");
                n += slabs as usize;
                for m in 0..4 {
                    assert_eq!(read[flat(&[12, 13, 13, 5], &[kk, j, i, m])], j < 12 && i < 12);
                }
            }
        }
    }
    assert_eq!(n, 1600);
}

#[test]
fn ft_skips_the_padding_layer() {
    let k = Kernel::s(KernelId::FT);
    let read = element_reads(&k, "y", 0);
    for a in 0..64 {
        for b in 0..64 {
            for c in 0..65 {
                assert_eq!(read[flat(&[64, 64, 65], &[a, b, c])], c < 64);
            }
        }
    }
}

#[test]
fn read_sets_are_stable_across_iterations() {
    for id in KernelId::ALL {
        let k = Kernel::s(id);
        let n = k.spec().loop_len;
        let reads: Vec<_> = [0, 1, n / 2, n - 1]
            .into_iter()
            .map(|j| {
                let mut run = k.start(42);
                k.run_to(&mut run, j).unwrap();
                iteration_reads(&k, &run, j)
            })
            .collect();
        assert!(reads.windows(2).all(|w| w[0] == w[1]), "{id}");
    }
}

#[test]
fn more_iterations_classify_the_same() {
    for id in [KernelId::MG, KernelId::BT, KernelId::CG, KernelId::LU] {
        let k = Kernel::s(id);
        let two = analyze(&k, 2, 42).unwrap();
        let three = analyze(&k, 3, 42).unwrap();
        assert_eq!(two.masks(), three.masks(), "{id}");
    }
}

#[test]
fn perturbation_examples() {
    let bt = Kernel::s(KernelId::BT);
    let shape = [12, 13, 13, 5];
    assert_eq!(oracle_perturbation(&bt, 42, "u", flat(&shape, &[0, 12, 0, 0]), 1.0), Some(Effect::NoEffect));
    assert_eq!(oracle_perturbation(&bt, 42, "u", 0, 1.0), Some(Effect::Effect));
    let cg = Kernel::s(KernelId::CG);
    assert_eq!(oracle_perturbation(&cg, 42, "x", 1401, 1.0), Some(Effect::NoEffect));
    assert_eq!(oracle_perturbation(&cg, 42, "x", 1402, 1.0), None);
}

#[test]
fn zeroing_a_critical_element_fails_verification() {
    let k = Kernel::s(KernelId::BT);
    let mut run = k.start(42);
    k.run_to(&mut run, 30).unwrap();
    run.state.arrays[0][flat(&[12, 13, 13, 5], &[5, 5, 5, 2])] = 0.0;
    k.finish(&mut run);
    assert_eq!(k.verify(&run), Verdict::Fail);
}

#[test]
fn unfinished_run_does_not_verify() {
    let k = Kernel::s(KernelId::CG);
    let run = k.start(42);
    assert_eq!(k.verify(&run), Verdict::Fail);
}

#[test]
fn lu_reconciles_with_two_hundred_samples() {
    let k = Kernel::s(KernelId::LU);
    let report = analyze(&k, 2, 42).unwrap();
    let reads = oracle_read_tracking(&k, 2, 42).unwrap();
    let samples = sample_perturbations(&k, &report, 200, 1);
    assert_eq!(samples.len(), 200);
    let rec = reconcile(&report, &reads, &samples);
    assert!(rec.sets_equal());
    assert_eq!(rec.mismatch_count(), 0);
}

#[test]
fn small_uncritical_sets_are_sampled_exhaustively() {
    let k = Kernel::s(KernelId::CG);
    let report = analyze(&k, 2, 42).unwrap();
    let samples = sample_perturbations(&k, &report, 10, 1);
    let unc: Vec<u64> = samples.iter().filter(|s| s.effect == Effect::NoEffect).map(|s| s.element).collect();
    assert_eq!(unc, [1400, 1401]);
    let reads = oracle_read_tracking(&k, 2, 42).unwrap();
    assert!(reconcile(&report, &reads, &samples).is_consistent());
}

#[test]
fn corrupted_mask_is_caught() {
    let k = Kernel::s(KernelId::BT);
    let mut report = analyze(&k, 2, 42).unwrap();
    let reads = oracle_read_tracking(&k, 2, 42).unwrap();
    // claim an unread element is critical and a read one is not
    let mut flags = report.variables[0].mask.to_flags();
    let unread = flat(&[12, 13, 13, 5], &[0, 12, 0, 0]);
    flags[unread] = true;
    flags[0] = false;
    report.variables[0].mask = scrutinize_core::mask::CriticalityMask::from_flags(&flags);
    let samples = sample_perturbations(&k, &report, 4000, 3);
    let rec = reconcile(&report, &reads, &samples);
    assert!(!rec.is_consistent());
    assert_eq!(rec.unread_but_critical, [("u".to_string(), unread as u64)]);
    assert_eq!(rec.read_but_uncritical, [("u".to_string(), 0)]);
    assert!(rec.perturbation_mismatches.iter().any(|s| s.element == 0));
}

#[test]
fn dense_kernels_reconcile_trivially() {
    let k = Kernel::s(KernelId::EP);
    let report = analyze(&k, 2, 42).unwrap();
    let reads = oracle_read_tracking(&k, 2, 42).unwrap();
    assert_eq!(reads.never_read("q").unwrap(), Vec::<u64>::new());
    assert!(reconcile(&report, &reads, &[]).sets_equal());
}
