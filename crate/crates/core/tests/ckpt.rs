use std::fs;

use scrutinize_core::ckpt::{
    bundle_name, latest_bundle, mask_file_name, read_bundle, restart, storage_report, write_checkpoint,
    CheckpointPolicy, Checkpointer, CkptError,
};
use scrutinize_core::kernels::{Kernel, KernelId, Verdict};
use scrutinize_core::mask::{self, CriticalityMask, FillPolicy};
use scrutinize_core::scrutiny::{analyze, analyze_or_fiat};

fn setup(id: KernelId) -> (Kernel, scrutinize_core::scrutiny::CriticalityReport, tempfile::TempDir) {
    let k = Kernel::s(id);
    let r = analyze_or_fiat(&k, 2, 42).unwrap();
    (k, r, tempfile::tempdir().unwrap())
}

#[test]
fn bt_payload_holds_only_critical_elements() {
    let (k, r, dir) = setup(KernelId::BT);
    let mut run = k.start(42);
    k.run_to(&mut run, 3).unwrap();
    let path = write_checkpoint(&run, &k, &r, CheckpointPolicy::default(), dir.path()).unwrap();
    assert_eq!(path.file_name().unwrap(), "bt.3.ckpt");
    let b = read_bundle(&path).unwrap();
    assert_eq!(b.manifest.payload_bytes, (10140 - 1500) * 8);
    assert_eq!(b.payload.len(), 8640);
    assert_eq!(b.manifest.iteration, 3);
    assert_eq!(b.manifest.scalars, ["step"]);
    assert_eq!(b.scalar_section, 3i64.to_le_bytes());
    let file_len = fs::metadata(&path).unwrap().len();
    assert_eq!(file_len, b.manifest.payload_offset + b.manifest.payload_bytes);
    assert!(dir.path().join("bt.scrm").exists());
}

#[test]
fn complex_payload_counts_both_components() {
    let (k, r, dir) = setup(KernelId::FT);
    let run = k.start(42);
    let path = write_checkpoint(&run, &k, &r, CheckpointPolicy::default(), dir.path()).unwrap();
    let b = read_bundle(&path).unwrap();
    let crit: u64 = b.manifest.variables.iter().map(|v| v.n_critical * v.components).sum();
    assert_eq!(b.manifest.payload_bytes, crit * 8);
    assert_eq!(b.manifest.variables[0].n_critical, 266240 - 4096);
}

#[test]
fn scalars_are_stored_in_full() {
    let (k, r, dir) = setup(KernelId::EP);
    let mut run = k.start(42);
    k.run_to(&mut run, 5).unwrap();
    write_checkpoint(&run, &k, &r, CheckpointPolicy::default(), dir.path()).unwrap();
    let back = restart(dir.path(), &k, FillPolicy::Poison).unwrap();
    assert_eq!(back.state, run.state);
    assert_eq!(back.iter, 5);
    let (k, r, dir) = setup(KernelId::IS);
    let mut run = k.start(42);
    k.run_to(&mut run, 4).unwrap();
    let path = write_checkpoint(&run, &k, &r, CheckpointPolicy::default(), dir.path()).unwrap();
    assert_eq!(read_bundle(&path).unwrap().manifest.scalars, ["iteration", "passed_verification"]);
    assert_eq!(restart(dir.path(), &k, FillPolicy::Zero).unwrap().state.ints, [4]);
}

#[test]
fn rotation_keeps_the_newest_versions() {
    let (k, r, dir) = setup(KernelId::CG);
    let mut ck = Checkpointer::open(dir.path(), &k, &r, CheckpointPolicy::new(1, 2).unwrap()).unwrap();
    let mut run = k.start(42);
    for _ in 0..3 {
        ck.write(&k, &run).unwrap();
        k.run_step(&mut run).unwrap();
    }
    assert!(!dir.path().join(bundle_name(KernelId::CG, 0)).exists());
    assert!(dir.path().join(bundle_name(KernelId::CG, 1)).exists());
    assert!(dir.path().join(bundle_name(KernelId::CG, 2)).exists());
    assert_eq!(latest_bundle(dir.path(), KernelId::CG).unwrap(), dir.path().join("cg.2.ckpt"));
}

#[test]
fn newest_is_chosen_by_ordinal_not_iteration() {
    let (k, r, dir) = setup(KernelId::CG);
    let mut run = k.start(42);
    k.run_to(&mut run, 5).unwrap();
    {
        let mut ck = Checkpointer::open(dir.path(), &k, &r, CheckpointPolicy::new(1, 3).unwrap()).unwrap();
        ck.write(&k, &run).unwrap();
    }
    // a later writer (after a restart from iteration 2) writes a lower iteration
    let mut early = k.start(42);
    k.run_to(&mut early, 2).unwrap();
    let mut ck = Checkpointer::open(dir.path(), &k, &r, CheckpointPolicy::new(1, 3).unwrap()).unwrap();
    ck.write(&k, &early).unwrap();
    drop(ck);
    assert_eq!(restart(dir.path(), &k, FillPolicy::Zero).unwrap().iter, 2);
}

#[test]
fn empty_directory_has_no_checkpoint() {
    let (k, _, dir) = setup(KernelId::BT);
    assert!(matches!(
        restart(dir.path(), &k, FillPolicy::Zero),
        Err(CkptError::NoCheckpoint { .. })
    ));
    assert!(matches!(
        restart(dir.path().join("missing"), &k, FillPolicy::Zero),
        Err(CkptError::NoCheckpoint { .. })
    ));
}

#[test]
fn truncated_payload_is_corrupt() {
    let (k, r, dir) = setup(KernelId::BT);
    let path = write_checkpoint(&k.start(42), &k, &r, CheckpointPolicy::default(), dir.path()).unwrap();
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(
        restart(dir.path(), &k, FillPolicy::Zero),
        Err(CkptError::CorruptBundle { .. })
    ));
    fs::write(&path, &bytes[..3]).unwrap();
    assert!(matches!(read_bundle(&path), Err(CkptError::CorruptBundle { .. })));
}

#[test]
fn replaced_mask_file_is_rejected() {
    let (k, r, dir) = setup(KernelId::BT);
    write_checkpoint(&k.start(42), &k, &r, CheckpointPolicy::default(), dir.path()).unwrap();
    let mut masks = r.masks();
    masks.insert("u".into(), CriticalityMask::all_critical(10140));
    fs::write(dir.path().join(mask_file_name(KernelId::BT)), mask::encode(&masks).unwrap()).unwrap();
    assert!(matches!(
        restart(dir.path(), &k, FillPolicy::Zero),
        Err(CkptError::MaskKernelMismatch(_))
    ));
}

#[test]
fn bundle_read_as_another_kernel_is_rejected() {
    let (k, r, dir) = setup(KernelId::BT);
    let path = write_checkpoint(&k.start(42), &k, &r, CheckpointPolicy::default(), dir.path()).unwrap();
    fs::rename(&path, dir.path().join("sp.0.ckpt")).unwrap();
    fs::copy(dir.path().join("bt.scrm"), dir.path().join("sp.scrm")).unwrap();
    assert!(matches!(
        restart(dir.path(), &Kernel::s(KernelId::SP), FillPolicy::Zero),
        Err(CkptError::MaskKernelMismatch(_))
    ));
}

#[test]
fn poison_exposes_a_misclassified_element() {
    let k = Kernel::s(KernelId::BT);
    let mut r = analyze(&k, 2, 42).unwrap();
    let mut flags = r.variables[0].mask.to_flags();
    flags[0] = false;
    r.variables[0].mask = CriticalityMask::from_flags(&flags);
    let dir = tempfile::tempdir().unwrap();
    let mut run = k.start(42);
    k.run_to(&mut run, 10).unwrap();
    write_checkpoint(&run, &k, &r, CheckpointPolicy::default(), dir.path()).unwrap();
    let mut back = restart(dir.path(), &k, FillPolicy::Poison).unwrap();
    let out = k.finish(&mut back);
    assert!(out.is_nan());
    assert_eq!(k.verify(&back), Verdict::Fail);
}

#[test]
fn restart_at_the_end_has_an_output() {
    let (k, r, dir) = setup(KernelId::MG);
    let mut run = k.start(42);
    let out = k.finish(&mut run);
    write_checkpoint(&run, &k, &r, CheckpointPolicy::default(), dir.path()).unwrap();
    let back = restart(dir.path(), &k, FillPolicy::Poison).unwrap();
    assert_eq!(back.output.map(f64::to_bits), Some(out.to_bits()));
}

#[test]
fn storage_accounting() {
    let (k, r, _) = setup(KernelId::BT);
    let s = storage_report(&k, &r);
    assert_eq!(s.original_payload, 10140 * 8);
    assert_eq!(s.optimized_payload, 8640 * 8);
    assert_eq!(s.saved_fraction, 1500.0 / 10140.0);
    assert_eq!(s.original_bytes, s.original_payload + 8);
    assert_eq!(s.optimized_bytes, s.optimized_payload + 8 + s.mask_bytes);
    let (k, r, _) = setup(KernelId::EP);
    assert_eq!(storage_report(&k, &r).saved_fraction, 0.0);
}

#[test]
fn saved_masks_reload_as_a_report() {
    let (k, r, dir) = setup(KernelId::LU);
    assert!(matches!(
        scrutinize_core::ckpt::load_report(dir.path(), &k, 42),
        Err(CkptError::MissingAnalysis { .. })
    ));
    scrutinize_core::ckpt::save_masks(dir.path(), &r).unwrap();
    let back = scrutinize_core::ckpt::load_report(dir.path(), &k, 42).unwrap();
    assert_eq!(back.masks(), r.masks());
    assert!(!back.by_fiat);
    let names: Vec<_> = back.variables.iter().map(|v| v.name.as_str()).collect();
    let orig: Vec<_> = r.variables.iter().map(|v| v.name.as_str()).collect();
    assert_eq!(names, orig);
    // masks of another kernel do not fit
    fs::copy(dir.path().join("lu.scrm"), dir.path().join("bt.scrm")).unwrap();
    assert!(matches!(
        scrutinize_core::ckpt::load_report(dir.path(), &Kernel::s(KernelId::BT), 42),
        Err(CkptError::MaskKernelMismatch(_))
    ));
}
