//! Selective checkpoint files.
//!
//! A bundle `<kernel>.<iter>.ckpt` holds
//!
//! ```text
//! manifest_len: u32 LE
//! manifest: JSON, manifest_len bytes
//! scalar section: loop index (i64), real scalars (f64), integer scalars (i64)
//! payload: critical elements of each variable, f64 LE, in manifest order
//! ```
//!
//! with all offsets recorded in the manifest. The masks live in
//! `<kernel>.scrm`, written once per analysis; each manifest carries the
//! SHA-256 of the mask file it was written against.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_xorshift::XorShiftRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::kernels::{Kernel, KernelId, KernelRun, State, Verdict};
use crate::mask::{self, FillPolicy, MaskError, MaskSet};
use crate::scrutiny::{all_critical_report, CriticalityReport};

/// Value written over an element by fault injection; far outside the range
/// of any kernel's data.
pub const FAULT_VALUE: f64 = 1.0e6;

const LOCK_FILE: &str = ".lock";

#[derive(Debug, Error)]
pub enum CkptError {
    #[error("no checkpoint for {kernel} in {dir}")]
    NoCheckpoint { kernel: KernelId, dir: PathBuf },
    #[error("no analysis of {kernel} in {path}")]
    MissingAnalysis { kernel: KernelId, path: PathBuf },
    #[error("corrupt bundle {path}: {reason}")]
    CorruptBundle { path: PathBuf, reason: String },
    #[error("mask does not match kernel: {0}")]
    MaskKernelMismatch(String),
    #[error("checkpoint directory {0} is locked by another writer")]
    Locked(PathBuf),
    #[error("invalid policy: {0}")]
    Policy(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointPolicy {
    interval: usize,
    versions_kept: usize,
}

impl CheckpointPolicy {
    pub fn new(interval: usize, versions_kept: usize) -> Result<Self, CkptError> {
        if interval == 0 || versions_kept == 0 {
            return Err(CkptError::Policy(format!(
                "interval ({interval}) and versions kept ({versions_kept}) must be at least 1"
            )));
        }
        Ok(CheckpointPolicy {
            interval,
            versions_kept,
        })
    }

    pub fn interval(&self) -> usize {
        self.interval
    }

    pub fn versions_kept(&self) -> usize {
        self.versions_kept
    }
}

impl Default for CheckpointPolicy {
    fn default() -> Self {
        CheckpointPolicy {
            interval: 1,
            versions_kept: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarEntry {
    pub name: String,
    pub total: u64,
    pub components: u64,
    pub n_critical: u64,
    pub offset: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub kernel: KernelId,
    pub iteration: u64,
    pub seed: u64,
    pub ordinal: u64,
    pub mask_sha256: String,
    /// Scalar names in section order, loop index first.
    pub scalars: Vec<String>,
    pub scalar_offset: u64,
    pub scalar_bytes: u64,
    pub payload_offset: u64,
    pub payload_bytes: u64,
    pub variables: Vec<VarEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub manifest: Manifest,
    pub scalar_section: Vec<u8>,
    /// Packed critical elements, variables concatenated.
    pub payload: Vec<f64>,
}

pub fn bundle_name(kernel: KernelId, iter: usize) -> String {
    format!("{}.{iter}.ckpt", kernel.name())
}

pub fn mask_file_name(kernel: KernelId) -> String {
    format!("{}.scrm", kernel.name())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Checks that a mask set covers exactly the kernel's variables.
fn check_masks(kernel: &Kernel, masks: &MaskSet) -> Result<(), CkptError> {
    let spec = kernel.spec();
    if masks.len() != spec.checkpoint_vars.len() {
        return Err(CkptError::MaskKernelMismatch(format!(
            "{} masks for {} variables of {}",
            masks.len(),
            spec.checkpoint_vars.len(),
            spec.id
        )));
    }
    for d in &spec.checkpoint_vars {
        match masks.get(d.name) {
            Some(m) if m.total() == d.elements() as u64 => {}
            Some(m) => {
                return Err(CkptError::MaskKernelMismatch(format!(
                    "mask for {} has {} elements, {} declares {}",
                    d.name,
                    m.total(),
                    spec.id,
                    d.elements()
                )))
            }
            None => return Err(CkptError::MaskKernelMismatch(format!("no mask for {}.{}", spec.id, d.name))),
        }
    }
    Ok(())
}

/// Writes the masks of `report` to `<dir>/<kernel>.scrm`.
pub fn save_masks(dir: impl AsRef<Path>, report: &CriticalityReport) -> Result<PathBuf, CkptError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let path = dir.join(mask_file_name(report.kernel));
    write_atomic(&path, &mask::encode(&report.masks())?)?;
    Ok(path)
}

/// Rebuilds a report from the mask file in `dir`. The result carries no
/// impact vectors and `iterations_analyzed` is 0.
pub fn load_report(dir: impl AsRef<Path>, kernel: &Kernel, seed: u64) -> Result<CriticalityReport, CkptError> {
    let path = dir.as_ref().join(mask_file_name(kernel.id()));
    let bytes = match fs::read(&path) {
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(CkptError::MissingAnalysis {
                kernel: kernel.id(),
                path,
            })
        }
        r => r?,
    };
    let mut masks = mask::decode(&bytes)?;
    check_masks(kernel, &masks)?;
    let mut report = all_critical_report(kernel, seed);
    report.by_fiat = !kernel.spec().float_surface;
    for v in &mut report.variables {
        v.mask = masks.remove(&v.name).expect("checked above");
    }
    Ok(report)
}

/// Exclusive writer lock on a checkpoint directory.
#[derive(Debug)]
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self, CkptError> {
        let path = dir.join(LOCK_FILE);
        for attempt in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    write!(f, "{}", std::process::id())?;
                    return Ok(DirLock { path });
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    if attempt == 0 && Self::is_stale(&path) {
                        fs::remove_file(&path)?;
                        continue;
                    }
                    return Err(CkptError::Locked(dir.to_path_buf()));
                }
                Err(e) => return Err(e.into()),
            }
        }
        Err(CkptError::Locked(dir.to_path_buf()))
    }

    /// A lock left behind by a process that no longer exists (only
    /// detectable where `/proc` is available).
    fn is_stale(path: &Path) -> bool {
        let Ok(pid) = fs::read_to_string(path) else {
            return false;
        };
        let Ok(pid) = pid.trim().parse::<u32>() else {
            return false;
        };
        let proc = Path::new("/proc");
        proc.is_dir() && pid != std::process::id() && !proc.join(pid.to_string()).exists()
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Writes bundles for one kernel into one directory.
#[derive(Debug)]
pub struct Checkpointer {
    dir: PathBuf,
    kernel: KernelId,
    policy: CheckpointPolicy,
    masks: MaskSet,
    mask_sha256: String,
    next_ordinal: u64,
    _lock: DirLock,
}

impl Checkpointer {
    /// Locks `dir` and writes the mask file.
    pub fn open(
        dir: impl AsRef<Path>,
        kernel: &Kernel,
        report: &CriticalityReport,
        policy: CheckpointPolicy,
    ) -> Result<Self, CkptError> {
        let dir = dir.as_ref().to_path_buf();
        if report.kernel != kernel.id() {
            return Err(CkptError::MaskKernelMismatch(format!(
                "report for {} used with {}",
                report.kernel,
                kernel.id()
            )));
        }
        let masks = report.masks();
        check_masks(kernel, &masks)?;
        fs::create_dir_all(&dir)?;
        let lock = DirLock::acquire(&dir)?;
        let bytes = mask::encode(&masks)?;
        write_atomic(&dir.join(mask_file_name(kernel.id())), &bytes)?;
        let next_ordinal = list_bundles(&dir, kernel.id())?
            .iter()
            .map(|(o, _)| o + 1)
            .max()
            .unwrap_or(0);
        Ok(Checkpointer {
            dir,
            kernel: kernel.id(),
            policy,
            masks,
            mask_sha256: sha256_hex(&bytes),
            next_ordinal,
            _lock: lock,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes a bundle when the run sits on a checkpoint interval.
    pub fn maybe_write(&mut self, kernel: &Kernel, run: &KernelRun) -> Result<Option<PathBuf>, CkptError> {
        if run.iter % self.policy.interval == 0 {
            self.write(kernel, run).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn write(&mut self, kernel: &Kernel, run: &KernelRun) -> Result<PathBuf, CkptError> {
        if run.kernel != self.kernel || kernel.id() != self.kernel {
            return Err(CkptError::MaskKernelMismatch(format!(
                "checkpointer for {} given a {} run",
                self.kernel, run.kernel
            )));
        }
        let bytes = encode_bundle(kernel, run, &self.masks, &self.mask_sha256, self.next_ordinal)?;
        let path = self.dir.join(bundle_name(self.kernel, run.iter));
        write_atomic(&path, &bytes)?;
        self.next_ordinal += 1;
        self.rotate()?;
        Ok(path)
    }

    fn rotate(&self) -> Result<(), CkptError> {
        let mut bundles = list_bundles(&self.dir, self.kernel)?;
        bundles.sort_by_key(|(o, _)| std::cmp::Reverse(*o));
        for (_, path) in bundles.into_iter().skip(self.policy.versions_kept) {
            fs::remove_file(path)?;
        }
        Ok(())
    }
}

/// One-shot form of [`Checkpointer::write`].
pub fn write_checkpoint(
    run: &KernelRun,
    kernel: &Kernel,
    report: &CriticalityReport,
    policy: CheckpointPolicy,
    dir: impl AsRef<Path>,
) -> Result<PathBuf, CkptError> {
    Checkpointer::open(dir, kernel, report, policy)?.write(kernel, run)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

fn encode_bundle(
    kernel: &Kernel,
    run: &KernelRun,
    masks: &MaskSet,
    mask_sha256: &str,
    ordinal: u64,
) -> Result<Vec<u8>, CkptError> {
    let spec = kernel.spec();
    let mut scalars = Vec::new();
    let mut names = vec![spec.loop_index_name.to_string()];
    scalars.extend_from_slice(&(run.iter as i64).to_le_bytes());
    for (decl, v) in spec.real_scalars().zip(&run.state.reals) {
        names.push(decl.name.to_string());
        scalars.extend_from_slice(&v.to_le_bytes());
    }
    for (decl, v) in spec.int_scalars().zip(&run.state.ints) {
        names.push(decl.name.to_string());
        scalars.extend_from_slice(&v.to_le_bytes());
    }
    let mut packed = Vec::new();
    let mut entries = Vec::new();
    for (decl, data) in spec.checkpoint_vars.iter().zip(&run.state.arrays) {
        let m = &masks[decl.name];
        let part = mask::gather_width(data, m, decl.components)?;
        entries.push(VarEntry {
            name: decl.name.to_string(),
            total: decl.elements() as u64,
            components: decl.components as u64,
            n_critical: m.n_critical(),
            offset: (packed.len() * 8) as u64,
            bytes: (part.len() * 8) as u64,
        });
        packed.extend(part);
    }
    let mut manifest = Manifest {
        kernel: spec.id,
        iteration: run.iter as u64,
        seed: run.seed,
        ordinal,
        mask_sha256: mask_sha256.to_string(),
        scalars: names,
        scalar_offset: 0,
        scalar_bytes: scalars.len() as u64,
        payload_offset: 0,
        payload_bytes: (packed.len() * 8) as u64,
        variables: entries,
    };
    // Offsets depend on the manifest length, which depends on the offsets'
    // digit counts; iterate until the text stops growing.
    let relative: Vec<u64> = manifest.variables.iter().map(|v| v.offset).collect();
    let mut text = serde_json::to_vec(&manifest).expect("manifest serializes");
    loop {
        let head = 4 + text.len() as u64;
        manifest.scalar_offset = head;
        manifest.payload_offset = head + manifest.scalar_bytes;
        for (v, rel) in manifest.variables.iter_mut().zip(&relative) {
            v.offset = manifest.payload_offset + rel;
        }
        let next = serde_json::to_vec(&manifest).expect("manifest serializes");
        let done = next.len() == text.len();
        text = next;
        if done {
            break;
        }
    }
    let mut out = Vec::with_capacity(text.len() + 4 + scalars.len() + packed.len() * 8);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(&text);
    out.extend_from_slice(&scalars);
    for x in packed {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn read_bundle(path: &Path) -> Result<Bundle, CkptError> {
    let bytes = fs::read(path)?;
    decode_bundle(&bytes).map_err(|reason| CkptError::CorruptBundle {
        path: path.to_path_buf(),
        reason,
    })
}

fn decode_bundle(bytes: &[u8]) -> Result<Bundle, String> {
    let len = bytes.get(..4).ok_or("shorter than the manifest length prefix")?;
    let len = u32::from_le_bytes(len.try_into().unwrap()) as usize;
    let text = bytes.get(4..4 + len).ok_or("manifest extends past end of file")?;
    let manifest: Manifest = serde_json::from_slice(text).map_err(|e| format!("manifest: {e}"))?;
    let head = 4 + len as u64;
    if manifest.scalar_offset != head || manifest.payload_offset != head + manifest.scalar_bytes {
        return Err("section offsets disagree with the manifest length".into());
    }
    if manifest.scalar_bytes != 8 * manifest.scalars.len() as u64 {
        return Err("scalar section size disagrees with scalar count".into());
    }
    let mut expect = manifest.payload_offset;
    for v in &manifest.variables {
        if v.offset != expect || v.bytes != v.n_critical * v.components * 8 || v.n_critical > v.total {
            return Err(format!("variable {} has inconsistent offset or size", v.name));
        }
        expect += v.bytes;
    }
    if expect - manifest.payload_offset != manifest.payload_bytes {
        return Err("payload size disagrees with variable sizes".into());
    }
    if bytes.len() as u64 != manifest.payload_offset + manifest.payload_bytes {
        return Err(format!(
            "file has {} bytes, manifest accounts for {}",
            bytes.len(),
            manifest.payload_offset + manifest.payload_bytes
        ));
    }
    let scalar_section = bytes[manifest.scalar_offset as usize..manifest.payload_offset as usize].to_vec();
    let payload = bytes[manifest.payload_offset as usize..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Bundle {
        manifest,
        scalar_section,
        payload,
    })
}

/// Reads only the ordinal of a bundle, for ordering.
fn bundle_ordinal(path: &Path) -> Option<u64> {
    read_bundle(path).ok().map(|b| b.manifest.ordinal)
}

/// `(ordinal, path)` of every readable bundle of `kernel` in `dir`.
fn list_bundles(dir: &Path, kernel: KernelId) -> Result<Vec<(u64, PathBuf)>, CkptError> {
    let prefix = format!("{}.", kernel.name());
    let mut out = Vec::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(iter) = name.strip_prefix(&prefix).and_then(|r| r.strip_suffix(".ckpt")) else {
            continue;
        };
        if iter.parse::<usize>().is_err() {
            continue;
        }
        match bundle_ordinal(&path) {
            Some(o) => out.push((o, path)),
            // a damaged bundle still counts toward rotation, as the oldest
            None => out.push((0, path)),
        }
    }
    Ok(out)
}

/// Path of the newest bundle by creation ordinal.
pub fn latest_bundle(dir: &Path, kernel: KernelId) -> Result<PathBuf, CkptError> {
    let mut best: Option<(u64, PathBuf)> = None;
    let prefix = format!("{}.", kernel.name());
    if dir.is_dir() {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            if !(name.starts_with(&prefix) && name.ends_with(".ckpt")) {
                continue;
            }
            // an unreadable bundle is reported rather than skipped
            let b = read_bundle(&path)?;
            if best.as_ref().is_none_or(|(o, _)| b.manifest.ordinal > *o) {
                best = Some((b.manifest.ordinal, path));
            }
        }
    }
    best.map(|(_, p)| p).ok_or_else(|| CkptError::NoCheckpoint {
        kernel,
        dir: dir.to_path_buf(),
    })
}

/// Rebuilds a run from the latest bundle in `dir`.
///
/// Uncritical positions are filled per `fill`; with [`FillPolicy::Keep`]
/// they keep the values of a freshly initialized run.
pub fn restart(dir: impl AsRef<Path>, kernel: &Kernel, fill: FillPolicy) -> Result<KernelRun, CkptError> {
    let dir = dir.as_ref();
    let spec = kernel.spec();
    let path = latest_bundle(dir, spec.id)?;
    let bundle = read_bundle(&path)?;
    let m = &bundle.manifest;
    let corrupt = |reason: String| CkptError::CorruptBundle {
        path: path.clone(),
        reason,
    };
    if m.kernel != spec.id {
        return Err(CkptError::MaskKernelMismatch(format!("bundle of {} read as {}", m.kernel, spec.id)));
    }
    let mask_bytes = fs::read(dir.join(mask_file_name(spec.id)))?;
    if sha256_hex(&mask_bytes) != m.mask_sha256 {
        return Err(CkptError::MaskKernelMismatch(format!(
            "{} was not written with the current mask file",
            path.display()
        )));
    }
    let masks = mask::decode(&mask_bytes)?;
    check_masks(kernel, &masks)?;
    if m.iteration as usize > spec.loop_len {
        return Err(corrupt(format!("iteration {} past loop length {}", m.iteration, spec.loop_len)));
    }
    let n_reals = spec.real_scalars().count();
    let n_ints = spec.int_scalars().count();
    if m.scalars.len() != 1 + n_reals + n_ints || m.variables.len() != spec.checkpoint_vars.len() {
        return Err(corrupt("scalar or variable count differs from the kernel".into()));
    }
    let words: Vec<[u8; 8]> = bundle
        .scalar_section
        .chunks_exact(8)
        .map(|c| c.try_into().unwrap())
        .collect();
    let iter = i64::from_le_bytes(words[0]);
    if iter != m.iteration as i64 {
        return Err(corrupt("loop index disagrees with manifest iteration".into()));
    }
    let mut state: State<f64> = kernel.initial_state(m.seed);
    state.reals = words[1..1 + n_reals].iter().map(|w| f64::from_le_bytes(*w)).collect();
    state.ints = words[1 + n_reals..].iter().map(|w| i64::from_le_bytes(*w)).collect();
    let mut src = 0;
    for ((decl, entry), data) in spec.checkpoint_vars.iter().zip(&m.variables).zip(&mut state.arrays) {
        let mk = &masks[decl.name];
        if entry.name != decl.name || entry.n_critical != mk.n_critical() || entry.components != decl.components as u64 {
            return Err(corrupt(format!("entry for {} does not match its mask", decl.name)));
        }
        let n = (entry.bytes / 8) as usize;
        mask::scatter_width(&bundle.payload[src..src + n], mk, fill, data, decl.components)?;
        src += n;
    }
    let mut run = KernelRun {
        kernel: spec.id,
        seed: m.seed,
        iter: m.iteration as usize,
        state,
        output: None,
    };
    if run.iter == spec.loop_len {
        run.output = Some(kernel.reduce(&run.state));
    }
    Ok(run)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StorageReport {
    pub original_payload: u64,
    pub optimized_payload: u64,
    pub scalar_bytes: u64,
    pub mask_bytes: u64,
    /// Full dump: every element plus the scalar section.
    pub original_bytes: u64,
    /// Critical elements, scalar section and the mask file.
    pub optimized_bytes: u64,
    /// Saved share of the variable payload.
    pub saved_fraction: f64,
}

pub fn storage_report(kernel: &Kernel, report: &CriticalityReport) -> StorageReport {
    let spec = kernel.spec();
    let scalar_bytes = 8 * (1 + spec.scalars.len()) as u64;
    let (mut orig, mut opt) = (0, 0);
    for v in &report.variables {
        orig += v.total() * v.components as u64 * 8;
        opt += v.n_critical() * v.components as u64 * 8;
    }
    let mask_bytes = mask::encoded_len(&report.masks()) as u64;
    StorageReport {
        original_payload: orig,
        optimized_payload: opt,
        scalar_bytes,
        mask_bytes,
        original_bytes: orig + scalar_bytes,
        optimized_bytes: opt + scalar_bytes + mask_bytes,
        saved_fraction: if orig == 0 { 0.0 } else { (orig - opt) as f64 / orig as f64 },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Uncritical,
    Critical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub iteration: usize,
    pub variable: String,
    pub element: u64,
    pub output: f64,
    pub verdict: Verdict,
    /// Uncritical: output bitwise unchanged. Critical: output changed.
    pub as_expected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialSummary {
    /// The kernel has no element of the targeted class.
    Skipped { target: Target },
    Ran {
        target: Target,
        reference: f64,
        trials: Vec<Trial>,
    },
}

impl TrialSummary {
    pub fn passed(&self) -> usize {
        match self {
            TrialSummary::Skipped { .. } => 0,
            TrialSummary::Ran { trials, .. } => trials.iter().filter(|t| t.as_expected).count(),
        }
    }

    pub fn failures(&self) -> Vec<&Trial> {
        match self {
            TrialSummary::Skipped { .. } => vec![],
            TrialSummary::Ran { trials, .. } => trials.iter().filter(|t| !t.as_expected).collect(),
        }
    }

    pub fn all_as_expected(&self) -> bool {
        self.failures().is_empty()
    }
}

/// Corrupts one element of the targeted class per trial at a random
/// iteration, runs to completion and checks the effect on the output.
pub fn fault_injection_trial(
    kernel: &Kernel,
    report: &CriticalityReport,
    target: Target,
    n_trials: usize,
    trial_seed: u64,
) -> TrialSummary {
    let spec = kernel.spec();
    let pool: Vec<(usize, u64)> = report
        .variables
        .iter()
        .enumerate()
        .flat_map(|(v, r)| {
            let idx: Vec<u64> = match target {
                Target::Critical => r.mask.critical_indices().collect(),
                Target::Uncritical => r.mask.uncritical_indices().collect(),
            };
            idx.into_iter().map(move |i| (v, i))
        })
        .collect();
    if pool.is_empty() {
        return TrialSummary::Skipped { target };
    }
    let mut rng = XorShiftRng::seed_from_u64(trial_seed);
    let plan: Vec<(usize, (usize, u64))> = (0..n_trials)
        .map(|_| (rng.random_range(0..spec.loop_len), *pool.choose(&mut rng).unwrap()))
        .collect();
    // states before each iteration, so trials do not replay the prefix
    let mut snapshots = Vec::with_capacity(spec.loop_len);
    let mut run = kernel.start(report.seed);
    for _ in 0..spec.loop_len {
        snapshots.push(run.clone());
        kernel.run_step(&mut run).expect("within loop length");
    }
    let reference = kernel.reference_output(report.seed);
    let trials = plan
        .into_par_iter()
        .map(|(iteration, (v, e))| {
            let mut run = snapshots[iteration].clone();
            let (vi, decl) = spec
                .var(&report.variables[v].name)
                .expect("report variables come from the kernel declaration");
            let w = decl.components;
            run.state.arrays[vi][e as usize * w..(e as usize + 1) * w].fill(FAULT_VALUE);
            let output = kernel.finish(&mut run);
            let same = output.to_bits() == reference.to_bits();
            Trial {
                iteration,
                variable: decl.name.to_string(),
                element: e,
                output,
                verdict: kernel.verify(&run),
                as_expected: match target {
                    Target::Uncritical => same,
                    Target::Critical => !same,
                },
            }
        })
        .collect();
    TrialSummary::Ran {
        target,
        reference,
        trials,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartOutcome {
    pub resumed_at: usize,
    pub output: f64,
    pub reference: f64,
    pub verdict: Verdict,
}

impl RestartOutcome {
    pub fn bitwise_equal(&self) -> bool {
        self.output.to_bits() == self.reference.to_bits()
    }
}

/// Runs with periodic checkpointing, abandons the run before iteration
/// `crash_at`, restarts from `dir` and runs to completion.
pub fn crash_and_restart(
    kernel: &Kernel,
    report: &CriticalityReport,
    policy: CheckpointPolicy,
    dir: impl AsRef<Path>,
    fill: FillPolicy,
    crash_at: usize,
) -> Result<RestartOutcome, CkptError> {
    let dir = dir.as_ref();
    {
        let mut ck = Checkpointer::open(dir, kernel, report, policy)?;
        let mut run = kernel.start(report.seed);
        loop {
            ck.maybe_write(kernel, &run)?;
            if run.iter >= crash_at.min(kernel.spec().loop_len) {
                break;
            }
            kernel.run_step(&mut run).expect("bounded by loop length");
        }
        // the run is dropped here: everything not on disk is lost
    }
    let mut run = restart(dir, kernel, fill)?;
    let resumed_at = run.iter;
    let output = kernel.finish(&mut run);
    Ok(RestartOutcome {
        resumed_at,
        output,
        reference: kernel.reference_output(report.seed),
        verdict: kernel.verify(&run),
    })
}

/// Writes one checkpoint before iteration `at`, abandons the run, restarts
/// from it and runs to completion.
pub fn checkpoint_and_restart(
    kernel: &Kernel,
    report: &CriticalityReport,
    dir: impl AsRef<Path>,
    fill: FillPolicy,
    at: usize,
) -> Result<RestartOutcome, CkptError> {
    let policy = CheckpointPolicy::new(at.max(1), 1)?;
    crash_and_restart(kernel, report, policy, dir, fill, at)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scrutiny::analyze;

    #[test]
    fn policy_bounds() {
        assert!(CheckpointPolicy::new(0, 1).is_err());
        assert!(CheckpointPolicy::new(1, 0).is_err());
        assert_eq!(CheckpointPolicy::default(), CheckpointPolicy::new(1, 2).unwrap());
    }

    #[test]
    fn second_writer_is_locked_out() {
        let dir = tempfile::tempdir().unwrap();
        let k = Kernel::s(KernelId::CG);
        let r = analyze(&k, 2, 42).unwrap();
        let _a = Checkpointer::open(dir.path(), &k, &r, CheckpointPolicy::default()).unwrap();
        assert!(matches!(
            Checkpointer::open(dir.path(), &k, &r, CheckpointPolicy::default()),
            Err(CkptError::Locked(_))
        ));
    }

    #[test]
    fn lock_is_released_on_drop() {
        let dir = tempfile::tempdir().unwrap();
        let k = Kernel::s(KernelId::CG);
        let r = analyze(&k, 2, 42).unwrap();
        drop(Checkpointer::open(dir.path(), &k, &r, CheckpointPolicy::default()).unwrap());
        assert!(!dir.path().join(LOCK_FILE).exists());
        assert!(Checkpointer::open(dir.path(), &k, &r, CheckpointPolicy::default()).is_ok());
    }

    #[test]
    fn stale_lock_is_reclaimed() {
        let dir = tempfile::tempdir().unwrap();
        // pid far above any default pid_max
        fs::write(dir.path().join(LOCK_FILE), "4194305").unwrap();
        let k = Kernel::s(KernelId::CG);
        let r = analyze(&k, 2, 42).unwrap();
        if Path::new("/proc").is_dir() {
            assert!(Checkpointer::open(dir.path(), &k, &r, CheckpointPolicy::default()).is_ok());
        }
    }

    #[test]
    fn report_for_another_kernel_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let r = analyze(&Kernel::s(KernelId::BT), 2, 42).unwrap();
        assert!(matches!(
            Checkpointer::open(dir.path(), &Kernel::s(KernelId::SP), &r, CheckpointPolicy::default()),
            Err(CkptError::MaskKernelMismatch(_))
        ));
    }
}
