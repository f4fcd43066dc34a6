//! Criticality analysis.
//!
//! For each analyzed iteration `j`, the state reached by a plain run is put
//! on a fresh tape with every checkpoint-variable element as a leaf, one
//! iteration plus the verification reduction is recorded, and the output is
//! differentiated. An element is critical when any of its components has a
//! nonzero derivative in any analyzed iteration.
//!
//! Two independent oracles cross-check the classification: a read tracker
//! ([`Probe`]) that records which elements feed any arithmetic, and a
//! perturbation oracle that reruns the kernel with one element changed.

use std::cell::RefCell;
use std::fmt;
use std::io;
use std::ops::{Add, Div, Mul, Neg, Sub};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_xorshift::XorShiftRng;
use rayon::prelude::*;
use thiserror::Error;

use crate::adtape::{AdError, Tape};
use crate::kernels::{Kernel, KernelId, KernelRun};
use crate::mask::{CriticalityMask, MaskSet};
use crate::real::Real;

pub const DEFAULT_ITERATIONS: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("{0} has no floating-point checkpoint data to differentiate")]
    NoFloatSurface(KernelId),
    #[error("cannot analyze {k} iterations of a {loop_len}-iteration loop")]
    IterationRange { k: usize, loop_len: usize },
    #[error("AD failed: {0}")]
    Ad(#[from] AdError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzeOptions {
    pub iterations: usize,
    pub seed: u64,
    /// Elements whose derivatives are all at most this in magnitude are
    /// uncritical. The default of zero means "exactly zero".
    pub threshold: f64,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions {
            iterations: DEFAULT_ITERATIONS,
            seed: 42,
            threshold: 0.0,
        }
    }
}

/// Per-element derivative magnitudes of one variable: the largest
/// `|∂output/∂x|` over analyzed iterations and components.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactVector {
    pub variable: String,
    pub derivs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableReport {
    pub name: String,
    pub shape: Vec<usize>,
    pub components: usize,
    pub mask: CriticalityMask,
    /// `None` when the classification was not derived from AD.
    pub impact: Option<ImpactVector>,
}

impl VariableReport {
    pub fn total(&self) -> u64 {
        self.mask.total()
    }

    pub fn n_critical(&self) -> u64 {
        self.mask.n_critical()
    }

    pub fn n_uncritical(&self) -> u64 {
        self.mask.n_uncritical()
    }

    pub fn uncritical_rate(&self) -> f64 {
        self.mask.uncritical_rate()
    }
}

impl fmt::Display for VariableReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {}/{} uncritical ({})",
            self.name,
            self.n_uncritical(),
            self.total(),
            format_rate(self.uncritical_rate())
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalityReport {
    pub kernel: KernelId,
    pub seed: u64,
    pub iterations_analyzed: usize,
    /// In declaration order.
    pub variables: Vec<VariableReport>,
    /// Loop index and other scalars; stored in full, always critical.
    pub scalars: Vec<String>,
    /// True when every element was declared critical without analysis.
    pub by_fiat: bool,
}

impl CriticalityReport {
    pub fn variable(&self, name: &str) -> Option<&VariableReport> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn masks(&self) -> MaskSet {
        self.variables
            .iter()
            .map(|v| (v.name.clone(), v.mask.clone()))
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.variables.iter().map(|v| v.total()).sum()
    }

    pub fn n_uncritical(&self) -> u64 {
        self.variables.iter().map(|v| v.n_uncritical()).sum()
    }
}

/// Formats a fraction as a percentage with three significant figures.
pub fn format_rate(frac: f64) -> String {
    let pct = frac * 100.0;
    if pct == 0.0 {
        return "0.00%".to_string();
    }
    let digits = (2 - pct.abs().log10().floor() as i32).max(0) as usize;
    format!("{pct:.digits$}%")
}

pub fn analyze(kernel: &Kernel, iterations: usize, seed: u64) -> Result<CriticalityReport, AnalysisError> {
    analyze_with(
        kernel,
        &AnalyzeOptions {
            iterations,
            seed,
            ..AnalyzeOptions::default()
        },
    )
}

pub fn analyze_with(kernel: &Kernel, opts: &AnalyzeOptions) -> Result<CriticalityReport, AnalysisError> {
    let spec = kernel.spec();
    if !spec.float_surface {
        return Err(AnalysisError::NoFloatSurface(spec.id));
    }
    check_range(kernel, opts.iterations)?;
    let mut impact: Vec<Vec<f64>> = spec.checkpoint_vars.iter().map(|d| vec![0.0; d.elements()]).collect();
    let mut critical: Vec<Vec<bool>> = spec.checkpoint_vars.iter().map(|d| vec![false; d.elements()]).collect();
    let mut run = kernel.start(opts.seed);
    for j in 0..opts.iterations {
        let grads = iteration_gradient(kernel, &run, j)?;
        for (v, decl) in spec.checkpoint_vars.iter().enumerate() {
            let w = decl.components;
            for (e, chunk) in grads[v].chunks(w).enumerate() {
                for &d in chunk {
                    let m = d.abs();
                    // NaN compares false and stays critical
                    if !(m <= opts.threshold) {
                        critical[v][e] = true;
                    }
                    if m > impact[v][e] || m.is_nan() {
                        impact[v][e] = m;
                    }
                }
            }
        }
        kernel.run_step(&mut run).expect("iterations checked against loop length");
    }
    let variables = spec
        .checkpoint_vars
        .iter()
        .zip(critical.iter().zip(impact))
        .map(|(decl, (flags, derivs))| VariableReport {
            name: decl.name.to_string(),
            shape: decl.shape.clone(),
            components: decl.components,
            mask: CriticalityMask::from_flags(flags),
            impact: Some(ImpactVector {
                variable: decl.name.to_string(),
                derivs,
            }),
        })
        .collect();
    Ok(CriticalityReport {
        kernel: spec.id,
        seed: opts.seed,
        iterations_analyzed: opts.iterations,
        variables,
        scalars: scalar_names(kernel),
        by_fiat: false,
    })
}

/// Report for kernels without a floating-point surface: every element is
/// critical.
pub fn all_critical_report(kernel: &Kernel, seed: u64) -> CriticalityReport {
    let spec = kernel.spec();
    CriticalityReport {
        kernel: spec.id,
        seed,
        iterations_analyzed: 0,
        variables: spec
            .checkpoint_vars
            .iter()
            .map(|d| VariableReport {
                name: d.name.to_string(),
                shape: d.shape.clone(),
                components: d.components,
                mask: CriticalityMask::all_critical(d.elements() as u64),
                impact: None,
            })
            .collect(),
        scalars: scalar_names(kernel),
        by_fiat: true,
    }
}

/// [`analyze`], falling back to [`all_critical_report`] when there is
/// nothing to differentiate.
pub fn analyze_or_fiat(kernel: &Kernel, iterations: usize, seed: u64) -> Result<CriticalityReport, AnalysisError> {
    match analyze(kernel, iterations, seed) {
        Err(AnalysisError::NoFloatSurface(_)) => Ok(all_critical_report(kernel, seed)),
        r => r,
    }
}

fn scalar_names(kernel: &Kernel) -> Vec<String> {
    let spec = kernel.spec();
    std::iter::once(spec.loop_index_name)
        .chain(spec.scalars.iter().map(|s| s.name))
        .map(String::from)
        .collect()
}

fn check_range(kernel: &Kernel, k: usize) -> Result<(), AnalysisError> {
    let loop_len = kernel.spec().loop_len;
    if k == 0 || k > loop_len {
        return Err(AnalysisError::IterationRange { k, loop_len });
    }
    Ok(())
}

/// Gradient of `reduce(step(state))` for iteration `j`, with respect to every
/// real of every checkpoint variable.
pub fn iteration_gradient(kernel: &Kernel, run: &KernelRun, j: usize) -> Result<Vec<Vec<f64>>, AnalysisError> {
    let n: usize = run.state.arrays.iter().map(Vec::len).sum();
    let tape = Tape::with_capacity(n * 8);
    // leaves are created first, so leaf ids are 0..n in state order
    let mut st = run.state.map(|_, _, x| tape.active_leaf(x));
    kernel.step_state(&mut st, j);
    let out = kernel.reduce(&st);
    if let Some(e) = tape.fault() {
        return Err(e.into());
    }
    let adj = match out.node() {
        Some(node) => tape.adjoints(node)?,
        None => vec![0.0; n],
    };
    let mut off = 0;
    Ok(run
        .state
        .arrays
        .iter()
        .map(|a| {
            let g = adj[off..off + a.len()].to_vec();
            off += a.len();
            g
        })
        .collect())
}

/// Record of which state reals fed any arithmetic.
#[derive(Debug, Default)]
pub struct ReadLog {
    read: RefCell<Vec<bool>>,
}

impl ReadLog {
    pub fn new(len: usize) -> Self {
        ReadLog {
            read: RefCell::new(vec![false; len]),
        }
    }

    pub fn into_flags(self) -> Vec<bool> {
        self.read.into_inner()
    }
}

const NO_ORIGIN: u32 = u32::MAX;

/// Scalar that remembers which state element it was loaded from. Using it
/// as an operand marks that element read; results carry no origin.
#[derive(Clone, Copy, Debug)]
pub struct Probe<'a> {
    value: f64,
    origin: u32,
    log: Option<&'a ReadLog>,
}

impl<'a> Probe<'a> {
    pub fn load(log: &'a ReadLog, origin: usize, value: f64) -> Self {
        Probe {
            value,
            origin: origin as u32,
            log: Some(log),
        }
    }

    #[inline]
    fn touch(self) -> Option<&'a ReadLog> {
        if let (Some(log), true) = (self.log, self.origin != NO_ORIGIN) {
            log.read.borrow_mut()[self.origin as usize] = true;
        }
        self.log
    }

    fn derived(value: f64, log: Option<&'a ReadLog>) -> Self {
        Probe {
            value,
            origin: NO_ORIGIN,
            log,
        }
    }
}

macro_rules! probe_binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl<'a> $trait for Probe<'a> {
            type Output = Probe<'a>;
            #[inline]
            fn $method(self, rhs: Self) -> Self {
                let log = self.touch().or(rhs.touch());
                Probe::derived(self.value $op rhs.value, log)
            }
        }

        impl<'a> $trait<f64> for Probe<'a> {
            type Output = Probe<'a>;
            #[inline]
            fn $method(self, rhs: f64) -> Self {
                let log = self.touch();
                Probe::derived(self.value $op rhs, log)
            }
        }
    };
}

probe_binop!(Add, add, +);
probe_binop!(Sub, sub, -);
probe_binop!(Mul, mul, *);
probe_binop!(Div, div, /);

impl<'a> Neg for Probe<'a> {
    type Output = Probe<'a>;
    fn neg(self) -> Self {
        let log = self.touch();
        Probe::derived(-self.value, log)
    }
}

impl Real for Probe<'_> {
    fn constant(c: f64) -> Self {
        Probe::derived(c, None)
    }

    fn value(self) -> f64 {
        self.touch();
        self.value
    }

    fn sqrt(self) -> Self {
        let log = self.touch();
        Probe::derived(self.value.sqrt(), log)
    }

    fn max(self, other: Self) -> Self {
        let log = self.touch().or(other.touch());
        Probe::derived(Real::max(self.value, other.value), log)
    }
}

/// Per-variable element flags: `true` if the element was read.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadSets {
    pub kernel: KernelId,
    pub variables: Vec<(String, Vec<bool>)>,
}

impl ReadSets {
    pub fn read(&self, name: &str) -> Option<&[bool]> {
        self.variables.iter().find(|(n, _)| n == name).map(|(_, f)| f.as_slice())
    }

    /// Indices never read, per variable.
    pub fn never_read(&self, name: &str) -> Option<Vec<u64>> {
        self.read(name)
            .map(|f| f.iter().enumerate().filter(|(_, &r)| !r).map(|(i, _)| i as u64).collect())
    }
}

/// Real-level read flags of one iteration plus the reduction, starting from
/// `run`'s state, one vector per variable.
pub fn iteration_reads(kernel: &Kernel, run: &KernelRun, j: usize) -> Vec<Vec<bool>> {
    let offsets: Vec<usize> = run
        .state
        .arrays
        .iter()
        .scan(0, |o, a| {
            let start = *o;
            *o += a.len();
            Some(start)
        })
        .collect();
    let n: usize = run.state.arrays.iter().map(Vec::len).sum();
    let log = ReadLog::new(n);
    {
        let mut st = run.state.map(|v, i, x| Probe::load(&log, offsets[v] + i, x));
        kernel.step_state(&mut st, j);
        kernel.reduce(&st).value();
    }
    let flags = log.into_flags();
    run.state
        .arrays
        .iter()
        .zip(offsets)
        .map(|(a, o)| flags[o..o + a.len()].to_vec())
        .collect()
}

/// Instruments the analyzed iterations and the verification reduction and
/// reports which elements were read.
pub fn oracle_read_tracking(kernel: &Kernel, iterations: usize, seed: u64) -> Result<ReadSets, AnalysisError> {
    check_range(kernel, iterations)?;
    let spec = kernel.spec();
    let mut read: Vec<Vec<bool>> = spec.checkpoint_vars.iter().map(|d| vec![false; d.elements()]).collect();
    let mut run = kernel.start(seed);
    for j in 0..iterations {
        let flags = iteration_reads(kernel, &run, j);
        for (v, decl) in spec.checkpoint_vars.iter().enumerate() {
            let w = decl.components;
            for (r, f) in read[v].iter_mut().zip(flags[v].chunks(w)) {
                *r |= f.iter().any(|&x| x);
            }
        }
        kernel.run_step(&mut run).expect("iterations checked against loop length");
    }
    Ok(ReadSets {
        kernel: spec.id,
        variables: spec
            .checkpoint_vars
            .iter()
            .zip(read)
            .map(|(d, f)| (d.name.to_string(), f))
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Effect {
    NoEffect,
    Effect,
}

/// Reruns from `seed` with element `element` of `variable` (every component)
/// increased by `delta` before the first iteration, and compares the final
/// output bitwise with the unperturbed run.
pub fn oracle_perturbation(kernel: &Kernel, seed: u64, variable: &str, element: usize, delta: f64) -> Option<Effect> {
    let (v, decl) = kernel.spec().var(variable)?;
    if element >= decl.elements() {
        return None;
    }
    let mut run = kernel.start(seed);
    let w = decl.components;
    for x in &mut run.state.arrays[v][element * w..(element + 1) * w] {
        *x += delta;
    }
    let out = kernel.finish(&mut run);
    Some(if out.to_bits() == kernel.reference_output(seed).to_bits() {
        Effect::NoEffect
    } else {
        Effect::Effect
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSample {
    pub variable: String,
    pub element: u64,
    pub effect: Effect,
}

/// Picks up to `budget` elements and runs the perturbation oracle on each,
/// in parallel. Uncritical elements are taken exhaustively when they fit in
/// half the budget; the rest of the budget goes to random critical ones.
pub fn sample_perturbations(
    kernel: &Kernel,
    report: &CriticalityReport,
    budget: usize,
    sample_seed: u64,
) -> Vec<PerturbationSample> {
    let mut rng = XorShiftRng::seed_from_u64(sample_seed);
    let pool = |critical: bool| -> Vec<(usize, u64)> {
        report
            .variables
            .iter()
            .enumerate()
            .flat_map(|(v, r)| {
                let idx: Vec<u64> = if critical {
                    r.mask.critical_indices().collect()
                } else {
                    r.mask.uncritical_indices().collect()
                };
                idx.into_iter().map(move |i| (v, i))
            })
            .collect()
    };
    let mut pick = |from: Vec<(usize, u64)>, n: usize| -> Vec<(usize, u64)> {
        if from.len() <= n {
            return from;
        }
        sample(&mut rng, from.len(), n).into_iter().map(|i| from[i]).collect()
    };
    let unc = pick(pool(false), budget / 2);
    let crit = pick(pool(true), budget - unc.len());
    unc.into_iter()
        .chain(crit)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(v, e)| {
            let name = &report.variables[v].name;
            PerturbationSample {
                variable: name.clone(),
                element: e,
                effect: oracle_perturbation(kernel, report.seed, name, e as usize, 1.0)
                    .expect("sampled from the report's own masks"),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Reconciliation {
    /// Never read, yet given a nonzero derivative.
    pub unread_but_critical: Vec<(String, u64)>,
    /// Read, yet given a zero derivative.
    pub read_but_uncritical: Vec<(String, u64)>,
    /// Perturbation verdicts that disagree with the classification.
    pub perturbation_mismatches: Vec<PerturbationSample>,
    pub samples_checked: usize,
}

impl Reconciliation {
    /// Never-read set within the zero-derivative set, and every sample agrees.
    pub fn is_consistent(&self) -> bool {
        self.unread_but_critical.is_empty() && self.perturbation_mismatches.is_empty()
    }

    /// Additionally the two sets are equal.
    pub fn sets_equal(&self) -> bool {
        self.is_consistent() && self.read_but_uncritical.is_empty()
    }

    pub fn mismatch_count(&self) -> usize {
        self.unread_but_critical.len() + self.perturbation_mismatches.len()
    }
}

pub fn reconcile(report: &CriticalityReport, reads: &ReadSets, samples: &[PerturbationSample]) -> Reconciliation {
    let mut out = Reconciliation {
        samples_checked: samples.len(),
        ..Reconciliation::default()
    };
    for var in &report.variables {
        let Some(read) = reads.read(&var.name) else {
            continue;
        };
        for (i, (&r, c)) in read.iter().zip(var.mask.to_flags()).enumerate() {
            match (r, c) {
                (false, true) => out.unread_but_critical.push((var.name.clone(), i as u64)),
                (true, false) => out.read_but_uncritical.push((var.name.clone(), i as u64)),
                _ => {}
            }
        }
    }
    for s in samples {
        let critical = report
            .variable(&s.variable)
            .is_some_and(|v| v.mask.is_critical(s.element));
        if critical != (s.effect == Effect::Effect) {
            out.perturbation_mismatches.push(s.clone());
        }
    }
    out
}

pub const CSV_HEADER: [&str; 6] = ["kernel", "variable", "total", "critical", "uncritical", "uncritical_rate"];

/// Writes the count report, one row per variable.
pub fn write_csv<W: io::Write>(reports: &[CriticalityReport], w: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(CSV_HEADER)?;
    for r in reports {
        for v in &r.variables {
            wtr.write_record([
                r.kernel.to_string(),
                v.name.clone(),
                v.total().to_string(),
                v.n_critical().to_string(),
                v.n_uncritical().to_string(),
                format_rate(v.uncritical_rate()),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}
