//! Desk-scale miniatures of the eight NPB S-class benchmarks.
//!
//! Each kernel declares the variables that must be checkpointed, with the
//! S-class shapes of the original benchmark, and a main loop whose element
//! access ranges follow the original code. The numerics are small stand-ins;
//! what is faithful is which elements are read.
//!
//! Kernel bodies are written once against [`Real`] and executed as plain
//! `f64`, on an AD tape, or under a read probe.

mod bt;
mod cg;
mod ep;
mod ft;
pub(crate) mod grid;
mod is;
mod lu;
mod mg;
mod sp;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_xorshift::XorShiftRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::Real;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("problem class {0} is not supported (only S)")]
    UnsupportedClass(String),
    #[error("iteration {iter} is past the end of the main loop ({loop_len})")]
    IterationOverflow { iter: usize, loop_len: usize },
    #[error("unknown kernel '{0}'")]
    UnknownKernel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KernelId {
    BT,
    SP,
    CG,
    MG,
    LU,
    FT,
    EP,
    IS,
}

impl KernelId {
    pub const ALL: [KernelId; 8] = [
        KernelId::BT,
        KernelId::SP,
        KernelId::CG,
        KernelId::MG,
        KernelId::LU,
        KernelId::FT,
        KernelId::EP,
        KernelId::IS,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelId::BT => "bt",
            KernelId::SP => "sp",
            KernelId::CG => "cg",
            KernelId::MG => "mg",
            KernelId::LU => "lu",
            KernelId::FT => "ft",
            KernelId::EP => "ep",
            KernelId::IS => "is",
        }
    }
}

impl fmt::Display for KernelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name().to_ascii_uppercase())
    }
}

impl FromStr for KernelId {
    type Err = KernelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        KernelId::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| KernelError::UnknownKernel(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    S,
    W,
    A,
    B,
    C,
    D,
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarRole {
    InputState,
    Residual,
    Accumulator,
}

/// Declaration of one checkpointed array.
#[derive(Debug, Clone, PartialEq)]
pub struct VarDecl {
    pub name: &'static str,
    /// Row-major extents.
    pub shape: Vec<usize>,
    /// Reals per element: 1 for `double`, 2 for `dcomplex`.
    pub components: usize,
    pub role: VarRole,
    /// Holds integral values (IS bookkeeping arrays).
    pub integral: bool,
}

impl VarDecl {
    fn new(name: &'static str, shape: &[usize], role: VarRole) -> Self {
        VarDecl {
            name,
            shape: shape.to_vec(),
            components: 1,
            role,
            integral: false,
        }
    }

    fn complex(mut self) -> Self {
        self.components = 2;
        self
    }

    fn integral(mut self) -> Self {
        self.integral = true;
        self
    }

    pub fn elements(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn reals(&self) -> usize {
        self.elements() * self.components
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalarKind {
    Int,
    Real,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarDecl {
    pub name: &'static str,
    pub kind: ScalarKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub id: KernelId,
    pub class: Class,
    pub checkpoint_vars: Vec<VarDecl>,
    /// Scalars other than the loop index, in state order.
    pub scalars: Vec<ScalarDecl>,
    pub loop_len: usize,
    pub loop_index_name: &'static str,
    /// False when nothing checkpointed is floating-point data (IS).
    pub float_surface: bool,
}

impl KernelSpec {
    pub fn var(&self, name: &str) -> Option<(usize, &VarDecl)> {
        self.checkpoint_vars
            .iter()
            .enumerate()
            .find(|(_, v)| v.name == name)
    }

    pub fn real_scalars(&self) -> impl Iterator<Item = &ScalarDecl> {
        self.scalars.iter().filter(|s| s.kind == ScalarKind::Real)
    }

    pub fn int_scalars(&self) -> impl Iterator<Item = &ScalarDecl> {
        self.scalars.iter().filter(|s| s.kind == ScalarKind::Int)
    }
}

/// Checkpointable state, generic over the scalar type.
#[derive(Debug, Clone, PartialEq)]
pub struct State<T> {
    /// One flat buffer per checkpoint variable, in declaration order.
    pub arrays: Vec<Vec<T>>,
    pub reals: Vec<T>,
    pub ints: Vec<i64>,
}

impl<T: Copy> State<T> {
    pub fn map<U>(&self, mut f: impl FnMut(usize, usize, T) -> U) -> State<U>
    where
        T: Real,
        U: Real,
    {
        State {
            arrays: self
                .arrays
                .iter()
                .enumerate()
                .map(|(v, a)| a.iter().enumerate().map(|(i, &x)| f(v, i, x)).collect())
                .collect(),
            reals: self.reals.iter().map(|&r| U::constant(r.value())).collect(),
            ints: self.ints.clone(),
        }
    }
}

/// A named view of one variable in a run.
#[derive(Debug, Clone, Copy)]
pub struct Variable<'a> {
    pub decl: &'a VarDecl,
    pub data: &'a [f64],
}

impl Variable<'_> {
    pub fn name(&self) -> &str {
        self.decl.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.decl.shape
    }

    pub fn role(&self) -> VarRole {
        self.decl.role
    }
}

/// Execution state of one kernel instance.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelRun {
    pub kernel: KernelId,
    pub seed: u64,
    /// Main-loop index of the next iteration to execute.
    pub iter: usize,
    pub state: State<f64>,
    pub output: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

pub(crate) trait Program {
    fn init(&self, seed: u64) -> State<f64>;
    fn step<T: Real>(&self, st: &mut State<T>, iter: usize);
    /// The verification scalar of a state.
    fn reduce<T: Real>(&self, st: &State<T>) -> T;
}

#[derive(Debug)]
enum Body {
    Bt(bt::Bt),
    Sp(sp::Sp),
    Cg(cg::Cg),
    Mg(mg::Mg),
    Lu(lu::Lu),
    Ft(ft::Ft),
    Ep(ep::Ep),
    Is(is::Is),
}

macro_rules! dispatch {
    ($body:expr, $k:ident => $e:expr) => {
        match $body {
            Body::Bt($k) => $e,
            Body::Sp($k) => $e,
            Body::Cg($k) => $e,
            Body::Mg($k) => $e,
            Body::Lu($k) => $e,
            Body::Ft($k) => $e,
            Body::Ep($k) => $e,
            Body::Is($k) => $e,
        }
    };
}

/// A kernel ready to run: its declaration plus program data.
#[derive(Debug)]
pub struct Kernel {
    spec: KernelSpec,
    body: Body,
    references: Mutex<HashMap<u64, f64>>,
}

pub fn build_kernel(id: KernelId, class: Class) -> Result<KernelSpec, KernelError> {
    Kernel::build(id, class).map(|k| k.spec)
}

impl Kernel {
    pub fn build(id: KernelId, class: Class) -> Result<Kernel, KernelError> {
        if class != Class::S {
            return Err(KernelError::UnsupportedClass(class.to_string()));
        }
        let (spec, body) = match id {
            KernelId::BT => (bt::spec(), Body::Bt(bt::Bt::new())),
            KernelId::SP => (sp::spec(), Body::Sp(sp::Sp::new())),
            KernelId::CG => (cg::spec(), Body::Cg(cg::Cg::new())),
            KernelId::MG => (mg::spec(), Body::Mg(mg::Mg::new())),
            KernelId::LU => (lu::spec(), Body::Lu(lu::Lu::new())),
            KernelId::FT => (ft::spec(), Body::Ft(ft::Ft::new())),
            KernelId::EP => (ep::spec(), Body::Ep(ep::Ep::new())),
            KernelId::IS => (is::spec(), Body::Is(is::Is::new())),
        };
        Ok(Kernel {
            spec,
            body,
            references: Mutex::new(HashMap::new()),
        })
    }

    /// Shorthand for the S class, the only one the suite defines.
    pub fn s(id: KernelId) -> Kernel {
        Kernel::build(id, Class::S).expect("class S is always supported")
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn id(&self) -> KernelId {
        self.spec.id
    }

    pub fn initial_state(&self, seed: u64) -> State<f64> {
        dispatch!(&self.body, k => k.init(seed))
    }

    pub fn start(&self, seed: u64) -> KernelRun {
        KernelRun {
            kernel: self.id(),
            seed,
            iter: 0,
            state: self.initial_state(seed),
            output: None,
        }
    }

    /// Advances any state by one main-loop iteration.
    pub fn step_state<T: Real>(&self, st: &mut State<T>, iter: usize) {
        dispatch!(&self.body, k => k.step(st, iter))
    }

    pub fn reduce<T: Real>(&self, st: &State<T>) -> T {
        dispatch!(&self.body, k => k.reduce(st))
    }

    pub fn run_step(&self, run: &mut KernelRun) -> Result<(), KernelError> {
        if run.iter >= self.spec.loop_len {
            return Err(KernelError::IterationOverflow {
                iter: run.iter,
                loop_len: self.spec.loop_len,
            });
        }
        self.step_state(&mut run.state, run.iter);
        run.iter += 1;
        run.output = None;
        if run.iter == self.spec.loop_len {
            run.output = Some(self.reduce(&run.state));
        }
        Ok(())
    }

    /// Runs the remaining iterations and returns the verification output.
    pub fn finish(&self, run: &mut KernelRun) -> f64 {
        while run.iter < self.spec.loop_len {
            self.run_step(run).expect("iteration bound checked by loop");
        }
        match run.output {
            Some(o) => o,
            None => {
                let o = self.reduce(&run.state);
                run.output = Some(o);
                o
            }
        }
    }

    pub fn run_to(&self, run: &mut KernelRun, iter: usize) -> Result<(), KernelError> {
        while run.iter < iter {
            self.run_step(run)?;
        }
        Ok(())
    }

    /// Final output of an uninterrupted run from `seed`.
    pub fn reference_output(&self, seed: u64) -> f64 {
        if let Some(&v) = self.references.lock().unwrap().get(&seed) {
            return v;
        }
        let mut run = self.start(seed);
        let v = self.finish(&mut run);
        self.references.lock().unwrap().insert(seed, v);
        v
    }

    /// Margin-of-error comparison against the reference output.
    pub fn verify(&self, run: &KernelRun) -> Verdict {
        let Some(out) = run.output else {
            return Verdict::Fail;
        };
        let reference = self.reference_output(run.seed);
        if (out - reference).abs() <= 1e-8 * reference.abs().max(1.0) {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn variable<'a>(&'a self, run: &'a KernelRun, name: &str) -> Option<Variable<'a>> {
        let (i, decl) = self.spec.var(name)?;
        Some(Variable {
            decl,
            data: &run.state.arrays[i],
        })
    }

    pub fn variables<'a>(&'a self, run: &'a KernelRun) -> impl Iterator<Item = Variable<'a>> {
        self.spec
            .checkpoint_vars
            .iter()
            .zip(&run.state.arrays)
            .map(|(decl, data)| Variable { decl, data })
    }
}

/// Deterministic generator for a kernel's data; `salt` separates streams.
pub(crate) fn rng(seed: u64, salt: u64) -> XorShiftRng {
    XorShiftRng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub(crate) fn uniform(rng: &mut XorShiftRng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// Program-data seed, fixed per kernel so matrices and tables do not vary
/// with the run seed.
pub(crate) const PROGRAM_SEED: u64 = 314_159_265;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_class_s() {
        for c in [Class::W, Class::A, Class::B, Class::C, Class::D] {
            assert!(matches!(
                build_kernel(KernelId::BT, c),
                Err(KernelError::UnsupportedClass(_))
            ));
        }
    }

    #[test]
    fn class_s_shapes() {
        let bt = build_kernel(KernelId::BT, Class::S).unwrap();
        assert_eq!(bt.checkpoint_vars[0].elements(), 10140);
        let cg = build_kernel(KernelId::CG, Class::S).unwrap();
        assert_eq!(cg.checkpoint_vars[0].elements(), 1402);
        let ft = build_kernel(KernelId::FT, Class::S).unwrap();
        assert_eq!(ft.var("y").unwrap().1.elements(), 266240);
    }

    #[test]
    fn table_totals() {
        let expect: &[(KernelId, &str, usize)] = &[
            (KernelId::BT, "u", 10140),
            (KernelId::SP, "u", 10140),
            (KernelId::MG, "u", 46480),
            (KernelId::MG, "r", 46480),
            (KernelId::CG, "x", 1402),
            (KernelId::LU, "rho_i", 2028),
            (KernelId::LU, "qs", 2028),
            (KernelId::LU, "rsd", 10140),
            (KernelId::LU, "u", 10140),
            (KernelId::FT, "y", 266240),
            (KernelId::FT, "sums", 6),
            (KernelId::EP, "q", 10),
            (KernelId::IS, "key_array", 65536),
            (KernelId::IS, "bucket_ptrs", 512),
        ];
        for &(id, name, total) in expect {
            let spec = build_kernel(id, Class::S).unwrap();
            assert_eq!(spec.var(name).unwrap().1.elements(), total, "{id} {name}");
        }
    }

    #[test]
    fn loop_index_names() {
        let names: Vec<_> = KernelId::ALL
            .iter()
            .map(|&k| build_kernel(k, Class::S).unwrap().loop_index_name)
            .collect();
        assert_eq!(names, ["step", "step", "it", "it", "istep", "kt", "k", "iteration"]);
    }

    #[test]
    fn state_lengths_match_declarations() {
        for id in KernelId::ALL {
            let k = Kernel::s(id);
            let st = k.initial_state(42);
            assert_eq!(st.arrays.len(), k.spec().checkpoint_vars.len());
            for (a, d) in st.arrays.iter().zip(&k.spec().checkpoint_vars) {
                assert_eq!(a.len(), d.reals(), "{id} {}", d.name);
            }
            assert_eq!(st.reals.len(), k.spec().real_scalars().count());
            assert_eq!(st.ints.len(), k.spec().int_scalars().count());
        }
    }

    #[test]
    fn runs_are_deterministic() {
        for id in KernelId::ALL {
            let k = Kernel::s(id);
            let mut a = k.start(7);
            let mut b = k.start(7);
            for _ in 0..k.spec().loop_len {
                k.run_step(&mut a).unwrap();
                k.run_step(&mut b).unwrap();
                assert_eq!(a.state, b.state);
            }
            assert_eq!(a.output.unwrap().to_bits(), b.output.unwrap().to_bits());
            assert!(a.output.unwrap().is_finite(), "{id}");
        }
    }

    #[test]
    fn stepping_past_the_end_overflows() {
        let k = Kernel::s(KernelId::MG);
        let mut run = k.start(1);
        k.finish(&mut run);
        assert_eq!(
            k.run_step(&mut run),
            Err(KernelError::IterationOverflow { iter: 4, loop_len: 4 })
        );
    }

    #[test]
    fn uninterrupted_run_verifies() {
        for id in KernelId::ALL {
            let k = Kernel::s(id);
            let mut run = k.start(42);
            k.finish(&mut run);
            assert_eq!(k.verify(&run), Verdict::Pass, "{id}");
        }
    }

    #[test]
    fn kernel_names_parse() {
        for id in KernelId::ALL {
            assert_eq!(id.name().parse::<KernelId>().unwrap(), id);
            assert_eq!(id.to_string().parse::<KernelId>().unwrap(), id);
        }
        assert!("xx".parse::<KernelId>().is_err());
    }
}
