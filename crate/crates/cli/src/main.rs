//! `scrutinize`: analyze kernels, draw criticality maps, measure checkpoint
//! savings and cross-check the analysis.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scrutinize_core::ckpt::{self, CheckpointPolicy, Checkpointer, CkptError};
use scrutinize_core::kernels::{Kernel, KernelId, Verdict};
use scrutinize_core::mask::FillPolicy;
use scrutinize_core::scrutiny::{self, AnalysisError, CriticalityReport};
use scrutinize_core::viz::{self, Format, Projection, VizRequest};

const OUT_ENV: &str = "SCRUTINIZE_OUT";
const CKPT_SUBDIR: &str = "checkpoints";

#[derive(Parser)]
#[command(name = "scrutinize", version, about = "Element-level criticality analysis for checkpointing")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Kernel name (bt, sp, cg, mg, lu, ft, ep, is), or `all` where accepted.
    #[arg(long)]
    kernel: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory; SCRUTINIZE_OUT takes precedence.
    #[arg(long, default_value = "scrutinize-out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Classify every element and write the CSV report and mask file.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Main-loop iterations to differentiate.
        #[arg(long, default_value_t = scrutiny::DEFAULT_ITERATIONS)]
        iters: usize,
    },
    /// Render a criticality map of one variable.
    Viz {
        #[command(flatten)]
        common: Common,
        #[arg(long = "var")]
        variable: String,
        /// Last index of a four-index variable; every one when omitted.
        #[arg(long)]
        component: Option<usize>,
        #[arg(long, default_value_t = 0)]
        axis: usize,
        /// A single slice along the axis; every one when omitted.
        #[arg(long)]
        slice: Option<usize>,
        /// Draw the variable as a flat strip.
        #[arg(long)]
        strip: bool,
        #[arg(long, default_value = "ascii")]
        format: Format,
    },
    /// Checkpoint, crash halfway, restart and report the storage saved.
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CkptArgs,
        /// Iteration before which the run is abandoned (default: half way).
        #[arg(long)]
        crash_at: Option<usize>,
    },
    /// Compare the analysis with read tracking and perturbation runs.
    Reconcile {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = scrutiny::DEFAULT_ITERATIONS)]
        iters: usize,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 7)]
        sample_seed: u64,
    },
    /// Run with checkpointing; can kill its own process or resume.
    #[command(hide = true)]
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CkptArgs,
        /// Abort the process before this iteration.
        #[arg(long, conflicts_with = "resume")]
        crash_at: Option<usize>,
        /// Continue from the latest checkpoint.
        #[arg(long)]
        resume: bool,
    },
}

#[derive(Args, Clone, Copy)]
struct CkptArgs {
    #[arg(long, default_value_t = 1)]
    interval: usize,
    #[arg(long, default_value_t = 2)]
    versions: usize,
    #[arg(long, default_value = "poison")]
    fill: FillPolicy,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Failed(String),
}

impl From<CkptError> for Failure {
    fn from(e: CkptError) -> Self {
        match e {
            CkptError::Policy(m) => Failure::Usage(m),
            CkptError::MissingAnalysis { kernel, path } => Failure::Failed(format!(
                "no analysis of {kernel} at {}; run `scrutinize analyze --kernel {}` first",
                path.display(),
                kernel.name()
            )),
            e => Failure::Failed(e.to_string()),
        }
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::IterationRange { .. } => Failure::Usage(e.to_string()),
            e => Failure::Failed(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Failed(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

impl Common {
    fn out_dir(&self) -> PathBuf {
        std::env::var_os(OUT_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .unwrap_or_else(|| self.out.clone())
    }

    fn kernels(&self, allow_all: bool) -> Result<Vec<KernelId>, Failure> {
        if self.kernel.eq_ignore_ascii_case("all") {
            if allow_all {
                return Ok(KernelId::ALL.to_vec());
            }
            return Err(Failure::Usage("this command takes a single kernel".into()));
        }
        self.kernel
            .parse()
            .map(|k| vec![k])
            .map_err(|e: scrutinize_core::kernels::KernelError| Failure::Usage(e.to_string()))
    }

    fn kernel(&self) -> Result<Kernel, Failure> {
        Ok(Kernel::s(self.kernels(false)?[0]))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Analyze { common, iters } => analyze(&common, iters),
        Cmd::Viz {
            common,
            variable,
            component,
            axis,
            slice,
            strip,
            format,
        } => {
            let projection = if strip {
                Projection::FlatStrip
            } else {
                Projection::SliceStack { axis, index: slice }
            };
            viz_cmd(&common, variable, component, projection, format)
        }
        Cmd::Bench { common, ckpt, crash_at } => bench(&common, ckpt, crash_at),
        Cmd::Reconcile {
            common,
            iters,
            samples,
            sample_seed,
        } => reconcile(&common, iters, samples, sample_seed),
        Cmd::Run {
            common,
            ckpt,
            crash_at,
            resume,
        } => run(&common, ckpt, crash_at, resume),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn csv_name(kernels: &[KernelId]) -> String {
    match kernels {
        [k] => format!("{}_criticality.csv", k.name()),
        _ => "criticality.csv".into(),
    }
}

fn analyze(common: &Common, iters: usize) -> Outcome {
    let ids = common.kernels(true)?;
    let out = common.out_dir();
    fs::create_dir_all(&out)?;
    let mut reports = Vec::new();
    for &id in &ids {
        let kernel = Kernel::s(id);
        let report = match scrutiny::analyze(&kernel, iters, common.seed) {
            Err(AnalysisError::NoFloatSurface(_)) => {
                println!("{id}: no floating-point checkpoint data, every element is treated as critical");
                scrutiny::all_critical_report(&kernel, common.seed)
            }
            r => r?,
        };
        if !report.by_fiat {
            println!("{id} (K={iters}, seed {})", common.seed);
        }
        for v in &report.variables {
            println!("  {v}");
        }
        ckpt::save_masks(&out, &report)?;
        reports.push(report);
    }
    let path = out.join(csv_name(&ids));
    let file = BufWriter::new(File::create(&path)?);
    scrutiny::write_csv(&reports, file).map_err(|e| Failure::Failed(e.to_string()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn load(common: &Common, kernel: &Kernel) -> Result<CriticalityReport, Failure> {
    Ok(ckpt::load_report(common.out_dir(), kernel, common.seed)?)
}

fn viz_cmd(
    common: &Common,
    variable: String,
    component: Option<usize>,
    projection: Projection,
    format: Format,
) -> Outcome {
    let kernel = common.kernel()?;
    let report = load(common, &kernel)?;
    let req = VizRequest {
        kernel: kernel.id(),
        variable,
        component,
        projection,
        format,
    };
    let artifacts = viz::render(&report, &req).map_err(|e| match e {
        viz::VizError::MissingAnalysis(_) => Failure::Failed(e.to_string()),
        e => Failure::Usage(e.to_string()),
    })?;
    let dir = common.out_dir().join("viz");
    fs::create_dir_all(&dir)?;
    for a in &artifacts {
        let path = dir.join(&a.name);
        fs::write(&path, &a.bytes)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn policy(args: CkptArgs) -> Result<CheckpointPolicy, Failure> {
    Ok(CheckpointPolicy::new(args.interval, args.versions)?)
}

fn bench(common: &Common, args: CkptArgs, crash_at: Option<usize>) -> Outcome {
    let policy = policy(args)?;
    let mut failed = Vec::new();
    for id in common.kernels(true)? {
        let kernel = Kernel::s(id);
        let report = load(common, &kernel)?;
        let s = ckpt::storage_report(&kernel, &report);
        println!(
            "{id}: original {} B, optimized {} B, saved {:.1}%",
            s.original_payload,
            s.optimized_payload,
            s.saved_fraction * 100.0
        );
        let loop_len = kernel.spec().loop_len;
        let at = crash_at.unwrap_or(loop_len / 2).min(loop_len);
        let dir = common.out_dir().join(CKPT_SUBDIR).join(id.name());
        let o = ckpt::crash_and_restart(&kernel, &report, policy, &dir, args.fill, at)?;
        let same = if o.bitwise_equal() { "bitwise equal" } else { "DIFFERS" };
        println!(
            "{id}: crashed before iteration {at}, resumed at {} with fill {}, output {same}, verification {:?}",
            o.resumed_at, args.fill, o.verdict
        );
        if !o.bitwise_equal() || o.verdict != Verdict::Pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Failed(format!("restart changed the result of {failed:?}")))
    }
}

fn reconcile(common: &Common, iters: usize, samples: usize, sample_seed: u64) -> Outcome {
    let kernel = common.kernel()?;
    let report = load(common, &kernel)?;
    let reads = scrutiny::oracle_read_tracking(&kernel, iters, common.seed)?;
    let drawn = scrutiny::sample_perturbations(&kernel, &report, samples, sample_seed);
    let r = scrutiny::reconcile(&report, &reads, &drawn);
    let uncritical = drawn
        .iter()
        .filter(|s| report.variable(&s.variable).is_some_and(|v| !v.mask.is_critical(s.element)))
        .count();
    println!(
        "{}: {} perturbation samples ({uncritical} of {} uncritical elements)",
        kernel.id(),
        r.samples_checked,
        report.n_uncritical()
    );
    let offending: Vec<String> = r
        .unread_but_critical
        .iter()
        .map(|(v, i)| format!("{v}[{i}] never read but critical"))
        .chain(r.read_but_uncritical.iter().map(|(v, i)| format!("{v}[{i}] read but uncritical")))
        .chain(r.perturbation_mismatches.iter().map(|s| {
            format!("{}[{}] perturbation gives {:?}", s.variable, s.element, s.effect)
        }))
        .collect();
    println!("{} mismatches", offending.len());
    if offending.is_empty() {
        return Ok(());
    }
    for line in offending.iter().take(20) {
        println!("  {line}");
    }
    if offending.len() > 20 {
        println!("  ... {} more", offending.len() - 20);
    }
    Err(Failure::Failed("analysis disagrees with the oracles".into()))
}

fn run(common: &Common, args: CkptArgs, crash_at: Option<usize>, resume: bool) -> Outcome {
    let kernel = common.kernel()?;
    let report = load(common, &kernel)?;
    let dir: PathBuf = common.out_dir().join(CKPT_SUBDIR).join(kernel.id().name());
    let mut run = if resume {
        let r = ckpt::restart(&dir, &kernel, args.fill)?;
        println!("resumed at iteration {}", r.iter);
        r
    } else {
        kernel.start(common.seed)
    };
    let mut ck = Checkpointer::open(&dir, &kernel, &report, policy(args)?)?;
    while run.iter < kernel.spec().loop_len {
        if crash_at == Some(run.iter) {
            eprintln!("aborting before iteration {}", run.iter);
            std::process::abort();
        }
        ck.maybe_write(&kernel, &run)?;
        kernel.run_step(&mut run).expect("bounded by loop length");
    }
    drop(ck);
    let output = kernel.finish(&mut run);
    let reference = kernel.reference_output(run.seed);
    let verdict = kernel.verify(&run);
    println!("output {output:e} (bits {:#018x}), verification {verdict:?}", output.to_bits());
    report_run(output, reference, verdict, &dir)
}

fn report_run(output: f64, reference: f64, verdict: Verdict, dir: &Path) -> Outcome {
    if output.to_bits() != reference.to_bits() {
        return Err(Failure::Failed(format!(
            "output differs from an uninterrupted run (checkpoints in {})",
            dir.display()
        )));
    }
    if verdict != Verdict::Pass {
        return Err(Failure::Failed("verification failed".into()));
    }
    Ok(())
}
