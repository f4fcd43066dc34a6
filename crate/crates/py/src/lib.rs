//! Python bindings.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use scrutinize_core::ckpt::{self, CkptError};
use scrutinize_core::kernels::{Kernel, KernelId, Verdict};
use scrutinize_core::mask::{self, CriticalityMask, FillPolicy, MaskSet};
use scrutinize_core::scrutiny::{self, CriticalityReport};
use scrutinize_core::viz::{self, Format, Projection, VizRequest};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn ckpt_err(e: CkptError) -> PyErr {
    match e {
        CkptError::Io(e) => PyIOError::new_err(e.to_string()),
        CkptError::Policy(m) => PyValueError::new_err(m),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn kernel(name: &str) -> PyResult<Kernel> {
    let id: KernelId = name.parse().map_err(value_err)?;
    Ok(Kernel::s(id))
}

fn fill(name: &str) -> PyResult<FillPolicy> {
    name.parse().map_err(PyValueError::new_err)
}

/// Run-length criticality mask over the elements of one variable.
#[pyclass(name = "Mask", module = "scrutinize", eq, frozen, from_py_object)]
#[derive(Clone, PartialEq)]
struct PyMask(CriticalityMask);

#[pymethods]
impl PyMask {
    /// Builds a mask from one flag per element, `True` meaning critical.
    #[new]
    fn new(flags: Vec<bool>) -> Self {
        PyMask(CriticalityMask::from_flags(&flags))
    }

    /// Builds a mask from half-open `(start, end)` runs of critical elements.
    #[staticmethod]
    fn from_runs(total: u64, runs: Vec<(u64, u64)>) -> PyResult<Self> {
        CriticalityMask::new(total, runs).map(PyMask).map_err(value_err)
    }

    #[getter]
    fn total(&self) -> u64 {
        self.0.total()
    }

    #[getter]
    fn n_critical(&self) -> u64 {
        self.0.n_critical()
    }

    #[getter]
    fn n_uncritical(&self) -> u64 {
        self.0.n_uncritical()
    }

    #[getter]
    fn runs(&self) -> Vec<(u64, u64)> {
        self.0.runs().to_vec()
    }

    fn is_critical(&self, i: u64) -> PyResult<bool> {
        if i >= self.0.total() {
            return Err(pyo3::exceptions::PyIndexError::new_err(i));
        }
        Ok(self.0.is_critical(i))
    }

    fn to_flags(&self) -> Vec<bool> {
        self.0.to_flags()
    }

    #[pyo3(signature = (data, width = 1))]
    fn gather(&self, data: Vec<f64>, width: usize) -> PyResult<Vec<f64>> {
        mask::gather_width(&data, &self.0, width).map_err(value_err)
    }

    /// Expands packed critical values back to full length. With `keep`,
    /// uncritical positions take their values from `base`.
    #[pyo3(signature = (packed, fill = "zero", width = 1, base = None))]
    fn scatter(&self, packed: Vec<f64>, fill: &str, width: usize, base: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
        let mut out = base.unwrap_or_else(|| vec![0.0; self.0.total() as usize * width]);
        mask::scatter_width(&packed, &self.0, self::fill(fill)?, &mut out, width).map_err(value_err)?;
        Ok(out)
    }

    fn __len__(&self) -> usize {
        self.0.total() as usize
    }

    fn __repr__(&self) -> String {
        format!("Mask(total={}, critical={})", self.0.total(), self.0.n_critical())
    }
}

/// Classification of every checkpointed element of one kernel.
#[pyclass(name = "Report", module = "scrutinize", frozen)]
struct PyReport(CriticalityReport);

#[pymethods]
impl PyReport {
    #[getter]
    fn kernel(&self) -> &'static str {
        self.0.kernel.name()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[getter]
    fn by_fiat(&self) -> bool {
        self.0.by_fiat
    }

    #[getter]
    fn variables(&self) -> Vec<String> {
        self.0.variables.iter().map(|v| v.name.clone()).collect()
    }

    fn mask(&self, variable: &str) -> PyResult<PyMask> {
        self.0
            .variable(variable)
            .map(|v| PyMask(v.mask.clone()))
            .ok_or_else(|| PyKeyError::new_err(variable.to_string()))
    }

    fn masks(&self) -> BTreeMap<String, PyMask> {
        self.0.masks().into_iter().map(|(k, m)| (k, PyMask(m))).collect()
    }

    /// `(variable, total, uncritical)` per variable.
    fn rows(&self) -> Vec<(String, u64, u64)> {
        self.0
            .variables
            .iter()
            .map(|v| (v.name.clone(), v.total(), v.n_uncritical()))
            .collect()
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        scrutiny::write_csv(std::slice::from_ref(&self.0), &mut buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(String::from_utf8(buf).expect("csv of ASCII fields"))
    }

    /// Payload sizes in bytes and the saved fraction.
    fn storage(&self) -> PyResult<BTreeMap<&'static str, f64>> {
        let s = ckpt::storage_report(&Kernel::s(self.0.kernel), &self.0);
        Ok(BTreeMap::from([
            ("original_payload", s.original_payload as f64),
            ("optimized_payload", s.optimized_payload as f64),
            ("mask_bytes", s.mask_bytes as f64),
            ("saved_fraction", s.saved_fraction),
        ]))
    }

    /// Criticality maps as `(file name, contents)` pairs.
    #[pyo3(signature = (variable, component = None, axis = 0, slice = None, strip = false, format = "ascii"))]
    fn render<'py>(
        &self,
        py: Python<'py>,
        variable: String,
        component: Option<usize>,
        axis: usize,
        slice: Option<usize>,
        strip: bool,
        format: &str,
    ) -> PyResult<Vec<(String, Bound<'py, PyBytes>)>> {
        let format: Format = format.parse().map_err(PyValueError::new_err)?;
        let projection = if strip {
            Projection::FlatStrip
        } else {
            Projection::SliceStack { axis, index: slice }
        };
        let req = VizRequest {
            kernel: self.0.kernel,
            variable,
            component,
            projection,
            format,
        };
        let artifacts = viz::render(&self.0, &req).map_err(value_err)?;
        Ok(artifacts
            .into_iter()
            .map(|a| (a.name, PyBytes::new(py, &a.bytes)))
            .collect())
    }

    /// Writes the mask file into `dir`.
    fn save(&self, dir: PathBuf) -> PyResult<PathBuf> {
        ckpt::save_masks(dir, &self.0).map_err(ckpt_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Report({}: {}/{} uncritical)",
            self.0.kernel,
            self.0.n_uncritical(),
            self.0.total()
        )
    }
}

#[pyfunction]
fn kernels() -> Vec<&'static str> {
    KernelId::ALL.iter().map(|k| k.name()).collect()
}

/// Classifies every element; kernels without floating-point state are
/// reported all-critical.
#[pyfunction]
#[pyo3(signature = (kernel, iterations = scrutiny::DEFAULT_ITERATIONS, seed = 42))]
fn analyze(py: Python<'_>, kernel: &str, iterations: usize, seed: u64) -> PyResult<PyReport> {
    let k = self::kernel(kernel)?;
    py.detach(|| scrutiny::analyze_or_fiat(&k, iterations, seed))
        .map(PyReport)
        .map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (dir, kernel, seed = 42))]
fn load_report(dir: PathBuf, kernel: &str, seed: u64) -> PyResult<PyReport> {
    ckpt::load_report(dir, &self::kernel(kernel)?, seed).map(PyReport).map_err(ckpt_err)
}

/// Output derivative per real of every variable at iteration `j`.
#[pyfunction]
#[pyo3(signature = (kernel, j = 0, seed = 42))]
fn gradient(py: Python<'_>, kernel: &str, j: usize, seed: u64) -> PyResult<BTreeMap<String, Vec<f64>>> {
    let k = self::kernel(kernel)?;
    let grads = py.detach(|| {
        let mut run = k.start(seed);
        k.run_to(&mut run, j).map_err(value_err)?;
        scrutiny::iteration_gradient(&k, &run, j).map_err(value_err)
    })?;
    Ok(k.spec()
        .checkpoint_vars
        .iter()
        .map(|d| d.name.to_string())
        .zip(grads)
        .collect())
}

#[pyfunction]
fn encode_masks<'py>(py: Python<'py>, masks: BTreeMap<String, PyMask>) -> PyResult<Bound<'py, PyBytes>> {
    let set: MaskSet = masks.into_iter().map(|(k, m)| (k, m.0)).collect();
    let bytes = mask::encode(&set).map_err(value_err)?;
    Ok(PyBytes::new(py, &bytes))
}

#[pyfunction]
fn decode_masks(data: &[u8]) -> PyResult<BTreeMap<String, PyMask>> {
    let set = mask::decode(data).map_err(value_err)?;
    Ok(set.into_iter().map(|(k, m)| (k, PyMask(m))).collect())
}

/// Checkpoints into `dir`, abandons the run before `crash_at`, restarts and
/// finishes. Returns `(resumed_at, bitwise_equal, verified)`.
#[pyfunction]
#[pyo3(signature = (report, dir, fill = "poison", crash_at = None, interval = 1, versions = 2))]
fn crash_and_restart(
    py: Python<'_>,
    report: &PyReport,
    dir: PathBuf,
    fill: &str,
    crash_at: Option<usize>,
    interval: usize,
    versions: usize,
) -> PyResult<(usize, bool, bool)> {
    let k = Kernel::s(report.0.kernel);
    let fill = self::fill(fill)?;
    let policy = ckpt::CheckpointPolicy::new(interval, versions).map_err(ckpt_err)?;
    let at = crash_at.unwrap_or(k.spec().loop_len / 2);
    let o = py
        .detach(|| ckpt::crash_and_restart(&k, &report.0, policy, dir, fill, at))
        .map_err(ckpt_err)?;
    Ok((o.resumed_at, o.bitwise_equal(), o.verdict == Verdict::Pass))
}

/// Number of disagreements between the report and the read-tracking and
/// perturbation oracles.
#[pyfunction]
#[pyo3(signature = (report, samples = 200, iterations = scrutiny::DEFAULT_ITERATIONS, sample_seed = 7))]
fn reconcile(py: Python<'_>, report: &PyReport, samples: usize, iterations: usize, sample_seed: u64) -> PyResult<usize> {
    let k = Kernel::s(report.0.kernel);
    py.detach(|| {
        let reads = scrutiny::oracle_read_tracking(&k, iterations, report.0.seed).map_err(value_err)?;
        let drawn = scrutiny::sample_perturbations(&k, &report.0, samples, sample_seed);
        let r = scrutiny::reconcile(&report.0, &reads, &drawn);
        Ok(r.mismatch_count() + r.read_but_uncritical.len())
    })
}

#[pymodule]
pub fn scrutinize(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMask>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(kernels, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(load_report, m)?)?;
    m.add_function(wrap_pyfunction!(gradient, m)?)?;
    m.add_function(wrap_pyfunction!(encode_masks, m)?)?;
    m.add_function(wrap_pyfunction!(decode_masks, m)?)?;
    m.add_function(wrap_pyfunction!(crash_and_restart, m)?)?;
    m.add_function(wrap_pyfunction!(reconcile, m)?)?;
    Ok(())
}
