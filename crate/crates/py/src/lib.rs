//! Python bindings for `cablas`.
//!
//! Vectors are plain lists of floats; matrices are lists of rows. Kernels
//! release the GIL while they run.

use std::fmt::Display;

use cablas::cache_sim::{self, CacheStats, LoopNestKind, LoopNestSpec};
use cablas::io_analysis::{self, OpKind, OperationInstance};
use cablas::kernels::{self, DenseMatrix, ExecPolicy, Layout, Vector};
use cablas::machine::{self, BlockingPlan, MachineDescriptor};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Machine", module = "cablas", frozen)]
struct PyMachine(MachineDescriptor);

#[pymethods]
impl PyMachine {
    /// The bundled two-level default machine.
    #[staticmethod]
    fn default() -> Self {
        PyMachine(MachineDescriptor::default_machine())
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        machine::load_descriptor(text).map(PyMachine).map_err(value_err)
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        MachineDescriptor::from_file(path).map(PyMachine).map_err(value_err)
    }

    #[getter]
    fn cores(&self) -> usize {
        self.0.cores()
    }

    #[getter]
    fn element_bytes(&self) -> u64 {
        self.0.element_bytes()
    }

    #[getter]
    fn line_bytes(&self) -> u64 {
        self.0.line_bytes()
    }

    /// `(line_bytes, associativity, num_sets, shared)` per level, innermost first.
    #[getter]
    fn levels(&self) -> Vec<(u64, u64, u64, bool)> {
        self.0
            .levels()
            .iter()
            .map(|l| (l.line_bytes, l.associativity, l.num_sets, l.shared))
            .collect()
    }

    /// Capacity of level `level` (0 = L1) in elements.
    fn capacity(&self, level: usize) -> PyResult<u64> {
        self.0
            .capacity_elements(level)
            .ok_or_else(|| PyValueError::new_err(format!("no cache level {level}")))
    }

    #[pyo3(signature = (m_r=None))]
    fn blocking_plan(&self, m_r: Option<usize>) -> PyResult<PyPlan> {
        machine::derive_blocking_plan(&self.0, m_r).map(PyPlan).map_err(value_err)
    }

    fn to_toml(&self) -> String {
        self.0.to_toml()
    }

    fn __repr__(&self) -> String {
        let sizes: Vec<String> = self.0.levels().iter().map(|l| format!("{}B", l.size_bytes())).collect();
        format!("Machine(cores={}, levels=[{}])", self.0.cores(), sizes.join(", "))
    }
}

#[pyclass(name = "Plan", module = "cablas", frozen)]
struct PyPlan(BlockingPlan);

#[pymethods]
impl PyPlan {
    #[getter]
    fn m_c(&self) -> usize {
        self.0.m_c
    }
    #[getter]
    fn n_c(&self) -> usize {
        self.0.n_c
    }
    #[getter]
    fn m_r(&self) -> usize {
        self.0.m_r
    }
    #[getter]
    fn dot_block(&self) -> usize {
        self.0.dot_block
    }
    #[getter]
    fn dot_cutoff(&self) -> usize {
        self.0.dot_cutoff
    }
    #[getter]
    fn max_threads(&self) -> usize {
        self.0.max_threads
    }

    fn __repr__(&self) -> String {
        let p = &self.0;
        format!(
            "Plan(m_c={}, n_c={}, m_r={}, dot_block={}, dot_cutoff={}, max_threads={})",
            p.m_c, p.n_c, p.m_r, p.dot_block, p.dot_cutoff, p.max_threads
        )
    }
}

fn plan_or_default(plan: Option<PyRef<'_, PyPlan>>) -> PyResult<BlockingPlan> {
    match plan {
        Some(p) => Ok(p.0),
        None => machine::derive_blocking_plan(&MachineDescriptor::default_machine(), None).map_err(value_err),
    }
}

fn policy(threads: usize, plan: Option<PyRef<'_, PyPlan>>) -> PyResult<ExecPolicy> {
    ExecPolicy::new(threads, plan_or_default(plan)?).map_err(value_err)
}

fn parse_layout(layout: &str) -> PyResult<Layout> {
    match layout {
        "row" => Ok(Layout::RowMajor),
        "col" => Ok(Layout::ColMajor),
        other => Err(PyValueError::new_err(format!("layout must be 'row' or 'col', got {other:?}"))),
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], layout: Layout) -> PyResult<DenseMatrix> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix rows have different lengths"));
    }
    Ok(DenseMatrix::from_fn(m, n, layout, |i, j| rows[i][j]))
}

fn matrix_to_rows(a: &DenseMatrix) -> Vec<Vec<f64>> {
    (0..a.rows()).map(|i| (0..a.cols()).map(|j| a.get(i, j)).collect()).collect()
}

/// `alpha0 + x . y`.
#[pyfunction]
#[pyo3(signature = (x, y, alpha0=0.0, threads=1, plan=None))]
fn dot(
    py: Python<'_>,
    x: Vec<f64>,
    y: Vec<f64>,
    alpha0: f64,
    threads: usize,
    plan: Option<PyRef<'_, PyPlan>>,
) -> PyResult<f64> {
    let policy = policy(threads, plan)?;
    let (x, y) = (Vector::from(x), Vector::from(y));
    py.detach(|| kernels::dot(&x, &y, alpha0, &policy)).map_err(value_err)
}

/// `c + A x`, with `A` stored in `layout` ("col" or "row") for the kernel.
#[pyfunction]
#[pyo3(signature = (a, x, c=None, layout="col", threads=1, plan=None))]
fn gemv(
    py: Python<'_>,
    a: Vec<Vec<f64>>,
    x: Vec<f64>,
    c: Option<Vec<f64>>,
    layout: &str,
    threads: usize,
    plan: Option<PyRef<'_, PyPlan>>,
) -> PyResult<Vec<f64>> {
    let policy = policy(threads, plan)?;
    let a = matrix_from_rows(&a, parse_layout(layout)?)?;
    let x = Vector::from(x);
    let mut c = Vector::from(c.unwrap_or_else(|| vec![0.0; a.rows()]));
    py.detach(|| kernels::gemv(&a, &x, &mut c, &policy)).map_err(value_err)?;
    Ok(c.into_vec())
}

/// `C + x y^T` as a list of rows.
#[pyfunction]
#[pyo3(signature = (x, y, c=None, layout="col", threads=1, plan=None))]
fn ger(
    py: Python<'_>,
    x: Vec<f64>,
    y: Vec<f64>,
    c: Option<Vec<Vec<f64>>>,
    layout: &str,
    threads: usize,
    plan: Option<PyRef<'_, PyPlan>>,
) -> PyResult<Vec<Vec<f64>>> {
    let policy = policy(threads, plan)?;
    let layout = parse_layout(layout)?;
    let mut c = match c {
        Some(rows) => matrix_from_rows(&rows, layout)?,
        None => DenseMatrix::zeros(x.len(), y.len(), layout),
    };
    let (x, y) = (Vector::from(x), Vector::from(y));
    py.detach(|| kernels::ger(&x, &y, &mut c, &policy)).map_err(value_err)?;
    Ok(matrix_to_rows(&c))
}

#[pyfunction]
fn fma_max(fast_plus_reads: f64, n_objects: u32) -> PyResult<f64> {
    if n_objects < 2 {
        return Err(PyValueError::new_err("n_objects must be at least 2"));
    }
    Ok(io_analysis::fma_max(fast_plus_reads, n_objects))
}

/// Raw `(reads, stores)` lower bounds.
#[pyfunction]
fn gemv_bounds(m: usize, n: usize, fast: u64) -> (f64, f64) {
    io_analysis::gemv_bounds(m, n, fast)
}

#[pyfunction]
fn gem_bounds(m: usize, n: usize, fast: u64) -> (f64, f64) {
    io_analysis::gem_bounds(m, n, fast)
}

#[pyfunction]
fn dot_bounds(n: usize, fast: u64) -> (f64, f64) {
    io_analysis::dot_bounds(n, fast)
}

#[pyfunction]
fn blocked_gemv_access_count(m: usize, n: usize, plan: PyRef<'_, PyPlan>) -> f64 {
    io_analysis::blocked_gemv_access_count(m, n, &plan.0)
}

#[pyfunction]
fn blocked_dot_access_count(n: usize, dot_block: usize) -> PyResult<f64> {
    if dot_block == 0 {
        return Err(PyValueError::new_err("dot_block must be positive"));
    }
    Ok(io_analysis::blocked_dot_access_count(n, dot_block))
}

#[pyfunction]
#[pyo3(signature = (parallel_fraction, overhead=0.0))]
fn speedup_bound(parallel_fraction: f64, overhead: f64) -> PyResult<f64> {
    io_analysis::speedup_bound(parallel_fraction, overhead).map_err(value_err)
}

fn parse_op(kind: &str) -> PyResult<OpKind> {
    match kind {
        "dot" => Ok(OpKind::Dot),
        "gem" => Ok(OpKind::Gem),
        "gemv" => Ok(OpKind::Gemv),
        other => Err(PyValueError::new_err(format!("unknown operation {other:?}"))),
    }
}

/// Bound report for `kind` ("dot", "gem", "gemv") with fast memory at cache `level`.
#[pyfunction]
#[pyo3(signature = (kind, m, n, machine, plan=None, level=0))]
fn report<'py>(
    py: Python<'py>,
    kind: &str,
    m: usize,
    n: usize,
    machine: PyRef<'_, PyMachine>,
    plan: Option<PyRef<'_, PyPlan>>,
    level: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let plan = match plan {
        Some(p) => p.0,
        None => machine::derive_blocking_plan(&machine.0, None).map_err(value_err)?,
    };
    let op = OperationInstance::new(parse_op(kind)?, m, n).map_err(value_err)?;
    let r = io_analysis::report(&op, &machine.0, &plan, level).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("min_reads_raw", r.min_reads_raw)?;
    d.set_item("min_stores_raw", r.min_stores_raw)?;
    d.set_item("min_reads", r.min_reads)?;
    d.set_item("min_stores", r.min_stores)?;
    d.set_item("fast_memory_elements", r.fast_memory_elements)?;
    d.set_item("predicted_reads_blocked", r.predicted_reads_blocked)?;
    Ok(d)
}

fn stats_dict<'py>(py: Python<'py>, s: &CacheStats) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    let levels: Vec<Bound<'py, PyDict>> = s
        .levels
        .iter()
        .map(|l| {
            let ld = PyDict::new(py);
            ld.set_item("hits", l.hits)?;
            ld.set_item("misses", l.misses)?;
            ld.set_item("evictions", l.evictions)?;
            ld.set_item("writebacks", l.writebacks)?;
            Ok(ld)
        })
        .collect::<PyResult<_>>()?;
    d.set_item("levels", levels)?;
    d.set_item("slow_memory_reads", s.slow_memory_reads)?;
    d.set_item("slow_memory_writes", s.slow_memory_writes)?;
    Ok(d)
}

/// Run a text trace (`R|W <hex address> <core>` per line) through the hierarchy.
#[pyfunction]
fn simulate_trace<'py>(py: Python<'py>, machine: PyRef<'_, PyMachine>, trace: &str) -> PyResult<Bound<'py, PyDict>> {
    let accesses = cache_sim::parse_trace(trace).map_err(value_err)?;
    let m = &machine.0;
    let stats = py.detach(|| cache_sim::simulate(m, accesses)).map_err(value_err)?;
    stats_dict(py, &stats)
}

fn parse_nest(kind: &str) -> PyResult<LoopNestKind> {
    match kind {
        "dot-small" => Ok(LoopNestKind::DotSmall),
        "dot-large" => Ok(LoopNestKind::DotLarge),
        "gemv-col" => Ok(LoopNestKind::GemvColBlocked),
        "gemv-row" => Ok(LoopNestKind::GemvRowMajor),
        "ger" => Ok(LoopNestKind::Ger),
        other => Err(PyValueError::new_err(format!("unknown loop nest {other:?}"))),
    }
}

/// Simulate a kernel loop nest and compare its slow-memory traffic with the
/// closed-form counts.
#[pyfunction]
#[pyo3(signature = (kind, m, n, machine, plan=None))]
fn validate_analysis<'py>(
    py: Python<'py>,
    kind: &str,
    m: usize,
    n: usize,
    machine: PyRef<'_, PyMachine>,
    plan: Option<PyRef<'_, PyPlan>>,
) -> PyResult<Bound<'py, PyDict>> {
    let plan = match plan {
        Some(p) => p.0,
        None => machine::derive_blocking_plan(&machine.0, None).map_err(value_err)?,
    };
    let spec = LoopNestSpec::new(parse_nest(kind)?, m, n, plan, machine.0.element_bytes());
    let md = &machine.0;
    let cmp = py.detach(|| cache_sim::validate_analysis(&spec, md)).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("slow_line_reads", cmp.slow_line_reads)?;
    d.set_item("slow_line_writes", cmp.slow_line_writes)?;
    d.set_item("elements_per_line", cmp.elements_per_line)?;
    d.set_item("simulated_elements", cmp.simulated_elements)?;
    d.set_item("analytic_prediction", cmp.analytic_prediction)?;
    d.set_item("lower_bound", cmp.lower_bound)?;
    d.set_item("simulated_over_analytic", cmp.simulated_over_analytic)?;
    d.set_item("simulated_over_bound", cmp.simulated_over_bound)?;
    let operands = PyDict::new(py);
    for op in &cmp.operands {
        let od = PyDict::new(py);
        od.set_item("misses", op.misses.clone())?;
        od.set_item("slow_reads", op.slow_reads)?;
        od.set_item("slow_writes", op.slow_writes)?;
        operands.set_item(op.name, od)?;
    }
    d.set_item("operands", operands)?;
    d.set_item("stats", stats_dict(py, &cmp.stats)?)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "cablas")]
fn cablas_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMachine>()?;
    m.add_class::<PyPlan>()?;
    m.add_function(wrap_pyfunction!(dot, m)?)?;
    m.add_function(wrap_pyfunction!(gemv, m)?)?;
    m.add_function(wrap_pyfunction!(ger, m)?)?;
    m.add_function(wrap_pyfunction!(fma_max, m)?)?;
    m.add_function(wrap_pyfunction!(gemv_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(gem_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(dot_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(blocked_gemv_access_count, m)?)?;
    m.add_function(wrap_pyfunction!(blocked_dot_access_count, m)?)?;
    m.add_function(wrap_pyfunction!(speedup_bound, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_trace, m)?)?;
    m.add_function(wrap_pyfunction!(validate_analysis, m)?)?;
    Ok(())
}
