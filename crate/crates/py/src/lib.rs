//! Python bindings: buildability checks, breakable sets, scenario runs and
//! the protocol codec.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use crtc_core::protocol;
use crtc_core::semantics::{breakable_set, build_reference_graph, ElementKind, ElementTable, IdAllocator};
use crtc_core::sim::{self, Trace};
use crtc_core::toylang::{analyze, line_col, SourceText};

fn sources(files: BTreeMap<String, String>) -> Vec<SourceText> {
    files.into_iter().map(|(n, t)| SourceText::new(n, t)).collect()
}

/// Maps each file to its diagnostics as `(code, line, column, message)`.
/// Files without diagnostics map to an empty list.
#[pyfunction]
fn check(files: BTreeMap<String, String>) -> BTreeMap<String, Vec<(String, usize, usize, String)>> {
    let files = sources(files);
    let analysis = analyze(&files);
    files
        .iter()
        .map(|f| {
            let diags = analysis.diagnostics.get(&f.file_name).map(Vec::as_slice).unwrap_or_default();
            let rows = diags
                .iter()
                .map(|d| {
                    let (line, col) = line_col(&f.content, d.span.start);
                    (d.code.as_str().to_string(), line, col, d.message.clone())
                })
                .collect();
            (f.file_name.clone(), rows)
        })
        .collect()
}

/// Breakable set of every member, as sorted element paths.
#[pyfunction]
fn deps(files: BTreeMap<String, String>) -> PyResult<BTreeMap<String, Vec<String>>> {
    let analysis = analyze(&sources(files));
    if !analysis.is_buildable() {
        return Err(PyValueError::new_err("corpus is not buildable"));
    }
    let table = ElementTable::initial(&analysis.asts, &mut IdAllocator::default());
    let graph = build_reference_graph(&table, &analysis.bindings);
    Ok(table
        .entries()
        .filter(|e| e.kind != ElementKind::Class)
        .map(|e| {
            let set = breakable_set(&graph, e.id).map(|b| b.members).unwrap_or_default();
            let mut users: Vec<String> = set.iter().filter_map(|m| table.get(*m)).map(|m| m.path.to_string()).collect();
            users.sort();
            (e.path.to_string(), users)
        })
        .collect())
}

#[pyclass(frozen, get_all)]
struct SimResult {
    /// Every assertion in the scenario held.
    passed: bool,
    failures: Vec<String>,
    /// Invariant and convergence violations found in the trace.
    violations: Vec<String>,
    commits: usize,
    denials: usize,
    trace: String,
}

#[pymethods]
impl SimResult {
    fn __repr__(&self) -> String {
        format!(
            "SimResult(passed={}, failures={}, violations={}, commits={}, denials={})",
            if self.passed { "True" } else { "False" },
            self.failures.len(),
            self.violations.len(),
            self.commits,
            self.denials
        )
    }
}

impl From<Trace> for SimResult {
    fn from(trace: Trace) -> Self {
        let mut violations: Vec<String> = sim::check_invariants(&trace).iter().map(ToString::to_string).collect();
        violations.extend(sim::check_convergence(&trace).iter().map(ToString::to_string));
        SimResult {
            passed: trace.passed(),
            failures: trace.failures().iter().map(ToString::to_string).collect(),
            violations,
            commits: trace.count(|e| matches!(e, sim::TraceEvent::Commit { .. })),
            denials: trace.count(|e| matches!(e, sim::TraceEvent::Denied { .. })),
            trace: trace.to_text(),
        }
    }
}

/// Runs a scenario written in the scenario language.
#[pyfunction]
#[pyo3(signature = (source, seed = 0))]
fn run_scenario(source: &str, seed: u64) -> PyResult<SimResult> {
    let scenario = sim::parse_scenario(source).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let trace = sim::run(&scenario, seed).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(trace.into())
}

/// Generates a random scenario and returns its source text.
#[pyfunction]
#[pyo3(signature = (seed, clients = 2, steps = 50))]
fn random_scenario(seed: u64, clients: usize, steps: usize) -> String {
    sim::generate_random_scenario(seed, clients, steps).to_dsl()
}

/// Decodes one wire line and encodes it again in canonical form.
#[pyfunction]
fn canonicalize(line: &str) -> PyResult<String> {
    let msg = protocol::decode(line.as_bytes()).map_err(|e| PyValueError::new_err(e.to_string()))?;
    protocol::encode(&msg).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn crtc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(check, m)?)?;
    m.add_function(wrap_pyfunction!(deps, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(random_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(canonicalize, m)?)?;
    m.add_class::<SimResult>()?;
    Ok(())
}
