//! Python bindings: the CLI commands as functions returning plain Python data.

use std::path::{Path, PathBuf};

use ddunet::cli::{self, Checkpoint, ConfigArgs, RunConfig, Split, SplitEval};
use ddunet::data::load_nifti;
use ddunet::error::Error;
use ddunet::gradsuite;
use ddunet::objectives::metric_columns;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::NonFinite(_) | Error::Tape(_) => PyArithmeticError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn env() -> Vec<(String, String)> {
    std::env::vars().collect()
}

fn resolve(config: Option<PathBuf>, overrides: Vec<String>) -> PyResult<RunConfig> {
    let cfg = cli::resolve_config(&ConfigArgs { config, set: overrides }, env()).map_err(to_py)?;
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

fn split_dict<'py>(py: Python<'py>, split: Split, ev: &SplitEval) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("split", split.name())?;
    d.set_item("loss", ev.loss)?;
    d.set_item("subjects", ev.scores.volumes)?;
    for (name, v) in metric_columns().iter().zip(&ev.scores.values) {
        d.set_item(name, *v)?;
    }
    Ok(d)
}

/// Resolved configuration text: defaults, then the file, `DDUNET_*`
/// environment variables and `key=value` overrides.
#[pyfunction]
#[pyo3(signature = (config=None, overrides=vec![]))]
fn resolve_config(config: Option<PathBuf>, overrides: Vec<String>) -> PyResult<String> {
    Ok(resolve(config, overrides)?.render())
}

/// Resolved config followed by the layer table.
#[pyfunction]
#[pyo3(signature = (config=None, overrides=vec![]))]
fn info(config: Option<PathBuf>, overrides: Vec<String>) -> PyResult<String> {
    cli::cmd_info(&resolve(config, overrides)?).map_err(to_py)
}

/// Writes phantom subjects; returns the subject directories.
#[pyfunction]
#[pyo3(signature = (out, seed=0, size=32, count=4, gzip=true))]
fn synth(out: PathBuf, seed: u64, size: usize, count: usize, gzip: bool) -> PyResult<Vec<PathBuf>> {
    cli::cmd_synth(&out, seed, size, count, gzip).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (config=None, overrides=vec![], verbose=false))]
fn train<'py>(py: Python<'py>, config: Option<PathBuf>, overrides: Vec<String>, verbose: bool) -> PyResult<Bound<'py, PyDict>> {
    let cfg = resolve(config, overrides)?;
    let out = cli::train(&cfg, |line| {
        if verbose {
            println!("{line}");
        }
    })
    .map_err(to_py)?;
    let epochs = PyList::empty(py);
    for e in &out.epochs {
        let d = PyDict::new(py);
        d.set_item("epoch", e.epoch)?;
        d.set_item("train_loss", e.train_loss)?;
        d.set_item("lr", e.lr)?;
        let evals = PyList::empty(py);
        for (s, ev) in &e.evals {
            evals.append(split_dict(py, *s, ev)?)?;
        }
        d.set_item("evals", evals)?;
        epochs.append(d)?;
    }
    let d = PyDict::new(py);
    d.set_item("run_dir", &out.run_dir)?;
    d.set_item("steps", out.steps)?;
    d.set_item("best_epoch", out.best_epoch)?;
    d.set_item("epochs", epochs)?;
    Ok(d)
}

/// One dict per evaluated split; `split` is train, test or all.
#[pyfunction]
#[pyo3(signature = (checkpoint, split="test", overrides=vec![], out=None))]
fn evaluate<'py>(
    py: Python<'py>,
    checkpoint: PathBuf,
    split: &str,
    overrides: Vec<String>,
    out: Option<PathBuf>,
) -> PyResult<Bound<'py, PyList>> {
    let rows = cli::cmd_evaluate(&checkpoint, split, &overrides, out.as_deref()).map_err(to_py)?;
    let list = PyList::empty(py);
    for (s, ev) in &rows {
        list.append(split_dict(py, *s, ev)?)?;
    }
    Ok(list)
}

#[pyfunction]
#[pyo3(signature = (checkpoint, subject, out, attention=false, overrides=vec![]))]
fn predict<'py>(
    py: Python<'py>,
    checkpoint: PathBuf,
    subject: PathBuf,
    out: PathBuf,
    attention: bool,
    overrides: Vec<String>,
) -> PyResult<Bound<'py, PyDict>> {
    let r = cli::cmd_predict(&checkpoint, &subject, &out, attention, &overrides).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("labels", &r.labels)?;
    d.set_item("attention", &r.attention)?;
    d.set_item("notice", r.notice)?;
    Ok(d)
}

/// Per-scope results of the finite-difference suite.
#[pyfunction]
#[pyo3(signature = (scope="all", instances=gradsuite::DEFAULT_INSTANCES))]
fn gradcheck<'py>(py: Python<'py>, scope: &str, instances: usize) -> PyResult<Bound<'py, PyList>> {
    let reports = gradsuite::run(scope, instances).map_err(to_py)?;
    let list = PyList::empty(py);
    for r in &reports {
        let d = PyDict::new(py);
        d.set_item("scope", r.scope)?;
        d.set_item("passed", r.passed())?;
        d.set_item("max_rel_error", r.max_rel_error())?;
        d.set_item("skipped_seeds", &r.skipped_seeds)?;
        let failing: Vec<&str> = r.checks.iter().filter(|c| !c.report.passed).map(|c| c.target.as_str()).collect();
        d.set_item("failing_targets", failing)?;
        list.append(d)?;
    }
    Ok(list)
}

/// `{"config": str, "params": {name: (shape, values)}, "optimizer_step": int | None}`.
#[pyfunction]
fn load_checkpoint<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let ck = Checkpoint::<f32>::load(&path).map_err(to_py)?;
    let params = PyDict::new(py);
    for (name, t) in ck.params.iter() {
        params.set_item(name, (t.shape().to_vec(), t.data().to_vec()))?;
    }
    let d = PyDict::new(py);
    d.set_item("config", ck.config)?;
    d.set_item("params", params)?;
    d.set_item("optimizer_step", ck.optimizer.map(|o| o.step))?;
    Ok(d)
}

/// `(dims, values)` with values x-fastest, as stored in the file.
#[pyfunction]
fn read_nifti(path: PathBuf) -> PyResult<(Vec<usize>, Vec<f32>)> {
    let v = load_nifti(Path::new(&path)).map_err(to_py)?;
    Ok((v.dims, v.data))
}

#[pymodule]
fn pyddunet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(resolve_config, m)?)?;
    m.add_function(wrap_pyfunction!(info, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(load_checkpoint, m)?)?;
    m.add_function(wrap_pyfunction!(read_nifti, m)?)?;
    m.add("METRIC_COLUMNS", metric_columns())?;
    Ok(())
}
