//! Python bindings over the `handid` pipeline. Results cross the boundary
//! as plain dicts and lists.

use std::path::PathBuf;

use handid::config::{ExperimentConfig, Overrides};
use handid::evaluation::{cmc_curve, mean_average_precision, rank_gallery};
use handid::pipeline::{cmd_evaluate, cmd_prepare, cmd_train, cmd_visualize, TrainOptions};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: handid::Error) -> PyErr {
    if e.is_input_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn json<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (value.to_string(),))
}

fn load(config: PathBuf, output_dir: Option<PathBuf>, epochs: Option<usize>) -> PyResult<ExperimentConfig> {
    let overrides = Overrides { output_dir, epochs, ..Default::default() };
    Ok(ExperimentConfig::load(&config).map_err(to_py)?.resolve(&overrides))
}

/// Resolved config as a dict, with its hash under `"config_hash"`.
#[pyfunction]
#[pyo3(signature = (config, output_dir=None))]
fn resolve_config(py: Python<'_>, config: PathBuf, output_dir: Option<PathBuf>) -> PyResult<Bound<'_, PyAny>> {
    let cfg = load(config, output_dir, None)?;
    let mut value: serde_json::Value =
        serde_json::from_str(&cfg.to_json()).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    value["config_hash"] = cfg.hash().into();
    json(py, &value)
}

#[pyfunction]
#[pyo3(signature = (config, output_dir=None, overwrite=false))]
fn prepare(
    py: Python<'_>,
    config: PathBuf,
    output_dir: Option<PathBuf>,
    overwrite: bool,
) -> PyResult<Bound<'_, PyAny>> {
    let cfg = load(config, output_dir, None)?;
    let summary = py.detach(|| cmd_prepare(&cfg, overwrite)).map_err(to_py)?;
    json(py, &serde_json::to_value(summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))?)
}

/// Trains and returns the per-epoch metrics.
#[pyfunction]
#[pyo3(signature = (config, output_dir=None, epochs=None, resume=false, overwrite=false))]
fn train(
    py: Python<'_>,
    config: PathBuf,
    output_dir: Option<PathBuf>,
    epochs: Option<usize>,
    resume: bool,
    overwrite: bool,
) -> PyResult<Bound<'_, PyAny>> {
    let cfg = load(config, output_dir, epochs)?;
    let report = py.detach(|| cmd_train(&cfg, TrainOptions { overwrite, resume })).map_err(to_py)?;
    json(py, &serde_json::to_value(&report.history).map_err(|e| PyRuntimeError::new_err(e.to_string()))?)
}

#[pyfunction]
#[pyo3(signature = (config, checkpoint=None, output_dir=None, overwrite=false))]
fn evaluate(
    py: Python<'_>,
    config: PathBuf,
    checkpoint: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    overwrite: bool,
) -> PyResult<Bound<'_, PyAny>> {
    let cfg = load(config, output_dir, None)?;
    let out = py.detach(|| cmd_evaluate(&cfg, checkpoint.as_deref(), overwrite)).map_err(to_py)?;
    let mut value = serde_json::to_value(&out.result).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    value["report"] = out.report.into();
    value["report_path"] = out.report_path.display().to_string().into();
    json(py, &value)
}

/// Writes a ranked grid and returns its path.
#[pyfunction]
#[pyo3(signature = (config, checkpoint=None, n_queries=5, top_n=10, split=0, output_dir=None, overwrite=false))]
#[allow(clippy::too_many_arguments)]
fn visualize(
    py: Python<'_>,
    config: PathBuf,
    checkpoint: Option<PathBuf>,
    n_queries: usize,
    top_n: usize,
    split: usize,
    output_dir: Option<PathBuf>,
    overwrite: bool,
) -> PyResult<PathBuf> {
    let cfg = load(config, output_dir, None)?;
    let out =
        py.detach(|| cmd_visualize(&cfg, checkpoint.as_deref(), n_queries, top_n, split, overwrite)).map_err(to_py)?;
    Ok(out.path)
}

/// CMC curve and mAP for precomputed features under cosine distance.
#[pyfunction]
#[pyo3(signature = (queries, gallery, query_labels, gallery_labels, distractor=None, k_max=20))]
fn rank_metrics(
    queries: Vec<Vec<f32>>,
    gallery: Vec<Vec<f32>>,
    query_labels: Vec<String>,
    gallery_labels: Vec<String>,
    distractor: Option<Vec<bool>>,
    k_max: usize,
) -> PyResult<(Vec<f64>, f64)> {
    let distractor = distractor.unwrap_or_else(|| vec![false; gallery.len()]);
    let ranking = rank_gallery(&queries, &gallery, query_labels, gallery_labels, distractor).map_err(to_py)?;
    let cmc = cmc_curve(&ranking, k_max).map_err(to_py)?;
    let map = mean_average_precision(&ranking).map_err(to_py)?;
    Ok((cmc, map))
}

#[pymodule]
fn handid_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(resolve_config, m)?)?;
    m.add_function(wrap_pyfunction!(prepare, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(visualize, m)?)?;
    m.add_function(wrap_pyfunction!(rank_metrics, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
