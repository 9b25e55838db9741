//! Python bindings: parameters, trees, synthetic data, tracking, metrics,
//! sparse coding and the gradient check.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ::rnntrack as core;
use core::eval::{self, BBox, SynthSpec};
use core::sparse::{AtomInfo, Dictionary};
use core::tracker::{AffineState, TrackerConfig};
use core::tree::grid_adjacency;

fn py_err(e: core::Error) -> PyErr {
    match e {
        core::Error::Io(_) | core::Error::NotFound(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

type Box4 = (f64, f64, f64, f64);

fn to_bbox(b: Box4) -> BBox {
    BBox::new(b.0, b.1, b.2, b.3)
}

/// Network parameters.
#[pyclass(name = "Theta", module = "rnntrack")]
pub struct PyTheta {
    inner: core::rnn::Theta,
}

#[pymethods]
impl PyTheta {
    /// Small random weights and zero biases for feature dimension `n`.
    #[new]
    #[pyo3(signature = (n, seed = 0))]
    fn new(n: usize, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: core::rnn::Theta::init(n, seed).map_err(py_err)? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    /// Number of weights, biases excluded.
    #[getter]
    fn weight_count(&self) -> usize {
        self.inner.weight_count()
    }

    fn flatten(&self) -> Vec<f64> {
        self.inner.flatten()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: core::rnn::Theta::load(&path).map_err(py_err)? })
    }

    fn __repr__(&self) -> String {
        format!("Theta(n={}, weights={})", self.inner.n(), self.inner.weight_count())
    }
}

/// Random merge tree over the 3×3 patch grid as `(left, right, new)` triples.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn generate_tree(seed: u64) -> PyResult<Vec<(usize, usize, usize)>> {
    let tree = core::tree::generate_tree(&grid_adjacency(), seed).map_err(py_err)?;
    Ok(tree.merges().iter().map(|m| (m.left, m.right, m.new)).collect())
}

/// Writes a synthetic sequence and returns its ground-truth boxes.
#[pyfunction]
#[pyo3(signature = (out_dir, frames = 100, seed = 0, noise = 0.15, velocity = (2, 0)))]
fn synth(out_dir: PathBuf, frames: usize, seed: u64, noise: f64, velocity: (i64, i64)) -> PyResult<Vec<Box4>> {
    let spec = SynthSpec { frames, seed, noise, velocity, ..SynthSpec::default() };
    let seq = eval::synth_sequence(&spec).map_err(py_err)?;
    eval::save_sequence(&seq, &out_dir).map_err(py_err)?;
    let gt = seq.ground_truth.unwrap_or_default();
    Ok(gt.iter().map(|b| (b.x, b.y, b.w, b.h)).collect())
}

/// Tracks a sequence directory from its first ground-truth box.
#[pyfunction]
#[pyo3(signature = (seq_dir, seed = 0, trees = 10, candidates = 600))]
fn track(py: Python<'_>, seq_dir: PathBuf, seed: u64, trees: usize, candidates: usize) -> PyResult<Vec<Box4>> {
    let seq = eval::load_sequence(&seq_dir).map_err(py_err)?;
    let gt = seq.ground_truth.as_ref().ok_or_else(|| PyIOError::new_err("ground truth not found"))?;
    let start = AffineState::from_bbox(&gt[0]).map_err(py_err)?;
    let config = TrackerConfig { seed, trees, candidates, ..TrackerConfig::default() };
    let frames = seq.frames;
    let (result, _) = py
        .detach(|| core::tracker::track_sequence(&frames, &start, &config))
        .map_err(py_err)?;
    Ok(result.boxes().iter().map(|b| (b.x, b.y, b.w, b.h)).collect())
}

/// Precision at 20 px and success AUC of `results` against `ground_truth`.
#[pyfunction]
fn metrics<'py>(py: Python<'py>, results: Vec<Box4>, ground_truth: Vec<Box4>) -> PyResult<Bound<'py, PyDict>> {
    let r: Vec<BBox> = results.into_iter().map(to_bbox).collect();
    let g: Vec<BBox> = ground_truth.into_iter().map(to_bbox).collect();
    let curves = eval::ope_curves(&r, &g).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("precision_at_20", curves.precision_at_20)?;
    d.set_item("success_auc", curves.success_auc)?;
    d.set_item("precision", curves.precision)?;
    d.set_item("success", curves.success)?;
    Ok(d)
}

#[pyfunction]
fn iou(a: Box4, b: Box4) -> f64 {
    eval::iou(&to_bbox(a), &to_bbox(b))
}

#[pyfunction]
fn center_error(a: Box4, b: Box4) -> f64 {
    eval::center_error(&to_bbox(a), &to_bbox(b))
}

/// Non-negative sparse code of `target` over the unit-normalized `atoms`.
#[pyfunction]
#[pyo3(signature = (atoms, target, lam = 0.01))]
fn lasso(atoms: Vec<Vec<f64>>, target: Vec<f64>, lam: f64) -> PyResult<(Vec<f64>, f64)> {
    let mut dict = Dictionary::new(target.len()).map_err(py_err)?;
    for (j, a) in atoms.iter().enumerate() {
        dict.push(a, AtomInfo { frame: j + 1, position: 0, seed: false }).map_err(py_err)?;
    }
    let code = core::sparse::lasso_nn(&dict, &target, lam).map_err(py_err)?;
    Ok((code.coefficients, code.reconstruction_error))
}

/// Per-block relative gradient errors, keyed by block name, plus `"max"`.
#[pyfunction]
#[pyo3(signature = (n = 10, samples = 5, seed = 0))]
fn gradcheck<'py>(py: Python<'py>, n: usize, samples: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let report = core::cli::gradient_check(n, samples, seed, 1e-5, false).map_err(py_err)?;
    let d = PyDict::new(py);
    for (name, e) in report.blocks {
        d.set_item(name, e)?;
    }
    d.set_item("max", report.max_relative_error)?;
    Ok(d)
}

#[pymodule]
fn rnntrack(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTheta>()?;
    m.add_function(wrap_pyfunction!(generate_tree, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(track, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(center_error, m)?)?;
    m.add_function(wrap_pyfunction!(lasso, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
