//! Python bindings: volumes, phantoms, graph extraction, patch generation,
//! batch runs and texture metrics. Structured results come back as dicts.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use vamoforge::pipeline::batch::{load_sources, run_batch as core_run_batch};
use vamoforge::pipeline::phantom::{make_phantom, PhantomKind};
use vamoforge::pipeline::{generate_patch as core_generate_patch, GenConfig, Source};
use vamoforge::{DType, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_dtype(name: &str) -> PyResult<DType> {
    DType::parse(name).ok_or_else(|| PyValueError::new_err(format!("unknown dtype {name:?}")))
}

/// A 3D volume stored x-fastest: reshape `tolist()` to `(nz, ny, nx)`.
#[pyclass(name = "Volume", module = "vamoforge_py")]
pub struct PyVolume {
    inner: vamoforge::Volume,
}

impl From<vamoforge::Volume> for PyVolume {
    fn from(inner: vamoforge::Volume) -> Self {
        Self { inner }
    }
}

#[pymethods]
impl PyVolume {
    #[new]
    #[pyo3(signature = (data, dims, spacing = [1.0; 3], dtype = "float32"))]
    fn new(data: Vec<f32>, dims: [usize; 3], spacing: [f64; 3], dtype: &str) -> PyResult<Self> {
        vamoforge::Volume::new(dims, spacing, parse_dtype(dtype)?, data).map(Self::from).map_err(py_err)
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        vamoforge::vvol::read_vvol(path).map(Self::from).map_err(py_err)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        vamoforge::vvol::write_vvol(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.inner.dims()
    }

    #[getter]
    fn spacing(&self) -> [f64; 3] {
        self.inner.spacing()
    }

    #[getter]
    fn dtype(&self) -> &'static str {
        self.inner.dtype().name()
    }

    fn tolist(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn get(&self, x: usize, y: usize, z: usize) -> PyResult<f32> {
        let [nx, ny, nz] = self.inner.dims();
        if x >= nx || y >= ny || z >= nz {
            return Err(PyValueError::new_err(format!("({x}, {y}, {z}) outside {:?}", self.inner.dims())));
        }
        Ok(self.inner.get(x, y, z))
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn std(&self) -> f64 {
        self.inner.std()
    }

    fn count_nonzero(&self) -> usize {
        self.inner.count_nonzero()
    }

    fn crop(&self, origin: [usize; 3], size: [usize; 3]) -> PyResult<Self> {
        vamoforge::crop(&self.inner, &vamoforge::PatchRegion::new(origin, size)).map(Self::from).map_err(py_err)
    }

    fn gaussian(&self, sigma: f64) -> PyResult<Self> {
        vamoforge::gaussian_filter_3d(&self.inner, sigma).map(Self::from).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Volume(dims={:?}, dtype={})", self.inner.dims(), self.inner.dtype().name())
    }
}

/// Builds a phantom from a JSON description such as
/// `{"kind": "y", "theta_deg": 90}`; returns `(tof, mask, bifurcations)`.
#[pyfunction]
#[pyo3(signature = (kind_json, seed = 0))]
fn phantom<'py>(py: Python<'py>, kind_json: &str, seed: u64) -> PyResult<(PyVolume, PyVolume, Bound<'py, PyAny>)> {
    let kind: PhantomKind = serde_json::from_str(kind_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let p = make_phantom(&kind, seed).map_err(py_err)?;
    let bifs: Vec<_> = p
        .bifurcations
        .iter()
        .map(|b| {
            serde_json::json!({
                "label": b.label, "pos": b.pos, "d1": b.d1, "d2": b.d2, "radii": b.radii, "theta": b.theta,
            })
        })
        .collect();
    Ok((p.tof.into(), p.mask.into(), to_py(py, &bifs)?))
}

/// Centerline graph of a binary mask, as a dict.
#[pyfunction]
fn extract_graph<'py>(py: Python<'py>, mask: &PyVolume) -> PyResult<Bound<'py, PyAny>> {
    let g = vamoforge::graph::extract_graph(&mask.inner).map_err(py_err)?;
    to_py(py, &g)
}

fn load_cfg(config_json: Option<&str>) -> PyResult<GenConfig> {
    match config_json {
        None => Ok(GenConfig::default()),
        Some(text) => GenConfig::from_json(text).map_err(py_err),
    }
}

/// One synthetic patch around a bifurcation of `(tof, mask)`; returns
/// `(intensity, vessel_mask, ica_mask, meta)`.
#[pyfunction]
#[pyo3(signature = (tof, mask, seed, config_json = None, node = None, label = "source"))]
fn generate_patch<'py>(
    py: Python<'py>,
    tof: &PyVolume,
    mask: &PyVolume,
    seed: u64,
    config_json: Option<&str>,
    node: Option<usize>,
    label: &str,
) -> PyResult<(PyVolume, PyVolume, PyVolume, Bound<'py, PyAny>)> {
    let cfg = load_cfg(config_json)?;
    let source = Source::new(label, label, tof.inner.clone(), mask.inner.clone(), node).map_err(py_err)?;
    let p = core_generate_patch(&source, &cfg, seed).map_err(py_err)?;
    let meta = to_py(py, &p.meta)?;
    Ok((p.intensity.into(), p.vessel_mask.into(), p.ica_mask.into(), meta))
}

/// Runs a batch and returns `(manifest, failures)`. Files are written only
/// when `out` is given.
#[pyfunction]
#[pyo3(signature = (config_json = None, out = None, seed = None, workers = 1))]
fn run_batch<'py>(
    py: Python<'py>,
    config_json: Option<&str>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    workers: usize,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let mut cfg = load_cfg(config_json)?;
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    let sources = load_sources(&cfg.sources).map_err(py_err)?;
    let outcome = core_run_batch(&sources, &cfg, workers, out.as_deref()).map_err(py_err)?;
    Ok((to_py(py, &outcome.manifest)?, to_py(py, &outcome.failures)?))
}

/// Haralick features, variance of Laplacian and Tenengrad of a volume.
#[pyfunction]
#[pyo3(signature = (volume, levels = 32, distance = 1))]
fn texture_report<'py>(py: Python<'py>, volume: &PyVolume, levels: usize, distance: usize) -> PyResult<Bound<'py, PyAny>> {
    let r = vamoforge::texture::texture_report(&volume.inner, levels, distance).map_err(py_err)?;
    to_py(py, &r)
}

#[pymodule]
fn vamoforge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVolume>()?;
    m.add_function(wrap_pyfunction!(phantom, m)?)?;
    m.add_function(wrap_pyfunction!(extract_graph, m)?)?;
    m.add_function(wrap_pyfunction!(generate_patch, m)?)?;
    m.add_function(wrap_pyfunction!(run_batch, m)?)?;
    m.add_function(wrap_pyfunction!(texture_report, m)?)?;
    Ok(())
}
