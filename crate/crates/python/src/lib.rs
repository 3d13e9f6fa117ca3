//! Python bindings for `lvic`.
//!
//! Point data crosses the boundary as flat lists of floats, row-major.

use std::path::PathBuf;

use nalgebra::{Matrix3, Vector3};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use lvic::synth::{self, NoiseLevel, SceneConfig};
use lvic::{io, PaintLayout, PaintOptions};

create_exception!(pylvic, LvicError, PyException);

fn err(e: lvic::LvicError) -> PyErr {
    LvicError::new_err(e.to_string())
}

fn vec3(v: [f64; 3]) -> Vector3<f64> {
    Vector3::from(v)
}

#[pyclass(name = "Se3Transform", module = "pylvic", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySe3 {
    inner: lvic::Se3Transform,
}

#[pymethods]
impl PySe3 {
    /// `rotation` is a row-major 3x3 matrix, `translation` a 3-vector.
    #[new]
    fn new(rotation: [f64; 9], translation: [f64; 3]) -> PyResult<Self> {
        let inner = lvic::Se3Transform::new(Matrix3::from_row_slice(&rotation), vec3(translation))
            .map_err(err)?;
        Ok(PySe3 { inner })
    }

    #[staticmethod]
    fn identity() -> Self {
        PySe3 {
            inner: lvic::Se3Transform::identity(),
        }
    }

    #[getter]
    fn rotation(&self) -> Vec<f64> {
        self.inner.rotation().transpose().iter().copied().collect()
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        let t = self.inner.translation();
        [t.x, t.y, t.z]
    }

    fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.inner.transform_point(&vec3(p));
        [q.x, q.y, q.z]
    }

    fn inverse(&self) -> Self {
        PySe3 {
            inner: self.inner.inverse(),
        }
    }

    /// `self ∘ other`: apply `other` first.
    fn compose(&self, other: &PySe3) -> Self {
        PySe3 {
            inner: self.inner.compose(&other.inner),
        }
    }

    #[pyo3(signature = (rot_deg, trans_m, seed))]
    fn perturbed(&self, rot_deg: f64, trans_m: f64, seed: u64) -> PyResult<Self> {
        if !(rot_deg >= 0.0 && trans_m >= 0.0) {
            return Err(PyValueError::new_err("noise magnitudes must be non-negative"));
        }
        Ok(PySe3 {
            inner: synth::perturb_extrinsics(&self.inner, rot_deg, trans_m, seed),
        })
    }
}

#[pyclass(name = "CameraIntrinsics", module = "pylvic", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyIntrinsics {
    inner: lvic::CameraIntrinsics,
}

#[pymethods]
impl PyIntrinsics {
    #[new]
    fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> PyResult<Self> {
        let inner = lvic::CameraIntrinsics::new(fx, fy, cx, cy, width, height).map_err(err)?;
        Ok(PyIntrinsics { inner })
    }

    /// Pixel `(u, v)` of a camera-frame point, or `None` behind the camera.
    fn project(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        lvic::project(&self.inner, &vec3(p)).pixel().map(|px| (px.u, px.v))
    }

    fn back_project(&self, u: f64, v: f64, depth: f64) -> [f64; 3] {
        let p = lvic::back_project(&self.inner, lvic::PixelCoord { u, v }, depth);
        [p.x, p.y, p.z]
    }

    fn in_bounds(&self, u: f64, v: f64) -> bool {
        lvic::in_bounds(u, v, &self.inner)
    }

    #[getter]
    fn size(&self) -> (u32, u32) {
        (self.inner.width, self.inner.height)
    }
}

#[pyclass(name = "CameraRig", module = "pylvic", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyRig {
    inner: lvic::CameraRig,
}

#[pymethods]
impl PyRig {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyRig {
            inner: io::parse_calibration(text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyRig {
            inner: io::read_calibration(&path).map_err(err)?,
        })
    }

    fn to_json(&self) -> String {
        io::render_calibration(&self.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn intrinsics(&self, id: usize) -> PyResult<PyIntrinsics> {
        self.camera(id).map(|c| PyIntrinsics {
            inner: c.intrinsics,
        })
    }

    fn extrinsics(&self, id: usize) -> PyResult<PySe3> {
        self.camera(id).map(|c| PySe3 {
            inner: c.extrinsics,
        })
    }
}

impl PyRig {
    fn camera(&self, id: usize) -> PyResult<&lvic::Camera> {
        self.inner
            .cameras()
            .get(id)
            .ok_or_else(|| PyIndexError::new_err(format!("no camera {id}")))
    }
}

#[pyclass(name = "PaintedCloud", module = "pylvic", frozen)]
struct PyPainted {
    inner: lvic::PaintedCloud,
}

#[pymethods]
impl PyPainted {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyPainted {
            inner: io::read_painted(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::write_painted(&path, &self.inner).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `(n, c + 3 + 1 + d)`.
    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.len(), self.inner.row_width())
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    #[getter]
    fn texture_dim(&self) -> usize {
        self.inner.layout().texture_dim
    }

    #[getter]
    fn painted_count(&self) -> usize {
        self.inner.painted_count()
    }

    fn row(&self, i: usize) -> PyResult<Vec<f32>> {
        if i >= self.inner.len() {
            return Err(PyIndexError::new_err(format!("row {i} out of range")));
        }
        Ok(self.inner.row(i).to_vec())
    }

    fn values(&self) -> Vec<f32> {
        self.inner.values().to_vec()
    }

    /// Source camera per point, -1 where unpainted.
    fn camera_ids(&self) -> Vec<i32> {
        self.inner.camera_ids().to_vec()
    }
}

#[pyclass(name = "SynthScene", module = "pylvic", frozen)]
struct PyScene {
    inner: synth::SynthScene,
    layout: PaintLayout,
}

#[pymethods]
impl PyScene {
    #[new]
    #[pyo3(signature = (seed=1, n_points=50_000, n_cameras=6, width=1600, height=900, feature_dim=16, stride=4))]
    fn new(
        seed: u64,
        n_points: usize,
        n_cameras: usize,
        width: u32,
        height: u32,
        feature_dim: usize,
        stride: usize,
    ) -> PyResult<Self> {
        let cfg = SceneConfig {
            seed,
            n_points,
            n_cameras,
            width,
            height,
            feature_dim,
            stride,
            ..SceneConfig::default()
        };
        Ok(PyScene {
            inner: synth::generate_scene(&cfg).map_err(err)?,
            layout: cfg.layout(),
        })
    }

    #[getter]
    fn n_points(&self) -> usize {
        self.inner.cloud.len()
    }

    /// Flat `n × 4` list: x, y, z, intensity.
    fn cloud(&self) -> Vec<f32> {
        self.inner.cloud.values().to_vec()
    }

    #[getter]
    fn rig(&self) -> PyRig {
        PyRig {
            inner: self.inner.rig.clone(),
        }
    }

    /// Depth map of one camera as `(width, height, values)`.
    fn depth(&self, camera: usize) -> PyResult<(usize, usize, Vec<f32>)> {
        let d = self
            .inner
            .depths
            .get(camera)
            .ok_or_else(|| PyIndexError::new_err(format!("no camera {camera}")))?;
        Ok((d.width(), d.height(), d.values().to_vec()))
    }

    /// Paints the cloud, optionally through a different rig.
    #[pyo3(signature = (rig=None, threads=None))]
    fn paint(&self, py: Python<'_>, rig: Option<&PyRig>, threads: Option<usize>) -> PyResult<PyPainted> {
        let rig = rig.map_or(&self.inner.rig, |r| &r.inner);
        let s = &self.inner;
        let layout = self.layout;
        let inner = py
            .detach(|| {
                lvic::paint_cloud(&s.cloud, rig, &s.depths, &s.features, layout, PaintOptions { threads })
            })
            .map_err(err)?;
        Ok(PyPainted { inner })
    }

    fn write(&self, dir: PathBuf) -> PyResult<()> {
        synth::write_scene(&self.inner, &dir).map_err(err)
    }
}

#[pyclass(name = "FusionParams", module = "pylvic", frozen)]
struct PyFusion {
    inner: lvic::FusionParams,
}

#[pymethods]
impl PyFusion {
    #[new]
    #[pyo3(signature = (texture_dim=16, embed_dim=16, seed=0))]
    fn new(texture_dim: usize, embed_dim: usize, seed: u64) -> PyResult<Self> {
        if texture_dim == 0 || embed_dim == 0 {
            return Err(PyValueError::new_err("dimensions must be positive"));
        }
        Ok(PyFusion {
            inner: lvic::FusionParams::init(texture_dim, embed_dim, seed),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyFusion {
            inner: io::read_weights(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::write_weights(&path, &self.inner).map_err(err)
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    /// Embeds one painted row.
    fn forward(&self, row: Vec<f64>) -> PyResult<Vec<f64>> {
        let layout = PaintLayout::new(self.inner.texture_dim);
        lvic::fusion_forward(&self.inner, &row, layout).map_err(err)
    }

    /// Flat `n × e` embeddings of a painted cloud.
    fn embed(&self, py: Python<'_>, painted: &PyPainted) -> PyResult<Vec<f32>> {
        py.detach(|| self.inner.embed_cloud(&painted.inner)).map_err(err)
    }
}

/// Runs the calibration-noise experiment and returns one dict per level.
#[pyfunction]
#[pyo3(signature = (seed=1, n_points=50_000, width=1600, height=900, rot_deg=vec![0.0, 0.5, 1.0, 2.0], threshold=0.5))]
fn miscalibration_experiment<'py>(
    py: Python<'py>,
    seed: u64,
    n_points: usize,
    width: u32,
    height: u32,
    rot_deg: Vec<f64>,
    threshold: f64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = SceneConfig {
        seed,
        n_points,
        width,
        height,
        noise: rot_deg.into_iter().map(NoiseLevel::rotation).collect(),
        threshold,
        ..SceneConfig::default()
    };
    let report = py
        .detach(|| synth::miscalibration_experiment(&cfg))
        .map_err(err)?;
    report
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("noise_rot_deg", r.noise_rot_deg)?;
            d.set_item("noise_trans_m", r.noise_trans_m)?;
            d.set_item("mean_abs_dz", r.mean_abs_dz)?;
            d.set_item("exceed_frac", r.exceed_frac)?;
            d.set_item("painted_frac", r.painted_frac)?;
            Ok(d)
        })
        .collect()
}

/// Decodes any headered artifact and returns `(kind, {dim: value})`.
#[pyfunction]
fn validate_file<'py>(py: Python<'py>, path: PathBuf) -> PyResult<(String, Bound<'py, PyDict>)> {
    let bytes = io::read_bytes(&path, io::IoLimits::default()).map_err(err)?;
    let summary = io::validate_bytes(&bytes, io::IoLimits::default()).map_err(err)?;
    let dims = PyDict::new(py);
    for (k, v) in summary.dims {
        dims.set_item(k, v)?;
    }
    Ok((summary.kind.to_string(), dims))
}

#[pymodule]
fn pylvic(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LvicError", m.py().get_type::<LvicError>())?;
    m.add_class::<PySe3>()?;
    m.add_class::<PyIntrinsics>()?;
    m.add_class::<PyRig>()?;
    m.add_class::<PyPainted>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyFusion>()?;
    m.add_function(wrap_pyfunction!(miscalibration_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(validate_file, m)?)?;
    Ok(())
}
