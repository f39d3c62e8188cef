//! Python bindings: volumes, projections, phantoms, model sizing and
//! checkpoint inference.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use projscan::harness::{self, PhantomKind, PhantomParams};
use projscan::model::ModelConfig;
use projscan::projection::{self as proj, pjsn, ChannelSelection, Plane};
use projscan::train::{self, Dataset, Sample};
use projscan::volume::{self, VolumeFormat};

fn err(e: projscan::Error) -> PyErr {
    match e {
        projscan::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// A 3D float32 volume stored x-fastest.
#[pyclass(name = "Volume", module = "projscan_py", skip_from_py_object)]
#[derive(Clone)]
struct PyVolume {
    inner: volume::Volume3D,
}

#[pymethods]
impl PyVolume {
    #[new]
    fn new(dims: [usize; 3], data: Vec<f32>) -> PyResult<Self> {
        Ok(Self {
            inner: volume::Volume3D::new(dims, data).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = volume::load_volume(&path, VolumeFormat::from_path(&path)).map_err(err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        volume::save_volume(&self.inner, &path, VolumeFormat::from_path(&path)).map_err(err)
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.inner.dims()
    }

    fn data(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn get(&self, x: usize, y: usize, z: usize) -> PyResult<f32> {
        let d = self.inner.dims();
        if x >= d[0] || y >= d[1] || z >= d[2] {
            return Err(PyValueError::new_err(format!("({x}, {y}, {z}) outside {d:?}")));
        }
        Ok(self.inner.get(x, y, z))
    }

    /// Zero-pads symmetrically to `target` dims.
    fn pad(&self, target: [usize; 3]) -> PyResult<Self> {
        let inner = volume::pad_symmetric(&self.inner, &volume::GridSpec::new(target)).map_err(err)?;
        Ok(Self { inner })
    }

    /// Projects to the requested channels, e.g. `"mean,std"`.
    #[pyo3(signature = (channels = "mean,std", subject_id = "subject"))]
    fn project(&self, channels: &str, subject_id: &str) -> PyResult<PyProjectionSet> {
        let sel = ChannelSelection::parse(channels).map_err(err)?;
        let inner = proj::build_projection_set(subject_id, &self.inner, &sel).map_err(err)?;
        Ok(PyProjectionSet { inner })
    }

    fn __repr__(&self) -> String {
        format!("Volume(dims={:?})", self.inner.dims())
    }
}

/// The projection images of one subject.
#[pyclass(name = "ProjectionSet", module = "projscan_py", skip_from_py_object)]
#[derive(Clone)]
struct PyProjectionSet {
    inner: proj::ProjectionSet,
}

#[pymethods]
impl PyProjectionSet {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: pjsn::read(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        pjsn::write(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn subject_id(&self) -> String {
        self.inner.subject_id.clone()
    }

    fn channels(&self) -> Vec<String> {
        self.inner.ids().iter().map(ToString::to_string).collect()
    }

    /// `(height, width, row-major values)` of one channel.
    fn image(&self, channel: &str) -> PyResult<(usize, usize, Vec<f32>)> {
        let id: proj::ChannelId = channel.parse().map_err(err)?;
        let img = self
            .inner
            .get(id)
            .ok_or_else(|| PyValueError::new_err(format!("no channel {channel}")))?;
        let (h, w) = img.dims();
        Ok((h, w, img.data().to_vec()))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("ProjectionSet({:?}, channels={:?})", self.inner.subject_id, self.channels())
    }
}

/// A trained checkpoint ready for inference.
#[pyclass(name = "Predictor", module = "projscan_py")]
struct PyPredictor {
    inner: train::Predictor,
}

#[pymethods]
impl PyPredictor {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: train::Predictor::load(&path).map_err(err)?,
        })
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.model.param_count()
    }

    fn channels(&self) -> Vec<String> {
        self.inner.meta.channels.clone()
    }

    /// Predicted ages, one per projection set.
    fn predict(&self, sets: Vec<PyRef<'_, PyProjectionSet>>) -> PyResult<Vec<f32>> {
        let samples = sets
            .iter()
            .map(|s| Sample {
                id: s.inner.subject_id.clone(),
                age: 0.0,
                set: s.inner.clone(),
            })
            .collect();
        let ds = Dataset::new(samples).map_err(err)?;
        self.inner.predict(&ds).map_err(err)
    }
}

/// Mean, std, skewness and excess kurtosis images along one plane, each as
/// `(height, width, values)`.
#[pyfunction]
fn moments(vol: PyRef<'_, PyVolume>, plane: &str) -> PyResult<Vec<(usize, usize, Vec<f32>)>> {
    let plane: Plane = plane.parse().map_err(err)?;
    let m = proj::project_moments(&vol.inner, plane).map_err(err)?;
    Ok([m.mean, m.std, m.skew, m.kurt]
        .into_iter()
        .map(|i| {
            let (h, w) = i.dims();
            (h, w, i.into_data())
        })
        .collect())
}

#[pyfunction]
#[pyo3(signature = (age, seed, dims = [64, 64, 52], noise = 0.03, variance_only = false))]
fn generate_phantom(age: f32, seed: u64, dims: [usize; 3], noise: f32, variance_only: bool) -> PyResult<PyVolume> {
    let params = PhantomParams {
        dims,
        noise,
        kind: if variance_only {
            PhantomKind::VarianceOnly
        } else {
            PhantomKind::Anatomical
        },
        jitter: true,
    };
    let ph = harness::generate_phantom(age, seed, &params).map_err(err)?;
    Ok(PyVolume { inner: ph.volume })
}

/// Trainable parameter count of the default architecture.
#[pyfunction]
#[pyo3(signature = (channels_per_plane = [2, 2, 2], iso = false))]
fn param_count(channels_per_plane: [usize; 3], iso: bool) -> PyResult<usize> {
    let cfg = ModelConfig {
        channels_per_plane,
        iso,
        ..ModelConfig::default()
    };
    cfg.validate().map_err(err)?;
    Ok(cfg.param_count())
}

/// `(mae, rmse)` of predictions against targets.
#[pyfunction]
fn regression_metrics(pred: Vec<f32>, target: Vec<f32>) -> PyResult<(f64, f64)> {
    let m = train::regression_metrics(&pred, &target).map_err(err)?;
    Ok((m.mae, m.rmse))
}

#[pymodule]
fn projscan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVolume>()?;
    m.add_class::<PyProjectionSet>()?;
    m.add_class::<PyPredictor>()?;
    m.add_function(wrap_pyfunction!(moments, m)?)?;
    m.add_function(wrap_pyfunction!(generate_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(param_count, m)?)?;
    m.add_function(wrap_pyfunction!(regression_metrics, m)?)?;
    Ok(())
}
