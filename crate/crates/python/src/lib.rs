//! Python bindings for images, segmented approximations and the matchers.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use segncc::{MatchError, MatchRecord, SearchParams, SearchStats};

fn to_py_err(e: MatchError) -> PyErr {
    match e {
        MatchError::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn records(matches: Vec<MatchRecord>) -> Vec<(usize, usize, f64)> {
    matches.into_iter().map(|m| (m.u, m.v, m.rho)).collect()
}

/// 8-bit grayscale image, row-major.
#[pyclass(name = "GrayImage", module = "segncc_py", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyGrayImage {
    inner: segncc::GrayImage,
}

#[pymethods]
impl PyGrayImage {
    #[new]
    fn new(width: usize, height: usize, pixels: Vec<u8>) -> PyResult<Self> {
        let inner = segncc::GrayImage::new(width, height, pixels).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn filled(width: usize, height: usize, value: u8) -> PyResult<Self> {
        let inner = segncc::GrayImage::filled(width, height, value).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    /// Loads a binary PGM or a PNG, converting color to luma.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = segncc::load_image(&path).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    /// Seeded synthetic image; `kind` is one of `block-mosaic`, `gradient`, `uniform-noise`.
    #[staticmethod]
    #[pyo3(signature = (width, height, kind="block-mosaic", block_size=8, seed=0))]
    fn synthetic(width: usize, height: usize, kind: &str, block_size: usize, seed: u64) -> PyResult<Self> {
        let kind = kind.parse().map_err(to_py_err)?;
        let spec = segncc::SyntheticSpec {
            width,
            height,
            kind,
            block_size,
            seed,
        };
        let inner = segncc::generate_synthetic(&spec).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    /// Writes `.pgm` or `.png` depending on the extension.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        segncc::save_image(&self.inner, &path).map_err(to_py_err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    fn pixels<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.pixels())
    }

    fn get(&self, x: usize, y: usize) -> PyResult<u8> {
        self.inner.check_rect(x, y, 1, 1).map_err(to_py_err)?;
        Ok(self.inner.get(x, y))
    }

    fn extract(&self, x: usize, y: usize, w: usize, h: usize) -> PyResult<Self> {
        let inner = self.inner.extract(x, y, w, h).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    /// Copy of this image with `template` pasted at `(u, v)`.
    fn plant(&self, template: &PyGrayImage, u: usize, v: usize) -> PyResult<Self> {
        let inner = segncc::plant_template(&self.inner, &template.inner, u, v).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    /// `(mean, population std)`.
    fn mean_std(&self) -> (f64, f64) {
        self.inner.mean_std()
    }

    fn __eq__(&self, other: &PyGrayImage) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("GrayImage({}x{})", self.inner.width(), self.inner.height())
    }
}

/// Piecewise-constant approximation of a template.
#[pyclass(name = "SegmentedTemplate", module = "segncc_py", frozen)]
pub struct PySegmentedTemplate {
    inner: segncc::SegmentedTemplate,
}

#[pymethods]
impl PySegmentedTemplate {
    /// Splits and merges `template` until every segment's std is below
    /// `sigma_max`, relaxing the threshold while more than `k_max` remain.
    #[new]
    #[pyo3(signature = (template, sigma_max, k_max=5000))]
    fn new(template: &PyGrayImage, sigma_max: f64, k_max: usize) -> PyResult<Self> {
        let inner = segncc::precompute_template_approximation(&template.inner, sigma_max, k_max).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    /// Segments as `(x, y, w, h, mu)` tuples.
    fn segments(&self) -> Vec<(usize, usize, usize, usize, f64)> {
        self.inner.segments().iter().map(|s| (s.x, s.y, s.w, s.h, s.mu)).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn k_bar(&self) -> f64 {
        self.inner.k_bar()
    }

    #[getter]
    fn rho_self(&self) -> f64 {
        self.inner.rho_self()
    }

    #[getter]
    fn sigma_used(&self) -> f64 {
        self.inner.sigma_used()
    }

    /// The approximation drawn as an image, means rounded half-up.
    fn render(&self) -> PyGrayImage {
        PyGrayImage {
            inner: segncc::render_approximation(&self.inner),
        }
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }
}

fn stats_tuple(stats: SearchStats) -> (u64, u64, u64) {
    (stats.positions_evaluated, stats.slow_evaluations, stats.segment_iterations)
}

/// Two-stage segmented search.
///
/// Returns `(matches, (positions, slow_evals, segment_iterations))` where
/// each match is `(u, v, rho)` in row-major order.
#[pyfunction]
#[pyo3(signature = (source, template, precision=0.9, k_max=5000, sigma_fast=0.99, sigma_slow=0.1))]
#[allow(clippy::type_complexity)]
fn match_template(
    py: Python<'_>,
    source: &PyGrayImage,
    template: &PyGrayImage,
    precision: f64,
    k_max: usize,
    sigma_fast: f64,
    sigma_slow: f64,
) -> PyResult<(Vec<(usize, usize, f64)>, (u64, u64, u64))> {
    let params = SearchParams {
        sigma_fast_factor: sigma_fast,
        sigma_slow_factor: sigma_slow,
        k_max,
        precision,
    };
    let (f, t) = (&source.inner, &template.inner);
    let (matches, stats) = py.detach(|| segncc::match_template(f, t, &params)).map_err(to_py_err)?;
    Ok((records(matches), stats_tuple(stats)))
}

/// Exact ρ at one placement; `None` where the source window is uniform.
#[pyfunction]
fn ncc_naive(source: &PyGrayImage, template: &PyGrayImage, u: usize, v: usize) -> PyResult<Option<f64>> {
    segncc::ncc_naive(&source.inner, &template.inner, u, v).map_err(to_py_err)
}

/// Exact ρ over every placement as a row-major list (`None` where undefined)
/// together with the surface width and height.
#[pyfunction]
fn naive_surface(py: Python<'_>, source: &PyGrayImage, template: &PyGrayImage) -> PyResult<(Vec<Option<f64>>, usize, usize)> {
    let (f, t) = (&source.inner, &template.inner);
    let surface = py.detach(|| segncc::naive_search(f, t)).map_err(to_py_err)?;
    Ok((surface.values().to_vec(), surface.width(), surface.height()))
}

/// Frequency-domain ρ over every placement, same layout as `naive_surface`.
#[pyfunction]
fn fft_surface(py: Python<'_>, source: &PyGrayImage, template: &PyGrayImage) -> PyResult<(Vec<Option<f64>>, usize, usize)> {
    let (f, t) = (&source.inner, &template.inner);
    let surface = py
        .detach(|| {
            let prep = segncc::fft_prepare_template(t, f.width(), f.height())?;
            segncc::fft_ncc_surface(f, &prep)
        })
        .map_err(to_py_err)?;
    Ok((surface.values().to_vec(), surface.width(), surface.height()))
}

/// Placements whose frequency-domain ρ reaches `threshold`, as `(u, v, rho)`.
#[pyfunction]
fn fft_search(py: Python<'_>, source: &PyGrayImage, template: &PyGrayImage, threshold: f64) -> PyResult<Vec<(usize, usize, f64)>> {
    let (f, t) = (&source.inner, &template.inner);
    let matches = py.detach(|| segncc::fft_search(f, t, threshold)).map_err(to_py_err)?;
    Ok(records(matches))
}

#[pymodule]
pub fn segncc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrayImage>()?;
    m.add_class::<PySegmentedTemplate>()?;
    m.add_function(wrap_pyfunction!(match_template, m)?)?;
    m.add_function(wrap_pyfunction!(ncc_naive, m)?)?;
    m.add_function(wrap_pyfunction!(naive_surface, m)?)?;
    m.add_function(wrap_pyfunction!(fft_surface, m)?)?;
    m.add_function(wrap_pyfunction!(fft_search, m)?)?;
    Ok(())
}
