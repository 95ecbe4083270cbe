//! Python bindings: homographies, boxes, synthetic scenes, alignment and the
//! QA pipeline. Structured results also round-trip through JSON.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIndexError, PyOSError, PyValueError};
use pyo3::prelude::*;

use trajaudit::annotate::{format_annotations, parse_annotations};
use trajaudit::homography::estimate_ransac;
use trajaudit::io;
use trajaudit::pipeline::{run_qa, QaOutput, QaSettings};
use trajaudit::synth::{evaluate, PipelineOutput};
use trajaudit::{
    AlignConfig, AlignmentResult, BBox, GrayImage, GroundTruthScenario, Point2, PointPair,
    RansacConfig, ScenarioConfig, Series, SmoothMethod, SmootherSpec, Trajectory,
};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(value_err)
}

type BoxTuple = (f64, f64, f64, f64);

fn to_trajectory(boxes: Vec<Option<BoxTuple>>) -> Trajectory {
    Trajectory::new(
        boxes
            .into_iter()
            .map(|b| b.map(|(x, y, w, h)| trajaudit::BBox::new(x, y, w, h)))
            .collect(),
    )
}

fn from_trajectory(t: &Trajectory) -> Vec<Option<BoxTuple>> {
    t.boxes
        .iter()
        .map(|b| b.map(|b| (b.x, b.y, b.w, b.h)))
        .collect()
}

fn smoother_spec(
    method: &str,
    window: Option<usize>,
    sigma: Option<f64>,
    order: Option<usize>,
    fraction: Option<f64>,
) -> PyResult<SmootherSpec> {
    let method: SmoothMethod = method.parse().map_err(value_err)?;
    let mut spec = SmootherSpec::new(method);
    if let Some(w) = window {
        spec.window = w;
    }
    if let Some(s) = sigma {
        spec.sigma = s;
    }
    if let Some(o) = order {
        spec.poly_order = o;
    }
    if let Some(f) = fraction {
        spec.fraction = f;
    }
    spec.validate().map_err(value_err)?;
    Ok(spec)
}

#[pyclass(name = "Homography", module = "trajaudit_py", from_py_object)]
#[derive(Clone)]
pub struct PyHomography(trajaudit::Homography);

#[pymethods]
impl PyHomography {
    /// From nine row-major entries; normalised so the last one is 1.
    #[new]
    fn new(entries: Vec<f64>) -> PyResult<Self> {
        let v: [f64; 9] = entries
            .try_into()
            .map_err(|_| PyValueError::new_err("expected 9 row-major entries"))?;
        trajaudit::Homography::from_row_major(v)
            .map(Self)
            .map_err(value_err)
    }

    #[staticmethod]
    fn identity() -> Self {
        Self(trajaudit::Homography::identity())
    }

    #[staticmethod]
    fn translation(tx: f64, ty: f64) -> Self {
        Self(trajaudit::Homography::translation(tx, ty))
    }

    fn apply(&self, x: f64, y: f64) -> PyResult<(f64, f64)> {
        let p = self.0.apply(Point2::new(x, y)).map_err(value_err)?;
        Ok((p.x, p.y))
    }

    /// `self` after `inner`.
    fn compose(&self, inner: &PyHomography) -> Self {
        Self(self.0.compose(&inner.0))
    }

    fn inverse(&self) -> PyResult<Self> {
        self.0.invert().map(Self).map_err(value_err)
    }

    fn entries(&self) -> Vec<f64> {
        self.0.to_row_major().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Homography({:?})", self.0.to_row_major())
    }
}

#[pyclass(name = "BBox", module = "trajaudit_py", from_py_object)]
#[derive(Clone)]
pub struct PyBBox(BBox);

#[pymethods]
impl PyBBox {
    #[new]
    fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self(BBox::new(x, y, w, h))
    }

    #[getter]
    fn x(&self) -> f64 {
        self.0.x
    }

    #[getter]
    fn y(&self) -> f64 {
        self.0.y
    }

    #[getter]
    fn w(&self) -> f64 {
        self.0.w
    }

    #[getter]
    fn h(&self) -> f64 {
        self.0.h
    }

    fn center(&self) -> (f64, f64) {
        let c = self.0.center();
        (c.x, c.y)
    }

    fn inflate(&self, factor: f64) -> Self {
        Self(self.0.inflate(factor))
    }

    fn __repr__(&self) -> String {
        format!(
            "BBox(x={}, y={}, w={}, h={})",
            self.0.x, self.0.y, self.0.w, self.0.h
        )
    }
}

/// A generated scene: frames, noisy annotations and ground truth.
#[pyclass(name = "Scenario", module = "trajaudit_py")]
pub struct PyScenario(GroundTruthScenario);

#[pymethods]
impl PyScenario {
    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.truth.config.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.truth.config.height
    }

    /// Noisy annotations as `(x, y, w, h)` tuples, `None` where missing.
    fn annotations(&self) -> Vec<Option<BoxTuple>> {
        from_trajectory(&self.0.noisy)
    }

    fn true_centers(&self) -> Vec<(f64, f64)> {
        self.0
            .truth
            .true_centers
            .iter()
            .map(|p| (p.x, p.y))
            .collect()
    }

    fn outlier_frames(&self) -> Vec<usize> {
        (0..self.0.len())
            .filter(|&i| self.0.is_outlier(i))
            .collect()
    }

    /// Frame `i` as rows of intensities in [0, 1].
    fn frame(&self, i: usize) -> PyResult<Vec<Vec<f64>>> {
        let f = self
            .0
            .frames
            .get(i)
            .ok_or_else(|| PyIndexError::new_err("frame index out of range"))?;
        Ok(f.data().chunks(f.width()).map(<[f64]>::to_vec).collect())
    }

    /// Writes frames, annotations and ground truth under `dir`.
    fn export(&self, dir: PathBuf) -> PyResult<()> {
        io::export_scenario(&dir, &self.0).map_err(|e| PyOSError::new_err(e.to_string()))
    }

    fn truth_json(&self) -> PyResult<String> {
        to_json(&self.0.truth)
    }
}

#[pyclass(name = "Alignment", module = "trajaudit_py")]
pub struct PyAlignment(AlignmentResult);

#[pymethods]
impl PyAlignment {
    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn failed_at(&self) -> Option<usize> {
        self.0.failed_at
    }

    /// Per-frame method tag: first, keypoint, ecc or failed.
    fn methods(&self) -> PyResult<Vec<String>> {
        self.0
            .frames
            .iter()
            .map(|f| {
                serde_json::to_value(f.method)
                    .map(|v| v.as_str().unwrap_or_default().to_string())
                    .map_err(value_err)
            })
            .collect()
    }

    /// Transform from frame `i` into frame 0.
    fn cumulative(&self, i: usize) -> PyResult<PyHomography> {
        self.0
            .frames
            .get(i)
            .map(|f| PyHomography(f.cumulative))
            .ok_or_else(|| PyIndexError::new_err("frame index out of range"))
    }

    fn to_json(&self) -> PyResult<String> {
        to_json(&self.0)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(Self).map_err(value_err)
    }
}

#[pyclass(name = "QaResult", module = "trajaudit_py")]
pub struct PyQaResult(QaOutput);

#[pymethods]
impl PyQaResult {
    fn distances(&self) -> Vec<Option<f64>> {
        self.0.report.distances.clone()
    }

    fn flagged_frames(&self) -> Vec<usize> {
        self.0.report.flagged_frames()
    }

    /// Smoothed centers reprojected into each frame.
    fn smoothed_centers(&self) -> Vec<Option<(f64, f64)>> {
        self.0
            .reprojected
            .iter()
            .map(|p| p.map(|p| (p.x, p.y)))
            .collect()
    }

    fn corrected(&self) -> Vec<Option<BoxTuple>> {
        from_trajectory(&self.0.correction.corrected)
    }

    /// `(threshold, rate)` pairs of the success-rate curve.
    fn curve(&self) -> Vec<(f64, f64)> {
        self.0.curve.iter().map(|p| (p.threshold, p.rate)).collect()
    }

    /// `(tau, fraction)` pairs of the replaced-fraction sweep.
    fn replaced(&self) -> Vec<(f64, f64)> {
        self.0
            .replaced
            .iter()
            .map(|r| (r.threshold, r.replaced_fraction))
            .collect()
    }

    fn to_json(&self) -> PyResult<String> {
        to_json(&self.0)
    }
}

/// Robust homography from point correspondences; returns it with the
/// inlier mask.
#[pyfunction]
#[pyo3(signature = (src, dst, threshold = 3.0, seed = 0))]
fn estimate_homography(
    src: Vec<(f64, f64)>,
    dst: Vec<(f64, f64)>,
    threshold: f64,
    seed: u64,
) -> PyResult<(PyHomography, Vec<bool>)> {
    if src.len() != dst.len() {
        return Err(PyValueError::new_err("src and dst differ in length"));
    }
    let pairs: Vec<PointPair> = src
        .iter()
        .zip(&dst)
        .map(|(s, d)| PointPair::new(Point2::new(s.0, s.1), Point2::new(d.0, d.1)))
        .collect();
    let cfg = RansacConfig {
        inlier_threshold: threshold,
        seed,
        ..RansacConfig::default()
    };
    let est = estimate_ransac(&pairs, &cfg).map_err(value_err)?;
    Ok((PyHomography(est.homography), est.inliers))
}

/// Synthetic scene from a JSON config (missing fields take defaults), or
/// the reference scene when no config is given.
#[pyfunction]
#[pyo3(signature = (config_json = None, seed = None))]
fn generate_scenario(config_json: Option<&str>, seed: Option<u64>) -> PyResult<PyScenario> {
    let mut cfg = match config_json {
        Some(text) => serde_json::from_str::<ScenarioConfig>(text).map_err(value_err)?,
        None => ScenarioConfig::reference(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    trajaudit::generate(&cfg).map(PyScenario).map_err(value_err)
}

fn frames_from_rows(frames: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<GrayImage>> {
    frames
        .into_iter()
        .map(|rows| {
            let h = rows.len();
            let w = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != w) {
                return Err(PyValueError::new_err("ragged frame rows"));
            }
            GrayImage::new(w, h, rows.concat()).map_err(value_err)
        })
        .collect()
}

fn align_config(config_json: Option<&str>) -> PyResult<AlignConfig> {
    match config_json {
        Some(text) => serde_json::from_str(text).map_err(value_err),
        None => Ok(AlignConfig::default()),
    }
}

/// Registers a scenario's frames to frame 0 using its noisy annotations.
#[pyfunction]
#[pyo3(signature = (scenario, config_json = None))]
fn align_scenario(scenario: &PyScenario, config_json: Option<&str>) -> PyResult<PyAlignment> {
    let cfg = align_config(config_json)?;
    trajaudit::align_sequence(&scenario.0.frames, &scenario.0.noisy, &cfg)
        .map(PyAlignment)
        .map_err(value_err)
}

/// Registers frames given as nested lists (rows of [0, 1] intensities) or
/// loaded from a directory path.
#[pyfunction]
#[pyo3(signature = (frames, boxes, config_json = None))]
fn align_frames(
    frames: Bound<'_, PyAny>,
    boxes: Vec<Option<BoxTuple>>,
    config_json: Option<&str>,
) -> PyResult<PyAlignment> {
    let images = match frames.extract::<PathBuf>() {
        Ok(dir) => io::load_frames(&dir).map_err(|e| PyOSError::new_err(e.to_string()))?,
        Err(_) => frames_from_rows(frames.extract()?)?,
    };
    let cfg = align_config(config_json)?;
    trajaudit::align_sequence(&images, &to_trajectory(boxes), &cfg)
        .map(PyAlignment)
        .map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (
    alignment,
    boxes,
    tau = 100.0,
    smoother = "lowess",
    window = None,
    sigma = None,
    order = None,
    fraction = None,
))]
#[allow(clippy::too_many_arguments)]
fn qa(
    alignment: &PyAlignment,
    boxes: Vec<Option<BoxTuple>>,
    tau: f64,
    smoother: &str,
    window: Option<usize>,
    sigma: Option<f64>,
    order: Option<usize>,
    fraction: Option<f64>,
) -> PyResult<PyQaResult> {
    let settings = QaSettings {
        smoother: smoother_spec(smoother, window, sigma, order, fraction)?,
        tau,
        ..QaSettings::default()
    };
    run_qa(&alignment.0, &to_trajectory(boxes), &settings)
        .map(PyQaResult)
        .map_err(value_err)
}

/// Fills missing boxes from the smoothed canonical trajectory.
#[pyfunction]
#[pyo3(signature = (alignment, boxes, smoother = "savitzky_golay", window = None))]
fn extrapolate(
    alignment: &PyAlignment,
    boxes: Vec<Option<BoxTuple>>,
    smoother: &str,
    window: Option<usize>,
) -> PyResult<Vec<Option<BoxTuple>>> {
    let spec = smoother_spec(smoother, window, None, None, None)?;
    trajaudit::extrapolate_missing(&to_trajectory(boxes), &alignment.0, &spec)
        .map(|t| from_trajectory(&t))
        .map_err(value_err)
}

/// Smooths a unit-spaced series; `None` marks missing samples.
#[pyfunction]
#[pyo3(signature = (values, method = "savitzky_golay", window = None, sigma = None, order = None, fraction = None))]
fn smooth(
    values: Vec<Option<f64>>,
    method: &str,
    window: Option<usize>,
    sigma: Option<f64>,
    order: Option<usize>,
    fraction: Option<f64>,
) -> PyResult<Vec<Option<f64>>> {
    let spec = smoother_spec(method, window, sigma, order, fraction)?;
    let out = trajaudit::smooth_series(&Series::from_options(&values), &spec).map_err(value_err)?;
    Ok((0..out.len()).map(|i| out.get(i)).collect())
}

/// Ground-truth metrics of a QA run on a generated scenario.
#[pyfunction]
fn score(scenario: &PyScenario, alignment: &PyAlignment, result: &PyQaResult) -> PyResult<String> {
    let m = evaluate(
        &scenario.0,
        &PipelineOutput {
            alignment: &alignment.0,
            smoothed: &result.0.reprojected,
            corrected: &result.0.correction.corrected,
            flagged: &result.0.report.flagged,
            timings: BTreeMap::new(),
        },
    )
    .map_err(value_err)?;
    to_json(&m)
}

#[pyfunction(name = "parse_annotations")]
fn parse_annotation_text(text: &str) -> PyResult<Vec<Option<BoxTuple>>> {
    parse_annotations(text)
        .map(|t| from_trajectory(&t))
        .map_err(value_err)
}

#[pyfunction(name = "format_annotations")]
fn format_annotation_text(boxes: Vec<Option<BoxTuple>>) -> String {
    format_annotations(&to_trajectory(boxes))
}

#[pymodule]
pub fn trajaudit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHomography>()?;
    m.add_class::<PyBBox>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyAlignment>()?;
    m.add_class::<PyQaResult>()?;
    m.add_function(wrap_pyfunction!(estimate_homography, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(align_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(align_frames, m)?)?;
    m.add_function(wrap_pyfunction!(qa, m)?)?;
    m.add_function(wrap_pyfunction!(extrapolate, m)?)?;
    m.add_function(wrap_pyfunction!(smooth, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(parse_annotation_text, m)?)?;
    m.add_function(wrap_pyfunction!(format_annotation_text, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
