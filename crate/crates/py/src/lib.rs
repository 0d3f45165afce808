//! Python bindings for the pipeline: dataset splits, the margin
//! classifier, detection post-processing, evaluation, the bin
//! controller, and the composting model.
//!
//! Structured data crosses the boundary as plain lists/dicts, bridged
//! through the `json` module so both sides agree on one encoding.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;

use smartbin_core::{compost, controller, dataset, detector, metrics, svm};

fn value_err(err: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(err.to_string())
}

/// Python object -> serde value, via `json.dumps`.
fn to_value(obj: &Bound<'_, PyAny>) -> PyResult<serde_json::Value> {
    let dumped: String = obj
        .py()
        .import("json")?
        .call_method1("dumps", (obj,))?
        .extract()?;
    serde_json::from_str(&dumped).map_err(value_err)
}

/// serde value -> Python object, via `json.loads`.
fn from_value<'py>(py: Python<'py>, value: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (value.to_string(),))
}

fn parse_arg<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    serde_json::from_value(to_value(obj)?).map_err(value_err)
}

fn render<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let value = serde_json::to_value(value).map_err(value_err)?;
    from_value(py, &value)
}

// ------------------------------------------------------------ dataset --

/// Deterministically split image ids; returns (train, test).
#[pyfunction]
#[pyo3(signature = (ids, fraction=0.9, seed=0))]
fn split_ids(ids: Vec<String>, fraction: f64, seed: u64) -> PyResult<(Vec<String>, Vec<String>)> {
    let split = dataset::split_ids(&ids, fraction, seed).map_err(value_err)?;
    Ok((split.train, split.test))
}

/// Parse YOLO label text into a list of box dicts.
#[pyfunction]
#[pyo3(signature = (text, category_count=2))]
fn parse_labels<'py>(
    py: Python<'py>,
    text: &str,
    category_count: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let boxes = dataset::parse_label_file(text, category_count).map_err(value_err)?;
    render(py, &boxes)
}

// ----------------------------------------------------------- detector --

/// Decode a raw grid tensor (dict) into a list of detection dicts.
#[pyfunction]
fn decode<'py>(py: Python<'py>, raw: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let raw: detector::RawGridOutput = parse_arg(raw)?;
    let detections = detector::decode(&raw).map_err(value_err)?;
    render(py, &detections)
}

/// Greedy per-category suppression over detection dicts.
#[pyfunction]
#[pyo3(signature = (detections, iou_threshold=detector::DEFAULT_IOU_THRESHOLD,
                    conf_threshold=detector::DEFAULT_CONF_THRESHOLD))]
fn nms<'py>(
    py: Python<'py>,
    detections: &Bound<'py, PyAny>,
    iou_threshold: f64,
    conf_threshold: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let detections: Vec<detector::Detection> = parse_arg(detections)?;
    let kept = detector::nms(&detections, iou_threshold, conf_threshold).map_err(value_err)?;
    render(py, &kept)
}

/// Intersection over union of two box dicts ({cx, cy, w, h}).
#[pyfunction]
fn iou(a: &Bound<'_, PyAny>, b: &Bound<'_, PyAny>) -> PyResult<f64> {
    let a: detector::BoundingBox = parse_arg(a)?;
    let b: detector::BoundingBox = parse_arg(b)?;
    detector::iou(&a, &b).map_err(value_err)
}

// ------------------------------------------------------------ metrics --

/// Score images ([[detections, ground_truths], ...]) into per-category
/// AP and mAP.
#[pyfunction]
#[pyo3(signature = (images, category_count=2, iou_threshold=0.5))]
fn evaluate<'py>(
    py: Python<'py>,
    images: &Bound<'py, PyAny>,
    category_count: usize,
    iou_threshold: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let images: Vec<(Vec<detector::Detection>, Vec<dataset::GroundTruthBox>)> = parse_arg(images)?;
    let eval = metrics::evaluate(&images, category_count, iou_threshold).map_err(value_err)?;
    let value = serde_json::json!({
        "map": eval.map,
        "per_category": eval
            .per_category
            .iter()
            .map(|c| serde_json::json!({
                "category_id": c.category_id,
                "ap": c.ap,
                "gt_count": c.gt_count,
            }))
            .collect::<Vec<_>>(),
    });
    from_value(py, &value)
}

/// Score detection snapshots into a list of {iteration, map_value} rows.
#[pyfunction]
#[pyo3(signature = (snapshots, ground_truth, interval=100, max_batches=2500,
                    iou_threshold=0.5, category_count=2))]
fn eval_curve<'py>(
    py: Python<'py>,
    snapshots: &Bound<'py, PyAny>,
    ground_truth: &Bound<'py, PyAny>,
    interval: u32,
    max_batches: u32,
    iou_threshold: f64,
    category_count: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let snapshots: Vec<metrics::Snapshot> = parse_arg(snapshots)?;
    let truth: Vec<(String, Vec<dataset::GroundTruthBox>)> = parse_arg(ground_truth)?;
    let config = metrics::CurveConfig {
        interval,
        max_batches,
        iou_threshold,
        category_count,
    };
    let curve = metrics::eval_curve(&snapshots, &truth, &config).map_err(value_err)?;
    render(py, &curve)
}

// ---------------------------------------------------------------- svm --

/// Trained margin classifier.
#[pyclass(name = "SvmModel")]
struct PySvmModel {
    inner: svm::SvmModel,
}

fn kernel_from_args(kernel: &str, gamma: f64, degree: u32, coef0: f64) -> PyResult<svm::KernelSpec> {
    match kernel {
        "linear" => Ok(svm::KernelSpec::Linear),
        "polynomial" => Ok(svm::KernelSpec::Polynomial { degree, coef0 }),
        "rbf" => Ok(svm::KernelSpec::Rbf { gamma }),
        other => Err(PyValueError::new_err(format!(
            "unknown kernel {other:?}; expected linear, polynomial or rbf"
        ))),
    }
}

#[pymethods]
impl PySvmModel {
    /// Train on (features, label) pairs; labels are +1/-1.
    #[staticmethod]
    #[pyo3(signature = (data, kernel="linear", c=1.0, gamma=0.5, degree=3, coef0=0.0,
                        max_epochs=200, tolerance=1e-6))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        data: Vec<(Vec<f64>, f64)>,
        kernel: &str,
        c: f64,
        gamma: f64,
        degree: u32,
        coef0: f64,
        max_epochs: usize,
        tolerance: f64,
    ) -> PyResult<Self> {
        let mut examples = Vec::with_capacity(data.len());
        for (x, y) in data {
            examples.push(svm::LabeledExample::new(x, y).map_err(value_err)?);
        }
        let kernel = kernel_from_args(kernel, gamma, degree, coef0)?;
        let config = svm::TrainConfig {
            max_epochs,
            tolerance,
        };
        let inner = svm::train(&examples, &kernel, c, &config).map_err(value_err)?;
        Ok(PySvmModel { inner })
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.predict(&x).map_err(value_err)
    }

    fn decision_value(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.decision_value(&x).map_err(value_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner
            .save(std::path::Path::new(path))
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner =
            svm::SvmModel::load(std::path::Path::new(path)).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(PySvmModel { inner })
    }

    #[getter]
    fn w(&self) -> Option<Vec<f64>> {
        self.inner.w.clone()
    }

    #[getter]
    fn b(&self) -> f64 {
        self.inner.b
    }

    #[getter]
    fn c(&self) -> f64 {
        self.inner.c
    }

    #[getter]
    fn kernel<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        render(py, &self.inner.kernel)
    }

    #[getter]
    fn support_vector_count(&self) -> usize {
        self.inner.support_vectors.len()
    }

    #[getter]
    fn objective(&self) -> f64 {
        self.inner.diagnostics.objective
    }

    fn __repr__(&self) -> String {
        format!(
            "SvmModel(kernel={:?}, C={}, support_vectors={})",
            self.inner.kernel,
            self.inner.c,
            self.inner.support_vectors.len()
        )
    }
}

// ----------------------------------------------------------------- bin --

/// Replay a bin event script (list of {t_ms, event, payload}).
///
/// Returns {"trace": [...], "phase": str, "counts": {bio, nonbio}}.
#[pyfunction]
#[pyo3(signature = (script, fixtures_dir=None, model=None,
                    iou_threshold=detector::DEFAULT_IOU_THRESHOLD,
                    conf_threshold=detector::DEFAULT_CONF_THRESHOLD))]
fn run_bin<'py>(
    py: Python<'py>,
    script: &Bound<'py, PyAny>,
    fixtures_dir: Option<&str>,
    model: Option<PyRef<'py, PySvmModel>>,
    iou_threshold: f64,
    conf_threshold: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let script: Vec<controller::ScriptedEvent> = parse_arg(script)?;
    let config = controller::BinConfig {
        iou_threshold,
        conf_threshold,
        ..controller::BinConfig::default()
    };
    let trace = controller::run_simulation(
        &script,
        model.as_ref().map(|m| &m.inner),
        fixtures_dir.map(std::path::Path::new),
        &config,
    )
    .map_err(value_err)?;
    let last = trace.last().expect("trace is never empty");
    let value = serde_json::json!({
        "trace": trace.iter().map(|e| e.to_line_value()).collect::<Vec<_>>(),
        "phase": last.state.phase,
        "counts": last.state.counts,
    });
    from_value(py, &value)
}

// ------------------------------------------------------------- compost --

/// Run the composting model; returns the report plus final-state facts.
#[pyfunction]
#[pyo3(signature = (preset="reference", days=None, dt=None))]
fn simulate_compost<'py>(
    py: Python<'py>,
    preset: &str,
    days: Option<f64>,
    dt: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut preset = compost::builtin_preset(preset).map_err(value_err)?;
    if let Some(days) = days {
        preset.config.days = days;
    }
    if let Some(dt) = dt {
        preset.config.dt_days = dt;
    }
    let (final_state, series) =
        compost::run_cycle(&preset.feedstock, &preset.spec, &preset.config).map_err(value_err)?;
    let report = compost::composition_report(&final_state);
    let value = serde_json::json!({
        "report": report,
        "day": final_state.day,
        "temperature_c": final_state.temperature_c,
        "moisture": final_state.moisture_frac(),
        "cn_ratio": final_state.cn_ratio(),
        "series_csv": compost::series_to_csv(&series),
    });
    from_value(py, &value)
}

#[pymodule]
fn smartbin(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(split_ids, m)?)?;
    m.add_function(wrap_pyfunction!(parse_labels, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(nms, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(eval_curve, m)?)?;
    m.add_function(wrap_pyfunction!(run_bin, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_compost, m)?)?;
    m.add_class::<PySvmModel>()?;
    Ok(())
}
