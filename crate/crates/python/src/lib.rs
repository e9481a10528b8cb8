//! Python bindings: sequences, clips, evaluation and reports.
//!
//! Boxes cross the boundary as `(x, y, w, h)` tuples or `None` (target not
//! visible); factor sets as lists of factor codes such as `"OCC"` or `"O-B"`.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use trackdiag::evaluation::{all_factor_stats, evaluate_clip as eval_clip, failure_proportions as proportions};
use trackdiag::extraction::ExtractedClip;
use trackdiag::model::{self, BoundingBox, DiagnosisConfig, FactorKind, FactorSet, SequenceRecord};
use trackdiag::report::{self as rep, CorpusSummary};
use trackdiag::simulate::{self as sim, SimProfile, SimRng};

pub type PyBox = Option<(f64, f64, f64, f64)>;

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

pub fn box_from_py(b: PyBox) -> Result<BoundingBox, model::ModelError> {
    match b {
        None => Ok(BoundingBox::Absent),
        Some((x, y, w, h)) => BoundingBox::from_xywh(x, y, w, h),
    }
}

pub fn box_to_py(b: &BoundingBox) -> PyBox {
    b.rect().map(|r| (r.x, r.y, r.w, r.h))
}

pub fn factors_from_codes(codes: &[String]) -> Result<FactorSet, model::ModelError> {
    codes.iter().map(|c| c.parse::<FactorKind>()).collect()
}

pub fn factors_to_codes(set: FactorSet) -> Vec<String> {
    set.iter().map(|f| f.code().to_string()).collect()
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Thresholds used by annotation, extraction and evaluation.
#[pyclass(name = "Config", module = "trackdiag_py", skip_from_py_object)]
#[derive(Clone, Default)]
pub struct PyConfig {
    inner: DiagnosisConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut value = serde_json::to_value(DiagnosisConfig::default()).map_err(value_err)?;
        if let Some(d) = overrides {
            let py = d.py();
            let text: String = py.import("json")?.call_method1("dumps", (d,))?.extract()?;
            let patch: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text).map_err(value_err)?;
            value.as_object_mut().expect("config is an object").extend(patch);
        }
        let inner: DiagnosisConfig = serde_json::from_value(value).map_err(value_err)?;
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn tau_op(&self) -> usize {
        self.inner.tau_op
    }
    #[getter]
    fn tau_s(&self) -> usize {
        self.inner.tau_s
    }
    #[getter]
    fn tau_e(&self) -> usize {
        self.inner.tau_e
    }
    #[getter]
    fn max_prefix(&self) -> usize {
        self.inner.max_prefix
    }
    #[getter]
    fn tau_iou(&self) -> f64 {
        self.inner.tau_iou
    }
    #[getter]
    fn success_threshold(&self) -> f64 {
        self.inner.success_threshold
    }
    #[getter]
    fn exclude_others_from_failure_rate(&self) -> bool {
        self.inner.exclude_others_from_failure_rate
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!("Config({})", serde_json::to_string(&self.inner).unwrap_or_default())
    }
}

fn cfg_or_default(config: Option<&PyConfig>) -> DiagnosisConfig {
    config.map(|c| c.inner.clone()).unwrap_or_default()
}

/// A groundtruth track with per-frame factor labels.
#[pyclass(name = "Sequence", module = "trackdiag_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PySequence {
    inner: SequenceRecord,
}

#[pymethods]
impl PySequence {
    #[new]
    fn new(sequence_id: String, groundtruth: Vec<PyBox>, labels: Vec<Vec<String>>) -> PyResult<Self> {
        let gt = groundtruth
            .into_iter()
            .map(box_from_py)
            .collect::<Result<Vec<_>, _>>()
            .map_err(value_err)?;
        let sets = labels
            .iter()
            .map(|l| factors_from_codes(l))
            .collect::<Result<Vec<_>, _>>()
            .map_err(value_err)?;
        let inner = SequenceRecord::new(sequence_id, gt, sets).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn sequence_id(&self) -> String {
        self.inner.sequence_id.clone()
    }
    #[getter]
    fn frame_count(&self) -> usize {
        self.inner.frame_count
    }
    #[getter]
    fn groundtruth(&self) -> Vec<PyBox> {
        self.inner.groundtruth.iter().map(box_to_py).collect()
    }
    #[getter]
    fn labels(&self) -> Vec<Vec<String>> {
        self.inner.labels.iter().map(|l| factors_to_codes(l.active)).collect()
    }

    /// Labels shape variation and derives compound factors.
    #[pyo3(signature = (config=None))]
    fn annotate(&self, config: Option<&PyConfig>) -> PyResult<Self> {
        let inner = trackdiag::finalize_labels(&self.inner, &cfg_or_default(config)).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Label consistency problems, as messages (empty when valid).
    fn violations(&self) -> Vec<String> {
        trackdiag::validate_labels(&self.inner)
            .iter()
            .map(|v| v.to_string())
            .collect()
    }

    #[pyo3(signature = (config=None))]
    fn extract(&self, config: Option<&PyConfig>) -> PyResult<Vec<PyClip>> {
        let clips = trackdiag::extract_clips(&self.inner, &cfg_or_default(config)).map_err(value_err)?;
        Ok(clips.into_iter().map(|inner| PyClip { inner }).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.frame_count
    }

    fn __repr__(&self) -> String {
        format!(
            "Sequence({:?}, {} frames)",
            self.inner.sequence_id, self.inner.frame_count
        )
    }
}

/// One single-factor clip cut from a sequence.
#[pyclass(name = "Clip", module = "trackdiag_py", from_py_object)]
#[derive(Clone)]
pub struct PyClip {
    inner: ExtractedClip,
}

#[pymethods]
impl PyClip {
    #[getter]
    fn clip_id(&self) -> String {
        self.inner.clip_id.clone()
    }
    #[getter]
    fn source_id(&self) -> String {
        self.inner.source_id.clone()
    }
    #[getter]
    fn factor(&self) -> &'static str {
        self.inner.factor.code()
    }
    /// Inclusive frame range in the source sequence.
    #[getter]
    fn frame_range(&self) -> (usize, usize) {
        (self.inner.frame_range.start, self.inner.frame_range.end)
    }
    #[getter]
    fn nc1_range(&self) -> (usize, usize) {
        (self.inner.nc1_range.start, self.inner.nc1_range.end)
    }
    #[getter]
    fn c2_range(&self) -> (usize, usize) {
        (self.inner.c2_range.start, self.inner.c2_range.end)
    }
    #[getter]
    fn nc3_range(&self) -> Option<(usize, usize)> {
        self.inner.nc3_range.map(|r| (r.start, r.end))
    }
    #[getter]
    fn groundtruth(&self) -> Vec<PyBox> {
        self.inner.groundtruth.iter().map(box_to_py).collect()
    }
    #[getter]
    fn labels(&self) -> Vec<Vec<String>> {
        self.inner.labels.iter().map(|l| factors_to_codes(l.active)).collect()
    }

    /// Invariant violations found by the independent checker.
    #[pyo3(signature = (config=None))]
    fn verify(&self, config: Option<&PyConfig>) -> Vec<String> {
        trackdiag::verify_clip(&self.inner, &cfg_or_default(config))
            .iter()
            .map(|v| format!("{v:?}"))
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Clip({:?}, {} frames)", self.inner.clip_id, self.inner.len())
    }
}

/// IoU of two boxes; `None` when both are absent.
#[pyfunction]
fn compute_iou(a: PyBox, b: PyBox) -> PyResult<Option<f64>> {
    Ok(model::compute_iou(
        &box_from_py(a).map_err(value_err)?,
        &box_from_py(b).map_err(value_err)?,
    ))
}

/// Scores one tracker run on a clip; returns the outcome as a dict.
#[pyfunction]
#[pyo3(signature = (clip, predictions, config=None))]
fn evaluate_clip<'py>(
    py: Python<'py>,
    clip: &PyClip,
    predictions: Vec<PyBox>,
    config: Option<&PyConfig>,
) -> PyResult<Bound<'py, PyAny>> {
    let run = trackdiag::TrackerRun {
        tracker_name: String::new(),
        clip_id: clip.inner.clip_id.clone(),
        predictions: predictions
            .into_iter()
            .map(box_from_py)
            .collect::<Result<_, _>>()
            .map_err(value_err)?,
    };
    let outcome = eval_clip(&clip.inner, &run, &cfg_or_default(config)).map_err(value_err)?;
    json_to_py(py, &outcome)
}

fn outcomes_from_py(
    py: Python<'_>,
    outcomes: &Bound<'_, PyAny>,
) -> PyResult<BTreeMap<String, Vec<trackdiag::ClipOutcome>>> {
    let text: String = py.import("json")?.call_method1("dumps", (outcomes,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

/// Per-factor statistics and failure proportions for outcome dicts, keyed by
/// tracker name.
#[pyfunction]
#[pyo3(signature = (outcomes, config=None))]
fn summarize<'py>(
    py: Python<'py>,
    outcomes: &Bound<'py, PyAny>,
    config: Option<&PyConfig>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = cfg_or_default(config);
    let parsed = outcomes_from_py(py, outcomes)?;
    let summary: BTreeMap<&String, serde_json::Value> = parsed
        .iter()
        .map(|(name, list)| {
            let v = serde_json::json!({
                "factor_stats": all_factor_stats(list, &cfg),
                "failure_proportions": proportions(list),
            });
            (name, v)
        })
        .collect();
    json_to_py(py, &summary)
}

/// Builds the structured report and returns its canonical JSON text.
#[pyfunction]
#[pyo3(signature = (clips, outcomes, config=None))]
fn build_report(
    py: Python<'_>,
    clips: Vec<PyClip>,
    outcomes: &Bound<'_, PyAny>,
    config: Option<&PyConfig>,
) -> PyResult<String> {
    let clips: Vec<ExtractedClip> = clips.into_iter().map(|c| c.inner).collect();
    let parsed = outcomes_from_py(py, outcomes)?;
    let report =
        rep::build_report(CorpusSummary::from_clips(&clips), &parsed, &cfg_or_default(config)).map_err(value_err)?;
    Ok(rep::render_structured(&report))
}

/// Markdown and SVG charts (file name → text) for a structured report.
#[pyfunction]
fn render_human(report_json: &str) -> PyResult<(String, BTreeMap<String, String>)> {
    let report = rep::parse_structured(report_json).map_err(value_err)?;
    let human = rep::render_human(&report);
    Ok((
        human.markdown,
        human.charts.into_iter().map(|c| (c.file_name, c.svg)).collect(),
    ))
}

/// A random synthetic sequence with raw (simple-only) labels.
#[pyfunction]
#[pyo3(signature = (seed, sequence_id="sim", max_frames=200))]
fn random_sequence(seed: u64, sequence_id: &str, max_frames: usize) -> PyResult<PySequence> {
    if max_frames < 20 {
        return Err(PyValueError::new_err("max_frames must be at least 20"));
    }
    let layout = sim::random_layout(&mut SimRng::keyed(seed, sequence_id), sequence_id, max_frames);
    let seq = sim::synth_sequence(&layout, seed).map_err(value_err)?;
    Ok(PySequence {
        inner: sim::raw_labels(&seq),
    })
}

/// Predictions of a synthetic tracker that loses the target on this clip's
/// factor with probability `failure_probability`.
#[pyfunction]
#[pyo3(signature = (clip, failure_probability, seed, drift=1.0))]
fn synth_predictions(clip: &PyClip, failure_probability: f64, seed: u64, drift: f64) -> PyResult<Vec<PyBox>> {
    let mut profile = SimProfile::uniform(failure_probability, seed);
    profile.drift = drift;
    profile.validate().map_err(value_err)?;
    let run = sim::synth_tracker_run(&clip.inner, &profile, "synthetic");
    Ok(run.predictions.iter().map(box_to_py).collect())
}

#[pymodule]
fn trackdiag_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("FACTORS", FactorKind::ALL.iter().map(|f| f.code()).collect::<Vec<_>>())?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PySequence>()?;
    m.add_class::<PyClip>()?;
    m.add_function(wrap_pyfunction!(compute_iou, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_clip, m)?)?;
    m.add_function(wrap_pyfunction!(summarize, m)?)?;
    m.add_function(wrap_pyfunction!(build_report, m)?)?;
    m.add_function(wrap_pyfunction!(render_human, m)?)?;
    m.add_function(wrap_pyfunction!(random_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(synth_predictions, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boxes_round_trip() {
        let b = box_from_py(Some((1.0, 2.0, 3.0, 4.0))).unwrap();
        assert_eq!(box_to_py(&b), Some((1.0, 2.0, 3.0, 4.0)));
        assert_eq!(box_from_py(None).unwrap(), BoundingBox::Absent);
        assert_eq!(box_to_py(&box_from_py(Some((1.0, 2.0, 0.0, 4.0))).unwrap()), None);
    }

    #[test]
    fn factor_codes_round_trip() {
        let codes = vec!["O-B".to_string(), "occ".to_string()];
        let set = factors_from_codes(&codes).unwrap();
        assert_eq!(factors_to_codes(set), vec!["OCC", "O-B"]);
        assert!(factors_from_codes(&["XYZ".to_string()]).is_err());
    }
}
