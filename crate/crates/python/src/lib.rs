//! Python bindings: simulation, corpus I/O, the diarization model with
//! training and iterative decoding, and scoring.

use std::path::PathBuf;

use eend_core::corpus::Recording as CoreRecording;
use eend_core::decode::{iterative_decode, DecodeConfig, Strategy};
use eend_core::nnet::{AedEend, ModelConfig};
use eend_core::score::{score_corpus, DerOptions};
use eend_core::sim::{simulate_corpus, Regime, SimConfig, SimStats};
use eend_core::train::{Mode, TrainConfig, Trainer};
use eend_core::{io, Error};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(format!("{e}: {}", std::error::Error::source(&e).map(|s| s.to_string()).unwrap_or_default())),
        e => PyValueError::new_err(e.to_string()),
    }
}

/// Converts a serializable record to Python objects through JSON.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// `key=value` pairs from a dict whose values are rendered with `str()`.
fn kv_pairs(d: Option<&Bound<'_, PyDict>>) -> PyResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    if let Some(d) = d {
        for (k, v) in d.iter() {
            let v = match v.extract::<bool>() {
                Ok(b) => b.to_string(),
                Err(_) => v.str()?.to_string(),
            };
            out.push((k.extract()?, v));
        }
    }
    Ok(out)
}

/// Speaker segments of one recording.
#[pyclass(module = "eend", from_py_object)]
#[derive(Clone)]
pub struct Annotation {
    inner: eend_core::Annotation,
}

#[pymethods]
impl Annotation {
    #[new]
    fn new(file_id: &str) -> Self {
        Self {
            inner: eend_core::Annotation::new(file_id),
        }
    }

    fn push(&mut self, speaker: &str, start: f64, end: f64) {
        self.inner.push(speaker, start, end);
    }

    #[getter]
    fn file_id(&self) -> String {
        self.inner.file_id.clone()
    }

    /// `(speaker, start, end)` tuples in seconds.
    #[getter]
    fn segments(&self) -> Vec<(String, f64, f64)> {
        self.inner.segments.iter().map(|s| (s.speaker.clone(), s.start, s.end)).collect()
    }

    fn speakers(&self) -> Vec<String> {
        self.inner.speakers()
    }

    /// Overlapped share of speech time.
    fn overlap_ratio(&self) -> f64 {
        self.inner.overlap_ratio()
    }

    fn to_rttm(&self) -> String {
        io::rttm::emit([&self.inner])
    }

    fn __len__(&self) -> usize {
        self.inner.segments.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Annotation({:?}, {} segments, {} speakers)",
            self.inner.file_id,
            self.inner.segments.len(),
            self.inner.speakers().len()
        )
    }
}

/// A T×F feature matrix with its frame period in seconds.
#[pyclass(module = "eend", from_py_object)]
#[derive(Clone)]
pub struct Features {
    inner: eend_core::FeatureMatrix,
}

#[pymethods]
impl Features {
    #[new]
    fn new(rows: Vec<Vec<f64>>, frame_period: f64) -> PyResult<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(PyValueError::new_err("rows must have equal length"));
        }
        let frames = rows.len();
        let inner = eend_core::FeatureMatrix::new(frames, dim, rows.concat(), frame_period).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: io::read_features(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::write_features(&path, &self.inner).map_err(py_err)
    }

    #[getter]
    fn frames(&self) -> usize {
        self.inner.frames()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn frame_period(&self) -> f64 {
        self.inner.frame_period
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration()
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        (0..self.inner.frames()).map(|t| self.inner.frame(t).to_vec()).collect()
    }

    fn __repr__(&self) -> String {
        format!("Features({}x{}, period {} s)", self.inner.frames(), self.inner.dim(), self.inner.frame_period)
    }
}

/// Features paired with their reference annotation.
#[pyclass(module = "eend", from_py_object)]
#[derive(Clone)]
pub struct Recording {
    inner: CoreRecording,
}

#[pymethods]
impl Recording {
    #[new]
    fn new(id: &str, features: Features, annotation: Annotation) -> Self {
        Self {
            inner: CoreRecording {
                id: id.to_string(),
                features: features.inner,
                annotation: annotation.inner,
            },
        }
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    #[getter]
    fn features(&self) -> Features {
        Features {
            inner: self.inner.features.clone(),
        }
    }

    #[getter]
    fn annotation(&self) -> Annotation {
        Annotation {
            inner: self.inner.annotation.clone(),
        }
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration()
    }

    fn __repr__(&self) -> String {
        format!("Recording({:?}, {:.1} s)", self.inner.id, self.inner.duration())
    }
}

fn unwrap_recordings(recs: &[Recording]) -> Vec<CoreRecording> {
    recs.iter().map(|r| r.inner.clone()).collect()
}

fn wrap_recordings(recs: Vec<CoreRecording>) -> Vec<Recording> {
    recs.into_iter().map(|inner| Recording { inner }).collect()
}

/// Simulated recordings; `regime` is `"sm"` (independent speaker
/// timelines) or `"sc"` (conversation turn-taking).
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (regime = "sm", n_speakers = 2, n_mixtures = 1, duration = 60.0, beta = None, seed = 0, noise = None))]
fn simulate(
    py: Python<'_>,
    regime: &str,
    n_speakers: usize,
    n_mixtures: usize,
    duration: f64,
    beta: Option<f64>,
    seed: u64,
    noise: Option<f64>,
) -> PyResult<Vec<Recording>> {
    let regime: Regime = regime.parse().map_err(py_err)?;
    let mut cfg = SimConfig {
        regime,
        n_speakers,
        n_mixtures,
        beta: beta.unwrap_or(SimConfig::default_beta(n_speakers)),
        stats: (regime == Regime::Sc).then(SimStats::conversational),
        duration,
        seed,
        ..SimConfig::default()
    };
    if let Some(n) = noise {
        cfg.features.noise = n;
    }
    let recs = py.detach(|| simulate_corpus(&cfg)).map_err(py_err)?;
    Ok(wrap_recordings(recs))
}

#[pyfunction]
fn load_corpus(dir: PathBuf) -> PyResult<Vec<Recording>> {
    Ok(wrap_recordings(io::load_corpus(&dir).map_err(py_err)?))
}

#[pyfunction]
fn save_corpus(dir: PathBuf, recordings: Vec<Recording>) -> PyResult<()> {
    io::save_corpus(&dir, &unwrap_recordings(&recordings)).map_err(py_err)
}

#[pyfunction]
fn read_rttm(path: PathBuf) -> PyResult<Vec<Annotation>> {
    let anns = io::read_rttm(&path).map_err(py_err)?;
    Ok(anns.into_iter().map(|inner| Annotation { inner }).collect())
}

#[pyfunction]
fn write_rttm(path: PathBuf, annotations: Vec<Annotation>) -> PyResult<()> {
    io::write_rttm(&path, annotations.iter().map(|a| &a.inner)).map_err(py_err)
}

/// The attention-based encoder-decoder diarization network.
#[pyclass(module = "eend")]
pub struct Model {
    inner: AedEend,
}

#[pymethods]
impl Model {
    /// Builds a model from `key=value` overrides of the default
    /// configuration, e.g. `{"attn_dim": 64, "enh_layers": 4}`.
    #[new]
    #[pyo3(signature = (config = None))]
    fn new(config: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = ModelConfig::default();
        for (k, v) in kv_pairs(config)? {
            if !cfg.set(&k, &v).map_err(py_err)? {
                return Err(PyValueError::new_err(format!("unknown model config key {k:?}")));
            }
        }
        Ok(Self {
            inner: AedEend::new(cfg).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: io::read_checkpoint(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::write_checkpoint(&path, &self.inner).map_err(py_err)
    }

    fn config(&self) -> Vec<(String, String)> {
        self.inner.config().to_kv()
    }

    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    fn parameter_breakdown<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let b = self.inner.parameter_breakdown();
        let d = PyDict::new(py);
        d.set_item("input", b.input)?;
        d.set_item("encoder", b.encoder)?;
        d.set_item("activity_enrollments", b.activity_enrollments)?;
        d.set_item("decoder", b.decoder)?;
        d.set_item("enhancer_unique", b.enhancer_unique)?;
        d.set_item("enhancer_first_layer", b.enhancer_first_layer)?;
        d.set_item("total", b.total)?;
        Ok(d)
    }

    /// Trains in place with the teacher-forced objective (`mode` is
    /// `"pretrain"` or `"adapt"`); returns the per-step losses.
    #[pyo3(signature = (recordings, config = None, mode = "pretrain", dev = None))]
    fn train(
        &mut self,
        py: Python<'_>,
        recordings: Vec<Recording>,
        config: Option<&Bound<'_, PyDict>>,
        mode: &str,
        dev: Option<Vec<Recording>>,
    ) -> PyResult<Vec<f64>> {
        let mode = match mode {
            "pretrain" => Mode::Pretrain,
            "adapt" => Mode::Adapt,
            other => return Err(PyValueError::new_err(format!("unknown training mode {other:?}"))),
        };
        let mut cfg = TrainConfig::for_mode(mode);
        for (k, v) in kv_pairs(config)? {
            if !cfg.set(&k, &v).map_err(py_err)? {
                return Err(PyValueError::new_err(format!("unknown training config key {k:?}")));
            }
        }
        let train = unwrap_recordings(&recordings);
        let dev = unwrap_recordings(&dev.unwrap_or_default());
        let model = self.inner.clone();
        let (model, report) = py
            .detach(move || -> eend_core::Result<_> {
                let mut trainer = Trainer::new(model, cfg, mode)?;
                let report = trainer.run(&train, &dev, None)?;
                Ok((trainer.into_model(), report))
            })
            .map_err(py_err)?;
        self.inner = model;
        Ok(report.steps.iter().map(|s| s.loss).collect())
    }

    /// Iterative decoding of one feature sequence into speaker segments.
    #[pyo3(signature = (features, strategy = "sc", el = 0.5, sdl = 1.0, threshold = 0.5, max_speakers = None, seed = 0, file_id = "rec"))]
    #[allow(clippy::too_many_arguments)]
    fn decode(
        &self,
        py: Python<'_>,
        features: &Features,
        strategy: &str,
        el: f64,
        sdl: f64,
        threshold: f64,
        max_speakers: Option<usize>,
        seed: u64,
        file_id: &str,
    ) -> PyResult<Annotation> {
        let strategy: Strategy = strategy.parse().map_err(py_err)?;
        let cfg = DecodeConfig {
            strategy,
            el,
            sdl,
            threshold,
            max_speakers,
            seed,
        };
        cfg.validate().map_err(py_err)?;
        let out = py
            .detach(|| iterative_decode(&self.inner, &features.inner, &cfg))
            .map_err(py_err)?;
        Ok(Annotation {
            inner: out.to_annotation(file_id, features.inner.frame_period),
        })
    }

    fn __repr__(&self) -> String {
        format!("Model({} parameters)", self.inner.parameter_count())
    }
}

/// DER components of one file: seconds of miss, false alarm and confusion,
/// scored reference time, and `der` as a fraction.
#[pyfunction]
#[pyo3(signature = (reference, hypothesis, collar = 0.0, score_overlap = true))]
fn der<'py>(
    py: Python<'py>,
    reference: &Annotation,
    hypothesis: &Annotation,
    collar: f64,
    score_overlap: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = DerOptions { collar, score_overlap };
    let r = eend_core::score::der(&reference.inner, &hypothesis.inner, &opts).map_err(py_err)?;
    to_py(py, &r)
}

/// Jaccard error rate in percent.
#[pyfunction]
fn jer(reference: &Annotation, hypothesis: &Annotation) -> PyResult<f64> {
    eend_core::score::jer(&reference.inner, &hypothesis.inner).map_err(py_err)
}

/// Corpus report: per-file scores, the corpus total and the speaker-count
/// confusion, as nested dicts.
#[pyfunction]
#[pyo3(signature = (references, hypotheses, collar = 0.0, score_overlap = true))]
fn score<'py>(
    py: Python<'py>,
    references: Vec<Annotation>,
    hypotheses: Vec<Annotation>,
    collar: f64,
    score_overlap: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let refs: Vec<_> = references.into_iter().map(|a| a.inner).collect();
    let hyps: Vec<_> = hypotheses.into_iter().map(|a| a.inner).collect();
    let rep = score_corpus(&refs, &hyps, &DerOptions { collar, score_overlap }).map_err(py_err)?;
    to_py(py, &rep)
}

#[pymodule]
fn eend(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Annotation>()?;
    m.add_class::<Features>()?;
    m.add_class::<Recording>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(load_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(save_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(read_rttm, m)?)?;
    m.add_function(wrap_pyfunction!(write_rttm, m)?)?;
    m.add_function(wrap_pyfunction!(der, m)?)?;
    m.add_function(wrap_pyfunction!(jer, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    Ok(())
}
