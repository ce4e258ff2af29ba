//! Python bindings: the attention block, connection-type utilities, the
//! signal-processing helpers, the synthetic generator, datasets, and a
//! trainable pipeline handle.

use numpy::{IntoPyArray, PyArray1, PyArray2, PyReadonlyArray1, PyReadonlyArray2};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use std::path::PathBuf;

use attx_core::attx::{self, ConnectionType};
use attx_core::data::{self, Coupling, SegmentDataset};
use attx_core::dsp::{self, FilterKind, FilterSpec};
use attx_core::model::{Model, PipelineConfig};
use attx_core::numerics::{Tape, Tensor};
use attx_core::train_eval::{self, TrainOptions};

fn py_err(err: attx_core::Error) -> PyErr {
    match err {
        attx_core::Error::Numeric(_) => PyRuntimeError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

/// All 2^d - 1 connection types over d modalities, as strings.
#[pyfunction]
fn connection_types(d: usize) -> PyResult<Vec<String>> {
    Ok(attx::enumerate_connection_types(d)
        .map_err(py_err)?
        .iter()
        .map(ConnectionType::to_string)
        .collect())
}

/// Normalize a connection-type string (e.g. "2->1,1->2" becomes "1<->2").
#[pyfunction]
fn parse_connection_type(text: &str) -> PyResult<String> {
    let ty: ConnectionType = text.parse().map_err(py_err)?;
    Ok(ty.to_string())
}

/// Run the attention block: stage representations (one [n, m] array per
/// modality), the [d, d] mixing matrix, the length-m scoring vector, and a
/// connection-type string. Returns the next-stage input per modality.
#[pyfunction]
fn attx_forward<'py>(
    py: Python<'py>,
    zs: Vec<PyReadonlyArray2<'py, f64>>,
    w: PyReadonlyArray2<'py, f64>,
    w_u: PyReadonlyArray1<'py, f64>,
    connection: &str,
) -> PyResult<Vec<Bound<'py, PyArray2<f64>>>> {
    let ty: ConnectionType = connection.parse().map_err(py_err)?;
    let mut tape = Tape::new();
    let zvars = zs
        .iter()
        .map(|z| {
            let view = z.as_array();
            let shape = view.shape().to_vec();
            let data = view.iter().copied().collect();
            Ok(tape.leaf(Tensor::new(shape, data).map_err(py_err)?, false))
        })
        .collect::<PyResult<Vec<_>>>()?;
    let wv = {
        let view = w.as_array();
        let tensor = Tensor::new(view.shape().to_vec(), view.iter().copied().collect())
            .map_err(py_err)?;
        tape.leaf(tensor, false)
    };
    let wuv = tape.leaf(
        Tensor::from_vec(w_u.as_array().to_vec()).map_err(py_err)?,
        false,
    );
    let outs = attx::attx_forward(&mut tape, wv, wuv, &ty, &zvars).map_err(py_err)?;
    outs.into_iter()
        .map(|var| {
            let shape = tape.shape(var);
            let arr = numpy::ndarray::Array2::from_shape_vec(
                (shape[0], shape[1]),
                tape.value(var).data().to_vec(),
            )
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
            Ok(arr.into_pyarray(py))
        })
        .collect()
}

/// Butterworth design as stacked second-order sections, one row of
/// [b0, b1, b2, a0, a1, a2] per section. kind: "lowpass" | "highpass" |
/// "bandpass".
#[pyfunction]
fn butter_sos<'py>(
    py: Python<'py>,
    kind: &str,
    cutoff_hz: Vec<f64>,
    order: usize,
    sample_rate: f64,
) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let spec = filter_spec(kind, cutoff_hz, order, sample_rate)?;
    let sos = dsp::design_butterworth(&spec).map_err(py_err)?;
    let mut rows = Vec::with_capacity(sos.sections.len());
    for s in &sos.sections {
        rows.push([s.b[0], s.b[1], s.b[2], 1.0, s.a[0], s.a[1]]);
    }
    let arr = numpy::ndarray::Array2::from_shape_vec(
        (rows.len(), 6),
        rows.into_iter().flatten().collect(),
    )
    .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(arr.into_pyarray(py))
}

/// Zero-phase Butterworth filtering of a 1-D signal.
#[pyfunction]
fn butter_filtfilt<'py>(
    py: Python<'py>,
    kind: &str,
    cutoff_hz: Vec<f64>,
    order: usize,
    sample_rate: f64,
    x: PyReadonlyArray1<'py, f64>,
) -> PyResult<Bound<'py, PyArray1<f64>>> {
    let spec = filter_spec(kind, cutoff_hz, order, sample_rate)?;
    let sos = dsp::design_butterworth(&spec).map_err(py_err)?;
    let y = dsp::filtfilt(&sos, x.as_slice()?).map_err(py_err)?;
    Ok(y.into_pyarray(py))
}

fn filter_spec(kind: &str, cutoff_hz: Vec<f64>, order: usize, fs: f64) -> PyResult<FilterSpec> {
    let kind = match kind {
        "lowpass" => FilterKind::Lowpass,
        "highpass" => FilterKind::Highpass,
        "bandpass" => FilterKind::Bandpass,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown filter kind '{other}'"
            )))
        }
    };
    Ok(FilterSpec {
        kind,
        order,
        cutoff_hz,
        sample_rate: fs,
    })
}

/// (x - mean) / population std; constants map to zeros.
#[pyfunction]
fn zscore<'py>(
    py: Python<'py>,
    x: PyReadonlyArray1<'py, f64>,
) -> PyResult<Bound<'py, PyArray1<f64>>> {
    Ok(dsp::zscore(x.as_slice()?).into_pyarray(py))
}

/// Rational resampling with an anti-alias lowpass.
#[pyfunction]
fn resample<'py>(
    py: Python<'py>,
    x: PyReadonlyArray1<'py, f64>,
    fs_in: u32,
    fs_out: u32,
) -> PyResult<Bound<'py, PyArray1<f64>>> {
    let y = dsp::resample(x.as_slice()?, fs_in, fs_out).map_err(py_err)?;
    Ok(y.into_pyarray(py))
}

/// Number of full windows a signal yields.
#[pyfunction]
fn window_count(samples: usize, fs: u32, window_s: f64, overlap: f64) -> PyResult<usize> {
    let (win, hop) = dsp::window_geometry(fs, window_s, overlap).map_err(py_err)?;
    Ok(dsp::window_offsets(samples, win, hop).len())
}

/// Accuracy, macro-F1, and the confusion matrix (rows = truth).
#[pyfunction]
fn metrics(
    predictions: Vec<usize>,
    labels: Vec<usize>,
    num_classes: usize,
) -> PyResult<(f64, f64, Vec<Vec<usize>>)> {
    let m = train_eval::metrics(&predictions, &labels, num_classes).map_err(py_err)?;
    Ok((m.accuracy, m.macro_f1, m.confusion))
}

/// Generate a synthetic archive on disk. coupling: "independent" | "gated".
#[pyfunction]
fn synth_dataset(
    seed: u64,
    subjects: usize,
    segments_per_subject: usize,
    coupling: &str,
    path: PathBuf,
) -> PyResult<usize> {
    let coupling: Coupling = coupling.parse().map_err(py_err)?;
    let ds =
        data::synth_generate(seed, subjects, segments_per_subject, coupling).map_err(py_err)?;
    let manifest = data::ArchiveManifest::for_dataset(&ds, "binary", "python synth");
    data::write_archive(&path, &ds, &manifest).map_err(py_err)?;
    Ok(ds.len())
}

/// A loaded segment archive.
#[pyclass]
struct Dataset {
    inner: SegmentDataset,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Dataset {
            inner: data::load_segments(&path).map_err(py_err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn modalities(&self) -> Vec<String> {
        self.inner.modality_names.clone()
    }

    #[getter]
    fn classes(&self) -> Vec<String> {
        self.inner.class_names.clone()
    }

    #[getter]
    fn segment_length(&self) -> usize {
        self.inner.segment_length
    }

    #[getter]
    fn sample_rate(&self) -> u32 {
        self.inner.sample_rate
    }

    fn subjects(&self) -> Vec<String> {
        self.inner.subjects()
    }

    fn labels(&self) -> Vec<usize> {
        self.inner.samples().iter().map(|s| s.label).collect()
    }

    /// (subject, label, [per-modality 2-D array]) for one sample.
    fn sample<'py>(
        &self,
        py: Python<'py>,
        index: usize,
    ) -> PyResult<(String, usize, Vec<Bound<'py, PyArray2<f64>>>)> {
        let s = self
            .inner
            .samples()
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("sample {index} out of range")))?;
        let arrays = s
            .modalities
            .iter()
            .map(|t| {
                let shape = t.shape();
                numpy::ndarray::Array2::from_shape_vec((shape[0], shape[1]), t.data().to_vec())
                    .map(|a| a.into_pyarray(py))
                    .map_err(|e| PyValueError::new_err(e.to_string()))
            })
            .collect::<PyResult<Vec<_>>>()?;
        Ok((s.subject.clone(), s.label, arrays))
    }
}

/// A buildable, trainable pipeline handle.
#[pyclass]
struct Pipeline {
    model: Model,
}

#[pymethods]
impl Pipeline {
    /// config_json: serialized pipeline configuration (modalities, encoder,
    /// filter_scale, attx_stages, connection_type, fc_widths, num_classes,
    /// loss, seed).
    #[new]
    fn new(config_json: &str, segment_length: usize, in_channels: Vec<usize>) -> PyResult<Self> {
        let config: PipelineConfig = serde_json::from_str(config_json)
            .map_err(|e| PyValueError::new_err(format!("pipeline config: {e}")))?;
        Ok(Pipeline {
            model: Model::build(config, segment_length, in_channels).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Pipeline {
            model: Model::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.model.save(&path).map_err(py_err)
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.model.params.scalar_count()
    }

    #[getter]
    fn embedding_dim(&self) -> usize {
        self.model.embedding_dim()
    }

    /// Train on every sample of a dataset; returns per-epoch train loss.
    /// options_json mirrors the trainer options (epochs, batch_size, seed,
    /// optimizer, selection, val_subject_fraction).
    fn fit(&mut self, dataset: &Dataset, options_json: &str) -> PyResult<Vec<f64>> {
        let opts: TrainOptions = serde_json::from_str(options_json)
            .map_err(|e| PyValueError::new_err(format!("train options: {e}")))?;
        let indices: Vec<usize> = (0..dataset.inner.len()).collect();
        let outcome =
            train_eval::train(&mut self.model, &dataset.inner, &indices, &opts).map_err(py_err)?;
        Ok(outcome.curve.iter().map(|e| e.train_loss).collect())
    }

    /// Argmax class predictions for every sample, in dataset order.
    fn predict(&mut self, dataset: &Dataset, batch_size: usize) -> PyResult<Vec<usize>> {
        let indices: Vec<usize> = (0..dataset.inner.len()).collect();
        train_eval::predict(&mut self.model, &dataset.inner, &indices, batch_size).map_err(py_err)
    }

    /// Class probabilities, one row per sample.
    fn predict_probs<'py>(
        &mut self,
        py: Python<'py>,
        dataset: &Dataset,
        batch_size: usize,
    ) -> PyResult<Bound<'py, PyArray2<f64>>> {
        let indices: Vec<usize> = (0..dataset.inner.len()).collect();
        let probs =
            train_eval::predict_probs(&mut self.model, &dataset.inner, &indices, batch_size)
                .map_err(py_err)?;
        let k = self.model.config.num_classes;
        let arr = numpy::ndarray::Array2::from_shape_vec(
            (probs.len(), k),
            probs.into_iter().flatten().collect(),
        )
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(arr.into_pyarray(py))
    }
}

/// Leave-one-subject-out evaluation; returns (mean_accuracy, mean_macro_f1,
/// per-fold [(subject, accuracy, macro_f1)]).
#[pyfunction]
#[pyo3(signature = (pipeline_json, options_json, dataset, workers = 1))]
fn loso_evaluate(
    pipeline_json: &str,
    options_json: &str,
    dataset: &Dataset,
    workers: usize,
) -> PyResult<(f64, f64, Vec<(String, f64, f64)>)> {
    let pipeline: PipelineConfig = serde_json::from_str(pipeline_json)
        .map_err(|e| PyValueError::new_err(format!("pipeline config: {e}")))?;
    let opts: TrainOptions = serde_json::from_str(options_json)
        .map_err(|e| PyValueError::new_err(format!("train options: {e}")))?;
    let report =
        train_eval::loso_evaluate(&pipeline, &opts, &dataset.inner, workers).map_err(py_err)?;
    let folds = report
        .folds
        .iter()
        .map(|f| (f.subject.clone(), f.accuracy, f.macro_f1))
        .collect();
    Ok((report.mean_accuracy, report.mean_macro_f1, folds))
}

/// Minimum segment length an encoder kind accepts ("vgg" | "resnet").
#[pyfunction]
fn min_input_length(encoder: &str) -> PyResult<usize> {
    let kind: attx_core::encoders::EncoderKind = encoder.parse().map_err(py_err)?;
    Ok(attx_core::encoders::min_input_length(kind))
}

#[pymodule]
fn attx_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(connection_types, m)?)?;
    m.add_function(wrap_pyfunction!(parse_connection_type, m)?)?;
    m.add_function(wrap_pyfunction!(attx_forward, m)?)?;
    m.add_function(wrap_pyfunction!(butter_sos, m)?)?;
    m.add_function(wrap_pyfunction!(butter_filtfilt, m)?)?;
    m.add_function(wrap_pyfunction!(zscore, m)?)?;
    m.add_function(wrap_pyfunction!(resample, m)?)?;
    m.add_function(wrap_pyfunction!(window_count, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(loso_evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(min_input_length, m)?)?;
    m.add_class::<Dataset>()?;
    m.add_class::<Pipeline>()?;
    Ok(())
}
