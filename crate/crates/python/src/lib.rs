//! Python module `vcmlab`: codec, task network, metrics and BD deltas.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vcmlab::checkpoint::Checkpoint;
use vcmlab::codec::{self as core_codec, ImageTensor, ModelParameters, NetworkConfig};
use vcmlab::entropy::{laplace_bits as core_laplace_bits, Bitstream};
use vcmlab::eval::{self, Metric, RDCurve, RDPoint, TaskMetric};
use vcmlab::shapes::{self, ShapesConfig};
use vcmlab::task::{fit_task_net, harden_predictions, FrozenNetworkHandle, LabelMap, TaskNetConfig};
use vcmlab::train::{self, TrainingConfig};

create_exception!(vcmlab, VcmlabError, PyException);

fn err(e: vcmlab::Error) -> PyErr {
    VcmlabError::new_err(e.to_string())
}

/// RGB image with values in [0, 1].
#[pyclass(name = "Image", from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: ImageTensor,
}

#[pymethods]
impl PyImage {
    /// `hwc` is row-major height x width x 3.
    #[new]
    fn new(height: usize, width: usize, hwc: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: ImageTensor::from_hwc(height, width, &hwc).map_err(err)?,
        })
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    fn to_hwc(&self) -> Vec<f64> {
        self.inner.to_hwc()
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.inner.width(), self.inner.height())
    }
}

/// Codec weights, from a checkpoint or freshly initialised.
#[pyclass(name = "Codec")]
struct PyCodec {
    params: ModelParameters,
    lambda: Option<f64>,
}

#[pymethods]
impl PyCodec {
    /// Random weights; `preset` is "toy" or "full".
    #[staticmethod]
    #[pyo3(signature = (preset = "toy", seed = 0))]
    fn init(preset: &str, seed: u64) -> PyResult<Self> {
        let config = match preset {
            "toy" => NetworkConfig::toy(),
            "full" => NetworkConfig::full(),
            other => return Err(VcmlabError::new_err(format!("unknown preset `{other}`"))),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            params: ModelParameters::init(config, &mut rng),
            lambda: None,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let ck = Checkpoint::load(path).map_err(err)?;
        Ok(Self {
            params: ModelParameters::from_checkpoint(&ck).map_err(err)?,
            lambda: ck.metadata.get("lambda").and_then(|v| v.as_f64()),
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let mut ck = self.params.to_checkpoint();
        if let Some(l) = self.lambda {
            ck.metadata.insert("lambda".into(), l.into());
        }
        ck.save(path).map_err(err)
    }

    #[getter]
    fn lambda_(&self) -> Option<f64> {
        self.lambda
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.params.parameter_count()
    }

    fn fingerprint(&self) -> String {
        self.params.fingerprint()
    }

    /// Encode to the serialized bitstream.
    fn compress<'py>(&self, py: Python<'py>, image: &PyImage) -> PyResult<Bound<'py, PyBytes>> {
        let bs = core_codec::compress(&image.inner, &self.params, self.lambda.unwrap_or(0.0)).map_err(err)?;
        Ok(PyBytes::new(py, &bs.to_bytes()))
    }

    fn decompress(&self, data: &[u8]) -> PyResult<PyImage> {
        let bs = Bitstream::from_bytes(data).map_err(err)?;
        Ok(PyImage {
            inner: core_codec::decompress(&bs, &self.params).map_err(err)?,
        })
    }
}

/// Frozen segmentation network.
#[pyclass(name = "TaskNet")]
struct PyTaskNet {
    inner: FrozenNetworkHandle,
}

#[pymethods]
impl PyTaskNet {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: FrozenNetworkHandle::load(path).map_err(err)?,
        })
    }

    /// Fit on the labeled frames of `data`; returns the network and the
    /// loss per step.
    #[staticmethod]
    #[pyo3(signature = (data, iterations = 1000, batch_size = 8, learning_rate = 3e-3, seed = 0))]
    fn train(
        py: Python<'_>,
        data: &PyShapes,
        iterations: usize,
        batch_size: usize,
        learning_rate: f64,
        seed: u64,
    ) -> PyResult<(Self, Vec<f64>)> {
        let pairs: Vec<(ImageTensor, LabelMap)> = shapes::generate(&data.config)
            .into_iter()
            .map(|s| (s.frames[s.labeled_index].clone(), s.labels[s.labeled_index].clone()))
            .collect();
        let (net, losses) = py
            .detach(|| fit_task_net(TaskNetConfig::default(), &pairs, iterations, batch_size, learning_rate, seed))
            .map_err(err)?;
        Ok((Self { inner: net }, losses))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.config().num_classes
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    /// Per-pixel argmax labels, row-major.
    fn predict(&self, image: &PyImage) -> PyResult<Vec<u16>> {
        let p = vcmlab::task::predict(&image.inner, &self.inner).map_err(err)?;
        let hard = harden_predictions(&p, 0.5);
        Ok(hard.label_map().map(|m| m.labels.clone()).unwrap_or_default())
    }
}

/// Synthetic moving-shapes sequences.
#[pyclass(name = "ShapesDataset")]
struct PyShapes {
    config: ShapesConfig,
}

#[pymethods]
impl PyShapes {
    #[new]
    #[pyo3(signature = (sequences = 16, frames = 30, size = 64, labeled_index = 19, seed = 0))]
    fn new(sequences: usize, frames: usize, size: usize, labeled_index: usize, seed: u64) -> Self {
        Self {
            config: ShapesConfig {
                sequences,
                frames,
                height: size,
                width: size,
                labeled_index,
                seed,
                ..ShapesConfig::default()
            },
        }
    }

    fn __len__(&self) -> usize {
        self.config.sequences
    }

    /// Labeled frame and its label map of every sequence.
    fn labeled(&self) -> Vec<(PyImage, Vec<u16>)> {
        shapes::generate(&self.config)
            .into_iter()
            .map(|s| {
                let i = s.labeled_index;
                (PyImage { inner: s.frames[i].clone() }, s.labels[i].labels.clone())
            })
            .collect()
    }

    /// Every frame of sequence `index`.
    fn frames(&self, index: usize) -> PyResult<Vec<PyImage>> {
        let seqs = shapes::generate(&self.config);
        let s = seqs
            .get(index)
            .ok_or_else(|| VcmlabError::new_err(format!("sequence {index} out of range")))?;
        Ok(s.frames.iter().map(|f| PyImage { inner: f.clone() }).collect())
    }
}

fn training_config(toml: Option<&str>) -> PyResult<TrainingConfig> {
    match toml {
        Some(t) => TrainingConfig::from_toml_str(t).map_err(err),
        None => Ok(TrainingConfig::toy()),
    }
}

/// MSE pretraining on a shapes dataset. `config` is the TOML of a
/// training section; the toy preset when omitted.
#[pyfunction]
#[pyo3(signature = (data, config = None))]
fn pretrain(py: Python<'_>, data: &PyShapes, config: Option<&str>) -> PyResult<PyCodec> {
    let config = training_config(config)?;
    let ds = shapes::dataset(&data.config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = ModelParameters::init(config.network.clone(), &mut rng);
    let model = py.detach(|| train::pretrain(init, &ds, &config, None)).map_err(err)?;
    Ok(PyCodec {
        params: model.params,
        lambda: Some(model.lambda),
    })
}

/// One codec per λ of the ladder. With `annotations=False` the dataset's
/// labels are withheld from training.
#[pyfunction]
#[pyo3(signature = (codec, data, net, config = None, annotations = true))]
fn finetune(
    py: Python<'_>,
    codec: &PyCodec,
    data: &PyShapes,
    net: &PyTaskNet,
    config: Option<&str>,
    annotations: bool,
) -> PyResult<Vec<PyCodec>> {
    let config = training_config(config)?;
    let mut ds = shapes::dataset(&data.config);
    if !annotations {
        ds = ds.forbid_annotation_access();
    }
    let models = py
        .detach(|| train::finetune(&codec.params, &ds, &net.inner, &config, None))
        .map_err(err)?;
    Ok(models
        .into_iter()
        .map(|m| PyCodec {
            params: m.params,
            lambda: Some(m.lambda),
        })
        .collect())
}

#[pyfunction]
fn psnr(reconstruction: &PyImage, original: &PyImage) -> PyResult<f64> {
    eval::psnr(&reconstruction.inner, &original.inner).map_err(err)
}

#[pyfunction]
fn ms_ssim(reconstruction: &PyImage, original: &PyImage) -> PyResult<f64> {
    eval::ms_ssim(&reconstruction.inner, &original.inner).map_err(err)
}

/// Mean IoU over the classes present in `gt`; 255 is ignored.
#[pyfunction]
fn miou(pred: Vec<u16>, gt: Vec<u16>, height: usize, width: usize, num_classes: usize) -> PyResult<f64> {
    let p = LabelMap::new(1, height, width, pred);
    let g = LabelMap::new(1, height, width, gt);
    eval::miou(&p, &g, num_classes).map_err(err)
}

/// Ideal code length in bits of integer symbols under discretized Laplace
/// distributions.
#[pyfunction]
fn laplace_bits(values: Vec<f64>, mu: Vec<f64>, sigma: Vec<f64>) -> PyResult<f64> {
    if values.len() != mu.len() || values.len() != sigma.len() {
        return Err(VcmlabError::new_err("values, mu and sigma must have equal length"));
    }
    Ok(core_laplace_bits(&values, &mu, &sigma))
}

/// `points` are (bpp, value) pairs. For "psnr" values are in dB; any other
/// metric takes values in [0, 1].
fn curve(id: &str, metric: &Metric, points: &[(f64, f64)]) -> PyResult<RDCurve> {
    let pts = points
        .iter()
        .map(|&(bpp, v)| {
            let mut p = RDPoint {
                model: id.to_string(),
                lambda: None,
                bpp,
                psnr_db: None,
                ms_ssim: None,
                task_metric: None,
            };
            match metric {
                Metric::Psnr => p.psnr_db = Some(v),
                Metric::MsSsim => p.ms_ssim = Some(v),
                Metric::Task(name) => {
                    p.task_metric = Some(TaskMetric {
                        name: name.clone(),
                        value: v,
                    })
                }
            }
            p
        })
        .collect();
    RDCurve::new(id, pts).map_err(err)
}

/// Quality gap of `test` over `anchor` at equal rate: dB for PSNR,
/// percentage points otherwise.
#[pyfunction]
#[pyo3(signature = (anchor, test, metric = "psnr"))]
fn bd_quality(anchor: Vec<(f64, f64)>, test: Vec<(f64, f64)>, metric: &str) -> PyResult<f64> {
    let m = Metric::parse(metric);
    eval::bd_quality(&curve("anchor", &m, &anchor)?, &curve("test", &m, &test)?, &m).map_err(err)
}

/// Rate change of `test` over `anchor` at equal quality, in percent.
#[pyfunction]
#[pyo3(signature = (anchor, test, metric = "psnr"))]
fn bd_rate(anchor: Vec<(f64, f64)>, test: Vec<(f64, f64)>, metric: &str) -> PyResult<f64> {
    let m = Metric::parse(metric);
    eval::bd_rate(&curve("anchor", &m, &anchor)?, &curve("test", &m, &test)?, &m).map_err(err)
}

#[pymodule]
#[pyo3(name = "vcmlab")]
fn vcmlab_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("VcmlabError", m.py().get_type::<VcmlabError>())?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyCodec>()?;
    m.add_class::<PyTaskNet>()?;
    m.add_class::<PyShapes>()?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(finetune, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ms_ssim, m)?)?;
    m.add_function(wrap_pyfunction!(miou, m)?)?;
    m.add_function(wrap_pyfunction!(laplace_bits, m)?)?;
    m.add_function(wrap_pyfunction!(bd_quality, m)?)?;
    m.add_function(wrap_pyfunction!(bd_rate, m)?)?;
    Ok(())
}
