//! Python bindings: `import paeff`.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use paeff_core::data::{self, SplitMode, SynthParams};
use paeff_core::eval::{self, EvalConfig, VerificationTrial};
use paeff_core::hyperbolic::{self, plain, BallConfig, PoincarePoint};
use paeff_core::losses::LossWeights;
use paeff_core::model::{Modality, ModelConfig};
use paeff_core::trainer::{self, Ablation, TrainConfig};
use paeff_core::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        Error::Numeric(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn ball(curvature: f64, boundary_eps: f64) -> PyResult<BallConfig> {
    let b = BallConfig { curvature, boundary_eps };
    b.validate().map_err(err)?;
    Ok(b)
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

#[pyfunction]
#[pyo3(signature = (v, curvature = 1.0, boundary_eps = 1e-5))]
fn exp_map_origin(v: Vec<f64>, curvature: f64, boundary_eps: f64) -> PyResult<Vec<f64>> {
    Ok(plain::exp_map_origin(&v, &ball(curvature, boundary_eps)?))
}

#[pyfunction]
#[pyo3(signature = (x, curvature = 1.0, boundary_eps = 1e-5))]
fn log_map_origin(x: Vec<f64>, curvature: f64, boundary_eps: f64) -> PyResult<Vec<f64>> {
    let cfg = ball(curvature, boundary_eps)?;
    let mut g = paeff_core::autodiff::Graph::new();
    let v = g.constant(paeff_core::autodiff::Tensor::vector(x));
    let p = hyperbolic::project_to_ball(&mut g, v, cfg).map_err(err)?;
    let out = hyperbolic::log_map_origin(&mut g, &PoincarePoint { vector: p.vector, config: cfg }).map_err(err)?;
    Ok(g.value(out).to_vec())
}

#[pyfunction]
#[pyo3(signature = (x, y, curvature = 1.0, boundary_eps = 1e-5))]
fn mobius_add(x: Vec<f64>, y: Vec<f64>, curvature: f64, boundary_eps: f64) -> PyResult<Vec<f64>> {
    if x.len() != y.len() {
        return Err(PyValueError::new_err("x and y differ in length"));
    }
    Ok(plain::mobius_add(&x, &y, &ball(curvature, boundary_eps)?))
}

#[pyfunction]
#[pyo3(signature = (x, y, curvature = 1.0, boundary_eps = 1e-5))]
fn poincare_distance(x: Vec<f64>, y: Vec<f64>, curvature: f64, boundary_eps: f64) -> PyResult<f64> {
    if x.len() != y.len() {
        return Err(PyValueError::new_err("x and y differ in length"));
    }
    Ok(plain::distance(&x, &y, &ball(curvature, boundary_eps)?))
}

fn trials(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<Vec<VerificationTrial>> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err("scores and labels differ in length"));
    }
    Ok(scores.into_iter().zip(labels).map(|(s, m)| VerificationTrial::new(s, m)).collect())
}

/// Equal error rate and its threshold; labels are True for matching pairs.
#[pyfunction]
fn compute_eer(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<(f64, f64)> {
    let e = eval::compute_eer(&trials(scores, labels)?).map_err(err)?;
    Ok((e.eer, e.threshold))
}

#[pyfunction]
fn compute_auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    eval::compute_auc(&trials(scores, labels)?).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (l_align, l_op, l_ce, alpha1 = 0.3, alpha2 = 0.35, alpha3 = 0.35))]
fn total_loss(py: Python<'_>, l_align: f64, l_op: f64, l_ce: f64, alpha1: f64, alpha2: f64, alpha3: f64) -> PyResult<Bound<'_, PyDict>> {
    let b = paeff_core::losses::total_loss(l_align, l_op, l_ce, &LossWeights { alpha1, alpha2, alpha3 }).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("l_align", b.l_align)?;
    d.set_item("l_op", b.l_op)?;
    d.set_item("l_ce", b.l_ce)?;
    d.set_item("total", b.total)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (t, total, lr0 = 2e-5, lr_min = 0.0))]
fn cosine_lr(t: usize, total: usize, lr0: f64, lr_min: f64) -> PyResult<f64> {
    trainer::cosine_lr(t, total, lr0, lr_min).map_err(err)
}

/// Embedding records in the `#fve v1` layout.
#[pyclass(name = "Dataset", module = "paeff")]
struct PyDataset {
    inner: data::Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (num_identities = 32, samples_per_id = 20, face_dim = 96, voice_dim = 80, coupling = 1.0, noise = 0.1, latent_dim = 16, demographics = false, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn synth(
        num_identities: usize,
        samples_per_id: usize,
        face_dim: usize,
        voice_dim: usize,
        coupling: f64,
        noise: f64,
        latent_dim: usize,
        demographics: bool,
        seed: u64,
    ) -> PyResult<Self> {
        let p = SynthParams {
            num_identities,
            samples_per_id,
            face_dim,
            voice_dim,
            coupling,
            noise,
            latent_dim,
            demographics,
            seed,
        };
        Ok(PyDataset { inner: data::synth_generate(&p).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyDataset { inner: data::Dataset::load(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn to_tsv(&self) -> PyResult<String> {
        self.inner.to_tsv().map_err(err)
    }

    fn identities(&self) -> Vec<String> {
        self.inner.identities()
    }

    #[getter]
    fn face_dim(&self) -> usize {
        self.inner.face_dim
    }

    #[getter]
    fn voice_dim(&self) -> usize {
        self.inner.voice_dim
    }

    /// Vectors of one modality, optionally restricted to one identity.
    #[pyo3(signature = (modality, identity = None))]
    fn vectors(&self, modality: &str, identity: Option<&str>) -> PyResult<Vec<Vec<f64>>> {
        let m: Modality = modality.parse().map_err(err)?;
        Ok(self
            .inner
            .records
            .iter()
            .filter(|r| r.modality == m && identity.is_none_or(|id| r.identity_id == id))
            .map(|r| r.vector.clone())
            .collect())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Train/val/test membership.
#[pyclass(name = "Split", module = "paeff")]
struct PySplit {
    inner: data::SplitSpec,
}

#[pymethods]
impl PySplit {
    #[staticmethod]
    #[pyo3(signature = (dataset, n_val = 4, n_test = 8, seed = 0, mode = "unseen_unheard"))]
    fn random(dataset: &PyDataset, n_val: usize, n_test: usize, seed: u64, mode: &str) -> PyResult<Self> {
        let mode: SplitMode = mode.parse().map_err(err)?;
        Ok(PySplit {
            inner: data::SplitSpec::random(&dataset.inner, mode, n_val, n_test, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (train, test, val = None, mode = "unseen_unheard"))]
    fn load(train: PathBuf, test: PathBuf, val: Option<PathBuf>, mode: &str) -> PyResult<Self> {
        let mode: SplitMode = mode.parse().map_err(err)?;
        Ok(PySplit {
            inner: data::SplitSpec::load(mode, &train, val.as_deref(), &test).map_err(err)?,
        })
    }

    #[getter]
    fn train(&self) -> Vec<String> {
        self.inner.train.iter().cloned().collect()
    }

    #[getter]
    fn val(&self) -> Vec<String> {
        self.inner.val.iter().cloned().collect()
    }

    #[getter]
    fn test(&self) -> Vec<String> {
        self.inner.test.iter().cloned().collect()
    }
}

/// A trained model.
#[pyclass(name = "Model", module = "paeff")]
struct PyModel {
    inner: paeff_core::model::Model,
}

#[pymethods]
impl PyModel {
    /// Loads the selected checkpoint of a `paeff train` output directory.
    #[staticmethod]
    fn load(run_dir: PathBuf) -> PyResult<Self> {
        let m = paeff_core::manifest::RunManifest::load(&run_dir.join(paeff_core::manifest::FILE_NAME)).map_err(err)?;
        let cfg = m.model.ok_or_else(|| PyValueError::new_err("manifest does not describe a training run"))?;
        let params = paeff_core::checkpoint::load(&run_dir.join(paeff_core::cli::CHECKPOINT_FILE), &cfg).map_err(err)?;
        Ok(PyModel {
            inner: paeff_core::model::Model { config: cfg, params },
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        paeff_core::checkpoint::save(&path, &self.inner.params).map_err(err)
    }

    /// Similarity of one face vector and one voice vector; higher means same identity.
    fn score(&self, face: Vec<f64>, voice: Vec<f64>) -> PyResult<f64> {
        self.inner.score_pair(&face, &voice).map_err(err)
    }

    fn embed(&self, modality: &str, vectors: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let m: Modality = modality.parse().map_err(err)?;
        let refs: Vec<&[f64]> = vectors.iter().map(Vec::as_slice).collect();
        self.inner.embed(m, &refs).map_err(err)
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let text = serde_json::to_string(&self.inner.config).map_err(|e| PyValueError::new_err(e.to_string()))?;
        json_to_py(py, &text)
    }

    /// Verification, strata and matching on one part; returns the report as a dict.
    #[pyo3(signature = (dataset, split, part = "test", max_trials = 10000, matching_trials = 1000, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        dataset: &PyDataset,
        split: &PySplit,
        part: &str,
        max_trials: usize,
        matching_trials: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let part = match part {
            "train" => data::Part::Train,
            "val" => data::Part::Val,
            "test" => data::Part::Test,
            other => return Err(PyValueError::new_err(format!("unknown part `{other}`"))),
        };
        let cfg = EvalConfig {
            max_trials,
            matching_trials,
            seed,
            ..EvalConfig::default()
        };
        let r = eval::evaluate(&self.inner, &dataset.inner, &split.inner, part, &cfg, None).map_err(err)?;
        json_to_py(py, &r.to_json().map_err(err)?)
    }
}

/// Trains on `split.train`; returns the selected model and the per-epoch log.
#[pyfunction]
#[pyo3(signature = (dataset, split, epochs = 50, lr0 = 2e-5, batch_size = None, proj_dim = 128, ablation = "full", seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    split: &PySplit,
    epochs: usize,
    lr0: f64,
    batch_size: Option<usize>,
    proj_dim: usize,
    ablation: &str,
    seed: u64,
) -> PyResult<(PyModel, Bound<'py, PyAny>)> {
    let ablation: Ablation = ablation.parse().map_err(err)?;
    let mut mc = ModelConfig::new(dataset.inner.face_dim, dataset.inner.voice_dim, 2);
    mc.proj_dim = proj_dim;
    let tc = TrainConfig {
        epochs,
        lr0,
        batch_size,
        ablation,
        seed,
        ..TrainConfig::default()
    };
    let out = trainer::train(&dataset.inner, &split.inner, &mc, &tc).map_err(err)?;
    let log = serde_json::to_string(&out.log).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((PyModel { inner: out.best }, json_to_py(py, &log)?))
}

#[pymodule]
fn paeff(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(exp_map_origin, m)?)?;
    m.add_function(wrap_pyfunction!(log_map_origin, m)?)?;
    m.add_function(wrap_pyfunction!(mobius_add, m)?)?;
    m.add_function(wrap_pyfunction!(poincare_distance, m)?)?;
    m.add_function(wrap_pyfunction!(compute_eer, m)?)?;
    m.add_function(wrap_pyfunction!(compute_auc, m)?)?;
    m.add_function(wrap_pyfunction!(total_loss, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_lr, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PySplit>()?;
    m.add_class::<PyModel>()?;
    Ok(())
}
