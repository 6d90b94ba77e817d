//! Python bindings. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use imsvd::config::TrainConfig;
use imsvd::data::{generate_world, AttributeWorldSpec};
use imsvd::discretize::{self as disc, BlockLayout, DiscretizedBatch};
use imsvd::eval::{self, VerifyOptions};
use imsvd::infotheory;
use imsvd::loss::{self as lossfn, LossVariant, LossWeights};
use imsvd::model::ModelParams;
use imsvd::tensor::Matrix;
use imsvd::trainer::{self, FitOptions, GradCheckCase, MODEL_FILE};

create_exception!(imsvd_py, ImsvdError, PyException);

fn err(e: imsvd::ImsvdError) -> PyErr {
    ImsvdError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(ImsvdError::new_err("rows have different lengths"));
    }
    let n = rows.len();
    Matrix::from_vec(n, cols, rows.into_iter().flatten().collect()).map_err(err)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn layout(m: usize, dm: usize) -> PyResult<BlockLayout> {
    BlockLayout::new(m, dm).map_err(err)
}

fn batch(q: Vec<Vec<f64>>, m: usize, dm: usize) -> PyResult<DiscretizedBatch> {
    DiscretizedBatch::new(matrix(q)?, layout(m, dm)?).map_err(err)
}

/// Block softmax of `z` with `m` variables of `dm` units.
#[pyfunction]
#[pyo3(name = "discretize")]
fn discretize_py(z: Vec<Vec<f64>>, m: usize, dm: usize) -> PyResult<Vec<Vec<f64>>> {
    let q = disc::discretize_batch(&matrix(z)?, layout(m, dm)?).map_err(err)?;
    Ok(rows(q.q()))
}

/// `(M·D_M)²` cross-joint matrix of two code batches.
#[pyfunction]
fn cross_joint(
    q1: Vec<Vec<f64>>,
    q2: Vec<Vec<f64>>,
    m: usize,
    dm: usize,
) -> PyResult<Vec<Vec<f64>>> {
    let c = disc::cross_joint(&batch(q1, m, dm)?, &batch(q2, m, dm)?).map_err(err)?;
    Ok(rows(c.matrix()))
}

/// Loss terms of two code batches as a dict.
#[pyfunction]
#[pyo3(name = "loss", signature = (q1, q2, m, dm, variant = "full", lam = 1.0))]
fn loss_py<'py>(
    py: Python<'py>,
    q1: Vec<Vec<f64>>,
    q2: Vec<Vec<f64>>,
    m: usize,
    dm: usize,
    variant: &str,
    lam: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let variant: LossVariant = variant.parse().map_err(err)?;
    let weights = LossWeights::new(lam, 1.0).map_err(err)?;
    let b = lossfn::evaluate_loss(&batch(q1, m, dm)?, &batch(q2, m, dm)?, weights, variant)
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("total", b.total)?;
    d.set_item("ti", b.ti)?;
    d.set_item("de", b.de)?;
    d.set_item("oe", b.oe)?;
    d.set_item("tic", b.tic)?;
    Ok(d)
}

/// Hard codes of the constructed optimum (`dm` must be prime).
#[pyfunction]
fn fixed_point_codes(m: usize, dm: usize) -> PyResult<Vec<Vec<usize>>> {
    lossfn::fixed_point_codes(layout(m, dm)?).map_err(err)
}

/// One-hot encoding of hard codes.
#[pyfunction]
fn codes_to_onehot(codes: Vec<Vec<usize>>, m: usize, dm: usize) -> PyResult<Vec<Vec<f64>>> {
    let q = DiscretizedBatch::from_codes(&codes, layout(m, dm)?).map_err(err)?;
    Ok(rows(q.q()))
}

/// `S̄(1)`, `C̄(2)` and pairwise mutual information of a code batch.
#[pyfunction]
fn info_summary<'py>(
    py: Python<'py>,
    q: Vec<Vec<f64>>,
    m: usize,
    dm: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let s = infotheory::summarize(&batch(q, m, dm)?).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("s1", s.s1)?;
    d.set_item("c2", s.c2)?;
    d.set_item("max_mi", s.max_mi)?;
    d.set_item("mean_mi", s.mean_mi)?;
    Ok(d)
}

/// kNN top-1 accuracy.
#[pyfunction]
fn knn_eval(
    train: Vec<Vec<f64>>,
    train_labels: Vec<usize>,
    test: Vec<Vec<f64>>,
    test_labels: Vec<usize>,
    k: usize,
) -> PyResult<f64> {
    eval::knn_eval(
        &matrix(train)?,
        &train_labels,
        &matrix(test)?,
        &test_labels,
        k,
    )
    .map_err(err)
}

/// Maximum relative error of the loss gradient check on a random model.
#[pyfunction]
#[pyo3(signature = (m, dm, n, variant = "full", seed = 0, h = 1e-5))]
fn grad_check(m: usize, dm: usize, n: usize, variant: &str, seed: u64, h: f64) -> PyResult<f64> {
    let variant: LossVariant = variant.parse().map_err(err)?;
    let case = GradCheckCase {
        m,
        dm,
        n,
        variant,
        seed,
    };
    Ok(trainer::loss_grad_check(&case, h)
        .map_err(err)?
        .max_rel_error)
}

/// Synthetic attribute world: `(x_train, labels_train, x_test, labels_test)`.
#[pyfunction]
#[pyo3(signature = (seed = 0, train_size = 8192, test_size = 2048, noise_sigma = None))]
#[allow(clippy::type_complexity)]
fn synthetic_world(
    seed: u64,
    train_size: usize,
    test_size: usize,
    noise_sigma: Option<f64>,
) -> PyResult<(
    Vec<Vec<f64>>,
    Vec<Vec<usize>>,
    Vec<Vec<f64>>,
    Vec<Vec<usize>>,
)> {
    let mut spec = AttributeWorldSpec {
        seed,
        train_size,
        test_size,
        ..AttributeWorldSpec::default()
    };
    if let Some(s) = noise_sigma {
        spec.noise_sigma = s;
    }
    let w = generate_world(&spec).map_err(err)?;
    Ok((
        rows(&w.train.x),
        w.train.labels,
        rows(&w.test.x),
        w.test.labels,
    ))
}

/// Training configuration; keys match the config file.
#[pyclass(name = "TrainConfig", from_py_object)]
#[derive(Clone)]
struct PyTrainConfig {
    inner: TrainConfig,
}

#[pymethods]
impl PyTrainConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = TrainConfig::default();
        if let Some(kw) = kwargs {
            for (k, v) in kw.iter() {
                let key: String = k.extract()?;
                inner.set(&key, &v.str()?.to_string()).map_err(err)?;
            }
        }
        Ok(PyTrainConfig { inner })
    }

    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        self.inner.set(key, &value.str()?.to_string()).map_err(err)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .to_manifest()
            .get(key)
            .map(str::to_string)
            .ok_or_else(|| ImsvdError::new_err(format!("unknown config key {key:?}")))
    }

    fn to_text(&self) -> String {
        self.inner.to_manifest().to_text()
    }

    fn __repr__(&self) -> String {
        format!("TrainConfig({})", self.to_text().trim().replace('\n', ", "))
    }
}

/// Trained encoder and projector.
#[pyclass(name = "Model")]
struct PyModel {
    params: ModelParams,
}

#[pymethods]
impl PyModel {
    /// Loads a checkpoint file or a run directory holding one.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let file = if path.is_dir() {
            path.join(MODEL_FILE)
        } else {
            path
        };
        let (params, _) = trainer::load_model(&file).map_err(err)?;
        Ok(PyModel { params })
    }

    #[getter]
    fn m(&self) -> usize {
        self.params.layout().variables()
    }

    #[getter]
    fn dm(&self) -> usize {
        self.params.layout().units()
    }

    fn embed(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(
            &eval::embeddings(&self.params, &matrix(x)?).map_err(err)?,
        ))
    }

    fn codes(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(
            eval::codes(&self.params, &matrix(x)?).map_err(err)?.q(),
        ))
    }

    /// Fixed-point statistics on `x` as a dict.
    #[pyo3(signature = (x, seed = 0))]
    fn verify<'py>(
        &self,
        py: Python<'py>,
        x: Vec<Vec<f64>>,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let opts = VerifyOptions {
            seed,
            ..VerifyOptions::default()
        };
        let r = eval::theorem_verify(&self.params, &matrix(x)?, &opts).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("onehot_frac_090", r.onehot_frac_090)?;
        d.set_item("onehot_frac_099", r.onehot_frac_099)?;
        d.set_item("marginal_entropy_ratio", r.marginal_entropy_ratio)?;
        d.set_item("max_pairwise_mi", r.max_pairwise_mi)?;
        d.set_item("mean_pairwise_mi", r.mean_pairwise_mi)?;
        d.set_item("ti_mean", r.ti_mean)?;
        d.set_item("offdiag_uniformity", r.offdiag_uniformity)?;
        Ok(d)
    }

    /// Fraction of samples whose hard code collides with a differently
    /// labelled sample.
    fn code_collisions(&self, x: Vec<Vec<f64>>, labels: Vec<Vec<usize>>) -> PyResult<f64> {
        eval::code_distinctness(&self.params, &matrix(x)?, &labels).map_err(err)
    }
}

/// Trains on the synthetic world for `config.seed_data`; writes
/// checkpoints and metrics when `out_dir` is given. Returns the model and
/// the per-epoch total loss.
#[pyfunction]
#[pyo3(signature = (config, out_dir = None))]
fn train(
    py: Python<'_>,
    config: &PyTrainConfig,
    out_dir: Option<PathBuf>,
) -> PyResult<(PyModel, Vec<f64>)> {
    let cfg = config.inner.clone();
    let result = py
        .detach(move || {
            let world = generate_world(&AttributeWorldSpec {
                seed: cfg.seed_data,
                ..AttributeWorldSpec::default()
            })?;
            trainer::fit(
                &cfg,
                &world.train,
                &FitOptions {
                    out_dir,
                    resume: None,
                },
            )
        })
        .map_err(err)?;
    let losses = result.metrics.iter().map(|m| m.loss.total).collect();
    Ok((
        PyModel {
            params: result.params,
        },
        losses,
    ))
}

#[pymodule]
fn imsvd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ImsvdError", m.py().get_type::<ImsvdError>())?;
    m.add_class::<PyTrainConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(discretize_py, m)?)?;
    m.add_function(wrap_pyfunction!(cross_joint, m)?)?;
    m.add_function(wrap_pyfunction!(loss_py, m)?)?;
    m.add_function(wrap_pyfunction!(fixed_point_codes, m)?)?;
    m.add_function(wrap_pyfunction!(codes_to_onehot, m)?)?;
    m.add_function(wrap_pyfunction!(info_summary, m)?)?;
    m.add_function(wrap_pyfunction!(knn_eval, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_world, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
