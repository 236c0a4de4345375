//! Python bindings: the OCSVM dual solver, the guidance penalty, metrics,
//! corruptions and trained autoencoder checkpoints.

use std::fs::File;
use std::io::BufReader;

use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ogae_core::autodiff::{Graph, Tensor};
use ogae_core::data::{corrupt_image, Corruption};
use ogae_core::guidance::{guidance_penalty as penalty_term, BetaSchedule, GuidanceConfig};
use ogae_core::kernel::{gram, KernelSpec, DEFAULT_JITTER};
use ogae_core::metrics;
use ogae_core::models::{per_sample_mse, read_checkpoint};
use ogae_core::ocsvm::{solve_dual, solve_dual_points, OcsvmModel, OcsvmSolution, OcsvmSpec};

fn py_err(e: ogae_core::Error) -> PyErr {
    if e.is_numeric() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn rows_tensor(rows: &[Vec<f64>]) -> PyResult<Tensor> {
    Tensor::from_rows(rows).map_err(py_err)
}

/// One-class SVM fitted on the rows of `points` with an RBF kernel.
#[pyclass(name = "OneClassSvm")]
struct PyOneClassSvm {
    solution: OcsvmSolution,
    model: OcsvmModel,
}

#[pymethods]
impl PyOneClassSvm {
    #[new]
    fn fit(points: Vec<Vec<f64>>, nu: f64, gamma: f64) -> PyResult<Self> {
        let kernel = KernelSpec::rbf(gamma).map_err(py_err)?;
        let spec = OcsvmSpec::new(nu, points.len()).map_err(py_err)?;
        let refs: Vec<&[f64]> = points.iter().map(|p| p.as_slice()).collect();
        let solution = solve_dual_points(&kernel, &refs, DEFAULT_JITTER, &spec).map_err(py_err)?;
        let model = OcsvmModel::from_points(&solution, kernel, &refs).map_err(py_err)?;
        Ok(PyOneClassSvm { solution, model })
    }

    /// `f(z)` for each row; negative outside the estimated support.
    fn decision_function(&self, points: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        points.iter().map(|p| self.model.decision(p).map_err(py_err)).collect()
    }

    #[getter]
    fn alpha(&self) -> Vec<f64> {
        self.solution.alpha.clone()
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.solution.rho
    }

    #[getter]
    fn support_indices(&self) -> Vec<usize> {
        self.solution.support_indices()
    }

    #[getter]
    fn margin_indices(&self) -> Vec<usize> {
        self.solution.margin_sv_indices.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "OneClassSvm(n={}, nu={}, support={}, rho={:.6})",
            self.solution.n(),
            self.solution.nu,
            self.model.support_vectors.len(),
            self.solution.rho
        )
    }
}

/// Solves the dual for a precomputed Gram matrix; returns `(alpha, rho)`.
#[pyfunction]
fn solve_gram(kernel_matrix: Vec<Vec<f64>>, nu: f64) -> PyResult<(Vec<f64>, f64)> {
    let n = kernel_matrix.len();
    if kernel_matrix.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("kernel matrix must be square"));
    }
    let k = ogae_core::kernel::GramMatrix::from_values(n, kernel_matrix.concat(), 0.0).map_err(py_err)?;
    let spec = OcsvmSpec::new(nu, n).map_err(py_err)?;
    let sol = solve_dual(&k, &spec).map_err(py_err)?;
    Ok((sol.alpha, sol.rho))
}

/// RBF Gram matrix of the rows of `points` (no jitter).
#[pyfunction]
fn rbf_gram(points: Vec<Vec<f64>>, gamma: f64) -> PyResult<Vec<Vec<f64>>> {
    let kernel = KernelSpec::rbf(gamma).map_err(py_err)?;
    let refs: Vec<&[f64]> = points.iter().map(|p| p.as_slice()).collect();
    let k = gram(&kernel, &refs, 0.0).map_err(py_err)?;
    Ok(k.values().chunks(points.len().max(1)).map(|r| r.to_vec()).collect())
}

/// Guidance penalty of a batch of latents and its gradient with respect to
/// them. `beta1` weights the expander, `1 - beta1` the compactor. Returns
/// `(penalty, gradient)`, or `None` when the batch is too small to split.
#[pyfunction]
#[pyo3(signature = (latents, nu, gamma, beta1 = 0.5, expander_through_qp = true))]
fn guidance_penalty(
    latents: Vec<Vec<f64>>,
    nu: f64,
    gamma: f64,
    beta1: f64,
    expander_through_qp: bool,
) -> PyResult<Option<(f64, Vec<Vec<f64>>)>> {
    let kernel = KernelSpec::rbf(gamma).map_err(py_err)?;
    let cfg = GuidanceConfig {
        lambda: 1.0,
        schedule: BetaSchedule::Constant { beta1 },
        expander_through_qp,
        ..Default::default()
    };
    cfg.validate().map_err(py_err)?;
    let mut g = Graph::new();
    let z = g.param(rows_tensor(&latents)?).map_err(py_err)?;
    let Some(term) = penalty_term(&mut g, z, &kernel, nu, (beta1, 1.0 - beta1), &cfg).map_err(py_err)? else {
        return Ok(None);
    };
    let value = g.value(term.penalty).data()[0];
    let grads = g.backward(term.penalty).map_err(py_err)?;
    let gz = grads.get(z);
    let d = latents.first().map(|r| r.len()).unwrap_or(0);
    Ok(Some((value, gz.data().chunks(d.max(1)).map(|r| r.to_vec()).collect())))
}

/// AUROC, AUPR, partial AUC (FPR ≤ 0.3) and standardized AUROC30.
/// `labels` are `True` for anomalies; higher scores mean more anomalous.
#[pyfunction]
fn curve_metrics<'py>(py: Python<'py>, scores: Vec<f64>, labels: Vec<bool>) -> PyResult<Bound<'py, PyDict>> {
    let m = metrics::curve_metrics(&scores, &labels).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("auroc", m.auroc)?;
    d.set_item("aupr", m.aupr)?;
    d.set_item("partial_auc", m.partial_auc)?;
    d.set_item("auroc30", m.auroc30)?;
    Ok(d)
}

/// Applies a named corruption with default parameters to one flattened image
/// in [0, 1]. `index` selects the random draw of stochastic corruptions.
#[pyfunction]
#[pyo3(signature = (image, height, width, kind, seed = 0, index = 0))]
fn corrupt(image: Vec<f64>, height: usize, width: usize, kind: &str, seed: u64, index: u64) -> PyResult<Vec<f64>> {
    let c = Corruption::by_name(kind).ok_or_else(|| PyValueError::new_err(format!("unknown corruption {kind:?}")))?;
    if image.len() != height * width {
        return Err(PyValueError::new_err("image length must equal height * width"));
    }
    Ok(corrupt_image(&c, &image, height, width, seed, index))
}

/// Trained autoencoder loaded from a checkpoint written by `ogae train`.
#[pyclass(name = "Autoencoder")]
struct PyAutoencoder {
    inner: ogae_core::models::Autoencoder,
}

impl PyAutoencoder {
    fn batch(&self, images: &[Vec<f64>]) -> PyResult<Tensor> {
        let [c, h, w] = self.inner.spec().architecture.input_shape();
        if images.iter().any(|im| im.len() != c * h * w) {
            return Err(PyValueError::new_err(format!("each image must hold {} values", c * h * w)));
        }
        Tensor::new(vec![images.len(), c, h, w], images.concat()).map_err(py_err)
    }
}

#[pymethods]
impl PyAutoencoder {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let file = File::open(path).map_err(|e| PyValueError::new_err(format!("{path}: {e}")))?;
        let inner = read_checkpoint(BufReader::new(file)).map_err(py_err)?;
        Ok(PyAutoencoder { inner })
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.spec().latent_dim
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    /// Latents of flattened images.
    fn encode(&self, images: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let z = self.inner.encode(&self.batch(&images)?).map_err(py_err)?;
        Ok(z.data().chunks(self.latent_dim()).map(|r| r.to_vec()).collect())
    }

    /// Mean squared reconstruction error of each image.
    fn reconstruction_error(&self, images: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let x = self.batch(&images)?;
        let x_hat = self.inner.reconstruct(&x).map_err(py_err)?;
        per_sample_mse(&x, &x_hat).map_err(py_err)
    }
}

#[pymodule]
fn ogae(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyOneClassSvm>()?;
    m.add_class::<PyAutoencoder>()?;
    m.add_function(wrap_pyfunction!(solve_gram, m)?)?;
    m.add_function(wrap_pyfunction!(rbf_gram, m)?)?;
    m.add_function(wrap_pyfunction!(guidance_penalty, m)?)?;
    m.add_function(wrap_pyfunction!(curve_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(corrupt, m)?)?;
    Ok(())
}
