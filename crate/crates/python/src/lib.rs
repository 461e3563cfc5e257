//! Python bindings for `rha`.
//!
//! Matrices cross the boundary as lists of rows (any sequence of sequences of
//! floats, NumPy arrays included) and come back as lists of rows. Masks are
//! 0/1 matrices of the same shape. Fits take a user seed and derive the
//! weight-init and shuffle streams from it exactly like the `rha` CLI.

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ::rha::corruption::{corrupt as corrupt_dataset, CorruptionSpec, Fill};
use ::rha::data::{self, Dataset, Geometry};
use ::rha::eval::{self, RunSeeds};
use ::rha::robust::{self, Decomposition, ProxKind, ResidualMode, RobustConfig};
use ::rha::{Autoencoder, Mask, Matrix, RhaError, Rng, TrainConfig};

type Rows = Vec<Vec<f64>>;

fn py_err(e: RhaError) -> PyErr {
    match e {
        RhaError::Io(io) => PyOSError::new_err(io.to_string()),
        RhaError::Numerical { .. } | RhaError::Division(_) => {
            PyArithmeticError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    Matrix::from_rows(rows).map_err(py_err)
}

fn mask(omega: &[Vec<f64>], fill: f64) -> PyResult<Mask> {
    Mask::new(matrix(omega)?, fill).map_err(py_err)
}

/// Training and alternation settings shared by every fit function.
#[pyclass(name = "FitConfig", from_py_object)]
#[derive(Clone, Debug)]
pub struct FitConfig {
    #[pyo3(get, set)]
    pub lam: f64,
    #[pyo3(get, set)]
    pub prox: String,
    #[pyo3(get, set)]
    pub inner_epochs: usize,
    #[pyo3(get, set)]
    pub outer_iters: usize,
    #[pyo3(get, set)]
    pub epsilon: f64,
    #[pyo3(get, set)]
    pub lr: f64,
    #[pyo3(get, set)]
    pub batch_size: usize,
    #[pyo3(get, set)]
    pub hidden: Vec<usize>,
    #[pyo3(get, set)]
    pub residual: String,
}

#[pymethods]
impl FitConfig {
    #[new]
    #[pyo3(signature = (lam=0.1, prox="l1".to_owned(), inner_epochs=5, outer_iters=10, epsilon=1e-5, lr=0.01, batch_size=40, hidden=vec![200, 50], residual="masked".to_owned()))]
    #[allow(clippy::too_many_arguments)]
    fn py_new(
        lam: f64,
        prox: String,
        inner_epochs: usize,
        outer_iters: usize,
        epsilon: f64,
        lr: f64,
        batch_size: usize,
        hidden: Vec<usize>,
        residual: String,
    ) -> Self {
        Self {
            lam,
            prox,
            inner_epochs,
            outer_iters,
            epsilon,
            lr,
            batch_size,
            hidden,
            residual,
        }
    }

    fn __repr__(&self) -> String {
        format!("{self:?}")
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        Self::py_new(
            0.1,
            "l1".into(),
            5,
            10,
            1e-5,
            0.01,
            40,
            vec![200, 50],
            "masked".into(),
        )
    }
}

impl FitConfig {
    /// The library config plus the weight-init seed for `seed`.
    pub fn resolve(&self, seed: u64) -> Result<(RobustConfig, u64), RhaError> {
        let seeds = RunSeeds::derive(seed);
        let residual = match self.residual.as_str() {
            "masked" => ResidualMode::Masked,
            "unmasked" => ResidualMode::Unmasked,
            r => {
                return Err(RhaError::Parameter(format!(
                    "residual must be masked or unmasked, got {r:?}"
                )))
            }
        };
        let config = RobustConfig {
            lambda: self.lam,
            prox: self.prox.parse::<ProxKind>()?,
            inner_epochs: self.inner_epochs,
            max_outer_iters: self.outer_iters,
            epsilon_conv: self.epsilon,
            residual,
            train: TrainConfig {
                learning_rate: self.lr,
                batch_size: self.batch_size,
                hidden: self.hidden.clone(),
                shuffle_seed: seeds.shuffle,
                ..TrainConfig::default()
            },
        };
        config.validate()?;
        Ok((config, seeds.init))
    }
}

#[pyclass(name = "Autoencoder", from_py_object)]
#[derive(Clone)]
pub struct PyAutoencoder {
    inner: Autoencoder,
}

#[pymethods]
impl PyAutoencoder {
    #[new]
    #[pyo3(signature = (input_width, hidden=vec![200, 50], seed=0))]
    fn py_new(input_width: usize, hidden: Vec<usize>, seed: u64) -> PyResult<Self> {
        let mut rng = Rng::new(seed);
        let inner = Autoencoder::new(input_width, &hidden, &mut rng).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn input_width(&self) -> usize {
        self.inner.input_width()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    #[getter]
    fn step_count(&self) -> u64 {
        self.inner.step_count()
    }

    fn forward(&self, x: Rows) -> PyResult<Rows> {
        Ok(self.inner.forward(&matrix(&x)?).map_err(py_err)?.to_rows())
    }

    fn encode(&self, x: Rows) -> PyResult<Rows> {
        Ok(self.inner.encode(&matrix(&x)?).map_err(py_err)?.to_rows())
    }

    #[pyo3(signature = (x, s, omega, fill=0.5))]
    fn masked_loss(&self, x: Rows, s: Rows, omega: Rows, fill: f64) -> PyResult<f64> {
        self.inner
            .masked_loss(&matrix(&x)?, &matrix(&s)?, &mask(&omega, fill)?)
            .map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Autoencoder::load(path).map_err(py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        let widths: Vec<String> = std::iter::once(self.inner.input_width())
            .chain(self.inner.layers().iter().map(|l| l.fan_out()))
            .map(|w| w.to_string())
            .collect();
        format!("Autoencoder({})", widths.join("-"))
    }
}

fn decomposition_dict<'py>(py: Python<'py>, d: &Decomposition) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("l_d", d.l_d.to_rows())?;
    out.set_item("s", d.s.to_rows())?;
    out.set_item("c1", d.c1_trace.clone())?;
    out.set_item("c2", d.c2_trace.clone())?;
    out.set_item("s_norm", d.s_norm_trace.clone())?;
    out.set_item("loss", d.loss_trace.clone())?;
    out.set_item("converged", d.converged)?;
    out.set_item("outer_iters", d.outer_iters_run)?;
    Ok(out)
}

fn config_or_default(config: Option<FitConfig>, seed: u64) -> PyResult<(RobustConfig, u64)> {
    config.unwrap_or_default().resolve(seed).map_err(py_err)
}

/// Robust Hadamard autoencoder fit; returns `(model, decomposition dict)`.
#[pyfunction]
#[pyo3(signature = (x, omega=None, config=None, seed=0, fill=0.5))]
fn rha_fit<'py>(
    py: Python<'py>,
    x: Rows,
    omega: Option<Rows>,
    config: Option<FitConfig>,
    seed: u64,
    fill: f64,
) -> PyResult<(PyAutoencoder, Bound<'py, PyDict>)> {
    let x = matrix(&x)?;
    let m = match omega {
        Some(o) => mask(&o, fill)?,
        None => Mask::all_observed(x.rows(), x.cols()),
    };
    let (cfg, init) = config_or_default(config, seed)?;
    let (model, d) = py
        .detach(|| robust::rha_fit(&x, &m, &cfg, init))
        .map_err(py_err)?;
    Ok((PyAutoencoder { inner: model }, decomposition_dict(py, &d)?))
}

/// Robust deep autoencoder fit (no mask support); returns `(model, decomposition dict)`.
#[pyfunction]
#[pyo3(signature = (x, config=None, seed=0))]
fn rdae_fit<'py>(
    py: Python<'py>,
    x: Rows,
    config: Option<FitConfig>,
    seed: u64,
) -> PyResult<(PyAutoencoder, Bound<'py, PyDict>)> {
    let x = matrix(&x)?;
    let (cfg, init) = config_or_default(config, seed)?;
    let (model, d) = py
        .detach(|| robust::rdae_fit(&x, &cfg, init))
        .map_err(py_err)?;
    Ok((PyAutoencoder { inner: model }, decomposition_dict(py, &d)?))
}

/// Plain autoencoder trained on `x` for the full epoch budget.
#[pyfunction]
#[pyo3(signature = (x, config=None, seed=0))]
fn sae_fit(
    py: Python<'_>,
    x: Rows,
    config: Option<FitConfig>,
    seed: u64,
) -> PyResult<PyAutoencoder> {
    let x = matrix(&x)?;
    let (cfg, init) = config_or_default(config, seed)?;
    let inner = py
        .detach(|| robust::sae_fit(&x, &cfg, init))
        .map_err(py_err)?;
    Ok(PyAutoencoder { inner })
}

/// Mask-weighted autoencoder with no sparse term.
#[pyfunction]
#[pyo3(signature = (x, omega, config=None, seed=0, fill=0.5))]
fn inpaint_fit(
    py: Python<'_>,
    x: Rows,
    omega: Rows,
    config: Option<FitConfig>,
    seed: u64,
    fill: f64,
) -> PyResult<PyAutoencoder> {
    let (x, m) = (matrix(&x)?, mask(&omega, fill)?);
    let (cfg, init) = config_or_default(config, seed)?;
    let inner = py
        .detach(|| robust::inpaint_fit(&x, &m, &cfg, init))
        .map_err(py_err)?;
    Ok(PyAutoencoder { inner })
}

#[pyfunction]
fn infer(model: &PyAutoencoder, x: Rows) -> PyResult<Rows> {
    Ok(robust::infer(&model.inner, &matrix(&x)?)
        .map_err(py_err)?
        .to_rows())
}

#[pyfunction]
fn prox_l1(a: Rows, lam: f64) -> PyResult<Rows> {
    Ok(robust::prox_l1(&matrix(&a)?, lam)
        .map_err(py_err)?
        .to_rows())
}

#[pyfunction]
fn prox_l21(a: Rows, lam: f64) -> PyResult<Rows> {
    Ok(robust::prox_l21(&matrix(&a)?, lam)
        .map_err(py_err)?
        .to_rows())
}

#[pyfunction]
fn rmse(a: Rows, b: Rows) -> PyResult<f64> {
    eval::rmse(&matrix(&a)?, &matrix(&b)?).map_err(py_err)
}

#[pyfunction]
fn pct_diff(rmse_a: f64, rmse_b: f64) -> PyResult<f64> {
    eval::pct_diff(rmse_a, rmse_b).map_err(py_err)
}

/// Salt-and-pepper noise then missing blocks; returns `(corrupted, omega)`.
#[pyfunction]
#[pyo3(signature = (x, geometry, noise=0, block=(0, 0), blocks_per_image=1, fill=0.5, seed=0))]
fn corrupt(
    x: Rows,
    geometry: (usize, usize, usize),
    noise: usize,
    block: (usize, usize),
    blocks_per_image: usize,
    fill: f64,
    seed: u64,
) -> PyResult<(Rows, Rows)> {
    let g = Geometry::new(geometry.0, geometry.1, geometry.2);
    let ds = Dataset::new(matrix(&x)?, g, "python").map_err(py_err)?;
    let spec = CorruptionSpec {
        noise_pixels_per_image: noise,
        block_height: block.0,
        block_width: block.1,
        blocks_per_image,
        fill: Fill::Constant(fill),
        seed,
    };
    let c = corrupt_dataset(&ds, &spec).map_err(py_err)?;
    Ok((c.data.x.to_rows(), c.mask.indicator().to_rows()))
}

/// Sigmoid low-rank matrix plus sparse spikes; returns a dict with
/// `clean`, `spikes` and `corrupted`.
#[pyfunction]
fn make_synthetic<'py>(
    py: Python<'py>,
    rows: usize,
    cols: usize,
    rank: usize,
    spike_fraction: f64,
    spike_magnitude: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let t = data::make_synthetic(rows, cols, rank, spike_fraction, spike_magnitude, seed)
        .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("clean", t.clean.x.to_rows())?;
    out.set_item("spikes", t.spikes.to_rows())?;
    out.set_item("corrupted", t.corrupted().to_rows())?;
    Ok(out)
}

#[pyfunction]
fn load_mnist_idx(path: &str) -> PyResult<Rows> {
    Ok(data::load_mnist_idx(path).map_err(py_err)?.x.to_rows())
}

#[pyfunction]
fn load_cifar10(path: &str) -> PyResult<Rows> {
    Ok(data::load_cifar10(path).map_err(py_err)?.x.to_rows())
}

#[pyfunction]
fn save_matrix(m: Rows, path: &str) -> PyResult<()> {
    data::save_matrix(&matrix(&m)?, path).map_err(py_err)
}

#[pyfunction]
fn load_matrix(path: &str) -> PyResult<Rows> {
    Ok(data::load_matrix(path).map_err(py_err)?.to_rows())
}

#[pymodule]
fn rha(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyAutoencoder>()?;
    m.add_class::<FitConfig>()?;
    m.add_function(wrap_pyfunction!(rha_fit, m)?)?;
    m.add_function(wrap_pyfunction!(rdae_fit, m)?)?;
    m.add_function(wrap_pyfunction!(sae_fit, m)?)?;
    m.add_function(wrap_pyfunction!(inpaint_fit, m)?)?;
    m.add_function(wrap_pyfunction!(infer, m)?)?;
    m.add_function(wrap_pyfunction!(prox_l1, m)?)?;
    m.add_function(wrap_pyfunction!(prox_l21, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(pct_diff, m)?)?;
    m.add_function(wrap_pyfunction!(corrupt, m)?)?;
    m.add_function(wrap_pyfunction!(make_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(load_mnist_idx, m)?)?;
    m.add_function(wrap_pyfunction!(load_cifar10, m)?)?;
    m.add_function(wrap_pyfunction!(save_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(load_matrix, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
