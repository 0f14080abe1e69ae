//! Python bindings: tokensets, encodings, the transformer, and the sweeps.
//! Matrices cross the boundary as lists of rows.

use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tokenset_core::autodiff::train_worst_case;
use tokenset_core::domain::{self, DomainSpec, FeatureRule, GraphonKernel};
use tokenset_core::experiments::{self as exp, ExperimentConfig, ExperimentKind, RpeChoice};
use tokenset_core::model::{self, checkpoint, ModelConfig};
use tokenset_core::rpe::{self, RpeMatrix};

fn err(e: tokenset_core::Error) -> PyErr {
    match e {
        tokenset_core::Error::Io(_) | tokenset_core::Error::NonFinite(_) | tokenset_core::Error::Degenerate(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_array(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn kernel_of(name: &str, a: f64, b: f64, c: f64) -> PyResult<GraphonKernel> {
    match name {
        "two_block_sine" => Ok(GraphonKernel::TwoBlockSine { p: a, q: b }),
        "sbm" => Ok(GraphonKernel::Sbm { intra: a, inter: b, split: c }),
        "constant" => Ok(GraphonKernel::Constant { c: a }),
        _ => Err(PyValueError::new_err(format!("unknown kernel {name:?}"))),
    }
}

fn rpe_of(kind: &str, k: usize, t: &domain::Tokenset) -> PyResult<RpeMatrix> {
    let choice = match kind {
        "random_walk" => RpeChoice::RandomWalk,
        "shortest_path" => RpeChoice::ShortestPath,
        "displacement" => RpeChoice::Displacement,
        _ => return Err(PyValueError::new_err(format!("unknown encoding {kind:?}"))),
    };
    exp::build_rpe(choice, k, t).map_err(err)
}

/// Weighted set of tokens, optionally with a graph.
#[pyclass(name = "Tokenset", module = "tokenset_lab", skip_from_py_object)]
#[derive(Clone)]
struct PyTokenset {
    inner: domain::Tokenset,
}

#[pymethods]
impl PyTokenset {
    /// Weights default to uniform and are normalized.
    #[new]
    #[pyo3(signature = (latents, features, weights=None))]
    fn new(latents: Vec<Vec<f64>>, features: Vec<Vec<f64>>, weights: Option<Vec<f64>>) -> PyResult<Self> {
        let latents = to_array(latents)?;
        let features = to_array(features)?;
        let inner = match weights {
            Some(w) => {
                let total: f64 = w.iter().sum();
                domain::Tokenset::new(latents, features, Array1::from(w) / total, None)
            }
            None => domain::Tokenset::uniform(latents, features, None),
        }
        .map_err(err)?;
        Ok(Self { inner })
    }

    /// `kernel` is two_block_sine (a = p, b = q), sbm (a = intra, b = inter,
    /// c = split) or constant (a = c). Features follow `features`.
    #[staticmethod]
    #[pyo3(signature = (kernel, n, seed, a=1.0, b=1e-3, c=0.5, sparsity=1.0, features="linear_pair"))]
    #[allow(clippy::too_many_arguments)]
    fn sample_graphon(
        kernel: &str,
        n: usize,
        seed: u64,
        a: f64,
        b: f64,
        c: f64,
        sparsity: f64,
        features: &str,
    ) -> PyResult<Self> {
        let rule = match features {
            "linear_pair" => FeatureRule::LinearPair,
            "block_indicator" => FeatureRule::BlockIndicator,
            _ => return Err(PyValueError::new_err(format!("unknown feature rule {features:?}"))),
        };
        let spec = DomainSpec::graphon(kernel_of(kernel, a, b, c)?, sparsity, rule).map_err(err)?;
        sample(&spec, n, seed)
    }

    #[staticmethod]
    #[pyo3(signature = (n, seed, radius=1.0))]
    fn sample_sphere(n: usize, seed: u64, radius: f64) -> PyResult<Self> {
        sample(&DomainSpec::sphere(radius), n, seed)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn latents(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.latents)
    }

    fn features(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.features)
    }

    fn weights(&self) -> Vec<f64> {
        self.inner.weights.to_vec()
    }

    fn adjacency(&self) -> Option<Vec<Vec<f64>>> {
        self.inner.graph.as_ref().map(|g| to_rows(g.adjacency()))
    }

    /// Scalar encodings as an `n × n` matrix; displacement returns `x_i − x_j` per component list.
    #[pyo3(signature = (kind, k=3))]
    fn rpe(&self, kind: &str, k: usize) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let r = rpe_of(kind, k, &self.inner)?;
        let n = r.n();
        Ok((0..n).map(|i| (0..n).map(|j| (0..r.dp()).map(|c| r.get(i, j, c)).collect()).collect()).collect())
    }
}

fn sample(spec: &DomainSpec, n: usize, seed: u64) -> PyResult<PyTokenset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(PyTokenset {
        inner: domain::sample_tokenset(spec, n, &mut rng).map_err(err)?,
    })
}

/// Tokenset transformer with weights in the unit spectral ball.
#[pyclass(name = "Transformer", module = "tokenset_lab", skip_from_py_object)]
#[derive(Clone)]
struct PyTransformer {
    inner: model::TransformerParams,
}

#[pymethods]
impl PyTransformer {
    /// `preset` is graph, point_cloud or classification.
    #[new]
    #[pyo3(signature = (preset="graph", seed=0))]
    fn new(preset: &str, seed: u64) -> PyResult<Self> {
        let config = match preset {
            "graph" => ModelConfig::graph_worst_case(),
            "point_cloud" => ModelConfig::point_cloud_worst_case(),
            "classification" => ModelConfig::classification(),
            _ => return Err(PyValueError::new_err(format!("unknown preset {preset:?}"))),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            inner: model::TransformerParams::init(&config, &mut rng).map_err(err)?,
        })
    }

    /// The two-point construction with logit scale `l`.
    #[staticmethod]
    fn two_point(l: f64) -> Self {
        Self {
            inner: exp::two_point_params(l),
        }
    }

    #[pyo3(signature = (tokens, encoding, k=3))]
    fn forward(&self, tokens: &PyTokenset, encoding: &str, k: usize) -> PyResult<Vec<f64>> {
        let r = rpe_of(encoding, k, &tokens.inner)?;
        Ok(model::forward(&self.inner, &tokens.inner, &r).map_err(err)?.output.to_vec())
    }

    /// Row-stochastic attention matrices, one per layer.
    #[pyo3(signature = (tokens, encoding, k=3))]
    fn attention(&self, tokens: &PyTokenset, encoding: &str, k: usize) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let r = rpe_of(encoding, k, &tokens.inner)?;
        let out = model::forward(&self.inner, &tokens.inner, &r).map_err(err)?;
        Ok(out.attention.iter().map(to_rows).collect())
    }

    fn max_spectral_norm(&self) -> f64 {
        model::max_spectral_norm(&self.inner)
    }

    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    /// Gradient-descent on `−‖Θ(reference) − Θ(sample)‖₂` with projection;
    /// returns the error trace and keeps the trained weights.
    #[pyo3(signature = (reference, sample, encoding, epochs, lr, k=3))]
    fn train_worst_case(
        &mut self,
        reference: &PyTokenset,
        sample: &PyTokenset,
        encoding: &str,
        epochs: usize,
        lr: f64,
        k: usize,
    ) -> PyResult<Vec<f64>> {
        let rr = rpe_of(encoding, k, &reference.inner)?;
        let sr = rpe_of(encoding, k, &sample.inner)?;
        let run = train_worst_case(&self.inner, (&reference.inner, &rr), (&sample.inner, &sr), epochs, lr).map_err(err)?;
        self.inner = run.params;
        Ok(run.errors)
    }

    fn save(&self, dir: &str, stem: &str) -> PyResult<()> {
        checkpoint::save(dir.as_ref(), stem, &self.inner, &[]).map_err(err)
    }

    #[staticmethod]
    fn load(dir: &str, stem: &str) -> PyResult<Self> {
        Ok(Self {
            inner: checkpoint::load(dir.as_ref(), stem).map_err(err)?,
        })
    }
}

/// Largest singular value by power iteration.
#[pyfunction]
fn spectral_norm(matrix: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(model::spectral_norm(&to_array(matrix)?, model::DEFAULT_MAX_ITERS, model::DEFAULT_TOL))
}

/// Runs a sweep and returns `(n, replicate, seed, metric, value)` rows.
/// `config` holds `key = value` lines on top of the defaults for `kind`.
#[pyfunction]
#[pyo3(signature = (kind, seed, config=""))]
fn run_sweep(py: Python<'_>, kind: &str, seed: u64, config: &str) -> PyResult<Vec<(usize, usize, u64, String, f64)>> {
    let kind: ExperimentKind = kind.parse().map_err(err)?;
    let mut c = ExperimentConfig::defaults(kind);
    c.apply_text(config).map_err(err)?;
    c.seed = Some(seed);
    let result = py
        .detach(|| match kind {
            ExperimentKind::WorstCase => exp::run_worstcase_sweep(&c),
            ExperimentKind::RpeStability => exp::run_rpe_stability_sweep(&c),
            ExperimentKind::SpInstability => exp::run_shortest_path_instability(&c),
            ExperimentKind::Classification => exp::run_classification_comparison(&c),
            ExperimentKind::Concentration => match c.mode {
                exp::ConcentrationMode::Event => exp::run_concentration_sweep(&c),
                exp::ConcentrationMode::Discretization => exp::run_discretization_sweep(&c),
            },
            ExperimentKind::Adversarial | ExperimentKind::Regularity => Err(tokenset_core::Error::InvalidArgument(
                format!("{} is not a sweep", kind.tag()),
            )),
        })
        .map_err(err)?;
    Ok(result.rows.into_iter().map(|r| (r.n, r.replicate, r.seed, r.metric, r.value)).collect())
}

/// Log-log least-squares slope of `metric` over `(n, value)` rows.
#[pyfunction]
#[pyo3(signature = (rows, metric, statistic="mean"))]
fn fit_slope(rows: Vec<(usize, usize, u64, String, f64)>, metric: &str, statistic: &str) -> PyResult<(f64, f64)> {
    let mut r = exp::SweepResult::new("python");
    for (n, rep, seed, m, v) in rows {
        r.push(n, rep, seed, &m, v).map_err(err)?;
    }
    let f = exp::fit_slope(&r, metric, statistic.parse().map_err(err)?).map_err(err)?;
    Ok((f.slope, f.stderr))
}

/// Two-point construction report as a dict.
#[pyfunction]
#[pyo3(signature = (l, trials, seed))]
fn adversarial(py: Python<'_>, l: f64, trials: usize, seed: u64) -> PyResult<Py<pyo3::types::PyDict>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = exp::run_adversarial_two_point(l, trials, &mut rng).map_err(err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("n", r.n)?;
    d.set_item("continuous_output", r.continuous_output)?;
    d.set_item("all_a_output", r.all_a_output)?;
    d.set_item("gap", r.gap)?;
    d.set_item("all_a_frequency", r.all_a_frequency)?;
    d.set_item("all_a_probability", r.all_a_probability)?;
    d.set_item("large_gap_frequency", r.large_gap_frequency)?;
    Ok(d.unbind())
}

#[pyfunction]
fn random_walk_rpe(tokens: &PyTokenset, k: usize) -> PyResult<Vec<Vec<f64>>> {
    let g = tokens.inner.graph.as_ref().ok_or_else(|| PyValueError::new_err("tokenset has no graph"))?;
    let r = rpe::random_walk_rpe(g, k).map_err(err)?;
    Ok(to_rows(&r.scalar_view().expect("scalar").to_owned()))
}

#[pymodule]
fn tokenset_lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTokenset>()?;
    m.add_class::<PyTransformer>()?;
    m.add_function(wrap_pyfunction!(spectral_norm, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(fit_slope, m)?)?;
    m.add_function(wrap_pyfunction!(adversarial, m)?)?;
    m.add_function(wrap_pyfunction!(random_walk_rpe, m)?)?;
    Ok(())
}
