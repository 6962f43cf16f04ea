//! Python bindings. Arrays cross the boundary as nested lists; indices are 0-based.

use std::collections::BTreeSet;

use dvs_core::lasso::{lasso_fit, Lambda, LassoConfig};
use dvs_core::marginal::{aggregate_and_rank, MarginalMethod};
use dvs_core::screen::{screen, ScreenConfig, Sparsity};
use dvs_core::simgen::{generate, Scenario, ScenarioSpec};
use dvs_core::{ClusterSpec, DataShard, DihtConfig, DvsError, Family, Transport};
use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: DvsError) -> PyErr {
    match e {
        DvsError::InvalidArgument(_)
        | DvsError::Config(_)
        | DvsError::Shape { .. }
        | DvsError::DataValidation { .. } => PyValueError::new_err(e.to_string()),
        DvsError::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn family_of(name: &str) -> PyResult<Family> {
    name.parse().map_err(to_py)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("ragged design matrix"));
    }
    Array2::from_shape_vec((n, p), rows.into_iter().flatten().collect()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn lambda_of(lambda_: Option<f64>, lambda_c: f64) -> Lambda {
    match lambda_ {
        Some(v) => Lambda::Fixed(v),
        None => Lambda::Auto { c: lambda_c },
    }
}

/// Row-partitioned data for one GLM family.
#[pyclass(module = "dvs", frozen)]
struct Cluster {
    shards: Vec<DataShard>,
    family: Family,
    truth: Option<Vec<f64>>,
}

#[pymethods]
impl Cluster {
    /// `shards` is a list of `(x, y)` pairs, `x` as a list of rows.
    #[new]
    fn new(shards: Vec<(Vec<Vec<f64>>, Vec<f64>)>, family: &str) -> PyResult<Self> {
        let family = family_of(family)?;
        let shards = shards
            .into_iter()
            .enumerate()
            .map(|(i, (x, y))| DataShard::new(i, matrix(x)?, Array1::from(y)).map_err(to_py))
            .collect::<PyResult<Vec<_>>>()?;
        let c = Self { shards, family, truth: None };
        c.spec(Transport::InProcess)?.validate_for(family).map_err(to_py)?;
        Ok(c)
    }

    /// Draws a benchmark scenario ("1.1" .. "3.2").
    #[staticmethod]
    #[pyo3(signature = (scenario, n_total, p, m, seed = 1))]
    fn simulate(scenario: &str, n_total: usize, p: usize, m: usize, seed: u64) -> PyResult<Self> {
        let scenario: Scenario = scenario.parse().map_err(to_py)?;
        let data = generate(&ScenarioSpec { scenario, n_total, p, m, seed }).map_err(to_py)?;
        Ok(Self {
            family: data.family,
            truth: Some(data.truth.values().to_vec()),
            shards: data.shards,
        })
    }

    #[getter]
    fn machines(&self) -> usize {
        self.shards.len()
    }

    #[getter]
    fn p(&self) -> usize {
        self.shards[0].p()
    }

    #[getter]
    fn n_total(&self) -> usize {
        self.shards.iter().map(DataShard::n).sum()
    }

    #[getter]
    fn family(&self) -> String {
        self.family.to_string()
    }

    /// True coefficients for simulated data, else `None`.
    #[getter]
    fn truth(&self) -> Option<Vec<f64>> {
        self.truth.clone()
    }

    #[getter]
    fn support(&self) -> Option<Vec<usize>> {
        self.truth
            .as_ref()
            .map(|t| t.iter().enumerate().filter(|(_, b)| **b != 0.0).map(|(j, _)| j).collect())
    }

    fn shard(&self, i: usize) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
        let s = self.shards.get(i).ok_or_else(|| PyValueError::new_err(format!("no shard {i}")))?;
        Ok((s.x().rows().into_iter().map(|r| r.to_vec()).collect(), s.y().to_vec()))
    }

    /// Lasso on the first shard, one aggregation round, then DIHT.
    ///
    /// With `k` unset the sparsity is chosen by EBIC over `1..=k_max`.
    #[pyo3(signature = (k = None, k_max = None, lambda_ = None, lambda_c = 1.0, epsilon = 1e-6, max_iter = 500, vartheta0 = 1.0, transport = "inprocess"))]
    #[allow(clippy::too_many_arguments)]
    fn screen<'py>(
        &self,
        py: Python<'py>,
        k: Option<usize>,
        k_max: Option<usize>,
        lambda_: Option<f64>,
        lambda_c: f64,
        epsilon: f64,
        max_iter: usize,
        vartheta0: f64,
        transport: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let transport = match transport {
            "inprocess" => Transport::InProcess,
            "tcp" => Transport::Tcp,
            other => return Err(PyValueError::new_err(format!("unknown transport '{other}'"))),
        };
        let cfg = ScreenConfig {
            lasso: LassoConfig { lambda: lambda_of(lambda_, lambda_c), ..Default::default() },
            sparsity: match k {
                Some(k) => Sparsity::Fixed(k),
                None => Sparsity::Scan { k_max },
            },
            diht: DihtConfig { epsilon, max_iter, vartheta0, ..Default::default() },
        };
        let res = screen(&self.spec(transport)?, self.family, &cfg).map_err(to_py)?;
        let out = PyDict::new(py);
        out.set_item("support", res.run.support.clone())?;
        out.set_item("beta", res.run.beta.values().to_vec())?;
        out.set_item("k", res.run.k)?;
        out.set_item("surrogate_loss", res.run.surrogate_loss)?;
        out.set_item("iterations", res.run.iterations)?;
        out.set_item("converged", res.run.converged)?;
        out.set_item("doubling_events", res.run.doubling_events())?;
        out.set_item("rounds", res.run.communication.rounds)?;
        out.set_item("lasso_beta", res.lasso.beta.values().to_vec())?;
        out.set_item("lambda", res.lasso.lambda)?;
        if let Some(trace) = &res.run.ebic_trace {
            let rows: Vec<(usize, f64, f64, bool)> =
                trace.records.iter().map(|r| (r.k, r.surrogate_loss, r.ebic, r.converged)).collect();
            out.set_item("ebic_trace", rows)?;
        }
        Ok(out)
    }

    /// Averaged marginal utilities and the top `d` covariates.
    fn marginal_rank(&self, method: &str, d: usize) -> PyResult<(Vec<f64>, Vec<usize>)> {
        let method: MarginalMethod = method.parse().map_err(to_py)?;
        let (util, top) = aggregate_and_rank(&self.spec(Transport::InProcess)?, method, d).map_err(to_py)?;
        Ok((util.scores, top))
    }

    fn __repr__(&self) -> String {
        format!("Cluster(family={}, machines={}, n_total={}, p={})", self.family, self.machines(), self.n_total(), self.p())
    }
}

impl Cluster {
    fn spec(&self, transport: Transport) -> PyResult<ClusterSpec> {
        ClusterSpec::new(self.shards.clone(), transport).map_err(to_py)
    }
}

/// `loss + k (ln N + 0.5 ln p) / N`.
#[pyfunction]
fn ebic(loss: f64, k: usize, n_total: usize, p: usize) -> PyResult<f64> {
    dvs_core::ebic(loss, k, n_total, p).map_err(to_py)
}

/// Keeps the `k` largest magnitudes and zeroes the rest.
#[pyfunction]
fn hard_threshold(values: Vec<f64>, k: usize) -> PyResult<Vec<f64>> {
    Ok(dvs_core::hard_threshold(Array1::from(values).view(), k).map_err(to_py)?.values().to_vec())
}

/// SC, CF, AMS, PSR and FDR of selected sets against the true support.
#[pyfunction]
fn compute_metrics<'py>(py: Python<'py>, selected: Vec<BTreeSet<usize>>, truth: BTreeSet<usize>) -> PyResult<Bound<'py, PyDict>> {
    let r = dvs_core::compute_metrics("python", &selected, &truth).map_err(to_py)?;
    let out = PyDict::new(py);
    for (key, v) in [("sc", r.sc), ("cf", r.cf), ("ams", r.ams), ("psr", r.psr), ("fdr", r.fdr)] {
        out.set_item(key, v)?;
    }
    out.set_item("replications", r.replications)?;
    Ok(out)
}

/// L1-penalized GLM fit; `lambda_=None` uses `lambda_c * sqrt(ln p / n)`.
#[pyfunction]
#[pyo3(signature = (x, y, family, lambda_ = None, lambda_c = 1.0))]
fn lasso(x: Vec<Vec<f64>>, y: Vec<f64>, family: &str, lambda_: Option<f64>, lambda_c: f64) -> PyResult<(Vec<f64>, f64)> {
    let family = family_of(family)?;
    let shard = DataShard::new(0, matrix(x)?, Array1::from(y)).map_err(to_py)?;
    shard.validate_for(family).map_err(to_py)?;
    let cfg = LassoConfig { lambda: lambda_of(lambda_, lambda_c), ..Default::default() };
    let fit = lasso_fit(&shard, family, &cfg).map_err(to_py)?;
    Ok((fit.beta.values().to_vec(), fit.lambda))
}

/// Marginal utility of one covariate: "pearson", "kendall", "sirs" or "dcor".
#[pyfunction]
fn marginal_score(method: &str, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    if x.len() != y.len() {
        return Err(PyValueError::new_err("x and y differ in length"));
    }
    let method: MarginalMethod = method.parse().map_err(to_py)?;
    Ok(method.score(Array1::from(x).view(), Array1::from(y).view()).score)
}

#[pymodule]
fn dvs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Cluster>()?;
    m.add_function(wrap_pyfunction!(ebic, m)?)?;
    m.add_function(wrap_pyfunction!(hard_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(lasso, m)?)?;
    m.add_function(wrap_pyfunction!(marginal_score, m)?)?;
    Ok(())
}
