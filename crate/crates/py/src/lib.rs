//! Python bindings: income distribution families, grouped data, adjacency
//! graphs, the two MCMC samplers and posterior summaries.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use spatial_income_core::family::Family;
use spatial_income_core::graph::AdjacencyGraph;
use spatial_income_core::grouped::{BoundaryGrid, GroupedCounts};
use spatial_income_core::mcmc::{
    run_pwd_chain, run_pwl_chain, McmcConfig, PosteriorDraws, PriorConfig, PriorKind,
};
use spatial_income_core::sim::{simulate, ScenarioKind, SimScenario};
use spatial_income_core::summary::{ppl, summarize, PplMode};

fn family_from(code: &str) -> PyResult<Family> {
    Family::parse_code(code)
        .ok_or_else(|| PyValueError::new_err(format!("unknown family '{code}' (ln, sm or dg)")))
}

fn runtime<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn value<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Map unconstrained parameters u to natural parameters eta.
#[pyfunction]
fn transform(family: &str, u: Vec<f64>) -> PyResult<Vec<f64>> {
    family_from(family)?.transform(&u).map_err(value)
}

/// Exact inverse of `transform`.
#[pyfunction]
fn inverse_transform(family: &str, eta: Vec<f64>) -> PyResult<Vec<f64>> {
    family_from(family)?.inverse_transform(&eta).map_err(value)
}

#[pyfunction]
fn cdf(family: &str, eta: Vec<f64>, x: f64) -> PyResult<f64> {
    family_from(family)?.cdf(&eta, x).map_err(value)
}

#[pyfunction]
fn density(family: &str, eta: Vec<f64>, x: f64) -> PyResult<f64> {
    family_from(family)?.density(&eta, x).map_err(value)
}

#[pyfunction]
fn mean_income(family: &str, eta: Vec<f64>) -> PyResult<f64> {
    family_from(family)?.mean_income(&eta).map_err(value)
}

#[pyfunction]
fn gini(family: &str, eta: Vec<f64>) -> PyResult<f64> {
    family_from(family)?.gini(&eta).map_err(value)
}

/// Grouped counts over a shared boundary grid.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct GroupedData {
    inner: GroupedCounts,
}

#[pymethods]
impl GroupedData {
    /// counts: one row of bin counts per area; boundaries: interior
    /// boundaries z_1..z_{N-1} (z_0 = 0 and z_N = +inf are implicit).
    #[new]
    fn new(counts: Vec<Vec<u64>>, boundaries: Vec<f64>) -> PyResult<Self> {
        let grid = BoundaryGrid::from_interior(&boundaries).map_err(value)?;
        Ok(GroupedData {
            inner: GroupedCounts::new(counts, grid).map_err(value)?,
        })
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn n_bins(&self) -> usize {
        self.inner.n_bins()
    }

    /// Per-area sampled flags (false for all-zero rows).
    #[getter]
    fn sampled(&self) -> Vec<bool> {
        self.inner.sampled_flags().to_vec()
    }

    fn row(&self, i: usize) -> PyResult<Vec<u64>> {
        if i >= self.inner.m() {
            return Err(PyValueError::new_err(format!("area {i} out of range")));
        }
        Ok(self.inner.row(i).to_vec())
    }
}

/// Symmetric binary area adjacency.
#[pyclass(skip_from_py_object)]
#[derive(Clone)]
struct SpatialGraph {
    inner: AdjacencyGraph,
}

#[pymethods]
impl SpatialGraph {
    #[new]
    fn new(m: usize, edges: Vec<(usize, usize)>) -> PyResult<Self> {
        Ok(SpatialGraph {
            inner: AdjacencyGraph::new(m, &edges).map_err(value)?,
        })
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    fn mean_degree(&self) -> f64 {
        self.inner.mean_degree()
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges().to_vec()
    }
}

/// Retained MCMC draws plus acceptance diagnostics.
#[pyclass(skip_from_py_object)]
struct FitResult {
    draws: PosteriorDraws,
}

#[pymethods]
impl FitResult {
    #[getter]
    fn n_draws(&self) -> usize {
        self.draws.n_draws()
    }

    #[getter]
    fn family(&self) -> String {
        self.draws.family.code().to_string()
    }

    #[getter]
    fn prior(&self) -> String {
        self.draws.prior.code().to_string()
    }

    #[getter]
    fn accept_u(&self) -> f64 {
        self.draws.acceptance.u_accept_rate
    }

    #[getter]
    fn accept_hyper(&self) -> Vec<f64> {
        self.draws.acceptance.hyper_accept_rate.clone()
    }

    /// Latent draws as a (draws, areas, coords) nested list.
    fn u_draws(&self) -> Vec<Vec<Vec<f64>>> {
        self.draws
            .u
            .iter()
            .map(|mat| {
                (0..mat.nrows())
                    .map(|i| mat.row(i).iter().cloned().collect())
                    .collect()
            })
            .collect()
    }

    fn mu_draws(&self) -> Vec<Vec<f64>> {
        self.draws.mu.clone()
    }

    fn tau_draws(&self) -> Vec<Vec<f64>> {
        self.draws.tau.clone()
    }

    fn lambda_draws(&self) -> Vec<Vec<f64>> {
        self.draws.lambda.clone()
    }

    /// Per-area posterior summaries as dicts (mean income, Gini, u).
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let rows = summarize(&self.draws).map_err(runtime)?;
        let mut out = Vec::with_capacity(rows.len());
        for r in rows {
            let d = PyDict::new(py);
            d.set_item("area", r.area)?;
            d.set_item("sampled", r.sampled)?;
            d.set_item(
                "mean_income",
                (r.mean_income.mean, r.mean_income.lower, r.mean_income.upper),
            )?;
            d.set_item("gini", (r.gini.mean, r.gini.lower, r.gini.upper))?;
            d.set_item(
                "u",
                r.u.iter()
                    .map(|s| (s.mean, s.lower, s.upper))
                    .collect::<Vec<_>>(),
            )?;
            d.set_item("excluded_draws", r.excluded_draws)?;
            out.push(d);
        }
        Ok(out)
    }

    /// Posterior predictive loss against the given data.
    #[pyo3(signature = (data, seed = 0, plug_in = false))]
    fn ppl(&self, data: &GroupedData, seed: u64, plug_in: bool) -> PyResult<f64> {
        let mode = if plug_in {
            PplMode::PlugIn
        } else {
            PplMode::Replicates
        };
        Ok(ppl(&self.draws, &data.inner, mode, seed).map_err(runtime)?.total)
    }
}

/// Run one MCMC chain and return the retained draws.
#[pyfunction]
#[pyo3(signature = (data, graph, family = "ln", prior = "pwd", iterations = 2500,
                    burn_in = 500, thin = 1, seed = 0, cstar_samples = 100))]
#[allow(clippy::too_many_arguments)]
fn fit(
    data: &GroupedData,
    graph: &SpatialGraph,
    family: &str,
    prior: &str,
    iterations: usize,
    burn_in: usize,
    thin: usize,
    seed: u64,
    cstar_samples: usize,
) -> PyResult<FitResult> {
    let fam = family_from(family)?;
    let kind = PriorKind::parse_code(prior)
        .ok_or_else(|| PyValueError::new_err(format!("unknown prior '{prior}' (pwd or pwl)")))?;
    let config = McmcConfig {
        iterations,
        burn_in,
        thin,
        seed,
        cstar_samples,
        ..Default::default()
    };
    let draws = match kind {
        PriorKind::Pwd => run_pwd_chain(
            &data.inner,
            &graph.inner,
            fam,
            PriorConfig::default(),
            config,
            None,
        ),
        PriorKind::Pwl => run_pwl_chain(
            &data.inner,
            &graph.inner,
            fam,
            PriorConfig::default(),
            config,
            None,
        ),
    }
    .map_err(runtime)?;
    Ok(FitResult { draws })
}

/// Generate a synthetic scenario dataset; returns (data, graph, truth).
#[pyfunction]
#[pyo3(signature = (scenario = "a", areas = 200, seed = 0, radius = 0.15))]
fn simulate_scenario(
    scenario: &str,
    areas: usize,
    seed: u64,
    radius: f64,
) -> PyResult<(GroupedData, SpatialGraph, Vec<Vec<f64>>)> {
    let kind = ScenarioKind::parse_code(scenario)
        .ok_or_else(|| PyValueError::new_err(format!("unknown scenario '{scenario}' (a, b or c)")))?;
    let mut sc = SimScenario::new(kind);
    sc.m = areas;
    sc.radius = radius;
    let data = simulate(&sc, seed).map_err(runtime)?;
    let truth = (0..data.truth.nrows())
        .map(|i| data.truth.row(i).iter().cloned().collect())
        .collect();
    Ok((
        GroupedData {
            inner: data.counts,
        },
        SpatialGraph { inner: data.graph },
        truth,
    ))
}

#[pymodule]
fn spatial_income(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(transform, m)?)?;
    m.add_function(wrap_pyfunction!(inverse_transform, m)?)?;
    m.add_function(wrap_pyfunction!(cdf, m)?)?;
    m.add_function(wrap_pyfunction!(density, m)?)?;
    m.add_function(wrap_pyfunction!(mean_income, m)?)?;
    m.add_function(wrap_pyfunction!(gini, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_scenario, m)?)?;
    m.add_class::<GroupedData>()?;
    m.add_class::<SpatialGraph>()?;
    m.add_class::<FitResult>()?;
    Ok(())
}
