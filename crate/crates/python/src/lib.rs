use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use kslab::curve::SampledCurve;
use kslab::energy::{self, MetricMap};
use kslab::experiment::{self, ScenarioConfig};
use kslab::flow::VectorField;
use kslab::metric::{SourceDomain, TargetPoint, TargetSpace};

fn err(e: kslab::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// (name, summary) for every scenario.
#[pyfunction]
fn list_scenarios() -> Vec<(String, String)> {
    experiment::list_scenarios().iter().map(|s| (s.name.to_string(), s.summary.to_string())).collect()
}

#[pyfunction]
fn default_config(scenario: &str) -> PyResult<String> {
    Ok(ScenarioConfig::defaults(scenario).map_err(err)?.to_text())
}

/// Runs a scenario from config text and returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (config, out=None))]
fn run_scenario(py: Python<'_>, config: &str, out: Option<String>) -> PyResult<String> {
    let mut cfg = ScenarioConfig::parse(config).map_err(err)?;
    if let Some(out) = out {
        cfg.out = Some(out.into());
    }
    let report = py.detach(|| experiment::run_scenario(&cfg)).map_err(err)?;
    serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Returns (E, [e_eps per eps], [H per sample point]).
#[pyfunction]
#[pyo3(signature = (domain, target, map, field, p, eps, samples=20000, seed=1))]
#[allow(clippy::too_many_arguments)]
fn directional_gradient(
    py: Python<'_>,
    domain: &str,
    target: &str,
    map: &str,
    field: &str,
    p: f64,
    eps: Vec<f64>,
    samples: usize,
    seed: u64,
) -> PyResult<(f64, Vec<f64>, Vec<f64>)> {
    py.detach(|| {
        let domain = SourceDomain::from_tag(domain)?;
        let target = TargetSpace::from_tag(target)?;
        let u = MetricMap::from_tag(map, &target, domain.dim())?;
        let z = VectorField::from_tag(field, &domain)?;
        let sample = domain.sample_measure(samples, seed)?;
        let rep = energy::directional_gradient(&u, &z, &domain, p, &eps, &sample)?;
        Ok((rep.energy, rep.e_per_eps.clone(), rep.h_values()))
    })
    .map_err(err)
}

/// Epsilon-energy of a planar polyline sampled at spacing `dt`.
#[pyfunction]
fn curve_energy(points: Vec<Vec<f64>>, dt: f64, p: f64, eps: f64) -> PyResult<f64> {
    let dim = points.first().map_or(2, Vec::len);
    let values = points.into_iter().map(TargetPoint::vector).collect();
    let curve = SampledCurve::new(TargetSpace::euclidean(dim), dt, values).map_err(err)?;
    curve.energy_eps(p, eps).map_err(err)
}

#[pymodule]
fn pykslab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(list_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(directional_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(curve_energy, m)?)?;
    Ok(())
}
