//! Directional Korevaar-Schoen energies of maps `u: Ω → Y` along flows.
//!
//! `e_ε(x) = d_Y(u(x), u(Fl_ε x))^p / ε^p` when both points lie in `Ω`, and
//! 0 otherwise. `|du(Z)|` is read off as `e^{1/p}` at the smallest `ε`.

mod checks;
mod map;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::flow::{flow_point, VectorField};
use crate::metric::{Sample, SourceDomain};
use crate::{Error, Result};

pub use checks::{
    incremental_ratio_gaps, linearity_check, norm_compatibility, parallelogram_residual, postcomposition_gradient,
    regularity_check, scaling_check, triangle_check, ParallelogramReport, PostcompositionReport, TriangleReport,
};
pub use map::{tripod_singular_distance, Cutoff, MetricMap};

/// Largest integrator step used to evaluate `Fl_ε`.
pub const MAX_FLOW_STEP: f64 = 1e-3;

pub(crate) fn flow_step(t: f64) -> f64 {
    MAX_FLOW_STEP.min(t.abs() / 16.0)
}

/// `T_x = d(x, Ω^c) / ‖Z‖_∞`: before this time the trajectory from `x` cannot
/// leave `Ω`. Infinite when `Z = 0`.
pub fn escape_time(x: &[f64], z: &VectorField, domain: &SourceDomain) -> Result<f64> {
    if !domain.contains(x) {
        return Err(Error::invalid("escape time requested for a point outside the domain"));
    }
    let sup = z.sup_norm();
    if sup == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(domain.dist_to_complement(x)? / sup)
}

/// Per-point `e_ε` values; masked points carry 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyDensity {
    pub values: Vec<f64>,
    pub masked: Vec<bool>,
}

impl EnergyDensity {
    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|m| **m).count()
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::invalid(format!("exponent p must lie in (1, ∞), got {p}")));
    }
    Ok(())
}

fn check_compatible(z: &VectorField, domain: &SourceDomain) -> Result<()> {
    if z.dim() != domain.dim() {
        return Err(Error::invalid(format!("field dimension {} on a {}-dimensional domain", z.dim(), domain.dim())));
    }
    Ok(())
}

/// `d_Y(u(x), u(Fl_ε x)) / ε`, or `None` if `x` or its image is outside `Ω`.
pub(crate) fn incremental_ratio(
    u: &MetricMap,
    z: &VectorField,
    domain: &SourceDomain,
    x: &[f64],
    eps: f64,
) -> Result<Option<f64>> {
    if !domain.contains(x) {
        return Ok(None);
    }
    let y = flow_point(z, x, eps, flow_step(eps));
    if !domain.contains(&y) {
        return Ok(None);
    }
    Ok(Some(u.target().distance(&u.eval(x), &u.eval(&y))? / eps))
}

/// `e_ε(x)` at each point.
pub fn energy_density(
    u: &MetricMap,
    z: &VectorField,
    domain: &SourceDomain,
    p: f64,
    eps: f64,
    points: &[Vec<f64>],
) -> Result<EnergyDensity> {
    check_p(p)?;
    check_compatible(z, domain)?;
    if !(eps > 0.0) {
        return Err(Error::invalid("ε must be positive"));
    }
    let ratios: Vec<Option<f64>> =
        points.par_iter().map(|x| incremental_ratio(u, z, domain, x, eps)).collect::<Result<_>>()?;
    Ok(EnergyDensity {
        values: ratios.iter().map(|r| r.map_or(0.0, |r| r.powf(p))).collect(),
        masked: ratios.iter().map(Option::is_none).collect(),
    })
}

/// `∫ φ e_ε dm` by weighted quadrature over `sample`.
pub fn energy_functional(
    u: &MetricMap,
    z: &VectorField,
    domain: &SourceDomain,
    p: f64,
    eps: f64,
    phi: &Cutoff,
    sample: &[Sample],
) -> Result<f64> {
    let points: Vec<Vec<f64>> = sample.iter().map(|s| s.point.clone()).collect();
    let e = energy_density(u, z, domain, p, eps, &points)?;
    Ok(sample.iter().zip(&e.values).map(|(s, v)| s.weight * phi.eval(&s.point) * v).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub x: Vec<f64>,
    #[serde(rename = "H")]
    pub h: f64,
    /// true if the ε-flow image left `Ω` for some ε of the list
    pub masked: bool,
}

/// Energies along a decreasing ε list and the extracted `|du(Z)|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub p: f64,
    pub eps: Vec<f64>,
    #[serde(rename = "E_per_eps")]
    pub e_per_eps: Vec<f64>,
    #[serde(rename = "E")]
    pub energy: f64,
    /// sampled L^p distance between the `e^{1/p}` fields of consecutive ε
    #[serde(rename = "Lp_gaps")]
    pub lp_gaps: Vec<f64>,
    pub points: Vec<PointEstimate>,
}

impl EnergyReport {
    pub fn h_values(&self) -> Vec<f64> {
        self.points.iter().map(|pt| pt.h).collect()
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }
}

pub(crate) fn check_eps_list(eps: &[f64]) -> Result<()> {
    if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::invalid("ε list must be nonempty and positive"));
    }
    if eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("ε list must be strictly decreasing"));
    }
    Ok(())
}

/// Evaluates `e_ε` for every ε of a decreasing list and reads `|du(Z)|` off
/// the smallest one.
pub fn directional_gradient(
    u: &MetricMap,
    z: &VectorField,
    domain: &SourceDomain,
    p: f64,
    eps: &[f64],
    sample: &[Sample],
) -> Result<EnergyReport> {
    check_p(p)?;
    check_eps_list(eps)?;
    check_compatible(z, domain)?;
    // ratios[i][k] = d/ε for point i at eps[k]
    let ratios: Vec<Vec<Option<f64>>> = sample
        .par_iter()
        .map(|s| eps.iter().map(|&e| incremental_ratio(u, z, domain, &s.point, e)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let root = |r: &Option<f64>| r.unwrap_or(0.0);
    let e_per_eps = (0..eps.len())
        .map(|k| sample.iter().zip(&ratios).map(|(s, r)| s.weight * root(&r[k]).powf(p)).sum())
        .collect();
    let lp_gaps = (1..eps.len())
        .map(|k| {
            sample
                .iter()
                .zip(&ratios)
                .map(|(s, r)| s.weight * (root(&r[k]) - root(&r[k - 1])).abs().powf(p))
                .sum::<f64>()
                .powf(1.0 / p)
        })
        .collect();
    let last = eps.len() - 1;
    let points: Vec<PointEstimate> = sample
        .iter()
        .zip(&ratios)
        .map(|(s, r)| PointEstimate { x: s.point.clone(), h: root(&r[last]), masked: r.iter().any(Option::is_none) })
        .collect();
    let energy = sample.iter().zip(&points).map(|(s, pt)| s.weight * pt.h.powf(p)).sum();
    Ok(EnergyReport { p, eps: eps.to_vec(), e_per_eps, energy, lp_gaps, points })
}

/// `|du(Z)|` at each point, from the smallest ε of the list. Masked points get 0.
pub(crate) fn h_field(
    u: &MetricMap,
    z: &VectorField,
    domain: &SourceDomain,
    eps: &[f64],
    points: &[Vec<f64>],
) -> Result<Vec<f64>> {
    check_eps_list(eps)?;
    check_compatible(z, domain)?;
    let e = eps[eps.len() - 1];
    points
        .par_iter()
        .map(|x| incremental_ratio(u, z, domain, x, e).map(|r| r.unwrap_or(0.0)))
        .collect()
}

/// Finite-difference scheme for [`directional_derivative_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    /// `(u(Fl_τ x) − u(Fl_{−τ} x)) / 2τ`, second order
    Central,
    /// `(u(Fl_τ x) − u(x)) / τ`, first order; needs no backward flow
    Forward,
}

/// `d/dt u(Fl_t x)` at `t = 0` for each point, normed targets only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalDerivative {
    pub tau: f64,
    pub vectors: Vec<Vec<f64>>,
}

/// Default finite-difference step for a domain.
pub fn default_tau(domain: &SourceDomain) -> f64 {
    1e-4 * domain.diameter()
}

pub fn directional_derivative(u: &MetricMap, z: &VectorField, points: &[Vec<f64>], tau: f64) -> Result<DirectionalDerivative> {
    directional_derivative_with(u, z, points, tau, Scheme::Central)
}

pub fn directional_derivative_with(
    u: &MetricMap,
    z: &VectorField,
    points: &[Vec<f64>],
    tau: f64,
    scheme: Scheme,
) -> Result<DirectionalDerivative> {
    if !u.target().is_normed() {
        return Err(Error::UnsupportedTarget(format!(
            "directional derivative needs a normed target, got {}",
            u.target().tag()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let step = MAX_FLOW_STEP.min(tau);
    let vec_at = |x: &[f64]| -> Vec<f64> {
        match u.eval(x) {
            crate::metric::TargetPoint::Vector(v) => v,
            _ => unreachable!("normed target yields vectors"),
        }
    };
    let vectors = points
        .par_iter()
        .map(|x| {
            let fwd = vec_at(&flow_point(z, x, tau, step));
            match scheme {
                Scheme::Central => {
                    let back = vec_at(&flow_point(z, x, -tau, step));
                    fwd.iter().zip(&back).map(|(a, b)| (a - b) / (2.0 * tau)).collect()
                }
                Scheme::Forward => {
                    let here = vec_at(x);
                    fwd.iter().zip(&here).map(|(a, b)| (a - b) / tau).collect()
                }
            }
        })
        .collect();
    Ok(DirectionalDerivative { tau, vectors })
}

/// Writes `x0..x{d-1}` followed by the named columns, one row per point.
pub fn write_point_field_csv<W: Write>(points: &[Vec<f64>], columns: &[(&str, &[f64])], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let dim = points.first().map_or(0, Vec::len);
    let mut header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    header.extend(columns.iter().map(|(name, _)| name.to_string()));
    w.write_record(&header)?;
    for (i, x) in points.iter().enumerate() {
        let mut row: Vec<String> = x.iter().map(f64::to_string).collect();
        row.extend(columns.iter().map(|(_, col)| col[i].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
