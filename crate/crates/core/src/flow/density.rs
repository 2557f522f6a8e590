use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FlowMap, TimeDependentField};
use crate::metric::SourceDomain;
use crate::{Error, Result};

/// Regular grid of cells over an axis-aligned box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cells: Vec<usize>,
}

impl GridSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        if lo.is_empty()
            || lo.len() != hi.len()
            || lo.len() != cells.len()
            || cells.contains(&0)
            || lo.iter().zip(&hi).any(|(l, h)| !(l < h))
        {
            return Err(Error::invalid("grid needs lo < hi and positive cell counts"));
        }
        Ok(GridSpec { lo, hi, cells })
    }

    /// `n` cells per axis over the bounding box of `domain`.
    pub fn covering(domain: &SourceDomain, n: usize) -> Result<Self> {
        let (lo, hi) = domain.bounding_box();
        let d = lo.len();
        Self::new(lo, hi, vec![n; d])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_width(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.cells[axis] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.cell_width(k)).product()
    }

    /// Row-major cell index, `None` outside the closed box.
    pub fn index(&self, x: &[f64]) -> Option<usize> {
        if x.len() != self.dim() {
            return None;
        }
        let mut idx = 0;
        for k in 0..self.dim() {
            if !(self.lo[k] <= x[k] && x[k] <= self.hi[k]) {
                return None;
            }
            let c = (((x[k] - self.lo[k]) / self.cell_width(k)) as usize).min(self.cells[k] - 1);
            idx = idx * self.cells[k] + c;
        }
        Some(idx)
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            out[k] = idx % self.cells[k];
            idx /= self.cells[k];
        }
        out
    }

    pub fn center(&self, idx: usize) -> Vec<f64> {
        self.multi_index(idx)
            .iter()
            .enumerate()
            .map(|(k, &c)| self.lo[k] + (c as f64 + 0.5) * self.cell_width(k))
            .collect()
    }
}

/// Histogram of a push-forward measure: cell masses at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub spec: GridSpec,
    pub masses: Vec<f64>,
    pub time: f64,
}

impl DensityGrid {
    /// Bins weighted points; any point outside the grid is a mass leak.
    pub fn from_points<'a, I>(spec: &GridSpec, points: I, time: f64) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [f64], f64)>,
    {
        let mut masses = vec![0.0; spec.len()];
        let (mut total, mut leaked) = (0.0, 0.0);
        for (x, w) in points {
            total += w;
            match spec.index(x) {
                Some(i) => masses[i] += w,
                None => leaked += w,
            }
        }
        if leaked > 0.0 {
            return Err(Error::MassLeak { fraction: leaked / total });
        }
        Ok(DensityGrid { spec: spec.clone(), masses, time })
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Mass per unit (Lebesgue) volume in cell `idx`.
    pub fn density(&self, idx: usize) -> f64 {
        self.masses[idx] / self.spec.cell_volume()
    }

    pub fn sup_density(&self) -> f64 {
        self.masses.iter().fold(0.0f64, |m, v| m.max(*v)) / self.spec.cell_volume()
    }

    /// `Σ_cells mass · f(center)`.
    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.masses
            .iter()
            .enumerate()
            .filter(|(_, m)| **m != 0.0)
            .map(|(i, m)| m * f(&self.spec.center(i)))
            .sum()
    }

    /// Rows `i0,i1,...,mass` for the nonempty cells.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.spec.dim()).map(|k| format!("i{k}")).collect();
        header.push("mass".into());
        w.write_record(&header)?;
        for (i, m) in self.masses.iter().enumerate().filter(|(_, m)| **m != 0.0) {
            let mut row: Vec<String> = self.spec.multi_index(i).iter().map(|c| c.to_string()).collect();
            row.push(m.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Histogram of the seed weights carried to `frame` by the flow map.
pub fn pushforward_density(fm: &FlowMap, spec: &GridSpec, frame: usize) -> Result<DensityGrid> {
    if frame >= fm.frames() {
        return Err(Error::invalid(format!("frame {frame} out of range")));
    }
    // cell lookup is parallel, accumulation stays in seed order
    let cells: Vec<Option<usize>> = (0..fm.len()).into_par_iter().map(|s| spec.index(fm.position(s, frame))).collect();
    let mut masses = vec![0.0; spec.len()];
    let (mut total, mut leaked) = (0.0, 0.0);
    for (s, c) in cells.iter().enumerate() {
        let w = fm.seeds()[s].weight;
        total += w;
        match c {
            Some(i) => masses[*i] += w,
            None => leaked += w,
        }
    }
    if leaked > 0.0 {
        return Err(Error::MassLeak { fraction: leaked / total });
    }
    Ok(DensityGrid { spec: spec.clone(), masses, time: fm.time(frame) })
}

/// A smooth test function with its gradient.
#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    value: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    gradient: Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction").field("name", &self.name).finish_non_exhaustive()
    }
}

impl TestFunction {
    pub fn new<V, G>(name: impl Into<String>, value: V, gradient: G) -> Self
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        TestFunction { name: name.into(), value: Arc::new(value), gradient: Arc::new(gradient) }
    }

    /// `x_1^a x_2^b` on the plane.
    pub fn monomial(a: i32, b: i32) -> Self {
        let pw = |v: f64, k: i32| if k == 0 { 1.0 } else { v.powi(k) };
        TestFunction::new(
            format!("x^{a} y^{b}"),
            move |x| pw(x[0], a) * pw(x[1], b),
            move |x| vec![a as f64 * pw(x[0], a - 1) * pw(x[1], b), b as f64 * pw(x[0], a) * pw(x[1], b - 1)],
        )
    }

    /// `((r^2 - |x|^2)^+)^2`: radial, C^1, supported in the ball of radius `r`.
    pub fn radial_bump(r: f64) -> Self {
        TestFunction::new(
            format!("radial_bump({r})"),
            move |x| {
                let s = (r * r - x.iter().map(|v| v * v).sum::<f64>()).max(0.0);
                s * s
            },
            move |x| {
                let s = (r * r - x.iter().map(|v| v * v).sum::<f64>()).max(0.0);
                x.iter().map(|v| -4.0 * s * v).collect()
            },
        )
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.gradient)(x)
    }
}

/// Residual of `d/dt ∫ f ρ_t = ∫ df(Z_t) ρ_t` on histogram data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuityResidual {
    pub max: f64,
    /// `(test name, slice index, lhs, rhs)` for every interior slice.
    pub entries: Vec<(String, usize, f64, f64)>,
}

/// Central difference in time of `∫ f ρ_t` against the cell quadrature of
/// `∫ ∇f·Z_t ρ_t`, over interior slices and all tests.
pub fn continuity_residual(
    densities: &[DensityGrid],
    field: &TimeDependentField,
    tests: &[TestFunction],
) -> Result<ContinuityResidual> {
    if densities.len() < 3 {
        return Err(Error::invalid("need at least 3 time slices"));
    }
    if densities.iter().any(|d| d.spec != densities[0].spec) {
        return Err(Error::invalid("densities live on different grids"));
    }
    let mut entries = Vec::new();
    let mut max = 0.0f64;
    for f in tests {
        let moments: Vec<f64> = densities.iter().map(|d| d.integrate(|x| f.value(x))).collect();
        for k in 1..densities.len() - 1 {
            let lhs = (moments[k + 1] - moments[k - 1]) / (densities[k + 1].time - densities[k - 1].time);
            let z = field.at(densities[k].time);
            let rhs = densities[k].integrate(|x| {
                let g = f.gradient(x);
                let v = z.value(x);
                g.iter().zip(&v).map(|(a, b)| a * b).sum()
            });
            max = max.max((lhs - rhs).abs());
            entries.push((f.name.clone(), k, lhs, rhs));
        }
    }
    Ok(ContinuityResidual { max, entries })
}
