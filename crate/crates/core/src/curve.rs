//! Energies and metric speed of curves sampled on a uniform time grid.
//!
//! For a curve `γ: [0, T] → Y` the ε-energy is
//! `E_{p,ε}(γ) = ∫_0^{T-ε} d_Y(γ_{t+ε}, γ_t)^p / ε^p dt`; its p-th root is
//! nondecreasing as ε shrinks and converges to the Sobolev energy `E_p(γ)`.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metric::{TargetKind, TargetPoint, TargetSpace};
use crate::{Error, Result};

const GRID_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledCurve {
    target: TargetSpace,
    dt: f64,
    values: Vec<TargetPoint>,
}

impl SampledCurve {
    /// `values[i]` is the position at `t_i = i·dt`; at least three nodes.
    pub fn new(target: TargetSpace, dt: f64, values: Vec<TargetPoint>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("time step must be positive"));
        }
        if values.len() < 3 {
            return Err(Error::invalid("a sampled curve needs at least 3 nodes"));
        }
        for v in &values {
            target.check_point(v)?;
        }
        Ok(SampledCurve { target, dt, values })
    }

    /// Samples `f` at `t_i = i·T/n`, `i = 0..=n`.
    pub fn from_fn<F>(target: TargetSpace, horizon: f64, n: usize, f: F) -> Result<Self>
    where
        F: Fn(f64) -> TargetPoint,
    {
        if n < 2 {
            return Err(Error::invalid("a sampled curve needs N >= 2"));
        }
        let dt = horizon / n as f64;
        let values = (0..=n).map(|i| f(i as f64 * dt)).collect();
        Self::new(target, dt, values)
    }

    pub fn target(&self) -> &TargetSpace {
        &self.target
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of grid intervals `N`.
    pub fn intervals(&self) -> usize {
        self.values.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.intervals() as f64 * self.dt
    }

    pub fn values(&self) -> &[TargetPoint] {
        &self.values
    }

    fn lag_of(&self, eps: f64) -> Result<usize> {
        let k = eps / self.dt;
        let lag = k.round();
        if !(eps > 0.0) || (k - lag).abs() > GRID_TOL * k.max(1.0) || lag < 1.0 {
            return Err(Error::invalid(format!(
                "ε = {eps} is not a positive multiple of Δt = {}",
                self.dt
            )));
        }
        let lag = lag as usize;
        if lag >= self.intervals() {
            return Err(Error::invalid(format!("ε = {eps} is not below the horizon")));
        }
        Ok(lag)
    }

    /// `E_{p,ε}(γ)` as a left-endpoint Riemann sum; ε must be a grid multiple.
    pub fn energy_eps(&self, p: f64, eps: f64) -> Result<f64> {
        check_exponent(p)?;
        let lag = self.lag_of(eps)?;
        let mut sum = 0.0;
        for i in 0..self.intervals() - lag {
            let d = self.target.distance(&self.values[i + lag], &self.values[i])?;
            sum += (d / eps).powf(p);
        }
        Ok(sum * self.dt)
    }

    /// Energies along a strictly decreasing list of grid-aligned ε.
    pub fn energy_profile(&self, p: f64, eps: &[f64]) -> Result<CurveEnergyProfile> {
        if eps.is_empty() {
            return Err(Error::invalid("ε list is empty"));
        }
        if eps.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::invalid("ε list must be strictly decreasing"));
        }
        let values = eps
            .par_iter()
            .map(|&e| self.energy_eps(p, e))
            .collect::<Result<Vec<_>>>()?;
        let limit = *values.last().unwrap();
        Ok(CurveEnergyProfile { p, eps: eps.to_vec(), values, limit })
    }

    /// Metric speed at node `i`: central difference inside, one-sided at the ends.
    pub fn metric_speed(&self, i: usize) -> Result<f64> {
        let n = self.intervals();
        let v = &self.values;
        let d = |a: usize, b: usize| self.target.distance(&v[a], &v[b]);
        match i {
            0 => Ok(d(1, 0)? / self.dt),
            i if i == n => Ok(d(n, n - 1)? / self.dt),
            i if i < n => Ok(d(i + 1, i - 1)? / (2.0 * self.dt)),
            _ => Err(Error::invalid(format!("node {i} outside 0..={n}"))),
        }
    }

    /// `Σ λ_i E_{p,λ_i ε}^{1/p} - E_{p,ε}^{1/p}`, nonnegative for every curve.
    pub fn subadditivity_slack(&self, p: f64, eps: f64, lambdas: &[f64]) -> Result<f64> {
        let total: f64 = lambdas.iter().sum();
        if lambdas.iter().any(|l| !(0.0..=1.0).contains(l)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("λ must lie in [0,1] and sum to 1"));
        }
        let mut rhs = 0.0;
        for &l in lambdas.iter().filter(|l| **l > 0.0) {
            rhs += l * self.energy_eps(p, l * eps)?.powf(1.0 / p);
        }
        Ok(rhs - self.energy_eps(p, eps)?.powf(1.0 / p))
    }

    /// Largest excess of `(speed of φ∘γ) - lip φ(γ)·(speed of γ)` over interior nodes.
    pub fn chain_rule_violation<F, L>(&self, image: &TargetSpace, phi: F, lip: L) -> Result<f64>
    where
        F: Fn(&TargetPoint) -> TargetPoint,
        L: Fn(&TargetPoint) -> f64,
    {
        let mapped = SampledCurve::new(image.clone(), self.dt, self.values.iter().map(&phi).collect())?;
        let mut worst = f64::NEG_INFINITY;
        for i in 1..self.intervals() {
            let excess = mapped.metric_speed(i)? - lip(&self.values[i]) * self.metric_speed(i)?;
            worst = worst.max(excess);
        }
        Ok(worst)
    }

    /// Reads `t,<coords...>` (normed targets) or `t,edge,coord` (star trees).
    pub fn read_csv<R: Read>(target: TargetSpace, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let field = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| Error::invalid(format!("bad csv field {k} in {rec:?}")))
            };
            times.push(field(0)?);
            let point = match target.kind() {
                TargetKind::Normed { dim, .. } => {
                    TargetPoint::Vector((1..=*dim).map(field).collect::<Result<_>>()?)
                }
                TargetKind::StarTree { .. } => TargetPoint::tree(field(1)? as usize, field(2)?),
            };
            values.push(point);
        }
        if times.len() < 3 {
            return Err(Error::invalid("curve csv needs at least 3 rows"));
        }
        let dt = times[1] - times[0];
        for (i, t) in times.iter().enumerate() {
            if (t - times[0] - i as f64 * dt).abs() > 1e-9 * (1.0 + t.abs()) {
                return Err(Error::invalid("curve csv time column is not a uniform grid"));
            }
        }
        Self::new(target, dt, values)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        match self.target.kind() {
            TargetKind::Normed { dim, .. } => {
                let mut header = vec!["t".to_string()];
                header.extend((0..*dim).map(|k| format!("x{k}")));
                w.write_record(&header)?;
            }
            TargetKind::StarTree { .. } => w.write_record(["t", "edge", "coord"])?,
        }
        for (i, v) in self.values.iter().enumerate() {
            let mut row = vec![format!("{}", i as f64 * self.dt)];
            match v {
                TargetPoint::Vector(x) => row.extend(x.iter().map(|c| c.to_string())),
                TargetPoint::Tree { edge, coord } => {
                    row.push(edge.to_string());
                    row.push(coord.to_string());
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if p > 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("exponent p = {p} must lie in (1, ∞)")))
    }
}

/// `E_{p,ε}` along a decreasing ε list; `limit` is the value at the smallest
/// ε, a lower bound for `E_p` since the p-th roots increase toward it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveEnergyProfile {
    pub p: f64,
    pub eps: Vec<f64>,
    pub values: Vec<f64>,
    pub limit: f64,
}

impl CurveEnergyProfile {
    /// Largest amount by which a coarser `E^{1/p}` exceeds a finer one.
    /// Zero or negative when the profile is monotone.
    pub fn monotonicity_violation(&self) -> f64 {
        let roots: Vec<f64> = self.values.iter().map(|v| v.powf(1.0 / self.p)).collect();
        let mut worst = f64::NEG_INFINITY;
        for i in 0..roots.len() {
            for j in i + 1..roots.len() {
                worst = worst.max(roots[i] - roots[j]);
            }
        }
        if roots.len() < 2 {
            0.0
        } else {
            worst
        }
    }

    /// `ε·E_{p,ε}^{1/p}` along the list; tends to zero.
    pub fn tail(&self) -> Vec<f64> {
        self.eps
            .iter()
            .zip(&self.values)
            .map(|(e, v)| e * v.powf(1.0 / self.p))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["eps", "value"])?;
        for (e, v) in self.eps.iter().zip(&self.values) {
            w.write_record([e.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn circle(n: usize) -> SampledCurve {
        SampledCurve::from_fn(TargetSpace::euclidean(2), 2.0 * PI, n, |t| {
            TargetPoint::vector([t.cos(), t.sin()])
        })
        .unwrap()
    }

    fn line(n: usize) -> SampledCurve {
        SampledCurve::from_fn(TargetSpace::real_line(), 1.0, n, |t| TargetPoint::vector([t])).unwrap()
    }

    fn constant(n: usize) -> SampledCurve {
        SampledCurve::from_fn(TargetSpace::euclidean(2), 1.0, n, |_| TargetPoint::vector([0.3, -1.0])).unwrap()
    }

    fn tree_geodesic(n: usize) -> SampledCurve {
        SampledCurve::from_fn(TargetSpace::tripod(), 2.0, n, |t| {
            if t <= 1.0 {
                TargetPoint::tree(0, 1.0 - t)
            } else {
                TargetPoint::tree(1, t - 1.0)
            }
        })
        .unwrap()
    }

    #[test]
    fn constant_curve_has_no_energy() {
        let c = constant(64);
        for p in [1.5, 2.0, 4.0] {
            assert_eq!(c.energy_eps(p, 0.25).unwrap(), 0.0);
        }
        let prof = c.energy_profile(2.0, &[0.5, 0.25, 0.125]).unwrap();
        assert!(prof.values.iter().all(|v| *v == 0.0));
        assert_eq!(c.metric_speed(10).unwrap(), 0.0);
    }

    #[test]
    fn circle_energy_matches_chord_formula() {
        let c = circle(4096);
        let eps = PI / 8.0;
        let exact = (2.0 * PI - eps) * (2.0 * (eps / 2.0).sin() / eps).powi(2);
        assert!((c.energy_eps(2.0, eps).unwrap() - exact).abs() < 1e-3);
    }

    #[test]
    fn line_energy() {
        let l = line(64);
        assert!((l.energy_eps(2.0, 0.25).unwrap() - 0.75).abs() < 1e-12);
        let prof = l.energy_profile(2.0, &[0.5, 0.25, 0.0625]).unwrap();
        assert!((prof.limit - (1.0 - 0.0625)).abs() < 1e-12);
    }

    #[test]
    fn circle_profile_increases_to_two_pi() {
        let c = circle(4096);
        let eps: Vec<f64> = (1..=6).map(|k| PI / 2f64.powi(k)).collect();
        let prof = c.energy_profile(2.0, &eps).unwrap();
        assert!(prof.values.windows(2).all(|w| w[1] > w[0]));
        assert!((prof.limit - 2.0 * PI).abs() / (2.0 * PI) < 0.01);
        assert!(prof.monotonicity_violation() <= 0.0);
        let tail = prof.tail();
        assert!(tail.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn off_grid_eps_is_rejected() {
        let l = line(64);
        assert!(l.energy_eps(2.0, 0.1).is_err());
        assert!(l.energy_eps(2.0, 1.0).is_err());
        assert!(l.energy_eps(1.0, 0.25).is_err());
        assert!(l.energy_profile(2.0, &[0.25, 0.5]).is_err());
    }

    #[test]
    fn circle_speed_is_second_order() {
        let err = |n: usize| {
            let c = circle(n);
            (1..n).map(|i| (c.metric_speed(i).unwrap() - 1.0).abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(256), err(512));
        assert!(e1 < 1e-3);
        let order = (e1 / e2).log2();
        assert!((order - 2.0).abs() < 0.05, "order {order}");
    }

    #[test]
    fn tree_geodesic_speed() {
        let n = 400;
        let c = tree_geodesic(n);
        for i in 0..=n {
            assert!((c.metric_speed(i).unwrap() - 1.0).abs() < 1e-9);
        }
        assert!(c.metric_speed(n + 1).is_err());
    }

    #[test]
    fn chain_rule() {
        let c = circle(1024);
        let l2 = TargetSpace::euclidean(2);
        let id = c.chain_rule_violation(&l2, |y| y.clone(), |_| 1.0).unwrap();
        assert!(id.abs() <= 1e-12);

        let double = c
            .chain_rule_violation(
                &l2,
                |y| TargetPoint::Vector(y.as_vector().unwrap().iter().map(|v| 2.0 * v).collect()),
                |_| 2.0,
            )
            .unwrap();
        assert!(double <= 1e-12);

        let radius = c
            .chain_rule_violation(
                &TargetSpace::real_line(),
                |y| TargetPoint::vector([crate::metric::euclidean_norm(y.as_vector().unwrap())]),
                |_| 1.0,
            )
            .unwrap();
        // speed of |γ| is zero, so the excess is -1
        assert!((radius + 1.0).abs() < 1e-5);
    }

    #[test]
    fn subadditivity_is_exact_on_the_grid() {
        for c in [circle(1024), tree_geodesic(512)] {
            let eps = 32.0 * c.dt();
            for lambdas in [vec![0.5, 0.5], vec![0.25, 0.75], vec![0.25, 0.25, 0.5]] {
                assert!(c.subadditivity_slack(2.0, eps, &lambdas).unwrap() >= -1e-12);
            }
        }
        assert!(line(64).subadditivity_slack(2.0, 0.25, &[0.6, 0.6]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        for c in [circle(16), tree_geodesic(16)] {
            let mut buf = Vec::new();
            c.write_csv(&mut buf).unwrap();
            let back = SampledCurve::read_csv(c.target().clone(), buf.as_slice()).unwrap();
            assert_eq!(back.intervals(), c.intervals());
            assert!((back.dt() - c.dt()).abs() < 1e-12);
            for (a, b) in back.values().iter().zip(c.values()) {
                assert!(c.target().distance(a, b).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_rejects_nonuniform_grid() {
        let data = "t,x0\n0,0\n0.1,1\n0.3,2\n";
        assert!(SampledCurve::read_csv(TargetSpace::real_line(), data.as_bytes()).is_err());
    }
}
