//! Trotter splitting of two fields, time mollification and the interleaved
//! push-forwards that approximate the flow of a sum.

use rayon::prelude::*;

use super::{
    flow_point, integrate_flow_recorded, DensityGrid, FieldPiece, GridSpec, TimeDependentField, VectorField,
};
use crate::metric::Sample;
use crate::{Error, Result};

/// `Z_{n,t} = 2Z^1` on `[j/2^n, (j+1)/2^n)` for even `j`, `2Z^2` for odd `j`,
/// over `[0, 1)`.
pub fn trotter_field(z1: &VectorField, z2: &VectorField, n: u32) -> Result<TimeDependentField> {
    if n == 0 || n > 30 {
        return Err(Error::invalid("dyadic level must lie in 1..=30"));
    }
    if z1.dim() != z2.dim() {
        return Err(Error::invalid("fields of different dimensions"));
    }
    let (a, b) = (z1.scaled(2.0), z2.scaled(2.0));
    let count = 1usize << n;
    let len = 1.0 / count as f64;
    let pieces = (0..count)
        .map(|j| FieldPiece {
            start: j as f64 * len,
            end: (j + 1) as f64 * len,
            field: if j % 2 == 0 { a.clone() } else { b.clone() },
        })
        .collect();
    TimeDependentField::piecewise(pieces)
}

/// Even mollifiers with unit mass, supported in `[-radius, radius]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mollifier {
    /// `C exp(-1 / (1 - (t/r)^2))`.
    Bump { radius: f64, scale: f64 },
    /// `(1 - |t|/r) / r`.
    Hat { radius: f64 },
}

impl Mollifier {
    pub fn bump(radius: f64) -> Self {
        // ∫_{-1}^{1} exp(-1/(1-u²)) du by composite Simpson
        let n = 20_000;
        let g = |u: f64| if u.abs() < 1.0 { (-1.0 / (1.0 - u * u)).exp() } else { 0.0 };
        let h = 2.0 / n as f64;
        let mut s = g(-1.0) + g(1.0);
        for i in 1..n {
            s += g(-1.0 + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let mass = s * h / 3.0;
        Mollifier::Bump { radius, scale: 1.0 / (mass * radius) }
    }

    pub fn hat(radius: f64) -> Self {
        Mollifier::Hat { radius }
    }

    pub fn radius(&self) -> f64 {
        match *self {
            Mollifier::Bump { radius, .. } | Mollifier::Hat { radius } => radius,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Mollifier::Bump { radius, scale } => {
                let u = t / radius;
                if u.abs() < 1.0 {
                    scale * (-1.0 / (1.0 - u * u)).exp()
                } else {
                    0.0
                }
            }
            Mollifier::Hat { radius } => ((1.0 - t.abs() / radius) / radius).max(0.0),
        }
    }

    /// `∫_a^b φ(t - s) ds` by Simpson's rule on sub-steps no longer than
    /// `q` nor `radius / 256`.
    pub fn mass_between(&self, t: f64, a: f64, b: f64, q: f64) -> f64 {
        let r = self.radius();
        let q = q.min(r / 256.0);
        let (lo, hi) = (a.max(t - r), b.min(t + r));
        if !(hi > lo) {
            return 0.0;
        }
        // split at the kink of the hat
        let mut cuts = vec![lo];
        if lo < t && t < hi {
            cuts.push(t);
        }
        cuts.push(hi);
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let m = ((w[1] - w[0]) / q).ceil().max(1.0) as usize;
            let step = (w[1] - w[0]) / m as f64;
            for i in 0..m {
                let s0 = w[0] + i as f64 * step;
                let s1 = s0 + step;
                let f = |s: f64| self.eval(t - s);
                total += step / 6.0 * (f(s0) + 4.0 * f(0.5 * (s0 + s1)) + f(s1));
            }
        }
        total
    }
}

/// `Z^φ_t = ∫ φ(t - s) Z_s ds` with `Z_s = 0` outside the field's range,
/// sampled at the grid times `t_j = j·q` and held constant on `[t_j, t_j + q)`.
pub fn mollify_field(z: &TimeDependentField, phi: &Mollifier, q: f64) -> Result<TimeDependentField> {
    if !(q > 0.0) {
        return Err(Error::invalid("quadrature step must be positive"));
    }
    let steps = aligned_steps(z.horizon(), q)?;
    for t in z.switch_times() {
        aligned_steps(t, q)?;
    }
    let pieces = (0..steps)
        .into_par_iter()
        .map(|j| {
            let t = j as f64 * q;
            Ok(FieldPiece { start: t, end: (j + 1) as f64 * q, field: mollified_at(z, phi, t, q)? })
        })
        .collect::<Result<Vec<_>>>()?;
    TimeDependentField::piecewise(pieces)
}

/// The mollified field at a single time.
pub fn mollified_at(z: &TimeDependentField, phi: &Mollifier, t: f64, q: f64) -> Result<VectorField> {
    let terms: Vec<(f64, &VectorField)> = z
        .pieces()
        .iter()
        .map(|p| (phi.mass_between(t, p.start, p.end, q), &p.field))
        .filter(|(c, _)| *c != 0.0)
        .collect();
    if terms.is_empty() {
        Ok(VectorField::zero(z.dim()))
    } else {
        VectorField::combination(&terms)
    }
}

fn aligned_steps(span: f64, q: f64) -> Result<usize> {
    let k = span / q;
    if (k - k.round()).abs() > 1e-9 * k.max(1.0) {
        return Err(Error::invalid(format!("step {q} does not divide {span}")));
    }
    Ok(k.round() as usize)
}

/// `∫_0^H ∫ |a_t - b_t| dm dt` by the midpoint rule in time with `n_times`
/// nodes and the given spatial sample.
pub fn space_time_l1_distance(
    a: &TimeDependentField,
    b: &TimeDependentField,
    sample: &[Sample],
    n_times: usize,
) -> f64 {
    let horizon = a.horizon().min(b.horizon());
    let dt = horizon / n_times as f64;
    let per_time: Vec<f64> = (0..n_times)
        .into_par_iter()
        .map(|j| {
            let t = (j as f64 + 0.5) * dt;
            let (za, zb) = (a.at(t), b.at(t));
            sample
                .iter()
                .map(|s| {
                    let (va, vb) = (za.value(&s.point), zb.value(&s.point));
                    s.weight * crate::metric::euclidean_distance(&va, &vb)
                })
                .sum::<f64>()
        })
        .collect();
    per_time.iter().sum::<f64>() * dt
}

/// Dyadic nodes used by the two interleaved push-forwards at time `t`:
/// the last even node `2i/2^n <= t` and the last odd node `(2i+1)/2^n <= t`
/// (or 0 when `t < 1/2^n`).
pub fn interleaving_nodes(n: u32, t: f64) -> (f64, f64) {
    let len = 1.0 / (1u64 << n) as f64;
    let j = (t / len).floor();
    let even = if j as u64 % 2 == 0 { j } else { j - 1.0 };
    let odd = if j as u64 % 2 == 1 { j } else { j - 1.0 };
    (even * len, odd.max(0.0) * len)
}

/// Positions behind `ρ^1_{n,t}` and `ρ^2_{n,t}`: flow `Z_n` up to the
/// even (resp. odd) dyadic node before `t`, then `Z^1` alone for the rest.
pub fn interleaved_positions(
    z1: &VectorField,
    z2: &VectorField,
    n: u32,
    seeds: &[Sample],
    t: f64,
    h: f64,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::invalid("interleaved densities need t in [0, 1)"));
    }
    let zn = trotter_field(z1, z2, n)?;
    let (even, odd) = interleaving_nodes(n, t);
    let run = |node: f64| -> Result<Vec<Vec<f64>>> {
        let at_node: Vec<Vec<f64>> = if node > 0.0 {
            let steps = aligned_steps(node, h)?;
            let fm = integrate_flow_recorded(&zn, seeds, node, h, steps)?;
            fm.snapshot(1)
        } else {
            seeds.iter().map(|s| s.point.clone()).collect()
        };
        Ok(at_node.par_iter().map(|x| flow_point(z1, x, t - node, h)).collect())
    };
    Ok((run(even)?, run(odd)?))
}

/// Histograms of `ρ^1_{n,t}` and `ρ^2_{n,t}` on a common grid.
#[allow(clippy::too_many_arguments)]
pub fn interleaved_densities(
    z1: &VectorField,
    z2: &VectorField,
    n: u32,
    seeds: &[Sample],
    t: f64,
    h: f64,
    spec: &GridSpec,
) -> Result<(DensityGrid, DensityGrid)> {
    let (first, second) = interleaved_positions(z1, z2, n, seeds, t, h)?;
    let bin = |pts: &[Vec<f64>]| {
        DensityGrid::from_points(spec, pts.iter().zip(seeds).map(|(p, s)| (p.as_slice(), s.weight)), t)
    };
    Ok((bin(&first)?, bin(&second)?))
}
