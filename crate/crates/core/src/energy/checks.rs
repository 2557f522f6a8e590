use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_eps_list, check_p, directional_derivative, flow_step, h_field, MetricMap};
use crate::flow::{flow_point, TestFunction, VectorField};
use crate::metric::{euclidean_norm, LipschitzBump, Sample, SourceDomain};
use crate::{Error, Result};

fn relative(dev: f64, scale: f64) -> f64 {
    if scale > 1e-9 {
        dev / scale
    } else {
        dev
    }
}

/// Max over points of `‖dd(Z₁+Z₂) − dd(Z₁) − dd(Z₂)‖`, measured in the target norm.
pub fn linearity_check(u: &MetricMap, z1: &VectorField, z2: &VectorField, points: &[Vec<f64>], tau: f64) -> Result<f64> {
    let sum = z1.add(z2)?;
    let a = directional_derivative(u, z1, points, tau)?;
    let b = directional_derivative(u, z2, points, tau)?;
    let c = directional_derivative(u, &sum, points, tau)?;
    let mut worst = 0.0f64;
    for i in 0..points.len() {
        let diff: Vec<f64> = (0..c.vectors[i].len()).map(|k| c.vectors[i][k] - a.vectors[i][k] - b.vectors[i][k]).collect();
        worst = worst.max(u.target().norm_of(&diff)?);
    }
    Ok(worst)
}

/// Worst gap between `‖dd(Z)(x)‖` and the metric estimate `H(x)`, in units of
/// `max(1% · H, 1e-4)`; values up to 1 are within tolerance.
pub fn norm_compatibility(
    u: &MetricMap,
    z: &VectorField,
    domain: &SourceDomain,
    points: &[Vec<f64>],
    tau: f64,
    eps: &[f64],
) -> Result<f64> {
    let dd = directional_derivative(u, z, points, tau)?;
    let h = h_field(u, z, domain, eps, points)?;
    let mut worst = 0.0f64;
    for (v, h) in dd.vectors.iter().zip(&h) {
        let gap = (u.target().norm_of(v)? - h).abs();
        worst = worst.max(gap / (0.01 * h).max(1e-4));
    }
    Ok(worst)
}

/// Max relative deviation between `|du(αZ)|` and `|α| |du(Z)|`.
pub fn scaling_check(
    u: &MetricMap,
    z: &VectorField,
    alpha: f64,
    domain: &SourceDomain,
    points: &[Vec<f64>],
    eps: &[f64],
) -> Result<f64> {
    let base = h_field(u, z, domain, eps, points)?;
    let scaled = h_field(u, &z.scaled(alpha), domain, eps, points)?;
    Ok(base
        .iter()
        .zip(&scaled)
        .map(|(b, s)| relative((s - alpha.abs() * b).abs(), alpha.abs() * b))
        .fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriangleReport {
    /// `|du(Z₁)| + |du(Z₂)| − |du(Z₁+Z₂)|` per point
    pub slack: Vec<f64>,
    pub worst_slack: f64,
    /// worst slack divided by the local scale `|du(Z₁)| + |du(Z₂)|`
    pub worst_relative: f64,
}

pub fn triangle_check(
    u: &MetricMap,
    z1: &VectorField,
    z2: &VectorField,
    domain: &SourceDomain,
    points: &[Vec<f64>],
    eps: &[f64],
) -> Result<TriangleReport> {
    let h1 = h_field(u, z1, domain, eps, points)?;
    let h2 = h_field(u, z2, domain, eps, points)?;
    let h12 = h_field(u, &z1.add(z2)?, domain, eps, points)?;
    let slack: Vec<f64> = (0..points.len()).map(|i| h1[i] + h2[i] - h12[i]).collect();
    let worst_slack = slack.iter().copied().fold(f64::INFINITY, f64::min);
    let worst_relative = (0..points.len()).map(|i| relative(slack[i], h1[i] + h2[i])).fold(f64::INFINITY, f64::min);
    Ok(TriangleReport { slack, worst_slack, worst_relative })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParallelogramReport {
    /// `|du(Z₁+Z₂)|² + |du(Z₁−Z₂)|² − 2|du(Z₁)|² − 2|du(Z₂)|²` per point
    pub residual: Vec<f64>,
    /// `2(|du(Z₁)|² + |du(Z₂)|²)` per point
    pub rhs: Vec<f64>,
    /// `Σ w |residual|`
    pub l1: f64,
    pub max_abs: f64,
    pub min_abs: f64,
    /// max of `|residual| / rhs`
    pub max_relative: f64,
}

pub fn parallelogram_residual(
    u: &MetricMap,
    z1: &VectorField,
    z2: &VectorField,
    domain: &SourceDomain,
    sample: &[Sample],
    eps: &[f64],
) -> Result<ParallelogramReport> {
    let points: Vec<Vec<f64>> = sample.iter().map(|s| s.point.clone()).collect();
    let h1 = h_field(u, z1, domain, eps, &points)?;
    let h2 = h_field(u, z2, domain, eps, &points)?;
    let hp = h_field(u, &z1.add(z2)?, domain, eps, &points)?;
    let hm = h_field(u, &VectorField::combination(&[(1.0, z1), (-1.0, z2)])?, domain, eps, &points)?;
    let rhs: Vec<f64> = (0..points.len()).map(|i| 2.0 * (h1[i] * h1[i] + h2[i] * h2[i])).collect();
    let residual: Vec<f64> = (0..points.len()).map(|i| hp[i] * hp[i] + hm[i] * hm[i] - rhs[i]).collect();
    let l1 = sample.iter().zip(&residual).map(|(s, r)| s.weight * r.abs()).sum();
    let max_abs = residual.iter().map(|r| r.abs()).fold(0.0, f64::max);
    let min_abs = residual.iter().map(|r| r.abs()).fold(f64::INFINITY, f64::min);
    let max_relative = residual.iter().zip(&rhs).map(|(r, s)| relative(r.abs(), *s)).fold(0.0, f64::max);
    Ok(ParallelogramReport { residual, rhs, l1, max_abs, min_abs, max_relative })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostcompositionReport {
    /// estimated `|d′u|` per point
    pub lip: Vec<f64>,
    /// `|du(Z)|` per point
    pub h: Vec<f64>,
    /// `|d′u| |Z| − |du(Z)|` per point
    pub slack: Vec<f64>,
    pub worst_slack: f64,
    /// worst slack divided by `|d′u| |Z|`
    pub worst_relative: f64,
}

fn unit_directions(dim: usize, m: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![1.0]],
        2 => (0..m)
            .map(|k| {
                let a = std::f64::consts::PI * k as f64 / m as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            let mut dirs: Vec<Vec<f64>> = (0..dim).map(|i| (0..dim).map(|j| f64::from(i == j)).collect()).collect();
            while dirs.len() < m.max(dim) {
                let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let n = euclidean_norm(&v);
                if n > 1e-3 && n <= 1.0 {
                    dirs.push(v.iter().map(|c| c / n).collect());
                }
            }
            dirs
        }
    }
}

/// `‖u(x+τv) − u(x−τv)‖ / 2τ`, measured by the target distance.
fn spread(u: &MetricMap, x: &[f64], v: &[f64], tau: f64) -> Result<f64> {
    let plus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + tau * b).collect();
    let minus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - tau * b).collect();
    Ok(u.target().distance(&u.eval(&plus), &u.eval(&minus))? / (2.0 * tau))
}

/// Local slope `|d′u|(x)` as the largest difference quotient over `m` unit
/// directions, refined by golden-section search in the plane.
pub(crate) fn local_slope(u: &MetricMap, x: &[f64], m: usize, tau: f64) -> Result<f64> {
    let dirs = unit_directions(x.len(), m);
    let mut best = (0usize, f64::NEG_INFINITY);
    for (k, v) in dirs.iter().enumerate() {
        let s = spread(u, x, v, tau)?;
        if s > best.1 {
            best = (k, s);
        }
    }
    if x.len() != 2 {
        return Ok(best.1);
    }
    let at = |a: f64| spread(u, x, &[a.cos(), a.sin()], tau);
    let width = std::f64::consts::PI / m as f64;
    let center = width * best.0 as f64;
    let (mut lo, mut hi) = (center - width, center + width);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut fc, mut fd) = (at(c)?, at(d)?);
    for _ in 0..60 {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = at(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = at(d)?;
        }
    }
    Ok(best.1.max(fc).max(fd))
}

/// Checks `|du(Z)| ≤ |d′u| |Z|` pointwise.
pub fn postcomposition_gradient(
    u: &MetricMap,
    z: &VectorField,
    domain: &SourceDomain,
    points: &[Vec<f64>],
    m: usize,
    tau: f64,
    eps: &[f64],
) -> Result<PostcompositionReport> {
    if m == 0 || !(tau > 0.0) {
        return Err(Error::invalid("need at least one direction and a positive step"));
    }
    let lip: Vec<f64> = points.par_iter().map(|x| local_slope(u, x, m, tau)).collect::<Result<_>>()?;
    let h = h_field(u, z, domain, eps, points)?;
    let bound: Vec<f64> = points.iter().zip(&lip).map(|(x, l)| l * z.norm_at(x)).collect();
    let slack: Vec<f64> = bound.iter().zip(&h).map(|(b, h)| b - h).collect();
    let worst_slack = slack.iter().copied().fold(f64::INFINITY, f64::min);
    let worst_relative = slack.iter().zip(&bound).map(|(s, b)| relative(*s, *b)).fold(f64::INFINITY, f64::min);
    Ok(PostcompositionReport { lip, h, slack, worst_slack, worst_relative })
}

/// Largest excess of `|d/dt f(u(Fl_t x))|` over `|du(Z)|(Fl_t x)` on a
/// uniform grid of `steps` intervals in `[0, t_max]`. `f` is 1-Lipschitz.
#[allow(clippy::too_many_arguments)]
pub fn regularity_check(
    u: &MetricMap,
    z: &VectorField,
    f: &LipschitzBump,
    domain: &SourceDomain,
    points: &[Vec<f64>],
    t_max: f64,
    steps: usize,
    eps: &[f64],
) -> Result<f64> {
    if steps < 2 || !(t_max > 0.0) {
        return Err(Error::invalid("need t_max > 0 and at least two time steps"));
    }
    for x in points {
        if !domain.contains(x) || domain.dist_to_complement(x)? < z.sup_norm() * t_max {
            return Err(Error::invalid("sample point too close to the boundary for the time window"));
        }
    }
    let dt = t_max / steps as f64;
    let excess = points
        .par_iter()
        .map(|x| -> Result<f64> {
            let mut traj = vec![x.clone()];
            for k in 0..steps {
                let next = flow_point(z, &traj[k], dt, flow_step(dt));
                traj.push(next);
            }
            let g: Vec<f64> = traj.iter().map(|y| f.eval(u.target(), &u.eval(y))).collect::<Result<_>>()?;
            let interior = traj[1..steps].to_vec();
            let h = h_field(u, z, domain, eps, &interior)?;
            Ok((1..steps).map(|k| (g[k + 1] - g[k - 1]).abs() / (2.0 * dt) - h[k - 1]).fold(0.0, f64::max))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(excess.into_iter().fold(0.0, f64::max))
}

/// For `f_t = g ∘ Fl_t`, the sampled L^p distance between
/// `(f_{t+ε} − f_t)/ε` and `dg(Z) ∘ Fl_t`, for each ε of the list.
pub fn incremental_ratio_gaps(
    g: &TestFunction,
    z: &VectorField,
    sample: &[Sample],
    t: f64,
    eps: &[f64],
    p: f64,
) -> Result<Vec<f64>> {
    check_p(p)?;
    check_eps_list(eps)?;
    let base: Vec<Vec<f64>> = sample.par_iter().map(|s| flow_point(z, &s.point, t, flow_step(t).max(1e-6))).collect();
    let exact: Vec<f64> = base
        .iter()
        .map(|y| g.gradient(y).iter().zip(z.value(y)).map(|(a, b)| a * b).sum())
        .collect();
    Ok(eps
        .iter()
        .map(|&e| {
            let ratios: Vec<f64> =
                base.par_iter().map(|y| (g.value(&flow_point(z, y, e, flow_step(e))) - g.value(y)) / e).collect();
            sample
                .iter()
                .zip(ratios.iter().zip(&exact))
                .map(|(s, (r, d))| s.weight * (r - d).abs().powf(p))
                .sum::<f64>()
                .powf(1.0 / p)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{Norm, TargetPoint, TargetSpace};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const EPS: [f64; 3] = [1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0];

    fn disk() -> SourceDomain {
        SourceDomain::disk(1.0).unwrap()
    }

    fn affine() -> MetricMap {
        MetricMap::linear(vec![vec![1.0, 2.0], vec![0.0, 1.0]], Norm::Euclidean).unwrap()
    }

    fn interior(n: usize, r: f64, seed: u64) -> Vec<Vec<f64>> {
        disk()
            .sample_measure(4 * n, seed)
            .unwrap()
            .into_iter()
            .map(|s| s.point)
            .filter(|x| euclidean_norm(x) < r)
            .take(n)
            .collect()
    }

    fn e(i: usize) -> VectorField {
        let mut v = vec![0.0, 0.0];
        v[i] = 1.0;
        VectorField::translation(v)
    }

    #[test]
    fn linearity() {
        let d = disk();
        let pts = interior(50, 0.8, 1);
        assert!(linearity_check(&affine(), &e(0), &e(1), &pts, 1e-4).unwrap() <= 1e-10);
        let id = MetricMap::identity(2, Norm::Euclidean).unwrap();
        let rot = VectorField::rotation(&d).unwrap();
        let tr = VectorField::translation(vec![0.3, -0.2]);
        assert!(linearity_check(&id, &rot, &tr, &pts, 1e-4).unwrap() < 1e-7);
        assert!(linearity_check(&id, &rot, &rot.scaled(-1.0), &pts, 1e-4).unwrap() < 1e-9);
    }

    #[test]
    fn derivative_norm_matches_metric_gradient() {
        let d = disk();
        let pts = interior(100, 0.8, 2);
        let id = MetricMap::identity(2, Norm::Euclidean).unwrap();
        let rot = VectorField::rotation(&d).unwrap();
        assert!(norm_compatibility(&id, &rot, &d, &pts, 1e-4, &EPS).unwrap() <= 1.0);
        assert!(norm_compatibility(&affine(), &e(1), &d, &pts, 1e-4, &EPS).unwrap() <= 1.0);
        let l1 = MetricMap::identity(2, Norm::L1).unwrap();
        assert!(norm_compatibility(&l1, &rot, &d, &pts, 1e-4, &EPS).unwrap() <= 1.0);
    }

    #[test]
    fn scaling() {
        let d = disk();
        let pts: Vec<Vec<f64>> = interior(200, 0.45, 3).into_iter().filter(|x| euclidean_norm(x) > 0.1).collect();
        let id = MetricMap::identity(2, Norm::Euclidean).unwrap();
        let rot = VectorField::rotation(&d).unwrap();
        for alpha in [0.0, 0.5, 1.0, 2.0, -1.0] {
            let dev = scaling_check(&id, &rot, alpha, &d, &pts, &EPS).unwrap();
            assert!(dev <= 0.01, "alpha {alpha}: {dev}");
        }
        assert_eq!(scaling_check(&id, &rot, 1.0, &d, &pts, &EPS).unwrap(), 0.0);
    }

    #[test]
    fn triangle() {
        let d = disk();
        let pts = interior(100, 0.8, 4);
        let rep = triangle_check(&affine(), &e(0), &e(1), &d, &pts, &EPS).unwrap();
        let expected = 1.0 + 5f64.sqrt() - 10f64.sqrt();
        for s in &rep.slack {
            assert_abs_diff_eq!(*s, expected, epsilon = 1e-9);
        }
        let id = MetricMap::identity(2, Norm::Euclidean).unwrap();
        let rot = VectorField::rotation(&d).unwrap();
        let rep = triangle_check(&id, &rot, &VectorField::zero(2), &d, &pts, &EPS).unwrap();
        assert!(rep.worst_slack >= -1e-9);
        assert!(rep.slack.iter().all(|s| s.abs() < 1e-12));
        let rep = triangle_check(&id, &rot, &rot.scaled(-1.0), &d, &pts, &EPS).unwrap();
        assert!(rep.worst_relative > 0.99);
    }

    #[test]
    fn parallelogram() {
        let d = disk();
        let sample: Vec<Sample> =
            d.sample_measure(400, 5).unwrap().into_iter().filter(|s| euclidean_norm(&s.point) < 0.9).collect();
        let l2 = MetricMap::identity(2, Norm::Euclidean).unwrap();
        let rep = parallelogram_residual(&l2, &e(0), &e(1), &d, &sample, &EPS).unwrap();
        assert!(rep.max_abs < 1e-9);
        let l1 = MetricMap::identity(2, Norm::L1).unwrap();
        let rep = parallelogram_residual(&l1, &e(0), &e(1), &d, &sample, &EPS).unwrap();
        for r in &rep.residual {
            assert_abs_diff_eq!(*r, 4.0, epsilon = 1e-9);
        }
        let tri = MetricMap::tripod_sectors();
        let off: Vec<Sample> = sample.into_iter().filter(|s| tripod_ok(&s.point)).collect();
        let rep = parallelogram_residual(&tri, &e(0), &e(1), &d, &off, &EPS).unwrap();
        assert!(rep.max_relative < 1e-6, "{}", rep.max_relative);
    }

    fn tripod_ok(x: &[f64]) -> bool {
        super::super::tripod_singular_distance(x) >= 0.05
    }

    #[test]
    fn postcomposition() {
        let d = disk();
        let pts = interior(30, 0.8, 6);
        let rep = postcomposition_gradient(&affine(), &e(0), &d, &pts, 32, 1e-4, &EPS).unwrap();
        for l in &rep.lip {
            assert_abs_diff_eq!(*l, 1.0 + 2f64.sqrt(), epsilon = 1e-8);
        }
        assert!(rep.worst_slack > 0.0);
        let id = MetricMap::identity(2, Norm::Euclidean).unwrap();
        let rot = VectorField::rotation(&d).unwrap();
        let rep = postcomposition_gradient(&id, &rot, &d, &pts, 8, 1e-4, &EPS).unwrap();
        assert!(rep.lip.iter().all(|l| (l - 1.0).abs() < 1e-9));
        assert!(rep.slack.iter().all(|s| s.abs() < 1e-4));
        let c = MetricMap::constant(TargetSpace::euclidean(2), TargetPoint::vector([1.0, 1.0])).unwrap();
        let rep = postcomposition_gradient(&c, &rot, &d, &pts, 8, 1e-4, &EPS).unwrap();
        assert!(rep.lip.iter().chain(&rep.h).all(|v| *v == 0.0));
    }

    #[test]
    fn regularity_along_flow() {
        let d = disk();
        let pts = interior(20, 0.5, 7);
        let id = MetricMap::identity(2, Norm::Euclidean).unwrap();
        let rot = VectorField::rotation(&d).unwrap();
        let flat = LipschitzBump { center: TargetPoint::vector([5.0, 5.0]), level: 0.5 };
        assert_eq!(regularity_check(&id, &rot, &flat, &d, &pts, 0.4, 40, &EPS).unwrap(), 0.0);
        let radial = LipschitzBump { center: TargetPoint::vector([0.0, 0.0]), level: 2.0 };
        assert!(regularity_check(&id, &rot, &radial, &d, &pts, 0.4, 40, &EPS).unwrap() < 1e-6);
        let skew = LipschitzBump { center: TargetPoint::vector([0.7, -0.2]), level: 10.0 };
        let ex = regularity_check(&affine(), &e(0), &skew, &d, &interior(20, 0.4, 8), 0.3, 30, &EPS).unwrap();
        assert!(ex < 1e-6, "{ex}");
        assert!(regularity_check(&id, &rot, &radial, &d, &[vec![0.9, 0.0]], 0.4, 40, &EPS).is_err());
    }

    #[test]
    fn incremental_ratios_converge() {
        let d = disk();
        let sample: Vec<Sample> =
            d.sample_measure(2000, 8).unwrap().into_iter().filter(|s| euclidean_norm(&s.point) < 0.8).collect();
        let rot = VectorField::rotation(&d).unwrap();
        let gaps = incremental_ratio_gaps(&TestFunction::monomial(2, 1), &rot, &sample, 0.3, &[0.1, 0.05, 0.025], 2.0)
            .unwrap();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
        assert!((gaps[0] / gaps[1] - 2.0).abs() < 0.2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn triangle_holds_for_random_linear_maps(
            a in prop::collection::vec(-3.0f64..3.0, 4),
            v1 in prop::collection::vec(-1.0f64..1.0, 2),
            v2 in prop::collection::vec(-1.0f64..1.0, 2),
        ) {
            let u = MetricMap::linear(vec![a[..2].to_vec(), a[2..].to_vec()], Norm::L1).unwrap();
            let d = disk();
            let pts = vec![vec![0.1, -0.2]];
            let rep = triangle_check(&u, &VectorField::translation(v1), &VectorField::translation(v2), &d, &pts, &EPS).unwrap();
            prop_assert!(rep.worst_slack >= -1e-9);
        }

        #[test]
        fn scaling_is_exact_for_linear_maps(
            a in prop::collection::vec(-3.0f64..3.0, 4),
            v in prop::collection::vec(-1.0f64..1.0, 2),
            alpha in -2.0f64..2.0,
        ) {
            let u = MetricMap::linear(vec![a[..2].to_vec(), a[2..].to_vec()], Norm::Linf).unwrap();
            let d = disk();
            let pts = vec![vec![0.0, 0.3], vec![-0.2, 0.1]];
            prop_assert!(scaling_check(&u, &VectorField::translation(v), alpha, &d, &pts, &EPS).unwrap() < 1e-6);
        }
    }
}
