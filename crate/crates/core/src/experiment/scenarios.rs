use std::f64::consts::PI;

use super::{Check, Outcome, ScenarioConfig};
use crate::curve::SampledCurve;
use crate::energy::{
    directional_gradient, linearity_check, norm_compatibility, parallelogram_residual, postcomposition_gradient,
    regularity_check, scaling_check, triangle_check, tripod_singular_distance, write_point_field_csv, MetricMap,
};
use crate::flow::{
    continuity_residual, flow_scaling_deviation, flow_speed_identity, integrate_flow_recorded, interleaved_densities,
    local_convergence_distance, mollify_field, pushforward_density, space_time_l1_distance, trotter_field,
    DensityGrid, GridSpec, TestFunction, TimeDependentField, VectorField,
};
use crate::metric::{
    euclidean_norm, LipschitzBump, LipschitzFamily, Norm, Sample, SourceDomain, TargetKind, TargetPoint, TargetSpace,
};
use crate::{Error, Result};

pub(super) fn run(c: &ScenarioConfig, o: &mut Outcome) -> Result<()> {
    match c.scenario.as_str() {
        "rotation-energy" => rotation_energy(c, o),
        "trotter-convergence" => trotter_convergence(c, o),
        "compression" => compression(c, o),
        "speed-identity" => speed_identity(c, o),
        "scaling" => scaling(c, o),
        "triangle" => triangle(c, o),
        "parallelogram" => parallelogram(c, o),
        "tree-target" => tree_target(c, o),
        "link-postcomposition" => link_postcomposition(c, o),
        "curve-energy" => curve_energy(c, o),
        "stability-mollified" => stability_mollified(c, o),
        other => Err(Error::UnknownTag(other.to_string())),
    }
}

struct Setup {
    domain: SourceDomain,
    target: TargetSpace,
    u: MetricMap,
    z1: VectorField,
    z2: VectorField,
    sample: Vec<Sample>,
}

fn setup(c: &ScenarioConfig) -> Result<Setup> {
    let domain = c.domain()?;
    let target = c.target()?;
    let u = c.map_on(&target, domain.dim())?;
    let z1 = VectorField::from_tag(&c.field, &domain)?;
    let z2 = VectorField::from_tag(&c.field2, &domain)?;
    let sample = domain.sample_measure(c.samples, c.seed)?;
    Ok(Setup { domain, target, u, z1, z2, sample })
}

/// Sample points with `lo·R <= |x| <= hi·R`, `R` the largest norm on the domain.
fn shell(domain: &SourceDomain, sample: &[Sample], lo: f64, hi: f64) -> Vec<Sample> {
    let r = domain.max_norm();
    sample
        .iter()
        .filter(|s| {
            let n = euclidean_norm(&s.point);
            n >= lo * r && n <= hi * r
        })
        .cloned()
        .collect()
}

fn points(sample: &[Sample]) -> Vec<Vec<f64>> {
    sample.iter().map(|s| s.point.clone()).collect()
}

fn take_points(sample: &[Sample], n: usize) -> Vec<Vec<f64>> {
    sample.iter().take(n).map(|s| s.point.clone()).collect()
}

fn oracle_at(u: &MetricMap, z: &VectorField, x: &[f64]) -> Result<f64> {
    u.oracle(x, &z.value(x))
        .ok_or_else(|| Error::invalid(format!("map `{}` has no closed-form gradient", u.tag())))
}

fn is_euclidean(target: &TargetSpace) -> bool {
    matches!(target.kind(), TargetKind::Normed { norm: Norm::Euclidean, .. })
}

/// Largest ratio of consecutive entries; 0 for fewer than two entries.
fn worst_step_ratio(v: &[f64]) -> f64 {
    v.windows(2)
        .map(|w| match (w[0], w[1]) {
            (a, b) if a > 0.0 => b / a,
            (_, b) if b == 0.0 => 0.0,
            _ => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

fn rotation_energy(c: &ScenarioConfig, o: &mut Outcome) -> Result<()> {
    let Setup { domain, target, u, z1: z, sample, .. } = setup(c)?;
    let rep = directional_gradient(&u, &z, &domain, c.p, &c.eps, &sample)?;
    let r = domain.max_norm();

    let closed_form = u.tag() == "identity"
        && z.tag() == "rotation"
        && is_euclidean(&target)
        && domain.tag().starts_with("disk(");
    let reference = if closed_form {
        2.0 * PI * r.powf(c.p + 2.0) / (c.p + 2.0)
    } else {
        let mut acc = 0.0;
        for s in &sample {
            acc += s.weight * oracle_at(&u, &z, &s.point)?.powf(c.p);
        }
        acc
    };
    o.metric("E", rep.energy);
    o.metric("E_reference", reference);
    o.metric("closed_form_reference", f64::from(u8::from(closed_form)));
    o.check(Check::at_most("energy_rel_err", (rep.energy - reference).abs() / reference, 0.02));

    let mut worst = 0.0f64;
    let mut oracle_col = Vec::with_capacity(rep.points.len());
    for pt in &rep.points {
        let exact = u.oracle(&pt.x, &z.value(&pt.x)).unwrap_or(f64::NAN);
        oracle_col.push(exact);
        let n = euclidean_norm(&pt.x);
        if !pt.masked && n >= 0.1 * r && n <= 0.8 * r {
            let err = (pt.h - exact).abs();
            worst = worst.max(if exact > 1e-12 { err / exact } else { err });
        }
    }
    if u.has_oracle() {
        o.check(Check::at_most("H_pointwise_rel_err", worst, 0.01));
    }
    let masked_weight: f64 = sample.iter().zip(&rep.points).filter(|(_, p)| p.masked).map(|(s, _)| s.weight).sum();
    o.metric("masked_mass", masked_weight);
    if rep.lp_gaps.len() >= 2 {
        o.check(Check::at_most("lp_gap_step_ratio", worst_step_ratio(&rep.lp_gaps), 1.0));
    }

    let interior = shell(&domain, &sample, 0.1, 0.8);
    if target.is_normed() {
        let pts = take_points(&interior, 200);
        o.check(Check::at_most("norm_compatibility", norm_compatibility(&u, &z, &domain, &pts, c.tau, &c.eps)?, 1.0));
    }
    if z.sup_norm() > 0.0 {
        let inner = take_points(&shell(&domain, &sample, 0.0, 0.5), 20);
        let f = LipschitzBump { center: target.base_point().clone(), level: 2.0 * r + 1.0 };
        let t_max = 0.4 * r / z.sup_norm();
        o.check(Check::at_most("regularity_excess", regularity_check(&u, &z, &f, &domain, &inner, t_max, 40, &c.eps)?, 1e-6));
    }

    rep.write_json(o.artifact("energy_report.json")?)?;
    let pts = points(&sample);
    let h = rep.h_values();
    write_point_field_csv(&pts, &[("H", &h), ("oracle", &oracle_col)], o.artifact("gradient.csv")?)?;
    let mut w = csv::Writer::from_writer(o.artifact("energy_profile.csv")?);
    w.write_record(["eps", "E", "lp_gap_to_previous"])?;
    for (k, (e, v)) in rep.eps.iter().zip(&rep.e_per_eps).enumerate() {
        let gap = if k == 0 { String::new() } else { rep.lp_gaps[k - 1].to_string() };
        w.write_record([e.to_string(), v.to_string(), gap])?;
    }
    w.flush()?;
    Ok(())
}

fn record_stride(steps: usize, stride: usize) -> usize {
    if steps % stride == 0 {
        stride
    } else {
        1
    }
}

fn steps_for(horizon: f64, h: f64) -> usize {
    (horizon / h).round() as usize
}

fn trotter_convergence(c: &ScenarioConfig, o: &mut Outcome) -> Result<()> {
    let Setup { z1, z2, sample, .. } = setup(c)?;
    let stride = record_stride(steps_for(1.0, c.h), 4);
    let sum = TimeDependentField::constant(z1.add(&z2)?, 1.0)?;
    let reference = integrate_flow_recorded(&sum, &sample, 1.0, c.h / 10.0, 10 * stride)?;
    let mut dbar = Vec::new();
    for &n in &c.levels {
        let fm = integrate_flow_recorded(&trotter_field(&z1, &z2, n)?, &sample, 1.0, c.h, stride)?;
        let d = local_convergence_distance(&fm, &reference)?;
        o.metric(format!("dbar[n={n}]"), d);
        dbar.push(d);
    }
    let last = *dbar.last().expect("levels are nonempty");
    o.check(Check::at_most("dbar_finest", last, 0.02));
    if dbar.len() >= 2 {
        o.check(Check::at_most("dbar_ratio_finest_to_coarsest", last / dbar[0], 1.0 / 3.0));
        o.check(Check::at_most("dbar_step_ratio", worst_step_ratio(&dbar), 1.0));
    }
    let mut w = csv::Writer::from_writer(o.artifact("dbar.csv")?);
    w.write_record(["n", "dbar"])?;
    for (n, d) in c.levels.iter().zip(&dbar) {
        w.write_record([n.to_string(), d.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn compression(c: &ScenarioConfig, o: &mut Outcome) -> Result<()> {
    let Setup { domain, z1: z, sample, .. } = setup(c)?;
    let field = TimeDependentField::constant(z, c.horizon)?;
    let steps = steps_for(c.horizon, c.h);
    let stride = if steps % 10 == 0 { steps / 10 } else { 1 };
    let fm = integrate_flow_recorded(&field, &sample, c.horizon, c.h, stride)?;
    let spec = GridSpec::covering(&domain, c.grid)?;
    let mut densities: Vec<DensityGrid> = Vec::with_capacity(fm.frames());
    for f in 0..fm.frames() {
        match pushforward_density(&fm, &spec, f) {
            Ok(d) => densities.push(d),
            Err(Error::MassLeak { fraction }) => {
                o.metric("leaked_fraction", fraction);
                o.metric("leak_time", fm.time(f));
                o.check(Check::at_most("mass_contained", fraction, 0.0));
                o.fail(format!("mass leaked out of the density grid at t = {}: fraction {fraction:.3e}", fm.time(f)));
                return Ok(());
            }
            Err(e) => return Err(e),
        }
    }
    let (first, last) = (&densities[0], &densities[densities.len() - 1]);
    let growth = field.div_neg_integral(0.0, c.horizon).exp();
    o.metric("sup_initial", first.sup_density());
    o.metric("sup_final", last.sup_density());
    o.metric("bound_factor", growth);
    o.check(Check::at_most("compression_ratio", last.sup_density() / (growth * first.sup_density()), 1.1));
    let drift = (last.total_mass() - first.total_mass()).abs() / first.total_mass();
    o.check(Check::at_most("mass_drift", drift, 1e-12));

    if densities.len() >= 3 {
        let tests = [
            TestFunction::monomial(1, 0),
            TestFunction::monomial(0, 1),
            TestFunction::monomial(2, 0),
            TestFunction::radial_bump(0.8),
        ];
        let res = continuity_residual(&densities, &field, &tests)?;
        let scale = res.entries.iter().map(|e| e.3.abs()).fold(0.0, f64::max).max(1e-12);
        o.metric("continuity_residual_max", res.max);
        o.check(Check::at_most("continuity_relative_residual", res.max / scale, 0.02));
    }
    first.write_csv(o.artifact("density_initial.csv")?)?;
    last.write_csv(o.artifact("density_final.csv")?)?;
    Ok(())
}

fn speed_identity(c: &ScenarioConfig, o: &mut Outcome) -> Result<()> {
    let Setup { domain, z1: z, sample, .. } = setup(c)?;
    let field = TimeDependentField::constant(z.clone(), c.horizon)?;
    let stride = record_stride(steps_for(c.horizon, c.h), 10);
    let fm = integrate_flow_recorded(&field, &sample, c.horizon, c.h, stride)?;
    o.check(Check::at_most("speed_rel_err", flow_speed_identity(&fm, &field), 1e-3));

    // before its escape time no trajectory may leave the domain
    let mut violations = 0usize;
    for (s, seed) in sample.iter().enumerate() {
        let tx = crate::energy::escape_time(&seed.point, &z, &domain)?;
        for f in 0..fm.frames() {
            if fm.time(f) < tx && !domain.contains(fm.position(s, f)) {
                violations += 1;
            }
        }
    }
    o.check(Check::at_most("escape_time_violations", violations as f64, 0.0));
    fm.write_csv(o.artifact("trajectories.csv")?)?;
    Ok(())
}

fn alpha_label(a: f64) -> String {
    format!("[alpha={a}]")
}

fn scaling(c: &ScenarioConfig, o: &mut Outcome) -> Result<()> {
    let Setup { domain, u, z1: z, sample, .. } = setup(c)?;
    let pts = points(&shell(&domain, &sample, 0.0, 0.8));
    let flow_pts = &pts[..pts.len().min(200)];
    let mut w = csv::Writer::from_writer(o.artifact("scaling.csv")?);
    w.write_record(["alpha", "flow_deviation", "gradient_deviation"])?;
    for &alpha in &c.alphas {
        let flow_dev = flow_scaling_deviation(&z, alpha, flow_pts, c.horizon, c.h);
        let grad_dev = scaling_check(&u, &z, alpha, &domain, &pts, &c.eps)?;
        o.check(Check::at_most(format!("flow_scaling_dev{}", alpha_label(alpha)), flow_dev, 1e-6));
        o.check(Check::at_most(format!("gradient_scaling_dev{}", alpha_label(alpha)), grad_dev, 0.01));
        w.write_record([alpha.to_string(), flow_dev.to_string(), grad_dev.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn triangle(c: &ScenarioConfig, o: &mut Outcome) -> Result<()> {
    let Setup { domain, u, z1, z2, sample, .. } = setup(c)?;
    let pts = points(&shell(&domain, &sample, 0.0, 0.8));
    let rep = triangle_check(&u, &z1, &z2, &domain, &pts, &c.eps)?;
    o.metric("worst_slack", rep.worst_slack);
    o.check(Check::at_least("relative_slack", rep.worst_relative, -0.01));
    write_point_field_csv(&pts, &[("slack", &rep.slack)], o.artifact("triangle.csv")?)?;
    Ok(())
}

/// `|du(Z₁+Z₂)|² + |du(Z₁−Z₂)|² − 2|du(Z₁)|² − 2|du(Z₂)|²` from the oracle.
fn oracle_residual(u: &MetricMap, z1: &VectorField, z2: &VectorField, x: &[f64]) -> Result<f64> {
    let (a, b) = (z1.value(x), z2.value(x));
    let plus: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p + q).collect();
    let minus: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p - q).collect();
    let h = |v: &[f64]| {
        u.oracle(x, v).ok_or_else(|| Error::invalid(format!("map `{}` has no closed-form gradient", u.tag())))
    };
    Ok(h(&plus)?.powi(2) + h(&minus)?.powi(2) - 2.0 * h(&a)?.powi(2) - 2.0 * h(&b)?.powi(2))
}

fn off_tripod_singularities(u: &MetricMap, sample: Vec<Sample>) -> Vec<Sample> {
    if u.tag() != "tripod-sectors" {
        return sample;
    }
    sample.into_iter().filter(|s| tripod_singular_distance(&s.point) >= 0.05).collect()
}

fn parallelogram(c: &ScenarioConfig, o: &mut Outcome) -> Result<()> {
    let Setup { domain, target, u, z1, z2, sample } = setup(c)?;
    let sample = off_tripod_singularities(&u, shell(&domain, &sample, 0.0, 0.8));
    let rep = parallelogram_residual(&u, &z1, &z2, &domain, &sample, &c.eps)?;
    o.metric("residual_l1", rep.l1);
    o.metric("residual_max_abs", rep.max_abs);
    let tree = matches!(target.kind(), TargetKind::StarTree { .. });
    let hilbertian = tree || is_euclidean(&target);
    let expected: Vec<f64> = if hilbertian || !u.has_oracle() {
        Vec::new()
    } else {
        sample.iter().map(|s| oracle_residual(&u, &z1, &z2, &s.point)).collect::<Result<_>>()?
    };
    let violation_expected = expected.iter().any(|e| e.abs() > 1e-9);
    if violation_expected {
        let ratio = rep
            .residual
            .iter()
            .zip(&expected)
            .filter(|(_, e)| e.abs() > 1e-9)
            .map(|(r, e)| r / e)
            .fold(f64::INFINITY, f64::min);
        let min_expected = expected.iter().map(|e| e.abs()).fold(f64::INFINITY, f64::min);
        o.metric("closed_form_min", min_expected);
        o.check(Check::at_least("violation_vs_closed_form", ratio, 0.5));
        o.check(Check::at_least("min_residual", rep.residual.iter().copied().fold(f64::INFINITY, f64::min), 0.5 * min_expected));
    } else if !hilbertian && !u.has_oracle() {
        return Err(Error::invalid("non-Hilbert target needs a map with a closed-form gradient"));
    } else {
        let tol = if tree { 0.02 } else { 0.01 };
        o.check(Check::at_most("relative_residual", rep.max_relative, tol));
    }
    write_point_field_csv(
        &points(&sample),
        &[("residual", &rep.residual), ("rhs", &rep.rhs)],
        o.artifact("parallelogram.csv")?,
    )?;
    Ok(())
}

fn tree_target(c: &ScenarioConfig, o: &mut Outcome) -> Result<()> {
    let Setup { domain, u, z1, z2, sample, .. } = setup(c)?;
    let pool = off_tripod_singularities(&u, shell(&domain, &sample, 0.0, 0.9));
    let chosen: Vec<Sample> = pool.iter().take(100).cloned().collect();
    if chosen.len() < 100 {
        return Err(Error::invalid("fewer than 100 sample points away from the sector boundaries"));
    }
    let rep = directional_gradient(&u, &z1, &domain, c.p, &c.eps, &chosen)?;
    let mut oracle = Vec::with_capacity(chosen.len());
    let mut worst = 0.0f64;
    for pt in &rep.points {
        let exact = oracle_at(&u, &z1, &pt.x)?;
        worst = worst.max((pt.h - exact).abs());
        oracle.push(exact);
    }
    o.check(Check::at_most("oracle_abs_err", worst, 1e-6));
    let pts = points(&pool);
    let tri = triangle_check(&u, &z1, &z2, &domain, &pts, &c.eps)?;
    o.check(Check::at_least("triangle_relative_slack", tri.worst_relative, -0.01));
    let par = parallelogram_residual(&u, &z1, &z2, &domain, &pool, &c.eps)?;
    o.check(Check::at_most("parallelogram_relative_residual", par.max_relative, 0.02));
    write_point_field_csv(&points(&chosen), &[("H", &rep.h_values()), ("oracle", &oracle)], o.artifact("tree_gradient.csv")?)?;
    Ok(())
}

/// Matrix behind an `identity` or `affine(..)` map tag.
fn linear_part(tag: &str, dim: usize) -> Result<Vec<Vec<f64>>> {
    if tag == "identity" {
        return Ok((0..dim).map(|i| (0..dim).map(|j| f64::from(i == j)).collect()).collect());
    }
    let inner = tag
        .strip_prefix("affine(")
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| Error::invalid("link-postcomposition needs an identity or affine map"))?;
    let a: Vec<f64> = inner
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| Error::UnknownTag(tag.to_string())))
        .collect::<Result<_>>()?;
    Ok(a.chunks(dim).map(<[f64]>::to_vec).collect())
}

/// Largest singular value by power iteration on `AᵀA`.
fn top_singular_value(a: &[Vec<f64>]) -> f64 {
    let d = a[0].len();
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    v[0] += 0.1;
    let mut sigma = 0.0;
    for _ in 0..500 {
        let av: Vec<f64> = a.iter().map(|r| r.iter().zip(&v).map(|(x, y)| x * y).sum()).collect();
        let atav: Vec<f64> = (0..d).map(|j| a.iter().zip(&av).map(|(r, s)| r[j] * s).sum()).collect();
        let n = euclidean_norm(&atav);
        if n == 0.0 {
            return 0.0;
        }
        v = atav.iter().map(|x| x / n).collect();
        sigma = n.sqrt();
    }
    sigma
}

fn link_postcomposition(c: &ScenarioConfig, o: &mut Outcome) -> Result<()> {
    let Setup { domain, target, u, z1, z2, sample } = setup(c)?;
    if !is_euclidean(&target) {
        return Err(Error::UnsupportedTarget("link-postcomposition compares against Euclidean singular values".into()));
    }
    let sigma = top_singular_value(&linear_part(u.tag(), domain.dim())?);
    o.metric("sigma_max", sigma);
    let pts = take_points(&shell(&domain, &sample, 0.0, 0.8), 200);
    let rep = postcomposition_gradient(&u, &z1, &domain, &pts, c.directions, c.tau, &c.eps)?;
    let slope_err = rep.lip.iter().map(|l| relative_to(l - sigma, sigma)).fold(0.0, f64::max);
    o.check(Check::at_most("slope_rel_err", slope_err, 0.01));
    o.check(Check::at_least("relative_slack", rep.worst_relative, -0.01));
    o.check(Check::at_most("linearity_dev", linearity_check(&u, &z1, &z2, &pts, c.tau)?, 1e-8));

    let centers: Vec<TargetPoint> =
        [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.5]].iter().map(|p| TargetPoint::vector(*p)).collect();
    let family = LipschitzFamily::build(&target, &centers, &[0.5, 1.0, 4.0])?;
    let inner = take_points(&shell(&domain, &sample, 0.0, 0.4), 20);
    let t_max = if z1.sup_norm() > 0.0 { 0.3 * domain.max_norm() / z1.sup_norm() } else { 1.0 };
    let mut excess = 0.0f64;
    for f in family.members() {
        excess = excess.max(regularity_check(&u, &z1, f, &domain, &inner, t_max, 30, &c.eps)?);
    }
    o.check(Check::at_most("regularity_excess", excess, 1e-6));
    write_point_field_csv(
        &pts,
        &[("slope", &rep.lip), ("H", &rep.h), ("slack", &rep.slack)],
        o.artifact("postcomposition.csv")?,
    )?;
    Ok(())
}

fn relative_to(dev: f64, scale: f64) -> f64 {
    if scale > 1e-12 {
        dev.abs() / scale
    } else {
        dev.abs()
    }
}

fn curve_energy(c: &ScenarioConfig, o: &mut Outcome) -> Result<()> {
    let n = c.samples;
    let max_level = *c.levels.iter().max().expect("levels are nonempty");
    if max_level >= usize::BITS || n % (1usize << max_level) != 0 {
        return Err(Error::invalid("samples must be divisible by 2^level for every level"));
    }
    let curves = vec![
        ("circle", SampledCurve::from_fn(TargetSpace::euclidean(2), 2.0 * PI, n, |t| TargetPoint::vector([t.cos(), t.sin()]))?),
        ("wave_l1", SampledCurve::from_fn(TargetSpace::normed(2, Norm::L1)?, 1.0, n, |t| TargetPoint::vector([t, (3.0 * t).sin()]))?),
        (
            "tripod_geodesic",
            SampledCurve::from_fn(TargetSpace::tripod(), 2.0, n, |t| {
                if t < 1.0 {
                    TargetPoint::tree(0, 1.0 - t)
                } else {
                    TargetPoint::tree(1, t - 1.0)
                }
            })?,
        ),
        ("accelerating_line", SampledCurve::from_fn(TargetSpace::real_line(), 1.0, n, |t| TargetPoint::vector([t * t]))?),
    ];
    let mut levels = c.levels.clone();
    levels.sort_unstable();
    levels.dedup();
    let mut w = csv::Writer::from_writer(o.artifact("curve_profiles.csv")?);
    w.write_record(["curve", "eps", "value", "tail"])?;
    for (name, curve) in &curves {
        let horizon = curve.horizon();
        let eps: Vec<f64> = levels.iter().map(|&k| horizon / f64::from(1u32 << k)).collect();
        let profile = curve.energy_profile(c.p, &eps)?;
        let scale = profile.limit.powf(1.0 / c.p).max(1.0);
        let tol = 10.0 * curve.dt() * scale;
        o.metric(format!("limit[{name}]"), profile.limit);
        o.check(Check::at_most(format!("monotonicity[{name}]"), profile.monotonicity_violation(), tol));

        let lag = |e: f64| e / curve.dt();
        let mut slack = f64::INFINITY;
        for &e in &eps {
            for lambdas in [[0.5, 0.5], [0.25, 0.75]] {
                let quarter = lag(0.25 * e);
                if quarter >= 1.0 && (quarter - quarter.round()).abs() < 1e-9 {
                    slack = slack.min(curve.subadditivity_slack(c.p, e, &lambdas)?);
                }
            }
        }
        if slack.is_finite() {
            o.check(Check::at_least(format!("subadditivity[{name}]"), slack, -tol));
        }
        let tail = profile.tail();
        if tail.len() >= 2 {
            o.check(Check::at_most(format!("tail_step_ratio[{name}]"), worst_step_ratio(&tail), 1.0));
            o.check(Check::at_most(format!("tail_ratio[{name}]"), tail[tail.len() - 1] / tail[0], 0.05));
        }
        if *name == "circle" {
            let err = eps
                .iter()
                .zip(&profile.values)
                .map(|(e, v)| (v - (2.0 * PI - e) * (2.0 * (e / 2.0).sin() / e).powf(c.p)).abs())
                .fold(0.0, f64::max);
            o.check(Check::at_most("circle_formula_abs_err", err, 1e-3));
        }
        for ((e, v), t) in eps.iter().zip(&profile.values).zip(&tail) {
            w.write_record([name.to_string(), e.to_string(), v.to_string(), t.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn stability_mollified(c: &ScenarioConfig, o: &mut Outcome) -> Result<()> {
    let Setup { domain, z1, z2, sample, .. } = setup(c)?;
    let phi = c.mollifier()?;
    let sum = TimeDependentField::constant(z1.add(&z2)?, 1.0)?;
    let sum_moll = mollify_field(&sum, &phi, c.h)?;
    let n_times = steps_for(1.0, c.h);
    let stride = record_stride(n_times, 4);
    let reference = integrate_flow_recorded(&sum, &sample, 1.0, c.h / 10.0, 10 * stride)?;

    let t = c.horizon;
    if !(t < 1.0) {
        return Err(Error::invalid("interleaved densities need horizon < 1"));
    }
    let (lo, hi) = domain.bounding_box();
    let margin = 2.0 * (z1.sup_norm() + z2.sup_norm()) * t + 1e-9;
    let spec = GridSpec::new(
        lo.iter().map(|v| v - margin).collect(),
        hi.iter().map(|v| v + margin).collect(),
        vec![c.grid; domain.dim()],
    )?;
    let total: f64 = sample.iter().map(|s| s.weight).sum();

    let (mut raw, mut moll, mut dbar, mut gaps) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut mass_drift = 0.0f64;
    let mut w = csv::Writer::from_writer(o.artifact("stability.csv")?);
    w.write_record(["n", "raw_l1", "mollified_l1", "dbar", "interleaved_gap"])?;
    for &n in &c.levels {
        let zn = trotter_field(&z1, &z2, n)?;
        let r = space_time_l1_distance(&zn, &sum, &sample, n_times);
        let m = space_time_l1_distance(&mollify_field(&zn, &phi, c.h)?, &sum_moll, &sample, n_times);
        let fm = integrate_flow_recorded(&zn, &sample, 1.0, c.h, stride)?;
        let d = local_convergence_distance(&fm, &reference)?;
        let (rho1, rho2) = match interleaved_densities(&z1, &z2, n, &sample, t, c.h, &spec) {
            Ok(pair) => pair,
            Err(Error::MassLeak { fraction }) => {
                o.metric("leaked_fraction", fraction);
                o.check(Check::at_most("mass_contained", fraction, 0.0));
                o.fail(format!("interleaved push-forward left the grid at n = {n}: fraction {fraction:.3e}"));
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        let gap = rho1.masses.iter().zip(&rho2.masses).map(|(a, b)| (a - b).abs()).sum::<f64>() / total;
        mass_drift = mass_drift
            .max((rho1.total_mass() - total).abs() / total)
            .max((rho2.total_mass() - total).abs() / total);
        o.metric(format!("raw_l1[n={n}]"), r);
        o.metric(format!("mollified_l1[n={n}]"), m);
        o.metric(format!("dbar[n={n}]"), d);
        o.metric(format!("interleaved_gap[n={n}]"), gap);
        w.write_record([n.to_string(), r.to_string(), m.to_string(), d.to_string(), gap.to_string()])?;
        raw.push(r);
        moll.push(m);
        dbar.push(d);
        gaps.push(gap);
    }
    w.flush()?;
    let ratio = |v: &[f64]| v[v.len() - 1] / v[0];
    o.check(Check::at_most("interleaved_mass_drift", mass_drift, 1e-12));
    if c.levels.len() >= 2 {
        o.check(Check::at_most("mollified_l1_ratio", ratio(&moll), 1.0 / 3.0));
        o.check(Check::at_most("mollified_l1_step_ratio", worst_step_ratio(&moll), 1.0));
        o.check(Check::at_least("raw_l1_ratio", ratio(&raw), 0.5));
        o.check(Check::at_most("dbar_ratio", ratio(&dbar), 1.0 / 3.0));
        o.check(Check::at_most("interleaved_gap_ratio", ratio(&gaps), 0.5));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singular_values() {
        assert!((top_singular_value(&[vec![1.0, 2.0], vec![0.0, 1.0]]) - (1.0 + 2f64.sqrt())).abs() < 1e-12);
        assert!((top_singular_value(&[vec![3.0, 0.0], vec![0.0, -4.0]]) - 4.0).abs() < 1e-12);
        assert_eq!(top_singular_value(&[vec![0.0, 0.0]]), 0.0);
        assert_eq!(linear_part("identity", 2).unwrap(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(linear_part("tripod-sectors", 2).is_err());
    }

    #[test]
    fn step_ratios() {
        assert_eq!(worst_step_ratio(&[4.0, 2.0, 1.0]), 0.5);
        assert_eq!(worst_step_ratio(&[0.0, 0.0]), 0.0);
        assert_eq!(worst_step_ratio(&[0.0, 1.0]), f64::INFINITY);
        assert_eq!(worst_step_ratio(&[1.0]), 0.0);
    }
}
