//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p kslab --test acceptance`.

use std::collections::BTreeMap;
use std::f64::consts::{E, FRAC_PI_2, PI};
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use kslab::curve::SampledCurve;
use kslab::energy::{
    directional_gradient, parallelogram_residual, postcomposition_gradient, scaling_check, triangle_check,
    tripod_singular_distance, MetricMap,
};
use kslab::experiment::{list_scenarios, run_scenario};
use kslab::flow::{
    flow_scaling_deviation, flow_speed_identity, integrate_flow_recorded, local_convergence_distance,
    pushforward_density, trotter_field, GridSpec, TimeDependentField, VectorField,
};
use kslab::metric::{euclidean_norm, Norm, Sample, SourceDomain, TargetPoint, TargetSpace};

type Outcome = kslab::Result<(bool, String)>;

fn single_threaded<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

fn eps_list() -> Vec<f64> {
    (4..=8).map(|k| 2f64.powi(-k)).collect()
}

fn within(sample: &[Sample], lo: f64, hi: f64) -> Vec<Sample> {
    sample
        .iter()
        .filter(|s| {
            let r = euclidean_norm(&s.point);
            r >= lo && r <= hi
        })
        .cloned()
        .collect()
}

fn pts(sample: &[Sample]) -> Vec<Vec<f64>> {
    sample.iter().map(|s| s.point.clone()).collect()
}

fn affine() -> MetricMap {
    MetricMap::linear(vec![vec![1.0, 2.0], vec![0.0, 1.0]], Norm::Euclidean).unwrap()
}

fn e(i: usize) -> VectorField {
    let mut v = vec![0.0; 2];
    v[i] = 1.0;
    VectorField::translation(v)
}

fn rotation_energy() -> Outcome {
    let disk = SourceDomain::disk(1.0)?;
    let u = MetricMap::identity(2, Norm::Euclidean)?;
    let z = VectorField::rotation(&disk)?;
    let start = Instant::now();
    let rep = single_threaded(|| {
        let sample = disk.sample_measure(100_000, 1)?;
        directional_gradient(&u, &z, &disk, 2.0, &eps_list(), &sample)
    })?;
    let secs = start.elapsed().as_secs_f64();
    let worst = rep
        .points
        .iter()
        .filter(|p| (0.1..=0.8).contains(&euclidean_norm(&p.x)))
        .map(|p| (p.h - euclidean_norm(&p.x)).abs() / euclidean_norm(&p.x))
        .fold(0.0, f64::max);
    let rel = (rep.energy - FRAC_PI_2).abs() / FRAC_PI_2;
    Ok((
        worst <= 0.01 && rel <= 0.02 && secs < 60.0,
        format!("max |H-|x||/|x| = {worst:.2e}, E = {:.5} (rel err {rel:.2e} vs pi/2), {secs:.1}s on one thread", rep.energy),
    ))
}

fn trotter() -> Outcome {
    let disk = SourceDomain::disk(2.0)?;
    let z1 = VectorField::rotation(&disk)?;
    let z2 = VectorField::translation(vec![0.3, 0.0]);
    let h = 2f64.powi(-10);
    let start = Instant::now();
    let seeds = disk.sample_measure(4000, 7)?;
    let sum = TimeDependentField::constant(z1.add(&z2)?, 1.0)?;
    let reference = integrate_flow_recorded(&sum, &seeds, 1.0, h / 10.0, 40)?;
    let dbar = |n: u32| -> kslab::Result<f64> {
        let fm = integrate_flow_recorded(&trotter_field(&z1, &z2, n)?, &seeds, 1.0, h, 4)?;
        local_convergence_distance(&fm, &reference)
    };
    let (d2, d8) = (dbar(2)?, dbar(8)?);
    let secs = start.elapsed().as_secs_f64();
    Ok((
        d8 < 0.02 && d8 < d2 / 3.0 && secs < 120.0,
        format!("dbar(n=2) = {d2:.3e}, dbar(n=8) = {d8:.3e}, {secs:.1}s"),
    ))
}

fn compression() -> Outcome {
    let half = SourceDomain::half_disk(1.0)?;
    let z = VectorField::contraction(&half);
    let field = TimeDependentField::constant(z, 0.5)?;
    let seeds = half.sample_measure(100_000, 3)?;
    let fm = integrate_flow_recorded(&field, &seeds, 0.5, 1e-3, 500)?;
    let spec = GridSpec::covering(&half, 64)?;
    let sup0 = pushforward_density(&fm, &spec, 0)?.sup_density();
    let sup1 = pushforward_density(&fm, &spec, 1)?.sup_density();
    // ‖(div Z)^-‖ = 2 for Z = -x in the plane
    let bound = E.powf(2.0 * 0.5) * sup0 * 1.1;
    Ok((sup1 <= bound, format!("sup rho_0.5 = {sup1:.4}, bound e * {sup0:.4} * 1.1 = {bound:.4}")))
}

fn speed() -> Outcome {
    let disk = SourceDomain::disk(1.0)?;
    let field = TimeDependentField::constant(VectorField::rotation(&disk)?, 1.0)?;
    let seeds = disk.sample_measure(1000, 4)?;
    let fm = integrate_flow_recorded(&field, &seeds, 1.0, 1e-3, 1)?;
    let err = flow_speed_identity(&fm, &field);
    Ok((err <= 1e-3, format!("max relative speed error {err:.2e}")))
}

fn scaling() -> Outcome {
    let disk = SourceDomain::disk(1.0)?;
    let u = MetricMap::identity(2, Norm::Euclidean)?;
    let z = VectorField::rotation(&disk)?;
    let sample = within(&disk.sample_measure(2000, 5)?, 0.0, 0.8);
    let points = pts(&sample);
    let mut ok = true;
    let mut parts = Vec::new();
    for alpha in [0.5, 2.0, -1.0] {
        let flow = flow_scaling_deviation(&z, alpha, &points[..200], 1.0, 1e-3);
        let grad = scaling_check(&u, &z, alpha, &disk, &points, &eps_list())?;
        ok &= flow <= 1e-6 && grad <= 0.01;
        parts.push(format!("a={alpha}: flow {flow:.1e}, |du| {grad:.1e}"));
    }
    Ok((ok, parts.join("; ")))
}

fn triangle() -> Outcome {
    let disk = SourceDomain::disk(1.0)?;
    let points = pts(&within(&disk.sample_measure(2000, 6)?, 0.0, 0.8));
    let a = triangle_check(&affine(), &e(0), &e(1), &disk, &points, &eps_list())?;
    let id = MetricMap::identity(2, Norm::Euclidean)?;
    let b = triangle_check(
        &id,
        &VectorField::rotation(&disk)?,
        &VectorField::translation(vec![0.3, 0.0]),
        &disk,
        &points,
        &eps_list(),
    )?;
    // affine case: 1 + sqrt(5) - sqrt(10) everywhere
    let exact = 1.0 + 5f64.sqrt() - 10f64.sqrt();
    let affine_exact = a.slack.iter().all(|s| (s - exact).abs() < 1e-9);
    Ok((
        a.worst_relative >= -0.01 && b.worst_relative >= -0.01 && affine_exact,
        format!("worst relative slack: affine {:.3e}, rotation+translation {:.3e}", a.worst_relative, b.worst_relative),
    ))
}

fn parallelogram() -> Outcome {
    let disk = SourceDomain::disk(1.0)?;
    let sample = within(&disk.sample_measure(2000, 8)?, 0.0, 0.8);
    let l2 = parallelogram_residual(&affine(), &e(0), &e(1), &disk, &sample, &eps_list())?;
    let off: Vec<Sample> = sample.iter().filter(|s| tripod_singular_distance(&s.point) >= 0.05).cloned().collect();
    let tree = parallelogram_residual(&MetricMap::tripod_sectors(), &e(0), &e(1), &disk, &off, &eps_list())?;
    let l1 = parallelogram_residual(&MetricMap::identity(2, Norm::L1)?, &e(0), &e(1), &disk, &sample, &eps_list())?;
    let l1_min = l1.residual.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((
        l2.max_relative <= 0.01 && tree.max_relative <= 0.02 && l1_min >= 2.0,
        format!(
            "l2 relative {:.1e}, tripod relative {:.1e} on {} points, l1 min residual {l1_min:.4} (closed form 4)",
            l2.max_relative,
            tree.max_relative,
            off.len()
        ),
    ))
}

fn postcomposition() -> Outcome {
    let disk = SourceDomain::disk(1.0)?;
    let points = pts(&within(&disk.sample_measure(1000, 9)?, 0.0, 0.8));
    let rep = postcomposition_gradient(&affine(), &e(0), &disk, &points, 64, 1e-4, &eps_list())?;
    let sigma = 1.0 + 2f64.sqrt();
    let slope_err = rep.lip.iter().map(|l| (l - sigma).abs() / sigma).fold(0.0, f64::max);
    Ok((
        slope_err <= 0.01 && rep.worst_relative >= -0.01,
        format!("|d'u| rel err vs 1+sqrt2 {slope_err:.1e}, worst relative slack {:.3e}", rep.worst_relative),
    ))
}

fn curves(dir: &Path) -> Outcome {
    let n = 4096;
    let circle = SampledCurve::from_fn(TargetSpace::euclidean(2), 2.0 * PI, n, |t| TargetPoint::vector([t.cos(), t.sin()]))?;
    let mut worst = 0.0f64;
    for k in 1..=10 {
        let eps = 2.0 * PI / f64::from(1u32 << k);
        let exact = (2.0 * PI - eps) * (2.0 * (eps / 2.0).sin() / eps).powi(2);
        worst = worst.max((circle.energy_eps(2.0, eps)? - exact).abs());
    }
    // monotonicity, subadditivity and tails on every scenario curve
    let mut cfg = kslab::experiment::ScenarioConfig::defaults("curve-energy")?;
    cfg.out = Some(dir.join("curves"));
    let report = run_scenario(&cfg)?;
    let failing: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    Ok((
        worst <= 1e-3 && report.passed,
        format!("circle formula max err {worst:.1e}; {} curve checks, failing: {failing:?}", report.checks.len()),
    ))
}

/// Report without the wall clock, plus every artifact's bytes.
fn snapshot(dir: &Path) -> kslab::Result<(serde_json::Value, BTreeMap<String, Vec<u8>>)> {
    let mut report: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("report.json"))?)?;
    report.as_object_mut().unwrap().remove("wall_clock_s");
    let mut files = BTreeMap::new();
    for name in report["artifacts"].as_array().unwrap() {
        let name = name.as_str().unwrap().to_string();
        files.insert(name.clone(), fs::read(dir.join(&name))?);
    }
    Ok((report, files))
}

fn determinism(dir: &Path) -> Outcome {
    let mut differing = Vec::new();
    for info in list_scenarios() {
        let mut cfg = info.default_config();
        cfg.out = Some(dir.join(info.name));
        let runs = [1usize, 3].map(|threads| -> kslab::Result<_> {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| run_scenario(&cfg))?;
            snapshot(cfg.out.as_ref().unwrap())
        });
        let [a, b] = runs;
        if a? != b? {
            differing.push(info.name);
        }
    }
    Ok((
        differing.is_empty(),
        format!("{} scenarios re-run on 1 and 3 threads, differing: {differing:?}", list_scenarios().len()),
    ))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 rotation energy", Box::new(rotation_energy)),
        ("2 trotter splitting", Box::new(trotter)),
        ("3 compression bound", Box::new(compression)),
        ("4 speed identity", Box::new(speed)),
        ("5 scaling", Box::new(scaling)),
        ("6 triangle inequality", Box::new(triangle)),
        ("7 parallelogram", Box::new(parallelogram)),
        ("8 post-composition link", Box::new(postcomposition)),
        ("9 curve suite", Box::new(|| curves(tmp.path()))),
        ("10 determinism", Box::new(|| determinism(tmp.path()))),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let (ok, detail) = match run() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        println!("[{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
