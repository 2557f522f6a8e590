use std::io::Write;

use rayon::prelude::*;

use super::{TimeDependentField, VectorField};
use crate::metric::{euclidean_distance, Sample};
use crate::{Error, Result};

const ALIGN_TOL: f64 = 1e-9;

struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    y: Vec<f64>,
}

impl Rk4Scratch {
    fn new(dim: usize) -> Self {
        Rk4Scratch {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            y: vec![0.0; dim],
        }
    }

    /// One classical RK4 step of the autonomous field `z`, in place.
    fn step(&mut self, z: &VectorField, x: &mut [f64], h: f64) {
        let Rk4Scratch { k1, k2, k3, k4, y } = self;
        z.eval_into(x, k1);
        for i in 0..x.len() {
            y[i] = x[i] + 0.5 * h * k1[i];
        }
        z.eval_into(y, k2);
        for i in 0..x.len() {
            y[i] = x[i] + 0.5 * h * k2[i];
        }
        z.eval_into(y, k3);
        for i in 0..x.len() {
            y[i] = x[i] + h * k3[i];
        }
        z.eval_into(y, k4);
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

/// `Fl^Z_t(x)` for an autonomous field; negative `t` integrates backwards.
/// Uses `ceil(|t| / max_step)` equal RK4 steps.
pub fn flow_point(z: &VectorField, x: &[f64], t: f64, max_step: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    if t == 0.0 {
        return y;
    }
    let n = (t.abs() / max_step).ceil().max(1.0) as usize;
    let h = t / n as f64;
    let mut scratch = Rk4Scratch::new(x.len());
    for _ in 0..n {
        scratch.step(z, &mut y, h);
    }
    y
}

/// Positions of weighted seeds on a uniform time grid: the discrete flow map.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowMap {
    dim: usize,
    frame_dt: f64,
    frames: usize,
    seeds: Vec<Sample>,
    /// `[seed][frame][coord]`
    positions: Vec<f64>,
}

impl FlowMap {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seeds(&self) -> &[Sample] {
        &self.seeds
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    /// Number of recorded frames, including time 0.
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn frame_dt(&self) -> f64 {
        self.frame_dt
    }

    pub fn time(&self, frame: usize) -> f64 {
        frame as f64 * self.frame_dt
    }

    pub fn position(&self, seed: usize, frame: usize) -> &[f64] {
        let off = (seed * self.frames + frame) * self.dim;
        &self.positions[off..off + self.dim]
    }

    pub fn trajectory(&self, seed: usize) -> impl Iterator<Item = &[f64]> {
        let stride = self.frames * self.dim;
        self.positions[seed * stride..(seed + 1) * stride].chunks(self.dim)
    }

    /// Positions of every seed at `frame`.
    pub fn snapshot(&self, frame: usize) -> Vec<Vec<f64>> {
        (0..self.len()).map(|s| self.position(s, frame).to_vec()).collect()
    }

    /// Rows `seed,t,x0,x1,...`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["seed".to_string(), "t".to_string()];
        header.extend((0..self.dim).map(|k| format!("x{k}")));
        w.write_record(&header)?;
        for s in 0..self.len() {
            for (f, x) in self.trajectory(s).enumerate() {
                let mut row = vec![s.to_string(), self.time(f).to_string()];
                row.extend(x.iter().map(|c| c.to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn steps_of(span: f64, h: f64, what: &str) -> Result<usize> {
    let k = span / h;
    let n = k.round();
    if (k - n).abs() > ALIGN_TOL * k.max(1.0) {
        return Err(Error::invalid(format!("step {h} does not divide {what} {span}")));
    }
    Ok(n as usize)
}

/// Integrates every seed with RK4 at step `h`, recording each step.
pub fn integrate_flow(field: &TimeDependentField, seeds: &[Sample], horizon: f64, h: f64) -> Result<FlowMap> {
    integrate_flow_recorded(field, seeds, horizon, h, 1)
}

/// As [`integrate_flow`], keeping every `record_every`-th step.
///
/// `h` must divide the horizon and every switching time of `field`, so no
/// RK4 step straddles a switch.
pub fn integrate_flow_recorded(
    field: &TimeDependentField,
    seeds: &[Sample],
    horizon: f64,
    h: f64,
    record_every: usize,
) -> Result<FlowMap> {
    if !(h > 0.0) || !(horizon > 0.0) || record_every == 0 {
        return Err(Error::invalid("step, horizon and record stride must be positive"));
    }
    if horizon > field.horizon() * (1.0 + ALIGN_TOL) {
        return Err(Error::invalid("horizon exceeds the field's time range"));
    }
    let steps = steps_of(horizon, h, "horizon")?;
    for t in field.switch_times().filter(|t| *t < horizon) {
        steps_of(t, h, "switching time")?;
    }
    if steps % record_every != 0 {
        return Err(Error::invalid("record stride must divide the number of steps"));
    }
    let dim = field.dim();
    if seeds.iter().any(|s| s.point.len() != dim) {
        return Err(Error::invalid("seed dimension does not match the field"));
    }
    let frames = steps / record_every + 1;
    let step_fields: Vec<&VectorField> = (0..steps).map(|k| field.at((k as f64 + 0.5) * h)).collect();

    let trajectories: Vec<Vec<f64>> = seeds
        .par_iter()
        .map(|s| {
            let mut out = Vec::with_capacity(frames * dim);
            let mut x = s.point.clone();
            let mut scratch = Rk4Scratch::new(dim);
            out.extend_from_slice(&x);
            for (k, z) in step_fields.iter().enumerate() {
                scratch.step(z, &mut x, h);
                if (k + 1) % record_every == 0 {
                    out.extend_from_slice(&x);
                }
            }
            out
        })
        .collect();
    let positions: Vec<f64> = trajectories.concat();
    if positions.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("trajectory blew up"));
    }
    Ok(FlowMap {
        dim,
        frame_dt: h * record_every as f64,
        frames,
        seeds: seeds.to_vec(),
        positions,
    })
}

/// Maximum over seeds and interior frames of the relative gap between the
/// central-difference trajectory speed and `|Z_t|` along the trajectory.
/// Frames whose stencil crosses a switching time are skipped.
pub fn flow_speed_identity(fm: &FlowMap, field: &TimeDependentField) -> f64 {
    let dt = fm.frame_dt();
    let usable: Vec<usize> = (1..fm.frames().saturating_sub(1))
        .filter(|&f| {
            let piece = &field.pieces()[field.piece_index(fm.time(f))];
            piece.start <= fm.time(f - 1) + 1e-12 && fm.time(f + 1) <= piece.end + 1e-12
        })
        .collect();
    (0..fm.len())
        .into_par_iter()
        .map(|s| {
            usable.iter().fold(0.0f64, |worst, &f| {
                let speed = euclidean_distance(fm.position(s, f + 1), fm.position(s, f - 1)) / (2.0 * dt);
                let z = field.at(fm.time(f)).norm_at(fm.position(s, f));
                let err = if z > 1e-12 { (speed - z).abs() / z } else { (speed - z).abs() };
                worst.max(err)
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(0.0, f64::max)
}

/// `max_x |Fl^{αZ}_t(x) - Fl^Z_{αt}(x)|`.
pub fn flow_scaling_deviation(z: &VectorField, alpha: f64, points: &[Vec<f64>], t: f64, h: f64) -> f64 {
    let scaled = z.scaled(alpha);
    points
        .par_iter()
        .map(|x| {
            let a = flow_point(&scaled, x, t, h);
            let b = flow_point(z, x, alpha * t, h);
            euclidean_distance(&a, &b)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(0.0, f64::max)
}

/// `d̄(Fl, Fl') = ∫ 1 ∧ max_t |Fl_t(x) - Fl'_t(x)| dm'(x)` with `m'` the
/// normalized seed weights.
pub fn local_convergence_distance(a: &FlowMap, b: &FlowMap) -> Result<f64> {
    if a.len() != b.len()
        || a.frames() != b.frames()
        || a.dim() != b.dim()
        || (a.frame_dt() - b.frame_dt()).abs() > 1e-12 * a.frame_dt()
        || a.seeds() != b.seeds()
    {
        return Err(Error::invalid("flow maps have different seeds or time grids"));
    }
    let total: f64 = a.seeds().iter().map(|s| s.weight).sum();
    if !(total > 0.0) {
        return Err(Error::invalid("seed weights sum to zero"));
    }
    let per_seed: Vec<f64> = (0..a.len())
        .into_par_iter()
        .map(|s| {
            let gap = a
                .trajectory(s)
                .zip(b.trajectory(s))
                .map(|(x, y)| euclidean_distance(x, y))
                .fold(0.0, f64::max);
            a.seeds()[s].weight * gap.min(1.0)
        })
        .collect();
    Ok(per_seed.iter().sum::<f64>() / total)
}

/// Maximum Euclidean displacement of any seed over the recorded frames.
pub fn max_displacement(fm: &FlowMap) -> f64 {
    (0..fm.len())
        .map(|s| {
            let x0 = fm.position(s, 0).to_vec();
            fm.trajectory(s).map(|x| euclidean_distance(x, &x0)).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}
