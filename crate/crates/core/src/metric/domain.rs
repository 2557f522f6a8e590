use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{euclidean_norm, parse_f64_args, split_tag};
use crate::{Error, Result};

type Predicate = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;
type DensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Shape of the open set `Ω`.
#[derive(Clone)]
pub enum Shape {
    /// Open Euclidean ball.
    Ball { center: Vec<f64>, radius: f64 },
    /// Open axis-aligned box.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Planar annulus `inner < |x - center| < outer`.
    Annulus { center: [f64; 2], inner: f64, outer: f64 },
    /// Arbitrary open set given by a membership predicate inside a bounding box.
    /// Boundary distances are found by ray marching with step `resolution`.
    Custom {
        contains: Predicate,
        lo: Vec<f64>,
        hi: Vec<f64>,
        resolution: f64,
    },
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Ball { center, radius } => f
                .debug_struct("Ball")
                .field("center", center)
                .field("radius", radius)
                .finish(),
            Shape::Box { lo, hi } => f.debug_struct("Box").field("lo", lo).field("hi", hi).finish(),
            Shape::Annulus { center, inner, outer } => f
                .debug_struct("Annulus")
                .field("center", center)
                .field("inner", inner)
                .field("outer", outer)
                .finish(),
            Shape::Custom { lo, hi, resolution, .. } => f
                .debug_struct("Custom")
                .field("lo", lo)
                .field("hi", hi)
                .field("resolution", resolution)
                .finish_non_exhaustive(),
        }
    }
}

/// One Monte Carlo node of `∫ · dm` over `Ω`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub point: Vec<f64>,
    pub weight: f64,
}

/// Bounded open set of Euclidean space carrying the measure `m = w dx`.
#[derive(Clone)]
pub struct SourceDomain {
    dim: usize,
    shape: Shape,
    density: Option<(DensityFn, f64)>,
    tag: String,
}

impl fmt::Debug for SourceDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SourceDomain")
            .field("tag", &self.tag)
            .field("shape", &self.shape)
            .field("weighted", &self.density.is_some())
            .finish()
    }
}

impl SourceDomain {
    /// Planar disk of the given radius centred at the origin.
    pub fn disk(radius: f64) -> Result<Self> {
        Self::ball(vec![0.0, 0.0], radius)
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() || !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid("ball needs a center and a positive radius"));
        }
        let tag = if center.len() == 2 && center.iter().all(|c| *c == 0.0) {
            format!("disk({radius})")
        } else {
            format!("ball({center:?},{radius})")
        };
        Ok(SourceDomain {
            dim: center.len(),
            shape: Shape::Ball { center, radius },
            density: None,
            tag,
        })
    }

    /// The cube `(a, b)^dim`.
    pub fn cube(a: f64, b: f64, dim: usize) -> Result<Self> {
        let mut d = Self::boxed(vec![a; dim], vec![b; dim])?;
        if dim == 2 {
            d.tag = format!("box({a},{b})");
        }
        Ok(d)
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() || lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(Error::invalid("box needs lo < hi componentwise"));
        }
        Ok(SourceDomain {
            dim: lo.len(),
            tag: format!("boxed({lo:?},{hi:?})"),
            shape: Shape::Box { lo, hi },
            density: None,
        })
    }

    pub fn annulus(inner: f64, outer: f64) -> Result<Self> {
        if !(0.0 <= inner && inner < outer && outer.is_finite()) {
            return Err(Error::invalid("annulus needs 0 <= inner < outer"));
        }
        Ok(SourceDomain {
            dim: 2,
            shape: Shape::Annulus { center: [0.0, 0.0], inner, outer },
            density: None,
            tag: format!("annulus({inner},{outer})"),
        })
    }

    /// Upper half `{x_1 > 0}` of the disk of radius `r`.
    pub fn half_disk(r: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::invalid("half-disk needs a positive radius"));
        }
        let mut d = Self::custom(vec![-r, 0.0], vec![r, r], 1e-4 * r, move |x| x[1] > 0.0 && x[0] * x[0] + x[1] * x[1] < r * r)?;
        d.tag = format!("halfdisk({r})");
        Ok(d)
    }

    pub fn custom<F>(lo: Vec<f64>, hi: Vec<f64>, resolution: f64, contains: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> bool + Send + Sync + 'static,
    {
        if lo.is_empty() || lo.len() != hi.len() || lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(Error::invalid("custom domain needs a nondegenerate bounding box"));
        }
        if !(resolution > 0.0) {
            return Err(Error::invalid("boundary resolution must be positive"));
        }
        Ok(SourceDomain {
            dim: lo.len(),
            tag: "custom".into(),
            shape: Shape::Custom { contains: Arc::new(contains), lo, hi, resolution },
            density: None,
        })
    }

    /// Replaces the uniform density by `w`, which must be bounded by `bound`
    /// on the bounding box.
    pub fn with_density<F>(mut self, bound: f64, w: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        self.density = Some((Arc::new(w), bound));
        self
    }

    /// Parses `disk(r)`, `halfdisk(r)`, `box(a,b)` (the square `(a,b)^2`) or `annulus(r0,r1)`.
    pub fn from_tag(tag: &str) -> Result<Self> {
        let unknown = || Error::UnknownTag(tag.to_string());
        let (name, args) = split_tag(tag).ok_or_else(unknown)?;
        let nums = parse_f64_args(tag, &args)?;
        match (name, nums.as_slice()) {
            ("disk", [r]) => Self::disk(*r),
            ("halfdisk", [r]) => Self::half_disk(*r),
            ("box", [a, b]) => Self::cube(*a, *b, 2),
            ("annulus", [r0, r1]) => Self::annulus(*r0, *r1),
            _ => Err(unknown()),
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.len() != self.dim {
            return false;
        }
        match &self.shape {
            Shape::Ball { center, radius } => super::euclidean_distance(x, center) < *radius,
            Shape::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| l < v && v < h),
            Shape::Annulus { center, inner, outer } => {
                let r = ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt();
                *inner < r && r < *outer
            }
            Shape::Custom { contains, lo, hi, .. } => {
                x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| l <= v && v <= h) && contains(x)
            }
        }
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.shape {
            Shape::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            Shape::Box { lo, hi } | Shape::Custom { lo, hi, .. } => (lo.clone(), hi.clone()),
            Shape::Annulus { center, outer, .. } => (
                vec![center[0] - outer, center[1] - outer],
                vec![center[0] + outer, center[1] + outer],
            ),
        }
    }

    pub fn box_volume(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        lo.iter().zip(&hi).map(|(l, h)| h - l).product()
    }

    /// Diameter of the bounding box.
    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        super::euclidean_distance(&lo, &hi)
    }

    /// An upper bound for `sup_{x ∈ Ω} |x|`.
    pub fn max_norm(&self) -> f64 {
        match &self.shape {
            Shape::Ball { center, radius } => euclidean_norm(center) + radius,
            Shape::Annulus { center, outer, .. } => euclidean_norm(center) + outer,
            Shape::Box { lo, hi } | Shape::Custom { lo, hi, .. } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| l.abs().max(h.abs()).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// Density `w(x)` of `m` with respect to Lebesgue measure.
    pub fn density(&self, x: &[f64]) -> f64 {
        match &self.density {
            None => 1.0,
            Some((w, _)) => w(x),
        }
    }

    pub fn density_bound(&self) -> f64 {
        self.density.as_ref().map_or(1.0, |(_, b)| *b)
    }

    /// `d(x, Ω^c)`. Closed form for balls, boxes and annuli. Custom shapes
    /// march rays from `x`; the result is an upper bound whose excess is of
    /// the order of the configured resolution.
    pub fn dist_to_complement(&self, x: &[f64]) -> Result<f64> {
        if !self.contains(x) {
            return Err(Error::invalid(format!("{x:?} is not in {}", self.tag)));
        }
        Ok(match &self.shape {
            Shape::Ball { center, radius } => radius - super::euclidean_distance(x, center),
            Shape::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (l, h))| (v - l).min(h - v))
                .fold(f64::INFINITY, f64::min),
            Shape::Annulus { center, inner, outer } => {
                let r = ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt();
                (r - inner).min(outer - r)
            }
            Shape::Custom { resolution, .. } => self.ray_march(x, *resolution),
        })
    }

    fn ray_march(&self, x: &[f64], resolution: f64) -> f64 {
        let reach = self.diameter();
        let directions: Vec<Vec<f64>> = if self.dim == 1 {
            vec![vec![1.0], vec![-1.0]]
        } else if self.dim == 2 {
            let n = ((2.0 * std::f64::consts::PI * reach / resolution).ceil() as usize).max(16);
            (0..n)
                .map(|k| {
                    let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                    vec![a.cos(), a.sin()]
                })
                .collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            (0..4096)
                .map(|_| {
                    let v: Vec<f64> = (0..self.dim).map(|_| rng.random::<f64>() - 0.5).collect();
                    let n = euclidean_norm(&v);
                    v.into_iter().map(|c| c / n).collect()
                })
                .collect()
        };
        let at = |dir: &[f64], s: f64| -> Vec<f64> { x.iter().zip(dir).map(|(a, d)| a + s * d).collect() };
        let mut best = f64::INFINITY;
        for dir in &directions {
            let mut s = resolution;
            while s < reach + resolution && s < best && self.contains(&at(dir, s)) {
                s += resolution;
            }
            if s >= best {
                continue;
            }
            let (mut inside, mut outside) = ((s - resolution).max(0.0), s);
            for _ in 0..48 {
                let mid = 0.5 * (inside + outside);
                if self.contains(&at(dir, mid)) {
                    inside = mid;
                } else {
                    outside = mid;
                }
            }
            best = best.min(outside);
        }
        best
    }

    /// Monte Carlo nodes for `∫ · dm` over `Ω`: `n` uniform draws in the
    /// bounding box, keeping those inside `Ω` with weight `w(x) vol(box) / n`.
    pub fn sample_measure(&self, n: usize, seed: u64) -> Result<Vec<Sample>> {
        if n == 0 {
            return Err(Error::invalid("sample count must be positive"));
        }
        let (lo, hi) = self.bounding_box();
        let scale = self.box_volume() / n as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        let mut x = vec![0.0; self.dim];
        for _ in 0..n {
            for (k, xk) in x.iter_mut().enumerate() {
                *xk = lo[k] + (hi[k] - lo[k]) * rng.random::<f64>();
            }
            if self.contains(&x) {
                out.push(Sample { point: x.clone(), weight: self.density(&x) * scale });
            }
        }
        Ok(out)
    }
}
