use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::metric::{euclidean_norm, parse_f64_args, split_tag, Norm, SourceDomain, TargetPoint, TargetSpace};
use crate::{Error, Result};

type EvalFn = Arc<dyn Fn(&[f64]) -> TargetPoint + Send + Sync>;
/// `(x, Z(x)) ↦ |du(Z)|(x)` in closed form.
type OracleFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// A map `u: Ω → Y` given in closed form.
#[derive(Clone)]
pub struct MetricMap {
    target: TargetSpace,
    eval: EvalFn,
    oracle: Option<OracleFn>,
    tag: String,
}

impl fmt::Debug for MetricMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricMap")
            .field("tag", &self.tag)
            .field("target", &self.target.tag())
            .field("oracle", &self.oracle.is_some())
            .finish()
    }
}

impl MetricMap {
    pub fn new<F>(target: TargetSpace, eval: F) -> Self
    where
        F: Fn(&[f64]) -> TargetPoint + Send + Sync + 'static,
    {
        MetricMap { target, eval: Arc::new(eval), oracle: None, tag: "custom".into() }
    }

    /// Attaches a closed-form `|du(Z)|(x)` given `x` and `Z(x)`.
    pub fn with_oracle<G>(mut self, oracle: G) -> Self
    where
        G: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.oracle = Some(Arc::new(oracle));
        self
    }

    pub fn constant(target: TargetSpace, value: TargetPoint) -> Result<Self> {
        target.check_point(&value)?;
        let mut m = MetricMap::new(target, move |_| value.clone()).with_oracle(|_, _| 0.0);
        m.tag = "constant".into();
        Ok(m)
    }

    /// `x ↦ x` into `(R^d, norm)`.
    pub fn identity(dim: usize, norm: Norm) -> Result<Self> {
        let target = TargetSpace::normed(dim, norm)?;
        let mut m = MetricMap::new(target, |x| TargetPoint::vector(x.to_vec())).with_oracle(move |_, z| norm.of(z));
        m.tag = "identity".into();
        Ok(m)
    }

    /// `x ↦ A x` into `(R^k, norm)`, `A` given by rows.
    pub fn linear(rows: Vec<Vec<f64>>, norm: Norm) -> Result<Self> {
        let k = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if k == 0 || d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("matrix rows must be nonempty and of equal length"));
        }
        let target = TargetSpace::normed(k, norm)?;
        let apply = |rows: &[Vec<f64>], x: &[f64]| -> Vec<f64> {
            rows.iter().map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
        };
        let (r1, r2) = (rows.clone(), rows.clone());
        let mut m = MetricMap::new(target, move |x| TargetPoint::Vector(apply(&r1, x)))
            .with_oracle(move |_, z| norm.of(&apply(&r2, z)));
        m.tag = format!(
            "affine({})",
            rows.iter().flatten().map(|a| a.to_string()).collect::<Vec<_>>().join(",")
        );
        Ok(m)
    }

    /// The planar disk folded onto the tripod: the three sectors between the
    /// rays at angles 90°, 210° and 330° go to the three edges, with
    /// coordinate equal to the distance to the nearer bounding ray.
    pub fn tripod_sectors() -> Self {
        let mut m = MetricMap::new(TargetSpace::tripod(), |x| {
            let s = sector_geometry(x);
            TargetPoint::tree(s.sector, s.dist)
        })
        .with_oracle(|x, z| {
            let n = sector_geometry(x).normal;
            (n[0] * z[0] + n[1] * z[1]).abs()
        });
        m.tag = "tripod-sectors".into();
        m
    }

    /// Parses `identity`, `constant`, `affine(a11,a12,a21,a22)` or
    /// `tripod-sectors` for a planar source.
    pub fn from_tag(tag: &str, target: &TargetSpace, dim: usize) -> Result<Self> {
        let unknown = || Error::UnknownTag(tag.to_string());
        let (name, args) = split_tag(tag).ok_or_else(unknown)?;
        let norm = match target.kind() {
            crate::metric::TargetKind::Normed { norm, .. } => Some(*norm),
            _ => None,
        };
        let need_norm = || {
            norm.ok_or_else(|| Error::UnsupportedTarget(format!("`{tag}` needs a normed target")))
        };
        let map = match name {
            "identity" => Self::identity(dim, need_norm()?)?,
            "constant" => Self::constant(target.clone(), target.base_point().clone())?,
            "affine" => {
                let a = parse_f64_args(tag, &args)?;
                if a.len() != dim * dim {
                    return Err(unknown());
                }
                Self::linear(a.chunks(dim).map(<[f64]>::to_vec).collect(), need_norm()?)?
            }
            "tripod-sectors" if dim == 2 => Self::tripod_sectors(),
            _ => return Err(unknown()),
        };
        if map.target() != target {
            return Err(Error::invalid(format!("map `{tag}` does not land in {}", target.tag())));
        }
        Ok(map)
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn target(&self) -> &TargetSpace {
        &self.target
    }

    pub fn eval(&self, x: &[f64]) -> TargetPoint {
        (self.eval)(x)
    }

    pub fn has_oracle(&self) -> bool {
        self.oracle.is_some()
    }

    /// Closed-form `|du(Z)|(x)` when available.
    pub fn oracle(&self, x: &[f64], z: &[f64]) -> Option<f64> {
        self.oracle.as_ref().map(|o| o(x, z))
    }
}

const RAY0: f64 = PI / 2.0;
const SECTOR: f64 = 2.0 * PI / 3.0;

struct SectorGeometry {
    sector: usize,
    dist: f64,
    /// unit normal of the nearer bounding ray, pointing into the sector
    normal: [f64; 2],
}

fn sector_geometry(x: &[f64]) -> SectorGeometry {
    let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
    let rel = (x[1].atan2(x[0]) - RAY0).rem_euclid(2.0 * PI);
    let sector = ((rel / SECTOR) as usize).min(2);
    let lower = RAY0 + sector as f64 * SECTOR;
    let from_lower = rel - sector as f64 * SECTOR;
    let from_upper = SECTOR - from_lower;
    if from_lower <= from_upper {
        SectorGeometry { sector, dist: r * from_lower.sin(), normal: [-lower.sin(), lower.cos()] }
    } else {
        let upper = lower + SECTOR;
        SectorGeometry { sector, dist: r * from_upper.sin(), normal: [upper.sin(), -upper.cos()] }
    }
}

/// Distance from `x` to the set where the tripod sector map is not smooth:
/// the three sector rays and the three bisecting rays.
pub fn tripod_singular_distance(x: &[f64]) -> f64 {
    (0..6)
        .map(|k| {
            let a = RAY0 + k as f64 * SECTOR / 2.0;
            let (c, s) = (a.cos(), a.sin());
            let along = x[0] * c + x[1] * s;
            if along >= 0.0 {
                (x[0] * s - x[1] * c).abs()
            } else {
                euclidean_norm(x)
            }
        })
        .fold(f64::INFINITY, f64::min)
}

type CutoffFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A weight `0 <= φ <= 1` whose support keeps away from `∂Ω`.
#[derive(Clone)]
pub struct Cutoff {
    phi: CutoffFn,
    tag: String,
}

impl fmt::Debug for Cutoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Cutoff").field("tag", &self.tag).finish()
    }
}

impl Cutoff {
    pub fn new<F>(phi: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Cutoff { phi: Arc::new(phi), tag: "custom".into() }
    }

    pub fn one() -> Self {
        Cutoff { phi: Arc::new(|_| 1.0), tag: "one".into() }
    }

    /// 1 on `|x| <= inner`, decreasing linearly to 0 at `|x| = outer`.
    pub fn radial(inner: f64, outer: f64) -> Result<Self> {
        if !(0.0 <= inner && inner < outer) {
            return Err(Error::invalid("radial cutoff needs 0 <= inner < outer"));
        }
        Ok(Cutoff {
            phi: Arc::new(move |x| ((outer - euclidean_norm(x)) / (outer - inner)).clamp(0.0, 1.0)),
            tag: format!("radial({inner},{outer})"),
        })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.phi)(x)
    }

    /// Checks `0 <= φ <= 1` and `φ = 0` wherever `d(x, Ω^c) < margin` at the given points.
    pub fn respects_margin(&self, domain: &SourceDomain, points: &[Vec<f64>], margin: f64) -> bool {
        points.iter().all(|x| {
            let v = self.eval(x);
            let near = !domain.contains(x) || domain.dist_to_complement(x).map_or(true, |d| d < margin);
            (0.0..=1.0).contains(&v) && (!near || v == 0.0)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sector_map_is_continuous_across_rays() {
        let u = MetricMap::tripod_sectors();
        let y = u.target().clone();
        for k in 0..3 {
            let a = RAY0 + k as f64 * SECTOR;
            let on = [0.7 * a.cos(), 0.7 * a.sin()];
            let n = [-a.sin(), a.cos()];
            let plus = [on[0] + 1e-6 * n[0], on[1] + 1e-6 * n[1]];
            let minus = [on[0] - 1e-6 * n[0], on[1] - 1e-6 * n[1]];
            let d = y.distance(&u.eval(&plus), &u.eval(&minus)).unwrap();
            assert!((d - 2e-6).abs() < 1e-12, "ray {k}: {d}");
        }
    }

    #[test]
    fn sector_coordinate_is_distance_to_rays() {
        // bisector of sector 0 sits at 150°, 60° away from both rays
        let a = RAY0 + SECTOR / 2.0;
        let x = [a.cos(), a.sin()];
        match MetricMap::tripod_sectors().eval(&x) {
            TargetPoint::Tree { edge, coord } => {
                assert_eq!(edge, 0);
                assert!((coord - (PI / 3.0).sin()).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        assert!(tripod_singular_distance(&x) < 1e-12);
        // 300° lies 30° from the ray at 330° and from the bisector at 270°
        let a = 5.0 * PI / 3.0;
        assert!((tripod_singular_distance(&[0.5 * a.cos(), 0.5 * a.sin()]) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn tags() {
        let l2 = TargetSpace::euclidean(2);
        let a = MetricMap::from_tag("affine(1,2,0,1)", &l2, 2).unwrap();
        assert_eq!(a.eval(&[1.0, 1.0]), TargetPoint::vector([3.0, 1.0]));
        assert_eq!(a.oracle(&[0.0, 0.0], &[0.0, 1.0]), Some(5f64.sqrt()));
        assert!(MetricMap::from_tag("identity", &TargetSpace::tripod(), 2).is_err());
        assert!(MetricMap::from_tag("tripod-sectors", &l2, 2).is_err());
        assert!(MetricMap::from_tag("tripod-sectors", &TargetSpace::tripod(), 2).is_ok());
        assert!(MetricMap::from_tag("affine(1,2)", &l2, 2).is_err());
    }

    #[test]
    fn radial_cutoff() {
        let c = Cutoff::radial(0.5, 0.9).unwrap();
        assert_eq!(c.eval(&[0.1, 0.0]), 1.0);
        assert!((c.eval(&[0.7, 0.0]) - 0.5).abs() < 1e-12);
        assert_eq!(c.eval(&[0.95, 0.0]), 0.0);
        let disk = SourceDomain::disk(1.0).unwrap();
        let pts: Vec<Vec<f64>> = disk.sample_measure(2000, 1).unwrap().into_iter().map(|s| s.point).collect();
        assert!(c.respects_margin(&disk, &pts, 0.1));
        assert!(!Cutoff::one().respects_margin(&disk, &pts, 0.1));
    }
}
