use serde::{Deserialize, Serialize};

use super::{parse_f64_args, split_tag};
use crate::{Error, Result};

/// A point of a target space: a vector of a normed space or a position on
/// one half-line of a star tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TargetPoint {
    Vector(Vec<f64>),
    Tree { edge: usize, coord: f64 },
}

impl TargetPoint {
    pub fn vector(v: impl Into<Vec<f64>>) -> Self {
        TargetPoint::Vector(v.into())
    }

    pub fn tree(edge: usize, coord: f64) -> Self {
        TargetPoint::Tree { edge, coord }
    }

    pub fn as_vector(&self) -> Option<&[f64]> {
        match self {
            TargetPoint::Vector(v) => Some(v),
            TargetPoint::Tree { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Norm {
    Euclidean,
    L1,
    Linf,
    /// The `l^q` norm, `q >= 1`.
    Lp(f64),
}

impl Norm {
    pub fn of(&self, v: &[f64]) -> f64 {
        match *self {
            Norm::Euclidean => super::euclidean_norm(v),
            Norm::L1 => v.iter().map(|x| x.abs()).sum(),
            Norm::Linf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            Norm::Lp(q) => v.iter().map(|x| x.abs().powf(q)).sum::<f64>().powf(1.0 / q),
        }
    }

    fn tag(&self) -> String {
        match self {
            Norm::Euclidean => "l2".into(),
            Norm::L1 => "l1".into(),
            Norm::Linf => "linf".into(),
            Norm::Lp(q) => format!("lp:{q}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TargetKind {
    Normed { dim: usize, norm: Norm },
    /// `edges` half-lines glued at a common root.
    StarTree { edges: usize },
}

/// A pointed complete metric space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSpace {
    kind: TargetKind,
    base: TargetPoint,
}

impl TargetSpace {
    pub fn normed(dim: usize, norm: Norm) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("normed target needs dimension >= 1"));
        }
        if let Norm::Lp(q) = norm {
            if !(q >= 1.0 && q.is_finite()) {
                return Err(Error::invalid(format!("l^q norm needs q >= 1, got {q}")));
            }
        }
        Ok(TargetSpace {
            kind: TargetKind::Normed { dim, norm },
            base: TargetPoint::Vector(vec![0.0; dim]),
        })
    }

    pub fn euclidean(dim: usize) -> Self {
        Self::normed(dim, Norm::Euclidean).expect("dimension must be positive")
    }

    /// The real line with its usual distance.
    pub fn real_line() -> Self {
        Self::euclidean(1)
    }

    pub fn star_tree(edges: usize) -> Result<Self> {
        if edges == 0 {
            return Err(Error::invalid("star tree needs at least one edge"));
        }
        Ok(TargetSpace {
            kind: TargetKind::StarTree { edges },
            base: TargetPoint::Tree { edge: 0, coord: 0.0 },
        })
    }

    pub fn tripod() -> Self {
        Self::star_tree(3).unwrap()
    }

    /// Parses `normed(k,l2|l1|linf|lp:q)`, `tripod` or `star(E)`.
    pub fn from_tag(tag: &str) -> Result<Self> {
        let unknown = || Error::UnknownTag(tag.to_string());
        let (name, args) = split_tag(tag).ok_or_else(unknown)?;
        match (name, args.as_slice()) {
            ("tripod", []) => Ok(Self::tripod()),
            ("star", [e]) => Self::star_tree(e.parse().map_err(|_| unknown())?),
            ("normed", [k, n]) => {
                let dim: usize = k.parse().map_err(|_| unknown())?;
                let norm = match *n {
                    "l2" | "euclidean" => Norm::Euclidean,
                    "l1" => Norm::L1,
                    "linf" => Norm::Linf,
                    other => {
                        let q = other.strip_prefix("lp:").ok_or_else(unknown)?;
                        Norm::Lp(parse_f64_args(tag, &[q])?[0])
                    }
                };
                Self::normed(dim, norm)
            }
            _ => Err(unknown()),
        }
    }

    pub fn tag(&self) -> String {
        match &self.kind {
            TargetKind::Normed { dim, norm } => format!("normed({dim},{})", norm.tag()),
            TargetKind::StarTree { edges: 3 } => "tripod".into(),
            TargetKind::StarTree { edges } => format!("star({edges})"),
        }
    }

    pub fn kind(&self) -> &TargetKind {
        &self.kind
    }

    pub fn base_point(&self) -> &TargetPoint {
        &self.base
    }

    pub fn is_normed(&self) -> bool {
        matches!(self.kind, TargetKind::Normed { .. })
    }

    /// Norm of a vector, for normed targets only.
    pub fn norm_of(&self, v: &[f64]) -> Result<f64> {
        match &self.kind {
            TargetKind::Normed { norm, .. } => Ok(norm.of(v)),
            TargetKind::StarTree { .. } => Err(Error::UnsupportedTarget(
                "star trees carry no linear structure".into(),
            )),
        }
    }

    pub fn check_point(&self, p: &TargetPoint) -> Result<()> {
        match (&self.kind, p) {
            (TargetKind::Normed { dim, .. }, TargetPoint::Vector(v)) if v.len() == *dim => Ok(()),
            (TargetKind::StarTree { edges }, TargetPoint::Tree { edge, coord })
                if edge < edges && *coord >= 0.0 =>
            {
                Ok(())
            }
            _ => Err(Error::invalid(format!(
                "point {p:?} does not belong to {}",
                self.tag()
            ))),
        }
    }

    /// The distance `d_Y(a, b)`.
    pub fn distance(&self, a: &TargetPoint, b: &TargetPoint) -> Result<f64> {
        match (&self.kind, a, b) {
            (TargetKind::Normed { dim, norm }, TargetPoint::Vector(x), TargetPoint::Vector(y))
                if x.len() == *dim && y.len() == *dim =>
            {
                Ok(normed_distance(*norm, x, y))
            }
            (
                TargetKind::StarTree { edges },
                &TargetPoint::Tree { edge: i, coord: s },
                &TargetPoint::Tree { edge: j, coord: t },
            ) if i < *edges && j < *edges && s >= 0.0 && t >= 0.0 => {
                Ok(if i == j { (s - t).abs() } else { s + t })
            }
            _ => Err(Error::invalid(format!(
                "points {a:?} and {b:?} are not both in {}",
                self.tag()
            ))),
        }
    }
}

fn normed_distance(norm: Norm, x: &[f64], y: &[f64]) -> f64 {
    let diff = x.iter().zip(y);
    match norm {
        Norm::Euclidean => diff.map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
        Norm::L1 => diff.map(|(a, b)| (a - b).abs()).sum(),
        Norm::Linf => diff.fold(0.0, |m, (a, b)| m.max((a - b).abs())),
        Norm::Lp(q) => diff
            .map(|(a, b)| (a - b).abs().powf(q))
            .sum::<f64>()
            .powf(1.0 / q),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distance_examples() {
        let l2 = TargetSpace::euclidean(2);
        let d = l2
            .distance(&TargetPoint::vector([0.0, 0.0]), &TargetPoint::vector([3.0, 4.0]))
            .unwrap();
        assert_eq!(d, 5.0);

        let tree = TargetSpace::tripod();
        let d = tree
            .distance(&TargetPoint::tree(0, 1.0), &TargetPoint::tree(1, 2.0))
            .unwrap();
        assert_eq!(d, 3.0);

        let l1 = TargetSpace::normed(2, Norm::L1).unwrap();
        let d = l1
            .distance(&TargetPoint::vector([1.0, 0.0]), &TargetPoint::vector([0.0, 1.0]))
            .unwrap();
        assert_eq!(d, 2.0);
    }

    #[test]
    fn root_is_shared_by_all_edges() {
        let tree = TargetSpace::tripod();
        let d = tree
            .distance(&TargetPoint::tree(0, 0.0), &TargetPoint::tree(2, 0.0))
            .unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn mismatched_points_are_rejected() {
        let l2 = TargetSpace::euclidean(2);
        assert!(l2
            .distance(&TargetPoint::tree(0, 1.0), &TargetPoint::vector([0.0, 0.0]))
            .is_err());
        assert!(l2
            .distance(&TargetPoint::vector([0.0]), &TargetPoint::vector([0.0, 0.0]))
            .is_err());
        let tree = TargetSpace::tripod();
        assert!(tree
            .distance(&TargetPoint::tree(3, 1.0), &TargetPoint::tree(0, 1.0))
            .is_err());
        assert!(tree
            .distance(&TargetPoint::tree(0, -1.0), &TargetPoint::tree(0, 1.0))
            .is_err());
    }

    #[test]
    fn tags_round_trip() {
        for tag in ["normed(2,l2)", "normed(3,l1)", "normed(2,linf)", "normed(2,lp:3)", "tripod", "star(5)"] {
            let t = TargetSpace::from_tag(tag).unwrap();
            assert_eq!(TargetSpace::from_tag(&t.tag()).unwrap(), t);
        }
        assert!(TargetSpace::from_tag("normed(0,l2)").is_err());
        assert!(TargetSpace::from_tag("normed(2,l7)").is_err());
        assert!(TargetSpace::from_tag("hyperbolic").is_err());
    }

    fn tree_point() -> impl Strategy<Value = TargetPoint> {
        (0usize..3, 0.0..5.0f64).prop_map(|(e, c)| TargetPoint::tree(e, c))
    }

    fn vec_point() -> impl Strategy<Value = TargetPoint> {
        proptest::collection::vec(-5.0..5.0f64, 3).prop_map(TargetPoint::Vector)
    }

    fn check_axioms(y: &TargetSpace, a: &TargetPoint, b: &TargetPoint, c: &TargetPoint) {
        let ab = y.distance(a, b).unwrap();
        let ba = y.distance(b, a).unwrap();
        let ac = y.distance(a, c).unwrap();
        let cb = y.distance(c, b).unwrap();
        assert!(ab >= 0.0);
        assert_eq!(ab, ba);
        assert!(ab <= ac + cb + 1e-12, "{ab} > {ac} + {cb}");
        assert_eq!(y.distance(a, a).unwrap(), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn tree_metric_axioms(a in tree_point(), b in tree_point(), c in tree_point()) {
            check_axioms(&TargetSpace::tripod(), &a, &b, &c);
        }

        #[test]
        fn normed_metric_axioms(a in vec_point(), b in vec_point(), c in vec_point()) {
            for norm in [Norm::Euclidean, Norm::L1, Norm::Linf, Norm::Lp(3.0)] {
                check_axioms(&TargetSpace::normed(3, norm).unwrap(), &a, &b, &c);
            }
        }
    }
}
