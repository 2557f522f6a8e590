//! Source domains, target metric spaces and countable 1-Lipschitz test families.

mod domain;
mod lipschitz;
mod target;

pub use domain::{Sample, Shape, SourceDomain};
pub use lipschitz::{LipschitzBump, LipschitzFamily};
pub use target::{Norm, TargetKind, TargetPoint, TargetSpace};

/// Euclidean norm of a slice.
#[inline]
pub fn euclidean_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Euclidean distance between two points of the same dimension.
#[inline]
pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Splits `name(a,b,...)` into the name and its comma separated arguments.
/// A bare `name` yields no arguments.
pub(crate) fn split_tag(tag: &str) -> Option<(&str, Vec<&str>)> {
    let tag = tag.trim();
    match tag.find('(') {
        None => Some((tag, Vec::new())),
        Some(open) => {
            let inner = tag[open + 1..].strip_suffix(')')?;
            let args = if inner.trim().is_empty() {
                Vec::new()
            } else {
                inner.split(',').map(str::trim).collect()
            };
            Some((tag[..open].trim(), args))
        }
    }
}

pub(crate) fn parse_f64_args(tag: &str, args: &[&str]) -> crate::Result<Vec<f64>> {
    args.iter()
        .map(|a| {
            a.parse::<f64>()
                .map_err(|_| crate::Error::UnknownTag(tag.to_string()))
        })
        .collect()
}
