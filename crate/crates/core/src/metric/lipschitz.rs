use serde::{Deserialize, Serialize};

use super::{TargetPoint, TargetSpace};
use crate::{Error, Result};

/// `y ↦ (level - d_Y(y, center)) ∨ 0`: 1-Lipschitz with support in the
/// closed ball of radius `level` around `center`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBump {
    pub center: TargetPoint,
    pub level: f64,
}

impl LipschitzBump {
    pub fn eval(&self, target: &TargetSpace, y: &TargetPoint) -> Result<f64> {
        Ok((self.level - target.distance(y, &self.center)?).max(0.0))
    }
}

/// Finite truncation of the countable family whose pointwise supremum of
/// differences recovers the distance of `Y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzFamily {
    target: TargetSpace,
    members: Vec<LipschitzBump>,
}

impl LipschitzFamily {
    /// One bump per (center, level) pair, centers outermost.
    pub fn build(target: &TargetSpace, centers: &[TargetPoint], levels: &[f64]) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::invalid("at least one center is required"));
        }
        if levels.is_empty() || levels.iter().any(|k| !(*k > 0.0)) {
            return Err(Error::invalid("levels must be positive"));
        }
        for c in centers {
            target.check_point(c)?;
        }
        let members = centers
            .iter()
            .flat_map(|c| levels.iter().map(move |&level| LipschitzBump { center: c.clone(), level }))
            .collect();
        Ok(LipschitzFamily { target: target.clone(), members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[LipschitzBump] {
        &self.members
    }

    pub fn target(&self) -> &TargetSpace {
        &self.target
    }

    pub fn eval(&self, member: usize, y: &TargetPoint) -> Result<f64> {
        let m = self
            .members
            .get(member)
            .ok_or_else(|| Error::invalid(format!("member {member} out of range")))?;
        m.eval(&self.target, y)
    }

    /// `sup_n (f_n(a) - f_n(b))`; never exceeds `d_Y(a, b)`.
    pub fn sup_difference(&self, a: &TargetPoint, b: &TargetPoint) -> Result<f64> {
        let mut best = f64::NEG_INFINITY;
        for m in &self.members {
            best = best.max(m.eval(&self.target, a)? - m.eval(&self.target, b)?);
        }
        Ok(best)
    }
}
