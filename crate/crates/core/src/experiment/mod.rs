//! Named scenarios driven by flat `key = value` config files.
//!
//! A config starts from the defaults of its `scenario` and overrides any of
//! the keys below. Lines starting with `#` are comments.
//!
//! | key        | meaning                                             | range            |
//! |------------|-----------------------------------------------------|------------------|
//! | scenario   | catalog name                                        | see [`list_scenarios`] |
//! | domain     | `disk(r)`, `halfdisk(r)`, `box(a,b)`, `annulus(r0,r1)` |               |
//! | target     | `normed(k,l2)`, `normed(k,l1)`, `tripod`, `star(E)`  |                  |
//! | map        | `identity`, `affine(..)`, `tripod-sectors`, `constant`, `auto` |        |
//! | field      | `rotation`, `translation(..)`, `contraction`, `shear(a)`, `zero` |      |
//! | field2     | second field, same tags                             |                  |
//! | mollifier  | `bump(r)` or `hat(r)`                               | 0 < r <= 0.5     |
//! | p          | energy exponent                                     | (1, 16]          |
//! | samples    | Monte Carlo points, seeds or curve intervals        | [10, 10^7]       |
//! | seed       | RNG seed                                            | u64              |
//! | eps        | strictly decreasing list, `2^-k` allowed            | (0, 1]           |
//! | h          | integrator step, `2^-k` allowed                     | (0, 0.1]         |
//! | tau        | finite-difference step                              | (0, 0.1]         |
//! | levels     | dyadic levels `n`                                   | 1..=20           |
//! | grid       | histogram cells per axis                            | [4, 1024]        |
//! | horizon    | final time                                          | (0, 100]         |
//! | alphas     | scaling factors                                     | [-10, 10]        |
//! | directions | directions for the local slope                      | [1, 4096]        |
//! | out        | output directory                                    |                  |

mod scenarios;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::energy::MetricMap;
use crate::flow::{Mollifier, VectorField};
use crate::metric::{parse_f64_args, split_tag, Norm, SourceDomain, TargetKind, TargetSpace};
use crate::{Error, Result};

/// Version of the JSON run report layout.
pub const SCHEMA_VERSION: u32 = 1;

/// One entry of the scenario catalog.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScenarioInfo {
    pub name: &'static str,
    pub summary: &'static str,
    /// properties exercised by the scenario
    pub properties: &'static str,
}

impl ScenarioInfo {
    pub fn default_config(&self) -> ScenarioConfig {
        ScenarioConfig::defaults(self.name).expect("catalog entries have defaults")
    }
}

const CATALOG: &[ScenarioInfo] = &[
    ScenarioInfo {
        name: "rotation-energy",
        summary: "identity map under the rotation flow: |du(Z)| = |x| and the energy as a polar integral",
        properties: "energy identity, L^p convergence of e^{1/p}, norm compatibility, regularity along the flow",
    },
    ScenarioInfo {
        name: "trotter-convergence",
        summary: "flows of the dyadic splitting fields Z_n against the flow of Z1 + Z2",
        properties: "splitting convergence, flow stability in the d-bar distance",
    },
    ScenarioInfo {
        name: "compression",
        summary: "push-forward of a uniform density under a compressing field",
        properties: "compression bound, mass conservation, continuity equation",
    },
    ScenarioInfo {
        name: "speed-identity",
        summary: "trajectory speed against the field along the flow",
        properties: "metric speed of flow lines equals |Z|",
    },
    ScenarioInfo {
        name: "scaling",
        summary: "flows and energies of scaled fields",
        properties: "time rescaling of flows, |du(aZ)| = |a| |du(Z)|",
    },
    ScenarioInfo {
        name: "triangle",
        summary: "directional energy densities of a sum of fields",
        properties: "triangle inequality for |du(.)|",
    },
    ScenarioInfo {
        name: "parallelogram",
        summary: "parallelogram residual of |du(.)|^2; holds for Hilbert and CAT(0) targets, fails for l1",
        properties: "parallelogram identity, its failure on non-Hilbert targets",
    },
    ScenarioInfo {
        name: "tree-target",
        summary: "disk folded onto the tripod: metric gradient against the sector geometry",
        properties: "|du(Z)| for tree-valued maps, triangle inequality on a tree target",
    },
    ScenarioInfo {
        name: "link-postcomposition",
        summary: "local slope of an affine map against its directional gradient",
        properties: "|du(Z)| <= |d'u| |Z|, linearity of the differential, regularity along the flow",
    },
    ScenarioInfo {
        name: "curve-energy",
        summary: "energies of sampled curves in normed spaces and a tree",
        properties: "closed-form circle energy, monotonicity, subadditivity, vanishing tail",
    },
    ScenarioInfo {
        name: "stability-mollified",
        summary: "time-mollified splitting fields and interleaved push-forwards",
        properties: "weak-in-time convergence of Z_n, stability of flows, interleaved densities",
    },
];

/// The catalog, in a stable order.
pub fn list_scenarios() -> &'static [ScenarioInfo] {
    CATALOG
}

pub fn scenario_info(name: &str) -> Option<&'static ScenarioInfo> {
    CATALOG.iter().find(|s| s.name == name)
}

/// Resolved scenario knobs. See the module docs for the keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: String,
    pub domain: String,
    pub target: String,
    pub map: String,
    pub field: String,
    pub field2: String,
    pub mollifier: String,
    pub p: f64,
    pub samples: usize,
    pub seed: u64,
    pub eps: Vec<f64>,
    pub h: f64,
    pub tau: f64,
    pub levels: Vec<u32>,
    pub grid: usize,
    pub horizon: f64,
    pub alphas: Vec<f64>,
    pub directions: usize,
    pub out: Option<PathBuf>,
}

const KEYS: &[&str] = &[
    "scenario", "domain", "target", "map", "field", "field2", "mollifier", "p", "samples", "seed", "eps", "h", "tau",
    "levels", "grid", "horizon", "alphas", "directions", "out",
];

fn dyadic(k: i32) -> f64 {
    2f64.powi(-k)
}

impl ScenarioConfig {
    pub fn defaults(scenario: &str) -> Result<Self> {
        let mut c = ScenarioConfig {
            scenario: scenario.to_string(),
            domain: "disk(1)".into(),
            target: "normed(2,l2)".into(),
            map: "identity".into(),
            field: "rotation".into(),
            field2: "translation(0.3,0)".into(),
            mollifier: "bump(0.0625)".into(),
            p: 2.0,
            samples: 20_000,
            seed: 1,
            eps: (4..=8).map(dyadic).collect(),
            h: 1e-3,
            tau: 1e-4,
            levels: vec![2, 4, 8],
            grid: 64,
            horizon: 1.0,
            alphas: vec![0.0, 0.5, 1.0, 2.0, -1.0],
            directions: 64,
            out: None,
        };
        match scenario {
            "rotation-energy" => c.samples = 100_000,
            "trotter-convergence" => {
                c.domain = "disk(2)".into();
                c.samples = 4000;
                c.h = dyadic(10);
            }
            "compression" => {
                c.domain = "halfdisk(1)".into();
                c.field = "contraction".into();
                c.samples = 100_000;
                c.horizon = 0.5;
            }
            "speed-identity" => c.samples = 1000,
            "scaling" => c.samples = 2000,
            "triangle" => {
                c.map = "affine(1,2,0,1)".into();
                c.field = "translation(1,0)".into();
                c.field2 = "translation(0,1)".into();
                c.samples = 2000;
            }
            "parallelogram" => {
                c.map = "auto".into();
                c.field = "translation(1,0)".into();
                c.field2 = "translation(0,1)".into();
                c.samples = 2000;
            }
            "tree-target" => {
                c.target = "tripod".into();
                c.map = "tripod-sectors".into();
                c.field = "translation(1,0)".into();
                c.field2 = "translation(0,1)".into();
                c.samples = 2000;
            }
            "link-postcomposition" => {
                c.map = "affine(1,2,0,1)".into();
                c.field = "translation(1,0)".into();
                c.field2 = "translation(0,1)".into();
                c.samples = 1000;
            }
            "curve-energy" => {
                c.samples = 4096;
                c.levels = (1..=10).collect();
            }
            "stability-mollified" => {
                c.domain = "disk(2)".into();
                c.samples = 2000;
                c.h = dyadic(10);
                c.levels = vec![2, 4, 6, 8];
                c.grid = 32;
                c.horizon = 0.5;
            }
            other => return Err(Error::UnknownTag(other.to_string())),
        }
        Ok(c)
    }

    /// Parses a config file. The `scenario` key is required; every other
    /// key falls back to the scenario default.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config { line: i + 1, msg: "expected `key = value`".into() })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if !KEYS.contains(&k.as_str()) {
                return Err(Error::Config { line: i + 1, msg: format!("unknown key `{k}`") });
            }
            if entries.iter().any(|(_, e, _)| *e == k) {
                return Err(Error::Config { line: i + 1, msg: format!("duplicate key `{k}`") });
            }
            entries.push((i + 1, k, v));
        }
        let scenario = entries
            .iter()
            .find(|(_, k, _)| k == "scenario")
            .map(|(_, _, v)| v.clone())
            .ok_or(Error::Config { line: 0, msg: "missing `scenario`".into() })?;
        let mut c = Self::defaults(&scenario)?;
        for (line, k, v) in &entries {
            c.set(k, v).map_err(|msg| Error::Config { line: *line, msg })?;
        }
        Ok(c)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let num = |v: &str| parse_number(v).ok_or_else(|| format!("`{key}`: `{v}` is not a number"));
        let int = |v: &str| v.parse::<u64>().map_err(|_| format!("`{key}`: `{v}` is not a nonnegative integer"));
        let list = |v: &str| v.split(',').map(|s| num(s.trim())).collect::<std::result::Result<Vec<f64>, String>>();
        match key {
            "scenario" => {
                if value != self.scenario {
                    return Err("scenario cannot be changed after defaults are applied".into());
                }
            }
            "domain" => self.domain = value.into(),
            "target" => self.target = value.into(),
            "map" => self.map = value.into(),
            "field" => self.field = value.into(),
            "field2" => self.field2 = value.into(),
            "mollifier" => self.mollifier = value.into(),
            "p" => self.p = num(value)?,
            "samples" => self.samples = int(value)? as usize,
            "seed" => self.seed = int(value)?,
            "eps" => self.eps = list(value)?,
            "h" => self.h = num(value)?,
            "tau" => self.tau = num(value)?,
            "levels" => {
                self.levels = value
                    .split(',')
                    .map(|s| s.trim().parse::<u32>().map_err(|_| format!("`levels`: `{s}` is not a level")))
                    .collect::<std::result::Result<_, _>>()?
            }
            "grid" => self.grid = int(value)? as usize,
            "horizon" => self.horizon = num(value)?,
            "alphas" => self.alphas = list(value)?,
            "directions" => self.directions = int(value)? as usize,
            "out" => self.out = Some(PathBuf::from(value)),
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Key/value pairs in file order; `out` only when set.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        let mut pairs = vec![
            ("scenario", self.scenario.clone()),
            ("domain", self.domain.clone()),
            ("target", self.target.clone()),
            ("map", self.map.clone()),
            ("field", self.field.clone()),
            ("field2", self.field2.clone()),
            ("mollifier", self.mollifier.clone()),
            ("p", self.p.to_string()),
            ("samples", self.samples.to_string()),
            ("seed", self.seed.to_string()),
            ("eps", join(&self.eps)),
            ("h", self.h.to_string()),
            ("tau", self.tau.to_string()),
            ("levels", self.levels.iter().map(u32::to_string).collect::<Vec<_>>().join(",")),
            ("grid", self.grid.to_string()),
            ("horizon", self.horizon.to_string()),
            ("alphas", join(&self.alphas)),
            ("directions", self.directions.to_string()),
        ];
        if let Some(out) = &self.out {
            pairs.push(("out", out.display().to_string()));
        }
        pairs
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Checks knob ranges and that every tag resolves.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if scenario_info(&self.scenario).is_none() {
            return Err(Error::UnknownTag(self.scenario.clone()));
        }
        if !(self.p > 1.0 && self.p <= 16.0) {
            return bad(format!("p = {} outside (1, 16]", self.p));
        }
        if !(10..=10_000_000).contains(&self.samples) {
            return bad(format!("samples = {} outside [10, 10^7]", self.samples));
        }
        if self.eps.is_empty() || self.eps.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) || self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return bad("eps must be a strictly decreasing list in (0, 1]".into());
        }
        for (name, v) in [("h", self.h), ("tau", self.tau)] {
            if !(v > 0.0 && v <= 0.1) {
                return bad(format!("{name} = {v} outside (0, 0.1]"));
            }
        }
        if self.levels.is_empty() || self.levels.iter().any(|n| !(1..=20).contains(n)) {
            return bad("levels must be a nonempty list in 1..=20".into());
        }
        if !(4..=1024).contains(&self.grid) {
            return bad(format!("grid = {} outside [4, 1024]", self.grid));
        }
        if !(self.horizon > 0.0 && self.horizon <= 100.0) {
            return bad(format!("horizon = {} outside (0, 100]", self.horizon));
        }
        if self.alphas.iter().any(|a| !(a.abs() <= 10.0)) {
            return bad("alphas must lie in [-10, 10]".into());
        }
        if !(1..=4096).contains(&self.directions) {
            return bad(format!("directions = {} outside [1, 4096]", self.directions));
        }
        let domain = self.domain()?;
        let target = self.target()?;
        self.map_on(&target, domain.dim())?;
        VectorField::from_tag(&self.field, &domain)?;
        VectorField::from_tag(&self.field2, &domain)?;
        self.mollifier()?;
        Ok(())
    }

    pub fn domain(&self) -> Result<SourceDomain> {
        SourceDomain::from_tag(&self.domain)
    }

    pub fn target(&self) -> Result<TargetSpace> {
        TargetSpace::from_tag(&self.target)
    }

    /// Resolves `map`; `auto` picks a map suited to the target.
    pub fn map_on(&self, target: &TargetSpace, dim: usize) -> Result<MetricMap> {
        if self.map != "auto" {
            return MetricMap::from_tag(&self.map, target, dim);
        }
        let tag = match target.kind() {
            TargetKind::Normed { norm: Norm::Euclidean, .. } => "affine(1,2,0,1)",
            TargetKind::Normed { .. } => "identity",
            TargetKind::StarTree { .. } => "tripod-sectors",
        };
        MetricMap::from_tag(tag, target, dim)
    }

    pub fn mollifier(&self) -> Result<Mollifier> {
        let unknown = || Error::UnknownTag(self.mollifier.clone());
        let (name, args) = split_tag(&self.mollifier).ok_or_else(unknown)?;
        let r = match parse_f64_args(&self.mollifier, &args)?.as_slice() {
            [r] if *r > 0.0 && *r <= 0.5 => *r,
            _ => return Err(unknown()),
        };
        match name {
            "bump" => Ok(Mollifier::bump(r)),
            "hat" => Ok(Mollifier::hat(r)),
            _ => Err(unknown()),
        }
    }
}

/// Plain decimal or `2^k`.
fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    match s.strip_prefix("2^") {
        Some(k) => k.parse::<i32>().ok().map(|k| 2f64.powi(k)),
        None => s.parse::<f64>().ok().filter(|v| v.is_finite()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

/// A measured value against a threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub relation: Relation,
    pub threshold: f64,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check { name: name.into(), passed: value <= threshold, value, relation: Relation::AtMost, threshold }
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Check { name: name.into(), passed: value >= threshold, value, relation: Relation::AtLeast, threshold }
    }
}

/// Machine-readable outcome of one scenario run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub scenario: String,
    pub config: BTreeMap<String, String>,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub metrics: BTreeMap<String, f64>,
    /// file names relative to the output directory
    pub artifacts: Vec<String>,
    /// diagnostics when the scenario stopped early
    pub failure: Option<String>,
    pub wall_clock_s: f64,
}

impl RunReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Collects checks, metrics and artifacts while a scenario runs.
pub(crate) struct Outcome {
    out: PathBuf,
    checks: Vec<Check>,
    metrics: BTreeMap<String, f64>,
    artifacts: Vec<String>,
    failure: Option<String>,
}

impl Outcome {
    pub(crate) fn check(&mut self, c: Check) {
        debug_assert!(self.checks.iter().all(|d| d.name != c.name), "duplicate check {}", c.name);
        self.checks.push(c);
    }

    pub(crate) fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    pub(crate) fn fail(&mut self, msg: impl Into<String>) {
        self.failure = Some(msg.into());
    }

    /// Creates an artifact file and records its name.
    pub(crate) fn artifact(&mut self, name: &str) -> Result<fs::File> {
        self.artifacts.push(name.to_string());
        Ok(fs::File::create(self.out.join(name))?)
    }
}

/// Runs a scenario, writes `report.json` and the CSV artifacts into the
/// output directory (`out`, or `runs/<scenario>`), and returns the report.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunReport> {
    config.validate()?;
    let out = config.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(&config.scenario));
    fs::create_dir_all(&out)?;
    let start = Instant::now();
    let mut outcome =
        Outcome { out: out.clone(), checks: Vec::new(), metrics: BTreeMap::new(), artifacts: Vec::new(), failure: None };
    scenarios::run(config, &mut outcome)?;
    let passed = outcome.failure.is_none() && !outcome.checks.is_empty() && outcome.checks.iter().all(|c| c.passed);
    let report = RunReport {
        schema: SCHEMA_VERSION,
        scenario: config.scenario.clone(),
        config: config.pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        passed,
        checks: outcome.checks,
        metrics: outcome.metrics,
        artifacts: outcome.artifacts,
        failure: outcome.failure,
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    let file = fs::File::create(out.join("report.json"))?;
    serde_json::to_writer_pretty(file, &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_round_trips() {
        assert!(list_scenarios().len() >= 7);
        for info in list_scenarios() {
            let c = info.default_config();
            c.validate().unwrap();
            assert_eq!(ScenarioConfig::parse(&c.to_text()).unwrap(), c, "{}", info.name);
            assert!(!info.properties.is_empty());
        }
        let names: Vec<&str> = list_scenarios().iter().map(|s| s.name).collect();
        for required in [
            "rotation-energy",
            "trotter-convergence",
            "parallelogram",
            "tree-target",
            "curve-energy",
            "stability-mollified",
            "link-postcomposition",
        ] {
            assert!(names.contains(&required));
        }
    }

    #[test]
    fn parsing() {
        let c = ScenarioConfig::parse("# comment\nscenario = parallelogram\n\ntarget = normed(2,l1)\neps = 2^-4, 2^-6\n")
            .unwrap();
        assert_eq!(c.target, "normed(2,l1)");
        assert_eq!(c.eps, vec![0.0625, 0.015625]);
        assert_eq!(c.samples, 2000);
        let map = c.map_on(&c.target().unwrap(), 2).unwrap();
        assert_eq!(map.tag(), "identity");

        assert!(matches!(ScenarioConfig::parse("scenario = nope"), Err(Error::UnknownTag(_))));
        assert!(matches!(ScenarioConfig::parse("domain = disk(1)"), Err(Error::Config { .. })));
        assert!(matches!(
            ScenarioConfig::parse("scenario = scaling\nfoo = 1"),
            Err(Error::Config { line: 2, .. })
        ));
        assert!(matches!(
            ScenarioConfig::parse("scenario = scaling\np = 2\np = 3"),
            Err(Error::Config { line: 3, .. })
        ));
        assert!(matches!(ScenarioConfig::parse("scenario = scaling\np = two"), Err(Error::Config { .. })));
    }

    #[test]
    fn validation() {
        let mut c = ScenarioConfig::defaults("scaling").unwrap();
        c.p = 1.0;
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::defaults("scaling").unwrap();
        c.eps = vec![0.1, 0.2];
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::defaults("scaling").unwrap();
        c.field = "vortex".into();
        assert!(matches!(c.validate(), Err(Error::UnknownTag(_))));
        let mut c = ScenarioConfig::defaults("tree-target").unwrap();
        c.map = "identity".into();
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::defaults("stability-mollified").unwrap();
        c.mollifier = "hat(0.1)".into();
        assert!(c.validate().is_ok());
        c.mollifier = "bump(2)".into();
        assert!(c.validate().is_err());
    }
}
