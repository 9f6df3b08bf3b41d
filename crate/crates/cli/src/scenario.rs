//! JSON scenario files: loading, location-precise diagnostics and validation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use utarget::ad::{to_explicit_instance, AdSetting};
use utarget::dynamics::{AxiomSet, Target, WinnerPolicy};
use utarget::{validate_instance, Bid, BidProfile, Instance};

pub const SCHEMA_VERSION: u32 = 1;

/// Upper limit on outcomes when an ad setting is expanded into an explicit instance.
pub const MAX_EXPLICIT_OUTCOMES: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Explicit,
    Ad,
}

#[derive(Debug)]
pub enum ScenarioError {
    Io { path: PathBuf, source: std::io::Error },
    Parse { path: PathBuf, field: String, line: usize, column: usize, message: String },
    Invalid { path: PathBuf, message: String },
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            ScenarioError::Parse { path, field, line, column, message } => {
                write!(f, "{}:{line}:{column}: at `{field}`: {message}", path.display())
            }
            ScenarioError::Invalid { path, message } => write!(f, "{}: invalid scenario: {message}", path.display()),
        }
    }
}

impl std::error::Error for ScenarioError {}

#[derive(Deserialize)]
struct Header {
    schema_version: u32,
    kind: Kind,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBid {
    x: Vec<f64>,
    #[serde(alias = "target")]
    pi: f64,
}

/// Simulation defaults; every field can be overridden on the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub max_steps: Option<u64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default, alias = "axioms")]
    pub axiom_set: Option<AxiomSet>,
    #[serde(default)]
    pub winner_policy: Option<WinnerPolicy>,
    #[serde(default)]
    pub target: Option<Target>,
}

/// Generalized first price demo parameters for ad scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GfpSpec {
    #[serde(default = "default_gfp_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub initial_bids: Option<Vec<f64>>,
    #[serde(default = "default_gfp_steps")]
    pub max_steps: u64,
}

fn default_gfp_epsilon() -> f64 {
    0.1
}

fn default_gfp_steps() -> u64 {
    100_000
}

impl Default for GfpSpec {
    fn default() -> Self {
        Self { epsilon: default_gfp_epsilon(), initial_bids: None, max_steps: default_gfp_steps() }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExplicit {
    #[allow(dead_code)]
    schema_version: u32,
    #[allow(dead_code)]
    kind: Kind,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    description: Option<String>,
    values: Vec<Vec<f64>>,
    #[serde(default)]
    bid_sets: BTreeMap<String, Vec<RawBid>>,
    #[serde(default)]
    targets: Option<Vec<f64>>,
    #[serde(default)]
    simulation: Option<SimulationSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAd {
    #[allow(dead_code)]
    schema_version: u32,
    #[allow(dead_code)]
    kind: Kind,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    description: Option<String>,
    setting: AdSetting,
    #[serde(default)]
    targets: Option<Vec<f64>>,
    #[serde(default)]
    simulation: Option<SimulationSpec>,
    #[serde(default)]
    gfp: Option<GfpSpec>,
}

#[derive(Debug, Clone)]
pub enum Body {
    Explicit { instance: Instance, bid_sets: BTreeMap<String, BidProfile> },
    Ad { setting: AdSetting, gfp: GfpSpec },
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub path: PathBuf,
    pub name: String,
    pub description: Option<String>,
    pub body: Body,
    /// Initial utility targets, one per bidder of the explicit instance.
    pub targets: Option<Vec<f64>>,
    pub simulation: SimulationSpec,
}

impl Scenario {
    pub fn kind(&self) -> Kind {
        match self.body {
            Body::Explicit { .. } => Kind::Explicit,
            Body::Ad { .. } => Kind::Ad,
        }
    }

    /// The explicit instance, expanding ad settings into one outcome per assignment.
    pub fn instance(&self) -> Result<Instance, ScenarioError> {
        match &self.body {
            Body::Explicit { instance, .. } => Ok(instance.clone()),
            Body::Ad { setting, .. } => to_explicit_instance(setting, MAX_EXPLICIT_OUTCOMES)
                .map(|(inst, _)| inst)
                .map_err(|e| self.invalid(e.to_string())),
        }
    }

    pub fn bid_sets(&self) -> Option<&BTreeMap<String, BidProfile>> {
        match &self.body {
            Body::Explicit { bid_sets, .. } => Some(bid_sets),
            Body::Ad { .. } => None,
        }
    }

    pub fn invalid(&self, message: impl Into<String>) -> ScenarioError {
        ScenarioError::Invalid { path: self.path.clone(), message: message.into() }
    }
}

fn parse_with_location<'de, T: Deserialize<'de>>(path: &Path, text: &'de str) -> Result<T, ScenarioError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        ScenarioError::Parse {
            path: path.to_path_buf(),
            field,
            line: inner.line(),
            column: inner.column(),
            message: strip_location(&inner.to_string()),
        }
    })?;
    de.end().map_err(|e| ScenarioError::Parse {
        path: path.to_path_buf(),
        field: ".".into(),
        line: e.line(),
        column: e.column(),
        message: strip_location(&e.to_string()),
    })?;
    Ok(value)
}

/// serde_json appends " at line L column C"; the location is reported separately.
fn strip_location(message: &str) -> String {
    match message.rfind(" at line ") {
        Some(k) => message[..k].to_string(),
        None => message.to_string(),
    }
}

fn check_targets(targets: &[f64], n: usize) -> Result<(), String> {
    if targets.len() != n {
        return Err(format!("targets has {} entries for {n} bidders", targets.len()));
    }
    if let Some(k) = targets.iter().position(|t| !t.is_finite()) {
        return Err(format!("targets[{k}] is not finite"));
    }
    Ok(())
}

pub fn parse_scenario_str(path: &Path, text: &str) -> Result<Scenario, ScenarioError> {
    let invalid = |message: String| ScenarioError::Invalid { path: path.to_path_buf(), message };
    let header: Header = parse_with_location(path, text)?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(invalid(format!(
            "unsupported schema_version {} (this build reads version {SCHEMA_VERSION})",
            header.schema_version
        )));
    }
    let default_name = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());

    let scenario = match header.kind {
        Kind::Explicit => {
            let raw: RawExplicit = parse_with_location(path, text)?;
            let report = validate_instance(&raw.values);
            if !report.valid {
                return Err(invalid(format!("values: {}", report.problems.join("; "))));
            }
            let instance = Instance::new(raw.values).map_err(|e| invalid(e.to_string()))?;
            let mut bid_sets = BTreeMap::new();
            for (name, bids) in raw.bid_sets {
                if bids.len() != instance.num_bidders() {
                    return Err(invalid(format!(
                        "bid_sets.{name} has {} bids for {} bidders",
                        bids.len(),
                        instance.num_bidders()
                    )));
                }
                let bids = bids
                    .into_iter()
                    .enumerate()
                    .map(|(i, b)| Bid::new(b.x, b.pi).map_err(|e| invalid(format!("bid_sets.{name}[{i}]: {e}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                let profile = BidProfile::new(bids);
                profile.check_against(&instance).map_err(|e| invalid(format!("bid_sets.{name}: {e}")))?;
                bid_sets.insert(name, profile);
            }
            if let Some(t) = &raw.targets {
                check_targets(t, instance.num_bidders()).map_err(invalid)?;
            }
            Scenario {
                path: path.to_path_buf(),
                name: raw.name.unwrap_or(default_name),
                description: raw.description,
                body: Body::Explicit { instance, bid_sets },
                targets: raw.targets,
                simulation: raw.simulation.unwrap_or_default(),
            }
        }
        Kind::Ad => {
            let raw: RawAd = parse_with_location(path, text)?;
            let gfp = raw.gfp.unwrap_or_default();
            if let Some(b) = &gfp.initial_bids {
                if b.len() != raw.setting.num_bidders() {
                    return Err(invalid(format!(
                        "gfp.initial_bids has {} entries for {} bidders",
                        b.len(),
                        raw.setting.num_bidders()
                    )));
                }
            }
            if let Some(t) = &raw.targets {
                check_targets(t, raw.setting.num_bidders()).map_err(invalid)?;
            }
            Scenario {
                path: path.to_path_buf(),
                name: raw.name.unwrap_or(default_name),
                description: raw.description,
                body: Body::Ad { setting: raw.setting, gfp },
                targets: raw.targets,
                simulation: raw.simulation.unwrap_or_default(),
            }
        }
    };
    Ok(scenario)
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
    parse_scenario_str(path, &text)
}
