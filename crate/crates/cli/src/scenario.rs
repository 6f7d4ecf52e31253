//! Scenario files: one JSON document per run, versioned, unknown keys rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ensemble_steer::approximator::{ApproximationSettings, BracketDictionary, ExtendedControl};
use ensemble_steer::ensemble::{Diffeotopy, Ensemble, ExprTimeField};
use ensemble_steer::flow::{CompactBox, IntegratorSettings};
use ensemble_steer::liealg::expr::Expr;
use ensemble_steer::liealg::{FieldFamily, SmoothField, DEFAULT_DEPTH_CAP};
use ensemble_steer::oscillate::ReductionPlan;
use ensemble_steer::steering::SteeringSettings;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    pub system: SystemSpec,
    pub task: Task,
    #[serde(default)]
    pub settings: GlobalSettings,
    #[serde(default)]
    pub outputs: Outputs,
}

/// `{"builtin": "gaussian" | "heisenberg" | "frame:n"}` or
/// `{"fields": [["1", "0"], ["0", "gauss(x1)"]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Builtin(String),
    Fields(Vec<Vec<String>>),
}

/// Ensemble given by coordinate expressions in `theta`, a CSV path, or an
/// explicit point list (a finite ensemble labelled 0, 1, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EnsembleSpec {
    Expressions { coords: Vec<String>, n_theta: usize },
    Csv(PathBuf),
    Points(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffeotopySpec {
    /// Coordinates of `Y_t` over `x1..xn` and `t`.
    pub generator: Vec<String>,
    pub horizon: f64,
}

/// Box with the same resolution on every axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub intervals: Vec<[f64; 2]>,
    pub resolution: usize,
}

/// `"hermite:M"`, a space or comma separated word string, or a list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DictionarySpec {
    Spec(String),
    Words(Vec<String>),
}

fn default_checkpoints() -> usize {
    16
}

fn default_samples() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Task {
    Steer {
        start: EnsembleSpec,
        /// Defaults to the diffeotopy end point.
        #[serde(default)]
        target: Option<EnsembleSpec>,
        diffeotopy: DiffeotopySpec,
        dictionary: DictionarySpec,
        #[serde(rename = "box")]
        region: BoxSpec,
        #[serde(default)]
        approximation: ApproximationSettings,
        #[serde(default)]
        plan: ReductionPlan,
        #[serde(default = "default_checkpoints")]
        checkpoints: usize,
    },
    Convergence {
        dictionary: DictionarySpec,
        /// Word to expression in `t`; words left out are zero.
        coefficients: BTreeMap<String, String>,
        horizon: f64,
        epsilons: Vec<f64>,
        #[serde(default)]
        plan: ReductionPlan,
        #[serde(rename = "box")]
        region: BoxSpec,
        #[serde(default)]
        c1: bool,
        /// Sample intervals of the extended control over `[0, T]`.
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default = "default_checkpoints")]
        checkpoints: usize,
    },
    Rank {
        points: Vec<Vec<f64>>,
        depth: usize,
        #[serde(default)]
        tolerance: Option<f64>,
    },
    Probe {
        #[serde(rename = "N")]
        n_points: usize,
        depth: usize,
        trials: usize,
        delta: f64,
    },
    Hermite {
        orders: Vec<usize>,
        #[serde(default = "unit_interval")]
        interval: [f64; 2],
    },
}

fn unit_interval() -> [f64; 2] {
    [0.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalSettings {
    pub seed: u64,
    pub integrator: IntegratorSettings,
    pub depth_cap: usize,
}

impl Default for GlobalSettings {
    fn default() -> Self {
        GlobalSettings {
            seed: 0,
            integrator: IntegratorSettings::default(),
            depth_cap: DEFAULT_DEPTH_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    pub directory: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs {
            directory: PathBuf::from("out"),
            formats: vec![Format::Json, Format::Csv],
        }
    }
}

impl Outputs {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

fn schema(msg: impl Into<String>) -> CliError {
    CliError::Schema(msg.into())
}

impl Scenario {
    /// Parses and validates; every failure here is a schema error.
    pub fn from_json(text: &str) -> Result<Scenario, CliError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Read {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut s = Self::from_json(&text)?;
        s.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(s)
    }

    /// CSV paths are taken relative to the scenario file.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |e: &mut EnsembleSpec| {
            if let EnsembleSpec::Csv(p) = e {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        if let Task::Steer { start, target, .. } = &mut self.task {
            fix(start);
            if let Some(t) = target {
                fix(t);
            }
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.version != SCHEMA_VERSION {
            return Err(schema(format!(
                "unsupported scenario version {} (expected {SCHEMA_VERSION})",
                self.version
            )));
        }
        if self.name.trim().is_empty() {
            return Err(schema("scenario name is empty"));
        }
        let family = self.family()?;
        let n = family.dim();
        let check_box = |b: &BoxSpec| -> Result<(), CliError> {
            if b.intervals.len() != n {
                return Err(schema(format!(
                    "box has {} intervals for a {n}-dimensional system",
                    b.intervals.len()
                )));
            }
            b.to_box().map(|_| ())
        };
        match &self.task {
            Task::Steer {
                diffeotopy,
                region,
                checkpoints,
                ..
            } => {
                check_box(region)?;
                if diffeotopy.generator.len() != n {
                    return Err(schema("diffeotopy generator dimension differs from the system"));
                }
                if *checkpoints == 0 {
                    return Err(schema("checkpoints must be positive"));
                }
            }
            Task::Convergence {
                region,
                epsilons,
                horizon,
                samples,
                ..
            } => {
                check_box(region)?;
                if epsilons.len() < 3 || epsilons.windows(2).any(|w| !(w[1] < w[0])) {
                    return Err(schema("epsilons must list at least 3 strictly decreasing values"));
                }
                if !(*horizon > 0.0) || *samples == 0 {
                    return Err(schema("horizon and samples must be positive"));
                }
            }
            Task::Rank { points, .. } => {
                if points.is_empty() || points.iter().any(|p| p.len() != n) {
                    return Err(schema(format!("rank points must be non-empty and {n}-dimensional")));
                }
            }
            Task::Probe { n_points, trials, .. } => {
                if *n_points == 0 || *trials == 0 {
                    return Err(schema("probe needs N ≥ 1 and trials ≥ 1"));
                }
            }
            Task::Hermite { orders, interval } => {
                if orders.is_empty() || !(interval[0] < interval[1]) {
                    return Err(schema("hermite task needs orders and a non-empty interval"));
                }
            }
        }
        Ok(())
    }

    pub fn family(&self) -> Result<FieldFamily, CliError> {
        match &self.system {
            SystemSpec::Builtin(id) => match id.as_str() {
                "gaussian" => Ok(FieldFamily::gaussian()),
                "heisenberg" => {
                    let x = SmoothField::from_expressions("X", &["1", "0"])?;
                    let y = SmoothField::from_expressions("Y", &["0", "x1"])?;
                    Ok(FieldFamily::new(vec![x, y])?)
                }
                other => match other.strip_prefix("frame:").map(str::parse::<usize>) {
                    Some(Ok(n)) if n > 0 => Ok(FieldFamily::coordinate_frame(n)),
                    _ => Err(schema(format!("unknown builtin system `{other}`"))),
                },
            },
            SystemSpec::Fields(fields) => {
                let members = fields
                    .iter()
                    .enumerate()
                    .map(|(j, f)| SmoothField::from_expressions(format!("f{}", j + 1), f))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(FieldFamily::new(members)?)
            }
        }
    }
}

impl BoxSpec {
    pub fn to_box(&self) -> Result<CompactBox, CliError> {
        Ok(CompactBox::new(
            self.intervals.clone(),
            vec![self.resolution; self.intervals.len()],
        )?)
    }
}

impl EnsembleSpec {
    pub fn build(&self) -> Result<Ensemble, CliError> {
        match self {
            EnsembleSpec::Expressions { coords, n_theta } => Ok(Ensemble::from_expressions(*n_theta, coords)?),
            EnsembleSpec::Csv(path) => {
                let file = std::fs::File::open(path).map_err(|e| CliError::Read {
                    path: path.clone(),
                    source: e,
                })?;
                Ok(Ensemble::read_csv(file)?)
            }
            EnsembleSpec::Points(points) => {
                let labels = (0..points.len()).map(|i| i as f64).collect();
                Ok(Ensemble::finite(labels, points.clone())?)
            }
        }
    }
}

impl DictionarySpec {
    pub fn build(&self, family: &FieldFamily, depth_cap: usize) -> Result<BracketDictionary, CliError> {
        match self {
            DictionarySpec::Spec(s) => Ok(BracketDictionary::from_spec(family, s, depth_cap)?),
            DictionarySpec::Words(w) => Ok(BracketDictionary::from_spec(family, &w.join(" "), depth_cap)?),
        }
    }
}

pub fn diffeotopy(
    spec: &DiffeotopySpec,
    start: Ensemble,
    integrator: &IntegratorSettings,
) -> Result<Diffeotopy, CliError> {
    let generator = ExprTimeField::shared(&spec.generator)?;
    Ok(Diffeotopy::new(generator, start, spec.horizon, integrator.clone())?)
}

/// Extended control sampled from per-word expressions in `t`.
pub fn extended_control(
    dict: &BracketDictionary,
    coefficients: &BTreeMap<String, String>,
    horizon: f64,
    samples: usize,
) -> Result<ExtendedControl, CliError> {
    let mut exprs: Vec<Option<Expr>> = vec![None; dict.len()];
    for (word, src) in coefficients {
        let w = word.parse()?;
        let i = dict
            .words()
            .iter()
            .position(|x| *x == w)
            .ok_or_else(|| schema(format!("coefficient for `{word}`, which is not in the dictionary")))?;
        exprs[i] = Some(Expr::parse(src, &["t"])?);
    }
    Ok(ExtendedControl::from_fn(
        dict.words().to_vec(),
        horizon,
        samples,
        |i, t| exprs[i].as_ref().map_or(0.0, |e| e.eval(&[t])),
    )?)
}

/// Steering settings assembled from the task and global settings.
pub fn steering_settings(
    approximation: &ApproximationSettings,
    plan: &ReductionPlan,
    checkpoints: usize,
    global: &GlobalSettings,
) -> SteeringSettings {
    SteeringSettings {
        approximation: approximation.clone(),
        plan: plan.clone(),
        integrator: global.integrator.clone(),
        checkpoints,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "version": 1,
        "name": "r",
        "system": {"builtin": "gaussian"},
        "task": {"kind": "rank", "points": [[0, 0], [1, 0]], "depth": 3}
    }"#;

    #[test]
    fn defaults_are_filled() {
        let s = Scenario::from_json(MINIMAL).unwrap();
        assert_eq!(s.settings.depth_cap, DEFAULT_DEPTH_CAP);
        assert_eq!(s.outputs, Outputs::default());
        let back: Scenario = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = MINIMAL.replace("\"depth\": 3", "\"depth\": 3, \"dpeth\": 4");
        assert!(matches!(Scenario::from_json(&bad), Err(CliError::Schema(_))));
        let bad = MINIMAL.replace("\"name\": \"r\"", "\"name\": \"r\", \"extra\": 1");
        assert!(matches!(Scenario::from_json(&bad), Err(CliError::Schema(_))));
    }

    #[test]
    fn version_and_dimension_checked() {
        let bad = MINIMAL.replace("\"version\": 1", "\"version\": 2");
        assert!(Scenario::from_json(&bad).is_err());
        let bad = MINIMAL.replace("[1, 0]]", "[1, 0, 2]]");
        assert!(Scenario::from_json(&bad).is_err());
    }

    #[test]
    fn builtin_systems() {
        let mut s = Scenario::from_json(MINIMAL).unwrap();
        s.system = SystemSpec::Builtin("frame:3".into());
        assert_eq!(s.family().unwrap().dim(), 3);
        s.system = SystemSpec::Builtin("torus".into());
        assert!(s.family().is_err());
        s.system = SystemSpec::Fields(vec![vec!["1".into(), "0".into()], vec!["0".into(), "gauss(x1)".into()]]);
        assert_eq!(s.family().unwrap().len(), 2);
    }
}
