//! Run configuration files and dotted-path overrides.

use std::path::Path;

use blpinn::evaluation::EvalGrid;
use blpinn::training::{Scenario, TrainConfig};
use blpinn::ProblemSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// What to evaluate after training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPlan {
    #[serde(default)]
    pub grid: EvalGrid,
    #[serde(default = "default_cut_y")]
    pub cut_y: f64,
    /// Evaluation coefficients. Empty means the training k (fixed-k runs only).
    #[serde(default)]
    pub ks: Vec<f64>,
}

fn default_cut_y() -> f64 {
    0.5
}

impl Default for EvalPlan {
    fn default() -> Self {
        Self {
            grid: EvalGrid::default(),
            cut_y: default_cut_y(),
            ks: Vec::new(),
        }
    }
}

/// Everything one run needs; serialized as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Preset this configuration was built from, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub problem: ProblemSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalPlan,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let doc: toml::Value =
            toml::from_str(text).map_err(|e| CliError::Config(vec![format!("parse error: {e}")]))?;
        Self::from_value(doc)
    }

    fn from_value(doc: toml::Value) -> Result<Self, CliError> {
        let config: Self = doc
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(vec![e.to_string().trim().to_string()]))?;
        let canonical = toml::Value::try_from(&config).expect("run config converts to a TOML value");
        let mut unknown = Vec::new();
        unknown_keys(&doc, &canonical, "", &mut unknown);
        if unknown.is_empty() {
            Ok(config)
        } else {
            Err(CliError::Config(
                unknown.into_iter().map(|k| format!("unknown field `{k}`")).collect(),
            ))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Every violated invariant across problem, training, and evaluation.
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.problem.violations();
        v.extend(self.train.violations());
        // TOML integers are signed 64-bit.
        if i64::try_from(self.train.seed).is_err() {
            v.push(format!("train.seed at most {} (got {})", i64::MAX, self.train.seed));
        }
        let g = self.eval.grid;
        if g.nx < 2 || g.ny < 2 {
            v.push(format!("eval.grid at least 2×2 (got {}×{})", g.nx, g.ny));
        }
        if !(0.0..=1.0).contains(&self.eval.cut_y) {
            v.push(format!("eval.cut_y in [0, 1] (got {})", self.eval.cut_y));
        }
        for &k in &self.eval.ks {
            if !(k > 0.0 && k.is_finite()) {
                v.push(format!("eval.ks > 0 (got {k})"));
            }
        }
        if self.eval.ks.is_empty() && matches!(self.train.scenario, Scenario::Parametric { .. }) {
            v.push("eval.ks nonempty for a parametric run".into());
        }
        v
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(v))
        }
    }

    /// Evaluation coefficients with the fixed-k default filled in.
    pub fn eval_ks(&self) -> Vec<f64> {
        match (self.eval.ks.is_empty(), self.train.scenario) {
            (true, Scenario::Fixed { k }) => vec![k],
            _ => self.eval.ks.clone(),
        }
    }

    /// First 12 hex digits of the SHA-256 of the TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    /// Directory label: preset name, or `cfg-<hash>`.
    pub fn label(&self) -> String {
        match &self.preset {
            Some(name) => name.clone(),
            None => format!("cfg-{}", self.hash()),
        }
    }

    /// Applies `a.b.c=value` assignments in order. Values are parsed as TOML
    /// literals and fall back to bare strings. Paths not starting with a
    /// top-level section are taken relative to `train`.
    pub fn with_overrides(&self, assignments: &[String]) -> Result<Self, CliError> {
        if assignments.is_empty() {
            return Ok(self.clone());
        }
        let mut doc = toml::Value::try_from(self).expect("run config converts to a TOML value");
        let mut errors = Vec::new();
        for a in assignments {
            if let Err(e) = set_path(&mut doc, a) {
                errors.push(e);
            }
        }
        if !errors.is_empty() {
            return Err(CliError::Config(errors));
        }
        Self::from_value(doc)
    }
}

/// Keys present in `input` that do not survive a round trip through the
/// typed configuration. Optional fields left at their defaults may be absent
/// from `canonical`, so only tables are compared key by key.
fn unknown_keys(input: &toml::Value, canonical: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    let Some(table) = input.as_table() else { return };
    let known = canonical.as_table();
    for (key, value) in table {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match known.and_then(|t| t.get(key)) {
            Some(c) => unknown_keys(value, c, &path, out),
            None => out.push(path),
        }
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    match toml::from_str::<Wrap>(&format!("v = {raw}")) {
        Ok(w) => w.v,
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

const TOP_LEVEL: [&str; 4] = ["preset", "problem", "train", "eval"];

fn set_path(doc: &mut toml::Value, assignment: &str) -> Result<(), String> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("override `{assignment}` is not of the form path=value"))?;
    let mut keys: Vec<&str> = path.trim().split('.').collect();
    if !TOP_LEVEL.contains(&keys[0]) {
        keys.insert(0, "train");
    }
    if keys.iter().any(|k| k.is_empty()) {
        return Err(format!("override path `{path}` has an empty segment"));
    }
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut node = doc;
    for key in parents {
        let table = node
            .as_table_mut()
            .ok_or_else(|| format!("override `{path}`: `{key}` is inside a non-table value"))?;
        node = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| format!("override `{path}`: parent is not a table"))?;
    table.insert(last.to_string(), parse_literal(raw.trim()));
    Ok(())
}
