use std::collections::BTreeMap;

use cartan::zoo::ModelSpec;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Axioms,
    ConnectionSuite,
    CartanVerify,
    Lts,
    Transport,
    Geodesic,
    Integrate,
    IntegrateLts,
}

/// A target reached through explicit waypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    pub target: Vec<f64>,
    #[serde(default)]
    pub waypoints: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<ModelSpec>,
    /// Source base point; the model base when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base1: Option<Vec<f64>>,
    /// Target base point; the model base when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base2: Option<Vec<f64>>,
    /// Tangent map in the orthonormal frames at the base points (rows index the target frame).
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub targets: Vec<Vec<f64>>,
    #[serde(default)]
    pub paths: Vec<PathSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f64>>,
    #[serde(default = "default_time")]
    pub time: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Threshold overrides keyed by check name.
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    /// CSV trace path for `transport` and `geodesic`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
}

fn default_time() -> f64 {
    1.0
}

fn default_steps() -> usize {
    cartan::connection::DEFAULT_STEPS
}

fn default_samples() -> usize {
    cartan::symspace::DEFAULT_SAMPLES
}
