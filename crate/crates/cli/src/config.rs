//! JSON configuration schema for the command-line front end.
//!
//! Expressions are strings in the same grammar the library parses: state
//! and input names for the system maps, `p1..pn` for storage basis
//! monomials over the scheduling coordinates, and `t` (the sample index)
//! for scenario inputs.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub system: SystemConfig,
    pub region: RegionConfig,
    #[serde(default)]
    pub grids: GridsConfig,
    /// Variable names mapped into the scheduling vector, in order.
    /// Defaults to all states followed by all inputs.
    #[serde(default)]
    pub scheduling: Option<Vec<String>>,
    /// Monomials over `p1..pn` added to the always-present constant term.
    #[serde(default)]
    pub storage_basis: Vec<String>,
    pub analysis: AnalysisKind,
    #[serde(default = "default_alpha1")]
    pub alpha1: f64,
    #[serde(default)]
    pub scenarios: Vec<Scenario>,
    #[serde(default)]
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub kind: SystemKind,
    /// Sampling time; required for `ct-rk4`.
    #[serde(default)]
    pub ts: Option<f64>,
    pub states: Vec<String>,
    pub inputs: Vec<String>,
    pub f: Vec<String>,
    pub h: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SystemKind {
    #[serde(rename = "dt")]
    Dt,
    #[serde(rename = "ct-rk4")]
    CtRk4,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub x: IntervalList,
    pub w: IntervalList,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalList {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridsConfig {
    #[serde(default = "default_p_points")]
    pub p_points: usize,
    #[serde(default = "default_v_points")]
    pub v_points: usize,
    #[serde(default = "default_dset_points")]
    pub dset_points: usize,
    #[serde(default = "default_dset_inflation")]
    pub dset_inflation: f64,
}

impl Default for GridsConfig {
    fn default() -> Self {
        GridsConfig {
            p_points: default_p_points(),
            v_points: default_v_points(),
            dset_points: default_dset_points(),
            dset_inflation: default_dset_inflation(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum AnalysisKind {
    /// Minimize the incremental gain level.
    #[serde(rename = "incremental-l2")]
    IncrementalL2,
    /// Incremental passivity feasibility (square systems).
    #[serde(rename = "incremental-passivity")]
    IncrementalPassivity,
    /// Fixed-supply dissipation feasibility with literal (Q, S, R).
    #[serde(rename = "qsr-feasibility")]
    QsrFeasibility {
        q: Vec<Vec<f64>>,
        s: Vec<Vec<f64>>,
        r: Vec<Vec<f64>>,
    },
    /// Gain minimization followed by the sampled transfer constant and the
    /// combined universal-shifted gain bound.
    #[serde(rename = "universal-shifted-l2")]
    UniversalShiftedL2 {
        beta: f64,
        #[serde(default = "default_alpha_samples")]
        alpha_samples: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub x0: Vec<f64>,
    /// One expression of `t` per input channel.
    pub input: Vec<String>,
    pub horizon: usize,
}

fn default_alpha1() -> f64 {
    1e-6
}
fn default_p_points() -> usize {
    9
}
fn default_v_points() -> usize {
    3
}
fn default_dset_points() -> usize {
    21
}
fn default_dset_inflation() -> f64 {
    1.05
}
fn default_alpha_samples() -> usize {
    7
}

impl AnalysisConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
