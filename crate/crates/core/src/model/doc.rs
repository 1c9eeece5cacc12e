//! Serialized form of a scenario.
//!
//! This is the on-disk data model: a single JSON document with top-level keys
//! `nodes`, `links`, `services` and `control`. Quantities may be written in
//! dB or linear form; [`super::Scenario::to_document`] always writes the
//! resolved linear form so that a reload reproduces the model exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    pub nodes: Vec<NodeDoc>,
    pub links: LinksDoc,
    pub services: Vec<ServiceDoc>,
    pub control: ControlDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub id: u32,
    pub position: [f64; 2],
    #[serde(default)]
    pub role: RoleDoc,
    pub tx_menu: Vec<TxLevelDoc>,
    pub pr_menu: Vec<PrLevelDoc>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleDoc {
    Ap,
    #[default]
    Ue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxLevelDoc {
    pub cost: f64,
    /// Power per code layer, used when a link profile has no `rate_table`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layer_powers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrLevelDoc {
    pub cost: f64,
    /// Processing rate in operations per slot.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinksDoc {
    pub profiles: BTreeMap<String, ProfileDoc>,
    pub default_profile: String,
    /// Explicit adjacency. When absent every ordered node pair is a link.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<EdgeDoc>>,
    /// Profile assignments applied on top of the default (all-pairs mode).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<EdgeDoc>,
    /// When false each edge entry creates both directions.
    #[serde(default)]
    pub directed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDoc {
    pub between: [u32; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileDoc {
    pub fading: FadingDoc,
    pub path_loss_exponent: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_gain_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds_db: Option<Vec<f64>>,
    /// Rows `k = 0..=K`, columns `l = 0..=L`. Overrides layer-power computation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_table: Option<Vec<Vec<f64>>>,
    /// Layer index whose threshold and rate the outage scheme uses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outage_layer: Option<usize>,
    /// Row-stochastic state transition matrix; makes the link Markov.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FadingDoc {
    Rayleigh,
    Rician {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k_factor: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k_factor_db: Option<f64>,
    },
    /// State drawn directly from a fixed distribution over `0..=L`.
    Discrete { state_probs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub functions: Vec<FunctionDoc>,
    /// `[source, destination]` node id pairs.
    pub clients: Vec<[u32; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionDoc {
    pub scaling: f64,
    pub complexity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlDoc {
    #[serde(alias = "V")]
    pub v: f64,
    #[serde(default)]
    pub coding: CodingDoc,
    pub arrivals: ArrivalsDoc,
    pub horizon: u64,
    #[serde(default = "default_warmup_frac")]
    pub warmup_frac: f64,
    #[serde(default)]
    pub seed: u64,
    /// Logarithm base for layer-rate computation; natural log when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_base: Option<f64>,
    #[serde(default = "default_true")]
    pub independent_links: bool,
    #[serde(default = "default_stability_threshold")]
    pub stability_threshold: f64,
    #[serde(default = "default_trace_stride")]
    pub trace_stride: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodingDoc {
    #[default]
    Broadcast,
    Outage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalsDoc {
    pub model: ArrivalModelDoc,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalModelDoc {
    Poisson,
    Deterministic,
}

fn default_warmup_frac() -> f64 {
    0.1
}

fn default_true() -> bool {
    true
}

fn default_stability_threshold() -> f64 {
    0.05
}

fn default_trace_stride() -> u64 {
    1
}
