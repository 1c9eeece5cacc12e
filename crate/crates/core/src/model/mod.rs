//! Network, service and control model: loading, validation and the commodity
//! lattice.

pub mod doc;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde_json::Value;
use thiserror::Error;

use crate::channel::Fading;
use crate::coding::{CodingScheme, LayerRateTable};
use doc::*;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("{ty}: {rule}")]
    Invariant { ty: &'static str, rule: String },
    #[error("bad override `{expr}`: {reason}")]
    Override { expr: String, reason: String },
}

fn invariant(ty: &'static str, rule: impl Into<String>) -> ConfigError {
    ConfigError::Invariant {
        ty,
        rule: rule.into(),
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    AccessPoint,
    UserEquipment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TxLevel {
    pub cost: f64,
    pub layer_powers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrLevel {
    pub cost: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: u32,
    pub position: (f64, f64),
    pub role: Role,
    /// Index `k` is the number of allocated transmission resource units.
    pub tx_menu: Vec<TxLevel>,
    /// Index `k` is the number of allocated processing resource units.
    pub pr_menu: Vec<PrLevel>,
}

impl Node {
    pub fn max_tx_level(&self) -> usize {
        self.tx_menu.len() - 1
    }

    pub fn max_pr_level(&self) -> usize {
        self.pr_menu.len() - 1
    }
}

/// Resolved channel profile shared by a class of links.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelProfile {
    pub fading: Fading,
    pub path_loss_exponent: f64,
    pub reference_gain: f64,
    pub thresholds: Vec<f64>,
    pub rate_table: Option<LayerRateTable>,
    pub outage_layer: usize,
    pub transition: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub tx: usize,
    pub rx: usize,
    pub profile: String,
    pub fading: Fading,
    pub path_loss_exponent: f64,
    pub reference_gain: f64,
    pub distance: f64,
    /// Linear gain thresholds of the code layers, strictly increasing.
    pub thresholds: Vec<f64>,
    pub rates: LayerRateTable,
    pub outage_layer: usize,
    pub transition: Option<Vec<Vec<f64>>>,
}

impl Link {
    pub fn mean_gain(&self) -> f64 {
        self.reference_gain * self.distance.powf(-self.path_loss_exponent)
    }

    /// Number of discretized states, `L + 1`.
    pub fn num_states(&self) -> usize {
        self.thresholds.len() + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    pub profiles: BTreeMap<String, ChannelProfile>,
    out_links: Vec<Vec<usize>>,
    in_links: Vec<Vec<usize>>,
    id_to_index: HashMap<u32, usize>,
}

impl NetworkModel {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Link indices leaving node `i`, ordered by receiver index.
    pub fn out_links(&self, i: usize) -> &[usize] {
        &self.out_links[i]
    }

    pub fn in_links(&self, i: usize) -> &[usize] {
        &self.in_links[i]
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.id_to_index.get(&id).copied()
    }

    pub fn link_between(&self, tx: usize, rx: usize) -> Option<usize> {
        self.out_links[tx]
            .iter()
            .copied()
            .find(|&l| self.links[l].rx == rx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Function {
    /// Output size over input size.
    pub scaling: f64,
    /// Operations per input unit.
    pub complexity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Service {
    pub name: Option<String>,
    pub functions: Vec<Function>,
    /// `(source, destination)` node indices.
    pub clients: Vec<(usize, usize)>,
}

impl Service {
    pub fn num_functions(&self) -> usize {
        self.functions.len()
    }
}

/// Information units produced by stage `stage` of `service` for `dest`.
/// Ordering is lexicographic on `(dest, service, stage)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Commodity {
    pub dest: usize,
    pub service: usize,
    pub stage: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Client {
    pub service: usize,
    pub source: usize,
    pub dest: usize,
    /// Index of the stage-0 commodity this client injects.
    pub commodity: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceCatalog {
    pub services: Vec<Service>,
    commodities: Vec<Commodity>,
    lookup: HashMap<Commodity, usize>,
    clients: Vec<Client>,
    next: Vec<Option<usize>>,
    mass_weight: Vec<f64>,
}

impl ServiceCatalog {
    pub fn new(services: Vec<Service>) -> Self {
        let commodities = enumerate_commodities(&services);
        let lookup = commodities
            .iter()
            .enumerate()
            .map(|(i, c)| (*c, i))
            .collect::<HashMap<_, _>>();
        let next = commodities
            .iter()
            .map(|c| {
                lookup
                    .get(&Commodity {
                        stage: c.stage + 1,
                        ..*c
                    })
                    .copied()
            })
            .collect();
        let mass_weight = commodities
            .iter()
            .map(|c| {
                services[c.service].functions[c.stage..]
                    .iter()
                    .map(|f| f.scaling)
                    .product()
            })
            .collect();
        let clients = services
            .iter()
            .enumerate()
            .flat_map(|(phi, s)| {
                let lookup = &lookup;
                s.clients.iter().map(move |&(source, dest)| Client {
                    service: phi,
                    source,
                    dest,
                    commodity: lookup[&Commodity {
                        dest,
                        service: phi,
                        stage: 0,
                    }],
                })
            })
            .collect();
        ServiceCatalog {
            services,
            commodities,
            lookup,
            clients,
            next,
            mass_weight,
        }
    }

    pub fn commodities(&self) -> &[Commodity] {
        &self.commodities
    }

    pub fn num_commodities(&self) -> usize {
        self.commodities.len()
    }

    pub fn clients(&self) -> &[Client] {
        &self.clients
    }

    pub fn commodity(&self, c: usize) -> Commodity {
        self.commodities[c]
    }

    pub fn index_of(&self, c: Commodity) -> Option<usize> {
        self.lookup.get(&c).copied()
    }

    /// Commodity produced by processing `c` (absent for final commodities).
    pub fn next_stage(&self, c: usize) -> Option<usize> {
        self.next[c]
    }

    pub fn is_final(&self, c: usize) -> bool {
        self.next[c].is_none()
    }

    /// The function that consumes commodity `c`, if any.
    pub fn consuming_function(&self, c: usize) -> Option<Function> {
        let com = self.commodities[c];
        self.services[com.service].functions.get(com.stage).copied()
    }

    /// Stage-M-equivalent mass of one unit of `c`: product of the scaling
    /// factors of the functions it still has to pass through.
    pub fn mass_weight(&self, c: usize) -> f64 {
        self.mass_weight[c]
    }

    pub fn min_complexity(&self) -> f64 {
        self.services
            .iter()
            .flat_map(|s| s.functions.iter().map(|f| f.complexity))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_scaling(&self) -> f64 {
        self.services
            .iter()
            .flat_map(|s| s.functions.iter().map(|f| f.scaling))
            .fold(0.0, f64::max)
    }
}

/// Lists every commodity `(d, φ, m)`: for each service with `M` functions and
/// each distinct destination among its clients, stages `0..=M`, in
/// lexicographic order.
pub fn enumerate_commodities(services: &[Service]) -> Vec<Commodity> {
    let mut out = Vec::new();
    for (phi, s) in services.iter().enumerate() {
        let mut dests: Vec<usize> = s.clients.iter().map(|&(_, d)| d).collect();
        dests.sort_unstable();
        dests.dedup();
        for d in dests {
            for m in 0..=s.functions.len() {
                out.push(Commodity {
                    dest: d,
                    service: phi,
                    stage: m,
                });
            }
        }
    }
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrivalModel {
    Poisson,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlConfig {
    pub v: f64,
    pub coding: CodingScheme,
    pub arrival_model: ArrivalModel,
    /// Mean arrivals per client per slot.
    pub arrival_rate: f64,
    pub horizon: u64,
    pub warmup_frac: f64,
    pub seed: u64,
    pub log_base: Option<f64>,
    pub independent_links: bool,
    pub stability_threshold: f64,
    /// Record every `trace_stride`-th slot; 0 records none.
    pub trace_stride: u64,
}

impl ControlConfig {
    pub fn warmup_slots(&self) -> u64 {
        (self.warmup_frac * self.horizon as f64).floor() as u64
    }
}

/// A fully validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub network: NetworkModel,
    pub catalog: ServiceCatalog,
    pub control: ControlConfig,
}

impl Scenario {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let doc = parse_document(text)?;
        Self::from_document(&doc)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        load_config(path, &[])
    }

    pub fn from_document(doc: &ConfigDoc) -> Result<Self, ConfigError> {
        let control = build_control(&doc.control)?;
        let network = build_network(doc, control.log_base)?;
        let catalog = build_catalog(&doc.services, &network)?;
        Ok(Scenario {
            network,
            catalog,
            control,
        })
    }

    /// Resolved document: linear units, explicit directed edges.
    pub fn to_document(&self) -> ConfigDoc {
        let net = &self.network;
        let nodes = net
            .nodes
            .iter()
            .map(|n| NodeDoc {
                id: n.id,
                position: [n.position.0, n.position.1],
                role: match n.role {
                    Role::AccessPoint => RoleDoc::Ap,
                    Role::UserEquipment => RoleDoc::Ue,
                },
                tx_menu: n
                    .tx_menu
                    .iter()
                    .map(|t| TxLevelDoc {
                        cost: t.cost,
                        layer_powers: t.layer_powers.clone(),
                    })
                    .collect(),
                pr_menu: n
                    .pr_menu
                    .iter()
                    .map(|p| PrLevelDoc {
                        cost: p.cost,
                        rate: p.rate,
                    })
                    .collect(),
            })
            .collect();
        let profiles = net
            .profiles
            .iter()
            .map(|(name, p)| {
                let fading = match &p.fading {
                    Fading::Rayleigh => FadingDoc::Rayleigh,
                    Fading::Rician { k_factor } => FadingDoc::Rician {
                        k_factor: Some(*k_factor),
                        k_factor_db: None,
                    },
                    Fading::Discrete { state_probs } => FadingDoc::Discrete {
                        state_probs: state_probs.clone(),
                    },
                };
                (
                    name.clone(),
                    ProfileDoc {
                        fading,
                        path_loss_exponent: p.path_loss_exponent,
                        reference_gain: Some(p.reference_gain),
                        reference_gain_db: None,
                        thresholds: Some(p.thresholds.clone()),
                        thresholds_db: None,
                        rate_table: p.rate_table.as_ref().map(|t| t.rows().to_vec()),
                        outage_layer: Some(p.outage_layer),
                        transition: p.transition.clone(),
                    },
                )
            })
            .collect();
        let default_profile = net
            .profiles
            .keys()
            .next()
            .cloned()
            .unwrap_or_default();
        let edges = net
            .links
            .iter()
            .map(|l| EdgeDoc {
                between: [net.nodes[l.tx].id, net.nodes[l.rx].id],
                profile: Some(l.profile.clone()),
            })
            .collect();
        let id = |i: usize| net.nodes[i].id;
        let services = self
            .catalog
            .services
            .iter()
            .map(|s| ServiceDoc {
                name: s.name.clone(),
                functions: s
                    .functions
                    .iter()
                    .map(|f| FunctionDoc {
                        scaling: f.scaling,
                        complexity: f.complexity,
                    })
                    .collect(),
                clients: s.clients.iter().map(|&(a, b)| [id(a), id(b)]).collect(),
            })
            .collect();
        let c = &self.control;
        ConfigDoc {
            nodes,
            links: LinksDoc {
                profiles,
                default_profile,
                edges: Some(edges),
                overrides: Vec::new(),
                directed: true,
            },
            services,
            control: ControlDoc {
                v: c.v,
                coding: match c.coding {
                    CodingScheme::Broadcast => CodingDoc::Broadcast,
                    CodingScheme::Outage => CodingDoc::Outage,
                },
                arrivals: ArrivalsDoc {
                    model: match c.arrival_model {
                        ArrivalModel::Poisson => ArrivalModelDoc::Poisson,
                        ArrivalModel::Deterministic => ArrivalModelDoc::Deterministic,
                    },
                    rate: c.arrival_rate,
                },
                horizon: c.horizon,
                warmup_frac: c.warmup_frac,
                seed: c.seed,
                log_base: c.log_base,
                independent_links: c.independent_links,
                stability_threshold: c.stability_threshold,
                trace_stride: c.trace_stride,
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("document serializes")
    }
}

/// Reads a config file, applies dotted-path overrides, validates.
pub fn load_config(path: impl AsRef<Path>, overrides: &[String]) -> Result<Scenario, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_config_str(&text, overrides)
}

pub fn load_config_str(text: &str, overrides: &[String]) -> Result<Scenario, ConfigError> {
    let mut value: Value = serde_json::from_str(text).map_err(|e| ConfigError::Schema {
        path: ".".into(),
        message: e.to_string(),
    })?;
    for expr in overrides {
        apply_override(&mut value, expr)?;
    }
    let doc = document_from_value(value)?;
    Scenario::from_document(&doc)
}

pub fn parse_document(text: &str) -> Result<ConfigDoc, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

fn document_from_value(value: Value) -> Result<ConfigDoc, ConfigError> {
    serde_path_to_error::deserialize(value).map_err(|e| ConfigError::Schema {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

/// Applies `a.b.c=value`. The value is parsed as JSON, falling back to a
/// plain string. Numeric path segments index into arrays.
pub fn apply_override(root: &mut Value, expr: &str) -> Result<(), ConfigError> {
    let bad = |reason: &str| ConfigError::Override {
        expr: expr.to_string(),
        reason: reason.to_string(),
    };
    let (key, raw) = expr.split_once('=').ok_or_else(|| bad("expected key=value"))?;
    let new: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(bad("empty path segment"));
    }
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                // fall back to a case-insensitive match, so `control.V` works
                let name = if map.contains_key(*part) {
                    (*part).to_string()
                } else {
                    map.keys()
                        .find(|k| k.eq_ignore_ascii_case(part))
                        .cloned()
                        .unwrap_or_else(|| (*part).to_string())
                };
                if last {
                    map.insert(name, new);
                    return Ok(());
                }
                map.get_mut(&name).ok_or_else(|| bad("no such key"))?
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| bad("expected array index"))?;
                let slot = items.get_mut(idx).ok_or_else(|| bad("index out of range"))?;
                if last {
                    *slot = new;
                    return Ok(());
                }
                slot
            }
            _ => return Err(bad("path descends into a scalar")),
        };
    }
    unreachable!("loop returns on the last segment")
}

fn build_control(c: &ControlDoc) -> Result<ControlConfig, ConfigError> {
    if !(c.v >= 0.0) || !c.v.is_finite() {
        return Err(invariant("ControlConfig", "V must be a finite nonnegative number"));
    }
    if !(c.arrivals.rate >= 0.0) || !c.arrivals.rate.is_finite() {
        return Err(invariant("ControlConfig", "arrival rate must be nonnegative"));
    }
    if c.horizon < 1 {
        return Err(invariant("ControlConfig", "horizon must be at least 1 slot"));
    }
    if !(0.0..1.0).contains(&c.warmup_frac) {
        return Err(invariant("ControlConfig", "warmup_frac must lie in [0, 1)"));
    }
    if let Some(b) = c.log_base {
        if !(b > 1.0) {
            return Err(invariant("ControlConfig", "log_base must exceed 1"));
        }
    }
    if !(c.stability_threshold > 0.0) {
        return Err(invariant("ControlConfig", "stability_threshold must be positive"));
    }
    Ok(ControlConfig {
        v: c.v,
        coding: match c.coding {
            CodingDoc::Broadcast => CodingScheme::Broadcast,
            CodingDoc::Outage => CodingScheme::Outage,
        },
        arrival_model: match c.arrivals.model {
            ArrivalModelDoc::Poisson => ArrivalModel::Poisson,
            ArrivalModelDoc::Deterministic => ArrivalModel::Deterministic,
        },
        arrival_rate: c.arrivals.rate,
        horizon: c.horizon,
        warmup_frac: c.warmup_frac,
        seed: c.seed,
        log_base: c.log_base,
        independent_links: c.independent_links,
        stability_threshold: c.stability_threshold,
        trace_stride: c.trace_stride,
    })
}

fn build_node(n: &NodeDoc) -> Result<Node, ConfigError> {
    let ctx = |rule: String| invariant("Node", format!("node {}: {rule}", n.id));
    if n.tx_menu.is_empty() || n.pr_menu.is_empty() {
        return Err(ctx("resource menus must contain at least level k=0".into()));
    }
    if n.tx_menu[0].cost != 0.0 || n.tx_menu[0].layer_powers.iter().any(|&p| p != 0.0) {
        return Err(ctx("tx level k=0 must have zero cost and zero power".into()));
    }
    if n.pr_menu[0].cost != 0.0 || n.pr_menu[0].rate != 0.0 {
        return Err(ctx("processing level k=0 must have zero cost and zero rate".into()));
    }
    for w in n.tx_menu.windows(2) {
        if !(w[1].cost >= w[0].cost) {
            return Err(ctx("tx costs must be nondecreasing in k".into()));
        }
    }
    for w in n.pr_menu.windows(2) {
        if !(w[1].cost >= w[0].cost) {
            return Err(ctx("processing costs must be nondecreasing in k".into()));
        }
        if !(w[1].rate >= w[0].rate) {
            return Err(ctx("processing rates must be nondecreasing in k".into()));
        }
    }
    if n.tx_menu.iter().any(|t| t.layer_powers.iter().any(|&p| !(p >= 0.0))) {
        return Err(ctx("layer powers must be nonnegative".into()));
    }
    if !n.position.iter().all(|x| x.is_finite()) {
        return Err(ctx("position must be finite".into()));
    }
    Ok(Node {
        id: n.id,
        position: (n.position[0], n.position[1]),
        role: match n.role {
            RoleDoc::Ap => Role::AccessPoint,
            RoleDoc::Ue => Role::UserEquipment,
        },
        tx_menu: n
            .tx_menu
            .iter()
            .map(|t| TxLevel {
                cost: t.cost,
                layer_powers: t.layer_powers.clone(),
            })
            .collect(),
        pr_menu: n
            .pr_menu
            .iter()
            .map(|p| PrLevel {
                cost: p.cost,
                rate: p.rate,
            })
            .collect(),
    })
}

fn build_profile(name: &str, p: &ProfileDoc) -> Result<ChannelProfile, ConfigError> {
    let ctx = |rule: &str| invariant("Link", format!("profile `{name}`: {rule}"));
    let fading = match &p.fading {
        FadingDoc::Rayleigh => Fading::Rayleigh,
        FadingDoc::Rician {
            k_factor,
            k_factor_db,
        } => {
            let k = match (k_factor, k_factor_db) {
                (Some(k), None) => *k,
                (None, Some(db)) => db_to_linear(*db),
                _ => return Err(ctx("give exactly one of k_factor, k_factor_db")),
            };
            if !(k >= 0.0) {
                return Err(ctx("Rice factor must be nonnegative"));
            }
            Fading::Rician { k_factor: k }
        }
        FadingDoc::Discrete { state_probs } => Fading::Discrete {
            state_probs: state_probs.clone(),
        },
    };
    if !(p.path_loss_exponent > 0.0) {
        return Err(ctx("path loss exponent must be positive"));
    }
    let reference_gain = match (p.reference_gain, p.reference_gain_db) {
        (Some(g), None) => g,
        (None, Some(db)) => db_to_linear(db),
        (None, None) => 1.0,
        _ => return Err(ctx("give at most one of reference_gain, reference_gain_db")),
    };
    if !(reference_gain > 0.0) || !reference_gain.is_finite() {
        return Err(ctx("reference gain must be positive"));
    }
    let thresholds = match (&p.thresholds, &p.thresholds_db) {
        (Some(t), None) => t.clone(),
        (None, Some(db)) => db.iter().map(|&x| db_to_linear(x)).collect(),
        _ => return Err(ctx("give exactly one of thresholds, thresholds_db")),
    };
    if thresholds.is_empty() {
        return Err(ctx("at least one gain threshold is required"));
    }
    if thresholds.iter().any(|&g| !(g > 0.0)) {
        return Err(ctx("thresholds must be positive"));
    }
    if thresholds.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(ctx("thresholds must be strictly increasing"));
    }
    let states = thresholds.len() + 1;
    if let Fading::Discrete { state_probs } = &fading {
        check_distribution(state_probs, states).map_err(|r| ctx(&format!("state_probs {r}")))?;
    }
    if let Some(t) = &p.transition {
        if t.len() != states {
            return Err(ctx("transition matrix must have L+1 rows"));
        }
        for row in t {
            check_distribution(row, states).map_err(|r| ctx(&format!("transition row {r}")))?;
        }
    }
    let outage_layer = p.outage_layer.unwrap_or(1.min(thresholds.len()));
    if outage_layer < 1 || outage_layer > thresholds.len() {
        return Err(ctx("outage_layer must lie in 1..=L"));
    }
    let rate_table = match &p.rate_table {
        Some(rows) => Some(
            LayerRateTable::new(rows.clone()).map_err(|e| ctx(&e.to_string()))?,
        ),
        None => None,
    };
    if let Some(t) = &rate_table {
        if t.num_layers() != thresholds.len() {
            return Err(ctx("rate table needs L+1 columns"));
        }
    }
    Ok(ChannelProfile {
        fading,
        path_loss_exponent: p.path_loss_exponent,
        reference_gain,
        thresholds,
        rate_table,
        outage_layer,
        transition: p.transition.clone(),
    })
}

fn check_distribution(p: &[f64], len: usize) -> Result<(), String> {
    if p.len() != len {
        return Err(format!("must have {len} entries"));
    }
    if p.iter().any(|&x| !(x >= 0.0)) {
        return Err("entries must be nonnegative".into());
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(format!("must sum to 1 (sums to {s})"));
    }
    Ok(())
}

fn build_network(doc: &ConfigDoc, log_base: Option<f64>) -> Result<NetworkModel, ConfigError> {
    if doc.nodes.is_empty() {
        return Err(invariant("NetworkModel", "no nodes"));
    }
    let mut node_docs: Vec<&NodeDoc> = doc.nodes.iter().collect();
    node_docs.sort_by_key(|n| n.id);
    if node_docs.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(invariant("Node", "duplicate node id"));
    }
    let nodes = node_docs
        .into_iter()
        .map(build_node)
        .collect::<Result<Vec<_>, _>>()?;
    let id_to_index: HashMap<u32, usize> =
        nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
    let node_ix = |id: u32| {
        id_to_index
            .get(&id)
            .copied()
            .ok_or_else(|| invariant("Link", format!("unknown node id {id}")))
    };

    let mut profiles = BTreeMap::new();
    for (name, p) in &doc.links.profiles {
        profiles.insert(name.clone(), build_profile(name, p)?);
    }
    let lookup_profile = |name: &str| {
        if profiles.contains_key(name) {
            Ok(name.to_string())
        } else {
            Err(invariant("Link", format!("unknown profile `{name}`")))
        }
    };
    let default_profile = lookup_profile(&doc.links.default_profile)?;

    // (tx, rx) -> profile name
    let mut pairs: BTreeMap<(usize, usize), String> = BTreeMap::new();
    let expand = |e: &EdgeDoc,
                      pairs: &mut BTreeMap<(usize, usize), String>,
                      must_exist: bool|
     -> Result<(), ConfigError> {
        let a = node_ix(e.between[0])?;
        let b = node_ix(e.between[1])?;
        if a == b {
            return Err(invariant("Link", format!("self-link on node {}", e.between[0])));
        }
        let profile = match &e.profile {
            Some(p) => lookup_profile(p)?,
            None => default_profile.clone(),
        };
        let dirs: &[(usize, usize)] = if doc.links.directed {
            &[(a, b)][..]
        } else {
            &[(a, b), (b, a)][..]
        };
        for &pair in dirs {
            if must_exist && !pairs.contains_key(&pair) {
                return Err(invariant("Link", "override names a pair that is not a link"));
            }
            pairs.insert(pair, profile.clone());
        }
        Ok(())
    };
    match &doc.links.edges {
        Some(edges) => {
            for e in edges {
                expand(e, &mut pairs, false)?;
            }
        }
        None => {
            for a in 0..nodes.len() {
                for b in 0..nodes.len() {
                    if a != b {
                        pairs.insert((a, b), default_profile.clone());
                    }
                }
            }
        }
    }
    for e in &doc.links.overrides {
        expand(e, &mut pairs, true)?;
    }

    let mut links = Vec::with_capacity(pairs.len());
    for ((tx, rx), pname) in pairs {
        let p = &profiles[&pname];
        let (x0, y0) = nodes[tx].position;
        let (x1, y1) = nodes[rx].position;
        let distance = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
        if !(distance > 0.0) {
            return Err(invariant(
                "Link",
                format!(
                    "nodes {} and {} are co-located; mean gain undefined",
                    nodes[tx].id, nodes[rx].id
                ),
            ));
        }
        let rates = match &p.rate_table {
            Some(t) => t.clone(),
            None => {
                let powers: Vec<Vec<f64>> = nodes[tx]
                    .tx_menu
                    .iter()
                    .map(|t| {
                        if t.layer_powers.is_empty() {
                            vec![0.0; p.thresholds.len()]
                        } else {
                            t.layer_powers.clone()
                        }
                    })
                    .collect();
                if powers.iter().any(|row| row.len() != p.thresholds.len()) {
                    return Err(invariant(
                        "Link",
                        format!(
                            "node {} layer_powers must have one entry per layer of profile `{pname}`",
                            nodes[tx].id
                        ),
                    ));
                }
                LayerRateTable::from_layer_powers(&powers, &p.thresholds, log_base)
                    .map_err(|e| invariant("LayerRateTable", e.to_string()))?
            }
        };
        if rates.num_levels() != nodes[tx].tx_menu.len() {
            return Err(invariant(
                "Link",
                format!(
                    "rate table of profile `{pname}` has {} rows but node {} has {} tx levels",
                    rates.num_levels(),
                    nodes[tx].id,
                    nodes[tx].tx_menu.len()
                ),
            ));
        }
        let link = Link {
            tx,
            rx,
            profile: pname.clone(),
            fading: p.fading.clone(),
            path_loss_exponent: p.path_loss_exponent,
            reference_gain: p.reference_gain,
            distance,
            thresholds: p.thresholds.clone(),
            rates,
            outage_layer: p.outage_layer,
            transition: p.transition.clone(),
        };
        if !(link.mean_gain() > 0.0) {
            return Err(invariant("Link", "mean gain must be positive"));
        }
        links.push(link);
    }

    let n = nodes.len();
    let mut out_links = vec![Vec::new(); n];
    let mut in_links = vec![Vec::new(); n];
    for (li, l) in links.iter().enumerate() {
        out_links[l.tx].push(li);
        in_links[l.rx].push(li);
    }
    Ok(NetworkModel {
        nodes,
        links,
        profiles,
        out_links,
        in_links,
        id_to_index,
    })
}

fn build_catalog(docs: &[ServiceDoc], net: &NetworkModel) -> Result<ServiceCatalog, ConfigError> {
    if docs.is_empty() {
        return Err(invariant("ServiceCatalog", "no services"));
    }
    let mut services = Vec::with_capacity(docs.len());
    for (phi, s) in docs.iter().enumerate() {
        if s.functions.is_empty() {
            return Err(invariant("Service", format!("service {phi}: functions must be nonempty")));
        }
        for f in &s.functions {
            if !(f.scaling > 0.0) || !(f.complexity > 0.0) {
                return Err(invariant(
                    "Service",
                    format!("service {phi}: scaling and complexity factors must be positive"),
                ));
            }
        }
        let mut clients = Vec::with_capacity(s.clients.len());
        for &[src, dst] in &s.clients {
            if src == dst {
                return Err(invariant(
                    "Service",
                    format!("service {phi}: client source equals destination ({src})"),
                ));
            }
            let si = net
                .index_of(src)
                .ok_or_else(|| invariant("Service", format!("service {phi}: unknown node {src}")))?;
            let di = net
                .index_of(dst)
                .ok_or_else(|| invariant("Service", format!("service {phi}: unknown node {dst}")))?;
            clients.push((si, di));
        }
        services.push(Service {
            name: s.name.clone(),
            functions: s
                .functions
                .iter()
                .map(|f| Function {
                    scaling: f.scaling,
                    complexity: f.complexity,
                })
                .collect(),
            clients,
        });
    }
    Ok(ServiceCatalog::new(services))
}

#[cfg(test)]
mod tests;
