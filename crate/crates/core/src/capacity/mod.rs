//! LP bounds on what any policy can support.
//!
//! Time-sharing turns the products of allocation probabilities into joint
//! masses, so the capacity region becomes a polytope:
//!
//! * `apr[i,k]`: fraction of slots node `i` runs processing level `k`,
//!   `Σ_k apr ≤ 1`; `bpr[i,k,c] ≤` its share spent on commodity `c`,
//!   `Σ_c bpr ≤ apr`.
//! * `atr[i,s,k]`: probability of local channel state `s` *and* level `k`,
//!   `Σ_k atr ≤ π_s`; `btr[i,s,k,c]` its share for commodity `c`,
//!   `Σ_c btr ≤ atr`; `z[i,s,k,c,n,j]` the share of partition `n` handed
//!   to decoder `j`, `Σ_j z ≤ btr` (single copy, per commodity).
//! * Link flow `f[i,j,c] ≤ Σ ΔR_n·z` over partitions `j` decodes; processed
//!   input `p[i,c]` obeys `r·p ≤ Σ_k R_k·bpr`.
//! * Flow balance at every node and commodity, except a final commodity at
//!   its own destination: inflow + arrivals + scaled processing output ≤
//!   outflow + processing input.
//!
//! Local states are the joint states of one transmitter's outgoing links;
//! link independence makes their probabilities products of the marginals.

pub mod lp;
pub mod simplex;

use serde::Serialize;
use thiserror::Error;

use crate::channel::{ChannelError, StatisticalCsi};
use crate::coding::{scheme_rate, CodingScheme, PartitionStructure};
use crate::model::{NetworkModel, Scenario, ServiceCatalog};
use lp::{LinearProgram, Relation, Sense};
use simplex::SimplexError;

/// Most local channel states enumerated for one transmitter.
pub const STATE_LIMIT: usize = 100_000;

#[derive(Debug, Error)]
pub enum CapacityError {
    #[error("node {node}: {count} local channel states exceed the limit of {limit}")]
    TooManyStates { node: u32, count: usize, limit: usize },
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Solver(SimplexError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Objective {
    /// Largest common per-client rate.
    MaxThroughput,
    /// Cheapest average cost at the given per-client rate.
    MinCost { rate: f64 },
}

/// One joint state of a transmitter's outgoing links.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalState {
    pub prob: f64,
    /// State of each outgoing link, in `out_links` order.
    pub states: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CapacityInstance<'a> {
    pub network: &'a NetworkModel,
    pub catalog: &'a ServiceCatalog,
    pub scheme: CodingScheme,
    pub local_states: Vec<Vec<LocalState>>,
}

impl<'a> CapacityInstance<'a> {
    pub fn new(network: &'a NetworkModel, catalog: &'a ServiceCatalog, scheme: CodingScheme) -> Result<Self, CapacityError> {
        let csi = StatisticalCsi::from_links(&network.links)?;
        let mut local_states = Vec::with_capacity(network.num_nodes());
        for i in 0..network.num_nodes() {
            let laws: Vec<Vec<(usize, f64)>> = network
                .out_links(i)
                .iter()
                .map(|&l| {
                    csi.links[l]
                        .conditional(None)
                        .iter()
                        .copied()
                        .enumerate()
                        .filter(|&(_, p)| p > 0.0)
                        .collect()
                })
                .collect();
            let count = laws.iter().try_fold(1usize, |acc, l| acc.checked_mul(l.len()));
            match count {
                Some(c) if c <= STATE_LIMIT => {}
                _ => {
                    return Err(CapacityError::TooManyStates {
                        node: network.nodes[i].id,
                        count: count.unwrap_or(usize::MAX),
                        limit: STATE_LIMIT,
                    })
                }
            }
            let mut states = vec![LocalState {
                prob: 1.0,
                states: Vec::new(),
            }];
            for law in &laws {
                let mut next = Vec::with_capacity(states.len() * law.len());
                for st in &states {
                    for &(s, p) in law {
                        let mut v = st.states.clone();
                        v.push(s);
                        next.push(LocalState {
                            prob: st.prob * p,
                            states: v,
                        });
                    }
                }
                states = next;
            }
            local_states.push(states);
        }
        Ok(CapacityInstance {
            network,
            catalog,
            scheme,
            local_states,
        })
    }

    pub fn from_scenario(scenario: &'a Scenario) -> Result<Self, CapacityError> {
        Self::new(&scenario.network, &scenario.catalog, scenario.control.coding)
    }
}

/// The LP plus what is needed to read its solution.
#[derive(Debug, Clone)]
pub struct CapacityModel {
    pub lp: LinearProgram,
    pub objective: Objective,
    eps: Option<usize>,
    flows: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityResult {
    pub objective: Objective,
    pub verdict: Verdict,
    /// Maximum per-client rate, or minimum average cost.
    pub value: Option<f64>,
    /// Nonzero flow variables of the optimum.
    pub flows: Vec<NamedValue>,
    pub variables: usize,
    pub constraints: usize,
}

/// Builds the LP for `objective`.
pub fn build_lp(inst: &CapacityInstance<'_>, objective: Objective) -> CapacityModel {
    let net = inst.network;
    let cat = inst.catalog;
    let nc = cat.num_commodities();
    let id = |i: usize| net.nodes[i].id;
    let sense = match objective {
        Objective::MaxThroughput => Sense::Maximize,
        Objective::MinCost { .. } => Sense::Minimize,
    };
    let mut lp = LinearProgram::new(sense);
    // menu costs enter the objective only when minimizing cost
    let priced = |w: f64| if eps_wanted(objective) { 0.0 } else { w };
    let eps = match objective {
        Objective::MaxThroughput => Some(lp.var("eps", 1.0)),
        Objective::MinCost { .. } => None,
    };

    // link flows
    let mut f = vec![usize::MAX; net.links.len() * nc];
    let mut flows = Vec::new();
    for (l, link) in net.links.iter().enumerate() {
        for c in 0..nc {
            let v = lp.var(format!("f_{}_{}_c{c}", id(link.tx), id(link.rx)), 0.0);
            f[l * nc + c] = v;
            flows.push(v);
        }
    }

    // processing
    let mut p = vec![usize::MAX; net.num_nodes() * nc];
    for (i, node) in net.nodes.iter().enumerate() {
        let levels: Vec<usize> = (1..node.pr_menu.len()).filter(|&k| node.pr_menu[k].rate > 0.0).collect();
        if levels.is_empty() {
            continue;
        }
        let mut total = Vec::new();
        let mut b_by_level = Vec::new();
        for &k in &levels {
            let a = lp.var(format!("apr_{}_k{k}", id(i)), priced(node.pr_menu[k].cost));
            total.push((a, 1.0));
            b_by_level.push((k, a));
        }
        lp.constrain(format!("pr_time_{}", id(i)), total, Relation::Le, 1.0);
        let mut shares: Vec<Vec<(usize, f64)>> = vec![Vec::new(); levels.len()];
        for c in 0..nc {
            let Some(func) = cat.consuming_function(c) else { continue };
            let pv = lp.var(format!("p_{}_c{c}", id(i)), 0.0);
            p[i * nc + c] = pv;
            flows.push(pv);
            let mut cap = vec![(pv, func.complexity)];
            for (li, &(k, _)) in b_by_level.iter().enumerate() {
                let b = lp.var(format!("bpr_{}_k{k}_c{c}", id(i)), 0.0);
                shares[li].push((b, 1.0));
                cap.push((b, -node.pr_menu[k].rate));
            }
            lp.constrain(format!("pr_cap_{}_c{c}", id(i)), cap, Relation::Le, 0.0);
        }
        for (li, &(k, a)) in b_by_level.iter().enumerate() {
            let mut terms = std::mem::take(&mut shares[li]);
            terms.push((a, -1.0));
            lp.constrain(format!("pr_share_{}_k{k}", id(i)), terms, Relation::Le, 0.0);
        }
    }

    // transmission
    let mut link_cap: Vec<Vec<(usize, f64)>> = vec![Vec::new(); net.links.len() * nc];
    let mut parts = PartitionStructure::default();
    for (i, node) in net.nodes.iter().enumerate() {
        let outs = net.out_links(i);
        if outs.is_empty() || node.tx_menu.len() < 2 {
            continue;
        }
        for (si, st) in inst.local_states[i].iter().enumerate() {
            let mut masses = Vec::new();
            for k in 1..node.tx_menu.len() {
                let pairs: Vec<(usize, f64)> = outs
                    .iter()
                    .zip(&st.states)
                    .map(|(&l, &s)| {
                        let link = &net.links[l];
                        (l, scheme_rate(inst.scheme, s, k, &link.rates, link.outage_layer))
                    })
                    .collect();
                parts.rebuild(&pairs);
                if parts.top_rate() <= 0.0 {
                    continue;
                }
                let u = lp.var(format!("atr_{}_s{si}_k{k}", id(i)), priced(node.tx_menu[k].cost));
                masses.push((u, 1.0));
                let mut per_c = Vec::new();
                for c in 0..nc {
                    let com = cat.commodity(c);
                    if cat.is_final(c) && com.dest == i {
                        continue;
                    }
                    let v = lp.var(format!("btr_{}_s{si}_k{k}_c{c}", id(i)), 0.0);
                    per_c.push((v, 1.0));
                    for (n, &inc) in parts.increments().iter().enumerate() {
                        if inc <= 0.0 {
                            continue;
                        }
                        let mut single = Vec::new();
                        for &l in parts.decoders(n) {
                            let j = net.links[l].rx;
                            let z = lp.var(format!("z_{}_s{si}_k{k}_c{c}_n{n}_{}", id(i), id(j)), 0.0);
                            single.push((z, 1.0));
                            link_cap[l * nc + c].push((z, -inc));
                        }
                        single.push((v, -1.0));
                        lp.constrain(format!("copy_{}_s{si}_k{k}_c{c}_n{n}", id(i)), single, Relation::Le, 0.0);
                    }
                }
                per_c.push((u, -1.0));
                lp.constrain(format!("tx_share_{}_s{si}_k{k}", id(i)), per_c, Relation::Le, 0.0);
            }
            if !masses.is_empty() {
                lp.constrain(format!("tx_time_{}_s{si}", id(i)), masses, Relation::Le, st.prob);
            }
        }
    }
    for (l, link) in net.links.iter().enumerate() {
        for c in 0..nc {
            let mut terms = std::mem::take(&mut link_cap[l * nc + c]);
            terms.push((f[l * nc + c], 1.0));
            lp.constrain(
                format!("tx_cap_{}_{}_c{c}", id(link.tx), id(link.rx)),
                terms,
                Relation::Le,
                0.0,
            );
        }
    }

    // flow balance
    let mut demand = vec![0.0; net.num_nodes() * nc];
    for cl in cat.clients() {
        let c = cat
            .index_of(crate::model::Commodity {
                dest: cl.dest,
                service: cl.service,
                stage: 0,
            })
            .expect("source commodity");
        demand[cl.source * nc + c] += 1.0;
    }
    for i in 0..net.num_nodes() {
        for c in 0..nc {
            let com = cat.commodity(c);
            if cat.is_final(c) && com.dest == i {
                continue;
            }
            let mut terms = Vec::new();
            for &l in net.in_links(i) {
                terms.push((f[l * nc + c], 1.0));
            }
            for &l in net.out_links(i) {
                terms.push((f[l * nc + c], -1.0));
            }
            if com.stage > 0 {
                let prev = cat
                    .index_of(crate::model::Commodity {
                        stage: com.stage - 1,
                        ..com
                    })
                    .expect("previous stage");
                let pv = p[i * nc + prev];
                if pv != usize::MAX {
                    let xi = cat.consuming_function(prev).expect("non-final").scaling;
                    terms.push((pv, xi));
                }
            }
            if p[i * nc + c] != usize::MAX {
                terms.push((p[i * nc + c], -1.0));
            }
            let d = demand[i * nc + c];
            let rhs = match (objective, eps) {
                (Objective::MaxThroughput, Some(e)) => {
                    if d > 0.0 {
                        terms.push((e, d));
                    }
                    0.0
                }
                (Objective::MinCost { rate }, _) => -rate * d,
                _ => unreachable!(),
            };
            lp.constrain(format!("balance_{}_c{c}", id(i)), terms, Relation::Le, rhs);
        }
    }

    CapacityModel {
        lp,
        objective,
        eps,
        flows,
    }
}

fn eps_wanted(objective: Objective) -> bool {
    matches!(objective, Objective::MaxThroughput)
}

/// Solves a built model. Infeasibility is a verdict, not an error.
pub fn solve(model: &CapacityModel) -> Result<CapacityResult, CapacityError> {
    let base = CapacityResult {
        objective: model.objective,
        verdict: Verdict::Infeasible,
        value: None,
        flows: Vec::new(),
        variables: model.lp.num_vars(),
        constraints: model.lp.constraints.len(),
    };
    match simplex::solve(&model.lp) {
        Ok(sol) => {
            let value = match model.eps {
                Some(e) => sol.x[e],
                None => sol.objective,
            };
            let flows = model
                .flows
                .iter()
                .filter(|&&v| sol.x[v] > 1e-12)
                .map(|&v| NamedValue {
                    name: model.lp.names[v].clone(),
                    value: sol.x[v],
                })
                .collect();
            Ok(CapacityResult {
                verdict: Verdict::Optimal,
                value: Some(value),
                flows,
                ..base
            })
        }
        Err(SimplexError::Infeasible { .. }) => Ok(base),
        Err(e) => Err(CapacityError::Solver(e)),
    }
}

/// Largest common per-client rate `λ*`.
pub fn max_throughput(inst: &CapacityInstance<'_>) -> Result<f64, CapacityError> {
    let r = solve(&build_lp(inst, Objective::MaxThroughput))?;
    Ok(r.value.unwrap_or(0.0))
}

/// Minimum average cost `h*(λ)`, or `None` when `λ` is outside the region.
pub fn min_cost(inst: &CapacityInstance<'_>, rate: f64) -> Result<Option<f64>, CapacityError> {
    Ok(solve(&build_lp(inst, Objective::MinCost { rate }))?.value)
}
