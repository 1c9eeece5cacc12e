//! Per-node, per-commodity backlogs and the slot update.

use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::model::{ArrivalModel, ServiceCatalog};
use crate::rng::StreamRng;

#[derive(Debug, Error, PartialEq)]
pub enum QueueError {
    #[error("node {node} commodity {commodity}: outflow {outflow} exceeds backlog {backlog}")]
    Overdrawn {
        node: usize,
        commodity: usize,
        outflow: f64,
        backlog: f64,
    },
    #[error("node {node} commodity {commodity}: processing a final commodity")]
    ProcessedFinal { node: usize, commodity: usize },
}

/// Relative slack allowed when checking outflow against backlog.
const OVERDRAW_TOL: f64 = 1e-9;

/// `Q_i^c` for every node `i` and commodity `c`, stored node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BacklogState {
    num_commodities: usize,
    q: Vec<f64>,
}

impl BacklogState {
    pub fn new(num_nodes: usize, num_commodities: usize) -> Self {
        BacklogState {
            num_commodities,
            q: vec![0.0; num_nodes * num_commodities],
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.q.len() / self.num_commodities.max(1)
    }

    pub fn num_commodities(&self) -> usize {
        self.num_commodities
    }

    #[inline]
    pub fn get(&self, node: usize, commodity: usize) -> f64 {
        self.q[node * self.num_commodities + commodity]
    }

    #[inline]
    pub fn set(&mut self, node: usize, commodity: usize, value: f64) {
        self.q[node * self.num_commodities + commodity] = value;
    }

    /// All backlogs of one node.
    pub fn node(&self, node: usize) -> &[f64] {
        let c = self.num_commodities;
        &self.q[node * c..(node + 1) * c]
    }

    pub fn total(&self) -> f64 {
        self.q.iter().sum()
    }

    /// Backlog expressed in final-stage units.
    pub fn weighted_mass(&self, catalog: &ServiceCatalog) -> f64 {
        let c = self.num_commodities;
        self.q
            .iter()
            .enumerate()
            .map(|(ix, &x)| x * catalog.mass_weight(ix % c))
            .sum()
    }

    pub fn min(&self) -> f64 {
        self.q.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Exogenous arrivals of one slot; one entry per client.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArrivalBatch {
    /// `(node, source commodity, amount)`.
    pub entries: Vec<(usize, usize, f64)>,
}

impl ArrivalBatch {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.2).sum()
    }
}

/// Draws this slot's arrivals. `rngs` holds one stream per client.
pub fn generate_arrivals(
    catalog: &ServiceCatalog,
    rate: f64,
    model: ArrivalModel,
    rngs: &mut [StreamRng],
    out: &mut ArrivalBatch,
) {
    out.entries.clear();
    let poisson = match model {
        ArrivalModel::Poisson if rate > 0.0 => Some(Poisson::new(rate).expect("positive finite rate")),
        _ => None,
    };
    for (ci, client) in catalog.clients().iter().enumerate() {
        let commodity = client.commodity;
        let amount = match (model, &poisson) {
            (ArrivalModel::Poisson, Some(p)) => p.sample(&mut rngs[ci]),
            (ArrivalModel::Poisson, None) => 0.0,
            (ArrivalModel::Deterministic, _) => rate,
        };
        out.entries.push((client.source, commodity, amount));
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transfer {
    pub from: usize,
    pub to: usize,
    pub commodity: usize,
    pub amount: f64,
}

/// `amount` units of `commodity` fed into the next function at `node`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessingFlow {
    pub node: usize,
    pub commodity: usize,
    pub amount: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SlotFlows {
    pub transfers: Vec<Transfer>,
    pub processing: Vec<ProcessingFlow>,
}

impl SlotFlows {
    pub fn clear(&mut self) {
        self.transfers.clear();
        self.processing.clear();
    }
}

/// Final-stage units absorbed at their destinations during one update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Deliveries {
    /// `(final commodity, amount)` for every nonzero absorption.
    pub by_commodity: Vec<(usize, f64)>,
}

impl Deliveries {
    pub fn total(&self) -> f64 {
        self.by_commodity.iter().map(|d| d.1).sum()
    }
}

/// Applies the queue recursion with exact equality:
/// `Q' = Q − Σ_j μ_ij − μ_i,pr + Σ_j μ_ji + μ_pr,i + a`, where processed
/// input of stage `m` reappears as `ξ^(m+1)` times as much stage `m+1`.
/// Final commodities that land at their destination are absorbed.
///
/// Outflows must already be capped by the backlog; a violation is an error
/// because it would silently break conservation.
pub fn apply_slot_update(
    backlog: &mut BacklogState,
    flows: &SlotFlows,
    arrivals: &ArrivalBatch,
    catalog: &ServiceCatalog,
    deliveries: &mut Deliveries,
) -> Result<(), QueueError> {
    deliveries.by_commodity.clear();
    let nc = backlog.num_commodities;

    // Debit outflows first so that the precondition is checked on Q(t).
    let mut debit = |node: usize, commodity: usize, amount: f64| -> Result<(), QueueError> {
        let ix = node * nc + commodity;
        let q = backlog.q[ix];
        let left = q - amount;
        if left < -OVERDRAW_TOL * q.max(1.0) {
            return Err(QueueError::Overdrawn {
                node,
                commodity,
                outflow: amount,
                backlog: q,
            });
        }
        backlog.q[ix] = left.max(0.0);
        Ok(())
    };
    for p in &flows.processing {
        if catalog.is_final(p.commodity) {
            return Err(QueueError::ProcessedFinal {
                node: p.node,
                commodity: p.commodity,
            });
        }
        debit(p.node, p.commodity, p.amount)?;
    }
    for t in &flows.transfers {
        debit(t.from, t.commodity, t.amount)?;
    }

    for p in &flows.processing {
        let next = catalog.next_stage(p.commodity).expect("checked above");
        let scaling = catalog
            .consuming_function(p.commodity)
            .expect("non-final commodity")
            .scaling;
        backlog.q[p.node * nc + next] += scaling * p.amount;
    }
    for t in &flows.transfers {
        backlog.q[t.to * nc + t.commodity] += t.amount;
    }
    for &(node, commodity, amount) in &arrivals.entries {
        backlog.q[node * nc + commodity] += amount;
    }

    // absorb final commodities at their destinations
    for (c, com) in catalog.commodities().iter().enumerate() {
        if catalog.is_final(c) {
            let ix = com.dest * nc + c;
            let x = backlog.q[ix];
            if x != 0.0 {
                deliveries.by_commodity.push((c, x));
                backlog.q[ix] = 0.0;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Commodity, Function, Service};
    use crate::rng::{stream, StreamKind};

    fn catalog(scalings: &[f64]) -> ServiceCatalog {
        ServiceCatalog::new(vec![Service {
            name: None,
            functions: scalings
                .iter()
                .map(|&s| Function {
                    scaling: s,
                    complexity: 1.0,
                })
                .collect(),
            clients: vec![(0, 1)],
        }])
    }

    fn idx(cat: &ServiceCatalog, stage: usize) -> usize {
        cat.index_of(Commodity {
            dest: 1,
            service: 0,
            stage,
        })
        .unwrap()
    }

    #[test]
    fn capped_outflow_with_inflow_and_arrivals() {
        let cat = catalog(&[1.0]);
        let c0 = idx(&cat, 0);
        let mut q = BacklogState::new(3, cat.num_commodities());
        q.set(0, c0, 5.0);
        q.set(2, c0, 3.0);
        let flows = SlotFlows {
            transfers: vec![
                Transfer { from: 0, to: 2, commodity: c0, amount: 5.0 },
                Transfer { from: 2, to: 0, commodity: c0, amount: 3.0 },
            ],
            processing: vec![],
        };
        let arrivals = ArrivalBatch { entries: vec![(0, c0, 2.0)] };
        let mut d = Deliveries::default();
        apply_slot_update(&mut q, &flows, &arrivals, &cat, &mut d).unwrap();
        assert_eq!(q.get(0, c0), 5.0);
        assert_eq!(q.get(2, c0), 5.0);
    }

    #[test]
    fn processing_scales_into_next_stage() {
        let cat = catalog(&[1.0, 4.0]);
        let (c1, c2) = (idx(&cat, 1), idx(&cat, 2));
        let mut q = BacklogState::new(3, cat.num_commodities());
        q.set(2, c1, 10.0);
        let flows = SlotFlows {
            transfers: vec![],
            processing: vec![ProcessingFlow { node: 2, commodity: c1, amount: 10.0 }],
        };
        let mut d = Deliveries::default();
        apply_slot_update(&mut q, &flows, &ArrivalBatch::default(), &cat, &mut d).unwrap();
        assert_eq!(q.get(2, c1), 0.0);
        assert_eq!(q.get(2, c2), 40.0);
        assert!(d.by_commodity.is_empty());
    }

    #[test]
    fn final_commodity_absorbed_at_destination() {
        let cat = catalog(&[2.0]);
        let (c0, c1) = (idx(&cat, 0), idx(&cat, 1));
        let mut q = BacklogState::new(2, cat.num_commodities());
        q.set(1, c0, 3.0);
        let flows = SlotFlows {
            transfers: vec![],
            processing: vec![ProcessingFlow { node: 1, commodity: c0, amount: 3.0 }],
        };
        let mut d = Deliveries::default();
        apply_slot_update(&mut q, &flows, &ArrivalBatch::default(), &cat, &mut d).unwrap();
        assert_eq!(q.get(1, c1), 0.0);
        assert_eq!(d.by_commodity, vec![(c1, 6.0)]);
    }

    #[test]
    fn zero_flows_only_add_arrivals() {
        let cat = catalog(&[1.0]);
        let c0 = idx(&cat, 0);
        let mut q = BacklogState::new(2, cat.num_commodities());
        q.set(0, c0, 1.5);
        let arrivals = ArrivalBatch { entries: vec![(0, c0, 0.7)] };
        let mut d = Deliveries::default();
        apply_slot_update(&mut q, &SlotFlows::default(), &arrivals, &cat, &mut d).unwrap();
        assert_eq!(q.get(0, c0), 2.2);
    }

    #[test]
    fn overdraw_is_a_hard_fault() {
        let cat = catalog(&[1.0]);
        let c0 = idx(&cat, 0);
        let mut q = BacklogState::new(2, cat.num_commodities());
        q.set(0, c0, 1.0);
        let flows = SlotFlows {
            transfers: vec![Transfer { from: 0, to: 1, commodity: c0, amount: 2.0 }],
            processing: vec![],
        };
        let mut d = Deliveries::default();
        let err = apply_slot_update(&mut q, &flows, &ArrivalBatch::default(), &cat, &mut d).unwrap_err();
        assert!(matches!(err, QueueError::Overdrawn { node: 0, .. }));
    }

    #[test]
    fn arrival_models() {
        let cat = catalog(&[1.0]);
        let mut rngs = vec![stream(3, StreamKind::Arrival, 0)];
        let mut batch = ArrivalBatch::default();
        generate_arrivals(&cat, 0.0, ArrivalModel::Poisson, &mut rngs, &mut batch);
        assert_eq!(batch.total(), 0.0);
        generate_arrivals(&cat, 0.7, ArrivalModel::Deterministic, &mut rngs, &mut batch);
        assert_eq!(batch.entries, vec![(0, idx(&cat, 0), 0.7)]);
    }

    #[test]
    fn poisson_mean() {
        let cat = catalog(&[1.0]);
        let mut rngs = vec![stream(11, StreamKind::Arrival, 0)];
        let mut batch = ArrivalBatch::default();
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            generate_arrivals(&cat, 0.7, ArrivalModel::Poisson, &mut rngs, &mut batch);
            sum += batch.total();
        }
        let mean = sum / n as f64;
        assert!((0.697..=0.703).contains(&mean), "{mean}");
    }
}
