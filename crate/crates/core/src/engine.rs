//! The slot loop, metrics and stability detection.
//!
//! One slot runs these phases in order:
//!
//! 1. freeze `Q(t)`;
//! 2. every node picks its processing and transmission action from `Q(t)`
//!    and the statistical CSI;
//! 3. the channel is realized;
//! 4. each transmitter's partitions are built from realized rates, and the
//!    transmitted amount `min(backlog left after processing, top rate)` is
//!    filled most-widely-decoded partition first;
//! 5. each partition is handed to its forwarding holder;
//! 6. queues are updated with processing scaling, arrivals and absorption.

use serde::Serialize;
use thiserror::Error;

use crate::channel::{step_network_state, ChannelError, ChannelSnapshot, StatisticalCsi};
use crate::coding::{scheme_rate, CodingScheme, PartitionStructure};
use crate::control::{
    differential_backlog, fill_partitions, forwarding_assignment, ControlError, Controller, ProcessingDecision,
    Scratch, TransmissionDecision,
};
use crate::model::{ArrivalModel, NetworkModel, Scenario, ServiceCatalog};
use crate::queueing::{
    apply_slot_update, generate_arrivals, ArrivalBatch, BacklogState, Deliveries, ProcessingFlow, QueueError,
    SlotFlows, Transfer,
};
use crate::rng::{stream, StreamKind, StreamRng};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error("empty window: horizon {horizon} leaves no slots after warmup {warmup}")]
    EmptyWindow { horizon: u64, warmup: u64 },
    #[error("conservation breach at slot {slot}: backlog mass {actual} vs ledger {expected}")]
    Conservation { slot: u64, actual: f64, expected: f64 },
}

/// Ledger residual allowed relative to the mass that has entered so far.
const LEDGER_TOL: f64 = 1e-9;

/// Batches used for the batch-means standard error.
const BATCHES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeDecision {
    pub processing: ProcessingDecision,
    pub transmission: TransmissionDecision,
    /// Input units actually processed after capping by backlog.
    pub processed: f64,
    /// Units actually sent after capping.
    pub transmitted: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SlotTrace {
    pub t: u64,
    /// `h(t)`: sum of the chosen menu costs of every node.
    pub cost: f64,
    /// `Σ Q` after the update.
    pub occupancy: f64,
    pub delivered: f64,
    pub decisions: Vec<NodeDecision>,
}

/// One row of `trace.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: u64,
    pub cost: f64,
    pub occupancy: f64,
    pub delivered: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityVerdict {
    pub stable: bool,
    /// Least-squares occupancy slope, units per slot.
    pub slope: f64,
    /// Slope over mean arrivals per slot.
    pub normalized_slope: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeliveredRate {
    pub dest: u32,
    /// 1-based service index.
    pub service: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProcessingRate {
    pub node: u32,
    /// 1-based service index.
    pub service: usize,
    /// 1-based function index within the service.
    pub function: usize,
    /// Input units per slot fed into this function at this node.
    pub avg_rate: f64,
    /// The part of `avg_rate` destined for this very node.
    pub at_destination: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub scheme: String,
    pub v: f64,
    pub arrival_rate: f64,
    pub seed: u64,
    pub horizon: u64,
    pub warmup: u64,
    pub avg_cost: f64,
    pub cost_stderr: f64,
    pub avg_occupancy: f64,
    pub occupancy_stderr: f64,
    pub final_occupancy: f64,
    pub delivered: Vec<DeliveredRate>,
    pub processing: Vec<ProcessingRate>,
    pub stability: StabilityVerdict,
    /// Largest absolute conservation-ledger residual seen.
    pub ledger_residual: f64,
    /// Hash of every realized gain; equal across schemes under common
    /// random numbers.
    pub channel_checksum: String,
}

impl RunMetrics {
    pub fn total_delivered(&self) -> f64 {
        self.delivered.iter().map(|d| d.rate).sum()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    pub trace: Vec<TraceRow>,
}

/// Least-squares slope of `series` against its index.
pub fn ls_slope(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 2 {
        return 0.0;
    }
    let tm = (n - 1) as f64 / 2.0;
    let ym = series.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &y) in series.iter().enumerate() {
        let dt = i as f64 - tm;
        sxy += dt * (y - ym);
        sxx += dt * dt;
    }
    sxy / sxx
}

/// Fits the occupancy slope over the second half of `occupancy` and
/// calls the run unstable when it exceeds `threshold` times the arrivals
/// per slot.
pub fn stability_estimate(occupancy: &[f64], arrivals_per_slot: f64, threshold: f64) -> StabilityVerdict {
    let tail = &occupancy[occupancy.len() / 2..];
    let slope = ls_slope(tail);
    let normalized_slope = if arrivals_per_slot > 0.0 {
        slope / arrivals_per_slot
    } else if slope > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    StabilityVerdict {
        stable: normalized_slope <= threshold,
        slope,
        normalized_slope,
        threshold,
    }
}

/// Mean and batch-means standard error.
pub fn batch_means(series: &[f64], batches: usize) -> (f64, f64) {
    let n = series.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let b = batches.min(n);
    if b < 2 {
        return (mean, 0.0);
    }
    let size = n / b;
    let means: Vec<f64> = (0..b)
        .map(|k| series[k * size..(k + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let mm = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|m| (m - mm).powi(2)).sum::<f64>() / (b - 1) as f64;
    (mean, (var / b as f64).sqrt())
}

/// Fourth-moment arrival bound `A_max` for a node receiving `mean` units
/// per slot in expectation.
pub fn arrival_bound(model: ArrivalModel, mean: f64) -> f64 {
    match model {
        ArrivalModel::Deterministic => mean,
        // E[A^4] of a Poisson variable
        ArrivalModel::Poisson => (mean.powi(4) + 6.0 * mean.powi(3) + 7.0 * mean.powi(2) + mean).powf(0.25),
    }
}

/// The drift constant
/// `½·max_i {(max_{j,s} R_ij + R^pr_i/r_min)² + (max_s Σ_j R_ji + ξ_max·R^pr_i/r_min + A_i)²}`
/// at top resource levels. `a_max[i]` bounds node `i`'s arrivals.
pub fn drift_bound(
    network: &NetworkModel,
    catalog: &ServiceCatalog,
    scheme: CodingScheme,
    a_max: &[f64],
) -> f64 {
    let r_min = catalog.min_complexity();
    let xi_max = catalog.max_scaling();
    let best_rate = |l: usize| {
        let link = &network.links[l];
        let k = network.nodes[link.tx].max_tx_level();
        (0..link.num_states())
            .map(|s| scheme_rate(scheme, s, k, &link.rates, link.outage_layer))
            .fold(0.0, f64::max)
    };
    let mut worst: f64 = 0.0;
    for (i, node) in network.nodes.iter().enumerate() {
        let pr = node.pr_menu[node.max_pr_level()].rate / r_min;
        let out = network.out_links(i).iter().map(|&l| best_rate(l)).fold(0.0, f64::max);
        // links are independent, so the max of the sum is the sum of maxima
        let inflow: f64 = network.in_links(i).iter().map(|&l| best_rate(l)).sum();
        let a = a_max.get(i).copied().unwrap_or(0.0);
        worst = worst.max((out + pr).powi(2) + (inflow + xi_max * pr + a).powi(2));
    }
    0.5 * worst
}

/// [`drift_bound`] with each node's arrival bound taken from the scenario.
pub fn drift_bound_for(scenario: &Scenario) -> f64 {
    let n = scenario.network.num_nodes();
    let mut mean = vec![0.0; n];
    for c in scenario.catalog.clients() {
        mean[c.source] += scenario.control.arrival_rate;
    }
    let a: Vec<f64> = mean
        .iter()
        .map(|&m| arrival_bound(scenario.control.arrival_model, m))
        .collect();
    drift_bound(&scenario.network, &scenario.catalog, scenario.control.coding, &a)
}

/// Folds one gain into the running channel checksum.
fn mix(h: u64, x: u64) -> u64 {
    (h ^ x).wrapping_mul(0x0000_0100_0000_01b3).rotate_left(17)
}

/// Simulation state of one scenario.
pub struct Engine<'a> {
    scenario: &'a Scenario,
    controller: Controller<'a>,
    backlog: BacklogState,
    link_rngs: Vec<StreamRng>,
    arrival_rngs: Vec<StreamRng>,
    snapshot: ChannelSnapshot,
    prev: ChannelSnapshot,
    has_prev: bool,
    slot: u64,
    checksum: u64,
    ledger: f64,
    inflow_mass: f64,
    max_residual: f64,
    trace: SlotTrace,
    flows: SlotFlows,
    arrivals: ArrivalBatch,
    deliveries: Deliveries,
    parts: PartitionStructure,
    pairs: Vec<(usize, f64)>,
    amounts: Vec<f64>,
}

impl<'a> Engine<'a> {
    pub fn new(scenario: &'a Scenario) -> Result<Self, EngineError> {
        let ctl = &scenario.control;
        let csi = StatisticalCsi::from_links(&scenario.network.links)?;
        let controller = Controller::new(
            &scenario.network,
            &scenario.catalog,
            &csi,
            ctl.coding,
            ctl.v,
            ctl.independent_links,
        )?;
        let n = scenario.network.num_nodes();
        let nl = scenario.network.links.len();
        Ok(Engine {
            scenario,
            controller,
            backlog: BacklogState::new(n, scenario.catalog.num_commodities()),
            link_rngs: (0..nl as u64).map(|l| stream(ctl.seed, StreamKind::Link, l)).collect(),
            arrival_rngs: (0..scenario.catalog.clients().len() as u64)
                .map(|c| stream(ctl.seed, StreamKind::Arrival, c))
                .collect(),
            snapshot: ChannelSnapshot {
                slot: 0,
                gains: vec![0.0; nl],
                states: vec![0; nl],
            },
            prev: ChannelSnapshot {
                slot: 0,
                gains: vec![0.0; nl],
                states: vec![0; nl],
            },
            has_prev: false,
            slot: 0,
            checksum: 0xcbf2_9ce4_8422_2325,
            ledger: 0.0,
            inflow_mass: 0.0,
            max_residual: 0.0,
            trace: SlotTrace::default(),
            flows: SlotFlows::default(),
            arrivals: ArrivalBatch::default(),
            deliveries: Deliveries::default(),
            parts: PartitionStructure::default(),
            pairs: Vec::new(),
            amounts: Vec::new(),
        })
    }

    pub fn backlog(&self) -> &BacklogState {
        &self.backlog
    }

    /// Replaces the backlog, e.g. to start from a chosen state.
    pub fn set_backlog(&mut self, backlog: BacklogState) {
        self.ledger = backlog.weighted_mass(&self.scenario.catalog);
        self.inflow_mass = self.ledger;
        self.backlog = backlog;
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn channel_checksum(&self) -> u64 {
        self.checksum
    }

    /// Last realized channel.
    pub fn snapshot(&self) -> &ChannelSnapshot {
        &self.snapshot
    }

    pub fn ledger_residual(&self) -> f64 {
        self.max_residual
    }

    pub fn last_deliveries(&self) -> &Deliveries {
        &self.deliveries
    }

    /// Advances one slot.
    pub fn run_slot(&mut self) -> Result<&SlotTrace, EngineError> {
        let sc = self.scenario;
        let net = &sc.network;
        let catalog = &sc.catalog;
        let scheme = sc.control.coding;
        let n = net.num_nodes();

        // phases 1-2: decide from Q(t)
        if self.has_prev {
            self.controller.condition_on(Some(&self.prev));
        }
        self.trace.decisions.clear();
        let mut cost = 0.0;
        {
            let mut scratch = Scratch::default();
            for i in 0..n {
                let pd = self.controller.processing_decision(i, &self.backlog);
                let td = self.controller.transmission_decision(i, &self.backlog, &mut scratch);
                cost += net.nodes[i].pr_menu[pd.level].cost + net.nodes[i].tx_menu[td.level].cost;
                self.trace.decisions.push(NodeDecision {
                    processing: pd,
                    transmission: td,
                    processed: 0.0,
                    transmitted: 0.0,
                });
            }
        }

        // phase 3: channel
        std::mem::swap(&mut self.prev, &mut self.snapshot);
        let prev = if self.has_prev { Some(&self.prev) } else { None };
        step_network_state(
            self.slot,
            prev,
            &net.links,
            self.controller.csi(),
            &mut self.link_rngs,
            &mut self.snapshot,
        )?;
        self.has_prev = true;
        for &g in &self.snapshot.gains {
            self.checksum = mix(self.checksum, g.to_bits());
        }

        // phases 4-5: realize flows
        self.flows.clear();
        for i in 0..n {
            let d = &mut self.trace.decisions[i];
            let mut processed = 0.0;
            if let Some(c) = d.processing.commodity {
                processed = d.processing.rate.min(self.backlog.get(i, c));
                if processed > 0.0 {
                    self.flows.processing.push(ProcessingFlow {
                        node: i,
                        commodity: c,
                        amount: processed,
                    });
                }
                d.processed = processed;
            }
            let Some(c) = d.transmission.commodity else { continue };
            let k = d.transmission.level;
            let mut left = self.backlog.get(i, c);
            if d.processing.commodity == Some(c) {
                left -= processed;
            }
            self.pairs.clear();
            for &l in net.out_links(i) {
                let link = &net.links[l];
                self.pairs.push((
                    link.rx,
                    scheme_rate(scheme, self.snapshot.states[l], k, &link.rates, link.outage_layer),
                ));
            }
            self.parts.rebuild(&self.pairs);
            let total = left.min(self.parts.top_rate()).max(0.0);
            fill_partitions(&self.parts, total, &mut self.amounts);
            let qi = self.backlog.get(i, c);
            let backlog = &self.backlog;
            let fwd = forwarding_assignment(i, c, &self.parts, &self.amounts, |j| {
                differential_backlog(qi, backlog.get(j, c))
            });
            let mut sent = 0.0;
            for &j in self.parts.receivers() {
                let amount = fwd.retained_by(j);
                if amount > 0.0 {
                    sent += amount;
                    self.flows.transfers.push(Transfer {
                        from: i,
                        to: j,
                        commodity: c,
                        amount,
                    });
                }
            }
            d.transmitted = sent;
        }

        // phase 6: update
        generate_arrivals(
            catalog,
            sc.control.arrival_rate,
            sc.control.arrival_model,
            &mut self.arrival_rngs,
            &mut self.arrivals,
        );
        apply_slot_update(&mut self.backlog, &self.flows, &self.arrivals, catalog, &mut self.deliveries)?;

        let arrived: f64 = self
            .arrivals
            .entries
            .iter()
            .map(|&(_, c, a)| a * catalog.mass_weight(c))
            .sum();
        let delivered = self.deliveries.total();
        self.inflow_mass += arrived;
        self.ledger += arrived - delivered;
        let actual = self.backlog.weighted_mass(catalog);
        let residual = (actual - self.ledger).abs();
        self.max_residual = self.max_residual.max(residual);
        if residual > LEDGER_TOL * self.inflow_mass.max(1.0) {
            return Err(EngineError::Conservation {
                slot: self.slot,
                actual,
                expected: self.ledger,
            });
        }

        self.trace.t = self.slot;
        self.trace.cost = cost;
        self.trace.occupancy = self.backlog.total();
        self.trace.delivered = delivered;
        self.slot += 1;
        Ok(&self.trace)
    }
}

/// Runs the scenario's horizon and summarizes the window after warmup.
pub fn run_simulation(scenario: &Scenario) -> Result<RunOutput, EngineError> {
    let ctl = &scenario.control;
    let horizon = ctl.horizon;
    let warmup = ctl.warmup_slots();
    if horizon <= warmup {
        return Err(EngineError::EmptyWindow { horizon, warmup });
    }
    let catalog = &scenario.catalog;
    let net = &scenario.network;
    let nc = catalog.num_commodities();
    let window = (horizon - warmup) as usize;

    let mut engine = Engine::new(scenario)?;
    let mut costs = Vec::with_capacity(window);
    let mut occupancy = Vec::with_capacity(window);
    let mut delivered_by = vec![0.0; nc];
    let mut processed_by = vec![0.0; net.num_nodes() * nc];
    let mut trace = Vec::new();
    let stride = ctl.trace_stride;

    for t in 0..horizon {
        let slot = engine.run_slot()?;
        if stride > 0 && t % stride == 0 {
            trace.push(TraceRow {
                t,
                cost: slot.cost,
                occupancy: slot.occupancy,
                delivered: slot.delivered,
            });
        }
        if t < warmup {
            continue;
        }
        costs.push(slot.cost);
        occupancy.push(slot.occupancy);
        for (i, d) in slot.decisions.iter().enumerate() {
            if let Some(c) = d.processing.commodity {
                processed_by[i * nc + c] += d.processed;
            }
        }
        for &(c, a) in &engine.last_deliveries().by_commodity {
            delivered_by[c] += a;
        }
    }

    let w = window as f64;
    let (avg_cost, cost_stderr) = batch_means(&costs, BATCHES);
    let (avg_occupancy, occupancy_stderr) = batch_means(&occupancy, BATCHES);
    let arrivals_per_slot = ctl.arrival_rate * catalog.clients().len() as f64;
    let stability = stability_estimate(&occupancy, arrivals_per_slot, ctl.stability_threshold);

    let delivered = catalog
        .commodities()
        .iter()
        .enumerate()
        .filter(|(c, _)| catalog.is_final(*c))
        .map(|(c, com)| DeliveredRate {
            dest: net.nodes[com.dest].id,
            service: com.service + 1,
            rate: delivered_by[c] / w,
        })
        .collect();

    let mut processing = Vec::new();
    for (i, node) in net.nodes.iter().enumerate() {
        for (phi, s) in catalog.services.iter().enumerate() {
            for m in 0..s.functions.len() {
                let (mut rate, mut local) = (0.0, 0.0);
                for (c, com) in catalog.commodities().iter().enumerate() {
                    if com.service == phi && com.stage == m {
                        rate += processed_by[i * nc + c];
                        if com.dest == i {
                            local += processed_by[i * nc + c];
                        }
                    }
                }
                processing.push(ProcessingRate {
                    node: node.id,
                    service: phi + 1,
                    function: m + 1,
                    avg_rate: rate / w,
                    at_destination: local / w,
                });
            }
        }
    }

    let metrics = RunMetrics {
        scheme: ctl.coding.name().to_string(),
        v: ctl.v,
        arrival_rate: ctl.arrival_rate,
        seed: ctl.seed,
        horizon,
        warmup,
        avg_cost,
        cost_stderr,
        avg_occupancy,
        occupancy_stderr,
        final_occupancy: engine.backlog().total(),
        delivered,
        processing,
        stability,
        ledger_residual: engine.ledger_residual(),
        channel_checksum: format!("{:016x}", engine.channel_checksum()),
    };
    Ok(RunOutput { metrics, trace })
}

/// Boundary between the last stable and the first unstable point of an
/// increasing grid: their midpoint. `None` when every point is stable;
/// the first grid value when none is.
pub fn sweep_boundary(grid: &[f64], stable: &[bool]) -> Option<f64> {
    let first_bad = stable.iter().position(|s| !s)?;
    if first_bad == 0 {
        return Some(grid[0]);
    }
    Some(0.5 * (grid[first_bad - 1] + grid[first_bad]))
}
