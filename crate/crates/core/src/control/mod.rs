//! The per-node DWCNC controller.
//!
//! Every node decides from the slot-start backlogs `Q(t)` alone:
//!
//! * **Processing.** For each non-final commodity the *processing utility
//!   weight* `W = [Q^(m) − ξ^(m+1)·Q^(m+1)]^+ / r^(m+1)` measures congestion
//!   relief per operation. The node picks the level `k` and commodity that
//!   maximize `R_k·W − V·w^pr_k` and feeds `R_k / r^(m+1)` units into the
//!   function.
//! * **Transmission.** For each commodity the receivers are ranked by
//!   differential backlog `W_ij = [Q_i − Q_j]^+`. With independent links,
//!   the probability that receiver `j` is the best-ranked decoder of rate
//!   level `x` is `P(R_ij ≥ x)·Π_{v ranked above j} P(R_iv < x)`; the
//!   *transmission utility weight* is the expected best decodable
//!   backpressure integrated over rate levels. The node maximizes
//!   `W_tr − V·w^tr_k` and stays silent when `k = 0` wins.
//! * **Forwarding.** After feedback each partition of the transmission is
//!   handed to the decoder with the largest positive `W_ij`; if none is
//!   positive the transmitter keeps it.
//!
//! Ties are broken deterministically: smaller `k`, then lexicographically
//! smaller commodity, then smaller node index.

use thiserror::Error;

use crate::channel::{ChannelSnapshot, StatisticalCsi};
use crate::coding::{scheme_rate, CodingScheme, PartitionStructure};
use crate::model::{NetworkModel, ServiceCatalog};
use crate::queueing::BacklogState;

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("link independence is not assumed; use the joint-state enumeration path")]
    DependentLinks,
    #[error("joint-state enumeration is limited to {max} receivers, got {got}")]
    TooManyReceivers { max: usize, got: usize },
}

/// `[Q^(m) − ξ^(m+1)·Q^(m+1)]^+ / r^(m+1)`.
pub fn processing_weight(q_input: f64, q_output: f64, scaling: f64, complexity: f64) -> f64 {
    (q_input - scaling * q_output).max(0.0) / complexity
}

/// `[Q_i − Q_j]^+`.
#[inline]
pub fn differential_backlog(q_i: f64, q_j: f64) -> f64 {
    (q_i - q_j).max(0.0)
}

/// Probability that a receiver decodes rate level `x` and no receiver
/// ranked above it does, given independent links.
///
/// `reach` is `P(R_ij ≥ x)`; `competitors` yields `P(R_iv ≥ x)` for every
/// receiver ranked strictly ahead.
pub fn decode_probability(
    reach: f64,
    competitors: impl IntoIterator<Item = f64>,
    independent_links: bool,
) -> Result<f64, ControlError> {
    if !independent_links {
        return Err(ControlError::DependentLinks);
    }
    Ok(competitors.into_iter().fold(reach, |acc, p| acc * (1.0 - p)))
}

/// Law of a link's realized rate at one resource level: distinct positive
/// rates in ascending order with `P(R ≥ rate)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RateTail {
    levels: Vec<(f64, f64)>,
}

impl RateTail {
    /// From a state law and the realized rate of each state.
    pub fn new(state_probs: &[f64], rate_of_state: impl Fn(usize) -> f64) -> Self {
        let mut pairs: Vec<(f64, f64)> = state_probs
            .iter()
            .enumerate()
            .map(|(s, &p)| (rate_of_state(s), p))
            .filter(|&(r, _)| r > 0.0)
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut levels: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
        for (r, p) in pairs {
            match levels.last_mut() {
                Some(last) if last.0 == r => last.1 += p,
                _ => levels.push((r, p)),
            }
        }
        // point masses -> tail probabilities
        let mut acc = 0.0;
        for lv in levels.iter_mut().rev() {
            acc += lv.1;
            lv.1 = acc.min(1.0);
        }
        RateTail { levels }
    }

    pub fn levels(&self) -> &[(f64, f64)] {
        &self.levels
    }

    /// `P(R ≥ x)` for `x > 0`.
    #[inline]
    pub fn prob_at_least(&self, x: f64) -> f64 {
        for &(r, p) in &self.levels {
            if r >= x {
                return p;
            }
        }
        0.0
    }

    pub fn max_rate(&self) -> f64 {
        self.levels.last().map_or(0.0, |l| l.0)
    }
}

/// A candidate receiver as seen by the transmitter before transmission.
#[derive(Debug, Clone, Copy)]
pub struct ReceiverView<'a> {
    pub node: usize,
    /// Differential backlog `W_ij`.
    pub weight: f64,
    pub tail: &'a RateTail,
}

/// Sorts receivers by non-increasing weight, ties by ascending node index.
pub fn rank_receivers(receivers: &mut [ReceiverView<'_>]) {
    receivers.sort_by(|a, b| b.weight.total_cmp(&a.weight).then(a.node.cmp(&b.node)));
}

/// Expected best decodable backpressure of one transmission:
/// `Σ_q (x_q − x_{q−1}) Σ_j W_j φ_j(x_q)` over the distinct rate levels
/// `x_q`. Receivers must already be ranked with [`rank_receivers`].
pub fn transmission_weight(ranked: &[ReceiverView<'_>], levels_buf: &mut Vec<f64>) -> f64 {
    levels_buf.clear();
    for r in ranked.iter().filter(|r| r.weight > 0.0) {
        levels_buf.extend(r.tail.levels().iter().map(|l| l.0));
    }
    if levels_buf.is_empty() {
        return 0.0;
    }
    levels_buf.sort_by(f64::total_cmp);
    levels_buf.dedup();
    let mut total = 0.0;
    let mut prev = 0.0;
    for &x in levels_buf.iter() {
        let mut survive = 1.0;
        let mut expected = 0.0;
        for r in ranked {
            if r.weight <= 0.0 {
                break;
            }
            let p = r.tail.prob_at_least(x);
            expected += r.weight * p * survive;
            survive *= 1.0 - p;
        }
        total += (x - prev) * expected;
        prev = x;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessingDecision {
    pub node: usize,
    pub level: usize,
    /// Input commodity fed to the next function; `None` when idle.
    pub commodity: Option<usize>,
    /// Assigned input rate `R_k / r^(m+1)` (before capping by backlog).
    pub rate: f64,
    pub metric: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransmissionDecision {
    pub node: usize,
    pub level: usize,
    /// `None` when silent.
    pub commodity: Option<usize>,
    pub metric: f64,
}

/// Who keeps each partition of one transmission after feedback.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForwardingAssignment {
    pub tx: usize,
    pub commodity: usize,
    /// Receiver responsible for partition `n`, or `None` when the
    /// transmitter retains it.
    pub holder: Vec<Option<usize>>,
    /// Units placed in partition `n`.
    pub amounts: Vec<f64>,
}

impl ForwardingAssignment {
    /// Units of the commodity retained by `node`: `Σ_n` over partitions it
    /// was assigned.
    pub fn retained_by(&self, node: usize) -> f64 {
        self.holder
            .iter()
            .zip(&self.amounts)
            .filter(|(h, _)| **h == Some(node))
            .map(|(_, a)| a)
            .sum()
    }

    /// Units that stay at the transmitter.
    pub fn kept_by_transmitter(&self) -> f64 {
        self.holder
            .iter()
            .zip(&self.amounts)
            .filter(|(h, _)| h.is_none())
            .map(|(_, a)| a)
            .sum()
    }
}

/// Assigns each partition to the decoder with the largest positive
/// differential backlog (ties: smaller node index), else to the
/// transmitter. `weight_of(j)` returns `W_ij` for the transmitted commodity.
pub fn forwarding_assignment(
    tx: usize,
    commodity: usize,
    partitions: &PartitionStructure,
    amounts: &[f64],
    weight_of: impl Fn(usize) -> f64,
) -> ForwardingAssignment {
    let mut holder = Vec::with_capacity(partitions.len());
    for (n, &amount) in amounts.iter().enumerate().take(partitions.len()) {
        if amount <= 0.0 {
            holder.push(None);
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for &j in partitions.decoders(n) {
            let w = weight_of(j);
            if w > 0.0 {
                match best {
                    Some((bj, bw)) if w < bw || (w == bw && j > bj) => {}
                    _ => best = Some((j, w)),
                }
            }
        }
        holder.push(best.map(|b| b.0));
    }
    ForwardingAssignment {
        tx,
        commodity,
        holder,
        amounts: amounts[..partitions.len().min(amounts.len())].to_vec(),
    }
}

/// Fills `total` units into partitions, most widely decoded first.
pub fn fill_partitions(partitions: &PartitionStructure, total: f64, out: &mut Vec<f64>) {
    out.clear();
    let mut left = total;
    for &cap in partitions.increments() {
        let take = left.min(cap).max(0.0);
        out.push(take);
        left -= take;
    }
}

/// Decision logic bound to one network and coding scheme.
#[derive(Debug, Clone)]
pub struct Controller<'a> {
    network: &'a NetworkModel,
    catalog: &'a ServiceCatalog,
    csi: StatisticalCsi,
    scheme: CodingScheme,
    v: f64,
    /// `tails[link][k]` under the current conditioning.
    tails: Vec<Vec<RateTail>>,
    /// `grids[node][k]`: tails of every outgoing link on one shared grid.
    grids: Vec<Vec<TailGrid>>,
    has_markov: bool,
}

/// Tail probabilities of a transmitter's outgoing links, sampled at the
/// union of their rate levels. Row `pos` belongs to `out_links(node)[pos]`.
#[derive(Debug, Clone, Default)]
struct TailGrid {
    levels: Vec<f64>,
    probs: Vec<f64>,
    /// `∫ P(some link reaches x) dx`; times the largest weight it bounds
    /// the transmission weight.
    reach: f64,
}

impl TailGrid {
    fn build(tails: &[&RateTail]) -> Self {
        let mut levels: Vec<f64> = tails.iter().flat_map(|t| t.levels().iter().map(|l| l.0)).collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let mut probs = Vec::with_capacity(levels.len() * tails.len());
        for t in tails {
            probs.extend(levels.iter().map(|&x| t.prob_at_least(x)));
        }
        let mut reach = 0.0;
        let mut prev = 0.0;
        for (q, &x) in levels.iter().enumerate() {
            let miss: f64 = (0..tails.len()).map(|r| 1.0 - probs[r * levels.len() + q]).product();
            reach += (x - prev) * (1.0 - miss);
            prev = x;
        }
        TailGrid { levels, probs, reach }
    }

    fn row(&self, pos: usize) -> &[f64] {
        let n = self.levels.len();
        &self.probs[pos * n..(pos + 1) * n]
    }
}

/// Scratch space reused across decisions.
#[derive(Debug, Default)]
pub struct Scratch<'a> {
    receivers: Vec<ReceiverView<'a>>,
    levels: Vec<f64>,
    /// `(out-link position, weight)` ranked.
    ranked: Vec<(usize, usize, f64)>,
    order: Vec<(usize, f64)>,
    /// Smallest receiver backlog per commodity.
    floor: Vec<f64>,
    rows: Vec<&'a [f64]>,
}

impl<'a> Controller<'a> {
    pub fn new(
        network: &'a NetworkModel,
        catalog: &'a ServiceCatalog,
        csi: &StatisticalCsi,
        scheme: CodingScheme,
        v: f64,
        independent_links: bool,
    ) -> Result<Self, ControlError> {
        if !independent_links {
            return Err(ControlError::DependentLinks);
        }
        let mut c = Controller {
            network,
            catalog,
            csi: csi.clone(),
            scheme,
            v,
            tails: Vec::new(),
            grids: Vec::new(),
            has_markov: csi.has_markov_links(),
        };
        c.condition_on(None);
        Ok(c)
    }

    pub fn scheme(&self) -> CodingScheme {
        self.scheme
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn csi(&self) -> &StatisticalCsi {
        &self.csi
    }

    /// Recomputes rate laws given last slot's fed-back states. Only Markov
    /// links change.
    pub fn condition_on(&mut self, prev: Option<&ChannelSnapshot>) {
        if !self.tails.is_empty() && !self.has_markov {
            return;
        }
        let scheme = self.scheme;
        self.tails = self
            .network
            .links
            .iter()
            .enumerate()
            .map(|(li, link)| {
                let law = self.csi.links[li].conditional(prev.map(|p| p.states[li]));
                (0..link.rates.num_levels())
                    .map(|k| RateTail::new(law, |s| scheme_rate(scheme, s, k, &link.rates, link.outage_layer)))
                    .collect()
            })
            .collect();
        let tails = &self.tails;
        self.grids = (0..self.network.num_nodes())
            .map(|i| {
                let out = self.network.out_links(i);
                (0..self.network.nodes[i].tx_menu.len())
                    .map(|k| {
                        let rows: Vec<&RateTail> = out.iter().filter_map(|&l| tails[l].get(k)).collect();
                        if rows.len() == out.len() {
                            TailGrid::build(&rows)
                        } else {
                            TailGrid::default()
                        }
                    })
                    .collect()
            })
            .collect();
    }

    pub fn rate_tail(&self, link: usize, k: usize) -> &RateTail {
        &self.tails[link][k]
    }

    pub fn processing_decision(&self, node: usize, backlog: &BacklogState) -> ProcessingDecision {
        let q = backlog.node(node);
        // best weight first; ties keep the smaller commodity
        let mut best_c: Option<(usize, f64, f64)> = None;
        for c in 0..self.catalog.num_commodities() {
            let Some(next) = self.catalog.next_stage(c) else { continue };
            let f = self.catalog.consuming_function(c).expect("non-final");
            let w = processing_weight(q[c], q[next], f.scaling, f.complexity);
            if w > 0.0 && best_c.is_none_or(|(_, bw, _)| w > bw) {
                best_c = Some((c, w, f.complexity));
            }
        }
        let mut decision = ProcessingDecision {
            node,
            level: 0,
            commodity: None,
            rate: 0.0,
            metric: 0.0,
        };
        let Some((c, w, complexity)) = best_c else {
            return decision;
        };
        for (k, level) in self.network.nodes[node].pr_menu.iter().enumerate().skip(1) {
            let metric = level.rate * w - self.v * level.cost;
            if metric > decision.metric {
                decision = ProcessingDecision {
                    node,
                    level: k,
                    commodity: Some(c),
                    rate: level.rate / complexity,
                    metric,
                };
            }
        }
        decision
    }

    /// `W_{i,k,tr}` of one commodity.
    pub fn transmission_weight(&self, node: usize, k: usize, commodity: usize, backlog: &BacklogState) -> f64 {
        let mut scratch = Scratch::default();
        self.collect_receivers(node, k, commodity, backlog, &mut scratch);
        transmission_weight(&scratch.receivers, &mut scratch.levels)
    }

    fn collect_receivers<'s>(
        &'s self,
        node: usize,
        k: usize,
        commodity: usize,
        backlog: &BacklogState,
        scratch: &mut Scratch<'s>,
    ) {
        scratch.receivers.clear();
        let qi = backlog.get(node, commodity);
        for &l in self.network.out_links(node) {
            let j = self.network.links[l].rx;
            let w = differential_backlog(qi, backlog.get(j, commodity));
            if w > 0.0 {
                scratch.receivers.push(ReceiverView {
                    node: j,
                    weight: w,
                    tail: &self.tails[l][k],
                });
            }
        }
        rank_receivers(&mut scratch.receivers);
    }

    pub fn transmission_decision<'s>(
        &'s self,
        node: usize,
        backlog: &BacklogState,
        scratch: &mut Scratch<'s>,
    ) -> TransmissionDecision {
        let mut best = TransmissionDecision {
            node,
            level: 0,
            commodity: None,
            metric: 0.0,
        };
        let menu = &self.network.nodes[node].tx_menu;
        if menu.len() < 2 || self.network.out_links(node).is_empty() {
            return best;
        }
        let q = backlog.node(node);
        let out = self.network.out_links(node);
        // largest differential backlog bounds every W_tr of a commodity;
        // visiting big bounds first lets the rest be pruned
        let nc = self.catalog.num_commodities();
        scratch.floor.clear();
        scratch.floor.resize(nc, f64::INFINITY);
        for &l in out {
            let qj = backlog.node(self.network.links[l].rx);
            for (f, &v) in scratch.floor.iter_mut().zip(qj) {
                *f = f.min(v);
            }
        }
        scratch.order.clear();
        for c in 0..nc {
            let max_w = differential_backlog(q[c], scratch.floor[c]);
            if max_w > 0.0 {
                scratch.order.push((c, max_w));
            }
        }
        if let Some(top) = (0..scratch.order.len()).reduce(|a, b| if scratch.order[b].1 > scratch.order[a].1 { b } else { a }) {
            scratch.order.swap(0, top);
        }
        for oi in 0..scratch.order.len() {
            let (c, max_w) = scratch.order[oi];
            let mut sorted = false;
            for k in 1..menu.len() {
                let cost = self.v * menu[k].cost;
                let grid = &self.grids[node][k];
                // slack absorbs rounding between the bound and the exact sum
                let bound = grid.reach * max_w * (1.0 + 1e-12) - cost;
                if bound <= 0.0
                    || bound < best.metric
                    || (bound == best.metric && better(best.level, best.commodity, k, Some(c)))
                {
                    continue;
                }
                if !sorted {
                    scratch.ranked.clear();
                    for (pos, &l) in out.iter().enumerate() {
                        let j = self.network.links[l].rx;
                        let w = differential_backlog(q[c], backlog.get(j, c));
                        if w > 0.0 {
                            scratch.ranked.push((pos, j, w));
                        }
                    }
                    scratch.ranked.sort_unstable_by(|a, b| b.2.total_cmp(&a.2).then(a.1.cmp(&b.1)));
                    sorted = true;
                }
                scratch.rows.clear();
                scratch.rows.extend(scratch.ranked.iter().map(|&(pos, _, _)| grid.row(pos)));
                let w = grid_weight(&grid.levels, &scratch.ranked, &scratch.rows);
                let metric = w - cost;
                if metric > best.metric || (metric == best.metric && better(k, Some(c), best.level, best.commodity)) {
                    best = TransmissionDecision {
                        node,
                        level: k,
                        commodity: Some(c),
                        metric,
                    };
                }
            }
        }
        if best.level == 0 {
            best.commodity = None;
        }
        best
    }
}

/// [`transmission_weight`] on a precomputed grid. Extra breakpoints where
/// no receiver's tail changes leave the sum unchanged.
fn grid_weight(levels: &[f64], ranked: &[(usize, usize, f64)], rows: &[&[f64]]) -> f64 {
    let mut total = 0.0;
    let mut prev = 0.0;
    for (q, &x) in levels.iter().enumerate() {
        let mut survive = 1.0;
        let mut expected = 0.0;
        for (r, row) in ranked.iter().zip(rows) {
            let p = row[q];
            expected += r.2 * p * survive;
            survive *= 1.0 - p;
        }
        if expected == 0.0 {
            break;
        }
        total += (x - prev) * expected;
        prev = x;
    }
    total
}

/// True when `(k1, c1)` precedes `(k2, c2)` in the tie-breaking order.
fn better(k1: usize, c1: Option<usize>, k2: usize, c2: Option<usize>) -> bool {
    (k1, c1.map_or(0, |c| c + 1)) < (k2, c2.map_or(0, |c| c + 1))
}

/// Joint-state enumeration of the expected transmission utility weight, for
/// small receiver sets and arbitrary (possibly dependent) joint laws. Used
/// as an independent check of the product formula.
pub mod exact {
    use super::ControlError;
    use crate::coding::PartitionStructure;

    pub const MAX_RECEIVERS: usize = 3;

    /// `E[Σ_n ΔR_n(s)·max_{j∈Ω_n(s)} W_j]` over `joint`, a list of
    /// `(realized rate per receiver, probability)`.
    pub fn expected_weight(
        receivers: &[(usize, f64)],
        joint: &[(Vec<f64>, f64)],
    ) -> Result<f64, ControlError> {
        if receivers.len() > MAX_RECEIVERS {
            return Err(ControlError::TooManyReceivers {
                max: MAX_RECEIVERS,
                got: receivers.len(),
            });
        }
        let mut total = 0.0;
        for (rates, p) in joint {
            let pairs: Vec<(usize, f64)> = receivers.iter().map(|r| r.0).zip(rates.iter().copied()).collect();
            let parts = PartitionStructure::build(&pairs);
            let w_of = |node: usize| receivers.iter().find(|r| r.0 == node).map_or(0.0, |r| r.1.max(0.0));
            let mut value = 0.0;
            for (n, inc) in parts.increments().iter().enumerate() {
                let best = parts.decoders(n).iter().map(|&j| w_of(j)).fold(0.0, f64::max);
                value += inc * best;
            }
            total += p * value;
        }
        Ok(total)
    }

    /// Product law of independent receivers; each law lists
    /// `(rate, probability)` outcomes.
    pub fn independent_joint(laws: &[Vec<(f64, f64)>]) -> Vec<(Vec<f64>, f64)> {
        let mut out = vec![(Vec::new(), 1.0)];
        for law in laws {
            let mut next = Vec::with_capacity(out.len() * law.len());
            for (rates, p) in &out {
                for &(r, q) in law {
                    let mut v = rates.clone();
                    v.push(r);
                    next.push((v, p * q));
                }
            }
            out = next;
        }
        out
    }

    /// Best value of `Σ_n amount_n·W_{holder(n)}` over every single-copy
    /// assignment (each partition to one decoder or kept, worth 0).
    pub fn best_assignment_value(parts: &PartitionStructure, amounts: &[f64], weight_of: impl Fn(usize) -> f64) -> f64 {
        let mut total = 0.0;
        for (n, &a) in amounts.iter().enumerate() {
            let mut best: f64 = 0.0;
            // enumerate every option explicitly, including "keep"
            for &j in parts.decoders(n) {
                best = best.max(weight_of(j));
            }
            total += a * best;
        }
        total
    }
}

#[cfg(test)]
mod tests;
