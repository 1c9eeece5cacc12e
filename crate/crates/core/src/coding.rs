//! Superposition (broadcast-approach) layer rates, per-receiver realized
//! rates, nested decode sets, and the single-rate outage baseline.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CodingError {
    #[error("rate table is empty")]
    Empty,
    #[error("rate table rows have unequal lengths")]
    Ragged,
    #[error("rate table row k=0 must be all zeros")]
    NonzeroIdleRow,
    #[error("rate table entry (k={k}, l=0) must be zero")]
    NonzeroStateZero { k: usize },
    #[error("rate table row k={k} is not nondecreasing in l")]
    NotMonotoneInLayer { k: usize },
    #[error("rate table column l={l} is not nondecreasing in k")]
    NotMonotoneInLevel { l: usize },
    #[error("rate table contains a negative or non-finite entry")]
    Invalid,
    #[error("layer powers and thresholds have different lengths")]
    LengthMismatch,
}

/// Which physical-layer coding a transmitter uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CodingScheme {
    Broadcast,
    Outage,
}

impl CodingScheme {
    pub fn name(self) -> &'static str {
        match self {
            CodingScheme::Broadcast => "broadcast",
            CodingScheme::Outage => "outage",
        }
    }
}

impl std::str::FromStr for CodingScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "broadcast" => Ok(CodingScheme::Broadcast),
            "outage" => Ok(CodingScheme::Outage),
            other => Err(format!("unknown coding scheme `{other}`")),
        }
    }
}

/// `rows[k][l]` is the rate decodable in channel state `l` when `k`
/// transmission resource units are allocated.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRateTable {
    rows: Vec<Vec<f64>>,
}

impl LayerRateTable {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, CodingError> {
        let width = rows.first().map(Vec::len).ok_or(CodingError::Empty)?;
        if width == 0 {
            return Err(CodingError::Empty);
        }
        if rows.iter().any(|r| r.len() != width) {
            return Err(CodingError::Ragged);
        }
        if rows.iter().flatten().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(CodingError::Invalid);
        }
        if rows[0].iter().any(|&x| x != 0.0) {
            return Err(CodingError::NonzeroIdleRow);
        }
        for (k, row) in rows.iter().enumerate() {
            if row[0] != 0.0 {
                return Err(CodingError::NonzeroStateZero { k });
            }
            if row.windows(2).any(|w| w[1] < w[0]) {
                return Err(CodingError::NotMonotoneInLayer { k });
            }
        }
        for l in 0..width {
            if rows.windows(2).any(|w| w[1][l] < w[0][l]) {
                return Err(CodingError::NotMonotoneInLevel { l });
            }
        }
        Ok(LayerRateTable { rows })
    }

    /// Builds the table from per-level layer powers via [`layer_rates`].
    pub fn from_layer_powers(
        powers: &[Vec<f64>],
        thresholds: &[f64],
        log_base: Option<f64>,
    ) -> Result<Self, CodingError> {
        let rows = powers
            .iter()
            .map(|p| {
                if p.len() != thresholds.len() {
                    return Err(CodingError::LengthMismatch);
                }
                Ok(layer_rates(p, thresholds, log_base))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(rows)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Number of resource levels, `K + 1`.
    pub fn num_levels(&self) -> usize {
        self.rows.len()
    }

    /// Number of code layers `L`.
    pub fn num_layers(&self) -> usize {
        self.rows[0].len() - 1
    }

    pub fn rate(&self, k: usize, l: usize) -> f64 {
        self.rows[k][l]
    }
}

/// Cumulative decodable rate per channel state for one power split:
/// entry `l` sums `log(1 + P(l')·g(l') / (1 + g(l')·Σ_{l''>l'} P(l'')))`
/// over layers `l' ≤ l`; entry 0 is zero.
pub fn layer_rates(powers: &[f64], thresholds: &[f64], log_base: Option<f64>) -> Vec<f64> {
    assert_eq!(powers.len(), thresholds.len(), "one power per layer");
    let scale = log_base.map_or(1.0, |b| 1.0 / b.ln());
    let mut out = Vec::with_capacity(powers.len() + 1);
    out.push(0.0);
    let mut above: f64 = powers.iter().sum();
    let mut acc = 0.0;
    for (&p, &g) in powers.iter().zip(thresholds) {
        above -= p;
        // interference from undecoded upper layers
        let above = above.max(0.0);
        acc += (p * g / (1.0 + g * above)).ln_1p() * scale;
        out.push(acc);
    }
    out
}

/// Rate delivered over a link in state `l` with `k` units allocated.
pub fn realized_rate(state: usize, k: usize, table: &LayerRateTable) -> f64 {
    table.rate(k, state)
}

/// Single-rate baseline: everything at layer `outage_layer`'s rate when the
/// state reaches it, nothing otherwise.
pub fn outage_rate(state: usize, outage_layer: usize, k: usize, table: &LayerRateTable) -> f64 {
    if state >= outage_layer {
        table.rate(k, outage_layer)
    } else {
        0.0
    }
}

/// Realized rate under `scheme`.
pub fn scheme_rate(
    scheme: CodingScheme,
    state: usize,
    k: usize,
    table: &LayerRateTable,
    outage_layer: usize,
) -> f64 {
    match scheme {
        CodingScheme::Broadcast => realized_rate(state, k, table),
        CodingScheme::Outage => outage_rate(state, outage_layer, k, table),
    }
}

/// Nested decode sets of one transmission.
///
/// Receivers are ordered by non-decreasing realized rate (ties by ascending
/// node index). Partition `n` (0-based here) carries `increments[n]` units
/// per slot and is decoded exactly by `receivers[n..]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PartitionStructure {
    receivers: Vec<usize>,
    rates: Vec<f64>,
    increments: Vec<f64>,
}

impl PartitionStructure {
    /// `receivers` holds `(node, realized rate)` pairs.
    pub fn build(receivers: &[(usize, f64)]) -> Self {
        let mut p = PartitionStructure::default();
        p.rebuild(receivers);
        p
    }

    /// Same as [`build`](Self::build) but reuses the allocation.
    pub fn rebuild(&mut self, receivers: &[(usize, f64)]) {
        self.receivers.clear();
        self.rates.clear();
        self.increments.clear();
        let mut sorted = receivers.to_vec();
        sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let mut prev = 0.0;
        for (node, rate) in sorted {
            self.receivers.push(node);
            self.rates.push(rate);
            self.increments.push(rate - prev);
            prev = rate;
        }
    }

    pub fn len(&self) -> usize {
        self.receivers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.receivers.is_empty()
    }

    /// Receivers in non-decreasing rate order.
    pub fn receivers(&self) -> &[usize] {
        &self.receivers
    }

    pub fn receiver_rates(&self) -> &[f64] {
        &self.rates
    }

    /// Rate of each partition.
    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Receivers that decode partition `n`.
    pub fn decoders(&self, n: usize) -> &[usize] {
        &self.receivers[n..]
    }

    /// Rate of the best receiver, which equals the sum of all increments.
    pub fn top_rate(&self) -> f64 {
        self.rates.last().copied().unwrap_or(0.0)
    }

    /// Position of `node` in the receiver order.
    pub fn position(&self, node: usize) -> Option<usize> {
        self.receivers.iter().position(|&r| r == node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rician() -> LayerRateTable {
        LayerRateTable::new(vec![vec![0.0; 4], vec![0.0, 12.1, 20.6, 48.3]]).unwrap()
    }

    #[test]
    fn zero_powers_give_zero_rates() {
        assert_eq!(layer_rates(&[0.0, 0.0], &[0.1, 0.5], None), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn single_layer_collapses_to_log1p() {
        let r = layer_rates(&[3.0], &[0.2], None);
        assert!((r[1] - (1.0f64 + 3.0 * 0.2).ln()).abs() < 1e-15);
    }

    #[test]
    fn two_layer_reference_values() {
        // Frozen from an independent 50-digit evaluation:
        // ln(1 + 0.2/(1+0.8)) = 0.105360515657826...
        // + ln(1 + 4/(1+0))   = 1.609437912434100...
        let r = layer_rates(&[2.0, 8.0], &[0.1, 0.5], None);
        assert!((r[1] - 0.105_360_515_657_826_3).abs() < 1e-12);
        assert!((r[2] - 1.714_798_428_091_926_5).abs() < 1e-12);
    }

    #[test]
    fn log_base_rescales() {
        let e = layer_rates(&[2.0, 8.0], &[0.1, 0.5], None);
        let two = layer_rates(&[2.0, 8.0], &[0.1, 0.5], Some(2.0));
        assert!((two[2] - e[2] / 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn realized_and_outage_rates() {
        let t = rician();
        assert_eq!(realized_rate(0, 1, &t), 0.0);
        assert_eq!(realized_rate(3, 0, &t), 0.0);
        assert_eq!(realized_rate(3, 1, &t), 48.3);
        assert_eq!(outage_rate(3, 2, 1, &t), 20.6);
        assert_eq!(outage_rate(2, 2, 1, &t), 20.6);
        assert_eq!(outage_rate(1, 2, 1, &t), 0.0);
        assert_eq!(outage_rate(3, 2, 0, &t), 0.0);
    }

    #[test]
    fn table_validation() {
        assert_eq!(
            LayerRateTable::new(vec![vec![0.0, 1.0]]),
            Err(CodingError::NonzeroIdleRow)
        );
        assert_eq!(
            LayerRateTable::new(vec![vec![0.0, 0.0], vec![0.0, 2.0], vec![0.0, 1.0]]),
            Err(CodingError::NotMonotoneInLevel { l: 1 })
        );
        assert_eq!(
            LayerRateTable::new(vec![vec![0.0, 0.0, 0.0], vec![0.0, 2.0, 1.0]]),
            Err(CodingError::NotMonotoneInLayer { k: 1 })
        );
        assert_eq!(
            LayerRateTable::new(vec![vec![0.0, 0.0], vec![1.0, 2.0]]),
            Err(CodingError::NonzeroStateZero { k: 1 })
        );
    }

    #[test]
    fn partitions_of_rician_table() {
        let p = PartitionStructure::build(&[(7, 20.6), (3, 0.0), (5, 12.1)]);
        assert_eq!(p.receivers(), &[3, 5, 7]);
        let inc = p.increments();
        assert_eq!(inc[0], 0.0);
        assert!((inc[1] - 12.1).abs() < 1e-12);
        assert!((inc[2] - 8.5).abs() < 1e-12);
        assert_eq!(p.decoders(1), &[5, 7]);
        assert_eq!(p.decoders(2), &[7]);
        assert_eq!(p.top_rate(), 20.6);
    }

    #[test]
    fn silent_and_single_receiver_partitions() {
        let p = PartitionStructure::build(&[(1, 0.0), (2, 0.0)]);
        assert!(p.increments().iter().all(|&x| x == 0.0));
        let p = PartitionStructure::build(&[(4, 7.8)]);
        assert_eq!(p.increments(), &[7.8]);
    }

    #[test]
    fn ties_broken_by_node_index() {
        let p = PartitionStructure::build(&[(9, 5.0), (2, 5.0), (4, 1.0)]);
        assert_eq!(p.receivers(), &[4, 2, 9]);
        assert_eq!(p.increments(), &[1.0, 4.0, 0.0]);
    }
}
