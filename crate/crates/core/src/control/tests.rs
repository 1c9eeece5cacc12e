use super::*;
use crate::channel::StatisticalCsi;
use crate::coding::PartitionStructure;
use crate::model::Scenario;
use crate::queueing::BacklogState;

/// Node 1 transmits to receivers 2.. whose links decode the single layer
/// (rate 10) with the given probabilities. One service, one function.
fn star(decode: &[f64], pr_menu: &str, tx_cost: f64) -> Scenario {
    let mut nodes = vec![format!(
        r#"{{"id": 1, "position": [0, 0], "tx_menu": [{{"cost": 0}}, {{"cost": {tx_cost}}}], "pr_menu": {pr_menu}}}"#
    )];
    let mut profiles = Vec::new();
    let mut edges = Vec::new();
    for (i, p) in decode.iter().enumerate() {
        let id = i + 2;
        nodes.push(format!(
            r#"{{"id": {id}, "position": [{id}, 1], "tx_menu": [{{"cost": 0}}, {{"cost": {tx_cost}}}], "pr_menu": {pr_menu}}}"#
        ));
        profiles.push(format!(
            r#""p{id}": {{"fading": {{"kind": "discrete", "state_probs": [{}, {p}]}}, "path_loss_exponent": 1,
               "thresholds": [1.0], "rate_table": [[0, 0], [0, 10]]}}"#,
            1.0 - p
        ));
        edges.push(format!(r#"{{"between": [1, {id}], "profile": "p{id}"}}"#));
    }
    let last = decode.len() + 1;
    let json = format!(
        r#"{{"nodes": [{}], "links": {{"profiles": {{{}}}, "default_profile": "p2", "edges": [{}], "directed": true}},
            "services": [{{"functions": [{{"scaling": 1, "complexity": 1}}], "clients": [[1, {last}]]}}],
            "control": {{"v": 10, "arrivals": {{"model": "deterministic", "rate": 1}}, "horizon": 10}}}}"#,
        nodes.join(","),
        profiles.join(","),
        edges.join(",")
    );
    Scenario::from_json_str(&json).unwrap()
}

const IDLE_PR: &str = r#"[{"cost": 0, "rate": 0}]"#;

#[test]
fn processing_weight_examples() {
    assert_eq!(processing_weight(0.0, 7.0, 4.0, 1.0), 0.0);
    assert_eq!(processing_weight(100.0, 10.0, 4.0, 1.0), 60.0);
    assert_eq!(processing_weight(10.0, 100.0, 1.0, 1.0), 0.0);
}

#[test]
fn differential_backlog_examples() {
    assert_eq!(differential_backlog(3.0, 3.0), 0.0);
    assert_eq!(differential_backlog(10.0, 4.0), 6.0);
    assert_eq!(differential_backlog(4.0, 10.0), 0.0);
}

#[test]
fn processing_decision_examples() {
    let sc = star(&[1.0], r#"[{"cost": 0, "rate": 0}, {"cost": 2, "rate": 20}]"#, 1.0);
    let csi = StatisticalCsi::from_links(&sc.network.links).unwrap();
    let ctl = Controller::new(&sc.network, &sc.catalog, &csi, CodingScheme::Broadcast, 10.0, true).unwrap();
    let mut q = BacklogState::new(2, sc.catalog.num_commodities());
    assert_eq!(ctl.processing_decision(0, &q).level, 0);

    // stage 0 backlog 1.5, stage 1 empty: W = 1.5, metric 20*1.5 - 10*2 = 10
    q.set(0, 0, 1.5);
    let d = ctl.processing_decision(0, &q);
    assert_eq!(d.level, 1);
    assert_eq!(d.commodity, Some(0));
    assert_eq!(d.rate, 20.0);
    assert_eq!(d.metric, 10.0);

    let ctl = Controller::new(&sc.network, &sc.catalog, &csi, CodingScheme::Broadcast, 1e6, true).unwrap();
    let d = ctl.processing_decision(0, &q);
    assert_eq!((d.level, d.commodity, d.rate), (0, None, 0.0));
}

#[test]
fn decode_probability_examples() {
    assert_eq!(decode_probability(0.6, [], true).unwrap(), 0.6);
    let v = decode_probability(0.5, [0.6], true).unwrap();
    assert!((v - 0.2).abs() < 1e-15);
    assert_eq!(decode_probability(0.5, [0.6], false), Err(ControlError::DependentLinks));

    // sum over the ranking is the probability that someone decodes
    let p = [0.3, 0.9, 0.45, 0.05];
    let total: f64 = (0..p.len())
        .map(|j| decode_probability(p[j], p[..j].iter().copied(), true).unwrap())
        .sum();
    let none: f64 = p.iter().map(|x| 1.0 - x).product();
    assert!((total - (1.0 - none)).abs() < 1e-15);
}

#[test]
fn transmission_weight_two_receivers() {
    let a = RateTail::new(&[0.4, 0.6], |s| [0.0, 10.0][s]);
    let b = RateTail::new(&[0.5, 0.5], |s| [0.0, 10.0][s]);
    let mut r = vec![
        ReceiverView { node: 2, weight: 3.0, tail: &b },
        ReceiverView { node: 1, weight: 5.0, tail: &a },
    ];
    rank_receivers(&mut r);
    assert_eq!(r[0].node, 1);
    let w = transmission_weight(&r, &mut Vec::new());
    assert!((w - 36.0).abs() < 1e-12);

    for x in r.iter_mut() {
        x.weight = 0.0;
    }
    assert_eq!(transmission_weight(&r, &mut Vec::new()), 0.0);
}

#[test]
fn transmission_decision_examples() {
    let sc = star(&[0.6, 0.5], IDLE_PR, 1.0);
    let csi = StatisticalCsi::from_links(&sc.network.links).unwrap();
    let nc = sc.catalog.num_commodities();
    let mut q = BacklogState::new(3, nc);
    let ctl = Controller::new(&sc.network, &sc.catalog, &csi, CodingScheme::Broadcast, 10.0, true).unwrap();
    let mut scratch = Scratch::default();
    assert_eq!(ctl.transmission_decision(0, &q, &mut scratch).commodity, None);

    q.set(0, 0, 5.0);
    q.set(2, 0, 2.0);
    assert_eq!(ctl.transmission_weight(0, 0, 0, &q), 0.0);
    assert!((ctl.transmission_weight(0, 1, 0, &q) - 36.0).abs() < 1e-12);
    let d = ctl.transmission_decision(0, &q, &mut scratch);
    assert_eq!((d.level, d.commodity), (1, Some(0)));
    assert!((d.metric - 26.0).abs() < 1e-12);

    let big = Controller::new(&sc.network, &sc.catalog, &csi, CodingScheme::Broadcast, 1e6, true).unwrap();
    let d = big.transmission_decision(0, &q, &mut scratch);
    assert_eq!((d.level, d.commodity), (0, None));
}

#[test]
fn outage_tail_uses_layer_rate_only() {
    let sc = star(&[0.6], IDLE_PR, 1.0);
    let csi = StatisticalCsi::from_links(&sc.network.links).unwrap();
    let ctl = Controller::new(&sc.network, &sc.catalog, &csi, CodingScheme::Outage, 1.0, true).unwrap();
    assert_eq!(ctl.rate_tail(0, 1).levels(), &[(10.0, 0.6)]);
    assert!(ctl.rate_tail(0, 0).levels().is_empty());
}

#[test]
fn forwarding_argmax_and_retain() {
    let parts = PartitionStructure::build(&[(1, 10.0), (2, 10.0)]);
    let w = |j: usize| [0.0, 6.0, 2.0][j];
    let f = forwarding_assignment(0, 0, &parts, &[10.0, 0.0], w);
    assert_eq!(f.holder[0], Some(1));
    assert_eq!(f.retained_by(1), 10.0);

    let f = forwarding_assignment(0, 0, &parts, &[10.0, 0.0], |_| 0.0);
    assert_eq!(f.holder[0], None);
    assert_eq!(f.kept_by_transmitter(), 10.0);

    // every receiver in outage: no capacity, nothing moves
    let parts = PartitionStructure::build(&[(1, 0.0), (2, 0.0)]);
    let mut amounts = Vec::new();
    fill_partitions(&parts, 7.0, &mut amounts);
    assert_eq!(amounts, vec![0.0, 0.0]);
    let f = forwarding_assignment(0, 0, &parts, &amounts, w);
    assert_eq!(f.retained_by(1) + f.retained_by(2), 0.0);
}

#[test]
fn forwarding_ties_go_to_smaller_index() {
    let parts = PartitionStructure::build(&[(3, 5.0), (1, 5.0)]);
    let f = forwarding_assignment(0, 0, &parts, &[5.0, 0.0], |_| 4.0);
    assert_eq!(f.holder[0], Some(1));
}

#[test]
fn fill_lowest_partition_first() {
    let parts = PartitionStructure::build(&[(1, 0.0), (2, 12.1), (3, 20.6)]);
    let mut out = Vec::new();
    fill_partitions(&parts, 15.0, &mut out);
    assert_eq!(out.len(), 3);
    assert_eq!(out[0], 0.0);
    assert_eq!(out[1], 12.1);
    assert!((out[2] - 2.9).abs() < 1e-12);
}

#[test]
fn product_formula_matches_enumeration() {
    let laws = vec![
        vec![(0.0, 0.2), (4.0, 0.5), (9.0, 0.3)],
        vec![(0.0, 0.6), (4.0, 0.1), (9.0, 0.3)],
        vec![(0.0, 0.1), (7.0, 0.9)],
    ];
    let weights = [2.0, 5.0, 3.5];
    let tails: Vec<RateTail> = laws
        .iter()
        .map(|law| RateTail::new(&law.iter().map(|x| x.1).collect::<Vec<_>>(), |s| law[s].0))
        .collect();
    let mut views: Vec<ReceiverView> = tails
        .iter()
        .enumerate()
        .map(|(j, t)| ReceiverView {
            node: j,
            weight: weights[j],
            tail: t,
        })
        .collect();
    rank_receivers(&mut views);
    let fast = transmission_weight(&views, &mut Vec::new());
    let receivers: Vec<(usize, f64)> = weights.iter().copied().enumerate().collect();
    let slow = exact::expected_weight(&receivers, &exact::independent_joint(&laws)).unwrap();
    assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
}

#[test]
fn enumeration_limited_to_three_receivers() {
    let r = vec![(0, 1.0); 4];
    assert_eq!(
        exact::expected_weight(&r, &[]),
        Err(ControlError::TooManyReceivers { max: 3, got: 4 })
    );
}

#[test]
fn dependent_links_rejected() {
    let sc = star(&[0.5], IDLE_PR, 1.0);
    let csi = StatisticalCsi::from_links(&sc.network.links).unwrap();
    let r = Controller::new(&sc.network, &sc.catalog, &csi, CodingScheme::Broadcast, 1.0, false);
    assert!(matches!(r, Err(ControlError::DependentLinks)));
}
