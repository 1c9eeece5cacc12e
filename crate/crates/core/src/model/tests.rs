use super::*;

const PAPER: &str = include_str!("../../../../configs/paper_11node.json");
const TWO_NODE: &str = include_str!("../../../../configs/tiny_two_node.json");

fn over(text: &str, o: &[&str]) -> Result<Scenario, ConfigError> {
    let o: Vec<String> = o.iter().map(|s| s.to_string()).collect();
    load_config_str(text, &o)
}

#[test]
fn paper_config_loads() {
    let sc = Scenario::from_json_str(PAPER).unwrap();
    assert_eq!(sc.network.num_nodes(), 11);
    assert_eq!(sc.catalog.services.len(), 2);
    for s in &sc.catalog.services {
        assert_eq!(s.clients.len(), 56);
        assert_eq!(s.num_functions(), 2);
    }
    assert_eq!(sc.catalog.num_commodities(), 48);
    let aps: Vec<u32> = sc
        .network
        .nodes
        .iter()
        .filter(|n| n.role == Role::AccessPoint)
        .map(|n| n.id)
        .collect();
    assert_eq!(aps, vec![1, 6, 7]);
    let ap = &sc.network.nodes[0];
    assert_eq!(ap.pr_menu.len(), 5);
    assert_eq!((ap.pr_menu[3].cost, ap.pr_menu[3].rate), (3.0, 60.0));
    let ue = &sc.network.nodes[1];
    assert_eq!(ue.pr_menu.len(), 2);
    assert_eq!((ue.pr_menu[1].cost, ue.pr_menu[1].rate), (2.0, 20.0));
}

#[test]
fn paper_links_follow_the_adjacency_rule() {
    // an edge exists exactly when the mean gain clears the lowest threshold
    // of the link's class
    let sc = Scenario::from_json_str(PAPER).unwrap();
    let net = &sc.network;
    for i in 0..11 {
        for j in 0..11 {
            if i == j {
                continue;
            }
            let ap = |k: usize| net.nodes[k].role == Role::AccessPoint;
            let (x0, y0) = net.nodes[i].position;
            let (x1, y1) = net.nodes[j].position;
            let d = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
            let lowest = if ap(i) && ap(j) { -46.82 } else { -43.02 };
            let expect = linear_to_db(d.powf(-3.0)) >= lowest;
            match net.link_between(i, j) {
                Some(l) => {
                    assert!(expect, "{} -> {}", net.nodes[i].id, net.nodes[j].id);
                    let link = &net.links[l];
                    let rician = matches!(link.fading, crate::channel::Fading::Rician { .. });
                    assert_eq!(rician, ap(i) && ap(j));
                    assert_eq!(link.outage_layer, 2);
                }
                None => assert!(!expect, "{} -> {}", net.nodes[i].id, net.nodes[j].id),
            }
        }
    }
    assert_eq!(net.links.len(), 70);
}

#[test]
fn rate_tables_are_verbatim() {
    let sc = Scenario::from_json_str(PAPER).unwrap();
    let net = &sc.network;
    let los = &net.links[net.link_between(0, 5).unwrap()];
    assert_eq!(los.rates.rows()[1], vec![0.0, 12.1, 20.6, 48.3]);
    let nlos = &net.links[net.link_between(0, 1).unwrap()];
    assert_eq!(nlos.rates.rows()[1], vec![0.0, 7.8, 13.1, 27.8]);
    assert!((linear_to_db(nlos.thresholds[1]) + 38.37).abs() < 1e-9);
}

#[test]
fn round_trip_is_identity() {
    for text in [PAPER, TWO_NODE] {
        let a = Scenario::from_json_str(text).unwrap();
        let b = Scenario::from_json_str(&a.to_json()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
    }
}

#[test]
fn no_services_is_an_error() {
    let e = over(TWO_NODE, &["services=[]"]).unwrap_err();
    assert!(e.to_string().contains("no services"), "{e}");
}

#[test]
fn client_with_same_endpoints_is_an_error() {
    let e = over(TWO_NODE, &["services.0.clients=[[1,1]]"]).unwrap_err();
    assert!(matches!(e, ConfigError::Invariant { ty: "Service", .. }), "{e}");
}

#[test]
fn service_without_clients_has_no_commodities() {
    let sc = over(TWO_NODE, &["services.0.clients=[]"]).unwrap();
    assert_eq!(sc.catalog.num_commodities(), 0);
}

#[test]
fn commodities_enumerate_stages() {
    let s = Service {
        name: None,
        functions: vec![
            Function {
                scaling: 1.0,
                complexity: 1.0
            };
            2
        ],
        clients: vec![(0, 4), (1, 4)],
    };
    let c = enumerate_commodities(&[s]);
    assert_eq!(c.len(), 3);
    for (m, com) in c.iter().enumerate() {
        assert_eq!((com.dest, com.service, com.stage), (4, 0, m));
    }
}

#[test]
fn mass_weights_multiply_remaining_scalings() {
    let sc = Scenario::from_json_str(PAPER).unwrap();
    let cat = &sc.catalog;
    let w: Vec<f64> = (0..3).map(|m| cat.mass_weight(m)).collect();
    // first destination, first service: factors 1 then 4
    assert_eq!(w, vec![4.0, 4.0, 1.0]);
}

#[test]
fn schema_errors_name_the_path() {
    let e = over(TWO_NODE, &["nodes.0.tx_menu.1.cost=\"high\""]).unwrap_err();
    match e {
        ConfigError::Schema { path, .. } => assert_eq!(path, "nodes[0].tx_menu[1].cost"),
        other => panic!("{other}"),
    }
    let e = over(TWO_NODE, &["control.speed=3"]).unwrap_err();
    assert!(matches!(e, ConfigError::Schema { .. }), "{e}");
}

#[test]
fn overrides_edit_values() {
    let sc = over(TWO_NODE, &["control.V=0", "control.arrivals.rate=2.5", "control.coding=outage"]).unwrap();
    assert_eq!(sc.control.v, 0.0);
    assert_eq!(sc.control.arrival_rate, 2.5);
    assert_eq!(sc.control.coding, CodingScheme::Outage);
    assert!(matches!(
        over(TWO_NODE, &["control"]),
        Err(ConfigError::Override { .. })
    ));
    assert!(matches!(
        over(TWO_NODE, &["nodes.7.id=3"]),
        Err(ConfigError::Override { .. })
    ));
}

#[test]
fn menus_are_validated() {
    assert!(over(TWO_NODE, &["nodes.0.pr_menu.0.cost=1"]).is_err());
    assert!(over(TWO_NODE, &["nodes.0.pr_menu.1.rate=-1"]).is_err());
    assert!(over(TWO_NODE, &["links.profiles.fixed.thresholds=[0.5, 0.4]"]).is_err());
    assert!(over(TWO_NODE, &["links.profiles.fixed.fading.state_probs=[0.5, 0.6]"]).is_err());
    assert!(over(TWO_NODE, &["nodes.1.position=[0, 0]"]).is_err());
}

#[test]
fn db_conversion_round_trips() {
    assert!((db_to_linear(-30.0) - 1e-3).abs() < 1e-18);
    assert!((linear_to_db(db_to_linear(-38.37)) + 38.37).abs() < 1e-12);
}
