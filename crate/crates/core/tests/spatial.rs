use castel_core::spatial::*;

fn car<'a>(f: &'a str, p: i64, t: &'a str) -> CarPos<'a> {
    CarPos { f, p, t }
}

#[test]
fn default_network_zones() {
    let rn = RoadNetwork::<f64>::default();
    assert_eq!(rn.start_zone("A").unwrap(), 60);
    assert_eq!(rn.start_zone("B").unwrap(), 40);
    assert_eq!(rn.start_zone("C").unwrap(), 20);
    assert!(rn.start_zone("T").is_err());
    assert!(rn.start_zone("Q").is_err());
    let fine = RoadNetwork::<f64> { rho: 2.0, ..Default::default() };
    assert_eq!(fine.start_zone("B").unwrap(), 80);
}

#[test]
fn routes() {
    let rn = RoadNetwork::<f64>::default();
    assert!(rn.is_route("A", "C"));
    assert!(!rn.is_route("A", "A"));
    assert!(!rn.is_route("C", "T"));
}

#[test]
fn positions_remaining_eta() {
    let rn = RoadNetwork::<f64>::default();
    assert_eq!(rn.position(car("A", 59, "C")).unwrap(), (1.0, 0.0));
    assert_eq!(rn.position(car("T", 0, "A")).unwrap(), (60.0, 0.0));
    assert_eq!(rn.position(car("C", 10, "A")).unwrap(), (60.0, 10.0));
    assert!(rn.position(car("C", 21, "A")).is_err());
    assert_eq!(rn.remaining(car("A", 59, "C")).unwrap(), 79);
    assert_eq!(rn.remaining(car("T", 0, "A")).unwrap(), 60);
    assert_eq!(rn.remaining(car("T", 60, "A")).unwrap(), 0);
    assert_eq!(rn.eta(car("T", 0, "A"), 80.0).unwrap(), 0.75);
    assert!((rn.eta(car("C", 10, "A"), 120.0).unwrap() - 70.0 / 120.0).abs() < 1e-12);
    assert!(rn.eta(car("C", 10, "A"), 0.0).is_err());
}

#[test]
fn closeness() {
    let mut rn = RoadNetwork::<f64>::default();
    assert!(rn.is_close(car("A", 5, "B"), car("A", 5, "B")).unwrap());
    assert!(rn.is_close(car("A", 1, "C"), car("T", 1, "A")).unwrap());
    rn.d_close = 1.0;
    assert!(!rn.is_close(car("A", 59, "C"), car("C", 10, "A")).unwrap());
}

#[test]
fn figure_marking_has_no_bubbles() {
    let rn = RoadNetwork::<f64> { d_close: 1.0, ..Default::default() };
    let cars = [(0, car("A", 59, "C")), (1, car("T", 0, "A")), (2, car("C", 10, "A"))];
    let g = rn.proximity_graph(&cars).unwrap();
    assert!(g.edges.is_empty());
    assert!(bubbles(&g, 2).unwrap().is_empty());
    assert!(rn.proximity_graph(&[(3, car("A", 1, "B")), (3, car("A", 2, "B"))]).is_err());
    assert!(rn.proximity_graph(&[]).unwrap().nodes.is_empty());
}

#[test]
fn chain_is_one_bubble() {
    let nodes = (0..5).map(|i| (i as u64 + 10, (i as f64, 0.0))).collect();
    let g = ProximityGraph::from_edges(nodes, vec![(0, 1), (1, 2), (2, 3), (3, 4)]);
    let b = bubbles(&g, 2).unwrap();
    assert_eq!(b.len(), 1);
    assert_eq!(b[0].members, [10, 11, 12, 13, 14]);
    assert_eq!(b[0].support.len(), 4);
    let pairs = ProximityGraph::from_edges((0..4).map(|i| (i, (0.0f32, 0.0))).collect(), vec![(0, 1), (2, 3)]);
    assert!(bubbles(&pairs, 3).unwrap().is_empty());
    assert!(bubbles(&pairs, 1).is_err());
}

#[test]
fn json_round_trip() {
    let rn = RoadNetwork::<f64>::default();
    let text = serde_json::to_string(&rn).unwrap();
    let back: RoadNetwork<f64> = serde_json::from_str(&text).unwrap();
    assert_eq!(rn, back);
    let bad: RoadNetwork<f64> = serde_json::from_str(
        r#"{"points": {"A": [0, 0], "T": [0, 0]}, "hub": "T", "exits": ["A"]}"#,
    )
    .unwrap();
    assert!(bad.validate().is_err());
}

use std::collections::BTreeSet;

use proptest::prelude::*;

/// Any valid (f, p, t) on the default network at resolution `rho`.
fn any_car(rho: i64) -> impl Strategy<Value = (&'static str, i64, &'static str)> {
    let legs = [("A", 60), ("B", 40), ("C", 20)];
    (0usize..3, 0usize..3, any::<bool>(), 0i64..=60 * rho).prop_filter_map("route", move |(a, b, inbound, p)| {
        if a == b {
            return None;
        }
        let (f, fz) = legs[a];
        let (t, tz) = legs[b];
        if inbound {
            (p <= fz * rho).then_some((f, p, t))
        } else {
            (p <= tz * rho).then_some(("T", p, t))
        }
    })
}

/// Components of size >= k by repeated neighbourhood closure.
fn closure_components(n: usize, edges: &[(usize, usize)], k: usize) -> BTreeSet<Vec<usize>> {
    let mut seen = vec![false; n];
    let mut out = BTreeSet::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut comp = BTreeSet::from([s]);
        loop {
            let grown: BTreeSet<usize> = comp
                .iter()
                .copied()
                .chain(edges.iter().filter(|(a, b)| comp.contains(a) || comp.contains(b)).flat_map(|&(a, b)| [a, b]))
                .collect();
            if grown.len() == comp.len() {
                break;
            }
            comp = grown;
        }
        for &i in &comp {
            seen[i] = true;
        }
        if comp.len() >= k {
            out.insert(comp.into_iter().collect());
        }
    }
    out
}

proptest! {
    #[test]
    fn closeness_is_symmetric(a in any_car(1), b in any_car(1), d in 0.0f64..10.0) {
        let rn = RoadNetwork::<f64> { d_close: d, ..Default::default() };
        let (x, y) = (car(a.0, a.1, a.2), car(b.0, b.1, b.2));
        prop_assert_eq!(rn.is_close(x, y).unwrap(), rn.is_close(y, x).unwrap());
        prop_assert!(rn.is_close(x, x).unwrap());
    }

    #[test]
    fn positions_are_injective_per_leg_and_zone(rho in 1i64..4, a in any_car(3), b in any_car(3)) {
        let rn = RoadNetwork::<f64> { rho: rho as f64, ..Default::default() };
        let (x, y) = (car(a.0, a.1, a.2), car(b.0, b.1, b.2));
        if let (Ok(px), Ok(py)) = (rn.position(x), rn.position(y)) {
            let leg = |c: CarPos| if c.f == "T" { c.t.to_string() } else { c.f.to_string() };
            let same_place = (x.p == 0 && y.p == 0) || (leg(x) == leg(y) && x.p == y.p);
            prop_assert_eq!(px == py, same_place);
        }
    }

    #[test]
    fn eta_order_is_scale_invariant(a in any_car(1), b in any_car(1), va in 1i64..200, vb in 1i64..200, c in 1i64..50) {
        let rn = RoadNetwork::<f64>::default();
        let (x, y) = (car(a.0, a.1, a.2), car(b.0, b.1, b.2));
        let before = rn.eta(x, va as f64).unwrap() < rn.eta(y, vb as f64).unwrap();
        let after = rn.eta(x, (va * c) as f64).unwrap() < rn.eta(y, (vb * c) as f64).unwrap();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn bubbles_match_closure_oracle(n in 1usize..=12, raw in proptest::collection::vec((0usize..12, 0usize..12), 0..30), k in 2usize..=13) {
        let edges: Vec<(usize, usize)> = raw.into_iter().filter(|(a, b)| a < b && *b < n).collect();
        let nodes = (0..n).map(|i| (i as u64, (i as f64, 0.0))).collect();
        let g = ProximityGraph::from_edges(nodes, edges.clone());
        let got: BTreeSet<Vec<usize>> = bubbles(&g, k)
            .unwrap()
            .into_iter()
            .map(|b| b.members.iter().map(|&m| m as usize).collect())
            .collect();
        prop_assert_eq!(got, closure_components(n, &edges, k));
    }
}
