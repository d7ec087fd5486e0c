use castel_core::semantics::*;
use castel_core::*;
use castel_core::expr::Functions;
use castel_core::net::add_bound_place;

fn net(json: &str) -> Net {
    Net::from_json(json, &Functions::builtin()).unwrap()
}

fn dangling() -> Net {
    net(r#"{"places": [{"name": "Q"}], "transitions": [
        {"name": "t", "outputs": [{"place": "Q"}], "rate": "1.5"}]}"#)
}

#[test]
fn nothing_enabled_gives_single_state() {
    let n = net(r#"{"places": [{"name": "P"}], "transitions": [
        {"name": "t", "inputs": [{"place": "P"}], "rate": "1"}]}"#);
    let g = reachability(&n, n.initial_marking(), 10).unwrap();
    assert_eq!(g.states.len(), 1);
    assert!(g.edges.is_empty());
    assert!(enabled_firings(&n, n.initial_marking()).unwrap().is_empty());
    assert!(detect_conflicts(&n, n.initial_marking()).unwrap().is_empty());
}

#[test]
fn bounded_dangling_transition_is_a_chain() {
    let (b, p) = add_bound_place(&dangling(), "t", 3).unwrap();
    let g = reachability(&b, b.initial_marking(), 100).unwrap();
    assert_eq!(g.states.len(), 4);
    assert_eq!(g.edges.len(), 3);
    let mut counts: Vec<u64> = g.states.iter().map(|m| m.count(p)).collect();
    counts.sort();
    assert_eq!(counts, [0, 1, 2, 3]);
    let unbounded = reachability(&dangling(), dangling().initial_marking(), 50);
    assert!(matches!(unbounded, Err(Error::StateLimit { limit: 50, .. })));
}

#[test]
fn firing_a_disabled_binding_fails_and_leaves_marking() {
    let n = net(r#"{"places": [{"name": "P"}, {"name": "Q"}], "transitions": [
        {"name": "t", "inputs": [{"place": "P"}], "outputs": [{"place": "Q"}], "rate": "1"}],
        "initial": {"P": 1}}"#);
    let f = enabled_firings(&n, n.initial_marking()).unwrap().remove(0);
    let after = fire(&n, n.initial_marking(), &f).unwrap();
    assert_eq!(n.marking_count(&after, "Q").unwrap(), 1);
    let mut again = after.clone();
    assert!(matches!(fire_in_place(&n, &mut again, &f), Err(Error::NotEnabled(_))));
    assert_eq!(again, after);
}

#[test]
fn identity_transition_unfolds_per_colour() {
    let n = net(r#"{"domains": {"C": {"kind": "enum", "values": ["a", "b"]}},
        "places": [{"name": "P", "domain": "C"}],
        "transitions": [{"name": "t", "inputs": [{"place": "P", "pattern": "x"}],
                         "outputs": [{"place": "P", "expr": "x"}], "rate": "1"}]}"#);
    let u = unfold(&n).unwrap();
    assert_eq!(u.places().len(), 2);
    assert_eq!(u.transitions().len(), 2);
    let never = net(r#"{"domains": {"C": {"kind": "enum", "values": ["a", "b"]}},
        "places": [{"name": "P", "domain": "C"}],
        "transitions": [{"name": "t", "inputs": [{"place": "P", "pattern": "x"}],
                         "guard": "false", "rate": "1"}]}"#);
    assert_eq!(unfold(&never).unwrap().transitions().len(), 0);
}

#[test]
fn unfold_limit_reports_transition() {
    let n = net(r#"{"domains": {"R": {"kind": "range", "lo": 0, "hi": 999}},
        "places": [{"name": "P", "domain": "R"}],
        "transitions": [{"name": "big", "inputs": [{"place": "P", "pattern": "x"}, {"place": "P", "pattern": "y"}],
                         "rate": "1"}]}"#);
    match unfold_with_limit(&n, 1000) {
        Err(Error::UnfoldLimit { transition, .. }) => assert_eq!(transition, "big"),
        other => panic!("expected limit error, got {other:?}"),
    }
}

#[test]
fn same_colour_twice_needs_two_tokens() {
    let n = net(r#"{"domains": {"C": {"kind": "enum", "values": ["a"]}},
        "places": [{"name": "P", "domain": "C"}],
        "transitions": [{"name": "pair", "inputs": [{"place": "P", "pattern": "x"}, {"place": "P", "pattern": "y"}],
                         "rate": "1"}],
        "initial": {"P": ["a"]}}"#);
    assert!(enabled_firings(&n, n.initial_marking()).unwrap().is_empty());
    let two = n.marking_from(&[], &[("P", Value::atom("a")), ("P", Value::atom("a"))]).unwrap();
    assert_eq!(enabled_firings(&n, &two).unwrap().len(), 1);
    let u = unfold(&n).unwrap();
    assert_eq!(u.transitions()[0].inputs[0].weight, 2);
}

#[test]
fn conflicts_group_shared_tokens_and_collect_players() {
    let n = net(r#"{"domains": {"C": {"kind": "enum", "values": ["a", "b"]}},
        "places": [{"name": "P", "domain": "C"}],
        "transitions": [
          {"name": "u", "inputs": [{"place": "P", "pattern": "x"}], "rate": "1", "tags": ["player:alice"]},
          {"name": "w", "inputs": [{"place": "P", "pattern": "x"}], "guard": "x = a", "rate": "1", "tags": ["player:bob"]}],
        "initial": {"P": ["a", "b"]}}"#);
    let sets = detect_conflicts(&n, n.initial_marking()).unwrap();
    assert_eq!(sets.len(), 2);
    let big = sets.iter().find(|s| s.firings.len() == 2).unwrap();
    assert_eq!(big.players.iter().cloned().collect::<Vec<_>>(), ["alice", "bob"]);
    let total: usize = sets.iter().map(|s| s.firings.len()).sum();
    assert_eq!(total, enabled_firings(&n, n.initial_marking()).unwrap().len());
}

mod common;

use std::collections::{BTreeMap, BTreeSet};

use castel_core::deadspot::{DeadspotParams, Model};
use proptest::prelude::*;

fn tiny_model(cars: u32, messages: u32, jmp: bool) -> Model {
    Model::new(DeadspotParams { jmp, ..common::tiny(cars, messages) }).unwrap()
}

/// Tiny road car colours: (f, p, t, m) with v fixed at 80.
fn tiny_cars(messages: i64) -> Vec<(&'static str, i64, &'static str, i64)> {
    let mut out = Vec::new();
    for f in ["A", "B", "T"] {
        for p in 0..=2 {
            for t in ["A", "B"] {
                for m in 0..=messages {
                    out.push((f, p, t, m));
                }
            }
        }
    }
    out
}

fn tiny_route(f: &str, t: &str) -> bool {
    f != t && f != "T"
}

fn tiny_x(f: &str, p: i64, t: &str) -> i64 {
    let leg = if f == "T" { t } else { f };
    if leg == "A" {
        2 - p
    } else {
        2 + p
    }
}

fn tiny_remaining(f: &str, p: i64) -> i64 {
    if f == "T" {
        2 - p
    } else {
        p + 2
    }
}

/// Bindings that satisfy each guard and produce in-domain tokens, counted
/// directly from the guards on the tiny road (START = 2, d_close = 2).
fn brute_force_counts(messages: i64) -> BTreeMap<&'static str, usize> {
    let cars = tiny_cars(messages);
    let mut n = BTreeMap::new();
    let ent = [("A", "B"), ("B", "A")].len();
    n.insert("ent", ent);
    let route = |f: &str, t: &str| (f == "T" && t != "T") || tiny_route(f, t);
    n.insert("ext", cars.iter().filter(|(f, p, t, _)| *f == "T" && route(f, t) && *p == 2).count());
    n.insert(
        "adv",
        cars.iter()
            .filter(|(f, p, t, _)| route(f, t) && (*f != "T" || *p != 2))
            .count(),
    );
    n.insert("cre", cars.iter().filter(|c| c.3 < messages).count());
    let mut jmp = 0;
    for a in &cars {
        for b in &cars {
            let close = (tiny_x(a.0, a.1, a.2) - tiny_x(b.0, b.1, b.2)).abs() <= 2;
            let faster = tiny_remaining(a.0, a.1) < tiny_remaining(b.0, b.1);
            if close && faster && a.3 + b.3 <= messages {
                jmp += 1;
            }
        }
    }
    n.insert("jmp", jmp);
    n
}

#[test]
fn tiny_unfolding_matches_binding_enumeration() {
    let m = tiny_model(1, 1, true);
    let u = unfold_with_limit(&m.net, 100_000).unwrap();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in u.net.transitions() {
        let name = t.name.split('[').next().unwrap();
        let key = ["ent", "ext", "adv", "cre", "jmp"].into_iter().find(|k| *k == name).unwrap();
        *counts.entry(key).or_default() += 1;
    }
    assert_eq!(counts, brute_force_counts(1));
}

#[test]
fn tiny_single_car_state_space() {
    // Empty road, plus one car on either route at any of its six positions.
    let g = reachability(&tiny_model(1, 0, false).net, &tiny_model(1, 0, false).init, 1000).unwrap();
    assert_eq!(g.states.len(), 13);
    let g = reachability(&tiny_model(1, 0, true).net, &tiny_model(1, 0, true).init, 1000).unwrap();
    assert_eq!(g.states.len(), 13);
}

#[test]
fn ctmc_exit_rate_is_total_enabled_rate() {
    let m = tiny_model(2, 1, true);
    let g = reachability(&m.net, &m.init, 10_000).unwrap();
    let c: Ctmc = castel_core::ctmc::to_ctmc(&g, &[]).unwrap();
    for (i, s) in g.states.iter().enumerate() {
        // Empty jumps (donor m = 0) leave the marking unchanged and are not CTMC moves.
        let total: f64 = enabled_firings(&m.net, s)
            .unwrap()
            .iter()
            .filter(|f| &fire(&m.net, s, f).unwrap() != s)
            .map(|f| f.rate)
            .sum();
        assert!((c.exit_rate(i) - total).abs() < 1e-12 * total.max(1.0), "state {i}");
    }
}

#[test]
fn empty_k_disables_ent() {
    let m = Model::new(DeadspotParams {
        cars: 2,
        initial_cars: vec!["(A,3,B,80,0)".into(), "(B,7,C,100,0)".into()],
        ..Default::default()
    })
    .unwrap();
    let ent = m.net.transition_id("ent").unwrap();
    assert!(enabled_firings(&m.net, &m.init).unwrap().iter().all(|f| f.transition != ent));
}

#[test]
fn one_car_is_one_conflict_set_and_far_cars_are_separate() {
    let m = Model::new(DeadspotParams {
        cars: 1,
        initial_cars: vec!["(A,30,C,100,0)".into()],
        ..Default::default()
    })
    .unwrap();
    let sets = detect_conflicts(&m.net, &m.init).unwrap();
    assert_eq!(sets.len(), 1);
    assert!(sets[0].firings.len() >= 2);

    let m = Model::new(DeadspotParams {
        cars: 2,
        messages: 0,
        initial_cars: vec!["(A,30,C,100,0)".into(), "(B,30,C,100,0)".into()],
        ..Default::default()
    })
    .unwrap();
    let sets = detect_conflicts(&m.net, &m.init).unwrap();
    assert_eq!(sets.len(), 2);
    assert!(sets.iter().all(|s| s.firings.len() == 1));
}

fn conservation(m: &Model, mk: &Marking) -> bool {
    let z = mk.bag(m.place("Z"));
    let carried: i64 = z.iter().map(|(v, n)| v.as_tuple().unwrap()[4].as_int().unwrap() * i64::from(*n)).sum();
    mk.count(m.place("K")) + mk.count(m.place("Z")) == u64::from(m.params.cars)
        && mk.count(m.place("L")) as i64 + carried == i64::from(m.params.messages)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn unfolding_is_isomorphic(cars in 1u32..=2, messages in 0u32..=1, jmp in any::<bool>()) {
        let m = tiny_model(cars, messages, jmp);
        let (_, eq) = unfolding_equivalence(&m.net, &m.init, 100_000).unwrap();
        prop_assert!(eq.isomorphic);
        prop_assert_eq!(eq.coloured_states, eq.basic_states);
        prop_assert_eq!(eq.coloured_edges, eq.basic_edges);
    }

    #[test]
    fn reachable_states_are_sound_conserving_and_covered(cars in 1u32..=2, messages in 0u32..=2, jmp in any::<bool>()) {
        let m = tiny_model(cars, messages, jmp);
        let g = reachability(&m.net, &m.init, 100_000).unwrap();
        for e in &g.edges {
            let f = EnabledFiring { transition: e.transition, binding: e.binding.clone(), rate: e.rate };
            let src = &g.states[e.source];
            prop_assert!(enabled_firings(&m.net, src).unwrap().contains(&f));
            prop_assert_eq!(&fire(&m.net, src, &f).unwrap(), &g.states[e.target]);
        }
        for s in &g.states {
            prop_assert!(conservation(&m, s));
            let all: BTreeSet<EnabledFiring> = enabled_firings(&m.net, s).unwrap().into_iter().collect();
            let sets = detect_conflicts(&m.net, s).unwrap();
            let covered: Vec<&EnabledFiring> = sets.iter().flat_map(|c| &c.firings).collect();
            prop_assert_eq!(covered.len(), all.len());
            prop_assert_eq!(covered.into_iter().cloned().collect::<BTreeSet<_>>(), all);
        }
    }

    #[test]
    fn incremental_enabled_set_tracks_full_recomputation(seed in any::<u64>()) {
        use rand::Rng;
        let m = Model::new(DeadspotParams {
            cars: 6,
            messages: 8,
            initial_cars: vec!["(A,1,C,100,2)".into(), "(T,1,A,80,0)".into(), "(B,3,A,120,1)".into()],
            ..Default::default()
        })
        .unwrap();
        let mut rng = castel_core::sim::rng_for(seed);
        let mut mk = m.init.clone();
        let mut set = EnabledSet::new(&m.net, &mk).unwrap();
        for _ in 0..300 {
            let mut inc: Vec<(EnabledFiring, f64)> = set.iter().map(|f| (f.clone(), f.rate)).collect();
            inc.sort_by(|a, b| a.0.cmp(&b.0));
            let mut full: Vec<(EnabledFiring, f64)> =
                enabled_firings(&m.net, &mk).unwrap().into_iter().map(|f| { let r = f.rate; (f, r) }).collect();
            full.sort_by(|a, b| a.0.cmp(&b.0));
            prop_assert_eq!(&inc, &full);
            let total: f64 = full.iter().map(|f| f.1).sum();
            prop_assert!((set.total_rate() - total).abs() < 1e-9 * total.max(1.0));
            if set.is_empty() {
                break;
            }
            let f = set.select(rng.random::<f64>() * set.total_rate()).unwrap().clone();
            let fx = fire_in_place(&m.net, &mut mk, &f).unwrap();
            set.apply(&m.net, &mk, &fx).unwrap();
        }
    }
}
