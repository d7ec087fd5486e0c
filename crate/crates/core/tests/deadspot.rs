use castel_core::deadspot::*;
use castel_core::*;
use castel_core::semantics::{enabled_firings, fire};

fn car(s: &str) -> Value {
    Value::parse(s).unwrap()
}

#[test]
fn initial_marking_and_only_ent_enabled() {
    let (net, mk) = build(&DeadspotParams {
        cars: 3,
        messages: 10,
        ..Default::default()
    })
    .unwrap();
    assert_eq!(net.marking_count(&mk, "K").unwrap(), 3);
    assert_eq!(net.marking_count(&mk, "L").unwrap(), 10);
    assert_eq!(net.marking_count(&mk, "Z").unwrap(), 0);
    let fs = enabled_firings(&net, &mk).unwrap();
    assert_eq!(fs.len(), 18);
    assert!(fs.iter().all(|f| net.transition(f.transition).name == "ent"));
}

#[test]
fn ent_puts_car_at_start_zone() {
    let (net, mk) = build(&DeadspotParams::default()).unwrap();
    let f = enabled_firings(&net, &mk)
        .unwrap()
        .into_iter()
        .find(|f| f.value(&net, "f") == Some(&Value::atom("A")) && f.value(&net, "t") == Some(&Value::atom("C")) && f.value(&net, "v") == Some(&Value::Int(100)))
        .unwrap();
    assert_eq!(f.value(&net, "p"), Some(&Value::Int(60)));
    let next = fire(&net, &mk, &f).unwrap();
    assert_eq!(net.marking_count(&next, "K").unwrap(), 9);
    assert_eq!(net.marking_tokens(&next, "Z").unwrap().into_keys().collect::<Vec<_>>(), [car("(A,60,C,100,0)")]);
}

fn with_cars(cars: &[&str], params: DeadspotParams) -> (Net, Marking) {
    build(&DeadspotParams {
        initial_cars: cars.iter().map(|s| s.to_string()).collect(),
        ..params
    })
    .unwrap()
}

fn successors(net: &Net, mk: &Marking, name: &str) -> Vec<Marking> {
    enabled_firings(net, mk)
        .unwrap()
        .into_iter()
        .filter(|f| net.transition(f.transition).name == name)
        .map(|f| fire(net, mk, &f).unwrap())
        .collect()
}

#[test]
fn adv_crosses_hub_and_ext_leaves() {
    let (net, mk) = with_cars(&["(A,0,C,100,0)"], Default::default());
    let next = successors(&net, &mk, "adv");
    assert_eq!(next.len(), 1);
    assert_eq!(net.marking_tokens(&next[0], "Z").unwrap().into_keys().next(), Some(car("(T,0,C,100,0)")));

    let (net, mk) = with_cars(&["(T,20,C,100,0)"], Default::default());
    assert!(successors(&net, &mk, "adv").is_empty());
    assert_eq!(successors(&net, &mk, "ext").len(), 1);

    let (net, mk) = with_cars(&["(T,60,A,80,4)"], Default::default());
    let out = &successors(&net, &mk, "ext")[0];
    assert_eq!(net.marking_count(out, "K").unwrap(), 10);
    assert_eq!(net.marking_count(out, "L").unwrap(), 20);
    assert_eq!(net.marking_count(out, "Z").unwrap(), 0);
}

#[test]
fn cre_increments_messages() {
    let (net, mk) = with_cars(&["(B,10,A,80,2)"], Default::default());
    let out = &successors(&net, &mk, "cre")[0];
    assert_eq!(net.marking_count(out, "L").unwrap(), 17);
    assert_eq!(net.marking_tokens(out, "Z").unwrap().into_keys().next(), Some(car("(B,10,A,80,3)")));
}

#[test]
fn figure_marking_has_no_jmp() {
    let (net, mk) = with_cars(&["(A,59,C,100,0)", "(T,0,A,80,4)", "(C,10,A,120,2)"], Default::default());
    assert_eq!(net.marking_count(&mk, "K").unwrap(), 7);
    assert_eq!(net.marking_count(&mk, "L").unwrap(), 14);
    assert!(successors(&net, &mk, "jmp").is_empty());
    assert!(detect_single_car_conflict(&net));
}

fn detect_single_car_conflict(net: &Net) -> bool {
    let mk = net
        .marking_from(&[("K", 0), ("L", 1)], &[("Z", car("(T,60,A,80,0)"))])
        .unwrap();
    let sets = castel_core::semantics::detect_conflicts(net, &mk).unwrap();
    sets.len() == 1 && sets[0].firings.len() >= 2
}

#[test]
fn jmp_moves_messages_to_smaller_eta() {
    let (net, mk) = with_cars(&["(A,1,C,100,3)", "(T,1,A,80,0)"], Default::default());
    // (T,1,A) has 59 zones left at 80; (A,1,C) has 21 at 100.
    let next = successors(&net, &mk, "jmp");
    assert_eq!(next.len(), 1);
    let z = net.marking_tokens(&next[0], "Z").unwrap();
    assert!(z.contains_key(&car("(A,1,C,100,3)")) && z.contains_key(&car("(T,1,A,80,0)")));
    let (net, mk) = with_cars(&["(A,5,B,100,0)", "(A,5,B,100,2)"], Default::default());
    assert!(successors(&net, &mk, "jmp").is_empty());
    assert_eq!(jmp_direction(0.75, 0.5), Transfer::ToReceiver);
    assert_eq!(jmp_direction(0.5, 0.5), Transfer::None);
}

#[test]
fn no_jmp_flag_omits_transition() {
    let (net, _) = build(&DeadspotParams {
        jmp: false,
        ..Default::default()
    })
    .unwrap();
    assert!(net.transition_id("jmp").is_err());
}

#[test]
fn invalid_params_rejected() {
    for p in [
        DeadspotParams { cars: 0, ..Default::default() },
        DeadspotParams { resolution: 0, ..Default::default() },
        DeadspotParams { speeds: vec![], ..Default::default() },
        DeadspotParams { satellite: Some(11), ..Default::default() },
    ] {
        assert!(build(&p).is_err());
    }
}

#[test]
fn tracker_records_lifecycle() {
    let model = Model::new(DeadspotParams {
        cars: 4,
        messages: 6,
        ..Default::default()
    })
    .unwrap();
    let tr = model.simulate(11, 200.0, false).unwrap();
    let s = delivery_metrics(&model.net, std::slice::from_ref(&tr)).unwrap();
    assert!(s.created > 0);
    assert_eq!(s.created, s.delivered + s.censored);
    for r in &s.records {
        if let Some(d) = r.delivered {
            assert!(d >= r.created);
        }
    }
}

#[test]
fn no_messages_flags_empty() {
    let model = Model::new(DeadspotParams {
        messages: 0,
        ..Default::default()
    })
    .unwrap();
    let tr = model.simulate(1, 20.0, false).unwrap();
    let s = delivery_metrics(&model.net, &[tr]).unwrap();
    assert!(s.empty && s.records.is_empty() && s.mean_delay.is_none());
}

#[test]
fn metrics_reject_foreign_nets() {
    let net = Net::from_json(r#"{"places": [{"name": "P"}], "transitions": []}"#, &Functions::builtin()).unwrap();
    assert!(delivery_metrics(&net, &[]).is_err());
}

#[test]
fn fit_recovers_exact_line() {
    let ns: Vec<f64> = (1..=9).map(f64::from).collect();
    let fs: Vec<f64> = ns.iter().map(|n| 2.0 * n + 1.0).collect();
    let fit = fit_factors(&ns, &fs).unwrap();
    assert!((fit.slope - 2.0).abs() < 1e-9 && (fit.intercept - 1.0).abs() < 1e-9 && fit.r2 == 1.0);
    assert_eq!(fit_factors(&ns, &[1.5; 9]).unwrap().slope, 0.0);
    assert!(fit_factors(&[3.0, 3.0], &[1.0, 2.0]).is_err());
}

#[test]
fn params_json_round_trip() {
    let p = DeadspotParams {
        satellite: Some(3),
        ..Default::default()
    };
    let text = serde_json::to_string(&p).unwrap();
    assert!(text.contains("\"N\":10"));
    let back: DeadspotParams = serde_json::from_str(&text).unwrap();
    assert_eq!(p, back);
    let partial: DeadspotParams = serde_json::from_str(r#"{"N": 2, "jmp": false}"#).unwrap();
    assert_eq!((partial.cars, partial.messages, partial.jmp), (2, 20, false));
    assert!(serde_json::from_str::<DeadspotParams>(r#"{"cars": 2}"#).is_err());
}

use std::collections::{BTreeMap, VecDeque};

use castel_core::semantics::spatial_weight;
use castel_core::sim::{run, run_many_with, Flow, Observer, Step};
use castel_core::stats;
use proptest::prelude::*;

/// Fires the enabled `name` firing that produces `target` in Z.
fn step_to(net: &Net, mk: &Marking, name: &str, target: &str) -> Marking {
    let z = net.place_id("Z").unwrap();
    let want = car(target);
    enabled_firings(net, mk)
        .unwrap()
        .into_iter()
        .filter(|f| net.transition(f.transition).name == name)
        .map(|f| fire(net, mk, &f).unwrap())
        .find(|next| next.multiplicity(z, &want) > mk.multiplicity(z, &want))
        .unwrap_or_else(|| panic!("no {name} firing reaches {target}"))
}

#[test]
fn figure_marking_is_reachable() {
    let params = DeadspotParams { messages: 10, ..Default::default() };
    let (net, mut mk) = build(&params).unwrap();
    mk = step_to(&net, &mk, "ent", "(B,40,A,80,0)");
    for p in (0..40).rev() {
        mk = step_to(&net, &mk, "adv", &format!("(B,{p},A,80,0)"));
    }
    mk = step_to(&net, &mk, "adv", "(T,0,A,80,0)");
    for m in 1..=4 {
        mk = step_to(&net, &mk, "cre", &format!("(T,0,A,80,{m})"));
    }
    mk = step_to(&net, &mk, "ent", "(C,20,A,120,0)");
    for p in (10..20).rev() {
        mk = step_to(&net, &mk, "adv", &format!("(C,{p},A,120,0)"));
    }
    for m in 1..=2 {
        mk = step_to(&net, &mk, "cre", &format!("(C,10,A,120,{m})"));
    }
    mk = step_to(&net, &mk, "ent", "(A,60,C,100,0)");
    mk = step_to(&net, &mk, "adv", "(A,59,C,100,0)");
    let (_, figure) = with_cars(&["(A,59,C,100,0)", "(T,0,A,80,4)", "(C,10,A,120,2)"], params);
    assert_eq!(mk, figure);
}

#[test]
fn single_speed_gives_single_speed_cars() {
    let m = Model::new(DeadspotParams { speeds: vec![80], ..Default::default() }).unwrap();
    let tr = m.simulate(3, 60.0, true).unwrap();
    assert!(!tr.events.is_empty());
    for e in &tr.events {
        for (v, _) in e.marking.as_ref().unwrap().bag(m.place("Z")) {
            assert_eq!(CarToken::from_value(v).unwrap().v, 80);
        }
    }
}

#[test]
fn empty_donor_may_jump_without_moving_messages() {
    let (net, mk) = with_cars(&["(A,1,C,100,0)", "(T,1,A,80,3)"], Default::default());
    // (T,1,A) is the donor with the larger ETA; the other way round is empty.
    let next = successors(&net, &mk, "jmp");
    assert_eq!(next.len(), 1);
    let z = net.marking_tokens(&next[0], "Z").unwrap();
    assert!(z.contains_key(&car("(A,1,C,100,3)")) && z.contains_key(&car("(T,1,A,80,0)")));
    let (net, mk) = with_cars(&["(A,1,C,100,2)", "(T,1,A,80,0)"], Default::default());
    let next = successors(&net, &mk, "jmp");
    assert_eq!(next, [mk.clone()]);
    assert_eq!(net.marking_count(&next[0], "L").unwrap(), 18);
    assert_eq!(jmp_direction(0.75, 0.5), Transfer::ToReceiver);
    assert_eq!(jmp_direction(0.5, 0.75), Transfer::None);
}

#[test]
fn constant_factors_fit_flat_line() {
    let ns: Vec<f64> = (1..=9).map(f64::from).collect();
    let fit = fit_factors(&ns, &[2.0; 9]).unwrap();
    assert_eq!((fit.slope, fit.intercept), (0.0, 2.0));
}

/// Checks the scenario invariants after every firing.
struct Invariants<'m> {
    model: &'m Model,
    steps: usize,
}

fn token(v: &Value) -> CarToken {
    CarToken::from_value(v).unwrap()
}

impl Observer for Invariants<'_> {
    fn step(&mut self, net: &Net, s: &Step<'_>) -> castel_core::Result<Flow> {
        let m = self.model;
        let (k, l, z) = (m.place("K"), m.place("L"), m.place("Z"));
        let mk = s.marking;
        let carried: i64 = mk.bag(z).iter().map(|(v, n)| token(v).m * i64::from(*n)).sum();
        assert_eq!(mk.count(k) + mk.count(z), u64::from(m.params.cars));
        assert_eq!(mk.count(l) as i64 + carried, i64::from(m.params.messages));
        let cars = |xs: &[(PlaceId, Value, u32)]| -> Vec<CarToken> {
            xs.iter().filter(|x| x.0 == z).flat_map(|x| std::iter::repeat_n(token(&x.1), x.2 as usize)).collect()
        };
        let (before, after) = (cars(&s.effects.consumed), cars(&s.effects.produced));
        match net.transition(s.firing.transition).name.as_str() {
            "adv" => {
                let w = spatial_weight(net, s.firing).unwrap() as i64;
                let (a, b) = (&before[0], &after[0]);
                assert_eq!(m.road.remaining(a.pos()).unwrap() - m.road.remaining(b.pos()).unwrap(), w);
                assert_eq!(w, (b.p - a.p).abs());
            }
            "cre" => {
                let (a, b) = (&before[0], &after[0]);
                assert_eq!((a.pos(), a.v, a.m + 1), (b.pos(), b.v, b.m));
            }
            "jmp" => {
                let own = |x: &str| s.firing.value(net, x).unwrap().clone();
                let pair = |p: &str| {
                    let f = own(&format!("f{p}"));
                    let t = own(&format!("t{p}"));
                    let tok = Value::Tuple(vec![f, own(&format!("p{p}")), t, own(&format!("v{p}")), own(&format!("m{p}"))].into());
                    token(&tok)
                };
                let (recv, donor) = (pair(""), pair("'"));
                let eta = |c: &CarToken| m.road.eta(c.pos(), c.v as f64).unwrap();
                assert!(eta(&recv) < eta(&donor));
                assert!(m.road.is_close(recv.pos(), donor.pos()).unwrap());
                let moved: i64 = after.iter().map(|c| c.m).sum();
                let had: i64 = before.iter().map(|c| c.m).sum();
                assert_eq!(moved, had);
            }
            _ => {}
        }
        self.steps += 1;
        Ok(Flow::Continue)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn runs_keep_scenario_invariants(seed in any::<u64>(), cars in 1u32..12, messages in 0u32..25, jmp in any::<bool>()) {
        let m = Model::new(DeadspotParams { cars, messages, jmp, ..Default::default() }).unwrap();
        let mut obs = Invariants { model: &m, steps: 0 };
        let end = run(&m.net, &m.init, 60.0, seed, &mut obs).unwrap();
        prop_assert_eq!(end.events as usize, obs.steps);
    }
}

/// Entry times per car colour; colours change only through `adv` here.
#[derive(Default)]
struct Residence {
    inside: BTreeMap<Value, VecDeque<f64>>,
    exits: Vec<(f64, f64)>,
}

impl Observer for Residence {
    fn step(&mut self, net: &Net, s: &Step<'_>) -> castel_core::Result<Flow> {
        let z = net.place_id("Z")?;
        let out: Vec<&Value> = s.effects.consumed.iter().filter(|x| x.0 == z).map(|x| &x.1).collect();
        let new: Vec<&Value> = s.effects.produced.iter().filter(|x| x.0 == z).map(|x| &x.1).collect();
        let entered = match out.first() {
            Some(v) => {
                let q = self.inside.get_mut(*v).unwrap();
                let t = q.pop_front().unwrap();
                if q.is_empty() {
                    self.inside.remove(*v);
                }
                t
            }
            None => s.time,
        };
        match new.first() {
            Some(v) => self.inside.entry((*v).clone()).or_default().push_back(entered),
            None => self.exits.push((entered, s.time)),
        }
        Ok(Flow::Continue)
    }
}

#[test]
fn cars_entering_by_half_horizon_have_left_by_horizon() {
    let horizon = 100.0;
    let m = Model::new(DeadspotParams { messages: 0, jmp: false, ..Default::default() }).unwrap();
    let per_run = run_many_with(1000, 0, |seed| {
        let mut obs = Residence::default();
        run(&m.net, &m.init, horizon, seed, &mut obs)?;
        let done = obs.exits.iter().filter(|(e, _)| *e <= horizon / 2.0).count();
        let stuck = obs.inside.values().flatten().filter(|e| **e <= horizon / 2.0).count();
        Ok((done, stuck))
    })
    .unwrap();
    let (done, stuck) = per_run.iter().fold((0, 0), |(a, b), (d, s)| (a + d, b + s));
    let fraction = done as f64 / (done + stuck) as f64;
    assert!(done > 10_000);
    assert!(fraction >= 0.99, "only {fraction} of early cars left");
}

#[test]
fn messages_without_jumps_take_their_expected_exit_delay() {
    let horizon = 200.0;
    let m = Model::new(DeadspotParams { jmp: false, ..Default::default() }).unwrap();
    let traces = run_many_with(100, 500, |seed| m.simulate(seed, horizon, false)).unwrap();
    let s = delivery_metrics(&m.net, &traces).unwrap();
    let ratios: Vec<f64> = s
        .records
        .iter()
        .filter(|r| r.created <= horizon - 100.0 && r.hops == 0)
        .map(|r| r.delay().unwrap() / r.expected_exit)
        .collect();
    assert!(ratios.len() >= 10_000, "{} messages", ratios.len());
    let mean = stats::mean(&ratios).unwrap();
    assert!((mean - 1.0).abs() < 0.05, "mean ratio {mean}");
}
