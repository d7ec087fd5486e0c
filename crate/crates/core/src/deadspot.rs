//! The dead-spot message relay: cars enter a road network without coverage,
//! create messages, hand them to nearby cars that will leave sooner, and
//! deliver everything they carry on exit.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::colour::{DomainSpec, Value};
use crate::error::{Error, Result};
use crate::expr::Functions;
use crate::net::{InitialDoc, InputDoc, Marking, Net, NetDoc, OutputDoc, PlaceDoc, PlaceId, TransitionDoc};
use crate::semantics::EnabledFiring;
use crate::sim::{self, Annotation, Annotator, SimOptions, Step, Trace};
use crate::spatial::{self, CarPos, RoadNetwork};
use crate::stats::{self, Interval, LineFit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rates {
    pub ent: f64,
    pub ext: f64,
    /// `adv` fires at `adv · v`.
    pub adv: f64,
    pub cre: f64,
    pub jmp: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Rates {
            ent: 1.0,
            ext: 1.0,
            adv: 0.04,
            cre: 3.0,
            jmp: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeadspotParams {
    /// Maximum number of cars in the dead spot.
    #[serde(rename = "N")]
    pub cars: u32,
    /// Maximum number of messages in transit.
    #[serde(rename = "M")]
    pub messages: u32,
    /// Zones per distance unit.
    #[serde(rename = "R")]
    pub resolution: u32,
    pub speeds: Vec<i64>,
    pub rates: Rates,
    /// Multiplies every `ent` binding rate.
    pub arrival_scale: f64,
    pub d_close: f64,
    pub jmp: bool,
    /// Satellite-equipped cars per 10; `None` leaves the variant off.
    pub satellite: Option<u32>,
    pub sat_rate: f64,
    /// Road geometry; the three-exit network when absent.
    pub road: Option<RoadNetwork<f64>>,
    /// Cars present at time 0, as `(f,p,t,v,m)` (plus `s` with satellites).
    pub initial_cars: Vec<String>,
}

impl Default for DeadspotParams {
    fn default() -> Self {
        DeadspotParams {
            cars: 10,
            messages: 20,
            resolution: 1,
            speeds: vec![80, 100, 120],
            rates: Rates::default(),
            arrival_scale: 1.0,
            d_close: 2.0,
            jmp: true,
            satellite: None,
            sat_rate: 10.0,
            road: None,
            initial_cars: Vec::new(),
        }
    }
}

impl DeadspotParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.cars < 1 {
            return bad("N must be at least 1".into());
        }
        if self.resolution < 1 {
            return bad("R must be at least 1".into());
        }
        if self.speeds.is_empty() || self.speeds.iter().any(|v| *v <= 0) {
            return bad("speeds must be a non-empty set of positive integers".into());
        }
        let r = &self.rates;
        for (name, v) in [
            ("ent", r.ent),
            ("ext", r.ext),
            ("adv", r.adv),
            ("cre", r.cre),
            ("jmp", r.jmp),
            ("arrival_scale", self.arrival_scale),
            ("sat_rate", self.sat_rate),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("rate `{name}` must be positive, got {v}"));
            }
        }
        if !(self.d_close >= 0.0) || !self.d_close.is_finite() {
            return bad(format!("d_close must be non-negative, got {}", self.d_close));
        }
        if let Some(n) = self.satellite {
            if n > 10 {
                return bad(format!("satellite count per 10 cars must be in 0..=10, got {n}"));
            }
        }
        Ok(())
    }

    /// The road network with this scenario's resolution and closeness radius.
    pub fn road_network(&self) -> Result<RoadNetwork<f64>> {
        let mut rn = self.road.clone().unwrap_or_default();
        rn.rho *= self.resolution as f64;
        rn.d_close = self.d_close;
        rn.validate()?;
        Ok(rn)
    }
}

const CAR_VARS: [&str; 5] = ["f", "p", "t", "v", "m"];

fn car_pattern(prime: &str, sat: bool) -> String {
    let mut vars: Vec<String> = CAR_VARS.iter().map(|v| format!("{v}{prime}")).collect();
    if sat {
        vars.push(format!("s{prime}"));
    }
    format!("({})", vars.join(", "))
}

fn car_expr(f: &str, p: &str, t: &str, v: &str, m: &str, s: Option<&str>) -> String {
    match s {
        Some(s) => format!("({f}, {p}, {t}, {v}, {m}, {s})"),
        None => format!("({f}, {p}, {t}, {v}, {m})"),
    }
}

fn atoms(xs: impl IntoIterator<Item = String>) -> DomainSpec {
    DomainSpec::Enum { values: xs.into_iter().collect() }
}

/// The scenario net document for `params`.
pub fn net_doc(params: &DeadspotParams) -> Result<NetDoc> {
    params.validate()?;
    let road = params.road_network()?;
    let sat = params.satellite.is_some();
    let hub = road.hub.clone();
    let exits: Vec<String> = road.exits.iter().cloned().collect();
    let mut points = exits.clone();
    points.push(hub.clone());

    let mut domains = BTreeMap::new();
    domains.insert("Point".into(), atoms(points));
    domains.insert("Exit".into(), atoms(exits));
    domains.insert("Zone".into(), DomainSpec::Range { lo: 0, hi: road.max_zone() });
    let mut speeds = params.speeds.clone();
    speeds.sort_unstable();
    speeds.dedup();
    domains.insert("Speed".into(), DomainSpec::Set { values: speeds });
    domains.insert(
        "Msg".into(),
        DomainSpec::Range {
            lo: 0,
            hi: params.messages as i64,
        },
    );
    let mut fields: Vec<(String, String)> = [("f", "Point"), ("p", "Zone"), ("t", "Exit"), ("v", "Speed"), ("m", "Msg")]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
    if sat {
        domains.insert("Flag".into(), DomainSpec::Bool);
        fields.push(("s".into(), "Flag".into()));
    }
    domains.insert("Car".into(), DomainSpec::Product { fields });

    let mut constants = BTreeMap::new();
    let r = &params.rates;
    for (k, v) in [
        ("ent_rate", r.ent),
        ("ext_rate", r.ext),
        ("adv_coeff", r.adv),
        ("cre_rate", r.cre),
        ("jmp_rate", r.jmp),
        ("arrival", params.arrival_scale),
        ("sat_rate", params.sat_rate),
    ] {
        constants.insert(k.to_string(), serde_json::json!(v));
    }
    constants.insert("sat_n".into(), serde_json::json!(params.satellite.unwrap_or(0)));

    let z = |pattern: String| InputDoc {
        place: "Z".into(),
        pattern: Some(pattern),
        weight: 1,
    };
    let out = |place: &str, expr: Option<String>, weight: Option<&str>| OutputDoc {
        place: place.into(),
        expr,
        weight: weight.map(str::to_owned),
    };
    let dot_in = |place: &str| InputDoc {
        place: place.into(),
        pattern: None,
        weight: 1,
    };
    let s = sat.then_some("s");
    let own = car_pattern("", sat);
    let other = car_pattern("'", sat);
    let hub_atom = &hub;

    let mut transitions = Vec::new();
    let mut ent_vars = BTreeMap::from([
        ("f".to_string(), "Exit".to_string()),
        ("t".to_string(), "Exit".to_string()),
        ("v".to_string(), "Speed".to_string()),
    ]);
    if sat {
        ent_vars.insert("s".into(), "Flag".into());
    }
    transitions.push(TransitionDoc {
        name: "ent".into(),
        vars: ent_vars,
        inputs: vec![dot_in("K")],
        outputs: vec![out("Z", Some(car_expr("f", "p", "t", "v", "0", s)), None)],
        guard: Some(format!("IsRoute(f, t) && f != {hub_atom} && p = START(f)")),
        rate: if sat {
            "arrival * ent_rate * ite(s, sat_n / 10, (10 - sat_n) / 10)".into()
        } else {
            "arrival * ent_rate".into()
        },
        tags: vec![],
        spatial_weight: None,
    });
    transitions.push(TransitionDoc {
        name: "ext".into(),
        vars: BTreeMap::new(),
        inputs: vec![z(own.clone())],
        outputs: vec![out("K", None, None), out("L", None, Some("m"))],
        guard: Some(format!("IsRoute(f, t) && f = {hub_atom} && p = START(t)")),
        rate: "ext_rate".into(),
        tags: vec![],
        spatial_weight: None,
    });
    transitions.push(TransitionDoc {
        name: "adv".into(),
        vars: BTreeMap::new(),
        inputs: vec![z(own.clone())],
        outputs: vec![out("Z", Some(car_expr("f'", "p'", "t'", "v", "m", s)), None)],
        guard: Some(format!(
            "IsRoute(f, t) && ((f != {h} && ((p != 0 && p' = p - 1 && f' = f) || (p = 0 && p' = 0 && f' = {h})) && t' = t) \
             || (f = {h} && p != START(t) && f' = f && p' = p + 1 && t' = t))",
            h = hub_atom
        )),
        rate: "adv_coeff * v".into(),
        tags: vec![crate::net::SPATIAL_TAG.into()],
        spatial_weight: Some("abs(p' - p)".into()),
    });
    transitions.push(TransitionDoc {
        name: "cre".into(),
        vars: BTreeMap::new(),
        inputs: vec![z(own.clone()), dot_in("L")],
        outputs: vec![out("Z", Some(car_expr("f", "p", "t", "v", "m + 1", s)), None)],
        guard: None,
        rate: "cre_rate".into(),
        tags: vec![],
        spatial_weight: None,
    });
    if params.jmp {
        let (eta, eta2) = if sat {
            ("ite(s, 0, ETA(f, p, t, v))", "ite(s', 0, ETA(f', p', t', v'))")
        } else {
            ("ETA(f, p, t, v)", "ETA(f', p', t', v')")
        };
        transitions.push(TransitionDoc {
            name: "jmp".into(),
            vars: BTreeMap::new(),
            inputs: vec![z(own.clone()), z(other)],
            outputs: vec![
                out("Z", Some(car_expr("f", "p", "t", "v", "m + m'", s)), None),
                out("Z", Some(car_expr("f'", "p'", "t'", "v'", "0", sat.then_some("s'"))), None),
            ],
            guard: Some(format!("IsClose(f, p, t, f', p', t') && {eta} < {eta2}")),
            rate: "jmp_rate".into(),
            tags: vec![],
            spatial_weight: None,
        });
    }
    if sat {
        transitions.push(TransitionDoc {
            name: "sat-deliver".into(),
            vars: BTreeMap::new(),
            inputs: vec![z(own)],
            outputs: vec![
                out("Z", Some(car_expr("f", "p", "t", "v", "0", s)), None),
                out("L", None, Some("m")),
            ],
            guard: Some("s && m > 0".into()),
            rate: "sat_rate".into(),
            tags: vec![],
            spatial_weight: None,
        });
    }

    let mut carried = 0u64;
    for c in &params.initial_cars {
        let v = Value::parse(c).map_err(|e| Error::InvalidArgument(format!("initial car `{c}`: {e}")))?;
        carried += v.as_tuple().and_then(|t| t.get(4)).and_then(Value::as_int).unwrap_or(0).max(0) as u64;
    }
    let present = params.initial_cars.len() as u64;
    if present > params.cars as u64 {
        return Err(Error::InvalidArgument(format!("{present} initial cars exceed N = {}", params.cars)));
    }
    if carried > params.messages as u64 {
        return Err(Error::InvalidArgument(format!(
            "initial cars carry {carried} messages, more than M = {}",
            params.messages
        )));
    }
    let mut initial = BTreeMap::new();
    initial.insert("K".to_string(), InitialDoc::Count(params.cars - present as u32));
    initial.insert("L".to_string(), InitialDoc::Count(params.messages - carried as u32));
    if !params.initial_cars.is_empty() {
        initial.insert("Z".to_string(), InitialDoc::Tokens(params.initial_cars.clone()));
    }

    Ok(NetDoc {
        name: "deadspot".into(),
        domains,
        places: vec![
            PlaceDoc {
                name: "K".into(),
                domain: "Dot".into(),
            },
            PlaceDoc {
                name: "L".into(),
                domain: "Dot".into(),
            },
            PlaceDoc {
                name: "Z".into(),
                domain: "Car".into(),
            },
        ],
        transitions,
        constants,
        initial,
    })
}

/// Builtin functions plus the road predicates for `road`.
pub fn functions(road: &RoadNetwork<f64>) -> Functions {
    let mut fns = Functions::builtin();
    spatial::register_functions(Arc::new(road.clone()), &mut fns);
    fns
}

/// The scenario net and its initial marking.
pub fn build(params: &DeadspotParams) -> Result<(Net, Marking)> {
    let m = Model::new(params.clone())?;
    Ok((m.net, m.init))
}

/// A built scenario: parameters, geometry, net and initial marking.
#[derive(Debug, Clone)]
pub struct Model {
    pub params: DeadspotParams,
    pub road: RoadNetwork<f64>,
    pub net: Net,
    pub init: Marking,
}

impl Model {
    pub fn new(params: DeadspotParams) -> Result<Model> {
        let road = params.road_network()?;
        let doc = net_doc(&params)?;
        let net = Net::from_doc(doc, &functions(&road))?;
        let init = net.initial_marking().clone();
        Ok(Model { params, road, net, init })
    }

    pub fn place(&self, name: &str) -> PlaceId {
        self.net.place_id(name).expect("scenario place")
    }

    /// Expected time for a car to reach its exit and leave: one `adv` per
    /// remaining zone, plus the hub crossing when inbound, plus `ext`.
    pub fn expected_exit_delay(&self, car: &Value) -> Result<f64> {
        let c = CarToken::from_value(car)?;
        let remaining = self.road.remaining(c.pos())?;
        let steps = remaining + i64::from(c.f.as_str() != self.road.hub);
        Ok(steps as f64 / (self.params.rates.adv * c.v as f64) + 1.0 / self.params.rates.ext)
    }

    /// ETA used by `jmp`; satellite cars count as already out.
    pub fn jmp_eta(&self, car: &Value) -> Result<f64> {
        let c = CarToken::from_value(car)?;
        if c.s == Some(true) {
            return Ok(0.0);
        }
        self.road.eta(c.pos(), c.v as f64)
    }

    pub fn simulate(&self, seed: u64, horizon: f64, keep_markings: bool) -> Result<Trace> {
        let mut tracker = MessageTracker::new(self);
        sim::simulate_with(
            &self.net,
            &self.init,
            horizon,
            seed,
            SimOptions {
                keep_markings,
                annotator: Some(&mut tracker),
            },
        )
    }

    /// Per-run metrics: event counts, message outcomes and the time-averaged
    /// number of cars.
    pub fn run_metrics(&self, seed: u64, horizon: f64) -> Result<BTreeMap<String, f64>> {
        let trace = self.simulate(seed, horizon, false)?;
        let (ent, ext) = (self.net.transition_id("ent")?, self.net.transition_id("ext")?);
        let mut cars = trace.initial.count(self.place("Z")) as f64;
        let (mut area, mut last) = (0.0, 0.0);
        for e in &trace.events {
            area += cars * (e.time - last);
            last = e.time;
            if e.transition == ent {
                cars += 1.0;
            } else if e.transition == ext {
                cars -= 1.0;
            }
        }
        area += cars * (trace.end_time - last);
        let summary = delivery_metrics(&self.net, std::slice::from_ref(&trace))?;
        let count = |name: &str| {
            let id = self.net.transition_id(name).ok();
            trace.events.iter().filter(|e| Some(e.transition) == id).count() as f64
        };
        let mut m = BTreeMap::new();
        m.insert("events".into(), trace.events.len() as f64);
        m.insert("entered".into(), count("ent"));
        m.insert("exited".into(), count("ext"));
        m.insert("jumps".into(), count("jmp"));
        m.insert("empty_jumps".into(), summary.empty_jumps as f64);
        m.insert("created".into(), summary.created as f64);
        m.insert("delivered".into(), summary.delivered as f64);
        m.insert("censored".into(), summary.censored as f64);
        m.insert("mean_cars".into(), area / trace.end_time);
        m.insert("mean_delay".into(), summary.mean_delay.map_or(f64::NAN, |i| i.estimate));
        m.insert("half_time_fraction".into(), summary.half_time_fraction.map_or(f64::NAN, |i| i.estimate));
        m.insert("mean_ratio".into(), summary.mean_ratio.map_or(f64::NAN, |i| i.estimate));
        Ok(m)
    }
}

/// A decoded `Z` token.
#[derive(Debug, Clone, PartialEq)]
pub struct CarToken {
    pub f: String,
    pub p: i64,
    pub t: String,
    pub v: i64,
    pub m: i64,
    pub s: Option<bool>,
}

impl CarToken {
    pub fn from_value(v: &Value) -> Result<CarToken> {
        let bad = || Error::InvalidArgument(format!("{v} is not a car token"));
        let items = v.as_tuple().ok_or_else(bad)?;
        if items.len() != 5 && items.len() != 6 {
            return Err(bad());
        }
        Ok(CarToken {
            f: items[0].as_atom().ok_or_else(bad)?.as_str().to_owned(),
            p: items[1].as_int().ok_or_else(bad)?,
            t: items[2].as_atom().ok_or_else(bad)?.as_str().to_owned(),
            v: items[3].as_int().ok_or_else(bad)?,
            m: items[4].as_int().ok_or_else(bad)?,
            s: match items.get(5) {
                Some(x) => Some(x.as_bool().ok_or_else(bad)?),
                None => None,
            },
        })
    }

    pub fn pos(&self) -> CarPos<'_> {
        CarPos {
            f: &self.f,
            p: self.p,
            t: &self.t,
        }
    }
}

/// Which car gets the messages when two cars meet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transfer {
    /// The donor's messages move to the receiver.
    ToReceiver,
    None,
}

/// Messages move only to a car with a strictly smaller ETA.
pub fn jmp_direction(donor_eta: f64, receiver_eta: f64) -> Transfer {
    if receiver_eta < donor_eta {
        Transfer::ToReceiver
    } else {
        Transfer::None
    }
}

/// Gives cars and messages identities along a run and annotates each firing
/// with message lifecycle events.
pub struct MessageTracker<'m> {
    model: &'m Model,
    z: PlaceId,
    cars: HashMap<Value, Vec<u64>>,
    carried: HashMap<u64, Vec<u64>>,
    next_car: u64,
    next_message: u64,
}

impl<'m> MessageTracker<'m> {
    pub fn new(model: &'m Model) -> Self {
        MessageTracker {
            model,
            z: model.place("Z"),
            cars: HashMap::new(),
            carried: HashMap::new(),
            next_car: 0,
            next_message: 0,
        }
    }

    fn arrive(&mut self, colour: Value, id: u64) {
        let ids = self.cars.entry(colour).or_default();
        let at = ids.partition_point(|x| *x < id);
        ids.insert(at, id);
    }

    fn depart(&mut self, colour: &Value) -> Result<u64> {
        let ids = self
            .cars
            .get_mut(colour)
            .filter(|ids| !ids.is_empty())
            .ok_or_else(|| Error::InvalidArgument(format!("no tracked car with colour {colour}")))?;
        let id = ids.remove(0);
        if ids.is_empty() {
            self.cars.remove(colour);
        }
        Ok(id)
    }

    fn new_car(&mut self, colour: Value) -> u64 {
        let id = self.next_car;
        self.next_car += 1;
        self.arrive(colour, id);
        id
    }

    fn deliver(&mut self, car: u64, satellite: bool, out: &mut Vec<Annotation>) {
        for message in self.carried.remove(&car).unwrap_or_default() {
            out.push(Annotation::Delivered { message, car, satellite });
        }
    }

    /// Value bound to input arc `i` / output arc `i` by a firing.
    fn arcs(&self, firing: &EnabledFiring) -> Result<(Vec<Value>, Vec<Value>)> {
        let t = self.model.net.transition(firing.transition);
        let env: Vec<Option<Value>> = firing.binding.iter().cloned().map(Some).collect();
        let ev = |e: &crate::expr::Expr| e.eval(&env).map_err(|err| crate::semantics::eval_error(t, err));
        let ins = t
            .inputs
            .iter()
            .filter(|a| a.place == self.z)
            .map(|a| ev(&a.pattern))
            .collect::<Result<_>>()?;
        let outs = t
            .outputs
            .iter()
            .filter(|a| a.place == self.z)
            .map(|a| ev(&a.expr))
            .collect::<Result<_>>()?;
        Ok((ins, outs))
    }
}

impl Annotator for MessageTracker<'_> {
    fn start(&mut self, _net: &Net, mk: &Marking) -> Result<()> {
        self.cars.clear();
        self.carried.clear();
        self.next_car = 0;
        self.next_message = 0;
        for (colour, &n) in mk.bag(self.z) {
            let m = CarToken::from_value(colour)?.m.max(0) as u64;
            for _ in 0..n {
                let id = self.new_car(colour.clone());
                // Messages already present at time 0 get identities but no
                // creation record.
                let msgs: Vec<u64> = (0..m).map(|k| self.next_message + k).collect();
                self.next_message += m;
                self.carried.insert(id, msgs);
            }
        }
        Ok(())
    }

    fn annotate(&mut self, net: &Net, step: &Step<'_>) -> Result<Vec<Annotation>> {
        let name = net.transition(step.firing.transition).name.as_str();
        let (ins, outs) = self.arcs(step.firing)?;
        let mut notes = Vec::new();
        match name {
            "ent" => {
                self.new_car(outs[0].clone());
            }
            "ext" => {
                let id = self.depart(&ins[0])?;
                self.deliver(id, false, &mut notes);
            }
            "adv" => {
                let id = self.depart(&ins[0])?;
                self.arrive(outs[0].clone(), id);
            }
            "cre" => {
                let id = self.depart(&ins[0])?;
                let message = self.next_message;
                self.next_message += 1;
                self.carried.entry(id).or_default().push(message);
                notes.push(Annotation::Created {
                    message,
                    car: id,
                    expected_exit: self.model.expected_exit_delay(&ins[0])?,
                });
                self.arrive(outs[0].clone(), id);
            }
            "sat-deliver" => {
                let id = self.depart(&ins[0])?;
                self.deliver(id, true, &mut notes);
                self.arrive(outs[0].clone(), id);
            }
            "jmp" => {
                let (recv_eta, donor_eta) = (self.model.jmp_eta(&ins[0])?, self.model.jmp_eta(&ins[1])?);
                if jmp_direction(donor_eta, recv_eta) != Transfer::ToReceiver {
                    return Err(Error::InvalidArgument(format!(
                        "jmp fired from {} (ETA {donor_eta}) to {} (ETA {recv_eta})",
                        ins[1], ins[0]
                    )));
                }
                let to = self.depart(&ins[0])?;
                let from = self.depart(&ins[1])?;
                let moved = self.carried.remove(&from).unwrap_or_default();
                if moved.is_empty() {
                    notes.push(Annotation::EmptyJump { from, to });
                }
                for &message in &moved {
                    notes.push(Annotation::Jumped { message, from, to });
                }
                self.carried.entry(to).or_default().extend(moved);
                self.arrive(outs[0].clone(), to);
                self.arrive(outs[1].clone(), from);
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "transition `{other}` is not part of the dead-spot net"
                )))
            }
        }
        Ok(notes)
    }
}

/// One message created during a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeliveryRecord {
    pub seed: u64,
    pub message: u64,
    pub created: f64,
    /// Expected delay until the creating car leaves, at creation time.
    pub expected_exit: f64,
    pub delivered: Option<f64>,
    pub hops: u32,
    pub satellite: bool,
}

impl DeliveryRecord {
    pub fn delay(&self) -> Option<f64> {
        self.delivered.map(|d| d - self.created)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeliverySummary {
    pub records: Vec<DeliveryRecord>,
    pub runs: usize,
    pub created: usize,
    pub delivered: usize,
    pub censored: usize,
    pub empty_jumps: usize,
    /// No message was created in any run.
    pub empty: bool,
    /// Fraction of delivered messages that took less than half the expected
    /// own-exit delay; across-run normal interval.
    pub half_time_fraction: Option<Interval<f64>>,
    pub mean_delay: Option<Interval<f64>>,
    /// Mean of delay / expected own-exit delay.
    pub mean_ratio: Option<Interval<f64>>,
}

fn check_deadspot(net: &Net) -> Result<()> {
    for p in ["K", "L", "Z"] {
        net.place_id(p)
            .map_err(|_| Error::InvalidArgument(format!("not a dead-spot net: no place `{p}`")))?;
    }
    for t in ["ent", "ext", "adv", "cre"] {
        net.transition_id(t)
            .map_err(|_| Error::InvalidArgument(format!("not a dead-spot net: no transition `{t}`")))?;
    }
    Ok(())
}

/// Delivery records from annotated traces, at 95% confidence.
pub fn delivery_metrics(net: &Net, traces: &[Trace]) -> Result<DeliverySummary> {
    delivery_metrics_at(net, traces, 0.95)
}

pub fn delivery_metrics_at(net: &Net, traces: &[Trace], level: f64) -> Result<DeliverySummary> {
    check_deadspot(net)?;
    let mut records = Vec::new();
    let mut empty_jumps = 0;
    let mut per_run: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = Vec::new();
    for tr in traces {
        let mut open: BTreeMap<u64, DeliveryRecord> = BTreeMap::new();
        let mut done = Vec::new();
        for (time, a) in tr.annotations() {
            match a {
                Annotation::Created {
                    message,
                    expected_exit,
                    ..
                } => {
                    open.insert(
                        *message,
                        DeliveryRecord {
                            seed: tr.seed,
                            message: *message,
                            created: time,
                            expected_exit: *expected_exit,
                            delivered: None,
                            hops: 0,
                            satellite: false,
                        },
                    );
                }
                Annotation::Jumped { message, .. } => {
                    if let Some(r) = open.get_mut(message) {
                        r.hops += 1;
                    }
                }
                Annotation::Delivered { message, satellite, .. } => {
                    if let Some(mut r) = open.remove(message) {
                        r.delivered = Some(time);
                        r.satellite = *satellite;
                        done.push(r);
                    }
                }
                Annotation::EmptyJump { .. } => empty_jumps += 1,
            }
        }
        done.extend(open.into_values());
        done.sort_by_key(|r| r.message);
        let delivered: Vec<&DeliveryRecord> = done.iter().filter(|r| r.delivered.is_some()).collect();
        let half: Vec<f64> = delivered
            .iter()
            .map(|r| if r.delay().unwrap() < 0.5 * r.expected_exit { 1.0 } else { 0.0 })
            .collect();
        let delays: Vec<f64> = delivered.iter().map(|r| r.delay().unwrap()).collect();
        let ratios: Vec<f64> = delivered.iter().map(|r| r.delay().unwrap() / r.expected_exit).collect();
        per_run.push((half, delays, ratios));
        records.extend(done);
    }
    let created = records.len();
    let delivered = records.iter().filter(|r| r.delivered.is_some()).count();
    let across = |pick: &dyn Fn(&(Vec<f64>, Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> Result<Option<Interval<f64>>> {
        let means: Vec<f64> = per_run.iter().filter_map(|r| stats::mean(pick(r))).collect();
        if means.is_empty() {
            return Ok(None);
        }
        stats::mean_interval(&means, level).map(Some)
    };
    Ok(DeliverySummary {
        runs: traces.len(),
        created,
        delivered,
        censored: created - delivered,
        empty_jumps,
        empty: created == 0,
        half_time_fraction: across(&|r| &r.0)?,
        mean_delay: across(&|r| &r.1)?,
        mean_ratio: across(&|r| &r.2)?,
        records,
    })
}

/// One row per message, then one summary row per run.
pub fn write_delivery_csv<W: Write>(summary: &DeliverySummary, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["row", "seed", "message", "created", "expected_exit", "delivered", "delay", "hops", "satellite"])?;
    let f = |x: Option<f64>| x.map(|v| format!("{v:?}")).unwrap_or_default();
    for r in &summary.records {
        out.write_record([
            "message".into(),
            r.seed.to_string(),
            r.message.to_string(),
            format!("{:?}", r.created),
            format!("{:?}", r.expected_exit),
            f(r.delivered),
            f(r.delay()),
            r.hops.to_string(),
            r.satellite.to_string(),
        ])?;
    }
    let mut seeds: Vec<u64> = summary.records.iter().map(|r| r.seed).collect();
    seeds.dedup();
    for seed in seeds {
        let rs: Vec<&DeliveryRecord> = summary.records.iter().filter(|r| r.seed == seed).collect();
        let delays: Vec<f64> = rs.iter().filter_map(|r| r.delay()).collect();
        out.write_record([
            "run".into(),
            seed.to_string(),
            rs.len().to_string(),
            String::new(),
            String::new(),
            delays.len().to_string(),
            f(stats::mean(&delays)),
            rs.iter().map(|r| r.hops).sum::<u32>().to_string(),
            rs.iter().filter(|r| r.satellite).count().to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Mean delivery delay per satellite count, improvement factors relative to
/// the satellite-free baseline, and the fitted line `factor ≈ A·n + B`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SatelliteSweep {
    pub baseline_delay: f64,
    pub points: Vec<SatellitePoint>,
    pub fit: FitSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SatellitePoint {
    pub n: u32,
    pub mean_delay: f64,
    pub factor: f64,
    /// Per-seed mean delays (NaN where nothing was delivered).
    #[serde(skip)]
    pub run_delays: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitSummary {
    pub a: f64,
    pub b: f64,
    pub r2: f64,
}

impl From<LineFit<f64>> for FitSummary {
    fn from(f: LineFit<f64>) -> Self {
        FitSummary {
            a: f.slope,
            b: f.intercept,
            r2: f.r2,
        }
    }
}

/// Least-squares fit of improvement factor against satellite count.
pub fn fit_factors(ns: &[f64], factors: &[f64]) -> Result<LineFit<f64>> {
    let mut distinct = ns.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InvalidArgument("satellite fit needs at least two distinct n values".into()));
    }
    stats::ols(ns, factors)
}

pub fn satellite_sweep(
    params: &DeadspotParams,
    n_values: &[u32],
    runs: usize,
    horizon: f64,
    base_seed: u64,
) -> Result<SatelliteSweep> {
    if runs < 30 {
        return Err(Error::InvalidArgument(format!("satellite sweep needs at least 30 runs, got {runs}")));
    }
    if let Some(n) = n_values.iter().find(|n| !(1..=9).contains(*n)) {
        return Err(Error::InvalidArgument(format!("satellite count {n} outside 1..=9")));
    }
    let mut distinct = n_values.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::InvalidArgument("satellite sweep needs at least two distinct n values".into()));
    }
    let delays_for = |n: u32| -> Result<Vec<f64>> {
        let model = Model::new(DeadspotParams {
            satellite: Some(n),
            ..params.clone()
        })?;
        sim::run_many_with(runs, base_seed, |seed| {
            let tr = model.simulate(seed, horizon, false)?;
            let s = delivery_metrics(&model.net, std::slice::from_ref(&tr))?;
            Ok(s.mean_delay.map_or(f64::NAN, |i| i.estimate))
        })
    };
    let finite_mean = |xs: &[f64]| {
        let v: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
        stats::mean(&v).unwrap_or(f64::NAN)
    };
    let baseline = finite_mean(&delays_for(0)?);
    let mut points = Vec::new();
    for n in distinct {
        let run_delays = delays_for(n)?;
        let mean_delay = finite_mean(&run_delays);
        points.push(SatellitePoint {
            n,
            mean_delay,
            factor: baseline / mean_delay,
            run_delays,
        });
    }
    let ns: Vec<f64> = points.iter().map(|p| p.n as f64).collect();
    let fs: Vec<f64> = points.iter().map(|p| p.factor).collect();
    let fit = fit_factors(&ns, &fs)?;
    Ok(SatelliteSweep {
        baseline_delay: baseline,
        points,
        fit: fit.into(),
    })
}
