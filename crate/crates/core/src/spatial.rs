//! Road geometry around a single hub, zone arithmetic, proximity graphs and
//! coverage bubbles.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::colour::{Sym, Value};
use crate::error::{Error, Result};
use crate::expr::{EvalError, Functions};
use crate::scalar::Scalar;

/// Straight roads joining each exit point to a hub. Positions on a road are
/// zone indices counted from the hub.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Scalar + serde::de::DeserializeOwned"))]
pub struct RoadNetwork<S> {
    pub points: BTreeMap<String, (S, S)>,
    pub hub: String,
    pub exits: BTreeSet<String>,
    /// Zones per distance unit.
    #[serde(default = "unit")]
    pub rho: S,
    /// Closeness radius in distance units.
    #[serde(default = "two")]
    pub d_close: S,
}

fn unit<S: Scalar>() -> S {
    S::one()
}

fn two<S: Scalar>() -> S {
    S::of(2.0)
}

impl<S: Scalar> Default for RoadNetwork<S> {
    /// Three exits A, B, C around the hub T.
    fn default() -> Self {
        let pts = [("A", 0.0, 0.0), ("B", 100.0, 0.0), ("C", 60.0, 20.0), ("T", 60.0, 0.0)];
        RoadNetwork {
            points: pts
                .iter()
                .map(|(n, x, y)| (n.to_string(), (S::of(*x), S::of(*y))))
                .collect(),
            hub: "T".into(),
            exits: ["A", "B", "C"].iter().map(|s| s.to_string()).collect(),
            rho: S::one(),
            d_close: S::of(2.0),
        }
    }
}

/// Leg and zone of a car: `f` is the entry leg (or the hub once past it),
/// `p` the zone index, `t` the exit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CarPos<'a> {
    pub f: &'a str,
    pub p: i64,
    pub t: &'a str,
}

impl<S: Scalar> RoadNetwork<S> {
    pub fn new(points: BTreeMap<String, (S, S)>, hub: &str, exits: &[&str], rho: S, d_close: S) -> Result<Self> {
        let rn = RoadNetwork {
            points,
            hub: hub.to_owned(),
            exits: exits.iter().map(|s| s.to_string()).collect(),
            rho,
            d_close,
        };
        rn.validate()?;
        Ok(rn)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !self.points.contains_key(&self.hub) {
            return bad(format!("hub `{}` has no coordinates", self.hub));
        }
        if self.exits.is_empty() {
            return bad("road network has no exits".into());
        }
        if self.exits.contains(&self.hub) {
            return bad("the hub cannot be an exit".into());
        }
        if let Some(e) = self.exits.iter().find(|e| !self.points.contains_key(*e)) {
            return bad(format!("exit `{e}` has no coordinates"));
        }
        if !(self.rho > S::zero()) || !self.rho.is_finite() {
            return bad(format!("zone resolution must be positive, got {}", self.rho));
        }
        if !(self.d_close >= S::zero()) || !self.d_close.is_finite() {
            return bad(format!("closeness radius must be non-negative, got {}", self.d_close));
        }
        let pts: Vec<_> = self.points.iter().collect();
        for (i, a) in pts.iter().enumerate() {
            for b in &pts[i + 1..] {
                if a.1 == b.1 {
                    return bad(format!("points `{}` and `{}` coincide", a.0, b.0));
                }
            }
        }
        Ok(())
    }

    fn coords(&self, name: &str) -> Result<(S, S)> {
        self.points
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown point `{name}`")))
    }

    fn distance_to_hub(&self, name: &str) -> Result<S> {
        let (x, y) = self.coords(name)?;
        let (hx, hy) = self.coords(&self.hub)?;
        Ok((x - hx).hypot(y - hy))
    }

    /// Zone index of an exit point: its distance to the hub in zones, rounded.
    pub fn start_zone(&self, point: &str) -> Result<i64> {
        if !self.exits.contains(point) {
            return Err(Error::InvalidArgument(format!("`{point}` is not an exit point")));
        }
        let z = (self.rho * self.distance_to_hub(point)?).round();
        z.to_i64()
            .ok_or_else(|| Error::InvalidArgument(format!("zone count for `{point}` is not finite")))
    }

    pub fn is_route(&self, f: &str, t: &str) -> bool {
        f != t && self.exits.contains(t)
    }

    pub fn max_zone(&self) -> i64 {
        self.exits.iter().filter_map(|e| self.start_zone(e).ok()).max().unwrap_or(0)
    }

    fn leg<'a>(&self, car: CarPos<'a>) -> Result<&'a str> {
        let leg = if car.f == self.hub { car.t } else { car.f };
        let max = self.start_zone(leg)?;
        if car.p < 0 || car.p > max {
            return Err(Error::InvalidArgument(format!(
                "zone {} is outside 0..={max} on leg `{leg}`",
                car.p
            )));
        }
        Ok(leg)
    }

    /// Coordinates of a car: `p / rho` units from the hub towards its leg.
    pub fn position(&self, car: CarPos<'_>) -> Result<(S, S)> {
        let leg = self.leg(car)?;
        let (hx, hy) = self.coords(&self.hub)?;
        let (x, y) = self.coords(leg)?;
        let len = (x - hx).hypot(y - hy);
        let d = S::of(car.p as f64) / self.rho;
        Ok((hx + (x - hx) * d / len, hy + (y - hy) * d / len))
    }

    /// Zones left until the exit: through the hub when inbound.
    pub fn remaining(&self, car: CarPos<'_>) -> Result<i64> {
        self.leg(car)?;
        if car.f == self.hub {
            Ok(self.start_zone(car.t)? - car.p)
        } else {
            Ok(car.p + self.start_zone(car.t)?)
        }
    }

    /// Remaining zones over speed. Only comparisons between values matter.
    pub fn eta(&self, car: CarPos<'_>, v: S) -> Result<S> {
        if !(v > S::zero()) {
            return Err(Error::InvalidArgument(format!("speed must be positive, got {v}")));
        }
        Ok(S::of(self.remaining(car)? as f64) / v)
    }

    pub fn is_close(&self, a: CarPos<'_>, b: CarPos<'_>) -> Result<bool> {
        let (ax, ay) = self.position(a)?;
        let (bx, by) = self.position(b)?;
        Ok((ax - bx).hypot(ay - by) <= self.d_close)
    }

    /// Proximity graph over identified cars; O(n²) pair check.
    pub fn proximity_graph(&self, cars: &[(u64, CarPos<'_>)]) -> Result<ProximityGraph<S>> {
        let mut ids = BTreeSet::new();
        let mut nodes = Vec::with_capacity(cars.len());
        for (id, car) in cars {
            if !ids.insert(*id) {
                return Err(Error::InvalidArgument(format!("duplicate car id {id}")));
            }
            nodes.push((*id, self.position(*car)?));
        }
        let mut edges = Vec::new();
        for i in 0..nodes.len() {
            for j in i + 1..nodes.len() {
                let (a, b) = (nodes[i].1, nodes[j].1);
                if (a.0 - b.0).hypot(a.1 - b.1) <= self.d_close {
                    edges.push((i, j));
                }
            }
        }
        Ok(ProximityGraph { nodes, edges })
    }
}

/// Cars with positions; edges join pairs within the closeness radius and
/// index into `nodes`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityGraph<S> {
    pub nodes: Vec<(u64, (S, S))>,
    pub edges: Vec<(usize, usize)>,
}

impl<S> ProximityGraph<S> {
    pub fn from_edges(nodes: Vec<(u64, (S, S))>, edges: Vec<(usize, usize)>) -> Self {
        ProximityGraph { nodes, edges }
    }
}

/// A connected group of at least two cars together with its support.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bubble {
    pub members: Vec<u64>,
    pub support: Vec<(u64, u64)>,
}

/// Connected components with at least `k` members, ordered by smallest node
/// index.
pub fn bubbles<S>(g: &ProximityGraph<S>, k: usize) -> Result<Vec<Bubble>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("bubble size must be at least 2, got {k}")));
    }
    let n = g.nodes.len();
    let mut uf = UnionFind::<usize>::new(n);
    for &(a, b) in &g.edges {
        uf.union(a, b);
    }
    let mut comps: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut first: BTreeMap<usize, usize> = BTreeMap::new();
    for i in 0..n {
        let r = uf.find(i);
        let key = *first.entry(r).or_insert(i);
        comps.entry(key).or_default().push(i);
    }
    Ok(comps
        .into_values()
        .filter(|c| c.len() >= k)
        .map(|c| {
            let root = uf.find(c[0]);
            let support = g
                .edges
                .iter()
                .filter(|(a, _)| uf.find(*a) == root)
                .map(|&(a, b)| (g.nodes[a].0, g.nodes[b].0))
                .collect();
            Bubble {
                members: c.iter().map(|&i| g.nodes[i].0).collect(),
                support,
            }
        })
        .collect())
}

fn atom_arg(args: &[Value], i: usize) -> Result<&'static str, EvalError> {
    args[i]
        .as_atom()
        .map(|s| s.as_str())
        .ok_or_else(|| EvalError::Type(format!("expected a point name, got {}", args[i])))
}

fn int_arg(args: &[Value], i: usize) -> Result<i64, EvalError> {
    args[i]
        .as_int()
        .ok_or_else(|| EvalError::Type(format!("expected an integer, got {}", args[i])))
}

fn native(e: Error) -> EvalError {
    EvalError::Native(e.to_string())
}

fn car_arg(args: &[Value], i: usize) -> Result<CarPos<'static>, EvalError> {
    Ok(CarPos {
        f: atom_arg(args, i)?,
        p: int_arg(args, i + 1)?,
        t: atom_arg(args, i + 2)?,
    })
}

/// Per-exit data precomputed for the registered functions. Anything the
/// table cannot answer falls back to the network methods, which produce the
/// errors.
struct Lookup {
    rn: Arc<RoadNetwork<f64>>,
    hub: &'static str,
    hub_xy: (f64, f64),
    /// (name, start zone, offset from hub, leg length)
    legs: Vec<(&'static str, i64, (f64, f64), f64)>,
}

impl Lookup {
    fn new(rn: Arc<RoadNetwork<f64>>) -> Lookup {
        let hub_xy = rn.coords(&rn.hub).unwrap_or((0.0, 0.0));
        let legs = rn
            .exits
            .iter()
            .filter_map(|e| {
                let z = rn.start_zone(e).ok()?;
                let (x, y) = rn.coords(e).ok()?;
                let (dx, dy) = (x - hub_xy.0, y - hub_xy.1);
                Some((Sym::new(e).as_str(), z, (dx, dy), dx.hypot(dy)))
            })
            .collect();
        Lookup {
            hub: Sym::new(&rn.hub).as_str(),
            hub_xy,
            legs,
            rn,
        }
    }

    fn exit(&self, name: &str) -> Option<&(&'static str, i64, (f64, f64), f64)> {
        self.legs.iter().find(|l| std::ptr::eq(l.0, name) || l.0 == name)
    }

    fn is_hub(&self, name: &str) -> bool {
        std::ptr::eq(self.hub, name) || self.hub == name
    }

    fn start(&self, point: &str) -> Result<i64, EvalError> {
        match self.exit(point) {
            Some(l) => Ok(l.1),
            None => self.rn.start_zone(point).map_err(native),
        }
    }

    fn leg(&self, car: CarPos<'_>) -> Option<&(&'static str, i64, (f64, f64), f64)> {
        let leg = self.exit(if self.is_hub(car.f) { car.t } else { car.f })?;
        (0..=leg.1).contains(&car.p).then_some(leg)
    }

    fn remaining(&self, car: CarPos<'_>) -> Result<i64, EvalError> {
        match (self.leg(car), self.exit(car.t)) {
            (Some(_), Some(t)) if self.is_hub(car.f) => Ok(t.1 - car.p),
            (Some(_), Some(t)) => Ok(car.p + t.1),
            _ => self.rn.remaining(car).map_err(native),
        }
    }

    fn position(&self, car: CarPos<'_>) -> Result<(f64, f64), EvalError> {
        match self.leg(car) {
            Some(&(_, _, (dx, dy), len)) => {
                let d = car.p as f64 / self.rn.rho;
                Ok((self.hub_xy.0 + dx * d / len, self.hub_xy.1 + dy * d / len))
            }
            None => self.rn.position(car).map_err(native),
        }
    }
}

/// Registers `IsRoute(f,t)`, `START(x)`, `REMAINING(f,p,t)`, `ETA(f,p,t,v)`
/// and `IsClose(f,p,t,f',p',t')` over this network.
pub fn register_functions(road: Arc<RoadNetwork<f64>>, fns: &mut Functions) {
    let lk = Arc::new(Lookup::new(road));
    let l = lk.clone();
    fns.register("IsRoute", Some(2), move |a| {
        let (f, t) = (atom_arg(a, 0)?, atom_arg(a, 1)?);
        Ok(Value::Bool(f != t && l.exit(t).is_some()))
    });
    let l = lk.clone();
    fns.register("START", Some(1), move |a| l.start(atom_arg(a, 0)?).map(Value::Int));
    let l = lk.clone();
    fns.register("REMAINING", Some(3), move |a| l.remaining(car_arg(a, 0)?).map(Value::Int));
    let l = lk.clone();
    fns.register("ETA", Some(4), move |a| {
        let v = a[3]
            .as_f64()
            .ok_or_else(|| EvalError::Type(format!("expected a speed, got {}", a[3])))?;
        if !(v > 0.0) {
            return l.rn.eta(car_arg(a, 0)?, v).map(Value::real).map_err(native);
        }
        Ok(Value::real(l.remaining(car_arg(a, 0)?)? as f64 / v))
    });
    let l = lk;
    fns.register("IsClose", Some(6), move |a| {
        let (ax, ay) = l.position(car_arg(a, 0)?)?;
        let (bx, by) = l.position(car_arg(a, 3)?)?;
        Ok(Value::Bool((ax - bx).hypot(ay - by) <= l.rn.d_close))
    });
}
