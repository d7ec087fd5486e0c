//! Enabling and firing, conflict sets, unfolding to a basic net, and
//! reachability-graph extraction.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use petgraph::unionfind::UnionFind;
use smallvec::SmallVec;

use crate::colour::Value;
use crate::error::{Error, Result};
use crate::expr::{Env, EvalError};
use crate::net::{
    Binding, InputDoc, Marking, Net, NetDoc, OutputDoc, PlaceDoc, PlaceId, TransitionDef, TransitionDoc,
    TransitionId,
};

/// A transition together with a complete binding that is enabled in some
/// marking, and the rate of that binding.
#[derive(Debug, Clone)]
pub struct EnabledFiring {
    pub transition: TransitionId,
    pub binding: Binding,
    pub rate: f64,
}

impl PartialEq for EnabledFiring {
    fn eq(&self, other: &Self) -> bool {
        self.transition == other.transition && self.binding == other.binding
    }
}
impl Eq for EnabledFiring {}
impl PartialOrd for EnabledFiring {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for EnabledFiring {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.transition, &self.binding).cmp(&(other.transition, &other.binding))
    }
}

impl EnabledFiring {
    /// Binding as a name→value map.
    pub fn binding_map(&self, net: &Net) -> BTreeMap<String, Value> {
        let t = net.transition(self.transition);
        t.vars.iter().cloned().zip(self.binding.iter().cloned()).collect()
    }

    pub fn value(&self, net: &Net, var: &str) -> Option<&Value> {
        net.transition(self.transition).slot(var).map(|s| &self.binding[s])
    }

    pub fn describe(&self, net: &Net) -> String {
        let t = net.transition(self.transition);
        let mut s = format!("{}[", t.name);
        for (i, (n, v)) in t.vars.iter().zip(self.binding.iter()).enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{n}={v}");
        }
        s.push(']');
        s
    }
}

/// Tokens removed and added by one firing, aggregated per (place, colour).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Effects {
    pub consumed: Vec<(PlaceId, Value, u32)>,
    pub produced: Vec<(PlaceId, Value, u32)>,
}

pub(crate) fn eval_error(t: &TransitionDef, e: EvalError) -> Error {
    let e = match e {
        EvalError::Unbound(s) => {
            let name = s
                .strip_prefix('#')
                .and_then(|i| i.parse::<usize>().ok())
                .and_then(|i| t.vars.get(i).cloned())
                .unwrap_or(s);
            EvalError::Unbound(name)
        }
        other => other,
    };
    Error::Eval {
        transition: t.name.clone(),
        source: e,
    }
}

/// Enumerates free variables, then solves the guard, reporting every complete
/// binding with a positive rate.
pub(crate) fn solve_free(
    net: &Net,
    t: &TransitionDef,
    idx: usize,
    env: &mut Env,
    out: &mut dyn FnMut(Binding, f64) -> Result<(), EvalError>,
) -> Result<()> {
    solve_free_inner(t, idx, env, out).map_err(|e| eval_error(t, e))?;
    let _ = net;
    Ok(())
}

fn solve_free_inner(
    t: &TransitionDef,
    idx: usize,
    env: &mut Env,
    out: &mut dyn FnMut(Binding, f64) -> Result<(), EvalError>,
) -> Result<(), EvalError> {
    if let Some((slot, domain)) = t.free.get(idx) {
        for v in domain.values() {
            env[*slot] = Some(v);
            solve_free_inner(t, idx + 1, env, out)?;
        }
        env[*slot] = None;
        return Ok(());
    }
    if env.iter().all(Option::is_some) {
        if !t.guard.eval_bool(env)? {
            return Ok(());
        }
        let rate = t.rate.eval_f64(env)?;
        if !rate.is_finite() || rate < 0.0 {
            return Err(EvalError::Native(format!("rate {rate} is not a non-negative real")));
        }
        if rate > 0.0 {
            out(env.iter().map(|v| v.clone().unwrap()).collect(), rate)?;
        }
        return Ok(());
    }
    t.guard.solve(env, &mut |e| {
        let mut vals = Vec::with_capacity(e.len());
        for (i, v) in e.iter().enumerate() {
            match v {
                Some(v) => vals.push(v.clone()),
                None => return Err(EvalError::Unbound(format!("#{i}"))),
            }
        }
        let rate = t.rate.eval_f64(e)?;
        if !rate.is_finite() || rate < 0.0 {
            return Err(EvalError::Native(format!("rate {rate} is not a non-negative real")));
        }
        // Zero-rate bindings can never fire and are not reported.
        if rate > 0.0 {
            out(Binding::from(vals), rate)?;
        }
        Ok(())
    })
}

fn is_ground(e: &crate::expr::Expr, env: &Env) -> bool {
    use crate::expr::Expr;
    match e {
        Expr::Var(s) => env[*s].is_some(),
        Expr::Lit(_) => true,
        Expr::Tuple(items) => items.iter().all(|i| is_ground(i, env)),
        _ => false,
    }
}

type Taken = SmallVec<[(PlaceId, Value, u32); 4]>;

#[allow(clippy::too_many_arguments)]
fn enum_inputs(
    t: &TransitionDef,
    mk: &Marking,
    arc_idx: usize,
    env: &mut Env,
    trail: &mut Vec<usize>,
    taken: &mut Taken,
    out: &mut dyn FnMut(Binding, f64) -> Result<(), EvalError>,
) -> Result<(), EvalError> {
    let Some(arc) = t.inputs.get(arc_idx) else {
        return solve_free_inner(t, 0, env, out);
    };
    let used = |taken: &Taken, v: &Value| -> u32 {
        taken
            .iter()
            .filter(|(p, w, _)| *p == arc.place && w == v)
            .map(|x| x.2)
            .sum()
    };
    if is_ground(&arc.pattern, env) {
        let v = arc.pattern.eval(env)?;
        if mk.multiplicity(arc.place, &v) >= used(taken, &v) + arc.weight {
            taken.push((arc.place, v, arc.weight));
            enum_inputs(t, mk, arc_idx + 1, env, trail, taken, out)?;
            taken.pop();
        }
        return Ok(());
    }
    for (colour, &count) in mk.bag(arc.place) {
        if count < used(taken, colour) + arc.weight {
            continue;
        }
        let mark = trail.len();
        if arc.pattern.match_value(colour, env, trail) {
            taken.push((arc.place, colour.clone(), arc.weight));
            let r = enum_inputs(t, mk, arc_idx + 1, env, trail, taken, out);
            taken.pop();
            if let Err(e) = r {
                for s in trail.drain(mark..) {
                    env[s] = None;
                }
                return Err(e);
            }
        }
        for s in trail.drain(mark..) {
            env[s] = None;
        }
    }
    Ok(())
}

/// Appends the enabled firings of one transition, in canonical binding order.
pub fn enabled_of(net: &Net, mk: &Marking, id: TransitionId, out: &mut Vec<EnabledFiring>) -> Result<()> {
    let t = net.transition(id);
    if let Some(stat) = net.static_bindings(id) {
        let mut need: SmallVec<[(PlaceId, u64); 4]> = SmallVec::new();
        for a in &t.inputs {
            match need.iter_mut().find(|(p, _)| *p == a.place) {
                Some(n) => n.1 += a.weight as u64,
                None => need.push((a.place, a.weight as u64)),
            }
        }
        if need.iter().all(|(p, n)| mk.count(*p) >= *n) {
            out.extend(stat.iter().map(|(b, r)| EnabledFiring {
                transition: id,
                binding: b.clone(),
                rate: *r,
            }));
        }
        return Ok(());
    }
    let start = out.len();
    let mut env: Env = vec![None; t.vars.len()];
    let mut trail = Vec::new();
    let mut taken = Taken::new();
    enum_inputs(t, mk, 0, &mut env, &mut trail, &mut taken, &mut |binding, rate| {
        out.push(EnabledFiring {
            transition: id,
            binding,
            rate,
        });
        Ok(())
    })
    .map_err(|e| eval_error(t, e))?;
    let slice = &mut out[start..];
    if !slice.windows(2).all(|w| w[0].binding < w[1].binding) {
        slice.sort();
        let mut v = out.split_off(start);
        v.dedup();
        out.extend(v);
    }
    Ok(())
}

/// All enabled (transition, binding) pairs, sorted by transition name and then
/// binding values.
pub fn enabled_firings(net: &Net, mk: &Marking) -> Result<Vec<EnabledFiring>> {
    let mut out = Vec::new();
    for i in 0..net.transitions().len() {
        enabled_of(net, mk, TransitionId(i), &mut out)?;
    }
    Ok(out)
}

fn binding_env(firing: &EnabledFiring) -> Env {
    firing.binding.iter().cloned().map(Some).collect()
}

/// The tokens a firing consumes and produces. Does not look at any marking.
pub fn firing_effects(net: &Net, firing: &EnabledFiring) -> Result<Effects> {
    let t = net.transition(firing.transition);
    if firing.binding.len() != t.vars.len() {
        return Err(Error::InvalidArgument(format!(
            "binding for `{}` has {} values, expected {}",
            t.name,
            firing.binding.len(),
            t.vars.len()
        )));
    }
    let env = binding_env(firing);
    let mut fx = Effects::default();
    let push = |list: &mut Vec<(PlaceId, Value, u32)>, p: PlaceId, v: Value, n: u32| {
        if n == 0 {
            return;
        }
        match list.iter_mut().find(|(q, w, _)| *q == p && *w == v) {
            Some(e) => e.2 += n,
            None => list.push((p, v, n)),
        }
    };
    for arc in &t.inputs {
        let v = arc.pattern.eval(&env).map_err(|e| eval_error(t, e))?;
        push(&mut fx.consumed, arc.place, v, arc.weight);
    }
    for arc in &t.outputs {
        let v = arc.expr.eval(&env).map_err(|e| eval_error(t, e))?;
        let w = arc.weight.eval_int(&env).map_err(|e| eval_error(t, e))?;
        let w = u32::try_from(w).map_err(|_| {
            eval_error(t, EvalError::Native(format!("output weight {w} is negative or too large")))
        })?;
        let place = &net.places()[arc.place.0];
        if w > 0 && !place.domain.contains(&v) {
            return Err(Error::InvalidToken {
                place: place.name.clone(),
                value: v.to_string(),
            });
        }
        push(&mut fx.produced, arc.place, v, w);
    }
    Ok(fx)
}

fn guard_holds(t: &TransitionDef, firing: &EnabledFiring) -> Result<bool> {
    let mut env = binding_env(firing);
    let mut holds = false;
    t.guard
        .solve(&mut env, &mut |_| {
            holds = true;
            Ok(())
        })
        .map_err(|e| eval_error(t, e))?;
    Ok(holds)
}

/// Fires in place, returning the effects. Checks the guard and token
/// availability; the marking is untouched on error.
pub fn fire_in_place(net: &Net, mk: &mut Marking, firing: &EnabledFiring) -> Result<Effects> {
    let t = net.transition(firing.transition);
    let fx = firing_effects(net, firing)?;
    let available = fx
        .consumed
        .iter()
        .all(|(p, v, n)| mk.multiplicity(*p, v) >= *n);
    if !available || !guard_holds(t, firing)? {
        return Err(Error::NotEnabled(firing.describe(net)));
    }
    for (p, v, n) in &fx.consumed {
        let ok = mk.remove(*p, v, *n);
        debug_assert!(ok);
    }
    for (p, v, n) in &fx.produced {
        mk.add(*p, v.clone(), *n);
    }
    Ok(fx)
}

/// Successor marking; `mk` is left unchanged.
pub fn fire(net: &Net, mk: &Marking, firing: &EnabledFiring) -> Result<Marking> {
    let mut next = mk.clone();
    fire_in_place(net, &mut next, firing)?;
    Ok(next)
}

/// Number of spatial steps a firing contributes: the transition's spatial
/// weight expression when present, otherwise 1 for `spatial`-tagged
/// transitions and 0 for the rest.
pub fn spatial_weight(net: &Net, firing: &EnabledFiring) -> Result<u64> {
    let t = net.transition(firing.transition);
    if !t.is_spatial() {
        return Ok(0);
    }
    match &t.spatial_weight {
        None => Ok(1),
        Some(e) => {
            let w = e.eval_int(&binding_env(firing)).map_err(|e| eval_error(t, e))?;
            u64::try_from(w)
                .map_err(|_| eval_error(t, EvalError::Native(format!("negative spatial weight {w}"))))
        }
    }
}

type Key = SmallVec<[Value; 2]>;

#[allow(clippy::too_many_arguments)]
fn enum_keyed(
    t: &TransitionDef,
    stat: Option<&[(Binding, f64)]>,
    mk: &Marking,
    arc_idx: usize,
    restrict: Option<(usize, &[Value])>,
    env: &mut Env,
    trail: &mut Vec<usize>,
    taken: &mut Taken,
    out: &mut dyn FnMut(&Taken, Binding, f64),
) -> Result<(), EvalError> {
    let Some(arc) = t.inputs.get(arc_idx) else {
        if let Some(stat) = stat {
            for (b, r) in stat {
                out(taken, b.clone(), *r);
            }
            return Ok(());
        }
        let snapshot = taken.clone();
        return solve_free_inner(t, 0, env, &mut |b, r| {
            out(&snapshot, b, r);
            Ok(())
        });
    };
    let used = |taken: &Taken, v: &Value| -> u32 {
        taken
            .iter()
            .filter(|(p, w, _)| *p == arc.place && w == v)
            .map(|x| x.2)
            .sum()
    };
    let only = match restrict {
        Some((i, colours)) if i == arc_idx => Some(colours),
        _ => None,
    };
    if is_ground(&arc.pattern, env) {
        let v = arc.pattern.eval(env)?;
        if only.is_some_and(|c| c.binary_search(&v).is_err()) {
            return Ok(());
        }
        if mk.multiplicity(arc.place, &v) >= used(taken, &v) + arc.weight {
            taken.push((arc.place, v, arc.weight));
            enum_keyed(t, stat, mk, arc_idx + 1, restrict, env, trail, taken, out)?;
            taken.pop();
        }
        return Ok(());
    }
    let mut visit = |colour: &Value, count: u32, env: &mut Env, taken: &mut Taken| -> Result<(), EvalError> {
        if count < used(taken, colour) + arc.weight {
            return Ok(());
        }
        let mark = trail.len();
        let mut r = Ok(());
        if arc.pattern.match_value(colour, env, trail) {
            taken.push((arc.place, colour.clone(), arc.weight));
            r = enum_keyed(t, stat, mk, arc_idx + 1, restrict, env, trail, taken, out);
            taken.pop();
        }
        for s in trail.drain(mark..) {
            env[s] = None;
        }
        r
    };
    match only {
        Some(colours) => {
            for c in colours {
                let n = mk.multiplicity(arc.place, c);
                if n > 0 {
                    visit(c, n, env, taken)?;
                }
            }
        }
        None => {
            for (c, &n) in mk.bag(arc.place) {
                visit(c, n, env, taken)?;
            }
        }
    }
    Ok(())
}

/// Enabled firings of a marking, maintained incrementally. After a firing,
/// only input-token combinations that involve a changed (place, colour) pair
/// are re-evaluated.
#[derive(Debug, Clone)]
pub struct EnabledSet {
    per: Vec<BTreeMap<Key, Vec<EnabledFiring>>>,
    sums: Vec<f64>,
    /// For each place, the transitions reading it and the total input
    /// weight they draw from it.
    readers: Vec<Vec<(usize, u32)>>,
}

impl EnabledSet {
    pub fn new(net: &Net, mk: &Marking) -> Result<Self> {
        let nt = net.transitions().len();
        let mut readers = vec![Vec::new(); net.places().len()];
        for (i, t) in net.transitions().iter().enumerate() {
            for a in &t.inputs {
                let r: &mut Vec<(usize, u32)> = &mut readers[a.place.0];
                match r.iter_mut().find(|x| x.0 == i) {
                    Some(x) => x.1 += a.weight,
                    None => r.push((i, a.weight)),
                }
            }
        }
        let mut set = EnabledSet {
            per: vec![BTreeMap::new(); nt],
            sums: vec![0.0; nt],
            readers,
        };
        for i in 0..nt {
            set.per[i] = Self::enumerate(net, mk, i, None)?;
            set.resum(i);
        }
        Ok(set)
    }

    fn enumerate(
        net: &Net,
        mk: &Marking,
        i: usize,
        restrict: Option<(usize, &[Value])>,
    ) -> Result<BTreeMap<Key, Vec<EnabledFiring>>> {
        let t = &net.transitions()[i];
        let id = TransitionId(i);
        let mut found: BTreeMap<Key, Vec<EnabledFiring>> = BTreeMap::new();
        let mut env: Env = vec![None; t.vars.len()];
        let mut trail = Vec::new();
        let mut taken = Taken::new();
        enum_keyed(
            t,
            net.static_bindings(id),
            mk,
            0,
            restrict,
            &mut env,
            &mut trail,
            &mut taken,
            &mut |tk, binding, rate| {
                let key: Key = tk.iter().map(|x| x.1.clone()).collect();
                found.entry(key).or_default().push(EnabledFiring {
                    transition: id,
                    binding,
                    rate,
                });
            },
        )
        .map_err(|e| eval_error(t, e))?;
        for v in found.values_mut() {
            v.sort();
            v.dedup();
        }
        Ok(found)
    }

    fn resum(&mut self, i: usize) {
        self.sums[i] = self.per[i].values().flatten().map(|f| f.rate).sum();
    }

    /// Brings the set up to date after the (place, colour) pairs in
    /// `changed` had their multiplicity altered.
    pub fn update(&mut self, net: &Net, mk: &Marking, changed: &[(PlaceId, Value)]) -> Result<()> {
        let changes: Vec<(PlaceId, Value, u32)> = changed.iter().map(|(p, v)| (*p, v.clone(), 0)).collect();
        self.refresh(net, mk, &changes)
    }

    /// `changes` holds (place, colour, smaller of the old and new
    /// multiplicity). A transition whose total demand on the place is met by
    /// that amount sees no change in which keys are available.
    fn refresh(&mut self, net: &Net, mk: &Marking, changes: &[(PlaceId, Value, u32)]) -> Result<()> {
        let mut by_trans: BTreeMap<usize, BTreeMap<PlaceId, Vec<Value>>> = BTreeMap::new();
        for (p, v, kept) in changes {
            for &(i, demand) in &self.readers[p.0] {
                if *kept < demand {
                    by_trans.entry(i).or_default().entry(*p).or_default().push(v.clone());
                }
            }
        }
        for (i, mut by_place) in by_trans {
            for vs in by_place.values_mut() {
                vs.sort();
                vs.dedup();
            }
            let t = &net.transitions()[i];
            let hit = |key: &Key| {
                t.inputs.iter().zip(key.iter()).any(|(a, v)| {
                    by_place
                        .get(&a.place)
                        .is_some_and(|vs| vs.binary_search(v).is_ok())
                })
            };
            self.per[i].retain(|k, _| !hit(k));
            let mut fresh: BTreeMap<Key, Vec<EnabledFiring>> = BTreeMap::new();
            for (ai, a) in t.inputs.iter().enumerate() {
                if let Some(vs) = by_place.get(&a.place) {
                    for (k, v) in Self::enumerate(net, mk, i, Some((ai, vs)))? {
                        fresh.entry(k).or_insert(v);
                    }
                }
            }
            self.per[i].extend(fresh);
            self.resum(i);
        }
        Ok(())
    }

    /// Applies the change set of a firing's effects; `mk` is the marking
    /// after the firing.
    pub fn apply(&mut self, net: &Net, mk: &Marking, fx: &Effects) -> Result<()> {
        let mut changes: Vec<(PlaceId, Value, u32)> = Vec::new();
        let mut delta: Vec<(PlaceId, &Value, i64)> = Vec::new();
        for (list, sign) in [(&fx.consumed, -1i64), (&fx.produced, 1)] {
            for (p, v, n) in list {
                match delta.iter_mut().find(|d| d.0 == *p && d.1 == v) {
                    Some(d) => d.2 += sign * *n as i64,
                    None => delta.push((*p, v, sign * *n as i64)),
                }
            }
        }
        for (p, v, d) in delta {
            if d == 0 {
                continue;
            }
            let now = mk.multiplicity(p, v) as i64;
            let kept = now.min(now - d).max(0) as u32;
            changes.push((p, v.clone(), kept));
        }
        self.refresh(net, mk, &changes)
    }

    pub fn total_rate(&self) -> f64 {
        self.sums.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.per.iter().all(BTreeMap::is_empty)
    }

    pub fn iter(&self) -> impl Iterator<Item = &EnabledFiring> {
        self.per.iter().flat_map(|m| m.values().flatten())
    }

    /// The firing whose cumulative-rate interval contains `target`, scanning
    /// transitions in order.
    pub fn select(&self, mut target: f64) -> Option<&EnabledFiring> {
        let mut last = None;
        for (i, m) in self.per.iter().enumerate() {
            if m.is_empty() {
                continue;
            }
            if target >= self.sums[i] {
                target -= self.sums[i];
                last = m.values().flatten().last();
                continue;
            }
            for f in m.values().flatten() {
                if target < f.rate {
                    return Some(f);
                }
                target -= f.rate;
                last = Some(f);
            }
        }
        last
    }
}

/// Enabled firings that compete for at least one common input token
/// (transitively), with the player labels of their transitions.
#[derive(Debug, Clone)]
pub struct ConflictSet {
    pub firings: Vec<EnabledFiring>,
    pub players: BTreeSet<String>,
}

/// Partitions the enabled firings into maximal token-sharing sets.
pub fn detect_conflicts(net: &Net, mk: &Marking) -> Result<Vec<ConflictSet>> {
    let firings = enabled_firings(net, mk)?;
    let mut uf = UnionFind::<usize>::new(firings.len());
    let mut owner: HashMap<(PlaceId, Value), usize> = HashMap::new();
    for (i, f) in firings.iter().enumerate() {
        for (p, v, _) in firing_effects(net, f)?.consumed {
            match owner.get(&(p, v.clone())) {
                Some(&j) => {
                    uf.union(i, j);
                }
                None => {
                    owner.insert((p, v), i);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..firings.len() {
        groups.entry(uf.find(i)).or_default().push(i);
    }
    let mut sets: Vec<ConflictSet> = groups
        .into_values()
        .map(|idx| {
            let mut players = BTreeSet::new();
            for &i in &idx {
                players.extend(net.transition(firings[i].transition).players().map(str::to_owned));
            }
            ConflictSet {
                firings: idx.into_iter().map(|i| firings[i].clone()).collect(),
                players,
            }
        })
        .collect();
    sets.sort_by(|a, b| a.firings[0].cmp(&b.firings[0]));
    Ok(sets)
}

pub const DEFAULT_UNFOLD_LIMIT: usize = 1_000_000;

/// A basic net obtained by unfolding, with the correspondence from coloured
/// (place, colour) pairs to basic places.
#[derive(Debug, Clone)]
pub struct Unfolded {
    pub net: Net,
    index: HashMap<(PlaceId, Value), PlaceId>,
    /// Coloured place and colour of every basic place.
    origin: Vec<(PlaceId, Value)>,
    coloured_places: usize,
}

impl Unfolded {
    /// Maps a marking of the coloured net to the corresponding basic marking.
    pub fn map_marking(&self, mk: &Marking) -> Result<Marking> {
        let mut out = Marking::empty(self.net.places().len());
        for (pid, bag) in mk.iter() {
            for (v, &c) in bag {
                let b = self.index.get(&(pid, v.clone())).ok_or_else(|| {
                    Error::InvalidArgument(format!("colour {v} has no unfolded place"))
                })?;
                out.add(*b, Value::Dot, c);
            }
        }
        Ok(out)
    }

    /// Coloured place and colour a basic place stands for.
    pub fn origin(&self, basic: PlaceId) -> (PlaceId, &Value) {
        let (p, v) = &self.origin[basic.0];
        (*p, v)
    }

    /// Inverse of [`Unfolded::map_marking`].
    pub fn fold_marking(&self, mk: &Marking) -> Marking {
        let mut out = Marking::empty(self.coloured_places);
        for (pid, bag) in mk.iter() {
            let (p, v) = &self.origin[pid.0];
            for &c in bag.values() {
                out.add(*p, v.clone(), c);
            }
        }
        out
    }
}

fn basic_place_name(net: &Net, p: PlaceId, v: &Value) -> String {
    let place = &net.places()[p.0];
    if place.domain.is_dot() {
        place.name.clone()
    } else {
        format!("{}[{}]", place.name, v)
    }
}

fn enum_domain_inputs(
    net: &Net,
    t: &TransitionDef,
    arc_idx: usize,
    env: &mut Env,
    trail: &mut Vec<usize>,
    taken: &mut Taken,
    out: &mut dyn FnMut(&Taken, Binding, f64) -> Result<(), EvalError>,
) -> Result<(), EvalError> {
    let Some(arc) = t.inputs.get(arc_idx) else {
        let snapshot = taken.clone();
        return solve_free_inner(t, 0, env, &mut |b, r| out(&snapshot, b, r));
    };
    if is_ground(&arc.pattern, env) {
        let v = arc.pattern.eval(env)?;
        if net.places()[arc.place.0].domain.contains(&v) {
            taken.push((arc.place, v, arc.weight));
            enum_domain_inputs(net, t, arc_idx + 1, env, trail, taken, out)?;
            taken.pop();
        }
        return Ok(());
    }
    for colour in net.places()[arc.place.0].domain.values() {
        let mark = trail.len();
        if arc.pattern.match_value(&colour, env, trail) {
            taken.push((arc.place, colour, arc.weight));
            let r = enum_domain_inputs(net, t, arc_idx + 1, env, trail, taken, out);
            taken.pop();
            if let Err(e) = r {
                for s in trail.drain(mark..) {
                    env[s] = None;
                }
                return Err(e);
            }
        }
        for s in trail.drain(mark..) {
            env[s] = None;
        }
    }
    Ok(())
}

fn f64_text(x: f64) -> String {
    // `{:?}` is the shortest text that parses back to the same f64.
    let s = format!("{x:?}");
    if s.contains('e') {
        format!("{x:.17e}")
    } else {
        s
    }
}

/// Unfolds into a basic net with the default limit.
pub fn unfold(net: &Net) -> Result<Net> {
    Ok(unfold_with_limit(net, DEFAULT_UNFOLD_LIMIT)?.net)
}

/// Unfolds the coloured net: one Dot place per (place, colour) and one
/// fundamental transition per guard-satisfying binding whose outputs stay
/// inside their domains. Fails when the
/// candidate bindings of a transition exceed `limit`.
pub fn unfold_with_limit(net: &Net, limit: usize) -> Result<Unfolded> {
    let mut doc = NetDoc {
        name: format!("{}-unfolded", net.name()),
        domains: BTreeMap::new(),
        places: Vec::new(),
        transitions: Vec::new(),
        constants: BTreeMap::new(),
        initial: BTreeMap::new(),
    };
    let mut names: Vec<((PlaceId, Value), String)> = Vec::new();
    for (i, place) in net.places().iter().enumerate() {
        let pid = PlaceId(i);
        for v in place.domain.values() {
            let name = basic_place_name(net, pid, &v);
            doc.places.push(PlaceDoc {
                name: name.clone(),
                domain: "Dot".into(),
            });
            names.push(((pid, v), name));
        }
    }

    for t in net.transitions() {
        let mut candidates: u128 = 1;
        for a in &t.inputs {
            candidates = candidates.saturating_mul(net.places()[a.place.0].domain.size());
        }
        for (_, d) in &t.free {
            candidates = candidates.saturating_mul(d.size());
        }
        if candidates > limit as u128 {
            return Err(Error::UnfoldLimit {
                transition: t.name.clone(),
                limit,
            });
        }
        let mut found: Vec<(Binding, Vec<(PlaceId, Value, u32)>, f64)> = Vec::new();
        let mut env: Env = vec![None; t.vars.len()];
        let mut trail = Vec::new();
        let mut taken = Taken::new();
        enum_domain_inputs(net, t, 0, &mut env, &mut trail, &mut taken, &mut |tk, b, r| {
            found.push((b, tk.to_vec(), r));
            Ok(())
        })
        .map_err(|e| eval_error(t, e))?;
        found.sort_by(|a, b| a.0.cmp(&b.0));
        found.dedup_by(|a, b| a.0 == b.0);
        if found.len() > limit {
            return Err(Error::UnfoldLimit {
                transition: t.name.clone(),
                limit,
            });
        }
        for (binding, _, rate) in found {
            let firing = EnabledFiring {
                transition: net.transition_id(&t.name)?,
                binding,
                rate,
            };
            // A binding whose output leaves a colour domain can never fire.
            let fx = match firing_effects(net, &firing) {
                Err(Error::InvalidToken { .. }) => continue,
                r => r?,
            };
            let weight = spatial_weight(net, &firing)?;
            doc.transitions.push(TransitionDoc {
                name: firing.describe(net),
                vars: BTreeMap::new(),
                inputs: fx
                    .consumed
                    .iter()
                    .map(|(p, v, n)| InputDoc {
                        place: basic_place_name(net, *p, v),
                        pattern: None,
                        weight: *n,
                    })
                    .collect(),
                outputs: fx
                    .produced
                    .iter()
                    .map(|(p, v, n)| OutputDoc {
                        place: basic_place_name(net, *p, v),
                        expr: None,
                        weight: Some(n.to_string()),
                    })
                    .collect(),
                guard: None,
                rate: f64_text(rate),
                tags: t.tags.iter().cloned().collect(),
                spatial_weight: t.is_spatial().then(|| weight.to_string()),
            });
        }
    }

    let basic = Net::from_doc(doc, net.functions())?;
    let mut index = HashMap::with_capacity(names.len());
    let mut origin = vec![(PlaceId(0), Value::Dot); names.len()];
    for (key, name) in names {
        let b = basic.place_id(&name)?;
        origin[b.0] = key.clone();
        index.insert(key, b);
    }
    let mut unfolded = Unfolded {
        net: basic,
        index,
        origin,
        coloured_places: net.places().len(),
    };
    let init = unfolded.map_marking(net.initial_marking())?;
    let mut doc = unfolded.net.doc().clone();
    doc.initial = crate::net::marking_to_initial_doc(&unfolded.net, &init);
    unfolded.net = Net::from_doc(doc, net.functions())?;
    Ok(unfolded)
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub transition: TransitionId,
    pub binding: Binding,
    pub rate: f64,
    /// Spatial steps taken by this firing.
    pub spatial: u64,
}

/// Explicit reachability graph. States are sorted canonically; edges are
/// sorted by (source, transition, binding).
#[derive(Debug, Clone)]
pub struct ReachGraph {
    pub states: Vec<Marking>,
    pub edges: Vec<Edge>,
    pub initial: usize,
}

pub const DEFAULT_STATE_LIMIT: usize = 200_000;

/// Breadth-first exploration of all markings reachable from `init`. Fails
/// with [`Error::StateLimit`] instead of truncating.
pub fn reachability(net: &Net, init: &Marking, limit: usize) -> Result<ReachGraph> {
    net.validate_marking(init)?;
    let mut index: HashMap<Marking, usize> = HashMap::new();
    let mut states = vec![init.clone()];
    index.insert(init.clone(), 0);
    let mut queue = VecDeque::from([0usize]);
    let mut edges = Vec::new();
    let mut firings = Vec::new();
    while let Some(s) = queue.pop_front() {
        firings.clear();
        for i in 0..net.transitions().len() {
            enabled_of(net, &states[s], TransitionId(i), &mut firings)?;
        }
        for f in &firings {
            let mut next = states[s].clone();
            fire_in_place(net, &mut next, f)?;
            let target = match index.get(&next) {
                Some(&j) => j,
                None => {
                    if states.len() >= limit {
                        return Err(Error::StateLimit {
                            limit,
                            frontier: queue.len() + 1,
                        });
                    }
                    let j = states.len();
                    index.insert(next.clone(), j);
                    states.push(next);
                    queue.push_back(j);
                    j
                }
            };
            edges.push(Edge {
                source: s,
                target,
                transition: f.transition,
                binding: f.binding.clone(),
                rate: f.rate,
                spatial: spatial_weight(net, f)?,
            });
        }
    }

    let mut order: Vec<usize> = (0..states.len()).collect();
    order.sort_by(|&a, &b| states[a].cmp(&states[b]));
    let mut rank = vec![0; states.len()];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    let mut sorted_states = Vec::with_capacity(states.len());
    let mut slots: Vec<Option<Marking>> = states.into_iter().map(Some).collect();
    for &old in &order {
        sorted_states.push(slots[old].take().unwrap());
    }
    for e in &mut edges {
        e.source = rank[e.source];
        e.target = rank[e.target];
    }
    edges.sort_by(|a, b| (a.source, a.transition, &a.binding).cmp(&(b.source, b.transition, &b.binding)));
    Ok(ReachGraph {
        states: sorted_states,
        edges,
        initial: rank[0],
    })
}

impl ReachGraph {
    pub fn out_edges(&self, s: usize) -> &[Edge] {
        let lo = self.edges.partition_point(|e| e.source < s);
        let hi = self.edges.partition_point(|e| e.source <= s);
        &self.edges[lo..hi]
    }

    /// Graphviz rendering, one node per marking.
    pub fn to_dot(&self, net: &Net) -> String {
        let mut s = String::from("digraph reach {\n  rankdir=LR;\n");
        for (i, m) in self.states.iter().enumerate() {
            let shape = if i == self.initial { "doublecircle" } else { "ellipse" };
            let label = net.format_marking(m).replace('"', "\\\"");
            let _ = writeln!(s, "  s{i} [shape={shape}, label=\"{i}: {label}\"];");
        }
        for e in &self.edges {
            let firing = EnabledFiring {
                transition: e.transition,
                binding: e.binding.clone(),
                rate: e.rate,
            };
            let label = firing.describe(net).replace('"', "\\\"");
            let _ = writeln!(s, "  s{} -> s{} [label=\"{} @ {}\"];", e.source, e.target, label, e.rate);
        }
        s.push_str("}\n");
        s
    }
}

/// Comparison of the reachability graphs of a coloured net and its
/// unfolding.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Equivalence {
    pub coloured_states: usize,
    pub coloured_edges: usize,
    pub basic_states: usize,
    pub basic_edges: usize,
    /// Every coloured state maps onto a distinct basic state and the
    /// rate-annotated edge multisets coincide under that map.
    pub isomorphic: bool,
}

/// Explores both nets from `init` and compares their reachability graphs.
pub fn unfolding_equivalence(net: &Net, init: &Marking, limit: usize) -> Result<(Unfolded, Equivalence)> {
    let unf = unfold_with_limit(net, DEFAULT_UNFOLD_LIMIT)?;
    let coloured = reachability(net, init, limit)?;
    let basic = reachability(&unf.net, &unf.map_marking(init)?, limit)?;
    let index: HashMap<&Marking, usize> = basic.states.iter().enumerate().map(|(i, m)| (m, i)).collect();
    let mut map = Vec::with_capacity(coloured.states.len());
    for m in &coloured.states {
        map.push(index.get(&unf.map_marking(m)?).copied());
    }
    let mut isomorphic = coloured.states.len() == basic.states.len()
        && coloured.edges.len() == basic.edges.len()
        && map.iter().all(Option::is_some)
        && map[coloured.initial] == Some(basic.initial);
    if isomorphic {
        let mut a: Vec<(usize, usize, u64)> = coloured
            .edges
            .iter()
            .map(|e| (map[e.source].unwrap(), map[e.target].unwrap(), e.rate.to_bits()))
            .collect();
        let mut b: Vec<(usize, usize, u64)> = basic.edges.iter().map(|e| (e.source, e.target, e.rate.to_bits())).collect();
        a.sort_unstable();
        b.sort_unstable();
        isomorphic = a == b;
    }
    let eq = Equivalence {
        coloured_states: coloured.states.len(),
        coloured_edges: coloured.edges.len(),
        basic_states: basic.states.len(),
        basic_edges: basic.edges.len(),
        isomorphic,
    };
    Ok((unf, eq))
}
