//! Coloured net structure, markings and the JSON net document.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::colour::{ColourDomain, DomainSpec, Sym, Value};
use crate::error::{Error, Result};
use crate::expr::{self, Expr, Functions, Scope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PlaceId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TransitionId(pub usize);

/// Multiset of colour values, stored sorted.
pub type Bag = BTreeMap<Value, u32>;

/// A marking: one multiset per place, indexed by [`PlaceId`]. Orders and
/// hashes canonically, so it can key a state table directly.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Marking {
    bags: Vec<Bag>,
}

impl Marking {
    pub fn empty(places: usize) -> Marking {
        Marking {
            bags: vec![Bag::new(); places],
        }
    }

    pub fn places(&self) -> usize {
        self.bags.len()
    }

    pub fn bag(&self, place: PlaceId) -> &Bag {
        &self.bags[place.0]
    }

    pub fn count(&self, place: PlaceId) -> u64 {
        self.bags[place.0].values().map(|&c| c as u64).sum()
    }

    pub fn multiplicity(&self, place: PlaceId, value: &Value) -> u32 {
        self.bags[place.0].get(value).copied().unwrap_or(0)
    }

    pub fn add(&mut self, place: PlaceId, value: Value, n: u32) {
        if n == 0 {
            return;
        }
        let c = self.bags[place.0].entry(value).or_insert(0);
        *c = c.checked_add(n).expect("token count overflow");
    }

    /// Removes `n` copies; returns false (and leaves the marking unchanged)
    /// when fewer than `n` are present.
    pub fn remove(&mut self, place: PlaceId, value: &Value, n: u32) -> bool {
        if n == 0 {
            return true;
        }
        let bag = &mut self.bags[place.0];
        match bag.get_mut(value) {
            Some(c) if *c >= n => {
                *c -= n;
                if *c == 0 {
                    bag.remove(value);
                }
                true
            }
            _ => false,
        }
    }

    pub fn clear(&mut self, place: PlaceId) {
        self.bags[place.0].clear();
    }

    pub(crate) fn push_place(&mut self, bag: Bag) {
        self.bags.push(bag);
    }

    pub fn iter(&self) -> impl Iterator<Item = (PlaceId, &Bag)> {
        self.bags.iter().enumerate().map(|(i, b)| (PlaceId(i), b))
    }
}

#[derive(Debug, Clone)]
pub struct Place {
    pub name: String,
    pub domain: ColourDomain,
}

#[derive(Debug, Clone)]
pub struct InputArc {
    pub place: PlaceId,
    pub pattern: Expr,
    pub weight: u32,
}

#[derive(Debug, Clone)]
pub struct OutputArc {
    pub place: PlaceId,
    pub expr: Expr,
    pub weight: Expr,
}

/// A compiled transition. Variables are numbered slots; `vars[i]` is the
/// name of slot `i`.
#[derive(Debug, Clone)]
pub struct TransitionDef {
    pub name: String,
    pub vars: Vec<String>,
    pub free: Vec<(usize, ColourDomain)>,
    pub inputs: Vec<InputArc>,
    pub outputs: Vec<OutputArc>,
    pub guard: Expr,
    pub rate: Expr,
    pub tags: BTreeSet<String>,
    pub spatial_weight: Option<Expr>,
    pub doc: TransitionDoc,
}

impl TransitionDef {
    pub fn is_spatial(&self) -> bool {
        self.tags.contains(SPATIAL_TAG)
    }

    /// Player labels are tags of the form `player:<name>`.
    pub fn players(&self) -> impl Iterator<Item = &str> {
        self.tags.iter().filter_map(|t| t.strip_prefix("player:"))
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v == name)
    }
}

pub const SPATIAL_TAG: &str = "spatial";

/// A complete assignment of a transition's variable slots.
pub type Binding = Arc<[Value]>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialDoc {
    Count(u32),
    Tokens(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceDoc {
    pub name: String,
    #[serde(default = "dot_name")]
    pub domain: String,
}

fn dot_name() -> String {
    "Dot".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDoc {
    pub place: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub weight: u32,
}

fn one() -> u32 {
    1
}

fn is_one(w: &u32) -> bool {
    *w == 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputDoc {
    pub place: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionDoc {
    pub name: String,
    /// Free choice variables ranging over a declared domain.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub vars: BTreeMap<String, String>,
    #[serde(default)]
    pub inputs: Vec<InputDoc>,
    #[serde(default)]
    pub outputs: Vec<OutputDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<String>,
    pub rate: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial_weight: Option<String>,
}

/// The JSON net document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetDoc {
    #[serde(default = "default_net_name")]
    pub name: String,
    #[serde(default)]
    pub domains: BTreeMap<String, DomainSpec>,
    pub places: Vec<PlaceDoc>,
    pub transitions: Vec<TransitionDoc>,
    #[serde(default)]
    pub constants: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub initial: BTreeMap<String, InitialDoc>,
}

fn default_net_name() -> String {
    "net".into()
}

/// An immutable coloured stochastic Petri net. Transitions are kept sorted
/// by name; [`TransitionId`] indexes that order.
#[derive(Debug, Clone)]
pub struct Net {
    name: String,
    places: Vec<Place>,
    transitions: Vec<TransitionDef>,
    constants: BTreeMap<String, Value>,
    functions: Functions,
    initial: Marking,
    doc: NetDoc,
    /// Marking-independent bindings for transitions whose inputs are all
    /// Dot places: (binding, rate) in canonical order.
    static_bindings: Vec<Option<Vec<(Binding, f64)>>>,
}

fn constant_value(v: &serde_json::Value) -> Result<Value> {
    match v {
        serde_json::Value::Bool(b) => Ok(Value::Bool(*b)),
        serde_json::Value::Number(n) => Ok(match n.as_i64() {
            Some(i) => Value::Int(i),
            None => Value::real(n.as_f64().unwrap_or(f64::NAN)),
        }),
        serde_json::Value::String(s) => Ok(Value::atom(s)),
        other => Err(Error::InvalidNet(format!("unsupported constant {other}"))),
    }
}

fn parse_expr(context: impl Fn() -> String, text: &str) -> Result<expr::Ast> {
    expr::parse(text).map_err(|source| Error::Parse {
        context: context(),
        source,
    })
}

impl Net {
    pub fn from_doc(doc: NetDoc, functions: &Functions) -> Result<Net> {
        let mut domains: BTreeMap<String, ColourDomain> = BTreeMap::new();
        for name in doc.domains.keys() {
            domains.insert(name.clone(), ColourDomain::from_specs(name, &doc.domains)?);
        }
        let domain = |name: &str| -> Result<ColourDomain> {
            match domains.get(name) {
                Some(d) => Ok(d.clone()),
                None if name == "Dot" => Ok(ColourDomain::dot()),
                None => Err(Error::InvalidNet(format!("unknown domain `{name}`"))),
            }
        };

        let mut places = Vec::with_capacity(doc.places.len());
        for p in &doc.places {
            if places.iter().any(|q: &Place| q.name == p.name) {
                return Err(Error::Duplicate(p.name.clone()));
            }
            places.push(Place {
                name: p.name.clone(),
                domain: domain(&p.domain)?,
            });
        }
        let place_id = |name: &str| -> Result<PlaceId> {
            places
                .iter()
                .position(|p| p.name == name)
                .map(PlaceId)
                .ok_or_else(|| Error::UnknownPlace(name.to_owned()))
        };

        let mut constants = BTreeMap::new();
        for (k, v) in &doc.constants {
            constants.insert(k.clone(), constant_value(v)?);
        }
        let mut atoms = BTreeSet::new();
        for d in domains.values() {
            collect_atoms(d, &mut atoms);
        }

        let mut tdocs = doc.transitions.clone();
        tdocs.sort_by(|a, b| a.name.cmp(&b.name));
        if let Some(w) = tdocs.windows(2).find(|w| w[0].name == w[1].name) {
            return Err(Error::Duplicate(w[0].name.clone()));
        }
        if let Some(t) = tdocs.iter().find(|t| places.iter().any(|p| p.name == t.name)) {
            return Err(Error::Duplicate(t.name.clone()));
        }

        let mut transitions = Vec::with_capacity(tdocs.len());
        for td in tdocs {
            let tname = td.name.clone();
            let ctx = |what: &str| {
                let tname = tname.clone();
                let what = what.to_owned();
                move || format!("transition `{tname}` {what}")
            };
            let compile_err = |what: &str| {
                let c = ctx(what);
                move |source| Error::Compile { context: c(), source }
            };
            let mut scope = Scope {
                constants: constants.clone(),
                atoms: atoms.clone(),
                functions: functions.clone(),
                ..Default::default()
            };
            let mut inputs = Vec::new();
            for arc in &td.inputs {
                let pid = place_id(&arc.place)?;
                if arc.weight == 0 {
                    return Err(Error::InvalidNet(format!(
                        "transition `{tname}`: input arc from `{}` has weight 0",
                        arc.place
                    )));
                }
                let pattern = match &arc.pattern {
                    Some(text) if !places[pid.0].domain.is_dot() => {
                        let ast = parse_expr(ctx("input pattern"), text)?;
                        scope.compile_pattern(&ast).map_err(compile_err("input pattern"))?
                    }
                    Some(text) if text.trim() != "dot" => {
                        return Err(Error::InvalidNet(format!(
                            "transition `{tname}`: Dot place `{}` takes no pattern",
                            arc.place
                        )))
                    }
                    _ if places[pid.0].domain.is_dot() => Expr::Lit(Value::Dot),
                    _ => {
                        return Err(Error::InvalidNet(format!(
                            "transition `{tname}`: input arc from coloured place `{}` needs a pattern",
                            arc.place
                        )))
                    }
                };
                inputs.push(InputArc {
                    place: pid,
                    pattern,
                    weight: arc.weight,
                });
            }
            let mut free = Vec::new();
            for (v, d) in &td.vars {
                if scope.slot(v).is_some() {
                    return Err(Error::InvalidNet(format!(
                        "transition `{tname}`: free variable `{v}` is also bound by an input pattern"
                    )));
                }
                let slot = scope.declare(v);
                free.push((slot, domain(d)?));
            }
            scope.allow_new_vars = true;
            let guard = match &td.guard {
                Some(g) => scope
                    .compile(&parse_expr(ctx("guard"), g)?)
                    .map_err(compile_err("guard"))?,
                None => Expr::Lit(Value::Bool(true)),
            };
            scope.allow_new_vars = false;
            let rate = scope
                .compile(&parse_expr(ctx("rate"), &td.rate)?)
                .map_err(compile_err("rate"))?;
            let mut outputs = Vec::new();
            for arc in &td.outputs {
                let pid = place_id(&arc.place)?;
                let expr = match &arc.expr {
                    Some(text) => scope
                        .compile(&parse_expr(ctx("output"), text)?)
                        .map_err(compile_err("output"))?,
                    None if places[pid.0].domain.is_dot() => Expr::Lit(Value::Dot),
                    None => {
                        return Err(Error::InvalidNet(format!(
                            "transition `{tname}`: output arc to coloured place `{}` needs an expression",
                            arc.place
                        )))
                    }
                };
                let weight = match &arc.weight {
                    Some(text) => scope
                        .compile(&parse_expr(ctx("output weight"), text)?)
                        .map_err(compile_err("output weight"))?,
                    None => Expr::Lit(Value::Int(1)),
                };
                outputs.push(OutputArc {
                    place: pid,
                    expr,
                    weight,
                });
            }
            let spatial_weight = match &td.spatial_weight {
                Some(text) => Some(
                    scope
                        .compile(&parse_expr(ctx("spatial weight"), text)?)
                        .map_err(compile_err("spatial weight"))?,
                ),
                None => None,
            };
            transitions.push(TransitionDef {
                name: td.name.clone(),
                vars: scope.vars.clone(),
                free,
                inputs,
                outputs,
                guard,
                rate,
                tags: td.tags.iter().cloned().collect(),
                spatial_weight,
                doc: td,
            });
        }

        let mut initial = Marking::empty(places.len());
        for (pname, init) in &doc.initial {
            let pid = place_id(pname)?;
            match init {
                InitialDoc::Count(n) => {
                    if !places[pid.0].domain.is_dot() {
                        return Err(Error::InvalidNet(format!(
                            "initial marking of coloured place `{pname}` must list tokens"
                        )));
                    }
                    initial.add(pid, Value::Dot, *n);
                }
                InitialDoc::Tokens(tokens) => {
                    for t in tokens {
                        let v = Value::parse(t).map_err(|e| {
                            Error::InvalidNet(format!("initial token `{t}` of `{pname}`: {e}"))
                        })?;
                        initial.add(pid, v, 1);
                    }
                }
            }
        }

        let mut net = Net {
            name: doc.name.clone(),
            places,
            transitions,
            constants,
            functions: functions.clone(),
            initial: Marking::empty(0),
            doc,
            static_bindings: Vec::new(),
        };
        net.validate_marking(&initial)?;
        net.initial = initial;
        net.static_bindings = (0..net.transitions.len())
            .map(|i| net.compute_static_bindings(TransitionId(i)))
            .collect::<Result<_>>()?;
        Ok(net)
    }

    /// Parses a JSON net document.
    pub fn from_json(text: &str, functions: &Functions) -> Result<Net> {
        let doc: NetDoc = serde_json::from_str(text)?;
        Net::from_doc(doc, functions)
    }

    pub fn doc(&self) -> &NetDoc {
        &self.doc
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.doc)?)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn places(&self) -> &[Place] {
        &self.places
    }

    pub fn transitions(&self) -> &[TransitionDef] {
        &self.transitions
    }

    pub fn transition(&self, id: TransitionId) -> &TransitionDef {
        &self.transitions[id.0]
    }

    pub fn constants(&self) -> &BTreeMap<String, Value> {
        &self.constants
    }

    pub fn functions(&self) -> &Functions {
        &self.functions
    }

    pub fn initial_marking(&self) -> &Marking {
        &self.initial
    }

    pub fn place_id(&self, name: &str) -> Result<PlaceId> {
        self.places
            .iter()
            .position(|p| p.name == name)
            .map(PlaceId)
            .ok_or_else(|| Error::UnknownPlace(name.to_owned()))
    }

    pub fn transition_id(&self, name: &str) -> Result<TransitionId> {
        self.transitions
            .binary_search_by(|t| t.name.as_str().cmp(name))
            .map(TransitionId)
            .map_err(|_| Error::UnknownTransition(name.to_owned()))
    }

    pub(crate) fn static_bindings(&self, id: TransitionId) -> Option<&[(Binding, f64)]> {
        self.static_bindings[id.0].as_deref()
    }

    /// Total token count at `place`, summed over colours.
    pub fn marking_count(&self, mk: &Marking, place: &str) -> Result<u64> {
        Ok(mk.count(self.place_id(place)?))
    }

    /// A copy of the multiset at `place`.
    pub fn marking_tokens(&self, mk: &Marking, place: &str) -> Result<Bag> {
        Ok(mk.bag(self.place_id(place)?).clone())
    }

    pub fn validate_marking(&self, mk: &Marking) -> Result<()> {
        if mk.places() != self.places.len() {
            return Err(Error::InvalidArgument(format!(
                "marking has {} places, net has {}",
                mk.places(),
                self.places.len()
            )));
        }
        for (pid, bag) in mk.iter() {
            let place = &self.places[pid.0];
            for (v, &c) in bag {
                if c == 0 || !place.domain.contains(v) {
                    return Err(Error::InvalidToken {
                        place: place.name.clone(),
                        value: v.to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Builds a marking from (place, token) pairs; Dot places take counts.
    pub fn marking_from(&self, counts: &[(&str, u32)], tokens: &[(&str, Value)]) -> Result<Marking> {
        let mut mk = Marking::empty(self.places.len());
        for (p, n) in counts {
            mk.add(self.place_id(p)?, Value::Dot, *n);
        }
        for (p, v) in tokens {
            mk.add(self.place_id(p)?, v.clone(), 1);
        }
        self.validate_marking(&mk)?;
        Ok(mk)
    }

    /// Extends a marking of a net this one was derived from (by appending
    /// places) with the initial tokens of the appended places.
    pub fn extend_marking(&self, mk: &Marking) -> Result<Marking> {
        if mk.places() > self.places.len() {
            return Err(Error::InvalidArgument("marking has more places than the net".into()));
        }
        let mut out = mk.clone();
        for i in mk.places()..self.places.len() {
            out.push_place(self.initial.bag(PlaceId(i)).clone());
        }
        self.validate_marking(&out)?;
        Ok(out)
    }

    /// Renders a marking as `K:3 L:4 Z:{(A,59,C,100,0)}`, omitting empty places.
    pub fn format_marking(&self, mk: &Marking) -> String {
        let mut parts = Vec::new();
        for (pid, bag) in mk.iter() {
            if bag.is_empty() {
                continue;
            }
            let place = &self.places[pid.0];
            if place.domain.is_dot() {
                parts.push(format!("{}:{}", place.name, mk.count(pid)));
            } else {
                let mut toks = Vec::new();
                for (v, &c) in bag {
                    if c == 1 {
                        toks.push(v.to_string());
                    } else {
                        toks.push(format!("{c}*{v}"));
                    }
                }
                parts.push(format!("{}:{{{}}}", place.name, toks.join(",")));
            }
        }
        if parts.is_empty() {
            "empty".into()
        } else {
            parts.join(" ")
        }
    }

    fn compute_static_bindings(&self, id: TransitionId) -> Result<Option<Vec<(Binding, f64)>>> {
        let t = &self.transitions[id.0];
        if t.inputs.iter().any(|a| !self.places[a.place.0].domain.is_dot()) {
            return Ok(None);
        }
        let mut out = Vec::new();
        let mut env: expr::Env = vec![None; t.vars.len()];
        crate::semantics::solve_free(self, t, 0, &mut env, &mut |b, r| {
            out.push((b, r));
            Ok(())
        })?;
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out.dedup_by(|a, b| a.0 == b.0);
        Ok(Some(out))
    }
}

pub(crate) fn collect_atoms(d: &ColourDomain, out: &mut BTreeSet<Sym>) {
    match d.to_spec() {
        DomainSpec::Enum { values } => out.extend(values.iter().map(|v| Sym::new(v))),
        DomainSpec::Product { .. } => {
            for c in d.components() {
                collect_atoms(c, out);
            }
        }
        _ => {}
    }
}

impl fmt::Display for Net {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "net `{}`: {} places, {} transitions",
            self.name,
            self.places.len(),
            self.transitions.len()
        )
    }
}

/// Adds a fresh Dot place `p_<transition>` holding `n` tokens with an input
/// arc to `transition`, so the transition fires at most `n` times in any run.
/// Returns the new net and the new place.
pub fn add_bound_place(net: &Net, transition: &str, n: u32) -> Result<(Net, PlaceId)> {
    if n == 0 {
        return Err(Error::InvalidArgument(format!(
            "bound for `{transition}` must be positive (n = 0 makes it dead)"
        )));
    }
    net.transition_id(transition)?;
    let mut doc = net.doc.clone();
    let mut name = format!("p_{transition}");
    let mut k = 2;
    while doc.places.iter().any(|p| p.name == name) || doc.transitions.iter().any(|t| t.name == name) {
        name = format!("p_{transition}_{k}");
        k += 1;
    }
    doc.places.push(PlaceDoc {
        name: name.clone(),
        domain: "Dot".into(),
    });
    let td = doc
        .transitions
        .iter_mut()
        .find(|t| t.name == transition)
        .expect("transition exists");
    td.inputs.push(InputDoc {
        place: name.clone(),
        pattern: None,
        weight: 1,
    });
    // Keep the caller's current initial marking rather than the document's.
    doc.initial = marking_to_initial_doc(net, &net.initial);
    doc.initial.insert(name.clone(), InitialDoc::Count(n));
    let bounded = Net::from_doc(doc, &net.functions)?;
    let pid = bounded.place_id(&name)?;
    Ok((bounded, pid))
}

pub(crate) fn marking_to_initial_doc(net: &Net, mk: &Marking) -> BTreeMap<String, InitialDoc> {
    let mut out = BTreeMap::new();
    for (pid, bag) in mk.iter() {
        let place = &net.places[pid.0];
        if bag.is_empty() {
            continue;
        }
        if place.domain.is_dot() {
            out.insert(place.name.clone(), InitialDoc::Count(mk.count(pid) as u32));
        } else {
            let mut toks = Vec::new();
            for (v, &c) in bag {
                for _ in 0..c {
                    toks.push(v.to_string());
                }
            }
            out.insert(place.name.clone(), InitialDoc::Tokens(toks));
        }
    }
    out
}
