//! Bounded temporal formulas over markings, checked statistically on
//! simulated traces or exactly on small explicit chains.
//!
//! Concrete grammar (whitespace is free):
//!
//! ```text
//! state  := and ( "||" and )*
//! and    := unary ( "&&" unary )*
//! unary  := "!" unary | "(" state ")" | "P" pop number "[" path "]" | atom
//! atom   := "true" | "false"
//!         | "count" "(" place ")" cmp integer
//!         | "car" "(" expression ")"
//!         | "bubble" "(" integer ")"
//!         | "delivered" cmp number
//! path   := "F" bound unary | "G" bound unary | unary ("U" | "W") bound unary
//! bound  := "[" ("t" | "time") "<=" number "]"
//!         | "[" ("s" | "space") "<=" integer ( "|" "car" "(" expression ")" )? "]"
//! pop    := "<" | "<=" | ">=" | ">"
//! cmp    := pop | "=" | "==" | "!="
//! ```
//!
//! `≤` and `≥` are accepted for `<=` and `>=`. `car(cond)` holds when some
//! token of place `Z` satisfies `cond` over its field names. `U` is the
//! strong until, `W` the weak one (unless); `F ψ` is `true U ψ` and `G φ` is
//! `φ W false`. A space bound counts firings of `spatial` transitions,
//! restricted to firings consuming a car that satisfies the condition when
//! one is given.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use crate::colour::Value;
use crate::ctmc::{self, JumpChain};
use crate::deadspot::CarToken;
use crate::error::{Error, Result};
use crate::expr::{self, Ast, Expr, ParseError, Scope};
use crate::net::{Marking, Net, PlaceId};
use crate::semantics::{self, firing_effects, EnabledFiring, ReachGraph};
use crate::sim::{self, Flow, Observer, Step};
use crate::spatial::{self, RoadNetwork};
use crate::stats;

/// Place holding car tokens.
pub const CAR_PLACE: &str = "Z";
/// Place holding free message slots.
pub const SLOT_PLACE: &str = "L";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ne,
    Ge,
    Gt,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        }
    }

    pub fn holds<T: PartialOrd>(self, a: T, b: T) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Ge => a >= b,
            CmpOp::Gt => a > b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Atomic {
    True,
    False,
    Count { place: String, op: CmpOp, value: u64 },
    /// Some car token satisfies the condition.
    Car(Ast),
    /// A proximity component of at least `k` cars exists.
    Bubble(usize),
    /// Delivered fraction of messages so far; only meaningful on traces.
    Delivered { op: CmpOp, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum StateFormula {
    Atom(Atomic),
    Not(Box<StateFormula>),
    And(Box<StateFormula>, Box<StateFormula>),
    Or(Box<StateFormula>, Box<StateFormula>),
    Prob { op: CmpOp, q: f64, path: Box<PathFormula> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Bound {
    Time(f64),
    Space { limit: u64, car: Option<Ast> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PathFormula {
    Until { lhs: StateFormula, rhs: StateFormula, bound: Bound },
    Unless { lhs: StateFormula, rhs: StateFormula, bound: Bound },
    Eventually { target: StateFormula, bound: Bound },
    Always { inv: StateFormula, bound: Bound },
}

impl PathFormula {
    pub fn bound(&self) -> &Bound {
        match self {
            PathFormula::Until { bound, .. }
            | PathFormula::Unless { bound, .. }
            | PathFormula::Eventually { bound, .. }
            | PathFormula::Always { bound, .. } => bound,
        }
    }

    /// `(φ, ψ, weak)` with the sugar expanded.
    pub fn normalized(&self) -> (StateFormula, StateFormula, bool) {
        let t = StateFormula::Atom(Atomic::True);
        let f = StateFormula::Atom(Atomic::False);
        match self {
            PathFormula::Until { lhs, rhs, .. } => (lhs.clone(), rhs.clone(), false),
            PathFormula::Unless { lhs, rhs, .. } => (lhs.clone(), rhs.clone(), true),
            PathFormula::Eventually { target, .. } => (t, target.clone(), false),
            PathFormula::Always { inv, .. } => (inv.clone(), f, true),
        }
    }
}

impl StateFormula {
    fn precedence(&self) -> u8 {
        match self {
            StateFormula::Or(..) => 1,
            StateFormula::And(..) => 2,
            _ => 3,
        }
    }

    fn write_at(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.precedence() < min {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }

    fn contains(&self, pred: &dyn Fn(&StateFormula) -> bool) -> bool {
        pred(self)
            || match self {
                StateFormula::Not(a) => a.contains(pred),
                StateFormula::And(a, b) | StateFormula::Or(a, b) => a.contains(pred) || b.contains(pred),
                _ => false,
            }
    }
}

/// Condition text without the outer parentheses the expression printer adds.
fn cond_text(ast: &Ast) -> String {
    let s = ast.to_string();
    if matches!(ast, Ast::Bin(..)) {
        s[1..s.len() - 1].to_owned()
    } else {
        s
    }
}

impl fmt::Display for Atomic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atomic::True => f.write_str("true"),
            Atomic::False => f.write_str("false"),
            Atomic::Count { place, op, value } => write!(f, "count({place}) {} {value}", op.symbol()),
            Atomic::Car(c) => write!(f, "car({})", cond_text(c)),
            Atomic::Bubble(k) => write!(f, "bubble({k})"),
            Atomic::Delivered { op, value } => write!(f, "delivered {} {value}", op.symbol()),
        }
    }
}

impl fmt::Display for StateFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateFormula::Atom(a) => write!(f, "{a}"),
            StateFormula::Not(a) => {
                f.write_str("!")?;
                a.write_at(f, 3)
            }
            StateFormula::And(a, b) => {
                a.write_at(f, 2)?;
                f.write_str(" && ")?;
                b.write_at(f, 3)
            }
            StateFormula::Or(a, b) => {
                a.write_at(f, 1)?;
                f.write_str(" || ")?;
                b.write_at(f, 2)
            }
            StateFormula::Prob { op, q, path } => write!(f, "P{}{q} [ {path} ]", op.symbol()),
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Time(t) => write!(f, "[t<={t}]"),
            Bound::Space { limit, car: None } => write!(f, "[s<={limit}]"),
            Bound::Space { limit, car: Some(c) } => write!(f, "[s<={limit} | car({})]", cond_text(c)),
        }
    }
}

impl fmt::Display for PathFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathFormula::Until { lhs, rhs, bound } | PathFormula::Unless { lhs, rhs, bound } => {
                let op = if matches!(self, PathFormula::Until { .. }) { "U" } else { "W" };
                lhs.write_at(f, 3)?;
                write!(f, " {op}{bound} ")?;
                rhs.write_at(f, 3)
            }
            PathFormula::Eventually { target, bound } => {
                write!(f, "F{bound} ")?;
                target.write_at(f, 3)
            }
            PathFormula::Always { inv, bound } => {
                write!(f, "G{bound} ")?;
                inv.write_at(f, 3)
            }
        }
    }
}

/// Parses a state formula; errors carry the byte offset of the problem.
pub fn parse_formula(text: &str) -> Result<StateFormula, ParseError> {
    let mut p = FormulaParser { text, pos: 0 };
    let f = p.state()?;
    p.skip_ws();
    if p.pos != text.len() {
        return p.fail("trailing input");
    }
    Ok(f)
}

struct FormulaParser<'t> {
    text: &'t str,
    pos: usize,
}

impl FormulaParser<'_> {
    fn fail<T>(&self, message: &str) -> Result<T, ParseError> {
        Err(ParseError {
            offset: self.pos,
            message: message.to_owned(),
        })
    }

    fn rest(&self) -> &str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.text.len() - trimmed.len();
    }

    fn eat(&mut self, tok: &str) -> bool {
        self.skip_ws();
        if self.rest().starts_with(tok) {
            self.pos += tok.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &str) -> Result<(), ParseError> {
        if self.eat(tok) {
            Ok(())
        } else {
            self.fail(&format!("expected `{tok}`"))
        }
    }

    fn peek_ident(&mut self) -> Option<&str> {
        self.skip_ws();
        let rest = self.rest();
        let mut chars = rest.char_indices();
        match chars.next() {
            Some((_, c)) if c.is_ascii_alphabetic() || c == '_' => {}
            _ => return None,
        }
        let end = chars
            .find(|(_, c)| !(c.is_ascii_alphanumeric() || *c == '_'))
            .map_or(rest.len(), |(i, _)| i);
        Some(&rest[..end])
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek_ident() {
            Some(id) => {
                let id = id.to_owned();
                self.pos += id.len();
                Ok(id)
            }
            None => self.fail("expected an identifier"),
        }
    }

    fn keyword(&mut self, kw: &str) -> bool {
        if self.peek_ident() == Some(kw) {
            self.pos += kw.len();
            true
        } else {
            false
        }
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        self.skip_ws();
        let rest = self.rest();
        let end = rest
            .char_indices()
            .find(|&(i, c)| {
                !(c.is_ascii_digit()
                    || c == '.'
                    || c == 'e'
                    || c == 'E'
                    || ((c == '-' || c == '+') && i > 0 && matches!(rest.as_bytes()[i - 1], b'e' | b'E')))
            })
            .map_or(rest.len(), |(i, _)| i);
        match rest[..end].parse::<f64>() {
            Ok(x) if end > 0 && x.is_finite() => {
                self.pos += end;
                Ok(x)
            }
            _ => self.fail("expected a number"),
        }
    }

    fn integer(&mut self) -> Result<u64, ParseError> {
        self.skip_ws();
        let rest = self.rest();
        let end = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
        match rest[..end].parse::<u64>() {
            Ok(x) => {
                self.pos += end;
                Ok(x)
            }
            Err(_) => self.fail("expected a non-negative integer"),
        }
    }

    fn cmp_op(&mut self) -> Result<CmpOp, ParseError> {
        for (tok, op) in [
            ("<=", CmpOp::Le),
            ("≤", CmpOp::Le),
            (">=", CmpOp::Ge),
            ("≥", CmpOp::Ge),
            ("==", CmpOp::Eq),
            ("!=", CmpOp::Ne),
            ("<", CmpOp::Lt),
            (">", CmpOp::Gt),
            ("=", CmpOp::Eq),
        ] {
            if self.eat(tok) {
                return Ok(op);
            }
        }
        self.fail("expected a comparison operator")
    }

    fn state(&mut self) -> Result<StateFormula, ParseError> {
        let mut left = self.and()?;
        while self.eat("||") {
            let right = self.and()?;
            left = StateFormula::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn and(&mut self) -> Result<StateFormula, ParseError> {
        let mut left = self.unary()?;
        while self.eat("&&") {
            let right = self.unary()?;
            left = StateFormula::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<StateFormula, ParseError> {
        if self.eat("!") {
            return Ok(StateFormula::Not(Box::new(self.unary()?)));
        }
        if self.eat("(") {
            let inner = self.state()?;
            self.expect(")")?;
            return Ok(inner);
        }
        let start = self.pos;
        let Some(id) = self.peek_ident().map(str::to_owned) else {
            return self.fail("expected a formula");
        };
        self.pos += id.len();
        match id.as_str() {
            "true" => Ok(StateFormula::Atom(Atomic::True)),
            "false" => Ok(StateFormula::Atom(Atomic::False)),
            "P" => self.prob(),
            "count" => {
                self.expect("(")?;
                let place = self.ident()?;
                self.expect(")")?;
                let op = self.cmp_op()?;
                let value = self.integer()?;
                Ok(StateFormula::Atom(Atomic::Count { place, op, value }))
            }
            "car" => Ok(StateFormula::Atom(Atomic::Car(self.car_cond()?))),
            "bubble" => {
                self.expect("(")?;
                let at = self.pos;
                let k = self.integer()?;
                if k < 2 {
                    self.pos = at;
                    return self.fail("bubble size must be at least 2");
                }
                self.expect(")")?;
                Ok(StateFormula::Atom(Atomic::Bubble(k as usize)))
            }
            "delivered" => {
                let op = self.cmp_op()?;
                let value = self.number()?;
                Ok(StateFormula::Atom(Atomic::Delivered { op, value }))
            }
            _ => {
                self.pos = start;
                self.fail(&format!("unknown proposition `{id}`"))
            }
        }
    }

    /// `( expression )` with balanced parentheses inside.
    fn car_cond(&mut self) -> Result<Ast, ParseError> {
        self.expect("(")?;
        let start = self.pos;
        let mut depth = 1usize;
        let mut end = None;
        for (i, c) in self.rest().char_indices() {
            match c {
                '(' => depth += 1,
                ')' => {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(start + i);
                        break;
                    }
                }
                _ => {}
            }
        }
        let Some(end) = end else {
            return self.fail("unclosed `car(`");
        };
        let ast = expr::parse(&self.text[start..end]).map_err(|e| ParseError {
            offset: start + e.offset,
            message: e.message,
        })?;
        self.pos = end + 1;
        Ok(ast)
    }

    fn prob(&mut self) -> Result<StateFormula, ParseError> {
        let at = self.pos;
        let op = self.cmp_op()?;
        if matches!(op, CmpOp::Eq | CmpOp::Ne) {
            self.pos = at;
            return self.fail("probability bound must use <, <=, >= or >");
        }
        let at = self.pos;
        let q = self.number()?;
        if !(0.0..=1.0).contains(&q) {
            self.pos = at;
            self.skip_ws();
            return self.fail("probability bound must lie in [0, 1]");
        }
        self.expect("[")?;
        let path = self.path()?;
        self.expect("]")?;
        Ok(StateFormula::Prob {
            op,
            q,
            path: Box::new(path),
        })
    }

    fn path(&mut self) -> Result<PathFormula, ParseError> {
        let save = self.pos;
        if let Some(kw @ ("F" | "G")) = self.peek_ident() {
            let always = kw == "G";
            self.pos += 1;
            if self.rest().trim_start().starts_with('[') {
                let bound = self.bound()?;
                let f = self.unary()?;
                return Ok(if always {
                    PathFormula::Always { inv: f, bound }
                } else {
                    PathFormula::Eventually { target: f, bound }
                });
            }
            self.pos = save;
        }
        let lhs = self.unary()?;
        let weak = match self.peek_ident() {
            Some("U") => false,
            Some("W") => true,
            _ => return self.fail("expected `U` or `W`"),
        };
        self.pos += 1;
        let bound = self.bound()?;
        let rhs = self.unary()?;
        Ok(if weak {
            PathFormula::Unless { lhs, rhs, bound }
        } else {
            PathFormula::Until { lhs, rhs, bound }
        })
    }

    fn bound(&mut self) -> Result<Bound, ParseError> {
        self.expect("[")?;
        let at = self.pos;
        let kind = self.ident()?;
        let space = match kind.as_str() {
            "t" | "time" => false,
            "s" | "space" => true,
            _ => {
                self.pos = at;
                self.skip_ws();
                return self.fail("expected `t` or `s` in bound");
            }
        };
        if !(self.eat("<=") || self.eat("≤")) {
            return self.fail("expected `<=` in bound");
        }
        let bound = if space {
            let limit = self.integer()?;
            let car = if self.eat("|") {
                if !self.keyword("car") {
                    return self.fail("expected `car(...)` after `|`");
                }
                Some(self.car_cond()?)
            } else {
                None
            };
            Bound::Space { limit, car }
        } else {
            let at = self.pos;
            let t = self.number()?;
            if !(t > 0.0) {
                self.pos = at;
                self.skip_ws();
                return self.fail("time bound must be positive");
            }
            Bound::Time(t)
        };
        self.expect("]")?;
        Ok(bound)
    }
}

/// A state formula without probability operators, resolved against a net.
#[derive(Debug, Clone)]
enum Prop {
    Const(bool),
    Count { place: PlaceId, op: CmpOp, value: u64 },
    Car { place: PlaceId, cond: Expr },
    Bubble { place: PlaceId, k: usize },
    Delivered { op: CmpOp, value: f64 },
    Not(Box<Prop>),
    And(Box<Prop>, Box<Prop>),
    Or(Box<Prop>, Box<Prop>),
}

/// Trace quantities some propositions need besides the marking.
#[derive(Debug, Clone, Copy, Default)]
struct TraceState {
    /// `delivered / (initial + created)`, or `None` outside a trace.
    delivered: Option<f64>,
}

fn car_scope(net: &Net, place: PlaceId) -> Result<Scope> {
    let domain = &net.places()[place.0].domain;
    let vars = domain
        .field_names()
        .ok_or_else(|| Error::InvalidArgument(format!("place `{}` does not hold records", net.places()[place.0].name)))?
        .into_iter()
        .map(str::to_owned)
        .collect();
    let mut atoms = BTreeSet::new();
    for p in net.places() {
        crate::net::collect_atoms(&p.domain, &mut atoms);
    }
    Ok(Scope {
        vars,
        constants: net.constants().clone(),
        atoms,
        functions: net.functions().clone(),
        allow_new_vars: false,
    })
}

fn compile_car(net: &Net, cond: &Ast) -> Result<(PlaceId, Expr)> {
    let place = net.place_id(CAR_PLACE)?;
    let expr = car_scope(net, place)?.compile(cond).map_err(|source| Error::Compile {
        context: format!("car condition `{}`", cond_text(cond)),
        source,
    })?;
    Ok((place, expr))
}

fn car_matches(cond: &Expr, token: &Value) -> Result<bool> {
    let env: Vec<Option<Value>> = match token.as_tuple() {
        Some(items) => items.iter().cloned().map(Some).collect(),
        None => vec![Some(token.clone())],
    };
    cond.eval_bool(&env).map_err(|e| Error::InvalidArgument(format!("car condition on {token}: {e}")))
}

impl Prop {
    fn compile(net: &Net, f: &StateFormula) -> Result<Prop> {
        Ok(match f {
            StateFormula::Atom(a) => match a {
                Atomic::True => Prop::Const(true),
                Atomic::False => Prop::Const(false),
                Atomic::Count { place, op, value } => Prop::Count {
                    place: net.place_id(place)?,
                    op: *op,
                    value: *value,
                },
                Atomic::Car(cond) => {
                    let (place, cond) = compile_car(net, cond)?;
                    Prop::Car { place, cond }
                }
                Atomic::Bubble(k) => Prop::Bubble {
                    place: net.place_id(CAR_PLACE)?,
                    k: *k,
                },
                Atomic::Delivered { op, value } => {
                    net.place_id(CAR_PLACE)?;
                    net.place_id(SLOT_PLACE)?;
                    Prop::Delivered { op: *op, value: *value }
                }
            },
            StateFormula::Not(a) => Prop::Not(Box::new(Prop::compile(net, a)?)),
            StateFormula::And(a, b) => Prop::And(Box::new(Prop::compile(net, a)?), Box::new(Prop::compile(net, b)?)),
            StateFormula::Or(a, b) => Prop::Or(Box::new(Prop::compile(net, a)?), Box::new(Prop::compile(net, b)?)),
            StateFormula::Prob { .. } => {
                return Err(Error::Unsupported("nested probability operators".into()));
            }
        })
    }

    fn eval(&self, mk: &Marking, road: Option<&RoadNetwork<f64>>, ts: TraceState) -> Result<bool> {
        Ok(match self {
            Prop::Const(b) => *b,
            Prop::Count { place, op, value } => op.holds(mk.count(*place), *value),
            Prop::Car { place, cond } => {
                for token in mk.bag(*place).keys() {
                    if car_matches(cond, token)? {
                        return Ok(true);
                    }
                }
                false
            }
            Prop::Bubble { place, k } => {
                let road = road.ok_or_else(|| Error::InvalidArgument("bubble(k) needs a road network".into()))?;
                let mut cars = Vec::new();
                for (token, &n) in mk.bag(*place) {
                    let car = CarToken::from_value(token)?;
                    for _ in 0..n {
                        cars.push(car.clone());
                    }
                }
                let ids: Vec<_> = cars.iter().enumerate().map(|(i, c)| (i as u64, c.pos())).collect();
                !spatial::bubbles(&road.proximity_graph(&ids)?, *k)?.is_empty()
            }
            Prop::Delivered { op, value } => {
                let x = ts
                    .delivered
                    .ok_or_else(|| Error::Unsupported("`delivered` is only defined on traces".into()))?;
                op.holds(x, *value)
            }
            Prop::Not(a) => !a.eval(mk, road, ts)?,
            Prop::And(a, b) => a.eval(mk, road, ts)? && b.eval(mk, road, ts)?,
            Prop::Or(a, b) => a.eval(mk, road, ts)? || b.eval(mk, road, ts)?,
        })
    }
}

/// Truth of an atomic proposition on one marking. `bubble` needs the road
/// network; `delivered` is rejected because it depends on the whole trace.
pub fn eval_atomic(net: &Net, ap: &Atomic, mk: &Marking, road: Option<&RoadNetwork<f64>>) -> Result<bool> {
    eval_state(net, &StateFormula::Atom(ap.clone()), mk, road)
}

/// Truth of a probability-free state formula on one marking.
pub fn eval_state(net: &Net, f: &StateFormula, mk: &Marking, road: Option<&RoadNetwork<f64>>) -> Result<bool> {
    net.validate_marking(mk)?;
    Prop::compile(net, f)?.eval(mk, road, TraceState::default())
}

/// The top-level probability operator of a formula to check.
fn split_prob(f: &StateFormula) -> Result<(CmpOp, f64, &PathFormula)> {
    match f {
        StateFormula::Prob { op, q, path } => Ok((*op, *q, path)),
        _ => Err(Error::Unsupported("the outermost operator must be P".into())),
    }
}

#[derive(Debug, Clone)]
struct CompiledPath {
    phi: Prop,
    psi: Prop,
    weak: bool,
    time: Option<f64>,
    space: Option<u64>,
    car: Option<(PlaceId, Expr)>,
    uses_delivered: bool,
}

impl CompiledPath {
    fn new(net: &Net, path: &PathFormula) -> Result<CompiledPath> {
        let (phi, psi, weak) = path.normalized();
        let delivered = |f: &StateFormula| matches!(f, StateFormula::Atom(Atomic::Delivered { .. }));
        let uses_delivered = phi.contains(&delivered) || psi.contains(&delivered);
        let (time, space, car) = match path.bound() {
            Bound::Time(t) => (Some(*t), None, None),
            Bound::Space { limit, car } => (None, Some(*limit), car.as_ref().map(|c| compile_car(net, c)).transpose()?),
        };
        Ok(CompiledPath {
            phi: Prop::compile(net, &phi)?,
            psi: Prop::compile(net, &psi)?,
            weak,
            time,
            space,
            car,
            uses_delivered,
        })
    }

    /// Whether a firing consuming these tokens counts towards the bound.
    fn counts(&self, consumed: &[(PlaceId, Value, u32)]) -> Result<bool> {
        let Some((place, cond)) = &self.car else {
            return Ok(true);
        };
        for (p, v, _) in consumed {
            if p == place && car_matches(cond, v)? {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Spatial steps charged to the bound by one firing.
    fn steps(&self, net: &Net, firing: &EnabledFiring, consumed: &[(PlaceId, Value, u32)]) -> Result<u64> {
        if !net.transition(firing.transition).is_spatial() || !self.counts(consumed)? {
            return Ok(0);
        }
        semantics::spatial_weight(net, firing)
    }
}

/// Decides one path formula along a single run.
struct Monitor<'a> {
    path: &'a CompiledPath,
    road: Option<&'a RoadNetwork<f64>>,
    steps: u64,
    slots: Option<PlaceId>,
    cars: Option<PlaceId>,
    initial_messages: u64,
    produced: u64,
    consumed: u64,
    verdict: Option<bool>,
}

impl Monitor<'_> {
    fn trace_state(&self) -> TraceState {
        if !self.path.uses_delivered {
            return TraceState::default();
        }
        let total = self.initial_messages + self.consumed;
        TraceState {
            delivered: Some(if total == 0 { 0.0 } else { self.produced as f64 / total as f64 }),
        }
    }

    fn observe(&mut self, mk: &Marking) -> Result<Flow> {
        let ts = self.trace_state();
        if self.path.psi.eval(mk, self.road, ts)? {
            self.verdict = Some(true);
        } else if !self.path.phi.eval(mk, self.road, ts)? {
            self.verdict = Some(false);
        }
        Ok(if self.verdict.is_some() { Flow::Stop } else { Flow::Continue })
    }
}

impl Observer for Monitor<'_> {
    fn start(&mut self, net: &Net, mk: &Marking) -> Result<Flow> {
        if self.path.uses_delivered {
            let z = net.place_id(CAR_PLACE)?;
            self.slots = Some(net.place_id(SLOT_PLACE)?);
            self.cars = Some(z);
            for (token, &n) in mk.bag(z) {
                self.initial_messages += CarToken::from_value(token)?.m.max(0) as u64 * n as u64;
            }
        }
        self.observe(mk)
    }

    fn step(&mut self, net: &Net, step: &Step<'_>) -> Result<Flow> {
        if let Some(limit) = self.path.space {
            self.steps += self.path.steps(net, step.firing, &step.effects.consumed)?;
            if self.steps > limit {
                self.verdict = Some(self.path.weak);
                return Ok(Flow::Stop);
            }
        }
        if let Some(l) = self.slots {
            self.produced += step.effects.produced.iter().filter(|e| e.0 == l).map(|e| e.2 as u64).sum::<u64>();
            self.consumed += step.effects.consumed.iter().filter(|e| e.0 == l).map(|e| e.2 as u64).sum::<u64>();
        }
        self.observe(step.marking)
    }
}

/// Outcome of monitoring one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathOutcome {
    pub holds: bool,
    /// The run reached the horizon before the formula was decided.
    pub censored: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Holds,
    Fails,
    Undecided,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Holds => "holds",
            Verdict::Fails => "fails",
            Verdict::Undecided => "undecided",
        })
    }
}

/// Verdict for `P op q` from a confidence interval; undecided when `q` lies
/// inside it.
pub fn verdict(op: CmpOp, q: f64, lo: f64, hi: f64) -> Verdict {
    let above = q < lo;
    let below = q > hi;
    match op {
        CmpOp::Ge | CmpOp::Gt if above => Verdict::Holds,
        CmpOp::Ge | CmpOp::Gt if below => Verdict::Fails,
        CmpOp::Le | CmpOp::Lt if below => Verdict::Holds,
        CmpOp::Le | CmpOp::Lt if above => Verdict::Fails,
        _ => Verdict::Undecided,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SmcOptions<'a> {
    pub samples: usize,
    /// Confidence level of the interval.
    pub level: f64,
    /// Run length for space-bounded formulas; time-bounded runs stop at the
    /// smaller of this and the bound.
    pub horizon: f64,
    pub seed: u64,
    pub road: Option<&'a RoadNetwork<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub formula: String,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    pub samples: usize,
    pub successes: u64,
    pub censored: u64,
    pub verdict: Verdict,
}

/// Monitors the path formula on a single run with the given seed.
pub fn monitor_run(
    net: &Net,
    init: &Marking,
    path: &PathFormula,
    horizon: f64,
    seed: u64,
    road: Option<&RoadNetwork<f64>>,
) -> Result<PathOutcome> {
    let compiled = CompiledPath::new(net, path)?;
    monitor_compiled(net, init, &compiled, horizon, seed, road)
}

fn monitor_compiled(
    net: &Net,
    init: &Marking,
    path: &CompiledPath,
    horizon: f64,
    seed: u64,
    road: Option<&RoadNetwork<f64>>,
) -> Result<PathOutcome> {
    let run_horizon = path.time.map_or(horizon, |t| t.min(horizon));
    let mut m = Monitor {
        path,
        road,
        steps: 0,
        slots: None,
        cars: None,
        initial_messages: 0,
        produced: 0,
        consumed: 0,
        verdict: None,
    };
    let end = sim::run(net, init, run_horizon, seed, &mut m)?;
    Ok(match m.verdict {
        Some(holds) => PathOutcome { holds, censored: false },
        None => {
            // Time bounds end naturally at the bound; anything else that
            // stops at the horizon is cut short.
            let natural = end.deadlocked || path.time.is_some_and(|t| run_horizon >= t);
            PathOutcome {
                holds: path.weak,
                censored: !natural,
            }
        }
    })
}

/// Statistical check of `P op q [path]` over `samples` runs with seeds
/// `seed, seed+1, …`, with a Wilson interval at the requested level.
pub fn smc_check(net: &Net, init: &Marking, formula: &StateFormula, opts: &SmcOptions<'_>) -> Result<CheckResult> {
    let (op, q, path) = split_prob(formula)?;
    if !(opts.horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {}", opts.horizon)));
    }
    let compiled = CompiledPath::new(net, path)?;
    let outcomes = sim::run_many_with(opts.samples, opts.seed, |seed| {
        monitor_compiled(net, init, &compiled, opts.horizon, seed, opts.road)
    })?;
    let successes = outcomes.iter().filter(|o| o.holds).count() as u64;
    let censored = outcomes.iter().filter(|o| o.censored).count() as u64;
    let ci = stats::wilson::<f64>(successes, opts.samples as u64, opts.level)?;
    Ok(CheckResult {
        formula: formula.to_string(),
        estimate: ci.estimate,
        lo: ci.lo,
        hi: ci.hi,
        level: opts.level,
        samples: opts.samples,
        successes,
        censored,
        verdict: verdict(op, q, ci.lo, ci.hi),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ExactOptions<'a> {
    pub state_limit: usize,
    /// Truncation error of uniformization and tolerance of the spatial
    /// fixed point.
    pub eps: f64,
    /// Explore the unfolded basic net instead of the coloured one.
    pub unfold: bool,
    pub road: Option<&'a RoadNetwork<f64>>,
}

impl Default for ExactOptions<'_> {
    fn default() -> Self {
        ExactOptions {
            state_limit: semantics::DEFAULT_STATE_LIMIT,
            eps: 1e-6,
            unfold: false,
            road: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactResult {
    pub formula: String,
    pub probability: f64,
    pub holds: bool,
    pub states: usize,
    pub edges: usize,
}

/// Reachability graph with coloured states and, per edge, the coloured
/// tokens the firing consumed.
struct Explored {
    graph: ReachGraph,
    states: Vec<Marking>,
    consumed: Vec<Vec<(PlaceId, Value, u32)>>,
}

fn explore(net: &Net, init: &Marking, opts: &ExactOptions<'_>, need_consumed: bool) -> Result<Explored> {
    let firing = |e: &semantics::Edge| EnabledFiring {
        transition: e.transition,
        binding: e.binding.clone(),
        rate: e.rate,
    };
    if opts.unfold {
        let unf = semantics::unfold_with_limit(net, semantics::DEFAULT_UNFOLD_LIMIT)?;
        let graph = semantics::reachability(&unf.net, &unf.map_marking(init)?, opts.state_limit)?;
        let states = graph.states.iter().map(|m| unf.fold_marking(m)).collect();
        let mut consumed = Vec::new();
        if need_consumed {
            for e in &graph.edges {
                let fx = firing_effects(&unf.net, &firing(e))?;
                consumed.push(
                    fx.consumed
                        .iter()
                        .map(|(p, _, n)| {
                            let (cp, v) = unf.origin(*p);
                            (cp, v.clone(), *n)
                        })
                        .collect(),
                );
            }
        }
        Ok(Explored { graph, states, consumed })
    } else {
        let graph = semantics::reachability(net, init, opts.state_limit)?;
        let states = graph.states.clone();
        let mut consumed = Vec::new();
        if need_consumed {
            for e in &graph.edges {
                consumed.push(firing_effects(net, &firing(e))?.consumed);
            }
        }
        Ok(Explored { graph, states, consumed })
    }
}

/// Exact probability of the path formula from `init` on the explicit
/// chain. Time bounds use uniformization; space bounds use the embedded
/// jump chain with per-edge step counts.
pub fn exact_check(net: &Net, init: &Marking, formula: &StateFormula, opts: &ExactOptions<'_>) -> Result<ExactResult> {
    let (op, q, path) = split_prob(formula)?;
    let compiled = CompiledPath::new(net, path)?;
    if compiled.uses_delivered {
        return Err(Error::Unsupported("`delivered` has no exact semantics".into()));
    }
    let ex = explore(net, init, opts, compiled.car.is_some())?;
    let label = |p: &Prop| -> Result<Vec<bool>> {
        ex.states
            .iter()
            .map(|m| p.eval(m, opts.road, TraceState::default()))
            .collect()
    };
    let phi = label(&compiled.phi)?;
    let psi = label(&compiled.psi)?;
    let g = &ex.graph;
    let probability = if let Some(t) = compiled.time {
        let c = ctmc::to_ctmc::<f64>(g, &[])?;
        let v = if compiled.weak {
            ctmc::bounded_unless(&c, &phi, &psi, t, opts.eps)?
        } else {
            ctmc::bounded_until(&c, &phi, &psi, t, opts.eps)?
        };
        v[g.initial]
    } else {
        let limit = compiled.space.expect("space bound");
        let mut moves = Vec::with_capacity(g.edges.len());
        for (i, e) in g.edges.iter().enumerate() {
            let w = if e.spatial > 0 && compiled.car.is_some() && !compiled.counts(&ex.consumed[i])? {
                0
            } else {
                e.spatial
            };
            moves.push((e.source, e.target, e.rate, w));
        }
        let jc = JumpChain::new(g.states.len(), moves);
        // Stopping on a small step size leaves an error larger than the step.
        let tol = opts.eps * 1e-3;
        if compiled.weak {
            let not_psi: Vec<bool> = psi.iter().map(|b| !b).collect();
            let bad: Vec<bool> = phi.iter().zip(&psi).map(|(a, b)| !a && !b).collect();
            1.0 - ctmc::space_bounded_until(&jc, &not_psi, &bad, limit, tol)?[g.initial]
        } else {
            ctmc::space_bounded_until(&jc, &phi, &psi, limit, tol)?[g.initial]
        }
    };
    let probability = probability.clamp(0.0, 1.0);
    Ok(ExactResult {
        formula: formula.to_string(),
        probability,
        holds: op.holds(probability, q),
        states: g.states.len(),
        edges: g.edges.len(),
    })
}
