//! Colour values and finite colour domains.

use std::collections::HashSet;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

/// An interned atom name. Ordering and equality follow the string content, so
/// canonical orders never depend on interning order.
#[derive(Clone, Copy)]
pub struct Sym(&'static str);

impl Sym {
    pub fn new(name: &str) -> Sym {
        static TABLE: OnceLock<Mutex<HashSet<&'static str>>> = OnceLock::new();
        let mut table = TABLE
            .get_or_init(Default::default)
            .lock()
            .expect("atom table poisoned");
        if let Some(s) = table.get(name) {
            return Sym(s);
        }
        let leaked: &'static str = Box::leak(name.to_owned().into_boxed_str());
        table.insert(leaked);
        Sym(leaked)
    }

    pub fn as_str(&self) -> &'static str {
        self.0
    }
}

impl PartialEq for Sym {
    fn eq(&self, other: &Self) -> bool {
        std::ptr::eq(self.0, other.0) || self.0 == other.0
    }
}
impl Eq for Sym {}

impl PartialOrd for Sym {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Sym {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        if std::ptr::eq(self.0, other.0) {
            return std::cmp::Ordering::Equal;
        }
        self.0.cmp(other.0)
    }
}
impl std::hash::Hash for Sym {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.hash(state)
    }
}
impl fmt::Debug for Sym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0)
    }
}
impl fmt::Display for Sym {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0)
    }
}

/// A colour value. `Real` only appears as an intermediate result of
/// expressions (rates, ETAs); colour domains never contain reals.
/// Equality is structural (the pointer check is a shortcut), so the derived
/// hash agrees with it.
#[allow(clippy::derived_hash_with_manual_eq)]
#[derive(Clone, Eq, Hash)]
pub enum Value {
    Dot,
    Bool(bool),
    Int(i64),
    Real(OrderedFloat<f64>),
    Atom(Sym),
    Tuple(Arc<[Value]>),
}

impl Value {
    fn rank(&self) -> u8 {
        match self {
            Value::Dot => 0,
            Value::Bool(_) => 1,
            Value::Int(_) => 2,
            Value::Real(_) => 3,
            Value::Atom(_) => 4,
            Value::Tuple(_) => 5,
        }
    }
}

// Same order as the variant-then-content derive, with shared tuples compared
// by pointer first.
impl Ord for Value {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        match (self, other) {
            (Value::Dot, Value::Dot) => std::cmp::Ordering::Equal,
            (Value::Bool(a), Value::Bool(b)) => a.cmp(b),
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Real(a), Value::Real(b)) => a.cmp(b),
            (Value::Atom(a), Value::Atom(b)) => a.cmp(b),
            (Value::Tuple(a), Value::Tuple(b)) => {
                if Arc::ptr_eq(a, b) {
                    std::cmp::Ordering::Equal
                } else {
                    a.iter().cmp(b.iter())
                }
            }
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Dot, Value::Dot) => true,
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Real(a), Value::Real(b)) => a == b,
            (Value::Atom(a), Value::Atom(b)) => a == b,
            (Value::Tuple(a), Value::Tuple(b)) => Arc::ptr_eq(a, b) || a[..] == b[..],
            _ => false,
        }
    }
}

impl Value {
    pub fn atom(name: &str) -> Value {
        Value::Atom(Sym::new(name))
    }

    pub fn real(x: f64) -> Value {
        Value::Real(OrderedFloat(x))
    }

    pub fn tuple(items: impl Into<Arc<[Value]>>) -> Value {
        Value::Tuple(items.into())
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(r) => Some(r.0),
            _ => None,
        }
    }

    pub fn as_atom(&self) -> Option<Sym> {
        match self {
            Value::Atom(s) => Some(*s),
            _ => None,
        }
    }

    pub fn as_tuple(&self) -> Option<&[Value]> {
        match self {
            Value::Tuple(items) => Some(items),
            _ => None,
        }
    }

    /// Parses the textual form produced by `Display` (atoms, integers,
    /// booleans, `dot`, parenthesised tuples).
    pub fn parse(text: &str) -> Result<Value, String> {
        let mut p = ValueParser {
            s: text.as_bytes(),
            pos: 0,
        };
        let v = p.value()?;
        p.skip_ws();
        if p.pos != p.s.len() {
            return Err(format!("trailing input at offset {}", p.pos));
        }
        Ok(v)
    }
}

struct ValueParser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl ValueParser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn value(&mut self) -> Result<Value, String> {
        self.skip_ws();
        match self.s.get(self.pos) {
            Some(b'(') => {
                self.pos += 1;
                let mut items = Vec::new();
                loop {
                    items.push(self.value()?);
                    self.skip_ws();
                    match self.s.get(self.pos) {
                        Some(b',') => self.pos += 1,
                        Some(b')') => {
                            self.pos += 1;
                            return Ok(Value::tuple(items));
                        }
                        _ => return Err(format!("expected ',' or ')' at offset {}", self.pos)),
                    }
                }
            }
            Some(c) if c.is_ascii_digit() || *c == b'-' => {
                let start = self.pos;
                self.pos += 1;
                while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                let text = std::str::from_utf8(&self.s[start..self.pos]).unwrap();
                text.parse::<i64>()
                    .map(Value::Int)
                    .map_err(|e| format!("bad integer at offset {start}: {e}"))
            }
            Some(c) if c.is_ascii_alphabetic() || *c == b'_' => {
                let start = self.pos;
                while self.pos < self.s.len()
                    && (self.s[self.pos].is_ascii_alphanumeric() || self.s[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let word = std::str::from_utf8(&self.s[start..self.pos]).unwrap();
                Ok(match word {
                    "true" => Value::Bool(true),
                    "false" => Value::Bool(false),
                    "dot" => Value::Dot,
                    _ => Value::atom(word),
                })
            }
            _ => Err(format!("expected a value at offset {}", self.pos)),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Dot => f.write_str("dot"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{}", r.0),
            Value::Atom(s) => f.write_str(s.as_str()),
            Value::Tuple(items) => {
                f.write_str("(")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

/// The shape of a colour domain as written in a net document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainSpec {
    Dot,
    Bool,
    Enum { values: Vec<String> },
    Range { lo: i64, hi: i64 },
    Set { values: Vec<i64> },
    /// Named components, each referring to another declared domain.
    Product { fields: Vec<(String, String)> },
}

/// A finite, ordered colour domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ColourDomain {
    name: String,
    kind: DomainKind,
}

#[derive(Debug, Clone, PartialEq)]
enum DomainKind {
    Dot,
    Bool,
    Atoms(Vec<Sym>),
    Range(i64, i64),
    Ints(Vec<i64>),
    Product(Vec<(String, ColourDomain)>),
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DomainError {
    #[error("domain `{0}` is empty")]
    Empty(String),
    #[error("domain `{0}` has duplicate values")]
    Duplicate(String),
    #[error("domain `{0}` refers to unknown domain `{1}`")]
    Unknown(String, String),
    #[error("domain `{0}` is recursive")]
    Recursive(String),
}

impl ColourDomain {
    pub fn dot() -> ColourDomain {
        ColourDomain {
            name: "Dot".into(),
            kind: DomainKind::Dot,
        }
    }

    pub fn boolean(name: &str) -> ColourDomain {
        ColourDomain {
            name: name.into(),
            kind: DomainKind::Bool,
        }
    }

    pub fn atoms<S: AsRef<str>>(name: &str, values: &[S]) -> Result<ColourDomain, DomainError> {
        if values.is_empty() {
            return Err(DomainError::Empty(name.into()));
        }
        let mut syms: Vec<Sym> = values.iter().map(|v| Sym::new(v.as_ref())).collect();
        syms.sort();
        let before = syms.len();
        syms.dedup();
        if syms.len() != before {
            return Err(DomainError::Duplicate(name.into()));
        }
        Ok(ColourDomain {
            name: name.into(),
            kind: DomainKind::Atoms(syms),
        })
    }

    pub fn range(name: &str, lo: i64, hi: i64) -> Result<ColourDomain, DomainError> {
        if hi < lo {
            return Err(DomainError::Empty(name.into()));
        }
        Ok(ColourDomain {
            name: name.into(),
            kind: DomainKind::Range(lo, hi),
        })
    }

    pub fn ints(name: &str, values: &[i64]) -> Result<ColourDomain, DomainError> {
        if values.is_empty() {
            return Err(DomainError::Empty(name.into()));
        }
        let mut v = values.to_vec();
        v.sort_unstable();
        let before = v.len();
        v.dedup();
        if v.len() != before {
            return Err(DomainError::Duplicate(name.into()));
        }
        Ok(ColourDomain {
            name: name.into(),
            kind: DomainKind::Ints(v),
        })
    }

    pub fn product(name: &str, fields: Vec<(String, ColourDomain)>) -> Result<ColourDomain, DomainError> {
        if fields.is_empty() {
            return Err(DomainError::Empty(name.into()));
        }
        Ok(ColourDomain {
            name: name.into(),
            kind: DomainKind::Product(fields),
        })
    }

    /// Resolves a named domain spec against the other specs in a document.
    pub fn from_specs(
        name: &str,
        specs: &std::collections::BTreeMap<String, DomainSpec>,
    ) -> Result<ColourDomain, DomainError> {
        fn go(
            name: &str,
            specs: &std::collections::BTreeMap<String, DomainSpec>,
            stack: &mut Vec<String>,
        ) -> Result<ColourDomain, DomainError> {
            if name == "Dot" && !specs.contains_key("Dot") {
                return Ok(ColourDomain::dot());
            }
            if stack.iter().any(|s| s == name) {
                return Err(DomainError::Recursive(name.into()));
            }
            let spec = specs
                .get(name)
                .ok_or_else(|| DomainError::Unknown(stack.last().cloned().unwrap_or_default(), name.into()))?;
            stack.push(name.into());
            let d = match spec {
                DomainSpec::Dot => Ok(ColourDomain {
                    name: name.into(),
                    kind: DomainKind::Dot,
                }),
                DomainSpec::Bool => Ok(ColourDomain::boolean(name)),
                DomainSpec::Enum { values } => ColourDomain::atoms(name, values),
                DomainSpec::Range { lo, hi } => ColourDomain::range(name, *lo, *hi),
                DomainSpec::Set { values } => ColourDomain::ints(name, values),
                DomainSpec::Product { fields } => {
                    let mut comps = Vec::with_capacity(fields.len());
                    for (fname, dname) in fields {
                        comps.push((fname.clone(), go(dname, specs, stack)?));
                    }
                    ColourDomain::product(name, comps)
                }
            };
            stack.pop();
            d
        }
        go(name, specs, &mut Vec::new())
    }

    pub fn to_spec(&self) -> DomainSpec {
        match &self.kind {
            DomainKind::Dot => DomainSpec::Dot,
            DomainKind::Bool => DomainSpec::Bool,
            DomainKind::Atoms(a) => DomainSpec::Enum {
                values: a.iter().map(|s| s.as_str().to_owned()).collect(),
            },
            DomainKind::Range(lo, hi) => DomainSpec::Range { lo: *lo, hi: *hi },
            DomainKind::Ints(v) => DomainSpec::Set { values: v.clone() },
            DomainKind::Product(fields) => DomainSpec::Product {
                fields: fields
                    .iter()
                    .map(|(f, d)| (f.clone(), d.name.clone()))
                    .collect(),
            },
        }
    }

    /// Component domains of a product, for writing a document back out.
    pub fn components(&self) -> Vec<&ColourDomain> {
        match &self.kind {
            DomainKind::Product(fields) => fields.iter().map(|(_, d)| d).collect(),
            _ => Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_dot(&self) -> bool {
        matches!(self.kind, DomainKind::Dot)
    }

    /// Field names of a product domain.
    pub fn field_names(&self) -> Option<Vec<&str>> {
        match &self.kind {
            DomainKind::Product(fields) => Some(fields.iter().map(|(n, _)| n.as_str()).collect()),
            _ => None,
        }
    }

    pub fn size(&self) -> u128 {
        match &self.kind {
            DomainKind::Dot => 1,
            DomainKind::Bool => 2,
            DomainKind::Atoms(a) => a.len() as u128,
            DomainKind::Range(lo, hi) => (hi - lo + 1) as u128,
            DomainKind::Ints(v) => v.len() as u128,
            DomainKind::Product(fields) => fields
                .iter()
                .map(|(_, d)| d.size())
                .fold(1u128, |a, b| a.saturating_mul(b)),
        }
    }

    pub fn contains(&self, v: &Value) -> bool {
        match (&self.kind, v) {
            (DomainKind::Dot, Value::Dot) => true,
            (DomainKind::Bool, Value::Bool(_)) => true,
            (DomainKind::Atoms(a), Value::Atom(s)) => a.binary_search(s).is_ok(),
            (DomainKind::Range(lo, hi), Value::Int(i)) => lo <= i && i <= hi,
            (DomainKind::Ints(vals), Value::Int(i)) => vals.binary_search(i).is_ok(),
            (DomainKind::Product(fields), Value::Tuple(items)) => {
                fields.len() == items.len()
                    && fields.iter().zip(items.iter()).all(|((_, d), x)| d.contains(x))
            }
            _ => false,
        }
    }

    /// All values in canonical (ascending) order.
    pub fn values(&self) -> Vec<Value> {
        match &self.kind {
            DomainKind::Dot => vec![Value::Dot],
            DomainKind::Bool => vec![Value::Bool(false), Value::Bool(true)],
            DomainKind::Atoms(a) => a.iter().map(|s| Value::Atom(*s)).collect(),
            DomainKind::Range(lo, hi) => (*lo..=*hi).map(Value::Int).collect(),
            DomainKind::Ints(v) => v.iter().copied().map(Value::Int).collect(),
            DomainKind::Product(fields) => {
                let mut out: Vec<Vec<Value>> = vec![Vec::new()];
                for (_, d) in fields {
                    let vals = d.values();
                    let mut next = Vec::with_capacity(out.len() * vals.len());
                    for prefix in &out {
                        for v in &vals {
                            let mut p = prefix.clone();
                            p.push(v.clone());
                            next.push(p);
                        }
                    }
                    out = next;
                }
                out.into_iter().map(Value::tuple).collect()
            }
        }
    }
}
