//! The guard/rate/arc expression language.
//!
//! Expressions are parsed into an [`Ast`], then compiled against a [`Scope`]
//! that resolves identifiers to variable slots, model constants, atoms or
//! registered functions. Guards are evaluated in *solve* mode: an equality
//! whose one side is an unbound variable binds it, so a guard such as
//! `p != 0 && p' = p - 1` both tests the input and determines the output.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use smallvec::SmallVec;

use crate::colour::{Sym, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("variable `{0}` is unbound")]
    Unbound(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("arithmetic overflow")]
    Overflow,
    #[error("{0}")]
    Native(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("syntax error at offset {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompileError {
    #[error("unknown identifier `{0}`")]
    UnknownIdent(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("function `{name}` takes {expected} arguments, got {got}")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("`{0}` is not allowed in a pattern")]
    BadPattern(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
    Implies,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Eq => "=",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "&&",
            BinOp::Or => "||",
            BinOp::Implies => "=>",
        }
    }
}

/// Parsed, unresolved expression.
#[derive(Debug, Clone, PartialEq)]
pub enum Ast {
    Int(i64),
    Real(f64),
    Bool(bool),
    Ident(String),
    Call(String, Vec<Ast>),
    Tuple(Vec<Ast>),
    Neg(Box<Ast>),
    Not(Box<Ast>),
    Bin(BinOp, Box<Ast>, Box<Ast>),
}

impl fmt::Display for Ast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ast::Int(i) => write!(f, "{i}"),
            Ast::Real(r) => {
                if r.fract() == 0.0 && r.is_finite() {
                    write!(f, "{r:.1}")
                } else {
                    write!(f, "{r}")
                }
            }
            Ast::Bool(b) => write!(f, "{b}"),
            Ast::Ident(s) => f.write_str(s),
            Ast::Call(name, args) => {
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
            Ast::Tuple(items) => {
                f.write_str("(")?;
                for (i, a) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
            Ast::Neg(a) => write!(f, "-{a}"),
            Ast::Not(a) => write!(f, "!{a}"),
            Ast::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Int(i64),
    Real(f64),
    Ident(String),
    LParen,
    RParen,
    Comma,
    Op(BinOp),
    Minus,
    Not,
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |offset: usize, message: String| ParseError { offset, message };
    while i < chars.len() {
        let (off, c) = chars[i];
        let next = chars.get(i + 1).map(|(_, c)| *c);
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            let mut seen_dot = false;
            while i < chars.len() {
                let ch = chars[i].1;
                if ch.is_ascii_digit() {
                    i += 1;
                } else if ch == '.' && !seen_dot && chars.get(i + 1).is_some_and(|(_, d)| d.is_ascii_digit()) {
                    seen_dot = true;
                    i += 1;
                } else if (ch == 'e' || ch == 'E')
                    && chars
                        .get(i + 1)
                        .is_some_and(|(_, d)| d.is_ascii_digit() || *d == '-' || *d == '+')
                {
                    seen_dot = true;
                    i += 2;
                } else {
                    break;
                }
            }
            let end = chars.get(i).map(|(o, _)| *o).unwrap_or(text.len());
            let lit = &text[off..end];
            if seen_dot {
                let v = lit
                    .parse::<f64>()
                    .map_err(|e| err(chars[start].0, format!("bad number `{lit}`: {e}")))?;
                out.push((off, Tok::Real(v)));
            } else {
                let v = lit
                    .parse::<i64>()
                    .map_err(|e| err(chars[start].0, format!("bad integer `{lit}`: {e}")))?;
                out.push((off, Tok::Int(v)));
            }
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let mut s = String::new();
            while i < chars.len() && (chars[i].1.is_alphanumeric() || chars[i].1 == '_') {
                s.push(chars[i].1);
                i += 1;
            }
            while i < chars.len() && (chars[i].1 == '\'' || chars[i].1 == '′') {
                s.push('\'');
                i += 1;
            }
            let tok = match s.as_str() {
                "and" => Tok::Op(BinOp::And),
                "or" => Tok::Op(BinOp::Or),
                "not" => Tok::Not,
                _ => Tok::Ident(s),
            };
            out.push((off, tok));
            continue;
        }
        let (tok, width) = match (c, next) {
            ('(', _) => (Tok::LParen, 1),
            (')', _) => (Tok::RParen, 1),
            (',', _) => (Tok::Comma, 1),
            ('+', _) => (Tok::Op(BinOp::Add), 1),
            ('-', _) | ('−', _) => (Tok::Minus, 1),
            ('*', _) | ('·', _) => (Tok::Op(BinOp::Mul), 1),
            ('/', _) => (Tok::Op(BinOp::Div), 1),
            ('=', Some('=')) => (Tok::Op(BinOp::Eq), 2),
            ('=', Some('>')) => (Tok::Op(BinOp::Implies), 2),
            ('=', _) => (Tok::Op(BinOp::Eq), 1),
            ('!', Some('=')) => (Tok::Op(BinOp::Ne), 2),
            ('!', _) | ('¬', _) => (Tok::Not, 1),
            ('<', Some('=')) => (Tok::Op(BinOp::Le), 2),
            ('<', _) => (Tok::Op(BinOp::Lt), 1),
            ('>', Some('=')) => (Tok::Op(BinOp::Ge), 2),
            ('>', _) => (Tok::Op(BinOp::Gt), 1),
            ('&', Some('&')) => (Tok::Op(BinOp::And), 2),
            ('|', Some('|')) => (Tok::Op(BinOp::Or), 2),
            ('∧', _) => (Tok::Op(BinOp::And), 1),
            ('∨', _) => (Tok::Op(BinOp::Or), 1),
            ('≠', _) => (Tok::Op(BinOp::Ne), 1),
            ('≤', _) => (Tok::Op(BinOp::Le), 1),
            ('≥', _) => (Tok::Op(BinOp::Ge), 1),
            ('⇒', _) => (Tok::Op(BinOp::Implies), 1),
            _ => return Err(err(off, format!("unexpected character `{c}`"))),
        };
        out.push((off, tok));
        i += width;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(o, _)| *o).unwrap_or(self.end)
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == Some(t) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn implies(&mut self) -> Result<Ast, ParseError> {
        let lhs = self.or()?;
        if self.eat(&Tok::Op(BinOp::Implies)) {
            let rhs = self.implies()?;
            return Ok(Ast::Bin(BinOp::Implies, Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Ast, ParseError> {
        let mut lhs = self.and()?;
        while self.eat(&Tok::Op(BinOp::Or)) {
            let rhs = self.and()?;
            lhs = Ast::Bin(BinOp::Or, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Ast, ParseError> {
        let mut lhs = self.not()?;
        while self.eat(&Tok::Op(BinOp::And)) {
            let rhs = self.not()?;
            lhs = Ast::Bin(BinOp::And, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<Ast, ParseError> {
        if self.eat(&Tok::Not) {
            return Ok(Ast::Not(Box::new(self.not()?)));
        }
        self.cmp()
    }

    fn cmp(&mut self) -> Result<Ast, ParseError> {
        let lhs = self.sum()?;
        if let Some(Tok::Op(op @ (BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge))) =
            self.peek().cloned()
        {
            self.pos += 1;
            let rhs = self.sum()?;
            return Ok(Ast::Bin(op, Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn sum(&mut self) -> Result<Ast, ParseError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Op(BinOp::Add)) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.product()?;
            lhs = Ast::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Ast, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Op(BinOp::Mul)) => BinOp::Mul,
                Some(Tok::Op(BinOp::Div)) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Ast::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Ast, ParseError> {
        if self.eat(&Tok::Minus) {
            return Ok(match self.unary()? {
                Ast::Int(i) => Ast::Int(-i),
                Ast::Real(r) => Ast::Real(-r),
                other => Ast::Neg(Box::new(other)),
            });
        }
        if self.eat(&Tok::Not) {
            return Ok(Ast::Not(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Ast, ParseError> {
        match self.peek().cloned() {
            Some(Tok::Int(i)) => {
                self.pos += 1;
                Ok(Ast::Int(i))
            }
            Some(Tok::Real(r)) => {
                self.pos += 1;
                Ok(Ast::Real(r))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                match name.as_str() {
                    "true" => return Ok(Ast::Bool(true)),
                    "false" => return Ok(Ast::Bool(false)),
                    _ => {}
                }
                if self.eat(&Tok::LParen) {
                    let mut args = Vec::new();
                    if !self.eat(&Tok::RParen) {
                        loop {
                            args.push(self.implies()?);
                            if self.eat(&Tok::RParen) {
                                break;
                            }
                            if !self.eat(&Tok::Comma) {
                                return self.fail("expected ',' or ')'");
                            }
                        }
                    }
                    Ok(Ast::Call(name, args))
                } else {
                    Ok(Ast::Ident(name))
                }
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let first = self.implies()?;
                if self.eat(&Tok::RParen) {
                    return Ok(first);
                }
                let mut items = vec![first];
                while self.eat(&Tok::Comma) {
                    items.push(self.implies()?);
                }
                if !self.eat(&Tok::RParen) {
                    return self.fail("expected ')'");
                }
                Ok(Ast::Tuple(items))
            }
            Some(_) => self.fail("unexpected token"),
            None => self.fail("unexpected end of input"),
        }
    }
}

/// Parses an expression. Precedence, loosest first: `=>`, `||`, `&&`, `!`,
/// comparisons, `+ -`, `* /`, unary minus.
pub fn parse(text: &str) -> Result<Ast, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
    };
    let ast = p.implies()?;
    if p.pos != p.toks.len() {
        return p.fail("trailing input");
    }
    Ok(ast)
}

/// Parses a prefix of the token stream, returning the AST and the byte offset
/// where parsing stopped. Used by the formula parser to embed expressions.
pub fn parse_prefix(text: &str) -> Result<(Ast, usize), ParseError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
    };
    let ast = p.implies()?;
    Ok((ast, p.offset()))
}

pub type NativeFn = dyn Fn(&[Value]) -> Result<Value, EvalError> + Send + Sync;

/// A named native function callable from expressions.
#[derive(Clone)]
pub struct Function {
    pub name: String,
    pub arity: Option<usize>,
    pub f: Arc<NativeFn>,
}

impl fmt::Debug for Function {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{:?}", self.name, self.arity)
    }
}

/// Registry of callable functions. [`Functions::builtin`] provides `abs`,
/// `min`, `max` and `ite`.
#[derive(Clone, Debug, Default)]
pub struct Functions {
    map: BTreeMap<String, Function>,
}

impl Functions {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        let mut fs = Functions::new();
        fs.register("abs", Some(1), |a| match &a[0] {
            Value::Int(i) => Ok(Value::Int(i.checked_abs().ok_or(EvalError::Overflow)?)),
            Value::Real(r) => Ok(Value::real(r.0.abs())),
            v => Err(EvalError::Type(format!("abs of {v}"))),
        });
        fs.register("min", Some(2), |a| numeric_pick(&a[0], &a[1], true));
        fs.register("max", Some(2), |a| numeric_pick(&a[0], &a[1], false));
        fs.register("ite", Some(3), |a| match a[0] {
            Value::Bool(true) => Ok(a[1].clone()),
            Value::Bool(false) => Ok(a[2].clone()),
            ref v => Err(EvalError::Type(format!("ite condition {v} is not boolean"))),
        });
        fs
    }

    pub fn register<F>(&mut self, name: &str, arity: Option<usize>, f: F)
    where
        F: Fn(&[Value]) -> Result<Value, EvalError> + Send + Sync + 'static,
    {
        self.map.insert(
            name.to_owned(),
            Function {
                name: name.to_owned(),
                arity,
                f: Arc::new(f),
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&Function> {
        self.map.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }
}

fn numeric_pick(a: &Value, b: &Value, min: bool) -> Result<Value, EvalError> {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => Ok(Value::Int(if min { *x.min(y) } else { *x.max(y) })),
        _ => {
            let x = a.as_f64().ok_or_else(|| EvalError::Type(format!("{a} is not numeric")))?;
            let y = b.as_f64().ok_or_else(|| EvalError::Type(format!("{b} is not numeric")))?;
            Ok(Value::real(if min { x.min(y) } else { x.max(y) }))
        }
    }
}

/// Compiled expression with variables resolved to environment slots.
#[derive(Debug, Clone)]
pub enum Expr {
    Lit(Value),
    Var(usize),
    Tuple(Vec<Expr>),
    Call(Function, Vec<Expr>),
    Neg(Box<Expr>),
    Not(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

/// Variable environment: one optional value per slot.
pub type Env = Vec<Option<Value>>;

/// Name resolution for compilation.
#[derive(Debug, Clone, Default)]
pub struct Scope {
    pub vars: Vec<String>,
    pub constants: BTreeMap<String, Value>,
    pub atoms: BTreeSet<Sym>,
    pub functions: Functions,
    /// Whether unknown identifiers become fresh variables (guards) or errors.
    pub allow_new_vars: bool,
}

impl Scope {
    pub fn slot(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v == name)
    }

    pub fn declare(&mut self, name: &str) -> usize {
        match self.slot(name) {
            Some(s) => s,
            None => {
                self.vars.push(name.to_owned());
                self.vars.len() - 1
            }
        }
    }

    fn resolve_ident(&mut self, name: &str) -> Result<Expr, CompileError> {
        if let Some(s) = self.slot(name) {
            return Ok(Expr::Var(s));
        }
        if let Some(c) = self.constants.get(name) {
            return Ok(Expr::Lit(c.clone()));
        }
        let sym = Sym::new(name);
        if self.atoms.contains(&sym) {
            return Ok(Expr::Lit(Value::Atom(sym)));
        }
        if name == "dot" {
            return Ok(Expr::Lit(Value::Dot));
        }
        if self.allow_new_vars {
            return Ok(Expr::Var(self.declare(name)));
        }
        Err(CompileError::UnknownIdent(name.to_owned()))
    }

    pub fn compile(&mut self, ast: &Ast) -> Result<Expr, CompileError> {
        Ok(match ast {
            Ast::Int(i) => Expr::Lit(Value::Int(*i)),
            Ast::Real(r) => Expr::Lit(Value::real(*r)),
            Ast::Bool(b) => Expr::Lit(Value::Bool(*b)),
            Ast::Ident(name) => self.resolve_ident(name)?,
            Ast::Call(name, args) => {
                let f = self
                    .functions
                    .get(name)
                    .cloned()
                    .ok_or_else(|| CompileError::UnknownFunction(name.clone()))?;
                if let Some(n) = f.arity {
                    if n != args.len() {
                        return Err(CompileError::Arity {
                            name: name.clone(),
                            expected: n,
                            got: args.len(),
                        });
                    }
                }
                let args = args.iter().map(|a| self.compile(a)).collect::<Result<_, _>>()?;
                Expr::Call(f, args)
            }
            Ast::Tuple(items) => Expr::Tuple(items.iter().map(|a| self.compile(a)).collect::<Result<_, _>>()?),
            Ast::Neg(a) => Expr::Neg(Box::new(self.compile(a)?)),
            Ast::Not(a) => Expr::Not(Box::new(self.compile(a)?)),
            Ast::Bin(op, a, b) => Expr::Bin(*op, Box::new(self.compile(a)?), Box::new(self.compile(b)?)),
        })
    }

    /// Compiles an input-arc pattern: only variables, literals and tuples.
    /// Unknown identifiers (that are not atoms or constants) become variables.
    pub fn compile_pattern(&mut self, ast: &Ast) -> Result<Expr, CompileError> {
        match ast {
            Ast::Ident(name) => {
                let saved = self.allow_new_vars;
                self.allow_new_vars = true;
                let r = self.resolve_ident(name);
                self.allow_new_vars = saved;
                r
            }
            Ast::Int(_) | Ast::Bool(_) => self.compile(ast),
            Ast::Tuple(items) => Ok(Expr::Tuple(
                items.iter().map(|a| self.compile_pattern(a)).collect::<Result<_, _>>()?,
            )),
            other => Err(CompileError::BadPattern(other.to_string())),
        }
    }
}

fn type_err(msg: String) -> EvalError {
    EvalError::Type(msg)
}

fn arith(op: BinOp, a: Value, b: Value) -> Result<Value, EvalError> {
    match (&a, &b) {
        (Value::Int(x), Value::Int(y)) if op != BinOp::Div => {
            let r = match op {
                BinOp::Add => x.checked_add(*y),
                BinOp::Sub => x.checked_sub(*y),
                BinOp::Mul => x.checked_mul(*y),
                _ => unreachable!(),
            };
            r.map(Value::Int).ok_or(EvalError::Overflow)
        }
        _ => {
            let x = a.as_f64().ok_or_else(|| type_err(format!("{a} is not numeric")))?;
            let y = b.as_f64().ok_or_else(|| type_err(format!("{b} is not numeric")))?;
            Ok(Value::real(match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
                _ => unreachable!(),
            }))
        }
    }
}

fn compare(op: BinOp, a: &Value, b: &Value) -> Result<bool, EvalError> {
    use std::cmp::Ordering;
    let ord = match (a, b) {
        (Value::Int(x), Value::Int(y)) => x.cmp(y),
        (Value::Int(_) | Value::Real(_), Value::Int(_) | Value::Real(_)) => {
            let (x, y) = (a.as_f64().unwrap(), b.as_f64().unwrap());
            x.partial_cmp(&y).unwrap_or(Ordering::Equal)
        }
        _ => {
            return match op {
                BinOp::Eq => Ok(a == b),
                BinOp::Ne => Ok(a != b),
                _ => Err(type_err(format!("cannot order {a} and {b}"))),
            }
        }
    };
    Ok(match op {
        BinOp::Eq => ord == Ordering::Equal,
        BinOp::Ne => ord != Ordering::Equal,
        BinOp::Lt => ord == Ordering::Less,
        BinOp::Le => ord != Ordering::Greater,
        BinOp::Gt => ord == Ordering::Greater,
        BinOp::Ge => ord != Ordering::Less,
        _ => unreachable!(),
    })
}

fn as_bool(v: Value) -> Result<bool, EvalError> {
    v.as_bool().ok_or_else(|| type_err(format!("{v} is not boolean")))
}

impl Expr {
    /// Evaluates under a fully bound environment.
    pub fn eval(&self, env: &[Option<Value>]) -> Result<Value, EvalError> {
        match self {
            Expr::Lit(v) => Ok(v.clone()),
            Expr::Var(s) => env[*s].clone().ok_or_else(|| EvalError::Unbound(format!("#{s}"))),
            Expr::Tuple(items) => {
                let vals: Vec<Value> = items.iter().map(|e| e.eval(env)).collect::<Result<_, _>>()?;
                Ok(Value::tuple(vals))
            }
            Expr::Call(f, args) => {
                let mut vals: SmallVec<[Value; 8]> = SmallVec::new();
                for a in args {
                    vals.push(a.eval(env)?);
                }
                (f.f)(&vals)
            }
            Expr::Neg(a) => match a.eval(env)? {
                Value::Int(i) => i.checked_neg().map(Value::Int).ok_or(EvalError::Overflow),
                Value::Real(r) => Ok(Value::real(-r.0)),
                v => Err(type_err(format!("cannot negate {v}"))),
            },
            Expr::Not(a) => Ok(Value::Bool(!as_bool(a.eval(env)?)?)),
            Expr::Bin(op, a, b) => match op {
                BinOp::And => Ok(Value::Bool(as_bool(a.eval(env)?)? && as_bool(b.eval(env)?)?)),
                BinOp::Or => Ok(Value::Bool(as_bool(a.eval(env)?)? || as_bool(b.eval(env)?)?)),
                BinOp::Implies => Ok(Value::Bool(!as_bool(a.eval(env)?)? || as_bool(b.eval(env)?)?)),
                BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div => arith(*op, a.eval(env)?, b.eval(env)?),
                _ => Ok(Value::Bool(compare(*op, &a.eval(env)?, &b.eval(env)?)?)),
            },
        }
    }

    pub fn eval_bool(&self, env: &[Option<Value>]) -> Result<bool, EvalError> {
        as_bool(self.eval(env)?)
    }

    pub fn eval_f64(&self, env: &[Option<Value>]) -> Result<f64, EvalError> {
        let v = self.eval(env)?;
        v.as_f64().ok_or_else(|| type_err(format!("{v} is not numeric")))
    }

    pub fn eval_int(&self, env: &[Option<Value>]) -> Result<i64, EvalError> {
        let v = self.eval(env)?;
        v.as_int().ok_or_else(|| type_err(format!("{v} is not an integer")))
    }

    fn unbound_var(&self, env: &[Option<Value>]) -> Option<usize> {
        match self {
            Expr::Var(s) if env[*s].is_none() => Some(*s),
            _ => None,
        }
    }

    /// Enumerates every extension of `env` that satisfies this boolean
    /// expression, calling `k` once per extension. Equalities with an unbound
    /// variable on one side bind it; everything else is evaluated.
    pub fn solve(
        &self,
        env: &mut Env,
        k: &mut dyn FnMut(&mut Env) -> Result<(), EvalError>,
    ) -> Result<(), EvalError> {
        match self {
            Expr::Bin(BinOp::And, a, b) => a.solve(env, &mut |e| b.solve(e, k)),
            Expr::Bin(BinOp::Or, a, b) => {
                a.solve(env, k)?;
                b.solve(env, k)
            }
            Expr::Bin(BinOp::Implies, a, b) => {
                let mut holds = false;
                a.solve(env, &mut |_| {
                    holds = true;
                    Ok(())
                })?;
                if !holds {
                    k(env)?;
                }
                a.solve(env, &mut |e| b.solve(e, k))
            }
            Expr::Not(a) => {
                let mut holds = false;
                a.solve(env, &mut |_| {
                    holds = true;
                    Ok(())
                })?;
                if !holds {
                    k(env)?;
                }
                Ok(())
            }
            Expr::Bin(BinOp::Eq, a, b) => {
                let (slot, other) = match (a.unbound_var(env), b.unbound_var(env)) {
                    (Some(s), _) => (Some(s), b),
                    (None, Some(s)) => (Some(s), a),
                    (None, None) => (None, b),
                };
                match slot {
                    Some(s) => {
                        let v = other.eval(env)?;
                        env[s] = Some(v);
                        let r = k(env);
                        env[s] = None;
                        r
                    }
                    None => {
                        if compare(BinOp::Eq, &a.eval(env)?, &b.eval(env)?)? {
                            k(env)?;
                        }
                        Ok(())
                    }
                }
            }
            _ => {
                if self.eval_bool(env)? {
                    k(env)?;
                }
                Ok(())
            }
        }
    }

    /// Matches a value against a pattern, binding unbound slots. Newly bound
    /// slots are pushed on `trail` so the caller can undo them.
    pub fn match_value(&self, v: &Value, env: &mut Env, trail: &mut Vec<usize>) -> bool {
        match self {
            Expr::Var(s) => match &env[*s] {
                Some(bound) => bound == v,
                None => {
                    env[*s] = Some(v.clone());
                    trail.push(*s);
                    true
                }
            },
            Expr::Lit(l) => l == v,
            Expr::Tuple(pats) => match v {
                Value::Tuple(items) if items.len() == pats.len() => {
                    pats.iter().zip(items.iter()).all(|(p, x)| p.match_value(x, env, trail))
                }
                _ => false,
            },
            _ => false,
        }
    }

    /// Collects the variable slots referenced by this expression.
    pub fn vars(&self, out: &mut BTreeSet<usize>) {
        match self {
            Expr::Var(s) => {
                out.insert(*s);
            }
            Expr::Lit(_) => {}
            Expr::Tuple(items) | Expr::Call(_, items) => items.iter().for_each(|e| e.vars(out)),
            Expr::Neg(a) | Expr::Not(a) => a.vars(out),
            Expr::Bin(_, a, b) => {
                a.vars(out);
                b.vars(out);
            }
        }
    }
}
