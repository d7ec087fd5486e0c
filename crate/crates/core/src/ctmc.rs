//! Continuous-time Markov chains extracted from reachability graphs, with
//! transient analysis by uniformization and bounded-until probabilities.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::net::{Marking, Net};
use crate::scalar::Scalar;
use crate::semantics::ReachGraph;

/// Sparse generator: off-diagonal rate entries `(i, j, rate)` sorted by
/// `(i, j)`, with parallel edges merged and self-loops dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Ctmc<S> {
    pub n: usize,
    pub rates: Vec<(usize, usize, S)>,
    pub labels: Vec<BTreeSet<String>>,
    pub initial: usize,
}

impl<S: Scalar> Ctmc<S> {
    /// Builds a chain from raw entries; sums duplicates and drops self-loops.
    pub fn from_entries(n: usize, entries: impl IntoIterator<Item = (usize, usize, S)>, initial: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("empty Markov chain".into()));
        }
        let mut merged: BTreeMap<(usize, usize), S> = BTreeMap::new();
        for (i, j, r) in entries {
            if i >= n || j >= n {
                return Err(Error::InvalidArgument(format!("rate entry ({i}, {j}) outside {n} states")));
            }
            if !(r >= S::zero()) || !r.is_finite() {
                return Err(Error::InvalidArgument(format!("rate {r} on ({i}, {j}) is not non-negative")));
            }
            if i != j {
                let e = merged.entry((i, j)).or_insert_with(S::zero);
                *e = *e + r;
            }
        }
        Ok(Ctmc {
            n,
            rates: merged.into_iter().filter(|(_, r)| *r > S::zero()).map(|((i, j), r)| (i, j, r)).collect(),
            labels: vec![BTreeSet::new(); n],
            initial,
        })
    }

    pub fn exit_rate(&self, i: usize) -> S {
        self.row(i).iter().map(|e| e.2).sum()
    }

    pub fn row(&self, i: usize) -> &[(usize, usize, S)] {
        let lo = self.rates.partition_point(|e| e.0 < i);
        let hi = self.rates.partition_point(|e| e.0 <= i);
        &self.rates[lo..hi]
    }

    pub fn label(&mut self, state: usize, prop: &str) {
        self.labels[state].insert(prop.to_owned());
    }

    pub fn states_with(&self, prop: &str) -> Vec<bool> {
        self.labels.iter().map(|l| l.contains(prop)).collect()
    }

    /// `i j rate` lines, preceded by a `states transitions` header.
    pub fn to_tra(&self) -> String {
        let mut s = format!("{} {}\n", self.n, self.rates.len());
        for (i, j, r) in &self.rates {
            let _ = writeln!(s, "{i} {j} {}", r.as_f64());
        }
        s
    }

    /// Label declarations followed by one `state: ids` line per labelled
    /// state.
    pub fn to_lab(&self) -> String {
        let mut names: BTreeSet<&str> = BTreeSet::new();
        names.insert("init");
        for l in &self.labels {
            names.extend(l.iter().map(String::as_str));
        }
        let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        let mut s = String::new();
        let decl: Vec<String> = names.iter().map(|n| format!("{}=\"{}\"", index[n], n)).collect();
        let _ = writeln!(s, "{}", decl.join(" "));
        for (i, l) in self.labels.iter().enumerate() {
            let mut ids: Vec<usize> = l.iter().map(|n| index[n.as_str()]).collect();
            if i == self.initial {
                ids.push(index["init"]);
            }
            ids.sort_unstable();
            ids.dedup();
            if !ids.is_empty() {
                let ids: Vec<String> = ids.iter().map(usize::to_string).collect();
                let _ = writeln!(s, "{i}: {}", ids.join(" "));
            }
        }
        s
    }

    /// Copy of the chain where the marked states have no outgoing rates.
    pub fn make_absorbing(&self, absorbing: &[bool]) -> Ctmc<S> {
        Ctmc {
            n: self.n,
            rates: self.rates.iter().filter(|e| !absorbing[e.0]).copied().collect(),
            labels: self.labels.clone(),
            initial: self.initial,
        }
    }
}

/// Marking predicate used to label states.
pub type Prop<'a> = (&'a str, &'a dyn Fn(&Marking) -> bool);

/// Merges parallel edges of a reachability graph into a chain and labels
/// every state with the propositions it satisfies.
pub fn to_ctmc<S: Scalar>(g: &ReachGraph, props: &[Prop<'_>]) -> Result<Ctmc<S>> {
    let mut c = Ctmc::from_entries(
        g.states.len(),
        g.edges.iter().map(|e| (e.source, e.target, S::of(e.rate))),
        g.initial,
    )?;
    for (i, m) in g.states.iter().enumerate() {
        for (name, pred) in props {
            if pred(m) {
                c.label(i, name);
            }
        }
    }
    Ok(c)
}

/// One line per state: index and marking.
pub fn states_text(net: &Net, g: &ReachGraph) -> String {
    let mut s = String::new();
    for (i, m) in g.states.iter().enumerate() {
        let _ = writeln!(s, "{i}: {}", net.format_marking(m));
    }
    s
}

/// Truncated, normalised Poisson(λ) weights `(left, weights)` whose
/// discarded tail mass is below `eps`.
pub fn poisson_weights<S: Scalar>(lambda: S, eps: S) -> (usize, Vec<S>) {
    if lambda <= S::zero() {
        return (0, vec![S::one()]);
    }
    let mode = lambda.floor().to_usize().unwrap_or(0);
    let half = eps / S::of(2.0);
    // Unnormalised weights relative to w[mode] = 1.
    let mut up = vec![S::one()];
    let mut total = S::one();
    let mut k = mode;
    loop {
        let w = *up.last().unwrap() * lambda / S::of((k + 1) as f64);
        k += 1;
        // Geometric bound on the remaining right tail.
        let r = lambda / S::of((k + 1) as f64);
        up.push(w);
        total = total + w;
        if r < S::one() && w * r / (S::one() - r) <= half * total {
            break;
        }
        if w < S::min_positive_value() {
            break;
        }
    }
    let mut down = Vec::new();
    let mut k = mode;
    let mut w = S::one();
    while k > 0 {
        let next = w * S::of(k as f64) / lambda;
        k -= 1;
        w = next;
        down.push(w);
        total = total + w;
        let r = S::of(k as f64) / lambda;
        if k == 0 || w * r / (S::one() - r) <= half * total || w < S::min_positive_value() {
            break;
        }
    }
    let left = mode - down.len();
    let mut weights: Vec<S> = down.into_iter().rev().collect();
    weights.extend(up);
    for w in &mut weights {
        *w = *w / total;
    }
    (left, weights)
}

/// `Σ_k Poisson(qT; k) · P^k x` where `P = I + Q/q`, applied backwards.
fn backward_transient<S: Scalar>(c: &Ctmc<S>, x0: Vec<S>, t: S, eps: S) -> Vec<S> {
    let q = (0..c.n).map(|i| c.exit_rate(i)).fold(S::zero(), S::max);
    if q <= S::zero() || t <= S::zero() {
        return x0;
    }
    let q = q * S::of(1.02);
    let (left, weights) = poisson_weights(q * t, eps);
    let exit: Vec<S> = (0..c.n).map(|i| c.exit_rate(i)).collect();
    let mut x = x0;
    let mut acc = vec![S::zero(); c.n];
    for k in 0..left + weights.len() {
        if k >= left {
            let w = weights[k - left];
            for (a, v) in acc.iter_mut().zip(&x) {
                *a = *a + w * *v;
            }
        }
        if k + 1 == left + weights.len() {
            break;
        }
        let mut next: Vec<S> = x.iter().zip(&exit).map(|(v, e)| *v * (S::one() - *e / q)).collect();
        for &(i, j, r) in &c.rates {
            next[i] = next[i] + r / q * x[j];
        }
        x = next;
    }
    acc
}

/// Transient distribution at time `t` from `p0`, by forward uniformization.
pub fn transient<S: Scalar>(c: &Ctmc<S>, p0: &[S], t: S, eps: S) -> Result<Vec<S>> {
    if p0.len() != c.n {
        return Err(Error::InvalidArgument(format!("distribution has {} entries, chain has {}", p0.len(), c.n)));
    }
    let exit: Vec<S> = (0..c.n).map(|i| c.exit_rate(i)).collect();
    let q = exit.iter().copied().fold(S::zero(), S::max);
    if q <= S::zero() || t <= S::zero() {
        return Ok(p0.to_vec());
    }
    let q = q * S::of(1.02);
    let (left, weights) = poisson_weights(q * t, eps);
    let mut p = p0.to_vec();
    let mut acc = vec![S::zero(); c.n];
    for k in 0..left + weights.len() {
        if k >= left {
            let w = weights[k - left];
            for (a, v) in acc.iter_mut().zip(&p) {
                *a = *a + w * *v;
            }
        }
        let mut next: Vec<S> = p.iter().zip(&exit).map(|(v, e)| *v * (S::one() - *e / q)).collect();
        for &(i, j, r) in &c.rates {
            next[j] = next[j] + p[i] * r / q;
        }
        p = next;
    }
    Ok(acc)
}

fn check_args<S: Scalar>(c: &Ctmc<S>, phi: &[bool], psi: &[bool], t: S, eps: S) -> Result<()> {
    if c.n == 0 {
        return Err(Error::InvalidArgument("empty Markov chain".into()));
    }
    if phi.len() != c.n || psi.len() != c.n {
        return Err(Error::InvalidArgument("label vectors do not match the chain".into()));
    }
    if !(t > S::zero()) {
        return Err(Error::InvalidArgument(format!("time bound must be positive, got {t}")));
    }
    if !(eps > S::zero()) {
        return Err(Error::InvalidArgument(format!("precision must be positive, got {eps}")));
    }
    Ok(())
}

/// Per-state probability of `φ U[≤T] ψ`.
pub fn bounded_until<S: Scalar>(c: &Ctmc<S>, phi: &[bool], psi: &[bool], t: S, eps: S) -> Result<Vec<S>> {
    check_args(c, phi, psi, t, eps)?;
    let absorbing: Vec<bool> = (0..c.n).map(|i| psi[i] || !phi[i]).collect();
    let chain = c.make_absorbing(&absorbing);
    let x0 = psi.iter().map(|&b| if b { S::one() } else { S::zero() }).collect();
    let mut x = backward_transient(&chain, x0, t, eps);
    for (i, v) in x.iter_mut().enumerate() {
        *v = if psi[i] {
            S::one()
        } else if !phi[i] {
            S::zero()
        } else {
            v.max(S::zero()).min(S::one())
        };
    }
    Ok(x)
}

/// Per-state probability of the weak variant `φ W[≤T] ψ`: `ψ` within the
/// bound with `φ` before it, or `φ` throughout the bound.
pub fn bounded_unless<S: Scalar>(c: &Ctmc<S>, phi: &[bool], psi: &[bool], t: S, eps: S) -> Result<Vec<S>> {
    check_args(c, phi, psi, t, eps)?;
    let not_psi: Vec<bool> = psi.iter().map(|b| !b).collect();
    let bad: Vec<bool> = (0..c.n).map(|i| !phi[i] && !psi[i]).collect();
    let fail = bounded_until(c, &not_psi, &bad, t, eps)?;
    Ok(fail.into_iter().map(|p| S::one() - p).collect())
}

/// Embedded jump chain with a spatial step count on every move.
#[derive(Debug, Clone)]
pub struct JumpChain<S> {
    pub n: usize,
    /// `(source, target, rate, spatial steps)` sorted by source.
    pub moves: Vec<(usize, usize, S, u64)>,
}

impl<S: Scalar> JumpChain<S> {
    /// Self-loops are dropped: they change neither state nor, by
    /// conditioning on leaving, the path distribution.
    pub fn new(n: usize, moves: impl IntoIterator<Item = (usize, usize, S, u64)>) -> Self {
        let mut moves: Vec<_> = moves.into_iter().filter(|m| m.0 != m.1 && m.2 > S::zero()).collect();
        moves.sort_by(|a, b| (a.0, a.1, a.3).cmp(&(b.0, b.1, b.3)));
        JumpChain { n, moves }
    }

    pub fn from_graph(g: &ReachGraph) -> Self {
        Self::new(
            g.states.len(),
            g.edges.iter().map(|e| (e.source, e.target, S::of(e.rate), e.spatial)),
        )
    }
}

/// Per-state probability that `ψ` is reached with `φ` holding before, using
/// at most `bound` spatial steps. Zero-step cycles are solved by iteration to
/// `tol`.
pub fn space_bounded_until<S: Scalar>(
    c: &JumpChain<S>,
    phi: &[bool],
    psi: &[bool],
    bound: u64,
    tol: S,
) -> Result<Vec<S>> {
    if c.n == 0 {
        return Err(Error::InvalidArgument("empty Markov chain".into()));
    }
    if phi.len() != c.n || psi.len() != c.n {
        return Err(Error::InvalidArgument("label vectors do not match the chain".into()));
    }
    let mut out_rate = vec![S::zero(); c.n];
    for m in &c.moves {
        out_rate[m.0] = out_rate[m.0] + m.2;
    }
    let mut starts = vec![0usize; c.n + 1];
    for m in &c.moves {
        starts[m.0 + 1] += 1;
    }
    for i in 0..c.n {
        starts[i + 1] += starts[i];
    }
    let fixed = |i: usize| -> Option<S> {
        if psi[i] {
            Some(S::one())
        } else if !phi[i] || out_rate[i] <= S::zero() {
            Some(S::zero())
        } else {
            None
        }
    };
    // levels[b][i]: probability with b steps of budget left.
    let mut levels: Vec<Vec<S>> = Vec::with_capacity(bound as usize + 1);
    for b in 0..=bound {
        let mut x: Vec<S> = (0..c.n).map(|i| fixed(i).unwrap_or(S::zero())).collect();
        let mut base = vec![S::zero(); c.n];
        for i in 0..c.n {
            if fixed(i).is_some() {
                continue;
            }
            for m in &c.moves[starts[i]..starts[i + 1]] {
                if m.3 > 0 && m.3 <= b {
                    let v = levels[(b - m.3) as usize][m.1];
                    base[i] = base[i] + m.2 / out_rate[i] * v;
                }
            }
        }
        let mut iterations = 0usize;
        loop {
            let mut delta = S::zero();
            for i in 0..c.n {
                if fixed(i).is_some() {
                    continue;
                }
                let mut v = base[i];
                for m in &c.moves[starts[i]..starts[i + 1]] {
                    if m.3 == 0 {
                        v = v + m.2 / out_rate[i] * x[m.1];
                    }
                }
                delta = delta.max((v - x[i]).abs());
                x[i] = v;
            }
            iterations += 1;
            if delta <= tol {
                break;
            }
            if iterations > 1_000_000 {
                return Err(Error::InvalidArgument("space-bounded iteration did not converge".into()));
            }
        }
        levels.push(x);
    }
    Ok(levels.pop().unwrap())
}
