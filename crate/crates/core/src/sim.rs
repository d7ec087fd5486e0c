//! Exponential-race simulation, traces and their file formats, seeded batch
//! runs and parameter sweeps.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::colour::Value;
use crate::error::{Error, Result};
use crate::net::{Binding, Marking, Net, PlaceId, TransitionId};
use crate::semantics::{fire_in_place, Effects, EnabledFiring, EnabledSet};
use crate::stats;

/// Generator for one run. Each run owns an independent stream seeded from
/// its own seed; batch runs use consecutive seeds.
pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Exponential variate by inversion, strictly positive.
pub fn sample_exp(rng: &mut impl Rng, rate: f64) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return -u.ln() / rate;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

/// One firing as seen by observers; `marking` is the state after it.
#[derive(Debug)]
pub struct Step<'a> {
    pub index: u64,
    pub time: f64,
    pub firing: &'a EnabledFiring,
    pub effects: &'a Effects,
    pub marking: &'a Marking,
}

pub trait Observer {
    fn start(&mut self, _net: &Net, _mk: &Marking) -> Result<Flow> {
        Ok(Flow::Continue)
    }

    fn step(&mut self, net: &Net, step: &Step<'_>) -> Result<Flow>;

    /// Called once with the time the run ended at and the final marking.
    fn finish(&mut self, _net: &Net, _end_time: f64, _mk: &Marking) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {
    fn step(&mut self, _: &Net, _: &Step<'_>) -> Result<Flow> {
        Ok(Flow::Continue)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunEnd {
    pub events: u64,
    pub end_time: f64,
    pub final_marking: Marking,
    /// No firing was enabled before the horizon.
    pub deadlocked: bool,
    /// An observer asked to stop early.
    pub stopped: bool,
}

/// Runs the exponential race from `init` until the horizon, a dead marking,
/// or an observer stop. A firing whose sampled time exceeds the horizon is
/// discarded and the run ends at the horizon.
pub fn run(net: &Net, init: &Marking, horizon: f64, seed: u64, obs: &mut dyn Observer) -> Result<RunEnd> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    net.validate_marking(init)?;
    let mut rng = rng_for(seed);
    let mut mk = init.clone();
    let mut enabled = EnabledSet::new(net, &mk)?;
    let mut time = 0.0f64;
    let mut events = 0u64;
    let end = |obs: &mut dyn Observer, mk: Marking, t: f64, events, deadlocked, stopped| -> Result<RunEnd> {
        obs.finish(net, t, &mk)?;
        Ok(RunEnd {
            events,
            end_time: t,
            final_marking: mk,
            deadlocked,
            stopped,
        })
    };
    if obs.start(net, &mk)? == Flow::Stop {
        return end(obs, mk, 0.0, 0, false, true);
    }
    loop {
        let total = enabled.total_rate();
        if enabled.is_empty() || total <= 0.0 {
            return end(obs, mk, horizon, events, true, false);
        }
        let mut next = time + sample_exp(&mut rng, total);
        if next <= time {
            next = time.next_up();
        }
        if next > horizon {
            return end(obs, mk, horizon, events, false, false);
        }
        time = next;
        let target = rng.random::<f64>() * total;
        let firing = enabled
            .select(target)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument("no firing selected".into()))?;
        let fx = fire_in_place(net, &mut mk, &firing)?;
        enabled.apply(net, &mk, &fx)?;
        events += 1;
        let step = Step {
            index: events - 1,
            time,
            firing: &firing,
            effects: &fx,
            marking: &mk,
        };
        if obs.step(net, &step)? == Flow::Stop {
            return end(obs, mk, time, events, false, true);
        }
    }
}

/// Message lifecycle record attached to a trace event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Annotation {
    Created { message: u64, car: u64, expected_exit: f64 },
    Jumped { message: u64, from: u64, to: u64 },
    Delivered { message: u64, car: u64, satellite: bool },
    /// A transfer between cars that carried no message.
    EmptyJump { from: u64, to: u64 },
}

impl std::fmt::Display for Annotation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Annotation::Created {
                message,
                car,
                expected_exit,
            } => write!(f, "created:{message}@{car}/{expected_exit}"),
            Annotation::Jumped { message, from, to } => write!(f, "jumped:{message}@{from}>{to}"),
            Annotation::Delivered { message, car, satellite } => {
                write!(f, "delivered:{message}@{car}{}", if *satellite { "/sat" } else { "" })
            }
            Annotation::EmptyJump { from, to } => write!(f, "empty-jump:{from}>{to}"),
        }
    }
}

/// Produces annotations for each firing of a run.
pub trait Annotator {
    fn start(&mut self, _net: &Net, _mk: &Marking) -> Result<()> {
        Ok(())
    }

    fn annotate(&mut self, net: &Net, step: &Step<'_>) -> Result<Vec<Annotation>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub time: f64,
    pub transition: TransitionId,
    pub binding: Binding,
    pub marking: Option<Marking>,
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub seed: u64,
    pub horizon: f64,
    pub end_time: f64,
    pub initial: Marking,
    pub events: Vec<TraceEvent>,
    pub final_marking: Marking,
}

impl Trace {
    pub fn firing(&self, net: &Net, i: usize) -> EnabledFiring {
        let e = &self.events[i];
        EnabledFiring {
            transition: e.transition,
            binding: e.binding.clone(),
            rate: f64::NAN,
        }
        .with_rate(net)
    }

    pub fn annotations(&self) -> impl Iterator<Item = (f64, &Annotation)> {
        self.events
            .iter()
            .flat_map(|e| e.annotations.iter().map(move |a| (e.time, a)))
    }
}

impl EnabledFiring {
    fn with_rate(mut self, net: &Net) -> Self {
        let env: Vec<Option<Value>> = self.binding.iter().cloned().map(Some).collect();
        self.rate = net.transition(self.transition).rate.eval_f64(&env).unwrap_or(f64::NAN);
        self
    }
}

/// Observer that records a [`Trace`].
pub struct TraceRecorder<'a> {
    pub keep_markings: bool,
    annotator: Option<&'a mut dyn Annotator>,
    events: Vec<TraceEvent>,
}

impl<'a> TraceRecorder<'a> {
    pub fn new(keep_markings: bool, annotator: Option<&'a mut dyn Annotator>) -> Self {
        TraceRecorder {
            keep_markings,
            annotator,
            events: Vec::new(),
        }
    }
}

impl Observer for TraceRecorder<'_> {
    fn start(&mut self, net: &Net, mk: &Marking) -> Result<Flow> {
        if let Some(a) = self.annotator.as_mut() {
            a.start(net, mk)?;
        }
        Ok(Flow::Continue)
    }

    fn step(&mut self, net: &Net, step: &Step<'_>) -> Result<Flow> {
        let annotations = match self.annotator.as_mut() {
            Some(a) => a.annotate(net, step)?,
            None => Vec::new(),
        };
        self.events.push(TraceEvent {
            time: step.time,
            transition: step.firing.transition,
            binding: step.firing.binding.clone(),
            marking: self.keep_markings.then(|| step.marking.clone()),
            annotations,
        });
        Ok(Flow::Continue)
    }
}

#[derive(Default)]
pub struct SimOptions<'a> {
    pub keep_markings: bool,
    pub annotator: Option<&'a mut dyn Annotator>,
}

/// Simulates one run and records every event with its marking.
pub fn simulate(net: &Net, init: &Marking, horizon: f64, seed: u64) -> Result<Trace> {
    simulate_with(
        net,
        init,
        horizon,
        seed,
        SimOptions {
            keep_markings: true,
            annotator: None,
        },
    )
}

pub fn simulate_with(net: &Net, init: &Marking, horizon: f64, seed: u64, opts: SimOptions<'_>) -> Result<Trace> {
    let mut rec = TraceRecorder::new(opts.keep_markings, opts.annotator);
    let end = run(net, init, horizon, seed, &mut rec)?;
    Ok(Trace {
        seed,
        horizon,
        end_time: end.end_time,
        initial: init.clone(),
        events: rec.events,
        final_marking: end.final_marking,
    })
}

/// Replays a trace from its initial marking, checking recorded markings,
/// and returns the final marking.
pub fn replay(net: &Net, trace: &Trace) -> Result<Marking> {
    let mut mk = trace.initial.clone();
    let mut last = f64::NEG_INFINITY;
    for (i, e) in trace.events.iter().enumerate() {
        if e.time <= last {
            return Err(Error::InvalidArgument(format!("event {i} does not advance time")));
        }
        last = e.time;
        fire_in_place(net, &mut mk, &trace.firing(net, i))?;
        if let Some(m) = &e.marking {
            if *m != mk {
                return Err(Error::InvalidArgument(format!("event {i} marking differs on replay")));
            }
        }
    }
    Ok(mk)
}

/// Independent runs with seeds `base..base+n`, in seed order regardless of
/// which worker finished first.
pub fn run_many_with<T, F>(n: usize, base_seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    if n == 0 {
        return Err(Error::InvalidArgument("run count must be at least 1".into()));
    }
    (0..n as u64)
        .into_par_iter()
        .map(|i| f(base_seed.wrapping_add(i)))
        .collect()
}

pub fn run_many(net: &Net, init: &Marking, horizon: f64, n: usize, base_seed: u64) -> Result<Vec<Trace>> {
    run_many_with(n, base_seed, |seed| simulate(net, init, horizon, seed))
}

fn binding_text(net: &Net, t: TransitionId, b: &Binding) -> String {
    let vars = &net.transition(t).vars;
    vars.iter()
        .zip(b.iter())
        .map(|(n, v)| format!("{n}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// CSV with columns `time,transition,binding,annotations`.
pub fn write_trace_csv<W: Write>(net: &Net, trace: &Trace, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["time", "transition", "binding", "annotations"])?;
    for e in &trace.events {
        let ann: Vec<String> = e.annotations.iter().map(|a| a.to_string()).collect();
        out.write_record([
            format!("{:?}", e.time),
            net.transition(e.transition).name.clone(),
            binding_text(net, e.transition, &e.binding),
            ann.join(" "),
        ])?;
    }
    out.flush()?;
    Ok(())
}

const MAGIC: &[u8; 4] = b"CSTR";
pub const TRACE_FORMAT_VERSION: u16 = 1;

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::InvalidArgument(format!("trace string is not UTF-8: {e}")))
}

fn write_value<W: Write>(w: &mut W, v: &Value) -> Result<()> {
    match v {
        Value::Dot => w.write_u8(0)?,
        Value::Bool(b) => {
            w.write_u8(1)?;
            w.write_u8(*b as u8)?;
        }
        Value::Int(i) => {
            w.write_u8(2)?;
            w.write_i64::<LittleEndian>(*i)?;
        }
        Value::Real(x) => {
            w.write_u8(3)?;
            w.write_f64::<LittleEndian>(x.0)?;
        }
        Value::Atom(s) => {
            w.write_u8(4)?;
            write_str(w, s.as_str())?;
        }
        Value::Tuple(items) => {
            w.write_u8(5)?;
            w.write_u32::<LittleEndian>(items.len() as u32)?;
            for i in items.iter() {
                write_value(w, i)?;
            }
        }
    }
    Ok(())
}

fn read_value<R: Read>(r: &mut R) -> Result<Value> {
    Ok(match r.read_u8()? {
        0 => Value::Dot,
        1 => Value::Bool(r.read_u8()? != 0),
        2 => Value::Int(r.read_i64::<LittleEndian>()?),
        3 => Value::real(r.read_f64::<LittleEndian>()?),
        4 => Value::atom(&read_str(r)?),
        5 => {
            let n = r.read_u32::<LittleEndian>()? as usize;
            let items = (0..n).map(|_| read_value(r)).collect::<Result<Vec<_>>>()?;
            Value::tuple(items)
        }
        tag => return Err(Error::InvalidArgument(format!("unknown value tag {tag}"))),
    })
}

fn write_marking<W: Write>(w: &mut W, mk: &Marking) -> Result<()> {
    w.write_u32::<LittleEndian>(mk.places() as u32)?;
    for (_, bag) in mk.iter() {
        w.write_u32::<LittleEndian>(bag.len() as u32)?;
        for (v, c) in bag {
            write_value(w, v)?;
            w.write_u32::<LittleEndian>(*c)?;
        }
    }
    Ok(())
}

fn read_marking<R: Read>(r: &mut R) -> Result<Marking> {
    let places = r.read_u32::<LittleEndian>()? as usize;
    let mut mk = Marking::empty(places);
    for p in 0..places {
        let n = r.read_u32::<LittleEndian>()?;
        for _ in 0..n {
            let v = read_value(r)?;
            let c = r.read_u32::<LittleEndian>()?;
            mk.add(PlaceId(p), v, c);
        }
    }
    Ok(mk)
}

fn write_annotation<W: Write>(w: &mut W, a: &Annotation) -> Result<()> {
    match a {
        Annotation::Created {
            message,
            car,
            expected_exit,
        } => {
            w.write_u8(0)?;
            w.write_u64::<LittleEndian>(*message)?;
            w.write_u64::<LittleEndian>(*car)?;
            w.write_f64::<LittleEndian>(*expected_exit)?;
        }
        Annotation::Jumped { message, from, to } => {
            w.write_u8(1)?;
            w.write_u64::<LittleEndian>(*message)?;
            w.write_u64::<LittleEndian>(*from)?;
            w.write_u64::<LittleEndian>(*to)?;
        }
        Annotation::Delivered { message, car, satellite } => {
            w.write_u8(2)?;
            w.write_u64::<LittleEndian>(*message)?;
            w.write_u64::<LittleEndian>(*car)?;
            w.write_u8(*satellite as u8)?;
        }
        Annotation::EmptyJump { from, to } => {
            w.write_u8(3)?;
            w.write_u64::<LittleEndian>(*from)?;
            w.write_u64::<LittleEndian>(*to)?;
        }
    }
    Ok(())
}

fn read_annotation<R: Read>(r: &mut R) -> Result<Annotation> {
    let tag = r.read_u8()?;
    let mut u = || r.read_u64::<LittleEndian>();
    Ok(match tag {
        0 => {
            let (message, car) = (u()?, u()?);
            Annotation::Created {
                message,
                car,
                expected_exit: f64::from_bits(u()?),
            }
        }
        1 => Annotation::Jumped {
            message: u()?,
            from: u()?,
            to: u()?,
        },
        2 => {
            let (message, car) = (u()?, u()?);
            Annotation::Delivered {
                message,
                car,
                satellite: r.read_u8()? != 0,
            }
        }
        3 => Annotation::EmptyJump { from: u()?, to: u()? },
        tag => return Err(Error::InvalidArgument(format!("unknown annotation tag {tag}"))),
    })
}

/// Compact binary trace: magic, version, run header, initial marking,
/// events, final marking. Transition names are stored so a trace cannot be
/// replayed against a different net by accident.
pub fn write_trace_binary<W: Write>(net: &Net, trace: &Trace, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(TRACE_FORMAT_VERSION)?;
    w.write_u64::<LittleEndian>(trace.seed)?;
    w.write_f64::<LittleEndian>(trace.horizon)?;
    w.write_f64::<LittleEndian>(trace.end_time)?;
    write_marking(&mut w, &trace.initial)?;
    w.write_u64::<LittleEndian>(trace.events.len() as u64)?;
    for e in &trace.events {
        w.write_f64::<LittleEndian>(e.time)?;
        write_str(&mut w, &net.transition(e.transition).name)?;
        w.write_u32::<LittleEndian>(e.binding.len() as u32)?;
        for v in e.binding.iter() {
            write_value(&mut w, v)?;
        }
        w.write_u32::<LittleEndian>(e.annotations.len() as u32)?;
        for a in &e.annotations {
            write_annotation(&mut w, a)?;
        }
        match &e.marking {
            Some(m) => {
                w.write_u8(1)?;
                write_marking(&mut w, m)?;
            }
            None => w.write_u8(0)?,
        }
    }
    write_marking(&mut w, &trace.final_marking)?;
    w.flush()?;
    Ok(())
}

pub fn read_trace_binary<R: Read>(net: &Net, mut r: R) -> Result<Trace> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::InvalidArgument("not a binary trace file".into()));
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != TRACE_FORMAT_VERSION {
        return Err(Error::Unsupported(format!("trace format version {version}")));
    }
    let seed = r.read_u64::<LittleEndian>()?;
    let horizon = r.read_f64::<LittleEndian>()?;
    let end_time = r.read_f64::<LittleEndian>()?;
    let initial = read_marking(&mut r)?;
    let n = r.read_u64::<LittleEndian>()?;
    let mut events = Vec::new();
    for _ in 0..n {
        let time = r.read_f64::<LittleEndian>()?;
        let transition = net.transition_id(&read_str(&mut r)?)?;
        let nb = r.read_u32::<LittleEndian>()? as usize;
        let binding: Vec<Value> = (0..nb).map(|_| read_value(&mut r)).collect::<Result<_>>()?;
        let na = r.read_u32::<LittleEndian>()? as usize;
        let annotations = (0..na).map(|_| read_annotation(&mut r)).collect::<Result<_>>()?;
        let marking = match r.read_u8()? {
            0 => None,
            _ => Some(read_marking(&mut r)?),
        };
        events.push(TraceEvent {
            time,
            transition,
            binding: Binding::from(binding),
            marking,
            annotations,
        });
    }
    let final_marking = read_marking(&mut r)?;
    Ok(Trace {
        seed,
        horizon,
        end_time,
        initial,
        events,
        final_marking,
    })
}

/// Time-averaged token count of a place over a run.
#[derive(Debug, Clone)]
pub struct PlaceAverage {
    place: PlaceId,
    last_time: f64,
    last_count: f64,
    area: f64,
    pub average: f64,
}

impl PlaceAverage {
    pub fn new(place: PlaceId) -> Self {
        PlaceAverage {
            place,
            last_time: 0.0,
            last_count: 0.0,
            area: 0.0,
            average: 0.0,
        }
    }
}

impl Observer for PlaceAverage {
    fn start(&mut self, _: &Net, mk: &Marking) -> Result<Flow> {
        self.last_count = mk.count(self.place) as f64;
        Ok(Flow::Continue)
    }

    fn step(&mut self, _: &Net, s: &Step<'_>) -> Result<Flow> {
        self.area += self.last_count * (s.time - self.last_time);
        self.last_time = s.time;
        self.last_count = s.marking.count(self.place) as f64;
        Ok(Flow::Continue)
    }

    fn finish(&mut self, _: &Net, end: f64, _: &Marking) -> Result<()> {
        self.area += self.last_count * (end - self.last_time);
        self.average = if end > 0.0 { self.area / end } else { self.last_count };
        Ok(())
    }
}

/// Grid of parameter values; cells are the cartesian product in key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub grid: BTreeMap<String, Vec<serde_json::Value>>,
    #[serde(default = "one_run")]
    pub runs: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub metrics: Vec<String>,
}

fn one_run() -> usize {
    1
}

pub type Cell = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub cell: Cell,
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
    pub failed: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunValue {
    pub cell: Cell,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub parameters: Vec<String>,
    pub rows: Vec<SweepRow>,
    pub runs: Vec<RunValue>,
    pub warnings: Vec<String>,
}

fn json_text(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl SweepSpec {
    /// Validates the grid and returns its cells, dropping repeated values
    /// with a warning.
    pub fn cells(&self) -> Result<(Vec<Cell>, Vec<String>)> {
        if self.grid.is_empty() {
            return Err(Error::InvalidArgument("sweep grid is empty".into()));
        }
        if self.runs == 0 {
            return Err(Error::InvalidArgument("runs per cell must be at least 1".into()));
        }
        let mut warnings = Vec::new();
        let mut axes: Vec<(&String, Vec<&serde_json::Value>)> = Vec::new();
        for (k, vs) in &self.grid {
            if vs.is_empty() {
                return Err(Error::InvalidArgument(format!("parameter `{k}` has no values")));
            }
            let mut seen: Vec<&serde_json::Value> = Vec::new();
            for v in vs {
                if seen.contains(&v) {
                    warnings.push(format!("duplicate value {v} for `{k}` ignored"));
                } else {
                    seen.push(v);
                }
            }
            axes.push((k, seen));
        }
        let mut cells = vec![Cell::new()];
        for (k, vs) in axes {
            cells = cells
                .into_iter()
                .flat_map(|c| {
                    vs.iter().map(move |v| {
                        let mut c = c.clone();
                        c.insert(k.clone(), (*v).clone());
                        c
                    })
                })
                .collect();
        }
        Ok((cells, warnings))
    }
}

/// Runs `spec.runs` seeded runs per cell and aggregates each metric. `run_cell`
/// returns the metric values of one run; a failing cell yields a row marked
/// failed and the sweep continues.
pub fn sweep<F>(spec: &SweepSpec, run_cell: F) -> Result<SweepTable>
where
    F: Fn(&Cell, u64) -> Result<BTreeMap<String, f64>> + Sync,
{
    let (cells, warnings) = spec.cells()?;
    let mut table = SweepTable {
        parameters: spec.grid.keys().cloned().collect(),
        warnings,
        ..Default::default()
    };
    for cell in cells {
        let results = run_many_with(spec.runs, spec.base_seed, |seed| run_cell(&cell, seed));
        let results = match results {
            Ok(r) => r,
            Err(e) => {
                table.rows.push(SweepRow {
                    cell,
                    metric: String::new(),
                    mean: f64::NAN,
                    sd: f64::NAN,
                    count: 0,
                    failed: Some(e.to_string()),
                });
                continue;
            }
        };
        let mut per_metric: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for name in &spec.metrics {
            per_metric.entry(name.clone()).or_default();
        }
        for (i, r) in results.iter().enumerate() {
            for (name, v) in r {
                if !spec.metrics.is_empty() && !spec.metrics.contains(name) {
                    continue;
                }
                table.runs.push(RunValue {
                    cell: cell.clone(),
                    seed: spec.base_seed.wrapping_add(i as u64),
                    metric: name.clone(),
                    value: *v,
                });
                if v.is_finite() {
                    per_metric.entry(name.clone()).or_default().push(*v);
                }
            }
        }
        for (metric, vs) in per_metric {
            table.rows.push(SweepRow {
                cell: cell.clone(),
                metric,
                mean: stats::mean(&vs).unwrap_or(f64::NAN),
                sd: stats::std_dev(&vs),
                count: vs.len(),
                failed: None,
            });
        }
    }
    Ok(table)
}

impl SweepTable {
    /// One row per (cell, metric) with mean, sd and count.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = self.parameters.clone();
        header.extend(["metric", "mean", "sd", "count", "status"].map(String::from));
        out.write_record(&header)?;
        for r in &self.rows {
            let mut rec: Vec<String> = self
                .parameters
                .iter()
                .map(|p| r.cell.get(p).map(json_text).unwrap_or_default())
                .collect();
            rec.push(r.metric.clone());
            rec.push(format!("{:?}", r.mean));
            rec.push(format!("{:?}", r.sd));
            rec.push(r.count.to_string());
            rec.push(match &r.failed {
                Some(e) => format!("failed: {e}"),
                None => "ok".into(),
            });
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Long format: one row per (cell, seed, metric) value.
    pub fn write_long_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["cell", "parameter", "value", "seed", "metric", "result"])?;
        let mut cell_ids: Vec<&Cell> = Vec::new();
        for r in &self.runs {
            let id = match cell_ids.iter().position(|c| *c == &r.cell) {
                Some(i) => i,
                None => {
                    cell_ids.push(&r.cell);
                    cell_ids.len() - 1
                }
            };
            for (k, v) in &r.cell {
                out.write_record([
                    id.to_string(),
                    k.clone(),
                    json_text(v),
                    r.seed.to_string(),
                    r.metric.clone(),
                    format!("{:?}", r.value),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}
