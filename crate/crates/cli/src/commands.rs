use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use castel_core::ctmc;
use castel_core::deadspot::{self, DeadspotParams, DeliverySummary, Model};
use castel_core::logic::{self, ExactOptions, SmcOptions};
use castel_core::sim::{self, Cell, SweepSpec, Trace};
use castel_core::{reachability, stats, unfolding_equivalence, Interval, Net};
use serde::Serialize;

use crate::scenario::{read_text, state_limit, Scenario, Subject};
use crate::{Common, Failure, Outcome};

fn create(dir: &Path, name: &str) -> Outcome<BufWriter<File>> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(Failure::Runtime)?;
    let path = dir.join(name);
    let f = File::create(&path)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(Failure::Runtime)?;
    Ok(BufWriter::new(f))
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Outcome<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(Failure::runtime)?;
    writeln!(w).and_then(|_| w.flush()).map_err(Failure::runtime)
}

fn write_text(dir: &Path, name: &str, text: &str) -> Outcome<()> {
    let mut w = create(dir, name)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(Failure::runtime)
}

/// Wall-clock time goes to a sidecar so primary outputs stay reproducible.
pub fn write_timing(dir: &Path, command: &str, jobs: usize, seconds: f64) -> Outcome<()> {
    #[derive(Serialize)]
    struct Timing<'a> {
        command: &'a str,
        jobs: usize,
        wall_seconds: f64,
    }
    write_json(
        dir,
        "timing.json",
        &Timing {
            command,
            jobs,
            wall_seconds: seconds,
        },
    )
}

#[derive(Serialize)]
struct DeliveryBrief {
    created: usize,
    delivered: usize,
    censored: usize,
    empty_jumps: usize,
    half_time_fraction: Option<Interval>,
    mean_delay: Option<Interval>,
    mean_ratio: Option<Interval>,
}

impl From<&DeliverySummary> for DeliveryBrief {
    fn from(s: &DeliverySummary) -> Self {
        DeliveryBrief {
            created: s.created,
            delivered: s.delivered,
            censored: s.censored,
            empty_jumps: s.empty_jumps,
            half_time_fraction: s.half_time_fraction,
            mean_delay: s.mean_delay,
            mean_ratio: s.mean_ratio,
        }
    }
}

#[derive(Serialize)]
struct SimSummary {
    model: &'static str,
    net: String,
    seed: u64,
    runs: usize,
    horizon: f64,
    jmp: Option<bool>,
    events: u64,
    mean_events: f64,
    jumps: u64,
    deadlocked_runs: usize,
    transitions: BTreeMap<String, u64>,
    delivery: Option<DeliveryBrief>,
}

pub fn simulate(common: &Common) -> Outcome<()> {
    let sc = Scenario::load(common)?;
    let subject = sc.subject()?;
    let net = subject.net();
    let traces: Vec<Trace> = match &subject {
        Subject::Deadspot(m) => sim::run_many_with(sc.runs, sc.seed, |seed| m.simulate(seed, sc.horizon, false)),
        Subject::Generic(n) => sim::run_many(n, n.initial_marking(), sc.horizon, sc.runs, sc.seed),
    }
    .map_err(Failure::runtime)?;

    let mut transitions: BTreeMap<String, u64> = net.transitions().iter().map(|t| (t.name.clone(), 0)).collect();
    for tr in &traces {
        for e in &tr.events {
            *transitions.get_mut(&net.transition(e.transition).name).unwrap() += 1;
        }
    }
    let events: u64 = transitions.values().sum();
    let deadlocked_runs = traces
        .iter()
        .filter(|t| castel_core::enabled_firings(net, &t.final_marking).is_ok_and(|f| f.is_empty()))
        .count();
    let delivery = match &subject {
        Subject::Deadspot(_) => {
            let s = deadspot::delivery_metrics_at(net, &traces, sc.file.level).map_err(Failure::runtime)?;
            let mut w = create(&common.out, "deliveries.csv")?;
            deadspot::write_delivery_csv(&s, &mut w).map_err(Failure::runtime)?;
            Some(DeliveryBrief::from(&s))
        }
        Subject::Generic(_) => None,
    };
    let summary = SimSummary {
        model: subject.kind(),
        net: net.name().to_owned(),
        seed: sc.seed,
        runs: sc.runs,
        horizon: sc.horizon,
        jmp: sc.params.as_ref().map(|p| p.jmp),
        events,
        mean_events: events as f64 / sc.runs as f64,
        jumps: transitions.get("jmp").copied().unwrap_or(0),
        deadlocked_runs,
        transitions,
        delivery,
    };
    write_json(&common.out, "summary.json", &summary)?;

    let first = &traces[0];
    let mut w = create(&common.out, "trace.csv")?;
    sim::write_trace_csv(net, first, &mut w).map_err(Failure::runtime)?;
    let mut w = create(&common.out, "trace.bin")?;
    sim::write_trace_binary(net, first, &mut w).map_err(Failure::runtime)?;

    println!(
        "{} runs from seed {}: {} events, {:.1} per run",
        sc.runs, sc.seed, events, summary.mean_events
    );
    if let Some(d) = &summary.delivery {
        println!("messages: {} created, {} delivered, {} censored", d.created, d.delivered, d.censored);
        if let Some(i) = d.mean_delay {
            println!("mean delay: {:.4} [{:.4}, {:.4}]", i.estimate, i.lo, i.hi);
        }
        if let Some(i) = d.half_time_fraction {
            println!("half-time fraction: {:.4} [{:.4}, {:.4}]", i.estimate, i.lo, i.hi);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct CheckReport {
    formula: String,
    seed: u64,
    horizon: f64,
    smc: logic::CheckResult,
    exact: Option<logic::ExactResult>,
}

pub fn check(common: &Common, formula: &Path, exact: bool, unfold: bool) -> Outcome<()> {
    let sc = Scenario::load(common)?;
    let text = read_text(formula)?;
    let f = logic::parse_formula(text.trim())
        .with_context(|| format!("formula in {}", formula.display()))
        .map_err(Failure::Config)?;
    if !matches!(f, logic::StateFormula::Prob { .. }) {
        return Err(Failure::config(anyhow!("the outermost operator must be P")));
    }
    if unfold && !exact {
        return Err(Failure::config(anyhow!("--unfold with check needs --exact")));
    }
    let limit = if exact { Some(state_limit()?) } else { None };
    let subject = sc.subject()?;
    let (net, init, road) = (subject.net(), subject.init(), subject.road());
    let classify = |e: castel_core::Error| match e {
        castel_core::Error::Unsupported(_) | castel_core::Error::UnknownPlace(_) | castel_core::Error::Compile { .. } => {
            Failure::config(e)
        }
        other => Failure::runtime(other),
    };
    let smc = logic::smc_check(
        net,
        init,
        &f,
        &SmcOptions {
            samples: sc.runs,
            level: sc.file.level,
            horizon: sc.horizon,
            seed: sc.seed,
            road,
        },
    )
    .map_err(classify)?;
    let exact = match limit {
        Some(state_limit) => Some(
            logic::exact_check(
                net,
                init,
                &f,
                &ExactOptions {
                    state_limit,
                    unfold,
                    road,
                    ..Default::default()
                },
            )
            .map_err(classify)?,
        ),
        None => None,
    };
    println!("formula: {}", smc.formula);
    println!(
        "smc: {:.6} [{:.6}, {:.6}] at {} over {} samples ({} censored): {}",
        smc.estimate, smc.lo, smc.hi, smc.level, smc.samples, smc.censored, smc.verdict
    );
    if let Some(e) = &exact {
        println!(
            "exact: {:.9} on {} states ({}): {}",
            e.probability,
            e.states,
            if unfold { "unfolded" } else { "coloured" },
            if e.holds { "holds" } else { "fails" }
        );
    }
    write_json(
        &common.out,
        "check.json",
        &CheckReport {
            formula: smc.formula.clone(),
            seed: sc.seed,
            horizon: sc.horizon,
            smc,
            exact,
        },
    )
}

/// Sets `key` (dotted for nested fields) in the JSON form of the parameters.
fn apply_cell(base: &DeadspotParams, cell: &Cell) -> anyhow::Result<DeadspotParams> {
    let mut v = serde_json::to_value(base)?;
    for (key, value) in cell {
        let mut node = &mut v;
        let parts: Vec<&str> = key.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            node = node
                .get_mut(*part)
                .filter(|n| n.is_object())
                .ok_or_else(|| anyhow!("grid key `{key}` does not name a parameter"))?;
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| anyhow!("grid key `{key}` does not name a parameter"))?;
        obj.insert(parts[parts.len() - 1].to_owned(), value.clone());
    }
    let p: DeadspotParams = serde_json::from_value(v)?;
    p.validate()?;
    Ok(p)
}

#[derive(Serialize)]
struct SatelliteReport {
    baseline_delay: f64,
    points: Vec<(u32, f64, f64)>,
    fit: deadspot::FitSummary,
}

pub fn sweep(common: &Common, grid: &Path) -> Outcome<()> {
    let sc = Scenario::load(common)?;
    let base = sc
        .params
        .clone()
        .ok_or_else(|| Failure::config(anyhow!("sweeps vary dead-spot parameters; the scenario holds a net")))?;
    let mut spec: SweepSpec = serde_json::from_str(&read_text(grid)?)
        .with_context(|| format!("parsing {}", grid.display()))
        .map_err(Failure::Config)?;
    if let Some(r) = common.runs {
        spec.runs = r;
    }
    if let Some(s) = common.seed {
        spec.base_seed = s;
    }
    let (cells, warnings) = spec.cells().map_err(Failure::config)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    // Parameter errors are configuration errors; model build failures are
    // reported on the cell's row.
    let mut models: Vec<(Cell, Result<Model, String>)> = Vec::new();
    for cell in cells {
        let params = apply_cell(&base, &cell).map_err(Failure::Config)?;
        let model = Model::new(params).map_err(|e| e.to_string());
        models.push((cell, model));
    }
    let satellite = satellite_axis(&spec).map_err(Failure::Config)?;
    let horizon = sc.horizon;
    let table = sim::sweep(&spec, |cell, seed| {
        let (_, model) = models.iter().find(|(c, _)| c == cell).expect("cell model");
        match model {
            Ok(m) => m.run_metrics(seed, horizon),
            Err(e) => Err(castel_core::Error::InvalidArgument(e.clone())),
        }
    })
    .map_err(Failure::runtime)?;

    let mut w = create(&common.out, "sweep.csv")?;
    table.write_csv(&mut w).map_err(Failure::runtime)?;
    let failed = table.rows.iter().filter(|r| r.failed.is_some()).count();
    if let Some(ns) = satellite {
        let report = satellite_fit(&base, &spec, &table, &ns, horizon).map_err(Failure::Runtime)?;
        writeln!(w, "# satellite baseline mean_delay={:?}", report.baseline_delay).map_err(Failure::runtime)?;
        writeln!(
            w,
            "# fit factor = A*n + B: A={:?} B={:?} R2={:?}",
            report.fit.a, report.fit.b, report.fit.r2
        )
        .map_err(Failure::runtime)?;
        println!(
            "satellite fit: factor = {:.6}*n + {:.6} (R2 = {:.6})",
            report.fit.a, report.fit.b, report.fit.r2
        );
        write_json(&common.out, "satellite.json", &report)?;
    }
    w.flush().map_err(Failure::runtime)?;
    let mut w = create(&common.out, "sweep_long.csv")?;
    table.write_long_csv(&mut w).map_err(Failure::runtime)?;
    println!(
        "{} cells x {} runs from seed {}: {} rows, {} failed",
        models.len(),
        spec.runs,
        spec.base_seed,
        table.rows.len(),
        failed
    );
    Ok(())
}

/// Satellite counts when `satellite` is the only grid axis.
fn satellite_axis(spec: &SweepSpec) -> anyhow::Result<Option<Vec<u32>>> {
    if spec.grid.len() != 1 {
        return Ok(None);
    }
    let Some(values) = spec.grid.get("satellite") else {
        return Ok(None);
    };
    let mut ns = Vec::new();
    for v in values {
        let n = v
            .as_u64()
            .filter(|n| (1..=9).contains(n))
            .ok_or_else(|| anyhow!("satellite values must be integers in 1..=9, got {v}"))?;
        ns.push(n as u32);
    }
    ns.sort_unstable();
    ns.dedup();
    Ok(Some(ns))
}

fn satellite_fit(
    base: &DeadspotParams,
    spec: &SweepSpec,
    table: &sim::SweepTable,
    ns: &[u32],
    horizon: f64,
) -> anyhow::Result<SatelliteReport> {
    let baseline_model = Model::new(DeadspotParams {
        satellite: Some(0),
        ..base.clone()
    })?;
    let delays = sim::run_many_with(spec.runs, spec.base_seed, |seed| {
        Ok(baseline_model.run_metrics(seed, horizon)?["mean_delay"])
    })?;
    let finite: Vec<f64> = delays.into_iter().filter(|d| d.is_finite()).collect();
    let baseline_delay = stats::mean(&finite).ok_or_else(|| anyhow!("no message delivered without satellites"))?;
    let mut points = Vec::new();
    for &n in ns {
        let row = table
            .rows
            .iter()
            .find(|r| r.metric == "mean_delay" && r.cell.get("satellite").and_then(|v| v.as_u64()) == Some(n as u64))
            .ok_or_else(|| anyhow!("no mean_delay for satellite = {n}"))?;
        if let Some(e) = &row.failed {
            bail!("satellite = {n} failed: {e}");
        }
        points.push((n, row.mean, baseline_delay / row.mean));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.2).collect();
    let fit = deadspot::fit_factors(&xs, &ys)?.into();
    Ok(SatelliteReport {
        baseline_delay,
        points,
        fit,
    })
}

pub fn reach(common: &Common, unfold: bool) -> Outcome<()> {
    let sc = Scenario::load(common)?;
    let limit = state_limit()?;
    let subject = sc.subject()?;
    let (net, init) = (subject.net(), subject.init());
    let g = reachability(net, init, limit).map_err(Failure::runtime)?;
    let mut c: castel_core::Ctmc = ctmc::to_ctmc(&g, &[]).map_err(Failure::runtime)?;
    for s in 0..g.states.len() {
        if g.out_edges(s).is_empty() {
            c.label(s, "deadlock");
        }
    }
    write_text(&common.out, "reach.dot", &g.to_dot(net))?;
    write_text(&common.out, "reach.tra", &c.to_tra())?;
    write_text(&common.out, "reach.lab", &c.to_lab())?;
    write_text(&common.out, "reach.states", &ctmc::states_text(net, &g))?;
    println!("states: {}", g.states.len());
    println!("edges: {}", g.edges.len());
    if unfold {
        let (unf, eq) = unfolding_equivalence(net, init, limit).map_err(Failure::runtime)?;
        write_text(&common.out, "unfolded.json", &unfolded_json(&unf.net)?)?;
        write_json(&common.out, "equivalence.json", &eq)?;
        println!(
            "unfolded: {} places, {} transitions, {} states, {} edges",
            unf.net.places().len(),
            unf.net.transitions().len(),
            eq.basic_states,
            eq.basic_edges
        );
        println!("isomorphic: {}", eq.isomorphic);
        if !eq.isomorphic {
            return Err(Failure::runtime(anyhow!("reachability graphs of the net and its unfolding differ")));
        }
    }
    Ok(())
}

fn unfolded_json(net: &Net) -> Outcome<String> {
    net.to_json().map_err(Failure::runtime)
}
