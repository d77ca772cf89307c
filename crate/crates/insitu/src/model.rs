//! Analytical execution model: per-step stage costs, idle time, makespan
//! and efficiency, plus extraction of measured stages from simulation
//! traces.
//!
//! A step chains six stages: the simulation component computes (S) and
//! ingests its state (I); the analytics component retrieves (G), analyzes
//! (A) and sends its metrics back (Se); the simulation component finally
//! collects them (C). Send and collect costs are neglected by default
//! because the exchanged metric values are tiny; strict variants include
//! them. Under the constancy hypothesis (stage costs identical across
//! steps), the idle per step is `|S+I - (G+A)|`, the makespan is
//! `rho * max(S+I, G+A)` and the efficiency follows as
//! `1 - idle / max(S+I, G+A)`.

use std::collections::BTreeMap;
use std::fmt;

use crate::engine::{Label, TraceEvent};
use crate::error::{Error, Result};
use crate::workflow::WorkflowConfig;

/// Relative stage-duration deviation above which the constancy hypothesis
/// is flagged.
pub const CONSTANCY_WARN_THRESHOLD: f64 = 0.05;

/// Per-step durations of the six stages, assumed constant across steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageCosts {
    pub s: f64,
    pub i: f64,
    pub g: f64,
    pub a: f64,
    pub se: f64,
    pub c: f64,
}

impl StageCosts {
    pub fn new(s: f64, i: f64, g: f64, a: f64, se: f64, c: f64) -> Result<Self> {
        let v = StageCosts { s, i, g, a, se, c };
        for (name, x) in [("S", s), ("I", i), ("G", g), ("A", a), ("Se", se), ("C", c)] {
            if !x.is_finite() || x < 0.0 {
                return Err(Error::Validation(format!(
                    "stage {name} must be finite and >= 0, got {x}"
                )));
            }
        }
        Ok(v)
    }

    /// Simulation-side cost per step: S + I.
    pub fn sim_side(&self) -> f64 {
        self.s + self.i
    }

    /// Analytics-side cost per step: G + A.
    pub fn ana_side(&self) -> f64 {
        self.g + self.a
    }

    /// Simulation side including the collect stage.
    pub fn sim_side_strict(&self) -> f64 {
        self.s + self.i + self.c
    }

    /// Analytics side including the send stage.
    pub fn ana_side_strict(&self) -> f64 {
        self.g + self.a + self.se
    }

    pub fn scaled(&self, lambda: f64) -> StageCosts {
        StageCosts {
            s: self.s * lambda,
            i: self.i * lambda,
            g: self.g * lambda,
            a: self.a * lambda,
            se: self.se * lambda,
            c: self.c * lambda,
        }
    }
}

/// Which component idles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioClass {
    /// Analytics idles: S + I > G + A.
    IdleAnalytics,
    /// Simulation idles: G + A > S + I.
    IdleSimulation,
    /// Perfectly balanced execution.
    IdleFree,
}

impl fmt::Display for ScenarioClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioClass::IdleAnalytics => f.write_str("IA"),
            ScenarioClass::IdleSimulation => f.write_str("IS"),
            ScenarioClass::IdleFree => f.write_str("idle-free"),
        }
    }
}

/// Stage costs plus the iteration structure.
#[derive(Debug, Clone, Copy)]
pub struct ModelInputs {
    pub stages: StageCosts,
    /// Total iterations N.
    pub total_iterations: u64,
    /// Stride T.
    pub stride: u64,
}

impl ModelInputs {
    pub fn new(stages: StageCosts, total_iterations: u64, stride: u64) -> Result<Self> {
        if stride == 0 || total_iterations == 0 || !total_iterations.is_multiple_of(stride) {
            return Err(Error::Config(format!(
                "stride {stride} does not divide total iterations {total_iterations}"
            )));
        }
        Ok(ModelInputs {
            stages,
            total_iterations,
            stride,
        })
    }

    /// Directly fixes the number of steps.
    pub fn with_rho(stages: StageCosts, rho: u64) -> Result<Self> {
        Self::new(stages, rho, 1)
    }

    pub fn rho(&self) -> u64 {
        self.total_iterations / self.stride
    }
}

/// IA when the simulation side dominates, IS when the analytics side does.
pub fn classify_scenario(s: &StageCosts) -> ScenarioClass {
    let sim = s.sim_side();
    let ana = s.ana_side();
    if sim > ana {
        ScenarioClass::IdleAnalytics
    } else if ana > sim {
        ScenarioClass::IdleSimulation
    } else {
        ScenarioClass::IdleFree
    }
}

/// Total idle time per step: `|S+I - (G+A)|`.
pub fn idle_time(s: &StageCosts) -> f64 {
    (s.sim_side() - s.ana_side()).abs()
}

/// Idle per step with Se and C included.
pub fn idle_time_strict(s: &StageCosts) -> f64 {
    (s.sim_side_strict() - s.ana_side_strict()).abs()
}

/// Splits the idle between components: the non-bottleneck side owns all
/// of it.
pub fn idle_split(s: &StageCosts) -> (f64, f64) {
    match classify_scenario(s) {
        ScenarioClass::IdleAnalytics => (0.0, idle_time(s)),
        ScenarioClass::IdleSimulation => (idle_time(s), 0.0),
        ScenarioClass::IdleFree => (0.0, 0.0),
    }
}

/// Workflow makespan: `rho * max(S+I, G+A)`.
pub fn makespan(m: &ModelInputs) -> f64 {
    m.rho() as f64 * m.stages.sim_side().max(m.stages.ana_side())
}

pub fn makespan_strict(m: &ModelInputs) -> f64 {
    m.rho() as f64 * m.stages.sim_side_strict().max(m.stages.ana_side_strict())
}

/// Efficiency `eta = 1 - rho*idle / makespan`, in (0, 1].
pub fn efficiency(m: &ModelInputs) -> Result<f64> {
    let denom = m.stages.sim_side().max(m.stages.ana_side());
    if denom <= 0.0 {
        return Err(Error::DegenerateInput(
            "all stage costs are zero; efficiency undefined".into(),
        ));
    }
    Ok(1.0 - idle_time(&m.stages) / denom)
}

pub fn efficiency_strict(m: &ModelInputs) -> Result<f64> {
    let denom = m.stages.sim_side_strict().max(m.stages.ana_side_strict());
    if denom <= 0.0 {
        return Err(Error::DegenerateInput(
            "all stage costs are zero; efficiency undefined".into(),
        ));
    }
    Ok(1.0 - idle_time_strict(&m.stages) / denom)
}

/// Summary of one configuration under the analytical model.
#[derive(Debug, Clone, Copy)]
pub struct EfficiencyReport {
    pub rho: u64,
    pub makespan: f64,
    pub idle_per_step: f64,
    /// In (0, 1]; exactly 1 iff the idle per step is zero.
    pub eta: f64,
    pub scenario: ScenarioClass,
}

pub fn efficiency_report(m: &ModelInputs) -> Result<EfficiencyReport> {
    Ok(EfficiencyReport {
        rho: m.rho(),
        makespan: makespan(m),
        idle_per_step: idle_time(&m.stages),
        eta: efficiency(m)?,
        scenario: classify_scenario(&m.stages),
    })
}

/// Component-level `[first entry, last exit]` window of one stage in one
/// step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageSpan {
    pub start: f64,
    pub end: f64,
}

impl StageSpan {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Measured stage windows and idle times of one step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub step: u64,
    pub s: Option<StageSpan>,
    pub i: Option<StageSpan>,
    pub g: Option<StageSpan>,
    pub a: Option<StageSpan>,
    pub se: Option<StageSpan>,
    pub c: Option<StageSpan>,
    /// Mean time ranks spent blocked before this step's ingest, i.e.
    /// waiting for the previous step's metrics.
    pub idle_s: f64,
    /// Mean time analytics actors spent blocked before this step's
    /// retrievals.
    pub idle_a: f64,
}

impl StepReport {
    fn span_mut(&mut self, label: Label) -> &mut Option<StageSpan> {
        match label {
            Label::S => &mut self.s,
            Label::I => &mut self.i,
            Label::G => &mut self.g,
            Label::A => &mut self.a,
            Label::Se => &mut self.se,
            Label::C => &mut self.c,
            Label::Other => unreachable!(),
        }
    }

    pub fn span(&self, label: Label) -> Option<StageSpan> {
        match label {
            Label::S => self.s,
            Label::I => self.i,
            Label::G => self.g,
            Label::A => self.a,
            Label::Se => self.se,
            Label::C => self.c,
            Label::Other => None,
        }
    }
}

/// Everything extracted from one run's trace.
#[derive(Debug, Clone)]
pub struct ExtractedStages {
    pub rho: u64,
    /// Mean stage durations over the steady steps 2..=rho.
    pub stages: StageCosts,
    pub steps: Vec<StepReport>,
    /// Largest relative deviation of a per-step stage duration from its
    /// steady-state mean.
    pub max_rel_deviation: f64,
    pub constancy_warning: bool,
    /// Time between the component-level ingest completion of step 1 and
    /// of step rho: rho - 1 steady periods.
    pub steady_span: f64,
    /// Mean measured idle (both components) per steady step.
    pub idle_per_step: f64,
    pub eta_simulated: f64,
    /// First compute start to last collect end.
    pub makespan_simulated: f64,
    /// Mean per-rank busy time (S + I + C) per steady step.
    pub sim_busy_per_step: f64,
    /// Mean per-actor busy time (G + A + Se) per steady step.
    pub ana_busy_per_step: f64,
}

fn label_key(label: Label) -> Option<usize> {
    match label {
        Label::S => Some(0),
        Label::I => Some(1),
        Label::G => Some(2),
        Label::A => Some(3),
        Label::Se => Some(4),
        Label::C => Some(5),
        Label::Other => None,
    }
}

const LABELS: [Label; 6] = [Label::S, Label::I, Label::G, Label::A, Label::Se, Label::C];

enum Phase {
    Block,
    Start(Option<u64>),
    End(Option<u64>),
}

fn parse_detail(detail: &str) -> Result<Phase> {
    let mut tokens = detail.split_whitespace();
    let phase = tokens.next().unwrap_or("");
    let mut step = None;
    let mut poison = false;
    for t in tokens {
        if let Some(v) = t.strip_prefix("step=") {
            step = Some(v.parse::<u64>().map_err(|_| {
                Error::MalformedTrace(format!("bad step number in detail '{detail}'"))
            })?);
        } else if t == "poison" {
            poison = true;
        }
    }
    match phase {
        "block" => Ok(Phase::Block),
        "start" if poison => Ok(Phase::Start(None)),
        "end" if poison => Ok(Phase::End(None)),
        "start" => Ok(Phase::Start(step)),
        "end" => Ok(Phase::End(step)),
        other => Err(Error::MalformedTrace(format!(
            "unknown phase '{other}' in detail '{detail}'"
        ))),
    }
}

/// Computes per-step stage windows, steady-state stage costs and measured
/// idle times from a labeled trace. Needs at least three steps.
pub fn extract_stages(trace: &[TraceEvent], cfg: &WorkflowConfig) -> Result<ExtractedStages> {
    let rho = cfg.rho();
    if rho < 3 {
        return Err(Error::InsufficientSteps { rho });
    }
    let n_ranks = cfg.n_ranks;
    let n_actors = cfg.n_analytics_actors;

    // Component-level windows per (label, step).
    let mut spans: BTreeMap<(usize, u64), (f64, f64)> = BTreeMap::new();
    // Open stage of one entity, per (actor, label).
    let mut open: BTreeMap<(usize, usize), (f64, Option<u64>)> = BTreeMap::new();
    // Pending block time per (actor, label).
    let mut blocked: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    // Per-entity busy time per (label, step).
    let mut busy: BTreeMap<(usize, u64), f64> = BTreeMap::new();
    // Summed waits per step.
    let mut idle_s_sum: BTreeMap<u64, f64> = BTreeMap::new();
    let mut idle_a_sum: BTreeMap<u64, f64> = BTreeMap::new();
    // Component-level ingest completion per step.
    let mut ingest_end: BTreeMap<u64, f64> = BTreeMap::new();

    for ev in trace {
        let Some(lk) = label_key(ev.label) else {
            continue;
        };
        match parse_detail(&ev.detail)? {
            Phase::Block => {
                blocked.insert((ev.actor, lk), ev.time);
            }
            Phase::Start(step) => {
                if open.insert((ev.actor, lk), (ev.time, step)).is_some() {
                    return Err(Error::MalformedTrace(format!(
                        "actor {} started stage {} twice (seq {})",
                        ev.actor, ev.label, ev.seq
                    )));
                }
                if let Some(block_t) = blocked.remove(&(ev.actor, lk)) {
                    let wait = ev.time - block_t;
                    if let Some(s) = step {
                        match ev.label {
                            // A collect of step s delays the ingest of s+1.
                            Label::C => *idle_s_sum.entry(s + 1).or_default() += wait,
                            Label::G => *idle_a_sum.entry(s).or_default() += wait,
                            _ => {}
                        }
                    }
                }
            }
            Phase::End(step) => {
                let Some((start_t, start_step)) = open.remove(&(ev.actor, lk)) else {
                    return Err(Error::MalformedTrace(format!(
                        "actor {} ended stage {} without starting it (seq {})",
                        ev.actor, ev.label, ev.seq
                    )));
                };
                if step != start_step {
                    return Err(Error::MalformedTrace(format!(
                        "actor {} stage {}: start/end step mismatch",
                        ev.actor, ev.label
                    )));
                }
                let Some(s) = step else { continue };
                let e = spans.entry((lk, s)).or_insert((start_t, ev.time));
                e.0 = e.0.min(start_t);
                e.1 = e.1.max(ev.time);
                *busy.entry((lk, s)).or_default() += ev.time - start_t;
                if ev.label == Label::I {
                    let t = ingest_end.entry(s).or_insert(ev.time);
                    *t = t.max(ev.time);
                }
            }
        }
    }
    if let Some((&(actor, lk), _)) = open.iter().next() {
        return Err(Error::MalformedTrace(format!(
            "actor {actor} left stage {} unfinished",
            LABELS[lk]
        )));
    }

    let mut steps = Vec::with_capacity(rho as usize);
    for step in 1..=rho {
        let mut report = StepReport {
            step,
            s: None,
            i: None,
            g: None,
            a: None,
            se: None,
            c: None,
            idle_s: idle_s_sum.get(&step).copied().unwrap_or(0.0) / n_ranks as f64,
            idle_a: idle_a_sum.get(&step).copied().unwrap_or(0.0) / n_actors as f64,
        };
        for (lk, label) in LABELS.iter().enumerate() {
            let Some(&(start, end)) = spans.get(&(lk, step)) else {
                return Err(Error::MalformedTrace(format!(
                    "stage {label} missing for step {step}"
                )));
            };
            *report.span_mut(*label) = Some(StageSpan { start, end });
        }
        steps.push(report);
    }

    // Steady-state means over steps 2..=rho.
    let steady = (rho - 1) as f64;
    let mut means = [0.0f64; 6];
    for (lk, mean) in means.iter_mut().enumerate() {
        let total: f64 = (2..=rho)
            .map(|s| {
                let span = steps[(s - 1) as usize].span(LABELS[lk]).unwrap();
                span.duration()
            })
            .sum();
        *mean = total / steady;
    }
    let stages = StageCosts {
        s: means[0],
        i: means[1],
        g: means[2],
        a: means[3],
        se: means[4],
        c: means[5],
    };
    let mut max_rel_deviation = 0.0f64;
    for (lk, mean) in means.iter().enumerate() {
        if *mean <= 0.0 {
            continue;
        }
        for s in 2..=rho {
            let d = steps[(s - 1) as usize].span(LABELS[lk]).unwrap().duration();
            max_rel_deviation = max_rel_deviation.max((d - mean).abs() / mean);
        }
    }

    let steady_span = ingest_end[&rho] - ingest_end[&1];
    let total_idle: f64 = (2..=rho)
        .map(|s| {
            let r = &steps[(s - 1) as usize];
            r.idle_s + r.idle_a
        })
        .sum();
    let idle_per_step = total_idle / steady;
    let eta_simulated = if steady_span > 0.0 {
        1.0 - total_idle / steady_span
    } else {
        1.0
    };
    let makespan_simulated = steps[(rho - 1) as usize].c.unwrap().end - steps[0].s.unwrap().start;

    let busy_of = |labels: &[Label], entities: usize| -> f64 {
        let total: f64 = labels
            .iter()
            .map(|l| {
                let lk = label_key(*l).unwrap();
                (2..=rho)
                    .map(|s| busy.get(&(lk, s)).copied().unwrap_or(0.0))
                    .sum::<f64>()
            })
            .sum();
        total / (entities as f64 * steady)
    };
    let sim_busy_per_step = busy_of(&[Label::S, Label::I, Label::C], n_ranks);
    let ana_busy_per_step = busy_of(&[Label::G, Label::A, Label::Se], n_actors);

    Ok(ExtractedStages {
        rho,
        stages,
        steps,
        max_rel_deviation,
        constancy_warning: max_rel_deviation > CONSTANCY_WARN_THRESHOLD,
        steady_span,
        idle_per_step,
        eta_simulated,
        makespan_simulated,
        sim_busy_per_step,
        ana_busy_per_step,
    })
}

/// The structured record of one model evaluation, optionally paired with
/// measured values.
#[derive(Debug, Clone)]
pub struct ModelReport {
    pub rho: u64,
    pub stages: StageCosts,
    pub idle_s: f64,
    pub idle_a: f64,
    pub makespan_predicted: f64,
    pub makespan_simulated: Option<f64>,
    pub eta_predicted: f64,
    pub eta_simulated: Option<f64>,
    pub scenario: ScenarioClass,
}

impl ModelReport {
    /// Pure model evaluation from given stage costs.
    pub fn from_stages(stages: StageCosts, rho: u64) -> Result<Self> {
        let m = ModelInputs::with_rho(stages, rho)?;
        let (idle_s, idle_a) = idle_split(&stages);
        Ok(ModelReport {
            rho,
            stages,
            idle_s,
            idle_a,
            makespan_predicted: makespan(&m),
            makespan_simulated: None,
            eta_predicted: efficiency(&m)?,
            eta_simulated: None,
            scenario: classify_scenario(&stages),
        })
    }

    /// Model evaluation of extracted stages, keeping the measured values
    /// alongside.
    pub fn from_extraction(x: &ExtractedStages) -> Result<Self> {
        let mut r = Self::from_stages(x.stages, x.rho)?;
        r.makespan_simulated = Some(x.makespan_simulated);
        r.eta_simulated = Some(x.eta_simulated);
        Ok(r)
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) => format!("{x:.digits$}"),
        None => "na".to_string(),
    }
}

impl fmt::Display for ModelReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rho: {}", self.rho)?;
        writeln!(f, "S: {:.9}", self.stages.s)?;
        writeln!(f, "I: {:.9}", self.stages.i)?;
        writeln!(f, "G: {:.9}", self.stages.g)?;
        writeln!(f, "A: {:.9}", self.stages.a)?;
        writeln!(f, "Se: {:.9}", self.stages.se)?;
        writeln!(f, "C: {:.9}", self.stages.c)?;
        writeln!(f, "idle_S: {:.9}", self.idle_s)?;
        writeln!(f, "idle_A: {:.9}", self.idle_a)?;
        writeln!(f, "makespan_predicted: {:.9}", self.makespan_predicted)?;
        writeln!(
            f,
            "makespan_simulated: {}",
            fmt_opt(self.makespan_simulated, 9)
        )?;
        writeln!(f, "eta_predicted: {:.6}", self.eta_predicted)?;
        writeln!(f, "eta_simulated: {}", fmt_opt(self.eta_simulated, 6))?;
        write!(f, "scenario: {}", self.scenario)
    }
}
