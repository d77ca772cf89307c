//! Scenario runner: builds platform and workflow configurations from
//! experiment designs, runs sweeps and emits CSV reports.
//!
//! A scenario fixes the number of nodes, the per-node core allocation
//! ratio R (simulation cores over analytics cores), a `(stride, cost)`
//! analytics configuration, the mapping mode and a data-transfer scale.
//! In-situ mappings spread analytics cores over every simulation node and
//! keep state exchanges node-local; in-transit mappings pack all
//! analytics actors on dedicated nodes, so every state share crosses the
//! network. Sweep grids are deterministic cross-products ordered by
//! (nodes, ratio, stride).

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use serde::Deserialize;

use crate::dtl::QueueMode;
use crate::error::{Error, Result};
use crate::model::{efficiency_report, extract_stages, EfficiencyReport, ModelInputs, StageCosts};
use crate::platform::{NodeId, Platform};
use crate::workflow::{self, Mapping, QueueLayout, RunOptions, WorkflowConfig, WorkflowOutcome};

/// Where the analytics component lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MappingMode {
    /// Analytics cores on every simulation node.
    InSitu,
    /// Analytics packed on dedicated nodes; ranks fill the rest.
    InTransit { dedicated_nodes: usize },
}

impl std::fmt::Display for MappingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MappingMode::InSitu => f.write_str("in-situ"),
            MappingMode::InTransit { .. } => f.write_str("in-transit"),
        }
    }
}

/// Application-side constants of a scenario.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workload {
    /// Total iterations N of the simulation loop.
    pub iterations: u64,
    pub particles: u64,
    #[serde(default = "default_cost_per_particle")]
    pub cost_per_particle: f64,
    #[serde(default = "default_size_per_particle")]
    pub size_per_particle: f64,
    /// Seconds of work per iteration per rank on a reference core.
    pub rank_iteration_work: f64,
    #[serde(default)]
    pub halo_bytes: f64,
    #[serde(default = "default_exchange_every")]
    pub exchange_every: u64,
}

fn default_cost_per_particle() -> f64 {
    7.93e-7
}

fn default_size_per_particle() -> f64 {
    100.0
}

fn default_exchange_every() -> u64 {
    20
}

fn default_scatter_alpha() -> f64 {
    0.05
}

fn default_repetitions() -> u32 {
    1
}

/// One experiment point.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub platform: PathBuf,
    pub nodes: usize,
    /// Core allocation ratio R (per-node, in-situ mappings).
    pub ratio: u32,
    /// Analytics stride T.
    pub stride: u64,
    /// Computing scaling factor of one analytics execution.
    pub cost_scale: f64,
    pub mapping: MappingMode,
    pub data_scale: f64,
    pub dtl: QueueMode,
    pub repetitions: u32,
    /// Slope of the linear scattering penalty applied to the analytics
    /// cost when its actors span several nodes.
    pub scatter_alpha: f64,
    /// Relative amplitude of the per-repetition stage-cost perturbation.
    pub jitter: f64,
    pub seed: u64,
    pub workload: Workload,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    platform: PathBuf,
    nodes: usize,
    ratio: u32,
    stride: u64,
    cost_scale: f64,
    mapping: String,
    #[serde(default = "default_dedicated")]
    dedicated_nodes: usize,
    #[serde(default = "default_data_scale")]
    data_scale: f64,
    dtl: String,
    #[serde(default = "default_repetitions")]
    repetitions: u32,
    #[serde(default = "default_scatter_alpha")]
    scatter_alpha: f64,
    #[serde(default)]
    jitter: f64,
    #[serde(default)]
    seed: u64,
    workload: Workload,
}

fn default_dedicated() -> usize {
    1
}

fn default_data_scale() -> f64 {
    1.0
}

fn parse_mapping_mode(s: &str, dedicated_nodes: usize) -> Result<MappingMode> {
    match s {
        "in-situ" => Ok(MappingMode::InSitu),
        "in-transit" => Ok(MappingMode::InTransit { dedicated_nodes }),
        other => Err(Error::Config(format!("unknown mapping mode: {other}"))),
    }
}

/// Loads a scenario file; the platform path is resolved relative to it.
pub fn load_scenario<P: AsRef<Path>>(path: P) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let file: ScenarioFile = toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let platform = resolve_relative(path, &file.platform);
    Ok(Scenario {
        name: file.name,
        platform,
        nodes: file.nodes,
        ratio: file.ratio,
        stride: file.stride,
        cost_scale: file.cost_scale,
        mapping: parse_mapping_mode(&file.mapping, file.dedicated_nodes)?,
        data_scale: file.data_scale,
        dtl: file.dtl.parse()?,
        repetitions: file.repetitions,
        scatter_alpha: file.scatter_alpha,
        jitter: file.jitter,
        seed: file.seed,
        workload: file.workload,
    })
}

fn resolve_relative(anchor: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        anchor.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// The per-node core split selected by a ratio.
fn ratio_split(platform: &Platform, nodes: usize, r: u32) -> Result<(u32, u32)> {
    let cores = platform.node(NodeId(0)).cores;
    for n in 0..nodes {
        if platform.node(NodeId(n)).cores != cores {
            return Err(Error::Infeasible(
                "ratio mappings need homogeneous core counts".into(),
            ));
        }
    }
    if !cores.is_multiple_of(r + 1) {
        return Err(Error::Infeasible(format!(
            "ratio {r} is not representable on {cores}-core nodes"
        )));
    }
    let ana = cores / (r + 1);
    Ok((cores - ana, ana))
}

/// Mappings, collector placement and queue layout of one scenario.
#[derive(Debug, Clone)]
pub struct BuiltMappings {
    pub rank_mapping: Mapping,
    pub analytics_mapping: Mapping,
    pub collector_node: NodeId,
    pub queue_layout: QueueLayout,
    pub analytics_nodes: usize,
}

pub fn build_mappings(s: &Scenario, platform: &Platform) -> Result<BuiltMappings> {
    if s.nodes == 0 || s.nodes > platform.n_nodes() {
        return Err(Error::Infeasible(format!(
            "scenario needs {} nodes, platform has {}",
            s.nodes,
            platform.n_nodes()
        )));
    }
    match s.mapping {
        MappingMode::InSitu => {
            let (sim, ana) = ratio_split(platform, s.nodes, s.ratio)?;
            let rank_mapping =
                Mapping::new((0..s.nodes).map(|n| (NodeId(n), sim as usize)).collect());
            let analytics_mapping =
                Mapping::new((0..s.nodes).map(|n| (NodeId(n), ana as usize)).collect());
            Ok(BuiltMappings {
                rank_mapping,
                analytics_mapping,
                collector_node: NodeId(0),
                queue_layout: QueueLayout::PerNode,
                analytics_nodes: s.nodes,
            })
        }
        MappingMode::InTransit { dedicated_nodes } => {
            if dedicated_nodes == 0 || dedicated_nodes >= s.nodes {
                return Err(Error::Infeasible(format!(
                    "in-transit needs 1..{} dedicated nodes, got {dedicated_nodes}",
                    s.nodes - 1
                )));
            }
            let cores = |n: usize| platform.node(NodeId(n)).cores as usize;
            let analytics_mapping = Mapping::new(
                (0..dedicated_nodes)
                    .map(|n| (NodeId(n), cores(n)))
                    .collect(),
            );
            let rank_mapping = Mapping::new(
                (dedicated_nodes..s.nodes)
                    .map(|n| (NodeId(n), cores(n)))
                    .collect(),
            );
            Ok(BuiltMappings {
                rank_mapping,
                analytics_mapping,
                collector_node: NodeId(0),
                queue_layout: QueueLayout::Single,
                analytics_nodes: dedicated_nodes,
            })
        }
    }
}

/// Derives the workflow configuration, applying the scattering penalty to
/// the analytics cost.
pub fn workflow_config(s: &Scenario, built: &BuiltMappings) -> WorkflowConfig {
    let scatter = 1.0 + s.scatter_alpha * (built.analytics_nodes.saturating_sub(1)) as f64;
    WorkflowConfig {
        total_iterations: s.workload.iterations,
        stride: s.stride,
        exchange_every: s.workload.exchange_every,
        n_ranks: built.rank_mapping.total_slots(),
        rank_iteration_work: s.workload.rank_iteration_work,
        halo_bytes: s.workload.halo_bytes,
        n_analytics_actors: built.analytics_mapping.total_slots(),
        analytics_mapping: None,
        cost_per_particle: s.workload.cost_per_particle,
        compute_scale: s.cost_scale * scatter,
        size_per_particle: s.workload.size_per_particle,
        data_scale: s.data_scale,
        n_particles: s.workload.particles,
        dtl_mode: s.dtl,
    }
}

/// Active/idle decomposition of both components over the steady window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentTimes {
    pub sim_active: f64,
    pub sim_idle: f64,
    pub ana_active: f64,
    pub ana_idle: f64,
}

/// Results of one scenario (averaged over repetitions).
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub scenario: Scenario,
    pub rho: u64,
    pub stages: StageCosts,
    pub efficiency: EfficiencyReport,
    pub eta_simulated: f64,
    pub makespan_simulated: f64,
    pub steady_span: f64,
    /// Mean measured per-step idles.
    pub idle_s_measured: f64,
    pub idle_a_measured: f64,
    pub component_times: ComponentTimes,
    pub constancy_warning: bool,
}

fn jittered(cfg: &WorkflowConfig, s: &Scenario, rep: u32) -> WorkflowConfig {
    if s.jitter <= 0.0 {
        return cfg.clone();
    }
    let mut rng = Pcg64::seed_from_u64(
        s.seed
            .wrapping_add((rep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
    );
    let mut perturb = |v: f64| v * (1.0 + s.jitter * (2.0 * rng.gen::<f64>() - 1.0));
    let mut out = cfg.clone();
    out.rank_iteration_work = perturb(out.rank_iteration_work);
    out.cost_per_particle = perturb(out.cost_per_particle);
    out
}

/// Runs one scenario end to end: mapping construction, simulation, stage
/// extraction, model evaluation.
pub fn run_scenario(s: &Scenario, platform: &Platform) -> Result<SweepResult> {
    let (result, _) = run_scenario_traced(s, platform)?;
    Ok(result)
}

/// Like [`run_scenario`], also returning the first repetition's outcome
/// (trace and queue statistics).
pub fn run_scenario_traced(
    s: &Scenario,
    platform: &Platform,
) -> Result<(SweepResult, WorkflowOutcome)> {
    if s.repetitions == 0 {
        return Err(Error::Config("repetitions must be at least 1".into()));
    }
    if s.jitter < 0.0 || s.jitter >= 1.0 {
        return Err(Error::Config(format!(
            "jitter must be in [0, 1), got {}",
            s.jitter
        )));
    }
    let built = build_mappings(s, platform)?;
    let cfg = workflow_config(s, &built);
    let opts = RunOptions {
        queue_layout: built.queue_layout,
        allow_oversubscribe: false,
        collector_node: Some(built.collector_node),
        state_queue_capacity: None,
    };

    let reps = s.repetitions;
    let mut acc: Option<Acc> = None;
    let mut first_outcome = None;
    for rep in 0..reps {
        let cfg_rep = jittered(&cfg, s, rep);
        let outcome = workflow::run(
            platform,
            &cfg_rep,
            &built.rank_mapping,
            &built.analytics_mapping,
            &opts,
        )?;
        let x = extract_stages(&outcome.trace, &cfg_rep)?;
        let idle_s_measured = mean_steady(&x, |r| r.idle_s);
        let idle_a_measured = mean_steady(&x, |r| r.idle_a);
        let a = acc.get_or_insert_with(|| Acc::new(x.rho));
        a.add(&x, idle_s_measured, idle_a_measured);
        if rep == 0 {
            first_outcome = Some(outcome);
        }
    }
    let acc = acc.unwrap();
    let n = reps as f64;
    let stages = acc.stages_mean(n);
    let rho = acc.rho;
    let model_inputs = ModelInputs::new(stages, cfg.total_iterations, cfg.stride)?;
    let efficiency = efficiency_report(&model_inputs)?;
    let steady = (rho - 1) as f64;
    let steady_span = acc.steady_span / n;
    let sim_active = acc.sim_busy / n * steady;
    let ana_active = acc.ana_busy / n * steady;
    let result = SweepResult {
        scenario: s.clone(),
        rho,
        stages,
        efficiency,
        eta_simulated: acc.eta_sim / n,
        makespan_simulated: acc.makespan_sim / n,
        steady_span,
        idle_s_measured: acc.idle_s / n,
        idle_a_measured: acc.idle_a / n,
        component_times: ComponentTimes {
            sim_active,
            sim_idle: steady_span - sim_active,
            ana_active,
            ana_idle: steady_span - ana_active,
        },
        constancy_warning: acc.warned,
    };
    Ok((result, first_outcome.unwrap()))
}

fn mean_steady(
    x: &crate::model::ExtractedStages,
    f: impl Fn(&crate::model::StepReport) -> f64,
) -> f64 {
    let steady = (x.rho - 1) as f64;
    x.steps[1..].iter().map(f).sum::<f64>() / steady
}

struct Acc {
    rho: u64,
    s: [f64; 6],
    steady_span: f64,
    eta_sim: f64,
    makespan_sim: f64,
    sim_busy: f64,
    ana_busy: f64,
    idle_s: f64,
    idle_a: f64,
    warned: bool,
}

impl Acc {
    fn new(rho: u64) -> Self {
        Acc {
            rho,
            s: [0.0; 6],
            steady_span: 0.0,
            eta_sim: 0.0,
            makespan_sim: 0.0,
            sim_busy: 0.0,
            ana_busy: 0.0,
            idle_s: 0.0,
            idle_a: 0.0,
            warned: false,
        }
    }

    fn add(&mut self, x: &crate::model::ExtractedStages, idle_s: f64, idle_a: f64) {
        let st = &x.stages;
        for (slot, v) in self.s.iter_mut().zip([st.s, st.i, st.g, st.a, st.se, st.c]) {
            *slot += v;
        }
        self.steady_span += x.steady_span;
        self.eta_sim += x.eta_simulated;
        self.makespan_sim += x.makespan_simulated;
        self.sim_busy += x.sim_busy_per_step;
        self.ana_busy += x.ana_busy_per_step;
        self.idle_s += idle_s;
        self.idle_a += idle_a;
        self.warned |= x.constancy_warning;
    }

    fn stages_mean(&self, n: f64) -> StageCosts {
        StageCosts {
            s: self.s[0] / n,
            i: self.s[1] / n,
            g: self.s[2] / n,
            a: self.s[3] / n,
            se: self.s[4] / n,
            c: self.s[5] / n,
        }
    }
}

/// Axes of a sweep grid.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub name: String,
    pub platform: PathBuf,
    pub nodes: Vec<usize>,
    pub ratios: Vec<u32>,
    pub strides: Vec<u64>,
    /// Units of analysis per run: with `constant_budget = B`, each stride T
    /// gets cost `B * T / N`, keeping `rho x cost` constant across pairs.
    #[serde(default)]
    pub constant_budget: Option<f64>,
    /// Explicit per-stride costs, paired with `strides`.
    #[serde(default)]
    pub cost_scales: Option<Vec<f64>>,
    pub mappings: Vec<String>,
    #[serde(default = "default_dedicated")]
    pub dedicated_nodes: usize,
    #[serde(default = "default_data_scales")]
    pub data_scales: Vec<f64>,
    pub dtl: String,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default = "default_scatter_alpha")]
    pub scatter_alpha: f64,
    #[serde(default)]
    pub jitter: f64,
    #[serde(default)]
    pub seed: u64,
    pub workload: Workload,
}

fn default_data_scales() -> Vec<f64> {
    vec![1.0]
}

pub fn load_sweep<P: AsRef<Path>>(path: P) -> Result<SweepSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut spec: SweepSpec = toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    spec.platform = resolve_relative(path, &spec.platform);
    Ok(spec)
}

/// Expands a sweep specification into a deterministic scenario list
/// ordered by (nodes, ratio, stride, mapping, data scale).
pub fn build_scenario_grid(spec: &SweepSpec, platform: &Platform) -> Result<Vec<Scenario>> {
    let costs: Vec<f64> = match (&spec.constant_budget, &spec.cost_scales) {
        (Some(budget), None) => spec
            .strides
            .iter()
            .map(|t| budget * *t as f64 / spec.workload.iterations as f64)
            .collect(),
        (None, Some(costs)) => {
            if costs.len() != spec.strides.len() {
                return Err(Error::Config(
                    "cost_scales must pair up with strides".into(),
                ));
            }
            costs.clone()
        }
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "give either constant_budget or cost_scales, not both".into(),
            ))
        }
        (None, None) => return Err(Error::Config("give constant_budget or cost_scales".into())),
    };
    let mut out = Vec::new();
    for &nodes in &spec.nodes {
        for &ratio in &spec.ratios {
            for (ti, &stride) in spec.strides.iter().enumerate() {
                for mapping in &spec.mappings {
                    for &data_scale in &spec.data_scales {
                        let mode = parse_mapping_mode(mapping, spec.dedicated_nodes)?;
                        let s = Scenario {
                            name: format!(
                                "{}-n{}-r{}-t{}-{}-d{}",
                                spec.name, nodes, ratio, stride, mapping, data_scale
                            ),
                            platform: spec.platform.clone(),
                            nodes,
                            ratio,
                            stride,
                            cost_scale: costs[ti],
                            mapping: mode,
                            data_scale,
                            dtl: spec.dtl.parse()?,
                            repetitions: spec.repetitions,
                            scatter_alpha: spec.scatter_alpha,
                            jitter: spec.jitter,
                            seed: spec.seed,
                            workload: spec.workload.clone(),
                        };
                        // Surface infeasible points at grid-build time.
                        build_mappings(&s, platform)?;
                        if !s.workload.iterations.is_multiple_of(s.stride) {
                            return Err(Error::Infeasible(format!(
                                "stride {} does not divide {} iterations",
                                s.stride, s.workload.iterations
                            )));
                        }
                        out.push(s);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// One scale/mode measurement of the data-scaling comparison.
#[derive(Debug, Clone)]
pub struct ScalingRow {
    pub scale: f64,
    pub mode: MappingMode,
    /// Simulation-component end-to-end time.
    pub sim_time: f64,
}

/// Runs `base` under both mapping modes at every scale with the mailbox
/// DTL and reports the simulation-component end-to-end time.
pub fn compare_data_scaling(
    base: &Scenario,
    platform: &Platform,
    scales: &[f64],
) -> Result<Vec<ScalingRow>> {
    if scales.is_empty() {
        return Err(Error::Config("need at least one scale".into()));
    }
    if scales.iter().any(|&s| s < 0.0) {
        return Err(Error::Config("scales must be >= 0".into()));
    }
    let dedicated = match base.mapping {
        MappingMode::InTransit { dedicated_nodes } => dedicated_nodes,
        MappingMode::InSitu => 1,
    };
    let mut rows = Vec::new();
    for &scale in scales {
        for mode in [
            MappingMode::InSitu,
            MappingMode::InTransit {
                dedicated_nodes: dedicated,
            },
        ] {
            let mut s = base.clone();
            s.name = format!("{}-{}-d{}", base.name, mode, scale);
            s.mapping = mode;
            s.data_scale = scale;
            s.dtl = QueueMode::Mailbox;
            let r = run_scenario(&s, platform)?;
            rows.push(ScalingRow {
                scale,
                mode,
                sim_time: r.makespan_simulated,
            });
        }
    }
    Ok(rows)
}

/// One exported CSV line, parsed back verbatim by [`parse_report_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub name: String,
    pub nodes: usize,
    pub ratio: u32,
    pub stride: u64,
    pub cost_scale: f64,
    pub mapping: String,
    pub data_scale: f64,
    pub dtl: String,
    pub rho: u64,
    pub s: f64,
    pub i: f64,
    pub g: f64,
    pub a: f64,
    pub se: f64,
    pub c: f64,
    pub idle_s: f64,
    pub idle_a: f64,
    pub sim_active: f64,
    pub sim_idle: f64,
    pub ana_active: f64,
    pub ana_idle: f64,
    pub steady_span: f64,
    pub makespan_predicted: f64,
    pub makespan_simulated: f64,
    pub eta_predicted: f64,
    pub eta_simulated: f64,
    pub scenario_class: String,
}

pub const REPORT_HEADER: &str = "name,nodes,ratio,stride,cost_scale,mapping,data_scale,dtl,rho,s,i,g,a,se,c,idle_s,idle_a,sim_active,sim_idle,ana_active,ana_idle,steady_span,makespan_predicted,makespan_simulated,eta_predicted,eta_simulated,scenario_class";

pub fn report_rows(results: &[SweepResult]) -> Vec<ReportRow> {
    results
        .iter()
        .map(|r| ReportRow {
            name: r.scenario.name.clone(),
            nodes: r.scenario.nodes,
            ratio: r.scenario.ratio,
            stride: r.scenario.stride,
            cost_scale: r.scenario.cost_scale,
            mapping: r.scenario.mapping.to_string(),
            data_scale: r.scenario.data_scale,
            dtl: r.scenario.dtl.to_string(),
            rho: r.rho,
            s: r.stages.s,
            i: r.stages.i,
            g: r.stages.g,
            a: r.stages.a,
            se: r.stages.se,
            c: r.stages.c,
            idle_s: r.idle_s_measured,
            idle_a: r.idle_a_measured,
            sim_active: r.component_times.sim_active,
            sim_idle: r.component_times.sim_idle,
            ana_active: r.component_times.ana_active,
            ana_idle: r.component_times.ana_idle,
            steady_span: r.steady_span,
            makespan_predicted: r.efficiency.makespan,
            makespan_simulated: r.makespan_simulated,
            eta_predicted: r.efficiency.eta,
            eta_simulated: r.eta_simulated,
            scenario_class: r.efficiency.scenario.to_string(),
        })
        .collect()
}

/// Writes rows with stable column order: times with 9 decimals, eta with 6.
pub fn write_report_csv<W: Write>(rows: &[ReportRow], mut w: W) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Validation(
            "refusing to export an empty report".into(),
        ));
    }
    writeln!(w, "{REPORT_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{:.9},{},{:.9},{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.6},{:.6},{}",
            r.name,
            r.nodes,
            r.ratio,
            r.stride,
            r.cost_scale,
            r.mapping,
            r.data_scale,
            r.dtl,
            r.rho,
            r.s,
            r.i,
            r.g,
            r.a,
            r.se,
            r.c,
            r.idle_s,
            r.idle_a,
            r.sim_active,
            r.sim_idle,
            r.ana_active,
            r.ana_idle,
            r.steady_span,
            r.makespan_predicted,
            r.makespan_simulated,
            r.eta_predicted,
            r.eta_simulated,
            r.scenario_class,
        )?;
    }
    Ok(())
}

/// Convenience: export results directly.
pub fn export_report<W: Write>(results: &[SweepResult], w: W) -> Result<()> {
    write_report_csv(&report_rows(results), w)
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse {
        path: "<report>".into(),
        msg: "empty report".into(),
    })?;
    if header != REPORT_HEADER {
        return Err(Error::Parse {
            path: "<report>".into(),
            msg: "unexpected header".into(),
        });
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 27 {
            return Err(Error::Parse {
                path: "<report>".into(),
                msg: format!("line {}: expected 27 columns, got {}", n + 2, cols.len()),
            });
        }
        let f = |i: usize| -> Result<f64> {
            cols[i].parse().map_err(|_| Error::Parse {
                path: "<report>".into(),
                msg: format!("line {}: bad number '{}'", n + 2, cols[i]),
            })
        };
        let u = |i: usize| -> Result<u64> {
            cols[i].parse().map_err(|_| Error::Parse {
                path: "<report>".into(),
                msg: format!("line {}: bad integer '{}'", n + 2, cols[i]),
            })
        };
        out.push(ReportRow {
            name: cols[0].to_string(),
            nodes: u(1)? as usize,
            ratio: u(2)? as u32,
            stride: u(3)?,
            cost_scale: f(4)?,
            mapping: cols[5].to_string(),
            data_scale: f(6)?,
            dtl: cols[7].to_string(),
            rho: u(8)?,
            s: f(9)?,
            i: f(10)?,
            g: f(11)?,
            a: f(12)?,
            se: f(13)?,
            c: f(14)?,
            idle_s: f(15)?,
            idle_a: f(16)?,
            sim_active: f(17)?,
            sim_idle: f(18)?,
            ana_active: f(19)?,
            ana_idle: f(20)?,
            steady_span: f(21)?,
            makespan_predicted: f(22)?,
            makespan_simulated: f(23)?,
            eta_predicted: f(24)?,
            eta_simulated: f(25)?,
            scenario_class: cols[26].to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn workload() -> Workload {
        Workload {
            iterations: 8000,
            particles: 1_000_000,
            cost_per_particle: 7.93e-7,
            size_per_particle: 100.0,
            rank_iteration_work: 0.004,
            halo_bytes: 0.0,
            exchange_every: 20,
        }
    }

    fn sweep() -> SweepSpec {
        SweepSpec {
            name: "grid".into(),
            platform: PathBuf::from("unused"),
            nodes: vec![1, 2, 4, 8],
            ratios: vec![15],
            strides: vec![20, 200, 500, 1000],
            constant_budget: Some(400.0),
            cost_scales: None,
            mappings: vec!["in-situ".into()],
            dedicated_nodes: 1,
            data_scales: vec![1.0],
            dtl: "instantaneous".into(),
            repetitions: 1,
            scatter_alpha: 0.0,
            jitter: 0.0,
            seed: 0,
            workload: workload(),
        }
    }

    #[test]
    fn constant_budget_reproduces_the_stride_cost_pairs() {
        let p = Platform::homogeneous(8, 32, 1.0, 1.25e9, 1e-4).unwrap();
        let grid = build_scenario_grid(&sweep(), &p).unwrap();
        assert_eq!(grid.len(), 16);
        let pairs: Vec<(u64, f64)> = grid[..4].iter().map(|s| (s.stride, s.cost_scale)).collect();
        assert_eq!(
            pairs,
            vec![(20, 1.0), (200, 10.0), (500, 25.0), (1000, 50.0)]
        );
        // Grid ordered by (nodes, ratio, stride); core counts 32..256.
        let counts: Vec<usize> = grid.iter().map(|s| s.nodes * 32).collect();
        assert_eq!(&counts[..4], &[32; 4]);
        assert_eq!(counts[4], 64);
        assert_eq!(counts[12], 256);
    }

    #[test]
    fn infeasible_ratio_is_rejected() {
        let p = Platform::homogeneous(2, 32, 1.0, 1.25e9, 1e-4).unwrap();
        let mut spec = sweep();
        spec.ratios = vec![32]; // would need a 33-way split of 32 cores
        assert!(matches!(
            build_scenario_grid(&spec, &p),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn insitu_mapping_spreads_and_intransit_packs() {
        let p = Platform::homogeneous(16, 32, 1.0, 1.25e9, 1e-4).unwrap();
        let s = Scenario {
            name: "m".into(),
            platform: PathBuf::from("unused"),
            nodes: 16,
            ratio: 15,
            stride: 1000,
            cost_scale: 50.0,
            mapping: MappingMode::InSitu,
            data_scale: 1.0,
            dtl: QueueMode::Mailbox,
            repetitions: 1,
            scatter_alpha: 0.0,
            jitter: 0.0,
            seed: 0,
            workload: workload(),
        };
        let b = build_mappings(&s, &p).unwrap();
        assert_eq!(b.rank_mapping.entries.len(), 16);
        assert!(b.rank_mapping.entries.iter().all(|&(_, c)| c == 30));
        assert!(b.analytics_mapping.entries.iter().all(|&(_, c)| c == 2));
        assert_eq!(b.queue_layout, QueueLayout::PerNode);

        let t = Scenario {
            mapping: MappingMode::InTransit { dedicated_nodes: 1 },
            ..s
        };
        let b = build_mappings(&t, &p).unwrap();
        assert_eq!(b.analytics_mapping.entries, vec![(NodeId(0), 32)]);
        assert_eq!(b.rank_mapping.total_slots(), 15 * 32);
        assert_eq!(b.queue_layout, QueueLayout::Single);
        // Ranks never share nodes with analytics actors.
        let ana_nodes: Vec<NodeId> = b.analytics_mapping.slots().collect();
        assert!(b.rank_mapping.slots().all(|n| !ana_nodes.contains(&n)));
    }

    #[test]
    fn report_round_trips_exactly() {
        let row = ReportRow {
            name: "x".into(),
            nodes: 4,
            ratio: 15,
            stride: 1000,
            cost_scale: 50.0,
            mapping: "in-situ".into(),
            data_scale: 1.0,
            dtl: "mailbox".into(),
            rho: 8,
            s: 4.0,
            i: 0.000001234,
            g: 0.25,
            a: 2.478125,
            se: 0.0,
            c: 0.0001,
            idle_s: 0.0,
            idle_a: 1.5218749999,
            sim_active: 28.0,
            sim_idle: 0.0,
            ana_active: 17.35,
            ana_idle: 10.65,
            steady_span: 28.0,
            makespan_predicted: 32.0,
            makespan_simulated: 32.01,
            eta_predicted: 0.619531,
            eta_simulated: 0.62,
            scenario_class: "IA".into(),
        };
        let mut buf = Vec::new();
        write_report_csv(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let parsed = parse_report_csv(&text).unwrap();
        let mut buf2 = Vec::new();
        write_report_csv(&parsed, &mut buf2).unwrap();
        assert_eq!(text, String::from_utf8(buf2).unwrap());
    }

    #[test]
    fn empty_report_is_an_error() {
        let mut buf = Vec::new();
        assert!(write_report_csv(&[], &mut buf).is_err());
        assert!(buf.is_empty());
    }
}
