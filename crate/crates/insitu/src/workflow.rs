//! The in-situ application model: simulation rank skeleton, analytics
//! actors, metric collector, mappings and the analytics configuration.
//!
//! Per step, every rank computes `stride` iterations (with a 6-neighbor
//! halo exchange every `exchange_every` iterations over a near-cubic 3D
//! rank grid), collects the previous step's metrics from the results
//! queue, and ingests its state share into the state queue in
//! fire-and-forget mode. Analytics actors loop on the state queue,
//! simulate the analysis of each received share and forward metrics to
//! the collector, which accumulates one value per rank before posting a
//! copy of the result for every rank. Shutdown uses poisoned values: the
//! simulation component sends one sentinel per analytics actor, and the
//! last actor running stops the collector.

use std::cell::{Cell, RefCell};
use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::rc::Rc;

use crate::dtl::{Message, QueueId, QueueMode, QueueStats, Tag};
use crate::engine::{ActorId, CondHandle, Ctx, Label, SimTime, Simulation, TraceEvent};
use crate::error::{Error, Result};
use crate::platform::{NodeId, Platform};

/// Size of the metric/result messages. The exchanged analytics values are
/// tiny compared to the state shares; a small constant keeps them
/// observable in traces without distorting timings.
pub const METRICS_MESSAGE_BYTES: f64 = 64.0;

/// Full description of one workflow execution.
#[derive(Debug, Clone)]
pub struct WorkflowConfig {
    /// Total iterations N of the main simulation loop.
    pub total_iterations: u64,
    /// Stride T: analytics run every T iterations.
    pub stride: u64,
    /// Halo-exchange periodicity X.
    pub exchange_every: u64,
    pub n_ranks: usize,
    /// Work units per iteration per rank (seconds on a reference core).
    pub rank_iteration_work: f64,
    /// Bytes exchanged with each neighbor per halo exchange.
    pub halo_bytes: f64,
    pub n_analytics_actors: usize,
    /// Optional path of the analytics mapping file (CLI surface).
    pub analytics_mapping: Option<PathBuf>,
    /// Seconds per particle on a reference core.
    pub cost_per_particle: f64,
    /// Scaling factor applied to the analytics cost.
    pub compute_scale: f64,
    /// Bytes per particle transferred from simulation to analytics.
    pub size_per_particle: f64,
    /// Scaling factor applied to the transferred data size.
    pub data_scale: f64,
    pub n_particles: u64,
    pub dtl_mode: QueueMode,
}

impl WorkflowConfig {
    /// Number of simulate-analyze steps.
    pub fn rho(&self) -> u64 {
        self.total_iterations / self.stride
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if self.total_iterations == 0 || !self.total_iterations.is_multiple_of(self.stride) {
            return Err(Error::Config(format!(
                "stride {} does not divide total iterations {}",
                self.stride, self.total_iterations
            )));
        }
        if self.exchange_every == 0 {
            return Err(Error::Config("exchange_every must be at least 1".into()));
        }
        if self.n_ranks == 0 {
            return Err(Error::Config("need at least one rank".into()));
        }
        if self.n_analytics_actors == 0 {
            return Err(Error::Config("need at least one analytics actor".into()));
        }
        for (name, v) in [
            ("rank_iteration_work", self.rank_iteration_work),
            ("halo_bytes", self.halo_bytes),
            ("cost_per_particle", self.cost_per_particle),
            ("compute_scale", self.compute_scale),
            ("size_per_particle", self.size_per_particle),
            ("data_scale", self.data_scale),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Placement of a set of entities on nodes, hostfile-style.
#[derive(Debug, Clone)]
pub struct Mapping {
    pub entries: Vec<(NodeId, usize)>,
}

impl Mapping {
    pub fn new(entries: Vec<(NodeId, usize)>) -> Self {
        Mapping { entries }
    }

    pub fn total_slots(&self) -> usize {
        self.entries.iter().map(|(_, c)| c).sum()
    }

    /// Expands to one node id per slot, in file order.
    pub fn slots(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entries
            .iter()
            .flat_map(|&(node, count)| std::iter::repeat_n(node, count))
    }
}

/// Parses a mapping file: one `node-name count` pair per line, `#`
/// comments allowed. The total slot count must equal `expected`.
pub fn load_mapping<P: AsRef<Path>>(
    path: P,
    platform: &Platform,
    expected: usize,
) -> Result<Mapping> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_mapping(&text, &path.display().to_string(), platform, expected)
}

pub fn parse_mapping(
    text: &str,
    origin: &str,
    platform: &Platform,
    expected: usize,
) -> Result<Mapping> {
    let mut entries = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let name = parts.next().unwrap();
        let count: usize = parts
            .next()
            .ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                msg: format!("line {}: expected 'node count'", lineno + 1),
            })?
            .parse()
            .map_err(|_| Error::Parse {
                path: origin.to_string(),
                msg: format!("line {}: bad count", lineno + 1),
            })?;
        if parts.next().is_some() {
            return Err(Error::Parse {
                path: origin.to_string(),
                msg: format!("line {}: trailing tokens", lineno + 1),
            });
        }
        let node = platform.node_id(name)?;
        entries.push((node, count));
    }
    let mapping = Mapping::new(entries);
    let found = mapping.total_slots();
    if found != expected {
        return Err(Error::CountMismatch { expected, found });
    }
    Ok(mapping)
}

/// Near-equal partition: the first `n mod m` entities receive one extra
/// particle; assignments sum to `n`.
pub fn assign_particles(n_particles: u64, n_entities: usize, index: usize) -> u64 {
    debug_assert!(index < n_entities);
    let m = n_entities as u64;
    n_particles / m + u64::from((index as u64) < n_particles % m)
}

/// A per-node split of cores between simulation and analytics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocationRatio {
    /// Simulation cores over analytics cores.
    pub r: u32,
    pub sim_cores_per_node: u32,
    pub ana_cores_per_node: u32,
}

/// All halving splits `(c-k, k)` with `k = c/2, c/4, ..., 1`. For 32
/// cores this yields R in {1, 3, 7, 15, 31}.
pub fn generate_ratio_allocations(cores_per_node: u32) -> Result<Vec<AllocationRatio>> {
    if cores_per_node < 2 || !cores_per_node.is_power_of_two() {
        return Err(Error::InvalidCoreCount(cores_per_node));
    }
    let mut out = Vec::new();
    let mut k = cores_per_node / 2;
    loop {
        out.push(AllocationRatio {
            r: (cores_per_node - k) / k,
            sim_cores_per_node: cores_per_node - k,
            ana_cores_per_node: k,
        });
        if k == 1 {
            break;
        }
        k /= 2;
    }
    Ok(out)
}

/// Factorization of `n` into three factors with minimal surface, i.e. the
/// most cubic 3D rank grid.
pub fn grid_dims(n: usize) -> (usize, usize, usize) {
    let mut best = (1, 1, n);
    let mut best_surface = usize::MAX;
    let mut a = 1;
    while a * a * a <= n {
        if n.is_multiple_of(a) {
            let m = n / a;
            let mut b = a;
            while b * b <= m {
                if m.is_multiple_of(b) {
                    let c = m / b;
                    let surface = a * b + b * c + a * c;
                    if surface < best_surface {
                        best_surface = surface;
                        best = (a, b, c);
                    }
                }
                b += 1;
            }
        }
        a += 1;
    }
    best
}

/// Out-edges of every rank in the periodic 3D grid: `(neighbor, direction)`
/// pairs, skipping degenerate size-1 dimensions.
fn halo_out_edges(n_ranks: usize) -> Vec<Vec<(usize, u8)>> {
    let (dx, dy, dz) = grid_dims(n_ranks);
    let coord = |r: usize| (r % dx, (r / dx) % dy, r / (dx * dy));
    let index = |x: usize, y: usize, z: usize| x + dx * (y + dy * z);
    let mut out = vec![Vec::new(); n_ranks];
    for (r, edges) in out.iter_mut().enumerate() {
        let (x, y, z) = coord(r);
        let dims = [dx, dy, dz];
        for (axis, &d) in dims.iter().enumerate() {
            if d == 1 {
                continue;
            }
            for (side, delta) in [(0usize, d - 1), (1, 1)] {
                let nb = match axis {
                    0 => index((x + delta) % dx, y, z),
                    1 => index(x, (y + delta) % dy, z),
                    _ => index(x, y, (z + delta) % dz),
                };
                edges.push((nb, (axis * 2 + side) as u8));
            }
        }
    }
    out
}

fn opposite(dir: u8) -> u8 {
    dir ^ 1
}

/// How the workflow lays its state queue out over the platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueueLayout {
    /// One global state queue shared by all ranks and actors.
    Single,
    /// One state queue per node; ranks and actors use their node's queue.
    /// This keeps state transfers on the loopback for in-situ mappings.
    PerNode,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub queue_layout: QueueLayout,
    pub allow_oversubscribe: bool,
    /// Node hosting the metric collector; defaults to the first analytics
    /// node.
    pub collector_node: Option<NodeId>,
    /// Bound on the state queue capacity, unbounded by default.
    pub state_queue_capacity: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            queue_layout: QueueLayout::Single,
            allow_oversubscribe: false,
            collector_node: None,
            state_queue_capacity: None,
        }
    }
}

/// Everything a finished run exposes for analysis.
#[derive(Debug)]
pub struct WorkflowOutcome {
    pub end_time: SimTime,
    pub trace: Vec<TraceEvent>,
    pub queue_stats: Vec<(String, QueueStats)>,
    pub all_terminated: bool,
}

struct Queues {
    state_for_rank: Vec<QueueId>,
    state_for_actor: Vec<QueueId>,
    results: QueueId,
    metrics: QueueId,
}

struct Shared {
    cfg: WorkflowConfig,
    rank_node: Vec<NodeId>,
    rank_share: Vec<u64>,
    poison_quota: Vec<usize>,
    halo_out: Vec<Vec<(usize, u8)>>,
    live_actors: Cell<usize>,
    halo_conds: RefCell<HashMap<(u64, u32, u8), CondHandle>>,
}

impl Shared {
    fn rank_of_producer(&self, producer: ActorId) -> usize {
        debug_assert!(producer < self.cfg.n_ranks);
        producer
    }

    fn halo_cond(&self, ctx: &Ctx, round: u64, sender: usize, dir: u8) -> CondHandle {
        *self
            .halo_conds
            .borrow_mut()
            .entry((round, sender as u32, dir))
            .or_insert_with(|| ctx.create_cond())
    }

    fn remove_halo_cond(&self, round: u64, sender: usize, dir: u8) {
        self.halo_conds
            .borrow_mut()
            .remove(&(round, sender as u32, dir));
    }
}

/// Runs a full in-situ workflow on the platform and returns its trace and
/// queue statistics.
pub fn run(
    platform: &Platform,
    cfg: &WorkflowConfig,
    rank_mapping: &Mapping,
    analytics_mapping: &Mapping,
    opts: &RunOptions,
) -> Result<WorkflowOutcome> {
    cfg.validate()?;
    let rank_node: Vec<NodeId> = rank_mapping.slots().collect();
    if rank_node.len() != cfg.n_ranks {
        return Err(Error::CountMismatch {
            expected: cfg.n_ranks,
            found: rank_node.len(),
        });
    }
    let ana_node: Vec<NodeId> = analytics_mapping.slots().collect();
    if ana_node.len() != cfg.n_analytics_actors {
        return Err(Error::CountMismatch {
            expected: cfg.n_analytics_actors,
            found: ana_node.len(),
        });
    }
    for &n in rank_node.iter().chain(ana_node.iter()) {
        if n.index() >= platform.n_nodes() {
            return Err(Error::UnknownNode(format!("#{}", n.index())));
        }
    }
    if !opts.allow_oversubscribe {
        let mut used: BTreeMap<NodeId, usize> = BTreeMap::new();
        for &n in rank_node.iter().chain(ana_node.iter()) {
            *used.entry(n).or_default() += 1;
        }
        for (n, slots) in used {
            let cores = platform.node(n).cores as usize;
            if slots > cores {
                return Err(Error::Config(format!(
                    "node {} oversubscribed: {} slots on {} cores",
                    platform.node(n).name,
                    slots,
                    cores
                )));
            }
        }
    }

    let mut sim = Simulation::new(platform);

    let (state_for_rank, state_for_actor) = match opts.queue_layout {
        QueueLayout::Single => {
            let q = sim.create_queue("state", cfg.dtl_mode, opts.state_queue_capacity)?;
            (vec![q; cfg.n_ranks], vec![q; cfg.n_analytics_actors])
        }
        QueueLayout::PerNode => {
            let mut by_node: BTreeMap<NodeId, QueueId> = BTreeMap::new();
            for &n in rank_node.iter().chain(ana_node.iter()) {
                if let std::collections::btree_map::Entry::Vacant(e) = by_node.entry(n) {
                    let q = sim.create_queue(
                        &format!("state@{}", platform.node(n).name),
                        cfg.dtl_mode,
                        opts.state_queue_capacity,
                    )?;
                    e.insert(q);
                }
            }
            let r = rank_node.iter().map(|n| by_node[n]).collect();
            let a = ana_node.iter().map(|n| by_node[n]).collect();
            (r, a)
        }
    };
    let results = sim.create_queue("results", cfg.dtl_mode, None)?;
    let metrics = sim.create_queue("metrics", cfg.dtl_mode, None)?;
    let queues = Rc::new(Queues {
        state_for_rank,
        state_for_actor,
        results,
        metrics,
    });

    // Each state queue must receive exactly as many sentinels as it has
    // consumers, spread round-robin over its producers.
    let mut poison_quota = vec![0usize; cfg.n_ranks];
    {
        let mut ranks_of_queue: BTreeMap<QueueId, Vec<usize>> = BTreeMap::new();
        let mut actors_of_queue: BTreeMap<QueueId, usize> = BTreeMap::new();
        for (r, q) in queues.state_for_rank.iter().enumerate() {
            ranks_of_queue.entry(*q).or_default().push(r);
        }
        for q in &queues.state_for_actor {
            *actors_of_queue.entry(*q).or_default() += 1;
        }
        for (q, n_actors) in &actors_of_queue {
            let Some(producers) = ranks_of_queue.get(q) else {
                return Err(Error::Config(
                    "state queue has analytics actors but no ranks to stop them".into(),
                ));
            };
            for j in 0..*n_actors {
                poison_quota[producers[j % producers.len()]] += 1;
            }
        }
        for q in ranks_of_queue.keys() {
            if !actors_of_queue.contains_key(q) {
                return Err(Error::Config(
                    "state queue has ranks but no analytics actor consumes it".into(),
                ));
            }
        }
    }

    let rank_share: Vec<u64> = (0..cfg.n_ranks)
        .map(|r| assign_particles(cfg.n_particles, cfg.n_ranks, r))
        .collect();
    let shared = Rc::new(Shared {
        cfg: cfg.clone(),
        rank_node: rank_node.clone(),
        rank_share,
        poison_quota,
        halo_out: halo_out_edges(cfg.n_ranks),
        live_actors: Cell::new(cfg.n_analytics_actors),
        halo_conds: RefCell::new(HashMap::new()),
    });

    for (r, &node) in rank_node.iter().enumerate() {
        let sh = Rc::clone(&shared);
        let q = Rc::clone(&queues);
        let id = sim.spawn(node, move |ctx| rank_program(ctx, sh, q, r))?;
        debug_assert_eq!(id, r);
    }
    for (a, &node) in ana_node.iter().enumerate() {
        let sh = Rc::clone(&shared);
        let q = Rc::clone(&queues);
        sim.spawn(node, move |ctx| analytics_program(ctx, sh, q, a))?;
    }
    let collector_node = opts.collector_node.unwrap_or(ana_node[0]);
    {
        let sh = Rc::clone(&shared);
        let q = Rc::clone(&queues);
        sim.spawn(collector_node, move |ctx| collector_program(ctx, sh, q))?;
    }

    let end_time = sim.run()?;
    let all_terminated = sim.all_terminated();
    Ok(WorkflowOutcome {
        end_time,
        trace: sim.take_trace(),
        queue_stats: sim.queue_stats(),
        all_terminated,
    })
}

/// One MPI-like simulation rank: compute, halo exchanges, collect, ingest.
async fn rank_program(ctx: Ctx, sh: Rc<Shared>, q: Rc<Queues>, rank: usize) -> Result<()> {
    let cfg = &sh.cfg;
    let rho = cfg.rho();
    let ingest_bytes = sh.rank_share[rank] as f64 * cfg.size_per_particle * cfg.data_scale;
    let state_q = q.state_for_rank[rank];
    for step in 1..=rho {
        ctx.trace(Label::S, format!("start step={step}"));
        let base = (step - 1) * cfg.stride;
        let mut done = 0u64;
        while done < cfg.stride {
            let next_boundary = if cfg.halo_bytes > 0.0 {
                let global = base + done;
                ((global / cfg.exchange_every + 1) * cfg.exchange_every).min(base + cfg.stride)
            } else {
                base + cfg.stride
            };
            let chunk = next_boundary - (base + done);
            if chunk > 0 {
                ctx.execute(chunk as f64 * cfg.rank_iteration_work).await?;
                done += chunk;
            }
            let global = base + done;
            if cfg.halo_bytes > 0.0 && global.is_multiple_of(cfg.exchange_every) {
                halo_exchange(&ctx, &sh, rank, global).await?;
            }
        }
        ctx.trace(Label::S, format!("end step={step}"));
        if step >= 2 {
            // The next ingest waits for the previous step's metrics, specifically.
            let m = ctx
                .queue_get_matching(q.results, Some(Label::C), Some(Tag::Step(step - 1)))
                .await?;
            debug_assert!(!m.is_poison());
        }
        ctx.queue_put_async(
            state_q,
            Message::new(ingest_bytes, Tag::Step(step), ctx.actor_id()),
            Some(Label::I),
        )
        .await?;
    }
    let m = ctx
        .queue_get_matching(q.results, Some(Label::C), Some(Tag::Step(rho)))
        .await?;
    debug_assert!(!m.is_poison());
    for _ in 0..sh.poison_quota[rank] {
        ctx.queue_put_async(state_q, Message::poison(ctx.actor_id()), None)
            .await?;
    }
    Ok(())
}

/// Sends `halo_bytes` to the six grid neighbors and waits for both the
/// outgoing and the matching incoming exchanges of this round.
async fn halo_exchange(ctx: &Ctx, sh: &Rc<Shared>, rank: usize, round: u64) -> Result<()> {
    let edges = &sh.halo_out[rank];
    if edges.is_empty() {
        return Ok(());
    }
    let mut handles = Vec::with_capacity(edges.len());
    for &(nb, _) in edges {
        handles.push(ctx.comm_async(sh.rank_node[nb], sh.cfg.halo_bytes)?);
    }
    for h in handles {
        ctx.wait_comm(h).await?;
    }
    for &(_, dir) in edges {
        let c = sh.halo_cond(ctx, round, rank, dir);
        ctx.signal(c);
    }
    for &(_, dir) in edges {
        // The flow arriving along `dir` originates at the neighbor sitting
        // in the opposite direction.
        let sender = edges
            .iter()
            .find(|&&(_, d)| d == opposite(dir))
            .map(|&(nb, _)| nb)
            .unwrap();
        let c = sh.halo_cond(ctx, round, sender, dir);
        ctx.wait_cond(c).await;
        sh.remove_halo_cond(round, sender, dir);
    }
    Ok(())
}

/// Analytics actor: drain the state queue, simulate the analysis of each
/// share, forward metrics; on the poisoned value, the last actor running
/// stops the collector.
async fn analytics_program(
    ctx: Ctx,
    sh: Rc<Shared>,
    q: Rc<Queues>,
    actor_index: usize,
) -> Result<()> {
    let cfg = &sh.cfg;
    let state_q = q.state_for_actor[actor_index];
    loop {
        let m = ctx.queue_get(state_q, Some(Label::G)).await?;
        if m.is_poison() {
            let left = sh.live_actors.get() - 1;
            sh.live_actors.set(left);
            if left == 0 {
                ctx.queue_put_async(q.metrics, Message::poison(ctx.actor_id()), None)
                    .await?;
            }
            return Ok(());
        }
        let Tag::Step(step) = m.tag else {
            unreachable!()
        };
        let rank = sh.rank_of_producer(m.producer);
        let work = sh.rank_share[rank] as f64 * cfg.cost_per_particle * cfg.compute_scale;
        ctx.trace(Label::A, format!("start step={step}"));
        ctx.execute(work).await?;
        ctx.trace(Label::A, format!("end step={step}"));
        ctx.queue_put_async(
            q.metrics,
            Message::new(METRICS_MESSAGE_BYTES, Tag::Step(step), ctx.actor_id()),
            Some(Label::Se),
        )
        .await?;
    }
}

/// Metric collector: accumulate one metric set per rank, then post one
/// copy of the result for every rank; return on the poisoned value.
async fn collector_program(ctx: Ctx, sh: Rc<Shared>, q: Rc<Queues>) -> Result<()> {
    let n_ranks = sh.cfg.n_ranks;
    loop {
        let mut collected = 0usize;
        let mut step = 0u64;
        while collected < n_ranks {
            let m = ctx.queue_get(q.metrics, None).await?;
            if m.is_poison() {
                ctx.trace(Label::Other, "collector_poison".to_string());
                return Ok(());
            }
            let Tag::Step(k) = m.tag else { unreachable!() };
            step = k;
            collected += 1;
            ctx.trace(
                Label::Other,
                format!("collector_recv step={k} n={collected}"),
            );
        }
        ctx.trace(
            Label::Other,
            format!("collector_fire step={step} collected={collected}"),
        );
        for copy in 0..n_ranks {
            ctx.queue_put_async(
                q.results,
                Message::new(METRICS_MESSAGE_BYTES, Tag::Step(step), ctx.actor_id()),
                None,
            )
            .await?;
            ctx.trace(
                Label::Other,
                format!("collector_put step={step} copy={copy}"),
            );
        }
    }
}
