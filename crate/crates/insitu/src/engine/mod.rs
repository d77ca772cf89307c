//! Deterministic discrete-event core: virtual clock, cooperative actors,
//! compute and communication activities.
//!
//! Actors are plain `async` functions driven by the engine's event loop.
//! Blocking operations (compute delays, communications, queue accesses)
//! suspend the actor until the corresponding simulated activity completes.
//! A simulation instance is strictly single-threaded: determinism comes
//! from processing events in `(time, sequence)` order and waking actors in
//! FIFO order. Cores are counted resources per node; compute activities
//! beyond the core count queue FIFO. Communications occupy every link of
//! their route after a latency phase and drain under progressive max-min
//! fair sharing, recomputed at every flow arrival and departure.

mod network;

use std::cell::RefCell;
use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::fmt;
use std::future::Future;
use std::io::Write;
use std::pin::Pin;
use std::rc::Rc;
use std::task::{Context, Poll, Waker};

use crate::dtl::{Message, QueueState, TransferCtx};
use crate::error::{Error, Result};
use crate::platform::{NodeId, Platform};

pub(crate) use network::FlowId;

/// Virtual time in seconds.
pub type SimTime = f64;

/// Actor identifier, assigned densely in spawn order.
pub type ActorId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActorState {
    Runnable,
    Blocked,
    Terminated,
}

/// Snapshot of one actor's identity and scheduling state.
#[derive(Debug, Clone)]
pub struct ActorHandle {
    pub id: ActorId,
    pub location: NodeId,
    pub state: ActorState,
}

/// Stage tag attached to trace events.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    S,
    I,
    G,
    A,
    Se,
    C,
    Other,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Label::S => "S",
            Label::I => "I",
            Label::G => "G",
            Label::A => "A",
            Label::Se => "Se",
            Label::C => "C",
            Label::Other => "other",
        };
        f.write_str(s)
    }
}

/// One timestamped trace record.
#[derive(Debug, Clone)]
pub struct TraceEvent {
    pub time: SimTime,
    pub actor: ActorId,
    pub label: Label,
    pub detail: String,
    pub seq: u64,
}

/// Writes trace events as CSV with 9-digit timestamps.
pub fn write_trace_csv<W: Write>(events: &[TraceEvent], mut w: W) -> std::io::Result<()> {
    writeln!(w, "time,actor,label,detail,seq")?;
    for e in events {
        writeln!(
            w,
            "{:.9},{},{},{},{}",
            e.time, e.actor, e.label, e.detail, e.seq
        )?;
    }
    Ok(())
}

pub(crate) type WaitId = usize;

#[derive(Debug)]
pub(crate) enum WaitValue {
    Unit,
    Time(SimTime),
    Msg(Message),
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum WaitKind {
    Compute,
    Comm,
    Sleep,
    QueueGet(usize),
    QueuePutSpace(usize),
    PutDone(usize),
    Cond,
}

pub(crate) struct WaitSlot {
    done: bool,
    value: Option<WaitValue>,
    waiters: Vec<ActorId>,
    kind: WaitKind,
}

struct NodeRt {
    cores: u32,
    busy: u32,
    speed: f64,
    queue: VecDeque<(WaitId, f64)>,
}

pub(crate) enum FlowPurpose {
    Comm { wait: WaitId },
    Dtl(TransferCtx),
}

enum EvKind {
    ComputeDone { node: usize, wait: WaitId },
    FlowArrive { flow: FlowId },
    FlowDone { flow: FlowId, gen: u64 },
    Timer { wait: WaitId },
    DtlDeliver(TransferCtx),
}

struct Ev {
    time: f64,
    seq: u64,
    kind: EvKind,
}

impl PartialEq for Ev {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for Ev {}
impl PartialOrd for Ev {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ev {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.seq.cmp(&other.seq))
    }
}

struct ActorMeta {
    node: NodeId,
    state: ActorState,
    blocked_on: Option<WaitId>,
}

pub(crate) struct Inner {
    plat: Platform,
    clock: SimTime,
    last_event_time: SimTime,
    ev_seq: u64,
    heap: BinaryHeap<Reverse<Ev>>,
    nodes: Vec<NodeRt>,
    net: network::FlowNetwork,
    purposes: Vec<Option<FlowPurpose>>,
    net_dirty: bool,
    waits: Vec<WaitSlot>,
    ready: VecDeque<ActorId>,
    meta: Vec<ActorMeta>,
    pub(crate) queues: Vec<QueueState>,
    queue_names: BTreeMap<String, usize>,
    trace: Vec<TraceEvent>,
    trace_seq: u64,
    n_live: usize,
}

impl Inner {
    pub(crate) fn clock(&self) -> SimTime {
        self.clock
    }

    pub(crate) fn new_wait(&mut self, kind: WaitKind) -> WaitId {
        let id = self.waits.len();
        self.waits.push(WaitSlot {
            done: false,
            value: None,
            waiters: Vec::new(),
            kind,
        });
        id
    }

    pub(crate) fn complete_wait(&mut self, wait: WaitId, value: WaitValue) {
        let slot = &mut self.waits[wait];
        if slot.done {
            return;
        }
        slot.done = true;
        slot.value = Some(value);
        let waiters = std::mem::take(&mut slot.waiters);
        for a in waiters {
            let m = &mut self.meta[a];
            if m.state == ActorState::Blocked {
                m.state = ActorState::Runnable;
                m.blocked_on = None;
            }
            self.ready.push_back(a);
        }
    }

    pub(crate) fn wait_is_done(&self, wait: WaitId) -> bool {
        self.waits[wait].done
    }

    fn schedule(&mut self, time: f64, kind: EvKind) {
        let seq = self.ev_seq;
        self.ev_seq += 1;
        self.heap.push(Reverse(Ev { time, seq, kind }));
    }

    /// Schedules a pure timer completing `wait` at an absolute time.
    pub(crate) fn schedule_timer(&mut self, time: f64, wait: WaitId) {
        self.schedule(time, EvKind::Timer { wait });
    }

    pub(crate) fn schedule_dtl_deliver(&mut self, time: f64, tc: TransferCtx) {
        self.schedule(time, EvKind::DtlDeliver(tc));
    }

    pub(crate) fn emit(&mut self, actor: ActorId, label: Label, detail: String) {
        let seq = self.trace_seq;
        self.trace_seq += 1;
        debug_assert!(self.trace.last().is_none_or(|e| e.time <= self.clock));
        self.trace.push(TraceEvent {
            time: self.clock,
            actor,
            label,
            detail,
            seq,
        });
    }

    pub(crate) fn start_compute(&mut self, node: NodeId, work: f64) -> WaitId {
        let wait = self.new_wait(WaitKind::Compute);
        let idx = node.index();
        let n = &mut self.nodes[idx];
        if n.busy < n.cores {
            n.busy += 1;
            let dur = work / n.speed;
            let t = self.clock + dur;
            self.schedule(t, EvKind::ComputeDone { node: idx, wait });
        } else {
            n.queue.push_back((wait, work));
        }
        wait
    }

    /// Registers a flow (or pure-latency delivery for zero-size payloads).
    pub(crate) fn start_flow(
        &mut self,
        src: NodeId,
        dst: NodeId,
        bytes: f64,
        purpose: FlowPurpose,
    ) -> Result<()> {
        let route = self.plat.route(src, dst)?;
        let lat = self.plat.route_latency(&route);
        if bytes <= 0.0 {
            match purpose {
                FlowPurpose::Comm { wait } => self.schedule_timer(self.clock + lat, wait),
                FlowPurpose::Dtl(tc) => self.schedule_dtl_deliver(self.clock + lat, tc),
            }
            return Ok(());
        }
        let id = self.net.create(route, bytes);
        debug_assert_eq!(self.purposes.len(), id);
        self.purposes.push(Some(purpose));
        self.schedule(self.clock + lat, EvKind::FlowArrive { flow: id });
        Ok(())
    }

    fn rebalance(&mut self) {
        self.net_dirty = false;
        let updates = self.net.rebalance(self.clock);
        for (flow, completion, gen) in updates {
            self.schedule(completion, EvKind::FlowDone { flow, gen });
        }
    }

    fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|Reverse(ev)| ev.time)
    }

    /// Processes every event scheduled at exactly the current clock.
    fn process_batch(&mut self) {
        let t = self.clock;
        self.last_event_time = t;
        while self.peek_time() == Some(t) {
            let Reverse(ev) = self.heap.pop().unwrap();
            match ev.kind {
                EvKind::ComputeDone { node, wait } => {
                    self.complete_wait(wait, WaitValue::Time(t));
                    let n = &mut self.nodes[node];
                    n.busy -= 1;
                    if let Some((w, work)) = n.queue.pop_front() {
                        n.busy += 1;
                        let dur = work / n.speed;
                        self.schedule(t + dur, EvKind::ComputeDone { node, wait: w });
                    }
                }
                EvKind::FlowArrive { flow } => {
                    self.net.activate(flow, t);
                    self.net_dirty = true;
                }
                EvKind::FlowDone { flow, gen } => {
                    if !self.net.is_active(flow) || self.net.gen(flow) != gen {
                        continue;
                    }
                    self.net.complete(flow, t);
                    self.net_dirty = true;
                    match self.purposes[flow].take() {
                        Some(FlowPurpose::Comm { wait }) => {
                            self.complete_wait(wait, WaitValue::Time(t))
                        }
                        Some(FlowPurpose::Dtl(tc)) => crate::dtl::finish_transfer(self, tc),
                        None => unreachable!("flow completed twice"),
                    }
                }
                EvKind::Timer { wait } => self.complete_wait(wait, WaitValue::Time(t)),
                EvKind::DtlDeliver(tc) => crate::dtl::finish_transfer(self, tc),
            }
        }
    }

    fn deadlock_error(&self) -> Error {
        if std::env::var_os("INSITU_DEBUG_TRACE").is_some() {
            for e in &self.trace {
                eprintln!("{:.6} a{} {} {}", e.time, e.actor, e.label, e.detail);
            }
        }
        let mut blocked = Vec::new();
        for (id, m) in self.meta.iter().enumerate() {
            if m.state == ActorState::Terminated {
                continue;
            }
            let what = match m.blocked_on.map(|w| self.waits[w].kind) {
                Some(WaitKind::Compute) => "compute activity".to_string(),
                Some(WaitKind::Comm) => "communication".to_string(),
                Some(WaitKind::Sleep) => "timer".to_string(),
                Some(WaitKind::QueueGet(q)) => {
                    format!("get on queue '{}'", self.queues[q].name)
                }
                Some(WaitKind::QueuePutSpace(q)) => {
                    format!("space on bounded queue '{}'", self.queues[q].name)
                }
                Some(WaitKind::PutDone(q)) => {
                    format!("transfer completion on queue '{}'", self.queues[q].name)
                }
                Some(WaitKind::Cond) => "condition".to_string(),
                None => "nothing (never scheduled)".to_string(),
            };
            blocked.push((id, what));
        }
        Error::Deadlock { blocked }
    }
}

type ActorFuture = Pin<Box<dyn Future<Output = Result<()>>>>;

struct ActorSlot {
    fut: Option<ActorFuture>,
}

/// A single deterministic simulation instance over a platform.
pub struct Simulation {
    inner: Rc<RefCell<Inner>>,
    actors: Vec<ActorSlot>,
}

impl Simulation {
    pub fn new(platform: &Platform) -> Self {
        let nodes = platform
            .nodes
            .iter()
            .map(|n| NodeRt {
                cores: n.cores,
                busy: 0,
                speed: n.core_speed,
                queue: VecDeque::new(),
            })
            .collect();
        let caps = platform
            .link_resources()
            .iter()
            .map(|l| l.bandwidth)
            .collect();
        let inner = Inner {
            plat: platform.clone(),
            clock: 0.0,
            last_event_time: 0.0,
            ev_seq: 0,
            heap: BinaryHeap::new(),
            nodes,
            net: network::FlowNetwork::new(caps),
            purposes: Vec::new(),
            net_dirty: false,
            waits: Vec::new(),
            ready: VecDeque::new(),
            meta: Vec::new(),
            queues: Vec::new(),
            queue_names: BTreeMap::new(),
            trace: Vec::new(),
            trace_seq: 0,
            n_live: 0,
        };
        Simulation {
            inner: Rc::new(RefCell::new(inner)),
            actors: Vec::new(),
        }
    }

    /// Starts an actor on a node. Ids are assigned in spawn order.
    pub fn spawn<F, Fut>(&mut self, node: NodeId, f: F) -> Result<ActorId>
    where
        F: FnOnce(Ctx) -> Fut,
        Fut: Future<Output = Result<()>> + 'static,
    {
        {
            let mut inner = self.inner.borrow_mut();
            if node.index() >= inner.plat.n_nodes() {
                return Err(Error::UnknownNode(format!("#{}", node.index())));
            }
            let id = inner.meta.len();
            inner.meta.push(ActorMeta {
                node,
                state: ActorState::Runnable,
                blocked_on: None,
            });
            inner.ready.push_back(id);
            inner.n_live += 1;
        }
        let id = self.actors.len();
        let ctx = Ctx {
            inner: Rc::clone(&self.inner),
            actor: id,
            node,
        };
        self.actors.push(ActorSlot {
            fut: Some(Box::pin(f(ctx))),
        });
        Ok(id)
    }

    /// Runs until event exhaustion. Returns the time of the last processed
    /// event, or a deadlock error naming every blocked actor.
    pub fn run(&mut self) -> Result<SimTime> {
        self.run_inner(None)
    }

    /// Runs until no event at or before `deadline` remains.
    pub fn run_until(&mut self, deadline: SimTime) -> Result<SimTime> {
        self.run_inner(Some(deadline))
    }

    fn run_inner(&mut self, deadline: Option<SimTime>) -> Result<SimTime> {
        loop {
            loop {
                let next = self.inner.borrow_mut().ready.pop_front();
                match next {
                    Some(a) => self.poll_actor(a)?,
                    None => break,
                }
            }
            let mut inner = self.inner.borrow_mut();
            if !inner.ready.is_empty() {
                continue;
            }
            if inner.peek_time() == Some(inner.clock) {
                inner.process_batch();
                continue;
            }
            if inner.net_dirty {
                inner.rebalance();
                continue;
            }
            match inner.peek_time() {
                Some(t) => {
                    if let Some(d) = deadline {
                        if t > d {
                            return Ok(inner.last_event_time);
                        }
                    }
                    inner.clock = t;
                    inner.process_batch();
                }
                None => {
                    if inner.n_live == 0 {
                        return Ok(inner.last_event_time);
                    }
                    return Err(inner.deadlock_error());
                }
            }
        }
    }

    fn poll_actor(&mut self, a: ActorId) -> Result<()> {
        let Some(mut fut) = self.actors[a].fut.take() else {
            return Ok(());
        };
        let mut cx = Context::from_waker(Waker::noop());
        match fut.as_mut().poll(&mut cx) {
            Poll::Pending => {
                self.actors[a].fut = Some(fut);
                Ok(())
            }
            Poll::Ready(result) => {
                let mut inner = self.inner.borrow_mut();
                inner.meta[a].state = ActorState::Terminated;
                inner.n_live -= 1;
                result
            }
        }
    }

    pub fn time(&self) -> SimTime {
        self.inner.borrow().clock
    }

    pub fn actor(&self, id: ActorId) -> Option<ActorHandle> {
        let inner = self.inner.borrow();
        inner.meta.get(id).map(|m| ActorHandle {
            id,
            location: m.node,
            state: m.state,
        })
    }

    pub fn all_terminated(&self) -> bool {
        self.inner.borrow().n_live == 0
    }

    pub fn trace_len(&self) -> usize {
        self.inner.borrow().trace.len()
    }

    /// Takes the accumulated trace out of the simulation.
    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        std::mem::take(&mut self.inner.borrow_mut().trace)
    }

    pub fn with_trace<R>(&self, f: impl FnOnce(&[TraceEvent]) -> R) -> R {
        f(&self.inner.borrow().trace)
    }

    /// Registers a queue; see the [`crate::dtl`] module for semantics.
    pub fn create_queue(
        &mut self,
        name: &str,
        mode: crate::dtl::QueueMode,
        capacity: Option<usize>,
    ) -> Result<crate::dtl::QueueId> {
        let mut inner = self.inner.borrow_mut();
        if inner.queue_names.contains_key(name) {
            return Err(Error::DuplicateName(name.to_string()));
        }
        let id = inner.queues.len();
        inner
            .queues
            .push(QueueState::new(name.to_string(), mode, capacity));
        inner.queue_names.insert(name.to_string(), id);
        Ok(crate::dtl::QueueId(id))
    }

    pub fn queue_stats(&self) -> Vec<(String, crate::dtl::QueueStats)> {
        let inner = self.inner.borrow();
        inner
            .queues
            .iter()
            .map(|q| (q.name.clone(), q.stats))
            .collect()
    }

    /// Marks every queue closed; later put/get calls fail with `QueueClosed`.
    pub fn close_queues(&mut self) {
        let mut inner = self.inner.borrow_mut();
        for q in &mut inner.queues {
            q.closed = true;
        }
    }
}

/// Actor-side handle for issuing simulated activities.
#[derive(Clone)]
pub struct Ctx {
    pub(crate) inner: Rc<RefCell<Inner>>,
    pub(crate) actor: ActorId,
    pub(crate) node: NodeId,
}

/// Completion handle of an asynchronous point-to-point communication.
#[derive(Debug, Clone, Copy)]
pub struct CommHandle {
    wait: WaitId,
}

/// A one-shot condition other actors can wait on.
#[derive(Debug, Clone, Copy)]
pub struct CondHandle {
    wait: WaitId,
}

impl Ctx {
    pub fn now(&self) -> SimTime {
        self.inner.borrow().clock
    }

    pub fn actor_id(&self) -> ActorId {
        self.actor
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn trace(&self, label: Label, detail: impl Into<String>) {
        self.inner
            .borrow_mut()
            .emit(self.actor, label, detail.into());
    }

    /// Occupies one core of the actor's node for `work / core_speed`
    /// seconds and returns the completion time.
    pub async fn execute(&self, work: f64) -> Result<SimTime> {
        if work < 0.0 {
            return Err(Error::Validation(format!("negative work: {work}")));
        }
        let wait = self.inner.borrow_mut().start_compute(self.node, work);
        match self.wait_on(wait).await {
            WaitValue::Time(t) => Ok(t),
            _ => unreachable!(),
        }
    }

    pub async fn sleep(&self, duration: f64) -> Result<SimTime> {
        if duration < 0.0 {
            return Err(Error::Validation(format!("negative sleep: {duration}")));
        }
        let wait = {
            let mut inner = self.inner.borrow_mut();
            let w = inner.new_wait(WaitKind::Sleep);
            let t = inner.clock + duration;
            inner.schedule_timer(t, w);
            w
        };
        match self.wait_on(wait).await {
            WaitValue::Time(t) => Ok(t),
            _ => unreachable!(),
        }
    }

    /// Starts a flow towards `dst` and returns immediately.
    pub fn comm_async(&self, dst: NodeId, bytes: f64) -> Result<CommHandle> {
        if bytes <= 0.0 {
            return Err(Error::Validation(format!(
                "comm size must be positive: {bytes}"
            )));
        }
        let mut inner = self.inner.borrow_mut();
        let wait = inner.new_wait(WaitKind::Comm);
        inner.start_flow(self.node, dst, bytes, FlowPurpose::Comm { wait })?;
        Ok(CommHandle { wait })
    }

    pub async fn wait_comm(&self, h: CommHandle) -> Result<SimTime> {
        match self.wait_on(h.wait).await {
            WaitValue::Time(t) => Ok(t),
            _ => unreachable!(),
        }
    }

    /// Synchronous point-to-point communication; returns the completion time.
    pub async fn comm(&self, dst: NodeId, bytes: f64) -> Result<SimTime> {
        let h = self.comm_async(dst, bytes)?;
        self.wait_comm(h).await
    }

    pub fn create_cond(&self) -> CondHandle {
        let wait = self.inner.borrow_mut().new_wait(WaitKind::Cond);
        CondHandle { wait }
    }

    /// Completes a condition; idempotent.
    pub fn signal(&self, c: CondHandle) {
        self.inner
            .borrow_mut()
            .complete_wait(c.wait, WaitValue::Unit);
    }

    pub async fn wait_cond(&self, c: CondHandle) {
        self.wait_on(c.wait).await;
    }

    pub(crate) fn wait_on(&self, wait: WaitId) -> WaitFuture {
        WaitFuture {
            inner: Rc::clone(&self.inner),
            wait,
            actor: self.actor,
            registered: false,
        }
    }
}

pub(crate) struct WaitFuture {
    inner: Rc<RefCell<Inner>>,
    wait: WaitId,
    actor: ActorId,
    registered: bool,
}

impl Future for WaitFuture {
    type Output = WaitValue;

    fn poll(mut self: Pin<&mut Self>, _cx: &mut Context<'_>) -> Poll<WaitValue> {
        let mut inner = self.inner.borrow_mut();
        if inner.waits[self.wait].done {
            let v = inner.waits[self.wait]
                .value
                .take()
                .unwrap_or(WaitValue::Unit);
            Poll::Ready(v)
        } else {
            if !self.registered {
                let wait = self.wait;
                let actor = self.actor;
                inner.waits[wait].waiters.push(actor);
                inner.meta[actor].state = ActorState::Blocked;
                inner.meta[actor].blocked_on = Some(wait);
                drop(inner);
                self.registered = true;
            }
            Poll::Pending
        }
    }
}
