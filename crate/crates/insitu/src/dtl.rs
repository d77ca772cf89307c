//! Simulated Data Transport Layer: producer-consumer message queues.
//!
//! Two queue semantics are available. An `Instantaneous` queue moves
//! messages with zero simulated-time cost while preserving flow
//! dependencies: a get never returns before the matching put. A `Mailbox`
//! queue is a rendezvous point: the payload transfer is simulated as a
//! communication between the producer's and the consumer's nodes (over
//! the loopback pseudo-link when both share a node), and unmatched
//! operations queue up FIFO. Both kinds support synchronous and
//! asynchronous puts and optional bounded capacity with back-pressure.
//!
//! The stage labels (`I`, `G`, `Se`, `C`) attached by callers end up in
//! the trace: `block` when a get starts waiting, `start` when the message
//! is matched, `end` at delivery.

use std::collections::VecDeque;

use crate::engine::{
    ActorId, Ctx, FlowPurpose, Inner, Label, SimTime, WaitId, WaitKind, WaitValue,
};
use crate::error::{Error, Result};
use crate::platform::NodeId;

/// Queue semantics selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueueMode {
    /// Zero-cost exchanges that only enforce flow dependencies.
    Instantaneous,
    /// Rendezvous semantics with simulated payload transfers.
    Mailbox,
}

impl std::fmt::Display for QueueMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QueueMode::Instantaneous => f.write_str("instantaneous"),
            QueueMode::Mailbox => f.write_str("mailbox"),
        }
    }
}

impl std::str::FromStr for QueueMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "instantaneous" => Ok(QueueMode::Instantaneous),
            "mailbox" => Ok(QueueMode::Mailbox),
            other => Err(Error::Config(format!("unknown DTL mode: {other}"))),
        }
    }
}

/// Identifier of a queue within one simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QueueId(pub(crate) usize);

/// Message tag: the step it belongs to, or the shutdown sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Step(u64),
    Poison,
}

/// A payload moving through the DTL. Only the size is simulated.
#[derive(Debug)]
pub struct Message {
    pub payload_size: f64,
    pub tag: Tag,
    pub producer: ActorId,
}

impl Message {
    pub fn new(payload_size: f64, tag: Tag, producer: ActorId) -> Self {
        debug_assert!(payload_size >= 0.0);
        Message {
            payload_size,
            tag,
            producer,
        }
    }

    /// The poisoned value: a zero-size shutdown sentinel.
    pub fn poison(producer: ActorId) -> Self {
        Message {
            payload_size: 0.0,
            tag: Tag::Poison,
            producer,
        }
    }

    pub fn is_poison(&self) -> bool {
        self.tag == Tag::Poison
    }
}

/// Put/get counters of one queue.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueueStats {
    pub puts: u64,
    pub gets: u64,
}

/// Completion handle of an asynchronous put.
#[derive(Debug, Clone, Copy)]
pub struct PutHandle {
    wait: WaitId,
}

struct PendingMsg {
    msg: Message,
    producer_node: NodeId,
    put_wait: WaitId,
    /// `(actor, label, step detail)` of a synchronous labeled mailbox put
    /// whose `end` event is emitted at transfer completion.
    put_end: Option<(ActorId, Label, String)>,
}

struct WaitingConsumer {
    block_time: SimTime,
    actor: ActorId,
    node: NodeId,
    wait: WaitId,
    label: Option<Label>,
    /// Restricts matching to one tag (selective receive); `None` takes any
    /// message.
    filter: Option<Tag>,
}

fn accepts(filter: Option<Tag>, tag: Tag) -> bool {
    filter.is_none_or(|f| f == tag)
}

pub(crate) struct QueueState {
    pub(crate) name: String,
    mode: QueueMode,
    capacity: Option<usize>,
    pub(crate) closed: bool,
    pending: VecDeque<PendingMsg>,
    waiting_consumers: Vec<WaitingConsumer>,
    space_waiters: VecDeque<SpaceWaiter>,
    pub(crate) stats: QueueStats,
}

struct SpaceWaiter {
    space_wait: WaitId,
    pmsg: PendingMsg,
    start_label: Option<(ActorId, Label)>,
}

impl QueueState {
    pub(crate) fn new(name: String, mode: QueueMode, capacity: Option<usize>) -> Self {
        QueueState {
            name,
            mode,
            capacity,
            closed: false,
            pending: VecDeque::new(),
            waiting_consumers: Vec::new(),
            space_waiters: VecDeque::new(),
            stats: QueueStats::default(),
        }
    }

    fn full(&self) -> bool {
        self.capacity.is_some_and(|c| self.pending.len() >= c)
    }

    /// Oldest waiting consumer accepting `tag`: FIFO by block time, ties by
    /// actor id.
    fn pop_best_consumer(&mut self, tag: Tag) -> Option<WaitingConsumer> {
        let best = self
            .waiting_consumers
            .iter()
            .enumerate()
            .filter(|(_, c)| accepts(c.filter, tag))
            .min_by(|(_, a), (_, b)| {
                a.block_time
                    .total_cmp(&b.block_time)
                    .then(a.actor.cmp(&b.actor))
            })
            .map(|(i, _)| i)?;
        Some(self.waiting_consumers.swap_remove(best))
    }

    /// Oldest pending message a filter accepts.
    fn pop_matching_pending(&mut self, filter: Option<Tag>) -> Option<PendingMsg> {
        let idx = self
            .pending
            .iter()
            .position(|p| accepts(filter, p.msg.tag))?;
        self.pending.remove(idx)
    }
}

/// State moved along with a mailbox transfer; resolved when the simulated
/// communication completes.
pub(crate) struct TransferCtx {
    pub(crate) queue: usize,
    pub(crate) get_wait: WaitId,
    pub(crate) put_wait: WaitId,
    pub(crate) put_end: Option<(ActorId, Label, String)>,
    pub(crate) msg: Message,
    pub(crate) consumer: ActorId,
    pub(crate) label: Option<Label>,
    pub(crate) route: &'static str,
}

fn step_detail(tag: Tag) -> String {
    match tag {
        Tag::Step(k) => format!("step={k}"),
        Tag::Poison => "poison".to_string(),
    }
}

/// Completes a mailbox transfer: emits the consumer's `end` event, counts
/// the get and unblocks both sides.
pub(crate) fn finish_transfer(inner: &mut Inner, tc: TransferCtx) {
    let t = inner.clock();
    if let Some(l) = tc.label {
        inner.emit(
            tc.consumer,
            l,
            format!("end {} route={}", step_detail(tc.msg.tag), tc.route),
        );
    }
    if let Some((actor, label, detail)) = tc.put_end {
        inner.emit(actor, label, format!("end {detail}"));
    }
    inner.queues[tc.queue].stats.gets += 1;
    inner.complete_wait(tc.put_wait, WaitValue::Time(t));
    inner.complete_wait(tc.get_wait, WaitValue::Msg(tc.msg));
}

/// Starts the simulated transfer of a matched mailbox pair and emits the
/// consumer's `start` event.
fn start_transfer(
    inner: &mut Inner,
    queue: usize,
    pmsg: PendingMsg,
    consumer: ActorId,
    consumer_node: NodeId,
    get_wait: WaitId,
    label: Option<Label>,
) -> Result<()> {
    let route = if pmsg.producer_node == consumer_node {
        "loopback"
    } else {
        "network"
    };
    if let Some(l) = label {
        inner.emit(
            consumer,
            l,
            format!(
                "start {} bytes={} route={}",
                step_detail(pmsg.msg.tag),
                pmsg.msg.payload_size,
                route
            ),
        );
    }
    let producer_node = pmsg.producer_node;
    let bytes = pmsg.msg.payload_size;
    let tc = TransferCtx {
        queue,
        get_wait,
        put_wait: pmsg.put_wait,
        put_end: pmsg.put_end,
        msg: pmsg.msg,
        consumer,
        label,
        route,
    };
    inner.start_flow(producer_node, consumer_node, bytes, FlowPurpose::Dtl(tc))
}

/// Hands an instantaneous-queue message to its consumer at the current
/// instant and returns it.
fn deliver_instant(
    inner: &mut Inner,
    queue: usize,
    pmsg: PendingMsg,
    consumer: ActorId,
    label: Option<Label>,
) -> Message {
    debug_assert!(pmsg.put_end.is_none());
    let t = inner.clock();
    if let Some(l) = label {
        let d = step_detail(pmsg.msg.tag);
        inner.emit(
            consumer,
            l,
            format!("start {} bytes={} route=none", d, pmsg.msg.payload_size),
        );
        inner.emit(consumer, l, format!("end {d} route=none"));
    }
    inner.queues[queue].stats.gets += 1;
    inner.complete_wait(pmsg.put_wait, WaitValue::Time(t));
    pmsg.msg
}

/// Frees one pending slot: promotes the oldest space waiter, if any.
fn promote_space_waiter(inner: &mut Inner, queue: usize) {
    let Some(SpaceWaiter {
        space_wait,
        mut pmsg,
        start_label,
    }) = inner.queues[queue].space_waiters.pop_front()
    else {
        return;
    };
    let t = inner.clock();
    let d = step_detail(pmsg.msg.tag);
    if let Some((actor, label)) = start_label {
        inner.emit(
            actor,
            label,
            format!("start {} bytes={}", d, pmsg.msg.payload_size),
        );
    }
    inner.queues[queue].stats.puts += 1;
    match inner.queues[queue].mode {
        QueueMode::Instantaneous => {
            // Put completes at enqueue in this mode.
            pmsg.put_end = None;
            if let Some((actor, label)) = start_label {
                inner.emit(actor, label, format!("end {d}"));
            }
            inner.complete_wait(pmsg.put_wait, WaitValue::Time(t));
        }
        QueueMode::Mailbox => {
            // An async labeled put ends at enqueue; a sync one keeps its
            // `end` for transfer completion.
            if pmsg.put_end.is_none() {
                if let Some((actor, label)) = start_label {
                    inner.emit(actor, label, format!("end {d}"));
                }
            }
        }
    }
    inner.queues[queue].pending.push_back(pmsg);
    inner.complete_wait(space_wait, WaitValue::Time(t));
}

impl Ctx {
    /// Synchronous put: returns at enqueue time (instantaneous mode) or at
    /// transfer completion (mailbox mode). Blocks while a bounded queue is
    /// full.
    pub async fn queue_put(
        &self,
        q: QueueId,
        msg: Message,
        label: Option<Label>,
    ) -> Result<SimTime> {
        let h = self.put_impl(q, msg, label, true).await?;
        self.wait_put(h).await
    }

    /// Asynchronous put: returns a completion handle as soon as the message
    /// is enqueued (after waiting for space on a bounded queue).
    pub async fn queue_put_async(
        &self,
        q: QueueId,
        msg: Message,
        label: Option<Label>,
    ) -> Result<PutHandle> {
        self.put_impl(q, msg, label, false).await
    }

    pub async fn wait_put(&self, h: PutHandle) -> Result<SimTime> {
        match self.wait_on(h.wait).await {
            WaitValue::Time(t) => Ok(t),
            _ => unreachable!(),
        }
    }

    pub fn put_completed(&self, h: PutHandle) -> bool {
        self.inner.borrow().wait_is_done(h.wait)
    }

    async fn put_impl(
        &self,
        q: QueueId,
        msg: Message,
        label: Option<Label>,
        sync: bool,
    ) -> Result<PutHandle> {
        let qi = q.0;
        let detail = step_detail(msg.tag);
        let bytes = msg.payload_size;
        enum Entry {
            Parked {
                space_wait: WaitId,
                put_wait: WaitId,
            },
            Go(Message),
        }
        let entry = {
            let mut inner = self.inner.borrow_mut();
            if inner.queues[qi].closed {
                return Err(Error::QueueClosed(inner.queues[qi].name.clone()));
            }
            if inner.queues[qi].full() {
                let put_wait = inner.new_wait(WaitKind::PutDone(qi));
                let space_wait = inner.new_wait(WaitKind::QueuePutSpace(qi));
                let put_end = if sync && inner.queues[qi].mode == QueueMode::Mailbox {
                    label.map(|l| (self.actor, l, detail.clone()))
                } else {
                    None
                };
                inner.queues[qi].space_waiters.push_back(SpaceWaiter {
                    space_wait,
                    pmsg: PendingMsg {
                        msg,
                        producer_node: self.node,
                        put_wait,
                        put_end,
                    },
                    start_label: label.map(|l| (self.actor, l)),
                });
                Entry::Parked {
                    space_wait,
                    put_wait,
                }
            } else {
                Entry::Go(msg)
            }
        };
        let msg = match entry {
            Entry::Parked {
                space_wait,
                put_wait,
            } => {
                self.wait_on(space_wait).await;
                return Ok(PutHandle { wait: put_wait });
            }
            Entry::Go(msg) => msg,
        };

        let mut inner = self.inner.borrow_mut();
        let t = inner.clock();
        inner.queues[qi].stats.puts += 1;
        if let Some(l) = label {
            inner.emit(self.actor, l, format!("start {detail} bytes={bytes}"));
        }
        let put_wait = inner.new_wait(WaitKind::PutDone(qi));
        match inner.queues[qi].mode {
            QueueMode::Instantaneous => {
                if let Some(l) = label {
                    inner.emit(self.actor, l, format!("end {detail}"));
                }
                inner.complete_wait(put_wait, WaitValue::Time(t));
                let pmsg = PendingMsg {
                    msg,
                    producer_node: self.node,
                    put_wait,
                    put_end: None,
                };
                if let Some(consumer) = inner.queues[qi].pop_best_consumer(pmsg.msg.tag) {
                    let m = deliver_instant(&mut inner, qi, pmsg, consumer.actor, consumer.label);
                    inner.complete_wait(consumer.wait, WaitValue::Msg(m));
                } else {
                    inner.queues[qi].pending.push_back(pmsg);
                }
            }
            QueueMode::Mailbox => {
                let put_end = if sync {
                    label.map(|l| (self.actor, l, detail.clone()))
                } else {
                    if let Some(l) = label {
                        inner.emit(self.actor, l, format!("end {detail}"));
                    }
                    None
                };
                let pmsg = PendingMsg {
                    msg,
                    producer_node: self.node,
                    put_wait,
                    put_end,
                };
                if let Some(consumer) = inner.queues[qi].pop_best_consumer(pmsg.msg.tag) {
                    start_transfer(
                        &mut inner,
                        qi,
                        pmsg,
                        consumer.actor,
                        consumer.node,
                        consumer.wait,
                        consumer.label,
                    )?;
                } else {
                    inner.queues[qi].pending.push_back(pmsg);
                }
            }
        }
        Ok(PutHandle { wait: put_wait })
    }

    /// Blocking get: returns the oldest matching message; in mailbox mode
    /// the simulated transfer elapses before the call returns.
    pub async fn queue_get(&self, q: QueueId, label: Option<Label>) -> Result<Message> {
        self.queue_get_matching(q, label, None).await
    }

    /// Blocking get restricted to messages carrying `filter`'s tag
    /// (selective receive); `None` accepts any message.
    pub async fn queue_get_matching(
        &self,
        q: QueueId,
        label: Option<Label>,
        filter: Option<Tag>,
    ) -> Result<Message> {
        let qi = q.0;
        let outcome = {
            let mut inner = self.inner.borrow_mut();
            if inner.queues[qi].closed {
                return Err(Error::QueueClosed(inner.queues[qi].name.clone()));
            }
            if let Some(l) = label {
                inner.emit(self.actor, l, "block".to_string());
            }
            if let Some(pmsg) = inner.queues[qi].pop_matching_pending(filter) {
                promote_space_waiter(&mut inner, qi);
                match inner.queues[qi].mode {
                    QueueMode::Instantaneous => {
                        Ok(deliver_instant(&mut inner, qi, pmsg, self.actor, label))
                    }
                    QueueMode::Mailbox => {
                        let get_wait = inner.new_wait(WaitKind::QueueGet(qi));
                        start_transfer(
                            &mut inner, qi, pmsg, self.actor, self.node, get_wait, label,
                        )?;
                        Err(get_wait)
                    }
                }
            } else {
                let t = inner.clock();
                let get_wait = inner.new_wait(WaitKind::QueueGet(qi));
                inner.queues[qi].waiting_consumers.push(WaitingConsumer {
                    block_time: t,
                    actor: self.actor,
                    node: self.node,
                    wait: get_wait,
                    label,
                    filter,
                });
                Err(get_wait)
            }
        };
        match outcome {
            Ok(msg) => Ok(msg),
            Err(wait) => match self.wait_on(wait).await {
                WaitValue::Msg(m) => Ok(m),
                _ => unreachable!(),
            },
        }
    }
}
