//! Deterministic discrete-event scheduler with pluggable timing models.

mod faults;
mod model;
mod trace;

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::crypto::{CommitteeId, Digest};

pub use faults::{FaultPlan, MemberBehavior, PartyBehavior, WormholeVariant};
pub use model::{DelayPolicy, NetworkModel};
pub use trace::{TraceKind, TraceLog, TraceRecord};

/// Simulated time in abstract integer units.
pub type Time = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum NodeId {
    Party(u32),
    Member(CommitteeId, u32),
    Ledger,
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NodeId::Party(p) => write!(f, "P{p}"),
            NodeId::Member(c, i) => write!(f, "W{}#{}", c.0, i),
            NodeId::Ledger => write!(f, "ledger"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("event budget of {0} exceeded")]
    BudgetExceeded(u64),
}

/// A message queued for delivery.
#[derive(Clone, Debug)]
pub struct SimEvent<M> {
    pub sent_at: Time,
    pub deliver_at: Time,
    pub sequence: u64,
    pub from: NodeId,
    pub to: NodeId,
    pub message: M,
}

#[derive(Clone, Debug)]
pub enum Event<M> {
    Message(SimEvent<M>),
    Timer { node: NodeId, tag: u64, at: Time },
}

impl<M> Event<M> {
    pub fn at(&self) -> Time {
        match self {
            Event::Message(m) => m.deliver_at,
            Event::Timer { at, .. } => *at,
        }
    }
}

/// Implemented by protocol messages so the scheduler can trace and count them.
pub trait Traced {
    /// Short label used for per-kind message counts.
    fn label(&self) -> &'static str;
    fn digest(&self) -> Digest;
}

pub struct Scheduler<M> {
    model: NetworkModel,
    rng: ChaCha8Rng,
    now: Time,
    seq: u64,
    queue: BTreeMap<(Time, u64), Event<M>>,
    nodes: BTreeSet<NodeId>,
    time_limit: Time,
    budget: u64,
    processed: u64,
    counts: BTreeMap<&'static str, u64>,
    max_observed_delay: Time,
    trace: TraceLog,
}

impl<M: Traced> Scheduler<M> {
    pub fn new(model: NetworkModel, seed: u64, time_limit: Time, budget: u64) -> Self {
        Self {
            model,
            rng: ChaCha8Rng::seed_from_u64(seed),
            now: 0,
            seq: 0,
            queue: BTreeMap::new(),
            nodes: BTreeSet::new(),
            time_limit,
            budget,
            processed: 0,
            counts: BTreeMap::new(),
            max_observed_delay: 0,
            trace: TraceLog::default(),
        }
    }

    pub fn add_node(&mut self, node: NodeId) {
        self.nodes.insert(node);
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn time_limit(&self) -> Time {
        self.time_limit
    }

    pub fn model(&self) -> &NetworkModel {
        &self.model
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn check(&self, node: NodeId) -> Result<(), SimError> {
        if self.nodes.contains(&node) {
            Ok(())
        } else {
            Err(SimError::UnknownNode(node))
        }
    }

    /// Queues `message` with a delay chosen by the network model.
    pub fn send(
        &mut self,
        from: NodeId,
        to: NodeId,
        message: M,
        annotation: impl Into<String>,
    ) -> Result<Time, SimError> {
        self.check(from)?;
        self.check(to)?;
        let delay = self.model.draw_delay(&mut self.rng, self.now, self.time_limit);
        self.max_observed_delay = self.max_observed_delay.max(delay);
        let deliver_at = self.now + delay;
        *self.counts.entry(message.label()).or_default() += 1;
        self.trace.push(TraceRecord {
            time: self.now,
            kind: TraceKind::Send,
            from: Some(from),
            to: Some(to),
            payload_digest: Some(message.digest()),
            annotation: join(message.label(), annotation.into()),
        });
        let sequence = self.seq;
        self.seq += 1;
        self.queue.insert(
            (deliver_at, sequence),
            Event::Message(SimEvent {
                sent_at: self.now,
                deliver_at,
                sequence,
                from,
                to,
                message,
            }),
        );
        Ok(deliver_at)
    }

    /// Fires `tag` at `node` at absolute time `at` (clamped to now).
    pub fn set_timer(&mut self, node: NodeId, at: Time, tag: u64) {
        let at = at.max(self.now);
        let sequence = self.seq;
        self.seq += 1;
        self.queue.insert((at, sequence), Event::Timer { node, tag, at });
    }

    /// Records a state transition in the trace.
    pub fn note(&mut self, node: NodeId, annotation: impl Into<String>) {
        self.trace.push(TraceRecord {
            time: self.now,
            kind: TraceKind::State,
            from: Some(node),
            to: None,
            payload_digest: None,
            annotation: annotation.into(),
        });
    }

    pub fn note_ledger(&mut self, annotation: impl Into<String>, digest: Option<Digest>) {
        self.trace.push(TraceRecord {
            time: self.now,
            kind: TraceKind::Ledger,
            from: Some(NodeId::Ledger),
            to: None,
            payload_digest: digest,
            annotation: annotation.into(),
        });
    }

    /// Pops the next event, advancing time. `Ok(None)` at quiescence or once
    /// the time limit is passed.
    pub fn next_event(&mut self) -> Result<Option<Event<M>>, SimError> {
        let Some((&key, _)) = self.queue.iter().next() else {
            return Ok(None);
        };
        if key.0 > self.time_limit {
            return Ok(None);
        }
        if self.processed >= self.budget {
            return Err(SimError::BudgetExceeded(self.budget));
        }
        self.processed += 1;
        let event = self.queue.remove(&key).expect("key just observed");
        self.now = key.0;
        if let Event::Message(m) = &event {
            self.trace.push(TraceRecord {
                time: self.now,
                kind: TraceKind::Deliver,
                from: Some(m.from),
                to: Some(m.to),
                payload_digest: Some(m.message.digest()),
                annotation: m.message.label().to_string(),
            });
        }
        Ok(Some(event))
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn message_counts(&self) -> &BTreeMap<&'static str, u64> {
        &self.counts
    }

    pub fn total_messages(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn max_observed_delay(&self) -> Time {
        self.max_observed_delay
    }

    pub fn trace(&self) -> &TraceLog {
        &self.trace
    }

    pub fn into_trace(self) -> TraceLog {
        self.trace
    }
}

fn join(label: &str, annotation: String) -> String {
    if annotation.is_empty() {
        label.to_string()
    } else {
        format!("{label} {annotation}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Debug)]
    struct Ping(u32);

    impl Traced for Ping {
        fn label(&self) -> &'static str {
            "ping"
        }
        fn digest(&self) -> Digest {
            Digest::of(&self.0.to_be_bytes())
        }
    }

    fn sched(model: NetworkModel, seed: u64) -> Scheduler<Ping> {
        let mut s = Scheduler::new(model, seed, 10_000, 100_000);
        for p in 0..4 {
            s.add_node(NodeId::Party(p));
        }
        s
    }

    fn drain(s: &mut Scheduler<Ping>) -> Vec<(Time, u32)> {
        let mut out = vec![];
        while let Some(ev) = s.next_event().unwrap() {
            if let Event::Message(m) = ev {
                out.push((m.deliver_at, m.message.0));
            }
        }
        out
    }

    #[test]
    fn synchronous_bound() {
        let mut s = sched(NetworkModel::synchronous(1, DelayPolicy::Uniform), 1);
        s.now = 5;
        for i in 0..50 {
            let at = s.send(NodeId::Party(0), NodeId::Party(1), Ping(i), "").unwrap();
            assert_eq!(at, 6);
        }
        let mut s = sched(NetworkModel::synchronous(4, DelayPolicy::Uniform), 2);
        for i in 0..200 {
            let at = s.send(NodeId::Party(0), NodeId::Party(1), Ping(i), "").unwrap();
            assert!((1..=4).contains(&at));
        }
    }

    #[test]
    fn partial_synchrony_pre_gst_may_exceed_delta() {
        let mut s = sched(NetworkModel::partially_synchronous(1, 100), 3);
        s.now = 10;
        let mut late = false;
        for i in 0..200 {
            let at = s.send(NodeId::Party(0), NodeId::Party(1), Ping(i), "").unwrap();
            assert!(at > 10 && at <= 101);
            late |= at > 11;
        }
        assert!(late);
        s.now = 200;
        for i in 0..50 {
            assert_eq!(s.send(NodeId::Party(0), NodeId::Party(1), Ping(i), "").unwrap(), 201);
        }
    }

    #[test]
    fn asynchronous_eventually_delivers() {
        let mut s = sched(NetworkModel::asynchronous(2), 4);
        for i in 0..100 {
            s.send(NodeId::Party(0), NodeId::Party(1), Ping(i), "").unwrap();
        }
        assert_eq!(drain(&mut s).len(), 100);
    }

    #[test]
    fn ordering_and_determinism() {
        let run = |seed| {
            let mut s = sched(NetworkModel::asynchronous(3), seed);
            for i in 0..30 {
                s.send(NodeId::Party(i % 4), NodeId::Party((i + 1) % 4), Ping(i), "x")
                    .unwrap();
            }
            let d = drain(&mut s);
            assert!(d.windows(2).all(|w| w[0].0 <= w[1].0));
            s.into_trace().to_ndjson()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn unknown_node_and_budget() {
        let mut s = sched(NetworkModel::synchronous(1, DelayPolicy::Max), 0);
        assert_eq!(
            s.send(NodeId::Party(0), NodeId::Party(9), Ping(0), "").unwrap_err(),
            SimError::UnknownNode(NodeId::Party(9))
        );
        let mut s: Scheduler<Ping> = Scheduler::new(NetworkModel::synchronous(1, DelayPolicy::Max), 0, 100, 2);
        for t in 0..3 {
            s.set_timer(NodeId::Party(0), t, 0);
        }
        assert!(s.next_event().unwrap().is_some());
        assert!(s.next_event().unwrap().is_some());
        assert_eq!(s.next_event().unwrap_err(), SimError::BudgetExceeded(2));
    }

    #[test]
    fn simultaneous_events_keep_send_order() {
        let mut s = sched(NetworkModel::synchronous(2, DelayPolicy::Max), 0);
        for i in 0..10 {
            s.send(NodeId::Party(0), NodeId::Party(1), Ping(i), "").unwrap();
        }
        let got: Vec<u32> = drain(&mut s).into_iter().map(|(_, v)| v).collect();
        assert_eq!(got, (0..10).collect::<Vec<_>>());
    }
}
