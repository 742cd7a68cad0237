//! Intra-committee broadcast: signed-echo consistent broadcast and
//! leader-based total order.

mod cost;
pub mod echo;
pub mod total_order;

pub use cost::CostModel;
pub use total_order::{LogEntry, OrderAction, OrderMsg, OrderingConfig, OrderingReplica, Payload};

use std::collections::BTreeMap;

use crate::crypto::{max_faults, CommitteeId, Digest, KeyRegistry};
use crate::simnet::{DelayPolicy, Event, FaultPlan, NetworkModel, NodeId, Scheduler, SimError, Time, Traced};

/// A bare ordering payload used when the committee is exercised on its own.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Opaque(pub Vec<u8>);

impl Payload for Opaque {
    fn digest(&self) -> Digest {
        Digest::of(&self.0)
    }
}

impl<P: Payload> Traced for OrderMsg<P> {
    fn label(&self) -> &'static str {
        OrderMsg::label(self)
    }

    fn digest(&self) -> Digest {
        match self {
            OrderMsg::Propose { payload, .. }
            | OrderMsg::Certificate { payload, .. }
            | OrderMsg::Decided { payload, .. } => payload.digest(),
            OrderMsg::Vote(v) => v.sig.digest,
            OrderMsg::ViewChange(vc) => vc.sig.digest,
            OrderMsg::NewView { from, slot, .. } => {
                Digest::of(&[&from.to_be_bytes()[..], &slot.to_be_bytes()].concat())
            }
        }
    }
}

/// Outcome of running one committee in isolation.
#[derive(Clone, Debug)]
pub struct OrderingRun {
    /// Decided payload digests per member, in slot order.
    pub logs: BTreeMap<u32, Vec<Digest>>,
    /// Time of each member's last decision.
    pub decided_at: BTreeMap<u32, Time>,
    pub messages: u64,
    /// Messages whose sender and receiver differ.
    pub inter_member: u64,
    pub by_label: BTreeMap<&'static str, u64>,
}

/// Runs one committee that orders `submissions` (time, payload), each handed
/// to every member.
pub fn run_committee(
    model: CostModel,
    n: usize,
    network: NetworkModel,
    faults: &FaultPlan,
    submissions: &[(Time, Opaque)],
    seed: u64,
    time_limit: Time,
) -> Result<OrderingRun, SimError> {
    let committee = CommitteeId(0);
    let registry = KeyRegistry::new(seed);
    let cfg = OrderingConfig {
        committee,
        n,
        f: max_faults(n),
        model,
        delta: network.delta(),
    };
    let mut sched: Scheduler<OrderMsg<Opaque>> = Scheduler::new(network, seed, time_limit, 5_000_000);
    let mut reps: Vec<OrderingReplica<Opaque>> = (0..n as u32)
        .map(|i| {
            sched.add_node(NodeId::Member(committee, i));
            OrderingReplica::new(cfg, i, &registry, faults.member(0, i))
        })
        .collect();
    let mut pending: Vec<(Time, Opaque)> = submissions.to_vec();
    pending.sort_by_key(|s| s.0);
    for (k, (at, _)) in pending.iter().enumerate() {
        for i in 0..n as u32 {
            sched.set_timer(NodeId::Member(committee, i), *at, SUBMIT_BASE + k as u64);
        }
    }
    let mut logs: BTreeMap<u32, Vec<Digest>> = BTreeMap::new();
    let mut decided_at = BTreeMap::new();
    let mut inter = 0;
    while let Some(ev) = sched.next_event()? {
        let now = sched.now();
        let (i, actions) = match ev {
            Event::Message(m) => {
                let NodeId::Member(_, i) = m.to else { continue };
                if m.from != m.to {
                    inter += 1;
                }
                (i, reps[i as usize].on_message(m.message, now))
            }
            Event::Timer {
                node: NodeId::Member(_, i),
                tag,
                ..
            } if tag >= SUBMIT_BASE => {
                let p = pending[(tag - SUBMIT_BASE) as usize].1.clone();
                (i, reps[i as usize].submit(p, now))
            }
            Event::Timer {
                node: NodeId::Member(_, i),
                tag,
                ..
            } => (i, reps[i as usize].on_timer(tag, now)),
            Event::Timer { .. } => continue,
        };
        for a in actions {
            match a {
                OrderAction::Send { to, msg } => {
                    sched.send(NodeId::Member(committee, i), NodeId::Member(committee, to), msg, "")?;
                }
                OrderAction::SetTimer { at, tag } => sched.set_timer(NodeId::Member(committee, i), at, tag),
                OrderAction::Decide { payload, .. } => {
                    logs.entry(i).or_default().push(payload.digest());
                    decided_at.insert(i, now);
                }
            }
        }
    }
    Ok(OrderingRun {
        logs,
        decided_at,
        messages: sched.total_messages(),
        inter_member: inter,
        by_label: sched.message_counts().clone(),
    })
}

const SUBMIT_BASE: u64 = 1 << 60;

/// Instrumented cost of one fault-free ordering instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InstanceMeasure {
    pub messages: u64,
    pub inter_member: u64,
    pub latency: Time,
}

pub fn measure_instance(model: CostModel, n: usize, delta: Time) -> InstanceMeasure {
    let run = run_committee(
        model,
        n,
        NetworkModel::synchronous(delta, DelayPolicy::Max),
        &FaultPlan::default(),
        &[(0, Opaque(b"instance".to_vec()))],
        0,
        1_000 * delta,
    )
    .expect("fault-free instance stays within budget");
    InstanceMeasure {
        messages: run.messages,
        inter_member: run.inter_member,
        latency: run.decided_at.values().copied().max().unwrap_or(0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simnet::MemberBehavior;

    fn faults(members: &[(u32, MemberBehavior)]) -> FaultPlan {
        let mut f = FaultPlan::default();
        f.byzantine_members.insert(0, members.iter().copied().collect());
        f
    }

    #[test]
    fn instance_costs_match_model() {
        for model in [CostModel::PbftLike, CostModel::HotstuffLike] {
            for n in [1, 4, 7, 10] {
                let m = measure_instance(model, n, 2);
                assert_eq!(m.messages, model.instance_messages(n as u64), "{model:?} n={n}");
                assert_eq!(m.latency, model.instance_latency(2), "{model:?} n={n}");
                if n == 1 {
                    assert_eq!(m.inter_member, 0);
                }
            }
        }
    }

    fn check_logs(run: &OrderingRun, honest: &[u32], expect: usize) {
        let first = &run.logs[&honest[0]];
        assert_eq!(first.len(), expect);
        for h in honest {
            assert_eq!(&run.logs[h], first, "member {h}");
        }
    }

    #[test]
    fn concurrent_payloads_same_order() {
        for model in [CostModel::PbftLike, CostModel::HotstuffLike] {
            for seed in 0..20 {
                let subs = [
                    (0, Opaque(b"x".to_vec())),
                    (0, Opaque(b"y".to_vec())),
                    (3, Opaque(b"z".to_vec())),
                ];
                let run = run_committee(
                    model,
                    4,
                    NetworkModel::synchronous(2, DelayPolicy::Uniform),
                    &FaultPlan::default(),
                    &subs,
                    seed,
                    10_000,
                )
                .unwrap();
                check_logs(&run, &[0, 1, 2, 3], 3);
            }
        }
    }

    #[test]
    fn crashed_leader_rotates() {
        for model in [CostModel::PbftLike, CostModel::HotstuffLike] {
            for b in [MemberBehavior::Silent, MemberBehavior::StallLeader] {
                let run = run_committee(
                    model,
                    4,
                    NetworkModel::synchronous(1, DelayPolicy::Max),
                    &faults(&[(0, b)]),
                    &[(0, Opaque(b"p".to_vec()))],
                    1,
                    10_000,
                )
                .unwrap();
                check_logs(&run, &[1, 2, 3], 1);
                let t = run.decided_at[&1];
                assert!(
                    t > model.base_timeout(1) && t <= model.base_timeout(1) + model.instance_latency(1) + 1,
                    "{model:?} {b:?} t={t}"
                );
            }
        }
    }

    #[test]
    fn byzantine_members_cannot_split_logs() {
        let behaviors = [
            MemberBehavior::SignAnything,
            MemberBehavior::Silent,
            MemberBehavior::WithholdAcks,
            MemberBehavior::StallLeader,
        ];
        for model in [CostModel::PbftLike, CostModel::HotstuffLike] {
            for seed in 0..40u64 {
                let bad = (seed % 4) as u32;
                let b = behaviors[(seed / 4 % 4) as usize];
                let subs: Vec<(Time, Opaque)> = (0..4).map(|i| (i, Opaque(vec![i as u8]))).collect();
                let net = if seed % 2 == 0 {
                    NetworkModel::partially_synchronous(2, 30)
                } else {
                    NetworkModel::synchronous(2, DelayPolicy::Uniform)
                };
                let run = run_committee(model, 4, net, &faults(&[(bad, b)]), &subs, seed, 20_000).unwrap();
                let honest: Vec<u32> = (0..4).filter(|&i| i != bad).collect();
                check_logs(&run, &honest, 4);
            }
        }
    }
}
